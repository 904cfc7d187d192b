#include "pgcu/ops.hpp"

#include <Eigen/Core>
#include <cmath>

namespace pgcu::ops {
namespace {

template <typename T>
using Mat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename T>
using MapM = Eigen::Map<Mat<T>>;
template <typename T>
using MapCM = Eigen::Map<const Mat<T>>;

struct Geometry {
  std::size_t channels, height, width;  // image side
  std::size_t kernel, stride, pad;
  std::size_t out_h, out_w;             // sliding-window grid
};

// cols[(c*k + ki)*k + kj][oh*out_w + ow] = img[c][oh*s - p + ki][ow*s - p + kj]
template <typename T>
void im2col(const T* img, const Geometry& g, T* cols) {
  const std::size_t grid = g.out_h * g.out_w;
  const auto H = static_cast<std::ptrdiff_t>(g.height);
  const auto W = static_cast<std::ptrdiff_t>(g.width);
  for (std::size_t c = 0; c < g.channels; ++c) {
    const T* plane = img + c * g.height * g.width;
    for (std::size_t ki = 0; ki < g.kernel; ++ki) {
      for (std::size_t kj = 0; kj < g.kernel; ++kj) {
        T* row = cols + ((c * g.kernel + ki) * g.kernel + kj) * grid;
        for (std::size_t oh = 0; oh < g.out_h; ++oh) {
          const auto ih = static_cast<std::ptrdiff_t>(oh * g.stride + ki) -
                          static_cast<std::ptrdiff_t>(g.pad);
          T* out = row + oh * g.out_w;
          if (ih < 0 || ih >= H) {
            std::fill(out, out + g.out_w, T(0));
            continue;
          }
          const T* src = plane + ih * W;
          for (std::size_t ow = 0; ow < g.out_w; ++ow) {
            const auto iw = static_cast<std::ptrdiff_t>(ow * g.stride + kj) -
                            static_cast<std::ptrdiff_t>(g.pad);
            out[ow] = (iw < 0 || iw >= W) ? T(0) : src[iw];
          }
        }
      }
    }
  }
}

// Adjoint of im2col: scatters-adds columns back onto the image.
template <typename T>
void col2im(const T* cols, const Geometry& g, T* img) {
  const std::size_t grid = g.out_h * g.out_w;
  const auto H = static_cast<std::ptrdiff_t>(g.height);
  const auto W = static_cast<std::ptrdiff_t>(g.width);
  std::fill(img, img + g.channels * g.height * g.width, T(0));
  for (std::size_t c = 0; c < g.channels; ++c) {
    T* plane = img + c * g.height * g.width;
    for (std::size_t ki = 0; ki < g.kernel; ++ki) {
      for (std::size_t kj = 0; kj < g.kernel; ++kj) {
        const T* row = cols + ((c * g.kernel + ki) * g.kernel + kj) * grid;
        for (std::size_t oh = 0; oh < g.out_h; ++oh) {
          const auto ih = static_cast<std::ptrdiff_t>(oh * g.stride + ki) -
                          static_cast<std::ptrdiff_t>(g.pad);
          if (ih < 0 || ih >= H) continue;
          T* dst = plane + ih * W;
          const T* in = row + oh * g.out_w;
          for (std::size_t ow = 0; ow < g.out_w; ++ow) {
            const auto iw = static_cast<std::ptrdiff_t>(ow * g.stride + kj) -
                            static_cast<std::ptrdiff_t>(g.pad);
            if (iw >= 0 && iw < W) dst[iw] += in[ow];
          }
        }
      }
    }
  }
}

void check_conv_shapes(const Shape& x, const Shape& w, std::size_t w_in_axis,
                       const char* op) {
  require(x.size() == 3, Errc::kShape,
          std::string(op) + ": input must be [C][H][W], got " + shape_string(x));
  require(w.size() == 4 && w[2] == w[3], Errc::kShape,
          std::string(op) + ": kernel must be square rank 4, got " + shape_string(w));
  require(w[w_in_axis] == x[0], Errc::kShape,
          std::string(op) + ": kernel " + shape_string(w) + " does not accept " +
              std::to_string(x[0]) + " input channels");
}

}  // namespace

std::size_t conv_out_size(std::size_t in, std::size_t kernel, std::size_t stride,
                          std::size_t pad) {
  require(in + 2 * pad >= kernel, Errc::kShape, "convolution window exceeds input");
  return (in + 2 * pad - kernel) / stride + 1;
}

template <typename T>
Tensor<T> conv2d(const Tensor<T>& x, const Tensor<T>& w, const Tensor<T>& b,
                 std::size_t stride, std::size_t pad) {
  check_conv_shapes(x.shape(), w.shape(), 1, "conv2d");
  const std::size_t cout = w.dim(0), k = w.dim(2);
  require(b.size() == cout, Errc::kShape, "conv2d: bias size mismatch");
  Geometry g{x.dim(0), x.dim(1), x.dim(2), k, stride, pad,
             conv_out_size(x.dim(1), k, stride, pad),
             conv_out_size(x.dim(2), k, stride, pad)};
  const std::size_t K = g.channels * k * k, grid = g.out_h * g.out_w;
  Buffer<T> cols(K * grid);
  im2col(x.raw(), g, cols.data());
  Tensor<T> y({cout, g.out_h, g.out_w});
  MapM<T> ym(y.raw(), cout, grid);
  ym.noalias() = MapCM<T>(w.raw(), cout, K) * MapCM<T>(cols.data(), K, grid);
  for (std::size_t o = 0; o < cout; ++o) ym.row(o).array() += b[o];
  return y;
}

template <typename T>
ConvGrads<T> conv2d_backward(const Tensor<T>& x, const Tensor<T>& w,
                             const Tensor<T>& dy, std::size_t stride,
                             std::size_t pad, bool need_dx) {
  check_conv_shapes(x.shape(), w.shape(), 1, "conv2d_backward");
  const std::size_t cout = w.dim(0), k = w.dim(2);
  Geometry g{x.dim(0), x.dim(1), x.dim(2), k, stride, pad,
             conv_out_size(x.dim(1), k, stride, pad),
             conv_out_size(x.dim(2), k, stride, pad)};
  require(dy.shape() == Shape({cout, g.out_h, g.out_w}), Errc::kShape,
          "conv2d_backward: upstream gradient shape mismatch");
  const std::size_t K = g.channels * k * k, grid = g.out_h * g.out_w;
  Buffer<T> cols(K * grid);
  im2col(x.raw(), g, cols.data());
  MapCM<T> dym(dy.raw(), cout, grid);

  ConvGrads<T> out{Tensor<T>(), Tensor<T>(w.shape()), Tensor<T>({cout})};
  MapM<T>(out.dw.raw(), cout, K).noalias() =
      dym * MapCM<T>(cols.data(), K, grid).transpose();
  for (std::size_t o = 0; o < cout; ++o) out.db[o] = dym.row(o).sum();
  if (need_dx) {
    MapM<T>(cols.data(), K, grid).noalias() =
        MapCM<T>(w.raw(), cout, K).transpose() * dym;
    out.dx = Tensor<T>(x.shape());
    col2im(cols.data(), g, out.dx.raw());
  }
  return out;
}

template <typename T>
Tensor<T> conv_transpose2d(const Tensor<T>& x, const Tensor<T>& w,
                           const Tensor<T>& b, std::size_t stride, std::size_t pad) {
  check_conv_shapes(x.shape(), w.shape(), 0, "conv_transpose2d");
  const std::size_t cin = x.dim(0), cout = w.dim(1), k = w.dim(2);
  require(b.size() == cout, Errc::kShape, "conv_transpose2d: bias size mismatch");
  require((x.dim(1) - 1) * stride + k >= 2 * pad + 1, Errc::kShape,
          "conv_transpose2d: padding too large");
  const std::size_t oh = (x.dim(1) - 1) * stride + k - 2 * pad;
  const std::size_t ow = (x.dim(2) - 1) * stride + k - 2 * pad;
  Geometry g{cout, oh, ow, k, stride, pad, x.dim(1), x.dim(2)};
  const std::size_t K = cout * k * k, grid = g.out_h * g.out_w;
  Buffer<T> cols(K * grid);
  MapM<T>(cols.data(), K, grid).noalias() =
      MapCM<T>(w.raw(), cin, K).transpose() * MapCM<T>(x.raw(), cin, grid);
  Tensor<T> y({cout, oh, ow});
  col2im(cols.data(), g, y.raw());
  for (std::size_t o = 0; o < cout; ++o) {
    T* plane = y.raw() + o * oh * ow;
    for (std::size_t i = 0; i < oh * ow; ++i) plane[i] += b[o];
  }
  return y;
}

template <typename T>
ConvGrads<T> conv_transpose2d_backward(const Tensor<T>& x, const Tensor<T>& w,
                                       const Tensor<T>& dy, std::size_t stride,
                                       std::size_t pad, bool need_dx) {
  check_conv_shapes(x.shape(), w.shape(), 0, "conv_transpose2d_backward");
  const std::size_t cin = x.dim(0), cout = w.dim(1), k = w.dim(2);
  const std::size_t oh = (x.dim(1) - 1) * stride + k - 2 * pad;
  const std::size_t ow = (x.dim(2) - 1) * stride + k - 2 * pad;
  require(dy.shape() == Shape({cout, oh, ow}), Errc::kShape,
          "conv_transpose2d_backward: upstream gradient shape mismatch");
  Geometry g{cout, oh, ow, k, stride, pad, x.dim(1), x.dim(2)};
  const std::size_t K = cout * k * k, grid = g.out_h * g.out_w;
  Buffer<T> cols(K * grid);
  im2col(dy.raw(), g, cols.data());
  MapCM<T> colm(cols.data(), K, grid);

  ConvGrads<T> out{Tensor<T>(), Tensor<T>(w.shape()), Tensor<T>({cout})};
  MapM<T>(out.dw.raw(), cin, K).noalias() =
      MapCM<T>(x.raw(), cin, grid) * colm.transpose();
  MapCM<T> dym(dy.raw(), cout, oh * ow);
  for (std::size_t o = 0; o < cout; ++o) out.db[o] = dym.row(o).sum();
  if (need_dx) {
    out.dx = Tensor<T>(x.shape());
    MapM<T>(out.dx.raw(), cin, grid).noalias() = MapCM<T>(w.raw(), cin, K) * colm;
  }
  return out;
}

template <typename T>
Tensor<T> relu(Tensor<T> x) {
  for (auto& v : x.data()) v = v > T(0) ? v : T(0);
  return x;
}

template <typename T>
Tensor<T> relu_backward(const Tensor<T>& y, Tensor<T> dy) {
  require(y.shape() == dy.shape(), Errc::kShape, "relu_backward: shape mismatch");
  for (std::size_t i = 0; i < y.size(); ++i)
    if (!(y[i] > T(0))) dy[i] = T(0);
  return dy;
}

template <typename T>
Tensor<T> sigmoid(Tensor<T> x) {
  for (auto& v : x.data()) v = T(1) / (T(1) + std::exp(-v));
  return x;
}

template <typename T>
Tensor<T> sigmoid_backward(const Tensor<T>& y, Tensor<T> dy) {
  require(y.shape() == dy.shape(), Errc::kShape, "sigmoid_backward: shape mismatch");
  for (std::size_t i = 0; i < y.size(); ++i) dy[i] *= y[i] * (T(1) - y[i]);
  return dy;
}

template <typename T>
PoolResult<T> max_pool2x2(const Tensor<T>& x) {
  require(x.rank() == 3 && x.dim(1) % 2 == 0 && x.dim(2) % 2 == 0, Errc::kShape,
          "max_pool2x2 needs [C][H][W] with even H, W; got " + shape_string(x.shape()));
  const std::size_t C = x.dim(0), H = x.dim(1), W = x.dim(2);
  const std::size_t oh = H / 2, ow = W / 2;
  PoolResult<T> r{Tensor<T>({C, oh, ow}), std::vector<std::uint32_t>(C * oh * ow)};
  for (std::size_t c = 0; c < C; ++c)
    for (std::size_t i = 0; i < oh; ++i)
      for (std::size_t j = 0; j < ow; ++j) {
        std::size_t best = (c * H + 2 * i) * W + 2 * j;
        for (std::size_t di = 0; di < 2; ++di)
          for (std::size_t dj = 0; dj < 2; ++dj) {
            const std::size_t idx = (c * H + 2 * i + di) * W + 2 * j + dj;
            if (x[idx] > x[best]) best = idx;
          }
        const std::size_t o = (c * oh + i) * ow + j;
        r.y[o] = x[best];
        r.argmax[o] = static_cast<std::uint32_t>(best);
      }
  return r;
}

template <typename T>
Tensor<T> max_pool2x2_backward(const Shape& x_shape,
                               const std::vector<std::uint32_t>& argmax,
                               const Tensor<T>& dy) {
  require(argmax.size() == dy.size(), Errc::kShape, "max_pool2x2_backward: size mismatch");
  Tensor<T> dx(x_shape);
  for (std::size_t o = 0; o < dy.size(); ++o) dx[argmax[o]] += dy[o];
  return dx;
}

template <typename T>
Tensor<T> nearest_upsample(const Tensor<T>& x, std::size_t r) {
  require(x.rank() == 3 && r >= 1, Errc::kShape, "nearest_upsample needs [C][H][W], r >= 1");
  const std::size_t C = x.dim(0), H = x.dim(1), W = x.dim(2);
  Tensor<T> y({C, H * r, W * r});
  for (std::size_t c = 0; c < C; ++c)
    for (std::size_t i = 0; i < H * r; ++i)
      for (std::size_t j = 0; j < W * r; ++j) y(c, i, j) = x(c, i / r, j / r);
  return y;
}

template <typename T>
Tensor<T> nearest_upsample_backward(const Tensor<T>& dy, std::size_t r) {
  require(dy.rank() == 3 && dy.dim(1) % r == 0 && dy.dim(2) % r == 0, Errc::kShape,
          "nearest_upsample_backward: shape not divisible by r");
  const std::size_t C = dy.dim(0), H = dy.dim(1) / r, W = dy.dim(2) / r;
  Tensor<T> dx({C, H, W});
  for (std::size_t c = 0; c < C; ++c)
    for (std::size_t i = 0; i < H * r; ++i)
      for (std::size_t j = 0; j < W * r; ++j) dx(c, i / r, j / r) += dy(c, i, j);
  return dx;
}

template <typename T>
Tensor<T> pixel_shuffle(const Tensor<T>& x, std::size_t r) {
  require(x.rank() == 3 && x.dim(0) % (r * r) == 0, Errc::kShape,
          "pixel_shuffle: channels not divisible by r^2 in " + shape_string(x.shape()));
  const std::size_t C = x.dim(0) / (r * r), H = x.dim(1), W = x.dim(2);
  Tensor<T> y({C, H * r, W * r});
  for (std::size_t c = 0; c < C; ++c)
    for (std::size_t k = 0; k < r * r; ++k)
      for (std::size_t i = 0; i < H; ++i)
        for (std::size_t j = 0; j < W; ++j)
          y(c, i * r + k / r, j * r + k % r) = x(c * r * r + k, i, j);
  return y;
}

template <typename T>
Tensor<T> pixel_unshuffle(const Tensor<T>& y, std::size_t r) {
  require(y.rank() == 3 && y.dim(1) % r == 0 && y.dim(2) % r == 0, Errc::kShape,
          "pixel_unshuffle: spatial dims not divisible by r");
  const std::size_t C = y.dim(0), H = y.dim(1) / r, W = y.dim(2) / r;
  Tensor<T> x({C * r * r, H, W});
  for (std::size_t c = 0; c < C; ++c)
    for (std::size_t k = 0; k < r * r; ++k)
      for (std::size_t i = 0; i < H; ++i)
        for (std::size_t j = 0; j < W; ++j)
          x(c * r * r + k, i, j) = y(c, i * r + k / r, j * r + k % r);
  return x;
}

template <typename T>
Tensor<T> concat_channels(const Tensor<T>& a, const Tensor<T>& b) {
  require(a.rank() == 3 && b.rank() == 3 && a.dim(1) == b.dim(1) && a.dim(2) == b.dim(2),
          Errc::kShape,
          "concat_channels: spatial mismatch " + shape_string(a.shape()) + " vs " +
              shape_string(b.shape()));
  Tensor<T> out({a.dim(0) + b.dim(0), a.dim(1), a.dim(2)});
  std::copy(a.raw(), a.raw() + a.size(), out.raw());
  std::copy(b.raw(), b.raw() + b.size(), out.raw() + a.size());
  return out;
}

template <typename T>
std::pair<Tensor<T>, Tensor<T>> split_channels(const Tensor<T>& x, std::size_t ca) {
  require(x.rank() == 3 && ca <= x.dim(0), Errc::kShape, "split_channels: bad split");
  const std::size_t plane = x.dim(1) * x.dim(2);
  Tensor<T> a({ca, x.dim(1), x.dim(2)});
  Tensor<T> b({x.dim(0) - ca, x.dim(1), x.dim(2)});
  std::copy(x.raw(), x.raw() + ca * plane, a.raw());
  std::copy(x.raw() + ca * plane, x.raw() + x.size(), b.raw());
  return {std::move(a), std::move(b)};
}

template <typename T>
void linear_rows(const T* x, std::size_t rows, std::size_t din, const T* w,
                 const T* b, std::size_t dout, T* y) {
  MapM<T> ym(y, rows, dout);
  ym.noalias() = MapCM<T>(x, rows, din) * MapCM<T>(w, dout, din).transpose();
  ym.rowwise() += Eigen::Map<const Eigen::Matrix<T, 1, Eigen::Dynamic>>(b, dout);
}

template <typename T>
void linear_rows_backward(const T* x, std::size_t rows, std::size_t din,
                          const T* w, std::size_t dout, const T* dy, T* dx,
                          T* dw, T* db) {
  MapCM<T> dym(dy, rows, dout);
  if (dx) MapM<T>(dx, rows, din).noalias() = dym * MapCM<T>(w, dout, din);
  MapM<T>(dw, dout, din).noalias() += dym.transpose() * MapCM<T>(x, rows, din);
  Eigen::Map<Eigen::Matrix<T, 1, Eigen::Dynamic>>(db, dout) += dym.colwise().sum();
}

template <typename T>
void layer_norm_rows(const T* x, std::size_t rows, std::size_t d, const T* gain,
                     const T* offset, T eps, T* y, T* xhat, T* inv_std) {
  for (std::size_t r = 0; r < rows; ++r) {
    const T* xr = x + r * d;
    T mean = 0;
    for (std::size_t i = 0; i < d; ++i) mean += xr[i];
    mean /= static_cast<T>(d);
    T var = 0;
    for (std::size_t i = 0; i < d; ++i) var += (xr[i] - mean) * (xr[i] - mean);
    var /= static_cast<T>(d);
    const T is = T(1) / std::sqrt(var + eps);
    inv_std[r] = is;
    for (std::size_t i = 0; i < d; ++i) {
      const T h = (xr[i] - mean) * is;
      xhat[r * d + i] = h;
      y[r * d + i] = h * gain[i] + offset[i];
    }
  }
}

template <typename T>
void layer_norm_rows_backward(const T* xhat, const T* inv_std, std::size_t rows,
                              std::size_t d, const T* gain, const T* dy, T* dx,
                              T* dgain, T* doffset) {
  const T inv_d = T(1) / static_cast<T>(d);
  for (std::size_t r = 0; r < rows; ++r) {
    const T* h = xhat + r * d;
    const T* g = dy + r * d;
    T sum_dh = 0, sum_dh_h = 0;
    for (std::size_t i = 0; i < d; ++i) {
      dgain[i] += g[i] * h[i];
      doffset[i] += g[i];
      const T dh = g[i] * gain[i];
      sum_dh += dh;
      sum_dh_h += dh * h[i];
    }
    for (std::size_t i = 0; i < d; ++i) {
      const T dh = g[i] * gain[i];
      dx[r * d + i] = inv_std[r] * (dh - inv_d * sum_dh - h[i] * inv_d * sum_dh_h);
    }
  }
}

#define PGCU_INSTANTIATE_OPS(T)                                                     \
  template Tensor<T> conv2d(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&,   \
                            std::size_t, std::size_t);                              \
  template ConvGrads<T> conv2d_backward(const Tensor<T>&, const Tensor<T>&,         \
                                        const Tensor<T>&, std::size_t, std::size_t, \
                                        bool);                                      \
  template Tensor<T> conv_transpose2d(const Tensor<T>&, const Tensor<T>&,           \
                                      const Tensor<T>&, std::size_t, std::size_t);  \
  template ConvGrads<T> conv_transpose2d_backward(                                  \
      const Tensor<T>&, const Tensor<T>&, const Tensor<T>&, std::size_t,            \
      std::size_t, bool);                                                           \
  template Tensor<T> relu(Tensor<T>);                                               \
  template Tensor<T> relu_backward(const Tensor<T>&, Tensor<T>);                    \
  template Tensor<T> sigmoid(Tensor<T>);                                            \
  template Tensor<T> sigmoid_backward(const Tensor<T>&, Tensor<T>);                 \
  template PoolResult<T> max_pool2x2(const Tensor<T>&);                             \
  template Tensor<T> max_pool2x2_backward(                                          \
      const Shape&, const std::vector<std::uint32_t>&, const Tensor<T>&);           \
  template Tensor<T> nearest_upsample(const Tensor<T>&, std::size_t);               \
  template Tensor<T> nearest_upsample_backward(const Tensor<T>&, std::size_t);      \
  template Tensor<T> pixel_shuffle(const Tensor<T>&, std::size_t);                  \
  template Tensor<T> pixel_unshuffle(const Tensor<T>&, std::size_t);                \
  template Tensor<T> concat_channels(const Tensor<T>&, const Tensor<T>&);           \
  template std::pair<Tensor<T>, Tensor<T>> split_channels(const Tensor<T>&,         \
                                                          std::size_t);             \
  template void linear_rows(const T*, std::size_t, std::size_t, const T*, const T*, \
                            std::size_t, T*);                                       \
  template void linear_rows_backward(const T*, std::size_t, std::size_t, const T*,  \
                                     std::size_t, const T*, T*, T*, T*);            \
  template void layer_norm_rows(const T*, std::size_t, std::size_t, const T*,       \
                                const T*, T, T*, T*, T*);                           \
  template void layer_norm_rows_backward(const T*, const T*, std::size_t,           \
                                         std::size_t, const T*, const T*, T*, T*,   \
                                         T*);

PGCU_INSTANTIATE_OPS(float)
PGCU_INSTANTIATE_OPS(double)
#undef PGCU_INSTANTIATE_OPS

}  // namespace pgcu::ops
