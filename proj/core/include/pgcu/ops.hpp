#pragma once

#include <cstddef>
#include <cstdint>
#include <vector>

#include "pgcu/tensor.hpp"

// Forward/backward primitives on single images laid out [C][H][W].
// Every backward takes the upstream gradient of the forward output and
// returns gradients of the forward inputs. Instantiated for float and double.
namespace pgcu::ops {

std::size_t conv_out_size(std::size_t in, std::size_t kernel, std::size_t stride,
                          std::size_t pad);

// x [Cin][H][W], w [Cout][Cin][k][k], b [Cout]. Zero padding.
template <typename T>
Tensor<T> conv2d(const Tensor<T>& x, const Tensor<T>& w, const Tensor<T>& b,
                 std::size_t stride, std::size_t pad);

template <typename T>
struct ConvGrads {
  Tensor<T> dx, dw, db;
};

template <typename T>
ConvGrads<T> conv2d_backward(const Tensor<T>& x, const Tensor<T>& w,
                             const Tensor<T>& dy, std::size_t stride,
                             std::size_t pad, bool need_dx = true);

// x [Cin][H][W], w [Cin][Cout][k][k], b [Cout].
// Output size (H - 1) * stride - 2 * pad + k.
template <typename T>
Tensor<T> conv_transpose2d(const Tensor<T>& x, const Tensor<T>& w,
                           const Tensor<T>& b, std::size_t stride, std::size_t pad);

template <typename T>
ConvGrads<T> conv_transpose2d_backward(const Tensor<T>& x, const Tensor<T>& w,
                                       const Tensor<T>& dy, std::size_t stride,
                                       std::size_t pad, bool need_dx = true);

template <typename T>
Tensor<T> relu(Tensor<T> x);

// Gradient through ReLU given the ReLU output.
template <typename T>
Tensor<T> relu_backward(const Tensor<T>& y, Tensor<T> dy);

template <typename T>
Tensor<T> sigmoid(Tensor<T> x);

// Gradient through sigmoid given its output.
template <typename T>
Tensor<T> sigmoid_backward(const Tensor<T>& y, Tensor<T> dy);

template <typename T>
struct PoolResult {
  Tensor<T> y;
  std::vector<std::uint32_t> argmax;  // flat input index per output element
};

// 2x2 window, stride 2. H and W must be even. Ties pick the first element
// in row-major window order.
template <typename T>
PoolResult<T> max_pool2x2(const Tensor<T>& x);

template <typename T>
Tensor<T> max_pool2x2_backward(const Shape& x_shape,
                               const std::vector<std::uint32_t>& argmax,
                               const Tensor<T>& dy);

// Replicates each pixel into an r x r block.
template <typename T>
Tensor<T> nearest_upsample(const Tensor<T>& x, std::size_t r);

// Sums each r x r block.
template <typename T>
Tensor<T> nearest_upsample_backward(const Tensor<T>& dy, std::size_t r);

// [C*r*r][H][W] -> [C][H*r][W*r]; channel c*r*r + k lands at block offset
// (k / r, k % r).
template <typename T>
Tensor<T> pixel_shuffle(const Tensor<T>& x, std::size_t r);

template <typename T>
Tensor<T> pixel_unshuffle(const Tensor<T>& y, std::size_t r);

template <typename T>
Tensor<T> concat_channels(const Tensor<T>& a, const Tensor<T>& b);

// Splits [Ca + Cb][H][W] at channel ca.
template <typename T>
std::pair<Tensor<T>, Tensor<T>> split_channels(const Tensor<T>& x, std::size_t ca);

// Row-wise affine map: x [R][Din] viewed as rows, w [Dout][Din], b [Dout].
template <typename T>
void linear_rows(const T* x, std::size_t rows, std::size_t din, const T* w,
                 const T* b, std::size_t dout, T* y);

template <typename T>
void linear_rows_backward(const T* x, std::size_t rows, std::size_t din,
                          const T* w, std::size_t dout, const T* dy, T* dx,
                          T* dw, T* db);

// Normalises each row over its D entries, then applies gain/offset.
// Writes normalised values (before gain/offset) to xhat and 1/sqrt(var+eps)
// per row to inv_std; both are needed by the backward pass.
template <typename T>
void layer_norm_rows(const T* x, std::size_t rows, std::size_t d, const T* gain,
                     const T* offset, T eps, T* y, T* xhat, T* inv_std);

template <typename T>
void layer_norm_rows_backward(const T* xhat, const T* inv_std, std::size_t rows,
                              std::size_t d, const T* gain, const T* dy, T* dx,
                              T* dgain, T* doffset);

}  // namespace pgcu::ops
