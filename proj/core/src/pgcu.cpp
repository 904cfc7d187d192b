#include "pgcu/pgcu.hpp"

#include <Eigen/Core>
#include <algorithm>
#include <cmath>
#include <limits>

namespace pgcu {
namespace {

template <typename T>
using Mat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename T>
using MapM = Eigen::Map<Mat<T>>;
template <typename T>
using MapCM = Eigen::Map<const Mat<T>>;

constexpr std::size_t kKernel = 3;

std::size_t ipow(std::size_t base, std::size_t exp) {
  std::size_t r = 1;
  while (exp--) r *= base;
  return r;
}

// Channel widths of the fused V/G feature map before the head conv.
std::size_t pan_feature_channels(const PgcuConfig& cfg) {
  if (!cfg.use_pan) return 0;
  return cfg.pan_ds_blocks > 0 ? cfg.hidden_channels : 1;
}

std::size_t ms_feature_channels(const PgcuConfig& cfg) {
  return cfg.ms_ds_blocks > 0 ? cfg.hidden_channels : cfg.channels;
}

template <typename T>
FusionPathParams<T> make_fusion_path(const PgcuConfig& cfg, std::size_t head_out, Rng& rng) {
  FusionPathParams<T> p;
  const std::size_t hid = cfg.hidden_channels;
  if (cfg.use_pan) {
    for (std::size_t i = 0; i < cfg.pan_ds_blocks; ++i)
      p.pan_ds.push_back(make_conv<T>(i == 0 ? 1 : hid, hid, kKernel, rng));
  }
  for (std::size_t i = 0; i < cfg.ms_ds_blocks; ++i)
    p.ms_ds.push_back(make_conv<T>(i == 0 ? cfg.channels : hid, hid, kKernel, rng));
  p.head = make_conv<T>(pan_feature_channels(cfg) + ms_feature_channels(cfg), head_out,
                        kKernel, rng);
  return p;
}

template <typename T>
ProjectionParams<T> make_projection(const PgcuConfig& cfg, Rng& rng) {
  const std::size_t groups = cfg.use_channel_projection ? cfg.channels : 1;
  const std::size_t d = cfg.feat_dim;
  return {uniform_fan_in<T>({groups, d, d}, d, rng), Tensor<T>({groups, d}),
          Tensor<T>({groups, d}, T(1)), Tensor<T>({groups, d})};
}

void check_lrms_pan(const Shape& lrms, const Shape& pan, const PgcuConfig& cfg) {
  require(lrms.size() == 3 && lrms[0] == cfg.channels, Errc::kShape,
          "PGCU expects LRMS [" + std::to_string(cfg.channels) + "][h][w], got " +
              shape_string(lrms));
  require(pan.size() == 2, Errc::kShape, "PGCU expects PAN [H][W], got " + shape_string(pan));
}

// ---------------------------------------------------------------------------
// DS blocks and the V/G fusion path.

template <typename T>
Tensor<T> ds_forward(const Tensor<T>& x, const ConvParams<T>& conv, std::size_t stride,
                     DsBlockTrace<T>* trace) {
  require(x.rank() == 3 && x.dim(1) % (2 * stride) == 0 && x.dim(2) % (2 * stride) == 0,
          Errc::kShape,
          "DS block input " + shape_string(x.shape()) + " not divisible by 2s = " +
              std::to_string(2 * stride));
  Tensor<T> act = ops::relu(ops::conv2d(x, conv.weight, conv.bias, stride, 1));
  auto pooled = ops::max_pool2x2(act);
  if (trace) {
    trace->input = x;
    trace->activation = std::move(act);
    trace->argmax = std::move(pooled.argmax);
  }
  return std::move(pooled.y);
}

template <typename T>
Tensor<T> ds_backward(const DsBlockTrace<T>& tr, const ConvParams<T>& conv,
                      std::size_t stride, const Tensor<T>& dy, ConvParams<T>& grad) {
  Tensor<T> dact = ops::max_pool2x2_backward(tr.activation.shape(), tr.argmax, dy);
  dact = ops::relu_backward(tr.activation, std::move(dact));
  auto g = ops::conv2d_backward(tr.input, conv.weight, dact, stride, 1);
  accumulate(grad.weight, g.dw);
  accumulate(grad.bias, g.db);
  return std::move(g.dx);
}

template <typename T>
Tensor<T> run_ds_stack(Tensor<T> x, const std::vector<ConvParams<T>>& blocks,
                       std::size_t stride, std::vector<DsBlockTrace<T>>* traces) {
  if (traces) traces->resize(blocks.size());
  for (std::size_t i = 0; i < blocks.size(); ++i)
    x = ds_forward(x, blocks[i], stride, traces ? &(*traces)[i] : nullptr);
  return x;
}

template <typename T>
Tensor<T> ds_stack_backward(const std::vector<DsBlockTrace<T>>& traces,
                            const std::vector<ConvParams<T>>& blocks, std::size_t stride,
                            Tensor<T> dy, std::vector<ConvParams<T>>& grads) {
  for (std::size_t i = blocks.size(); i-- > 0;)
    dy = ds_backward(traces[i], blocks[i], stride, dy, grads[i]);
  return dy;
}

// Conv{Cat[DS_N(P), DS_M(L)]}; returns the head output [Cout][h'][w'].
template <typename T>
Tensor<T> fusion_forward(const Tensor<T>& lrms, const Tensor<T>& pan3,
                         const FusionPathParams<T>& p, const PgcuConfig& cfg,
                         FusionPathTrace<T>* trace) {
  Tensor<T> ms = run_ds_stack(lrms, p.ms_ds, cfg.stride, trace ? &trace->ms : nullptr);
  Tensor<T> fused;
  std::size_t pan_channels = 0;
  if (cfg.use_pan) {
    Tensor<T> pan = run_ds_stack(pan3, p.pan_ds, cfg.stride, trace ? &trace->pan : nullptr);
    require(pan.dim(1) == ms.dim(1) && pan.dim(2) == ms.dim(2), Errc::kShape,
            "downsampled PAN " + shape_string(pan.shape()) + " and LRMS " +
                shape_string(ms.shape()) + " branches do not align");
    pan_channels = pan.dim(0);
    fused = ops::concat_channels(pan, ms);
  } else {
    fused = std::move(ms);
  }
  Tensor<T> head = ops::conv2d(fused, p.head.weight, p.head.bias, 1, 1);
  if (trace) {
    trace->pan_channels = pan_channels;
    trace->fused = std::move(fused);
    trace->head = head;
  }
  return head;
}

template <typename T>
void fusion_backward(const FusionPathTrace<T>& tr, const FusionPathParams<T>& p,
                     const PgcuConfig& cfg, const Tensor<T>& dhead, FusionPathParams<T>& grad,
                     Tensor<T>& d_lrms, Tensor<T>& d_pan3) {
  auto g = ops::conv2d_backward(tr.fused, p.head.weight, dhead, 1, 1);
  accumulate(grad.head.weight, g.dw);
  accumulate(grad.head.bias, g.db);
  auto [dpan, dms] = ops::split_channels(g.dx, tr.pan_channels);
  accumulate(d_lrms, ds_stack_backward(tr.ms, p.ms_ds, cfg.stride, std::move(dms), grad.ms_ds));
  if (cfg.use_pan)
    accumulate(d_pan3,
               ds_stack_backward(tr.pan, p.pan_ds, cfg.stride, std::move(dpan), grad.pan_ds));
}

// [C*D][H][W] <-> [C][H*W][D].
template <typename T>
Tensor<T> heads_to_features(const Tensor<T>& head, std::size_t channels, std::size_t d) {
  const std::size_t hw = head.dim(1) * head.dim(2);
  Tensor<T> out({channels, hw, d});
  for (std::size_t c = 0; c < channels; ++c)
    MapM<T>(out.raw() + c * hw * d, hw, d) =
        MapCM<T>(head.raw() + c * d * hw, d, hw).transpose();
  return out;
}

template <typename T>
Tensor<T> features_to_heads(const Tensor<T>& feat, std::size_t h, std::size_t w) {
  const std::size_t channels = feat.dim(0), hw = feat.dim(1), d = feat.dim(2);
  Tensor<T> out({channels * d, h, w});
  for (std::size_t c = 0; c < channels; ++c)
    MapM<T>(out.raw() + c * d * hw, d, hw) =
        MapCM<T>(feat.raw() + c * hw * d, hw, d).transpose();
  return out;
}

// ---------------------------------------------------------------------------
// F path: Conv{Cat[Conv(P), Conv(Nearest(L))]}.

template <typename T>
Tensor<T> pixel_forward(const Tensor<T>& lrms, const Tensor<T>& pan3,
                        const PixelPathParams<T>& p, const PgcuConfig& cfg,
                        PixelPathTrace<T>* trace) {
  Tensor<T> ms_up = ops::nearest_upsample(lrms, cfg.scale);
  require(ms_up.dim(1) == pan3.dim(1) && ms_up.dim(2) == pan3.dim(2), Errc::kShape,
          "PAN " + shape_string(pan3.shape()) + " does not match r-upsampled LRMS " +
              shape_string(ms_up.shape()));
  Tensor<T> ms_act = ops::relu(ops::conv2d(ms_up, p.ms.weight, p.ms.bias, 1, 1));
  Tensor<T> pan_act, fused;
  if (cfg.use_pan) {
    pan_act = ops::relu(ops::conv2d(pan3, p.pan->weight, p.pan->bias, 1, 1));
    fused = ops::concat_channels(pan_act, ms_act);
  } else {
    fused = ms_act;
  }
  Tensor<T> head = ops::conv2d(fused, p.head.weight, p.head.bias, 1, 1);
  if (trace) {
    trace->ms_up = std::move(ms_up);
    trace->pan_act = std::move(pan_act);
    trace->ms_act = std::move(ms_act);
    trace->fused = std::move(fused);
  }
  return head;
}

template <typename T>
void pixel_backward(const PixelPathTrace<T>& tr, const Tensor<T>& pan3,
                    const PixelPathParams<T>& p, const PgcuConfig& cfg,
                    const Tensor<T>& dhead, PixelPathParams<T>& grad, Tensor<T>& d_lrms,
                    Tensor<T>& d_pan3) {
  auto g = ops::conv2d_backward(tr.fused, p.head.weight, dhead, 1, 1);
  accumulate(grad.head.weight, g.dw);
  accumulate(grad.head.bias, g.db);
  const std::size_t pan_channels = cfg.use_pan ? tr.pan_act.dim(0) : 0;
  auto [dpan_act, dms_act] = ops::split_channels(g.dx, pan_channels);

  dms_act = ops::relu_backward(tr.ms_act, std::move(dms_act));
  auto gm = ops::conv2d_backward(tr.ms_up, p.ms.weight, dms_act, 1, 1);
  accumulate(grad.ms.weight, gm.dw);
  accumulate(grad.ms.bias, gm.db);
  accumulate(d_lrms, ops::nearest_upsample_backward(gm.dx, cfg.scale));

  if (cfg.use_pan) {
    dpan_act = ops::relu_backward(tr.pan_act, std::move(dpan_act));
    auto gp = ops::conv2d_backward(pan3, p.pan->weight, dpan_act, 1, 1);
    accumulate(grad.pan->weight, gp.dw);
    accumulate(grad.pan->bias, gp.db);
    accumulate(d_pan3, gp.dx);
  }
}

// ---------------------------------------------------------------------------
// Channel projection.

template <typename T>
Tensor<T> project_forward(const Tensor<T>& x, const ProjectionParams<T>& p,
                          ProjectionTrace<T>* trace) {
  require(x.rank() >= 2, Errc::kShape, "channel projection needs [C][...][D]");
  const std::size_t channels = x.dim(0), d = x.dim(x.rank() - 1);
  const std::size_t rows = x.size() / (channels * d);
  require(p.weight.rank() == 3 && p.weight.dim(1) == d && p.weight.dim(2) == d,
          Errc::kShape, "projection weight does not match feature length");
  require(p.groups() == 1 || p.groups() == channels, Errc::kShape,
          "projection groups must be 1 or C");
  Tensor<T> lin(x.shape()), y(x.shape()), xhat(x.shape());
  Tensor<T> inv_std({channels, rows});
  for (std::size_t c = 0; c < channels; ++c) {
    const std::size_t gi = p.groups() == 1 ? 0 : c;
    const std::size_t off = c * rows * d;
    ops::linear_rows(x.raw() + off, rows, d, p.weight.raw() + gi * d * d,
                     p.bias.raw() + gi * d, d, lin.raw() + off);
    ops::layer_norm_rows(lin.raw() + off, rows, d, p.gain.raw() + gi * d,
                         p.offset.raw() + gi * d, static_cast<T>(kLayerNormEps),
                         y.raw() + off, xhat.raw() + off, inv_std.raw() + c * rows);
  }
  if (trace) {
    trace->input = x;
    trace->xhat = std::move(xhat);
    trace->inv_std = std::move(inv_std);
  }
  return y;
}

template <typename T>
Tensor<T> project_backward(const ProjectionTrace<T>& tr, const ProjectionParams<T>& p,
                           const Tensor<T>& dy, ProjectionParams<T>& grad) {
  const Tensor<T>& x = tr.input;
  const std::size_t channels = x.dim(0), d = x.dim(x.rank() - 1);
  const std::size_t rows = x.size() / (channels * d);
  Tensor<T> dlin(x.shape()), dx(x.shape());
  for (std::size_t c = 0; c < channels; ++c) {
    const std::size_t gi = p.groups() == 1 ? 0 : c;
    const std::size_t off = c * rows * d;
    ops::layer_norm_rows_backward(tr.xhat.raw() + off, tr.inv_std.raw() + c * rows, rows, d,
                                  p.gain.raw() + gi * d, dy.raw() + off, dlin.raw() + off,
                                  grad.gain.raw() + gi * d, grad.offset.raw() + gi * d);
    ops::linear_rows_backward(x.raw() + off, rows, d, p.weight.raw() + gi * d * d, d,
                              dlin.raw() + off, dx.raw() + off, grad.weight.raw() + gi * d * d,
                              grad.bias.raw() + gi * d);
  }
  return dx;
}

// ---------------------------------------------------------------------------
// Similarity -> softmax.

template <typename T>
ProbabilityTensor<T> similarity_forward(const Tensor<T>& pfv, const Tensor<T>& vfv,
                                        SimilarityTrace<T>* trace) {
  require(pfv.rank() >= 3 && vfv.rank() == 3 && pfv.dim(0) == vfv.dim(0) &&
              pfv.dim(pfv.rank() - 1) == vfv.dim(2),
          Errc::kShape,
          "similarity: PFV " + shape_string(pfv.shape()) + " incompatible with VFV " +
              shape_string(vfv.shape()));
  const std::size_t channels = vfv.dim(0), n = vfv.dim(1), d = vfv.dim(2);
  const std::size_t rows = pfv.size() / (channels * d);
  const T eps = static_cast<T>(kCosineEps);

  Shape p_shape(pfv.shape().begin(), pfv.shape().end() - 1);
  p_shape.push_back(n);
  ProbabilityTensor<T> out{Tensor<T>(p_shape)};
  Tensor<T> cosine({channels, rows, n}), f_norm({channels, rows}), g_norm({channels, n});

  for (std::size_t c = 0; c < channels; ++c) {
    const T* fm = pfv.raw() + c * rows * d;
    const T* gm = vfv.raw() + c * n * d;
    MapM<T> cos(cosine.raw() + c * rows * n, rows, n);
    cos.noalias() = MapCM<T>(fm, rows, d) * MapCM<T>(gm, n, d).transpose();
    for (std::size_t r = 0; r < rows; ++r)
      f_norm(c, r) = MapCM<T>(fm + r * d, 1, d).norm();
    for (std::size_t k = 0; k < n; ++k) g_norm(c, k) = MapCM<T>(gm + k * d, 1, d).norm();

    T* prob = out.probs.raw() + c * rows * n;
    for (std::size_t r = 0; r < rows; ++r) {
      for (std::size_t k = 0; k < n; ++k) {
        cos(r, k) /= f_norm(c, r) * g_norm(c, k) + eps;
        prob[r * n + k] = cos(r, k);
      }
      softmax_inplace(std::span<T>(prob + r * n, n));
    }
  }
  if (trace) {
    trace->cosine = std::move(cosine);
    trace->f_norm = std::move(f_norm);
    trace->g_norm = std::move(g_norm);
  }
  return out;
}

template <typename T>
void similarity_backward(const SimilarityTrace<T>& tr, const ProbabilityTensor<T>& p,
                         const Tensor<T>& pfv, const Tensor<T>& vfv, const Tensor<T>& dprob,
                         Tensor<T>& dpfv, Tensor<T>& dvfv) {
  const std::size_t channels = vfv.dim(0), n = vfv.dim(1), d = vfv.dim(2);
  const std::size_t rows = pfv.size() / (channels * d);
  const T eps = static_cast<T>(kCosineEps);
  dpfv = Tensor<T>(pfv.shape());
  dvfv = Tensor<T>(vfv.shape());
  Mat<T> da(rows, n);
  Buffer<T> dfn(rows), dgn(n);
  for (std::size_t c = 0; c < channels; ++c) {
    const T* prob = p.probs.raw() + c * rows * n;
    const T* dp = dprob.raw() + c * rows * n;
    const T* cos = tr.cosine.raw() + c * rows * n;
    const T* fn = tr.f_norm.raw() + c * rows;
    const T* gn = tr.g_norm.raw() + c * n;
    std::fill(dfn.begin(), dfn.end(), T(0));
    std::fill(dgn.begin(), dgn.end(), T(0));
    for (std::size_t r = 0; r < rows; ++r) {
      T dot = 0;
      for (std::size_t k = 0; k < n; ++k) dot += prob[r * n + k] * dp[r * n + k];
      for (std::size_t k = 0; k < n; ++k) {
        // softmax, then cos = a / (|f||g| + eps)
        const T dcos = prob[r * n + k] * (dp[r * n + k] - dot);
        const T denom = fn[r] * gn[k] + eps;
        const T d_a = dcos / denom;
        da(r, k) = d_a;
        dfn[r] -= d_a * cos[r * n + k] * gn[k];
        dgn[k] -= d_a * cos[r * n + k] * fn[r];
      }
    }
    MapCM<T> fm(pfv.raw() + c * rows * d, rows, d);
    MapCM<T> gm(vfv.raw() + c * n * d, n, d);
    MapM<T> dfm(dpfv.raw() + c * rows * d, rows, d);
    MapM<T> dgm(dvfv.raw() + c * n * d, n, d);
    dfm.noalias() = da * gm;
    dgm.noalias() = da.transpose() * fm;
    // |v| has no derivative at 0; that term is dropped there.
    for (std::size_t r = 0; r < rows; ++r)
      if (fn[r] > T(0)) dfm.row(r) += (dfn[r] / fn[r]) * fm.row(r);
    for (std::size_t k = 0; k < n; ++k)
      if (gn[k] > T(0)) dgm.row(k) += (dgn[k] / gn[k]) * gm.row(k);
  }
}

template <typename T>
void check_simplex_shapes(const ProbabilityTensor<T>& p, const DistributionValue<T>& v) {
  require(v.values.rank() == 2 && p.probs.rank() >= 2 && p.probs.dim(0) == v.values.dim(0) &&
              p.probs.dim(p.probs.rank() - 1) == v.values.dim(1),
          Errc::kShape,
          "expectation: P " + shape_string(p.probs.shape()) + " incompatible with V " +
              shape_string(v.values.shape()));
}

}  // namespace

// ---------------------------------------------------------------------------

std::size_t PgcuConfig::shrink(std::size_t blocks) const { return ipow(2 * stride, blocks); }

void PgcuConfig::validate() const {
  require(channels >= 1, Errc::kConfig, "pgcu.channels must be >= 1");
  require(scale >= 1, Errc::kConfig, "pgcu.scale must be >= 1");
  require(stride >= 1, Errc::kConfig, "pgcu.stride must be >= 1");
  require(feat_dim >= 1, Errc::kConfig, "pgcu.feat_dim must be >= 1");
  require(hidden_channels >= 1, Errc::kConfig, "pgcu.hidden_channels must be >= 1");
}

std::size_t PgcuConfig::num_values(std::size_t lrms_h, std::size_t lrms_w,
                                   std::size_t pan_h, std::size_t pan_w) const {
  require(pan_h == scale * lrms_h && pan_w == scale * lrms_w, Errc::kShape,
          "PAN " + std::to_string(pan_h) + "x" + std::to_string(pan_w) +
              " must be r x LRMS " + std::to_string(lrms_h) + "x" + std::to_string(lrms_w));
  const std::size_t fm = shrink(ms_ds_blocks);
  require(lrms_h % fm == 0 && lrms_w % fm == 0, Errc::kShape,
          "LRMS size must be divisible by (2s)^M = " + std::to_string(fm));
  const std::size_t n_ms = (lrms_h / fm) * (lrms_w / fm);
  if (use_pan) {
    const std::size_t fp = shrink(pan_ds_blocks);
    require(pan_h % fp == 0 && pan_w % fp == 0, Errc::kShape,
            "PAN size must be divisible by (2s)^N = " + std::to_string(fp));
    require(pan_h / fp == lrms_h / fm && pan_w / fp == lrms_w / fm, Errc::kShape,
            "downsampled PAN grid " + std::to_string(pan_h / fp) + "x" +
                std::to_string(pan_w / fp) + " does not match LRMS grid " +
                std::to_string(lrms_h / fm) + "x" + std::to_string(lrms_w / fm));
  }
  return n_ms;
}

template <typename T>
PgcuParams<T> init_pgcu_params(const PgcuConfig& cfg, std::uint64_t seed) {
  cfg.validate();
  Rng rng(seed);
  PgcuParams<T> p;
  const std::size_t cd = cfg.channels * cfg.feat_dim;
  p.v = make_fusion_path<T>(cfg, cfg.channels, rng);
  p.g = make_fusion_path<T>(cfg, cd, rng);
  const std::size_t hid = cfg.hidden_channels;
  if (cfg.use_pan) p.f.pan = make_conv<T>(1, hid, kKernel, rng);
  p.f.ms = make_conv<T>(cfg.channels, hid, kKernel, rng);
  p.f.head = make_conv<T>(cfg.use_pan ? 2 * hid : hid, cd, kKernel, rng);
  p.f_proj = make_projection<T>(cfg, rng);
  p.g_proj = make_projection<T>(cfg, rng);
  // FA starts as the identity so the initial output is the expectation itself.
  p.fa = {Tensor<T>({cfg.channels, cfg.channels, kKernel, kKernel}), Tensor<T>({cfg.channels})};
  for (std::size_t c = 0; c < cfg.channels; ++c) p.fa.weight(c, c, kKernel / 2, kKernel / 2) = T(1);
  return p;
}

std::size_t pgcu_parameter_count(const PgcuConfig& cfg) {
  const std::size_t k2 = kKernel * kKernel, hid = cfg.hidden_channels, c = cfg.channels;
  const std::size_t d = cfg.feat_dim;
  auto conv = [&](std::size_t cin, std::size_t cout) { return cout * cin * k2 + cout; };
  auto path = [&](std::size_t head_out) {
    std::size_t n = 0;
    if (cfg.use_pan)
      for (std::size_t i = 0; i < cfg.pan_ds_blocks; ++i) n += conv(i == 0 ? 1 : hid, hid);
    for (std::size_t i = 0; i < cfg.ms_ds_blocks; ++i) n += conv(i == 0 ? c : hid, hid);
    return n + conv(pan_feature_channels(cfg) + ms_feature_channels(cfg), head_out);
  };
  const std::size_t groups = cfg.use_channel_projection ? c : 1;
  const std::size_t proj = groups * (d * d + 3 * d);
  const std::size_t f = (cfg.use_pan ? conv(1, hid) : 0) + conv(c, hid) +
                        conv(cfg.use_pan ? 2 * hid : hid, c * d);
  return path(c) + path(c * d) + f + 2 * proj + conv(c, c);
}

template <typename T>
Tensor<T> ds_block(const Tensor<T>& x, const ConvParams<T>& conv, std::size_t stride) {
  return ds_forward<T>(x, conv, stride, nullptr);
}

template <typename T>
DistributionValue<T> extract_v(const Tensor<T>& lrms, const Tensor<T>& pan,
                               const PgcuParams<T>& params, const PgcuConfig& cfg) {
  check_lrms_pan(lrms.shape(), pan.shape(), cfg);
  const std::size_t n = cfg.num_values(lrms.dim(1), lrms.dim(2), pan.dim(0), pan.dim(1));
  Tensor<T> head = fusion_forward<T>(lrms, pan.reshaped({1, pan.dim(0), pan.dim(1)}),
                                     params.v, cfg, nullptr);
  return {ops::sigmoid(std::move(head)).reshaped({cfg.channels, n})};
}

template <typename T>
Tensor<T> extract_g(const Tensor<T>& lrms, const Tensor<T>& pan, const PgcuParams<T>& params,
                    const PgcuConfig& cfg) {
  check_lrms_pan(lrms.shape(), pan.shape(), cfg);
  cfg.num_values(lrms.dim(1), lrms.dim(2), pan.dim(0), pan.dim(1));
  Tensor<T> head = fusion_forward<T>(lrms, pan.reshaped({1, pan.dim(0), pan.dim(1)}),
                                     params.g, cfg, nullptr);
  return heads_to_features(head, cfg.channels, cfg.feat_dim);
}

template <typename T>
Tensor<T> extract_f(const Tensor<T>& lrms, const Tensor<T>& pan, const PgcuParams<T>& params,
                    const PgcuConfig& cfg) {
  check_lrms_pan(lrms.shape(), pan.shape(), cfg);
  Tensor<T> head = pixel_forward<T>(lrms, pan.reshaped({1, pan.dim(0), pan.dim(1)}), params.f,
                                    cfg, nullptr);
  return heads_to_features(head, cfg.channels, cfg.feat_dim)
      .reshaped({cfg.channels, pan.dim(0), pan.dim(1), cfg.feat_dim});
}

template <typename T>
Tensor<T> channel_project(const Tensor<T>& x, const ProjectionParams<T>& proj) {
  return project_forward<T>(x, proj, nullptr);
}

template <typename T>
ProbabilityTensor<T> similarity_probabilities(const Tensor<T>& pfv, const Tensor<T>& vfv) {
  return similarity_forward<T>(pfv, vfv, nullptr);
}

template <typename T>
Tensor<T> expectation(const ProbabilityTensor<T>& p, const DistributionValue<T>& v) {
  check_simplex_shapes(p, v);
  const std::size_t channels = v.values.dim(0), n = v.values.dim(1);
  const std::size_t rows = p.probs.size() / (channels * n);
  Shape shape(p.probs.shape().begin(), p.probs.shape().end() - 1);
  Tensor<T> out(shape);
  for (std::size_t c = 0; c < channels; ++c)
    Eigen::Map<Eigen::Matrix<T, Eigen::Dynamic, 1>>(out.raw() + c * rows, rows).noalias() =
        MapCM<T>(p.probs.raw() + c * rows * n, rows, n) *
        Eigen::Map<const Eigen::Matrix<T, Eigen::Dynamic, 1>>(v.values.raw() + c * n, n);
  return out;
}

template <typename T>
Tensor<T> fine_adjust(const Tensor<T>& expected, const ConvParams<T>& fa) {
  return ops::conv2d(expected, fa.weight, fa.bias, 1, 1);
}

template <typename T>
PgcuTrace<T> pgcu_forward_traced(const Tensor<T>& lrms, const Tensor<T>& pan,
                                 const PgcuParams<T>& params, const PgcuConfig& cfg) {
  check_lrms_pan(lrms.shape(), pan.shape(), cfg);
  const std::size_t n = cfg.num_values(lrms.dim(1), lrms.dim(2), pan.dim(0), pan.dim(1));
  const std::size_t H = pan.dim(0), W = pan.dim(1);
  PgcuTrace<T> tr;
  tr.lrms = lrms;
  tr.pan = pan.reshaped({1, H, W});

  Tensor<T> v_head = fusion_forward(lrms, tr.pan, params.v, cfg, &tr.v_path);
  tr.v.values = ops::sigmoid(std::move(v_head)).reshaped({cfg.channels, n});
  Tensor<T> g_head = fusion_forward(lrms, tr.pan, params.g, cfg, &tr.g_path);
  tr.g = heads_to_features(g_head, cfg.channels, cfg.feat_dim);
  Tensor<T> f_head = pixel_forward(lrms, tr.pan, params.f, cfg, &tr.f_path);
  tr.f = heads_to_features(f_head, cfg.channels, cfg.feat_dim);

  tr.pfv = project_forward(tr.f, params.f_proj, &tr.f_proj);
  tr.vfv = project_forward(tr.g, params.g_proj, &tr.g_proj);
  tr.p = similarity_forward(tr.pfv, tr.vfv, &tr.sim);
  tr.expected = expectation(tr.p, tr.v).reshaped({cfg.channels, H, W});
  tr.output = fine_adjust(tr.expected, params.fa);
  tr.p.probs = tr.p.probs.reshaped({cfg.channels, H, W, n});
  return tr;
}

template <typename T>
Tensor<T> pgcu_forward(const Tensor<T>& lrms, const Tensor<T>& pan,
                       const PgcuParams<T>& params, const PgcuConfig& cfg) {
  return pgcu_forward_traced(lrms, pan, params, cfg).output;
}

template <typename T>
PgcuGrads<T> pgcu_backward(const PgcuTrace<T>& tr, const PgcuParams<T>& params,
                           const PgcuConfig& cfg, const Tensor<T>& upstream) {
  require(upstream.shape() == tr.output.shape(), Errc::kShape,
          "pgcu_backward: upstream gradient shape " + shape_string(upstream.shape()) +
              " != output " + shape_string(tr.output.shape()));
  const std::size_t channels = cfg.channels, n = tr.v.values.dim(1);
  const std::size_t H = tr.pan.dim(1), W = tr.pan.dim(2), rows = H * W;
  PgcuGrads<T> grads{zeros_like_params(params), zeros_like(tr.lrms), zeros_like(tr.pan)};

  // Fine adjustment.
  auto fa = ops::conv2d_backward(tr.expected, params.fa.weight, upstream, 1, 1);
  accumulate(grads.params.fa.weight, fa.dw);
  accumulate(grads.params.fa.bias, fa.db);

  // Expectation: E = P V.
  Tensor<T> dprob({channels, rows, n});
  Tensor<T> dv({channels, n});
  for (std::size_t c = 0; c < channels; ++c) {
    const T* de = fa.dx.raw() + c * rows;
    const T* prob = tr.p.probs.raw() + c * rows * n;
    const T* v = tr.v.values.raw() + c * n;
    for (std::size_t r = 0; r < rows; ++r)
      for (std::size_t k = 0; k < n; ++k) {
        dprob[(c * rows + r) * n + k] = de[r] * v[k];
        dv[c * n + k] += de[r] * prob[r * n + k];
      }
  }

  // V head: sigmoid then the fusion path.
  Tensor<T> dv_head = ops::sigmoid_backward(tr.v.values, std::move(dv))
                          .reshaped(tr.v_path.head.shape());
  fusion_backward(tr.v_path, params.v, cfg, dv_head, grads.params.v, grads.lrms, grads.pan);

  // Similarity and projections.
  Tensor<T> dpfv, dvfv;
  ProbabilityTensor<T> flat_p{tr.p.probs.reshaped({channels, rows, n})};
  similarity_backward(tr.sim, flat_p, tr.pfv, tr.vfv, dprob, dpfv, dvfv);
  Tensor<T> df = project_backward(tr.f_proj, params.f_proj, dpfv, grads.params.f_proj);
  Tensor<T> dg = project_backward(tr.g_proj, params.g_proj, dvfv, grads.params.g_proj);

  const auto& gh = tr.g_path.head.shape();
  fusion_backward(tr.g_path, params.g, cfg, features_to_heads(dg, gh[1], gh[2]),
                  grads.params.g, grads.lrms, grads.pan);
  pixel_backward(tr.f_path, tr.pan, params.f, cfg, features_to_heads(df, H, W),
                 grads.params.f, grads.lrms, grads.pan);

  grads.pan = grads.pan.reshaped({H, W});
  return grads;
}

template <typename T>
PgcuGrads<T> pgcu_backward(const Tensor<T>& lrms, const Tensor<T>& pan,
                           const PgcuParams<T>& params, const PgcuConfig& cfg,
                           const Tensor<T>& upstream) {
  return pgcu_backward(pgcu_forward_traced(lrms, pan, params, cfg), params, cfg, upstream);
}

template <typename T>
MSImage pgcu_upsample(const MSImage& lrms, const PanImage& pan, const PgcuParams<T>& params,
                      const PgcuConfig& cfg) {
  Tensor<T> out = pgcu_forward<T>(lrms.tensor().cast<T>(), pan.tensor().cast<T>(), params, cfg);
  return MSImage::from(out, /*clamp=*/true);
}

#define PGCU_INSTANTIATE(T)                                                                 \
  template PgcuParams<T> init_pgcu_params<T>(const PgcuConfig&, std::uint64_t);             \
  template Tensor<T> ds_block(const Tensor<T>&, const ConvParams<T>&, std::size_t);          \
  template DistributionValue<T> extract_v(const Tensor<T>&, const Tensor<T>&,               \
                                          const PgcuParams<T>&, const PgcuConfig&);         \
  template Tensor<T> extract_g(const Tensor<T>&, const Tensor<T>&, const PgcuParams<T>&,     \
                               const PgcuConfig&);                                          \
  template Tensor<T> extract_f(const Tensor<T>&, const Tensor<T>&, const PgcuParams<T>&,     \
                               const PgcuConfig&);                                          \
  template Tensor<T> channel_project(const Tensor<T>&, const ProjectionParams<T>&);         \
  template ProbabilityTensor<T> similarity_probabilities(const Tensor<T>&, const Tensor<T>&); \
  template Tensor<T> expectation(const ProbabilityTensor<T>&, const DistributionValue<T>&); \
  template Tensor<T> fine_adjust(const Tensor<T>&, const ConvParams<T>&);                   \
  template PgcuTrace<T> pgcu_forward_traced(const Tensor<T>&, const Tensor<T>&,             \
                                            const PgcuParams<T>&, const PgcuConfig&);       \
  template Tensor<T> pgcu_forward(const Tensor<T>&, const Tensor<T>&, const PgcuParams<T>&,  \
                                  const PgcuConfig&);                                       \
  template PgcuGrads<T> pgcu_backward(const PgcuTrace<T>&, const PgcuParams<T>&,            \
                                      const PgcuConfig&, const Tensor<T>&);                 \
  template PgcuGrads<T> pgcu_backward(const Tensor<T>&, const Tensor<T>&,                   \
                                      const PgcuParams<T>&, const PgcuConfig&,              \
                                      const Tensor<T>&);                                    \
  template MSImage pgcu_upsample(const MSImage&, const PanImage&, const PgcuParams<T>&,      \
                                 const PgcuConfig&);

PGCU_INSTANTIATE(float)
PGCU_INSTANTIATE(double)
#undef PGCU_INSTANTIATE

}  // namespace pgcu
