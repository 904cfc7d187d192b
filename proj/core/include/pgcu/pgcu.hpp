#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <limits>
#include <optional>
#include <span>
#include <vector>

#include "pgcu/image.hpp"
#include "pgcu/ops.hpp"
#include "pgcu/params.hpp"
#include "pgcu/tensor.hpp"

// Probability-based global cross-modal upsampling.
//
// Every output pixel h[c,i,j] is the expectation of a discrete distribution
// over n candidate values V[c,:] shared by all pixels of channel c. The
// probabilities come from a softmax over cosine similarities between a
// per-pixel feature f[c,i,j] and per-candidate features g[c,k], both
// projected into a channel-specific space. A final 3x3 convolution mixes
// neighbouring pixels and channels.
//
// Blocks:
//   information extraction   V, G from downsampled PAN + LRMS;
//                            F from PAN + nearest-upsampled LRMS
//   distribution/expectation channel projection, similarity, softmax,
//                            expectation
//   fine adjustment          3x3 conv C -> C
namespace pgcu {

struct PgcuConfig {
  std::size_t channels = 4;
  std::size_t scale = 4;            // r
  std::size_t stride = 2;           // s, conv stride inside a DS block
  std::size_t pan_ds_blocks = 3;    // N
  std::size_t ms_ds_blocks = 2;     // M; 0 feeds LRMS to the fusion conv directly
  std::size_t feat_dim = 128;       // D
  std::size_t hidden_channels = 32;
  bool use_pan = true;
  bool use_channel_projection = true;

  // Spatial shrink factor of `blocks` DS blocks: (2s)^blocks.
  std::size_t shrink(std::size_t blocks) const;

  // Throws Errc::kConfig on non-positive sizes.
  void validate() const;

  // Checks the LRMS [C][h][w] / PAN [H][W] shape contract and returns the
  // number of candidate values n. Throws Errc::kShape on violation.
  std::size_t num_values(std::size_t lrms_h, std::size_t lrms_w, std::size_t pan_h,
                         std::size_t pan_w) const;
};

template <typename T>
struct FusionPathParams {
  using scalar_type = T;
  std::vector<ConvParams<T>> pan_ds;  // empty when use_pan is false
  std::vector<ConvParams<T>> ms_ds;
  ConvParams<T> head;

  template <typename Self, typename Fn>
  static void visit_impl(Self& self, const std::string& prefix, Fn& fn) {
    for (std::size_t i = 0; i < self.pan_ds.size(); ++i)
      self.pan_ds[i].visit(prefix + ".pan_ds." + std::to_string(i), fn);
    for (std::size_t i = 0; i < self.ms_ds.size(); ++i)
      self.ms_ds[i].visit(prefix + ".ms_ds." + std::to_string(i), fn);
    self.head.visit(prefix + ".head", fn);
  }
  template <typename Fn>
  void visit(const std::string& prefix, Fn&& fn) { visit_impl(*this, prefix, fn); }
  template <typename Fn>
  void visit(const std::string& prefix, Fn&& fn) const { visit_impl(*this, prefix, fn); }
};

template <typename T>
struct PixelPathParams {
  using scalar_type = T;
  std::optional<ConvParams<T>> pan;  // absent when use_pan is false
  ConvParams<T> ms;
  ConvParams<T> head;

  template <typename Self, typename Fn>
  static void visit_impl(Self& self, const std::string& prefix, Fn& fn) {
    if (self.pan) self.pan->visit(prefix + ".pan", fn);
    self.ms.visit(prefix + ".ms", fn);
    self.head.visit(prefix + ".head", fn);
  }
  template <typename Fn>
  void visit(const std::string& prefix, Fn&& fn) { visit_impl(*this, prefix, fn); }
  template <typename Fn>
  void visit(const std::string& prefix, Fn&& fn) const { visit_impl(*this, prefix, fn); }
};

// Linear + layer norm per group. groups == C with channel projection,
// 1 (shared across channels) without.
template <typename T>
struct ProjectionParams {
  using scalar_type = T;
  Tensor<T> weight;  // [groups][D][D]
  Tensor<T> bias;    // [groups][D]
  Tensor<T> gain;    // [groups][D]
  Tensor<T> offset;  // [groups][D]

  std::size_t groups() const { return weight.dim(0); }

  template <typename Self, typename Fn>
  static void visit_impl(Self& self, const std::string& prefix, Fn& fn) {
    fn(prefix + ".weight", self.weight);
    fn(prefix + ".bias", self.bias);
    fn(prefix + ".gain", self.gain);
    fn(prefix + ".offset", self.offset);
  }
  template <typename Fn>
  void visit(const std::string& prefix, Fn&& fn) { visit_impl(*this, prefix, fn); }
  template <typename Fn>
  void visit(const std::string& prefix, Fn&& fn) const { visit_impl(*this, prefix, fn); }
};

template <typename T>
struct PgcuParams {
  using scalar_type = T;
  FusionPathParams<T> v;
  FusionPathParams<T> g;
  PixelPathParams<T> f;
  ProjectionParams<T> f_proj;
  ProjectionParams<T> g_proj;
  ConvParams<T> fa;

  template <typename Self, typename Fn>
  static void visit_impl(Self& self, const std::string& prefix, Fn& fn) {
    self.v.visit(prefix + ".v", fn);
    self.g.visit(prefix + ".g", fn);
    self.f.visit(prefix + ".f", fn);
    self.f_proj.visit(prefix + ".f_proj", fn);
    self.g_proj.visit(prefix + ".g_proj", fn);
    self.fa.visit(prefix + ".fa", fn);
  }
  template <typename Fn>
  void visit(const std::string& prefix, Fn&& fn) { visit_impl(*this, prefix, fn); }
  template <typename Fn>
  void visit(const std::string& prefix, Fn&& fn) const { visit_impl(*this, prefix, fn); }
};

// Candidate values, [C][n]. One row per channel, no spatial axes.
template <typename T>
struct DistributionValue {
  Tensor<T> values;
};

// Per-pixel probabilities, [C][H][W][n]; each trailing slice is a simplex.
template <typename T>
struct ProbabilityTensor {
  Tensor<T> probs;
};

// Deterministic given (cfg, seed). Draw order is the visit order.
template <typename T>
PgcuParams<T> init_pgcu_params(const PgcuConfig& cfg, std::uint64_t seed);

// Closed-form parameter count for cfg.
std::size_t pgcu_parameter_count(const PgcuConfig& cfg);

// 3x3 conv (stride s, pad 1) -> ReLU -> 2x2 max pool. Shrinks by 2s.
template <typename T>
Tensor<T> ds_block(const Tensor<T>& x, const ConvParams<T>& conv, std::size_t stride);

// lrms [C][h][w], pan [H][W].
template <typename T>
DistributionValue<T> extract_v(const Tensor<T>& lrms, const Tensor<T>& pan,
                               const PgcuParams<T>& params, const PgcuConfig& cfg);

// Returns G [C][n][D].
template <typename T>
Tensor<T> extract_g(const Tensor<T>& lrms, const Tensor<T>& pan,
                    const PgcuParams<T>& params, const PgcuConfig& cfg);

// Returns F [C][H][W][D].
template <typename T>
Tensor<T> extract_f(const Tensor<T>& lrms, const Tensor<T>& pan,
                    const PgcuParams<T>& params, const PgcuConfig& cfg);

// x [C][...][D]; each channel c goes through its group's linear map and
// layer norm (eps 1e-5).
template <typename T>
Tensor<T> channel_project(const Tensor<T>& x, const ProjectionParams<T>& proj);

// pfv [C][H][W][D], vfv [C][n][D] -> softmax over k of cosine similarity.
template <typename T>
ProbabilityTensor<T> similarity_probabilities(const Tensor<T>& pfv, const Tensor<T>& vfv);

// [C][H][W] = sum_k P[c,i,j,k] * V[c,k].
template <typename T>
Tensor<T> expectation(const ProbabilityTensor<T>& p, const DistributionValue<T>& v);

template <typename T>
Tensor<T> fine_adjust(const Tensor<T>& expected, const ConvParams<T>& fa);

// Max-subtracted softmax of one row, in place.
template <typename T>
void softmax_inplace(std::span<T> row) {
  T mx = -std::numeric_limits<T>::infinity();
  for (T v : row) mx = std::max(mx, v);
  T sum = 0;
  for (T& v : row) sum += (v = std::exp(v - mx));
  for (T& v : row) v /= sum;
}

inline constexpr double kCosineEps = 1e-8;
inline constexpr double kLayerNormEps = 1e-5;

// Intermediate values kept for the backward pass.
template <typename T>
struct DsBlockTrace {
  Tensor<T> input;
  Tensor<T> activation;  // post-ReLU, pre-pool
  std::vector<std::uint32_t> argmax;
};

template <typename T>
struct FusionPathTrace {
  std::vector<DsBlockTrace<T>> pan, ms;
  std::size_t pan_channels = 0;
  Tensor<T> fused;
  Tensor<T> head;
};

template <typename T>
struct PixelPathTrace {
  Tensor<T> ms_up;
  Tensor<T> pan_act, ms_act;
  Tensor<T> fused;
};

template <typename T>
struct ProjectionTrace {
  Tensor<T> input;    // [C][R][D]
  Tensor<T> xhat;     // [C][R][D]
  Tensor<T> inv_std;  // [C][R]
};

template <typename T>
struct SimilarityTrace {
  Tensor<T> cosine;   // [C][R][n]
  Tensor<T> f_norm;   // [C][R]
  Tensor<T> g_norm;   // [C][n]
};

template <typename T>
struct PgcuTrace {
  Tensor<T> lrms;
  Tensor<T> pan;  // [1][H][W]
  FusionPathTrace<T> v_path, g_path;
  PixelPathTrace<T> f_path;
  DistributionValue<T> v;
  Tensor<T> f, g;  // before projection
  ProjectionTrace<T> f_proj, g_proj;
  Tensor<T> pfv, vfv;
  SimilarityTrace<T> sim;
  ProbabilityTensor<T> p;
  Tensor<T> expected;  // before fine adjustment
  Tensor<T> output;    // unclamped
};

template <typename T>
struct PgcuGrads {
  PgcuParams<T> params;
  Tensor<T> lrms;
  Tensor<T> pan;  // [H][W]
};

// Unclamped output [C][H][W].
template <typename T>
Tensor<T> pgcu_forward(const Tensor<T>& lrms, const Tensor<T>& pan,
                       const PgcuParams<T>& params, const PgcuConfig& cfg);

template <typename T>
PgcuTrace<T> pgcu_forward_traced(const Tensor<T>& lrms, const Tensor<T>& pan,
                                 const PgcuParams<T>& params, const PgcuConfig& cfg);

template <typename T>
PgcuGrads<T> pgcu_backward(const PgcuTrace<T>& trace, const PgcuParams<T>& params,
                           const PgcuConfig& cfg, const Tensor<T>& upstream);

template <typename T>
PgcuGrads<T> pgcu_backward(const Tensor<T>& lrms, const Tensor<T>& pan,
                           const PgcuParams<T>& params, const PgcuConfig& cfg,
                           const Tensor<T>& upstream);

// Materialised image: forward pass in T, then clamped to [0,1].
template <typename T>
MSImage pgcu_upsample(const MSImage& lrms, const PanImage& pan,
                      const PgcuParams<T>& params, const PgcuConfig& cfg);

}  // namespace pgcu
