#pragma once

#include <cstddef>
#include <cstdint>
#include <string>
#include <vector>

#include "pgcu/baselines.hpp"
#include "pgcu/image.hpp"
#include "pgcu/params.hpp"

// Residual pansharpening backbone with a pluggable upsampler:
//
//   U   = upsample(L, P)
//   x   = Cat[U, P]
//   h   = ReLU(head(x))
//   h   = h + conv2(ReLU(conv1(h)))      (num_res_blocks times)
//   out = U + tail(h)
//
// With an all-zero tail the output is exactly U.
namespace pgcu {

struct BackboneConfig {
  std::size_t num_res_blocks = 4;
  std::size_t width = 32;
  // false skips the body entirely: out = U.
  bool with_body = true;
  // Upsampler parameters receive zero gradient.
  bool freeze_upsampler = false;
  UpsamplerConfig upsampler;

  void validate() const;
};

template <typename T>
struct BackboneParams {
  using scalar_type = T;
  std::vector<ConvParams<T>> body;  // head, (conv1, conv2) per block, tail; empty without body
  UpsamplerParams<T> up;

  template <typename Self, typename Fn>
  static void visit_impl(Self& self, const std::string& prefix, Fn& fn) {
    for (std::size_t i = 0; i < self.body.size(); ++i)
      self.body[i].visit(prefix + ".body." + std::to_string(i), fn);
    self.up.visit(prefix + ".up", fn);
  }
  template <typename Fn>
  void visit(const std::string& prefix, Fn&& fn) { visit_impl(*this, prefix, fn); }
  template <typename Fn>
  void visit(const std::string& prefix, Fn&& fn) const { visit_impl(*this, prefix, fn); }
};

// The body and the upsampler draw from independent streams of `seed`, so
// swapping the upsampler leaves the body initialisation unchanged.
template <typename T>
BackboneParams<T> init_backbone_params(const BackboneConfig& cfg, std::uint64_t seed);

template <typename T>
struct BackboneTrace {
  UpsamplerTrace<T> up;
  Tensor<T> upsampled;
  // Input of every body conv, in order. Entries 1 and 2 + 2b are ReLU
  // outputs (head activation, conv1 activation of block b).
  std::vector<Tensor<T>> conv_inputs;
  Tensor<T> output;  // unclamped
};

template <typename T>
Tensor<T> backbone_forward(const Tensor<T>& lrms, const Tensor<T>& pan,
                           const BackboneParams<T>& params, const BackboneConfig& cfg);

template <typename T>
BackboneTrace<T> backbone_forward_traced(const Tensor<T>& lrms, const Tensor<T>& pan,
                                         const BackboneParams<T>& params,
                                         const BackboneConfig& cfg);

// Gradients of sum(upstream * output) with respect to every parameter.
template <typename T>
BackboneParams<T> backbone_backward(const BackboneTrace<T>& trace,
                                    const BackboneParams<T>& params, const BackboneConfig& cfg,
                                    const Tensor<T>& upstream);

// Clamped to [0,1].
template <typename T>
MSImage backbone_apply(const MSImage& lrms, const PanImage& pan,
                       const BackboneParams<T>& params, const BackboneConfig& cfg);

}  // namespace pgcu
