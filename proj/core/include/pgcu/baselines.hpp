#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <string>
#include <string_view>
#include <variant>
#include <vector>

#include "pgcu/params.hpp"
#include "pgcu/pgcu.hpp"
#include "pgcu/tensor.hpp"

namespace pgcu {

// Parameter-free interpolators. x is [C][h][w].
template <typename T>
Tensor<T> nearest_upsample(const Tensor<T>& x, std::size_t r);
template <typename T>
Tensor<T> bilinear_upsample(const Tensor<T>& x, std::size_t r);
template <typename T>
Tensor<T> bicubic_upsample(const Tensor<T>& x, std::size_t r);

// log2(r) stacked stride-2 transposed convs (kernel 4, pad 1), C -> C,
// ReLU between layers. r must be a power of two.
template <typename T>
struct TconvParams {
  using scalar_type = T;
  std::vector<ConvParams<T>> layers;

  template <typename Self, typename Fn>
  static void visit_impl(Self& self, const std::string& prefix, Fn& fn) {
    for (std::size_t i = 0; i < self.layers.size(); ++i)
      self.layers[i].visit(prefix + ".layer." + std::to_string(i), fn);
  }
  template <typename Fn>
  void visit(const std::string& prefix, Fn&& fn) { visit_impl(*this, prefix, fn); }
  template <typename Fn>
  void visit(const std::string& prefix, Fn&& fn) const { visit_impl(*this, prefix, fn); }
};

// Three 3x3 convs C -> hidden -> hidden -> C*r*r, then pixel shuffle.
template <typename T>
struct EspcnnParams {
  using scalar_type = T;
  ConvParams<T> conv1, conv2, conv3;

  template <typename Self, typename Fn>
  static void visit_impl(Self& self, const std::string& prefix, Fn& fn) {
    self.conv1.visit(prefix + ".conv1", fn);
    self.conv2.visit(prefix + ".conv2", fn);
    self.conv3.visit(prefix + ".conv3", fn);
  }
  template <typename Fn>
  void visit(const std::string& prefix, Fn&& fn) { visit_impl(*this, prefix, fn); }
  template <typename Fn>
  void visit(const std::string& prefix, Fn&& fn) const { visit_impl(*this, prefix, fn); }
};

template <typename T>
Tensor<T> tconv_upsample(const Tensor<T>& x, const TconvParams<T>& params);

template <typename T>
Tensor<T> espcnn_upsample(const Tensor<T>& x, const EspcnnParams<T>& params, std::size_t r);

enum class UpsamplerKind { kNearest, kBilinear, kBicubic, kTconv, kEspcnn, kPgcu };

std::string_view upsampler_name(UpsamplerKind kind);
std::optional<UpsamplerKind> parse_upsampler(std::string_view name);
const std::vector<std::string_view>& upsampler_names();

struct UpsamplerConfig {
  UpsamplerKind kind = UpsamplerKind::kBicubic;
  std::size_t channels = 4;
  std::size_t scale = 4;
  std::size_t espcnn_hidden = 32;
  PgcuConfig pgcu;  // channels/scale are kept in sync by Upsampler
};

template <typename T>
struct UpsamplerParams {
  using scalar_type = T;
  std::variant<std::monostate, TconvParams<T>, EspcnnParams<T>, PgcuParams<T>> inner;

  template <typename Self, typename Fn>
  static void visit_impl(Self& self, const std::string& prefix, Fn& fn) {
    std::visit(
        [&](auto& p) {
          if constexpr (!std::is_same_v<std::decay_t<decltype(p)>, std::monostate>)
            p.visit(prefix, fn);
        },
        self.inner);
  }
  template <typename Fn>
  void visit(const std::string& prefix, Fn&& fn) { visit_impl(*this, prefix, fn); }
  template <typename Fn>
  void visit(const std::string& prefix, Fn&& fn) const { visit_impl(*this, prefix, fn); }
};

template <typename T>
struct TconvTrace {
  std::vector<Tensor<T>> inputs;  // input to each layer (post-ReLU for layers > 0)
};

template <typename T>
struct EspcnnTrace {
  Tensor<T> x, a1, a2;
};

template <typename T>
struct UpsamplerTrace {
  std::variant<std::monostate, TconvTrace<T>, EspcnnTrace<T>, PgcuTrace<T>> inner;
};

// Common interface over every upsampling method: apply(L, P) returns
// [C][r*h][r*w]. Only the pgcu kind reads P.
class Upsampler {
 public:
  explicit Upsampler(UpsamplerConfig cfg);

  UpsamplerKind kind() const { return cfg_.kind; }
  std::string_view name() const { return upsampler_name(cfg_.kind); }
  std::size_t scale() const { return cfg_.scale; }
  const UpsamplerConfig& config() const { return cfg_; }
  bool uses_pan() const { return cfg_.kind == UpsamplerKind::kPgcu; }
  bool trainable() const;

  template <typename T>
  UpsamplerParams<T> init_params(std::uint64_t seed) const;

  // Unclamped output. trace may be null.
  template <typename T>
  Tensor<T> forward(const Tensor<T>& lrms, const Tensor<T>& pan,
                    const UpsamplerParams<T>& params, UpsamplerTrace<T>* trace = nullptr) const;

  // Accumulates parameter gradients into grads. No-op for fixed kinds.
  template <typename T>
  void backward(const UpsamplerTrace<T>& trace, const UpsamplerParams<T>& params,
                const Tensor<T>& upstream, UpsamplerParams<T>& grads) const;

 private:
  UpsamplerConfig cfg_;
};

}  // namespace pgcu
