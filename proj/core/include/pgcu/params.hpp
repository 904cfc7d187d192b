#pragma once

#include <cmath>
#include <cstddef>
#include <filesystem>
#include <string>
#include <string_view>
#include <type_traits>
#include <vector>

#include "pgcu/random.hpp"
#include "pgcu/tensor.hpp"

namespace pgcu {

template <typename T>
struct ConvParams {
  using scalar_type = T;
  Tensor<T> weight;  // conv: [Cout][Cin][k][k]; transposed conv: [Cin][Cout][k][k]
  Tensor<T> bias;    // [Cout]

  template <typename Fn>
  void visit(const std::string& prefix, Fn&& fn) {
    fn(prefix + ".weight", weight);
    fn(prefix + ".bias", bias);
  }
  template <typename Fn>
  void visit(const std::string& prefix, Fn&& fn) const {
    fn(prefix + ".weight", weight);
    fn(prefix + ".bias", bias);
  }
};

// Weights ~ U[-b, b], b = sqrt(1 / fan_in); biases zero.
template <typename T>
Tensor<T> uniform_fan_in(Shape shape, std::size_t fan_in, Rng& rng) {
  Tensor<T> t(std::move(shape));
  const double bound = std::sqrt(1.0 / static_cast<double>(fan_in));
  for (auto& v : t.data()) v = static_cast<T>(rng.uniform(-bound, bound));
  return t;
}

template <typename T>
ConvParams<T> make_conv(std::size_t cin, std::size_t cout, std::size_t k, Rng& rng) {
  return {uniform_fan_in<T>({cout, cin, k, k}, cin * k * k, rng), Tensor<T>({cout})};
}

template <typename T>
ConvParams<T> make_conv_transpose(std::size_t cin, std::size_t cout, std::size_t k,
                                  Rng& rng) {
  return {uniform_fan_in<T>({cin, cout, k, k}, cin * k * k, rng), Tensor<T>({cout})};
}

// Generic helpers over any parameter struct exposing
// visit(prefix, fn(name, tensor)).

template <typename P>
std::size_t parameter_count(const P& params) {
  std::size_t n = 0;
  params.visit("", [&](const std::string&, const auto& t) { n += t.size(); });
  return n;
}

template <typename P>
P zeros_like_params(const P& params) {
  P out = params;
  out.visit("", [](const std::string&, auto& t) { t.fill(0); });
  return out;
}

template <typename P>
bool all_finite(const P& params) {
  bool ok = true;
  params.visit("", [&](const std::string&, const auto& t) {
    for (auto v : t.data()) ok = ok && std::isfinite(v);
  });
  return ok;
}

// Names with the leading '.' of the empty prefix stripped.
inline std::string clean_name(std::string_view name) {
  return std::string(name.starts_with('.') ? name.substr(1) : name);
}

// Flat (name, tensor*) list in visit order; constness follows P.
template <typename P>
auto named_tensors(P& params) {
  using T = typename std::remove_const_t<P>::scalar_type;
  using Ptr = std::conditional_t<std::is_const_v<P>, const Tensor<T>*, Tensor<T>*>;
  std::vector<std::pair<std::string, Ptr>> out;
  params.visit("", [&](const std::string& name, auto& t) {
    out.emplace_back(clean_name(name), &t);
  });
  return out;
}

}  // namespace pgcu
