#include "pgcu/baselines.hpp"

#include <array>
#include <bit>

#include "pgcu/ops.hpp"
#include "pgcu/resample.hpp"

namespace pgcu {
namespace {

constexpr std::size_t kTconvKernel = 4;
constexpr std::size_t kTconvStride = 2;
constexpr std::size_t kTconvPad = 1;

constexpr std::array<std::pair<UpsamplerKind, std::string_view>, 6> kNames{{
    {UpsamplerKind::kNearest, "nearest"},
    {UpsamplerKind::kBilinear, "bilinear"},
    {UpsamplerKind::kBicubic, "bicubic"},
    {UpsamplerKind::kTconv, "tconv"},
    {UpsamplerKind::kEspcnn, "espcnn"},
    {UpsamplerKind::kPgcu, "pgcu"},
}};

template <typename T>
Tensor<T> interpolate(const Tensor<T>& x, std::size_t r, InterpKernel kernel) {
  require(x.rank() == 3 && r >= 1, Errc::kShape, "interpolation expects [C][h][w] and r >= 1");
  return resample_separable(x, upsample_taps(x.dim(1), r, kernel),
                            upsample_taps(x.dim(2), r, kernel));
}

template <typename T>
Tensor<T> tconv_forward(const Tensor<T>& x, const TconvParams<T>& p, TconvTrace<T>* trace) {
  Tensor<T> h = x;
  for (std::size_t i = 0; i < p.layers.size(); ++i) {
    if (trace) trace->inputs.push_back(h);
    h = ops::conv_transpose2d(h, p.layers[i].weight, p.layers[i].bias, kTconvStride, kTconvPad);
    if (i + 1 < p.layers.size()) h = ops::relu(std::move(h));
  }
  return h;
}

template <typename T>
void tconv_backward(const TconvTrace<T>& tr, const TconvParams<T>& p, Tensor<T> dy,
                    TconvParams<T>& grads) {
  for (std::size_t i = p.layers.size(); i-- > 0;) {
    auto g = ops::conv_transpose2d_backward(tr.inputs[i], p.layers[i].weight, dy, kTconvStride,
                                            kTconvPad, i > 0);
    accumulate(grads.layers[i].weight, g.dw);
    accumulate(grads.layers[i].bias, g.db);
    // inputs[i] for i > 0 is a ReLU output.
    if (i > 0) dy = ops::relu_backward(tr.inputs[i], std::move(g.dx));
  }
}

template <typename T>
Tensor<T> espcnn_forward(const Tensor<T>& x, const EspcnnParams<T>& p, std::size_t r,
                         EspcnnTrace<T>* trace) {
  Tensor<T> a1 = ops::relu(ops::conv2d(x, p.conv1.weight, p.conv1.bias, 1, 1));
  Tensor<T> a2 = ops::relu(ops::conv2d(a1, p.conv2.weight, p.conv2.bias, 1, 1));
  Tensor<T> out = ops::pixel_shuffle(ops::conv2d(a2, p.conv3.weight, p.conv3.bias, 1, 1), r);
  if (trace) *trace = {x, std::move(a1), std::move(a2)};
  return out;
}

template <typename T>
void espcnn_backward(const EspcnnTrace<T>& tr, const EspcnnParams<T>& p, std::size_t r,
                     const Tensor<T>& dy, EspcnnParams<T>& grads) {
  auto g3 = ops::conv2d_backward(tr.a2, p.conv3.weight, ops::pixel_unshuffle(dy, r), 1, 1);
  accumulate(grads.conv3.weight, g3.dw);
  accumulate(grads.conv3.bias, g3.db);
  auto g2 = ops::conv2d_backward(tr.a1, p.conv2.weight, ops::relu_backward(tr.a2, g3.dx), 1, 1);
  accumulate(grads.conv2.weight, g2.dw);
  accumulate(grads.conv2.bias, g2.db);
  auto g1 = ops::conv2d_backward(tr.x, p.conv1.weight, ops::relu_backward(tr.a1, g2.dx), 1, 1,
                                 /*need_dx=*/false);
  accumulate(grads.conv1.weight, g1.dw);
  accumulate(grads.conv1.bias, g1.db);
}

}  // namespace

template <typename T>
Tensor<T> nearest_upsample(const Tensor<T>& x, std::size_t r) {
  return ops::nearest_upsample(x, r);
}

template <typename T>
Tensor<T> bilinear_upsample(const Tensor<T>& x, std::size_t r) {
  return interpolate(x, r, InterpKernel::kLinear);
}

template <typename T>
Tensor<T> bicubic_upsample(const Tensor<T>& x, std::size_t r) {
  return interpolate(x, r, InterpKernel::kCubic);
}

template <typename T>
Tensor<T> tconv_upsample(const Tensor<T>& x, const TconvParams<T>& params) {
  return tconv_forward<T>(x, params, nullptr);
}

template <typename T>
Tensor<T> espcnn_upsample(const Tensor<T>& x, const EspcnnParams<T>& params, std::size_t r) {
  return espcnn_forward<T>(x, params, r, nullptr);
}

std::string_view upsampler_name(UpsamplerKind kind) {
  for (const auto& [k, name] : kNames)
    if (k == kind) return name;
  return "unknown";
}

std::optional<UpsamplerKind> parse_upsampler(std::string_view name) {
  for (const auto& [k, n] : kNames)
    if (n == name) return k;
  return std::nullopt;
}

const std::vector<std::string_view>& upsampler_names() {
  static const std::vector<std::string_view> names = [] {
    std::vector<std::string_view> v;
    for (const auto& kn : kNames) v.push_back(kn.second);
    return v;
  }();
  return names;
}

Upsampler::Upsampler(UpsamplerConfig cfg) : cfg_(std::move(cfg)) {
  require(cfg_.channels >= 1 && cfg_.scale >= 1, Errc::kConfig,
          "upsampler channels and scale must be >= 1");
  cfg_.pgcu.channels = cfg_.channels;
  cfg_.pgcu.scale = cfg_.scale;
  if (cfg_.kind == UpsamplerKind::kTconv) {
    require(std::has_single_bit(cfg_.scale) && cfg_.scale >= 2, Errc::kConfig,
            "tconv upsampler needs a power-of-two scale >= 2");
  }
  if (cfg_.kind == UpsamplerKind::kPgcu) cfg_.pgcu.validate();
}

bool Upsampler::trainable() const {
  return cfg_.kind == UpsamplerKind::kTconv || cfg_.kind == UpsamplerKind::kEspcnn ||
         cfg_.kind == UpsamplerKind::kPgcu;
}

template <typename T>
UpsamplerParams<T> Upsampler::init_params(std::uint64_t seed) const {
  UpsamplerParams<T> out;
  Rng rng(seed);
  const std::size_t c = cfg_.channels;
  switch (cfg_.kind) {
    case UpsamplerKind::kTconv: {
      TconvParams<T> p;
      for (std::size_t s = cfg_.scale; s > 1; s /= 2)
        p.layers.push_back(make_conv_transpose<T>(c, c, kTconvKernel, rng));
      out.inner = std::move(p);
      break;
    }
    case UpsamplerKind::kEspcnn: {
      const std::size_t hid = cfg_.espcnn_hidden;
      EspcnnParams<T> p{make_conv<T>(c, hid, 3, rng), make_conv<T>(hid, hid, 3, rng),
                        make_conv<T>(hid, c * cfg_.scale * cfg_.scale, 3, rng)};
      out.inner = std::move(p);
      break;
    }
    case UpsamplerKind::kPgcu:
      out.inner = init_pgcu_params<T>(cfg_.pgcu, seed);
      break;
    default:
      break;
  }
  return out;
}

template <typename T>
Tensor<T> Upsampler::forward(const Tensor<T>& lrms, const Tensor<T>& pan,
                             const UpsamplerParams<T>& params, UpsamplerTrace<T>* trace) const {
  require(lrms.rank() == 3 && lrms.dim(0) == cfg_.channels, Errc::kShape,
          "upsampler expects LRMS [" + std::to_string(cfg_.channels) + "][h][w], got " +
              shape_string(lrms.shape()));
  switch (cfg_.kind) {
    case UpsamplerKind::kNearest:
      return nearest_upsample(lrms, cfg_.scale);
    case UpsamplerKind::kBilinear:
      return bilinear_upsample(lrms, cfg_.scale);
    case UpsamplerKind::kBicubic:
      return bicubic_upsample(lrms, cfg_.scale);
    case UpsamplerKind::kTconv: {
      const auto& p = std::get<TconvParams<T>>(params.inner);
      if (!trace) return tconv_forward<T>(lrms, p, nullptr);
      auto& tr = trace->inner.template emplace<TconvTrace<T>>();
      return tconv_forward(lrms, p, &tr);
    }
    case UpsamplerKind::kEspcnn: {
      const auto& p = std::get<EspcnnParams<T>>(params.inner);
      if (!trace) return espcnn_forward<T>(lrms, p, cfg_.scale, nullptr);
      auto& tr = trace->inner.template emplace<EspcnnTrace<T>>();
      return espcnn_forward(lrms, p, cfg_.scale, &tr);
    }
    case UpsamplerKind::kPgcu: {
      const auto& p = std::get<PgcuParams<T>>(params.inner);
      if (!trace) return pgcu_forward(lrms, pan, p, cfg_.pgcu);
      auto& tr = trace->inner.template emplace<PgcuTrace<T>>(
          pgcu_forward_traced(lrms, pan, p, cfg_.pgcu));
      return tr.output;
    }
  }
  fail(Errc::kConfig, "unknown upsampler kind");
}

template <typename T>
void Upsampler::backward(const UpsamplerTrace<T>& trace, const UpsamplerParams<T>& params,
                         const Tensor<T>& upstream, UpsamplerParams<T>& grads) const {
  switch (cfg_.kind) {
    case UpsamplerKind::kTconv:
      tconv_backward(std::get<TconvTrace<T>>(trace.inner), std::get<TconvParams<T>>(params.inner),
                     upstream, std::get<TconvParams<T>>(grads.inner));
      break;
    case UpsamplerKind::kEspcnn:
      espcnn_backward(std::get<EspcnnTrace<T>>(trace.inner),
                      std::get<EspcnnParams<T>>(params.inner), cfg_.scale, upstream,
                      std::get<EspcnnParams<T>>(grads.inner));
      break;
    case UpsamplerKind::kPgcu: {
      auto g = pgcu_backward(std::get<PgcuTrace<T>>(trace.inner),
                             std::get<PgcuParams<T>>(params.inner), cfg_.pgcu, upstream);
      auto dst = named_tensors(std::get<PgcuParams<T>>(grads.inner));
      auto src = named_tensors(std::as_const(g.params));
      for (std::size_t i = 0; i < dst.size(); ++i) accumulate(*dst[i].second, *src[i].second);
      break;
    }
    default:
      break;
  }
}

#define PGCU_INSTANTIATE_BASELINES(T)                                                         \
  template Tensor<T> nearest_upsample(const Tensor<T>&, std::size_t);                         \
  template Tensor<T> bilinear_upsample(const Tensor<T>&, std::size_t);                        \
  template Tensor<T> bicubic_upsample(const Tensor<T>&, std::size_t);                         \
  template Tensor<T> tconv_upsample(const Tensor<T>&, const TconvParams<T>&);                 \
  template Tensor<T> espcnn_upsample(const Tensor<T>&, const EspcnnParams<T>&, std::size_t);  \
  template UpsamplerParams<T> Upsampler::init_params<T>(std::uint64_t) const;                 \
  template Tensor<T> Upsampler::forward(const Tensor<T>&, const Tensor<T>&,                   \
                                        const UpsamplerParams<T>&, UpsamplerTrace<T>*) const; \
  template void Upsampler::backward(const UpsamplerTrace<T>&, const UpsamplerParams<T>&,      \
                                    const Tensor<T>&, UpsamplerParams<T>&) const;

PGCU_INSTANTIATE_BASELINES(float)
PGCU_INSTANTIATE_BASELINES(double)
#undef PGCU_INSTANTIATE_BASELINES

}  // namespace pgcu
