#include "pgcu/backbone.hpp"

#include "pgcu/ops.hpp"

namespace pgcu {

void BackboneConfig::validate() const {
  require(width >= 1, Errc::kConfig, "backbone.width must be >= 1");
  Upsampler check(upsampler);
  (void)check;
}

template <typename T>
BackboneParams<T> init_backbone_params(const BackboneConfig& cfg, std::uint64_t seed) {
  cfg.validate();
  BackboneParams<T> p;
  const std::size_t c = cfg.upsampler.channels, w = cfg.width;
  if (cfg.with_body) {
    Rng rng(derive_seed(seed, 1));
    p.body.push_back(make_conv<T>(c + 1, w, 3, rng));
    for (std::size_t b = 0; b < cfg.num_res_blocks; ++b) {
      p.body.push_back(make_conv<T>(w, w, 3, rng));
      p.body.push_back(make_conv<T>(w, w, 3, rng));
    }
    p.body.push_back(make_conv<T>(w, c, 3, rng));
  }
  p.up = Upsampler(cfg.upsampler).init_params<T>(derive_seed(seed, 2));
  return p;
}

template <typename T>
BackboneTrace<T> backbone_forward_traced(const Tensor<T>& lrms, const Tensor<T>& pan,
                                         const BackboneParams<T>& params,
                                         const BackboneConfig& cfg) {
  require(pan.rank() == 2, Errc::kShape, "backbone expects PAN [H][W]");
  const Upsampler up(cfg.upsampler);
  BackboneTrace<T> tr;
  tr.upsampled = up.forward(lrms, pan, params.up, &tr.up);
  require(tr.upsampled.dim(1) == pan.dim(0) && tr.upsampled.dim(2) == pan.dim(1),
          Errc::kShape,
          "upsampled LRMS " + shape_string(tr.upsampled.shape()) + " does not match PAN " +
              shape_string(pan.shape()));
  if (!cfg.with_body) {
    tr.output = tr.upsampled;
    return tr;
  }
  const auto& body = params.body;
  const std::size_t blocks = (body.size() - 2) / 2;
  auto conv = [&](std::size_t i, const Tensor<T>& x) {
    tr.conv_inputs.push_back(x);
    return ops::conv2d(x, body[i].weight, body[i].bias, 1, 1);
  };

  Tensor<T> h = ops::relu(
      conv(0, ops::concat_channels(tr.upsampled, pan.reshaped({1, pan.dim(0), pan.dim(1)}))));
  for (std::size_t b = 0; b < blocks; ++b) {
    Tensor<T> a = ops::relu(conv(1 + 2 * b, h));
    accumulate(h, conv(2 + 2 * b, a));
  }
  tr.output = conv(body.size() - 1, h);
  accumulate(tr.output, tr.upsampled);
  return tr;
}

template <typename T>
Tensor<T> backbone_forward(const Tensor<T>& lrms, const Tensor<T>& pan,
                           const BackboneParams<T>& params, const BackboneConfig& cfg) {
  return backbone_forward_traced(lrms, pan, params, cfg).output;
}

template <typename T>
BackboneParams<T> backbone_backward(const BackboneTrace<T>& tr, const BackboneParams<T>& params,
                                    const BackboneConfig& cfg, const Tensor<T>& upstream) {
  require(upstream.shape() == tr.output.shape(), Errc::kShape,
          "backbone_backward: upstream gradient shape mismatch");
  BackboneParams<T> grads = zeros_like_params(params);
  Tensor<T> d_up = upstream;

  if (cfg.with_body) {
    const auto& body = params.body;
    const std::size_t blocks = (body.size() - 2) / 2;
    auto conv_back = [&](std::size_t i, const Tensor<T>& dy) {
      auto g = ops::conv2d_backward(tr.conv_inputs[i], body[i].weight, dy, 1, 1);
      accumulate(grads.body[i].weight, g.dw);
      accumulate(grads.body[i].bias, g.db);
      return std::move(g.dx);
    };
    Tensor<T> dh = conv_back(body.size() - 1, upstream);
    for (std::size_t b = blocks; b-- > 0;) {
      Tensor<T> da = conv_back(2 + 2 * b, dh);
      da = ops::relu_backward(tr.conv_inputs[2 + 2 * b], std::move(da));
      accumulate(dh, conv_back(1 + 2 * b, da));
    }
    dh = ops::relu_backward(tr.conv_inputs[1], std::move(dh));
    Tensor<T> dx = conv_back(0, dh);
    accumulate(d_up, ops::split_channels(dx, cfg.upsampler.channels).first);
  }

  if (!cfg.freeze_upsampler)
    Upsampler(cfg.upsampler).backward(tr.up, params.up, d_up, grads.up);
  return grads;
}

template <typename T>
MSImage backbone_apply(const MSImage& lrms, const PanImage& pan, const BackboneParams<T>& params,
                       const BackboneConfig& cfg) {
  return MSImage::from(
      backbone_forward<T>(lrms.tensor().cast<T>(), pan.tensor().cast<T>(), params, cfg),
      /*clamp=*/true);
}

#define PGCU_INSTANTIATE_BACKBONE(T)                                                          \
  template BackboneParams<T> init_backbone_params<T>(const BackboneConfig&, std::uint64_t);   \
  template BackboneTrace<T> backbone_forward_traced(const Tensor<T>&, const Tensor<T>&,       \
                                                    const BackboneParams<T>&,                 \
                                                    const BackboneConfig&);                   \
  template Tensor<T> backbone_forward(const Tensor<T>&, const Tensor<T>&,                     \
                                      const BackboneParams<T>&, const BackboneConfig&);       \
  template BackboneParams<T> backbone_backward(const BackboneTrace<T>&,                       \
                                               const BackboneParams<T>&,                      \
                                               const BackboneConfig&, const Tensor<T>&);      \
  template MSImage backbone_apply(const MSImage&, const PanImage&, const BackboneParams<T>&, \
                                  const BackboneConfig&);

PGCU_INSTANTIATE_BACKBONE(float)
PGCU_INSTANTIATE_BACKBONE(double)
#undef PGCU_INSTANTIATE_BACKBONE

}  // namespace pgcu
