#include "pgcu/config_json.hpp"

#include "pgcu/json_reader.hpp"

namespace pgcu {

nlohmann::json pgcu_config_to_json(const PgcuConfig& cfg) {
  return {{"stride", cfg.stride},
          {"pan_ds_blocks", cfg.pan_ds_blocks},
          {"ms_ds_blocks", cfg.ms_ds_blocks},
          {"feat_dim", cfg.feat_dim},
          {"hidden_channels", cfg.hidden_channels},
          {"use_pan", cfg.use_pan},
          {"use_channel_projection", cfg.use_channel_projection}};
}

PgcuConfig pgcu_config_from_json(const nlohmann::json& j, const std::string& path) {
  PgcuConfig cfg;
  JsonReader r(j, path);
  r.optional("stride", cfg.stride);
  r.optional("pan_ds_blocks", cfg.pan_ds_blocks);
  r.optional("ms_ds_blocks", cfg.ms_ds_blocks);
  r.optional("feat_dim", cfg.feat_dim);
  r.optional("hidden_channels", cfg.hidden_channels);
  r.optional("use_pan", cfg.use_pan);
  r.optional("use_channel_projection", cfg.use_channel_projection);
  r.finish();
  return cfg;
}

nlohmann::json backbone_config_to_json(const BackboneConfig& cfg) {
  return {{"num_res_blocks", cfg.num_res_blocks},
          {"width", cfg.width},
          {"with_body", cfg.with_body},
          {"freeze_upsampler", cfg.freeze_upsampler},
          {"upsampler", std::string(upsampler_name(cfg.upsampler.kind))},
          {"espcnn_hidden", cfg.upsampler.espcnn_hidden},
          {"pgcu", pgcu_config_to_json(cfg.upsampler.pgcu)}};
}

BackboneConfig backbone_config_from_json(const nlohmann::json& j, std::size_t channels,
                                         std::size_t scale, const std::string& path) {
  BackboneConfig cfg;
  JsonReader r(j, path);
  r.optional("num_res_blocks", cfg.num_res_blocks);
  r.optional("width", cfg.width);
  r.optional("with_body", cfg.with_body);
  r.optional("freeze_upsampler", cfg.freeze_upsampler);
  std::string kind(upsampler_name(cfg.upsampler.kind));
  r.optional("upsampler", kind);
  const auto parsed = parse_upsampler(kind);
  require(parsed.has_value(), Errc::kConfig,
          "unknown upsampler '" + kind + "' in " + r.field("upsampler"));
  cfg.upsampler.kind = *parsed;
  r.optional("espcnn_hidden", cfg.upsampler.espcnn_hidden);
  if (r.has("pgcu")) {
    r.consume("pgcu");
    cfg.upsampler.pgcu = pgcu_config_from_json(j.at("pgcu"), r.field("pgcu"));
  }
  r.finish();
  cfg.upsampler.channels = channels;
  cfg.upsampler.scale = scale;
  cfg.upsampler.pgcu.channels = channels;
  cfg.upsampler.pgcu.scale = scale;
  cfg.validate();
  return cfg;
}

}  // namespace pgcu
