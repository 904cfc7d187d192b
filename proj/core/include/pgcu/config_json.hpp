#pragma once

#include <string>

#include <nlohmann/json.hpp>

#include "pgcu/backbone.hpp"
#include "pgcu/pgcu.hpp"

// JSON forms of the model configurations. Readers are strict: unknown keys
// and wrongly typed values throw Errc::kConfig naming the field. Missing
// keys keep their defaults.
namespace pgcu {

nlohmann::json pgcu_config_to_json(const PgcuConfig& cfg);
PgcuConfig pgcu_config_from_json(const nlohmann::json& j, const std::string& path = "pgcu");

// channels/scale are not part of the upsampler JSON; they come from the data.
nlohmann::json backbone_config_to_json(const BackboneConfig& cfg);
BackboneConfig backbone_config_from_json(const nlohmann::json& j, std::size_t channels,
                                         std::size_t scale, const std::string& path = "model");

}  // namespace pgcu
