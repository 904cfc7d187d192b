#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "pgcu/backbone.hpp"
#include "pgcu/data.hpp"
#include "pgcu/training.hpp"

namespace pgcu::cli {

enum ExitCode : int { kOk = 0, kConfigError = 2, kIoError = 3, kNumericError = 4 };

// Whole-run JSON document. Every section is optional; unknown keys anywhere
// are rejected.
struct RunConfig {
  SynthConfig data;
  nlohmann::json model = nlohmann::json::object();  // resolved against the corpus
  std::uint64_t init_seed = 0;
  TrainConfig train;
  std::vector<std::string> metrics;  // eval.metrics, defaults to all five
  std::size_t analysis_k = kDefaultAnalysisK;
  std::uint64_t analysis_seed = 0;

  static constexpr std::size_t kDefaultAnalysisK = 6;

  // Model for a corpus with the given channels and scale; checks the PGCU
  // shape contract against the corpus image sizes.
  BackboneConfig resolve_model(const SynthConfig& corpus) const;
};

RunConfig parse_run_config(const nlohmann::json& doc);
RunConfig load_run_config(const std::filesystem::path& path);

// Metrics restricted to `names`, in canonical order.
nlohmann::json report_json(const MetricsReport& r, const std::vector<std::string>& names);

int exit_code_for(const std::exception& e);

// Entry point shared by the executable and the tests. args excludes argv[0].
int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace pgcu::cli
