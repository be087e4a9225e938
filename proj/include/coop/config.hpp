#pragma once

// Run configuration: JSON schema, defaults, validation and hashing.

#include <cstdint>
#include <string>
#include <vector>

#include <json.hpp>

#include "coop/pipeline.hpp"
#include "coop/world.hpp"

namespace coop {

struct ScenarioParams {
  int n_agents = 5;
  int n_objects = 14;
  int ticks = 5;
  double area = 24.0;
  int eval_ticks = 1;  // the last `eval_ticks` ticks of each scene are evaluated
  ScenarioOptions options;
};

struct RunConfig {
  ScenarioParams scenario;
  PipelineConfig pipeline;
  std::vector<NoiseSpec> noise{{0.0, 0.0}};
  std::vector<int> latency{0};
  std::vector<int> agents;  // active-agent sweep; empty means scenario.n_agents
  std::vector<std::uint64_t> seeds{1};
  int scenes_per_seed = 1;
  std::string out_dir = "results";
  std::string name = "run";

  /// Agents generated per scene: enough for the largest sweep value, so
  /// smaller agent counts see the same world.
  int generated_agents() const;
};

nlohmann::json to_json(const RunConfig& cfg);

/// Parses and validates. Unknown keys, wrong types and out-of-range values
/// are all collected into one ConfigError.
RunConfig config_from_json(const nlohmann::json& doc);
RunConfig load_config(const std::string& path);

/// Problems with the document, empty when it is valid.
std::vector<std::string> validate_config(const nlohmann::json& doc);

/// FNV-1a over the canonical (sorted-key, compact) JSON text, as 16 hex digits.
std::string config_hash(const RunConfig& cfg);

}  // namespace coop
