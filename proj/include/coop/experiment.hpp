#pragma once

// Sweep execution and result emission.

#include <cstdint>
#include <string>
#include <vector>

#include <json.hpp>

#include "coop/config.hpp"

namespace coop {

struct SweepPoint {
  int index = 0;
  NoiseSpec noise;
  int lag = 0;
  int n_agents = 0;
};

/// Sweep points in (noise, latency, agents) lexicographic order.
std::vector<SweepPoint> sweep_points(const RunConfig& cfg);

/// Seed of scene `scene` under master seed `seed`.
std::uint64_t scene_seed(std::uint64_t seed, int scene);

struct SceneRow {
  SweepPoint point;
  std::uint64_t seed = 0;
  int scene = 0;
  std::uint64_t scene_seed = 0;
  std::string status = "ok";
  int evaluated_ticks = 0;
  double num_gt = 0, num_pred = 0;  // per evaluated tick
  double ap50 = 0, ap70 = 0, recall50 = 0;
  std::uint64_t stage1_bytes = 0, mask_bytes = 0, stage2_bytes = 0, detection_bytes = 0;
  std::uint64_t comm_bytes = 0;  // received by the ego
  double comm_mb_per_frame = 0, comm_mb_per_scene = 0;
  double align_loss = 0;  // NaN when not computed
  long long flops = 0;

  bool ok() const { return status == "ok"; }
};

struct Stat {
  double mean = 0, std = 0;
  int count = 0;
};

struct PointSummary {
  SweepPoint point;
  std::string status = "ok";
  int scenes = 0;
  Stat ap50, ap70, recall50, comm_bytes, stage2_bytes, comm_mb_per_frame, align_loss;
};

struct RunRecord {
  RunConfig config;
  std::string config_hash;
  std::vector<SceneRow> rows;  // (sweep, seed, scene) order
  std::vector<PointSummary> points;
  double wall_clock_seconds = 0;  // reported on the console only, never written to result files
};

/// Per-point aggregates, recomputed from the rows.
std::vector<PointSummary> summarize(const std::vector<SweepPoint>& points, const std::vector<SceneRow>& rows);

RunRecord run_experiment(const RunConfig& cfg, int threads = 1);

/// Evaluates one scene at one sweep point. Throws on failure.
SceneRow run_scene(const RunConfig& cfg, const Models& models, const Scenario& scenario, const SweepPoint& point);

std::string to_csv(const RunRecord& record);
nlohmann::json to_json(const RunRecord& record);
std::string format_json(const nlohmann::json& doc);

enum class OutputFormat { kCsv, kJson, kBoth };

/// Writes <dir>/<name>.csv and/or <dir>/<name>.json. Throws IoError naming the path.
std::vector<std::string> emit_results(const RunRecord& record, const std::string& dir, OutputFormat format = OutputFormat::kBoth);

void write_text(const std::string& path, const std::string& text);

}  // namespace coop
