#pragma once

// One ego's perception at one tick: local frontends, the two-stage exchange,
// feature fusion, object-level correction, and final fusion with evaluation.

#include <cstdint>
#include <optional>
#include <vector>

#include <json.hpp>

#include "coop/citproto.hpp"
#include "coop/frontend.hpp"
#include "coop/fusedet.hpp"
#include "coop/lcfusion.hpp"
#include "coop/paccorrect.hpp"
#include "coop/world.hpp"

namespace coop {

struct PipelineConfig {
  GridShape shape;
  HeadMode frontend_mode = HeadMode::kOracle;
  HeadMode lc_mode = HeadMode::kOracle;  // oracle: feature-branch maps come from the routed oracle maps
  PacMode pac_mode = PacMode::kOracle;
  AttentionMode attention = AttentionMode::kCosine;

  bool cit = true;  // off: every cell is requested from every collaborator
  bool lc = true;
  bool align = true;
  bool pac = true;
  bool final_fusion = true;

  Strategy strategy = Strategy::kTop1;
  int topk = 2;
  double tau = 0.05;
  double eps = 1e-4;
  double score_threshold = 0.1;
  double nms_threshold = 0.5;

  LcConfig lc_config;
  PacConfig pac_config;
  std::uint64_t weight_seed = 7;
};

/// All seeded weights of one pipeline instance.
struct Models {
  FrontendWeights frontend;
  LcWeights lc;
  PacWeights pac;
  RecalibWeights recalib;

  static Models build(const PipelineConfig& cfg);
};

struct FlopCount {
  long long cit = 0, lc = 0, pac = 0;
  long long total() const { return cit + lc + pac; }
};

/// Analytic multiply-accumulate count of the fusion core at the ego.
FlopCount count_flops(const PipelineConfig& cfg, int n_agents);
FlopCount count_flops(const PipelineConfig& cfg, const Models& models, int n_agents);

struct TickOptions {
  int tick = 0;
  int ego_id = 0;
  int n_agents = -1;  // agents with id < n_agents take part; < 0 means all
  NoiseSpec noise;
  int lag = 0;        // collaborators observe and report at tick - lag
};

struct TickResult {
  std::vector<OrientedBox> detections;  // after NMS, ego frame
  std::vector<OrientedBox> ground_truth;
  EvalReport report;
  CommLedger ledger;
  std::optional<double> align_loss;
  nlohmann::json trace = nlohmann::json::array();

  AgentLocal ego;
  std::vector<AgentLocal> collaborators;
  std::vector<Pose2> relative_declared, relative_true;  // collaborator frame in the ego frame
  std::vector<RequestMask> masks;
  Grid f_coll, s_coll;
  std::optional<LcOutput> lc;
  std::optional<Grid> teacher;
  DetMaps lc_maps;
  std::optional<DetMaps> pac_maps;
  std::vector<CorrectionResult> corrections;
};

/// Ground truth boxes in the ego frame: objects whose centre lies on the grid.
std::vector<OrientedBox> ground_truth_boxes(const Scenario& scenario, int ego_id, int tick, const GridShape& shape);

/// Declared pose of an agent at a tick; the ego is never perturbed.
Pose2 declared_pose(const Scenario& scenario, int agent_id, int tick, const NoiseSpec& noise, int ego_id = 0);

TickResult run_tick(const Scenario& scenario, const TickOptions& opt, const PipelineConfig& cfg, const Models& models);

}  // namespace coop
