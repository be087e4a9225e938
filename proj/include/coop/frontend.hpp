#pragma once

#include <cstdint>

#include "coop/gridmath.hpp"
#include "coop/world.hpp"

namespace coop {

enum class HeadMode { kOracle, kNetwork };

/// Paired classification / regression maps. cls holds one logit channel;
/// reg holds (dx, dy, log w, log l, sin yaw, cos yaw) with offsets in cells
/// from the cell centre and yaw in the map's own frame.
struct DetMaps {
  static constexpr Index kNumCls = 1;
  static constexpr Index kNumReg = 6;

  Grid cls;
  Grid reg;

  /// Background maps: every cls logit = logit(eps), reg = 0.
  static DetMaps background(const GridShape& shape, double eps);

  /// cls and reg stacked into one (1 + 6)-channel grid.
  Grid stacked() const { return concat_channels(cls, reg); }
  static DetMaps unstack(const Grid& g);
};

struct FrontendConfig {
  GridShape shape;
  HeadMode mode = HeadMode::kOracle;
  double eps = 1e-4;
};

/// Seeded, immutable frontend weights. The detection head is shared with the
/// feature-fusion branch, which applies it to the fused feature.
struct FrontendWeights {
  ConvSpec<float> oracle_mix;  // 2 → C-2, 3×3
  ConvSpec<float> net_conv1;   // 2 → C, 3×3
  ConvSpec<float> net_conv2;   // C → C, 3×3
  ConvSpec<float> conf_head;   // C → 1, 1×1
  ConvSpec<float> det_head;    // C → 7, 1×1

  static FrontendWeights seeded(const GridShape& shape, std::uint64_t seed);
};

/// Per-agent local perception output.
struct AgentLocal {
  int agent_id = 0;
  Grid feature;
  Grid confidence_logits;
  DetMaps detmaps;
  Pose2 declared_pose;
  Pose2 true_pose;  // simulation truth; only the oracle PAC offset mode reads it
};

/// Visibility raster (channel 0) and normalised range (channel 1) in the
/// observing agent's frame.
Grid rasterize(const Observation& obs, const GridShape& shape);

Grid encode(const Observation& obs, const FrontendConfig& cfg, const FrontendWeights& weights);
Grid confidence_head(const Grid& feature, const FrontendConfig& cfg, const FrontendWeights& weights);
DetMaps detection_head(const Grid& feature, const Observation& obs, const FrontendConfig& cfg,
                       const FrontendWeights& weights);

/// Network-path head: seeded 1×1 conv from any C-channel feature to DetMaps.
DetMaps shared_detection_head(const Grid& feature, const FrontendWeights& weights);

AgentLocal run_frontend(const Observation& obs, const Pose2& declared_pose, const FrontendConfig& cfg,
                        const FrontendWeights& weights);

/// Warps logit maps through probability space so that cells outside the
/// source footprint read as logit(eps) rather than logit 0.
Grid warp_logits(const Grid& logits, const Pose2& relative_pose, double eps);

/// Projects detection maps into another frame: spatial warp plus rotation of
/// the (dx, dy) and (sin, cos) channel pairs by the relative yaw.
DetMaps warp_detmaps(const DetMaps& maps, const Pose2& relative_pose, double eps);

/// Rotates the vector-valued reg channels in place.
void rotate_reg_channels(Grid& reg, double yaw);

}  // namespace coop
