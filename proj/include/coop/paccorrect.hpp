#pragma once

// Object-level pose correction of collaborator detection maps: descriptor
// matching against the ego, relevance scoring, offset-field prediction and
// deformable resampling, and fusion of the scored and resampled maps.

#include <cstdint>
#include <span>
#include <vector>

#include "coop/frontend.hpp"
#include "coop/gridmath.hpp"

namespace coop {

enum class PacMode { kLearned, kOracle };
enum class AttentionMode { kLearned, kCosine };

std::string to_string(PacMode m);
PacMode pac_mode_from_string(const std::string& s);
std::string to_string(AttentionMode m);
AttentionMode attention_mode_from_string(const std::string& s);

/// Descriptor layout: 6 decoded box parameters plus the score, each embedded
/// into `pe_dims` sinusoidal entries.
inline constexpr Index kDescriptorParams = 7;

struct PacConfig {
  Index pe_dims = 8;
  Index attn_hidden = 4;
  Index offset_width = 2;        // hidden channels of the 4-layer offset stack
  double select_threshold = 0.3; // σ(cls) above which a cell is kept for matching
  double cosine_gain = 4.0;      // A = σ(gain · cosine) in the cosine configuration
  AttentionMode attention = AttentionMode::kLearned;
  bool identity_correct = false; // 1×1 convs after resampling are identities
};

struct PacWeights {
  PacConfig config;
  // f_attn: hidden = relu(W_e d_i + W_c d_j + b); A = σ(v · hidden + b_out).
  Eigen::MatrixXf attn_ego, attn_collab;  // hidden × descriptor dims
  Eigen::VectorXf attn_bias, attn_out;
  float attn_out_bias = 0.0f;
  std::vector<ConvSpec<float>> offset_stack;  // 14 → w → w → w → 2, 3×3
  ConvSpec<float> correct_cls, correct_reg;   // 1×1 after resampling
  ConvSpec<float> fuse;                       // 1×1, 14 → 7

  static PacWeights seeded(std::uint64_t seed, const PacConfig& cfg = {});
  bool all_finite() const;
  Index descriptor_dims() const { return kDescriptorParams * config.pe_dims; }

  /// Multiply-accumulates per grid cell. The ego half of f_attn is computed
  /// once per ego; the rest is paid once per collaborator.
  long long ego_macs_per_cell() const;
  long long pair_macs_per_cell() const;
};

struct CorrectionResult {
  DetMaps corrected;  // fusion of scored and resampled maps
  DetMaps scored;
  DetMaps resampled;
  Grid attention;     // 1×H×W
  Grid offsets;       // 2×H×W, cells
  PacMode mode = PacMode::kLearned;
};

/// Per-cell descriptors (descriptor_dims × H·W). Cells outside the dilated
/// high-confidence region are zero.
Eigen::MatrixXf descriptors(const DetMaps& maps, const PacWeights& weights);

Grid cross_agent_attention(const DetMaps& ego, const DetMaps& collab, const PacWeights& weights);

/// cls scaled in probability space (σ(C)·A, re-expressed as a clamped logit),
/// reg scaled directly.
DetMaps score_maps(const DetMaps& collab, const Grid& attention, double eps = 1e-4);

Grid predict_offsets(const DetMaps& ego, const DetMaps& collab, const PacWeights& weights);

/// Exact displacement field, in cells, that moves maps placed with a wrong
/// relative pose onto the true placement. `error` = T_declared ∘ T_true⁻¹ with
/// both being relative poses of the collaborator in the ego frame.
Grid oracle_offsets(const Pose2& error, const GridShape& shape);

DetMaps correct(const DetMaps& collab, const Grid& offsets, const PacWeights& weights, double eps = 1e-4);

/// Oracle rule: per-cell max of cls with reg from the winning branch (ties
/// go to `corrected`). Learned rule: 1×1 conv over both stacked.
DetMaps pac_fuse(const DetMaps& scored, const DetMaps& corrected, const PacWeights& weights, PacMode mode);

/// Per-cell max-cls merge of several maps, reg from the winner (first wins ties).
DetMaps max_merge(std::span<const DetMaps> maps);

/// The whole branch for one (ego, collaborator) pair. `collab` must already
/// be warped into the ego frame with the declared pose. `oracle_error` is
/// read only in oracle mode.
CorrectionResult pac_correct(const DetMaps& ego, const DetMaps& collab, const PacWeights& weights, PacMode mode,
                             const Pose2& oracle_error, double eps = 1e-4);

}  // namespace coop
