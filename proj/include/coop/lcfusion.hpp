#pragma once

// Lightweight feature fusion: confidence masking, pooled self-attention on the
// collaborative branch, per-branch convolutions, a selective scan driven by
// the fused and ego features, a spatial gate, and the dense teacher used for
// the alignment loss.

#include <cstdint>
#include <span>
#include <utility>

#include "coop/frontend.hpp"
#include "coop/gridmath.hpp"

namespace coop {

struct LcConfig {
  Index pool = 4;           // attention token grid = H/pool × W/pool
  Index state_dim = 16;
  Index mlp_expansion = 2;
  bool zero_bias = false;   // every bias term starts at zero
};

struct LcWeights {
  Index pool = 4;
  ConvSpec<float> attn_q, attn_k, attn_v, attn_o;  // 1×1, C → C, on pooled tokens
  ConvSpec<float> branch_coll, branch_ego;          // 3×3, C → C
  ConvSpec<float> dt_head;                          // 1×1, C → 1, broadcast over channels
  SsmParams<float> ssm;
  ConvSpec<float> gate_conv;                        // 1×1, C → 1
  ConvSpec<float> gate_dw;                          // 3×3 depthwise, 1 channel
  ConvSpec<float> mlp_in, mlp_out;                  // 1×1, C → eC → C
  ConvSpec<float> out_conv;                         // 3×3, C → C

  static LcWeights seeded(Index channels, std::uint64_t seed, const LcConfig& cfg = {});
  bool all_finite() const;
  /// Multiply-accumulates of one forward pass on an H×W grid.
  long long macs(Index height, Index width) const;
};

struct LcOutput {
  Grid fused_feature;  // F_out
  Grid gate;           // 1×H×W, in (0, 1)
  DetMaps detmaps;
};

/// (F_coll ⊙ S_coll, F_i ⊙ S_i) with the 1-channel confidences broadcast.
std::pair<Grid, Grid> confidence_mask(const Grid& f_coll, const Grid& s_coll, const Grid& f_i, const Grid& s_i);

/// Residual single-head attention over avg-pooled tokens, upsampled back.
Grid harmonize(const Grid& f, const LcWeights& weights);

/// Full forward pass. s-maps are σ-activated confidences; `det_head` is the
/// shared 1×1 detection head applied to F_out.
LcOutput lc_forward(const Grid& f_coll, const Grid& s_coll, const Grid& f_i, const Grid& s_i, const LcWeights& weights,
                    const ConvSpec<float>& det_head);

/// Dense collaborative inputs for the teacher: every collaborator contributes
/// at every cell, blended with the given per-cell weights.
std::pair<Grid, Grid> dense_collab(std::span<const Grid> features, std::span<const Grid> s_maps,
                                   std::span<const Grid> blend_weights);

/// Teacher F_out from dense inputs through the same weights. With no
/// collaborators the collaborative branch is zero.
Grid teacher_forward(std::span<const Grid> dense_features, std::span<const Grid> s_maps,
                     std::span<const Grid> blend_weights, const Grid& f_i, const Grid& s_i, const LcWeights& weights);

/// Mean squared error over all elements.
double align_loss(const Grid& f_out, const Grid& f_teacher);

}  // namespace coop
