#include "coop/lcfusion.hpp"

#include <cmath>
#include <limits>

#include "coop/citproto.hpp"
#include "coop/rng.hpp"

namespace coop {

namespace {

bool finite(const ConvSpec<float>& s) { return s.weights.allFinite() && s.bias.allFinite(); }

// Largest float strictly below 1 and smallest normal float: keeps the gate in
// the open interval even where the sigmoid saturates in single precision.
constexpr float kGateHi = 1.0f - std::numeric_limits<float>::epsilon() / 2;
constexpr float kGateLo = std::numeric_limits<float>::min();

}  // namespace

LcWeights LcWeights::seeded(Index channels, std::uint64_t seed, const LcConfig& cfg) {
  if (channels < 1) throw InvalidInput("LcWeights: channels must be >= 1");
  if (cfg.pool < 1 || cfg.mlp_expansion < 1) throw InvalidInput("LcWeights: pool and mlp_expansion must be >= 1");
  Rng rng = make_rng(seed, {tag(Stream::kLcWeights)});
  const double b = cfg.zero_bias ? 0.0 : 0.02;
  const Index C = channels, E = cfg.mlp_expansion * channels;
  LcWeights w;
  w.pool = cfg.pool;
  w.attn_q = ConvSpec<float>::seeded(C, C, 1, rng, false, 1.0, b);
  w.attn_k = ConvSpec<float>::seeded(C, C, 1, rng, false, 1.0, b);
  w.attn_v = ConvSpec<float>::seeded(C, C, 1, rng, false, 1.0, b);
  w.attn_o = ConvSpec<float>::seeded(C, C, 1, rng, false, 0.5, b);
  w.branch_coll = ConvSpec<float>::seeded(C, C, 3, rng, false, 1.0, b);
  w.branch_ego = ConvSpec<float>::seeded(C, C, 3, rng, false, 1.0, b);
  w.dt_head = ConvSpec<float>::seeded(C, 1, 1, rng, false, 0.5, b);
  w.ssm = SsmParams<float>::seeded(cfg.state_dim, C, rng);
  w.gate_conv = ConvSpec<float>::seeded(C, 1, 1, rng, false, 1.0, b);
  w.gate_dw = ConvSpec<float>::seeded(1, 1, 3, rng, true, 1.0, b);
  w.mlp_in = ConvSpec<float>::seeded(C, E, 1, rng, false, std::sqrt(2.0), b);
  w.mlp_out = ConvSpec<float>::seeded(E, C, 1, rng, false, 1.0, b);
  w.out_conv = ConvSpec<float>::seeded(C, C, 3, rng, false, 1.0, b);
  return w;
}

bool LcWeights::all_finite() const {
  return finite(attn_q) && finite(attn_k) && finite(attn_v) && finite(attn_o) && finite(branch_coll) &&
         finite(branch_ego) && finite(dt_head) && finite(gate_conv) && finite(gate_dw) && finite(mlp_in) &&
         finite(mlp_out) && finite(out_conv) && ssm.a.allFinite() && ssm.b_proj.allFinite() &&
         ssm.c_proj.allFinite();
}

long long LcWeights::macs(Index height, Index width) const {
  const long long cells = static_cast<long long>(height) * width;
  const long long C = attn_q.in_channels;
  const long long tokens = cells / (pool * pool);
  const long long N = ssm.state_dim();
  long long total = 0;
  total += 2 * C * cells;                                               // confidence masking
  total += (attn_q.macs_per_cell() + attn_k.macs_per_cell() + attn_v.macs_per_cell() + attn_o.macs_per_cell()) *
               tokens +
           2 * tokens * tokens * C;                                     // pooled attention
  total += (branch_coll.macs_per_cell() + branch_ego.macs_per_cell()) * cells;
  total += dt_head.macs_per_cell() * cells;
  total += (2 * N * C + 2 * N * C) * cells;                             // B/C projections and scan
  total += (gate_conv.macs_per_cell() + gate_dw.macs_per_cell()) * cells;
  total += (mlp_in.macs_per_cell() + mlp_out.macs_per_cell() + C) * cells;  // MLP and gating
  total += out_conv.macs_per_cell() * cells;
  return total;
}

std::pair<Grid, Grid> confidence_mask(const Grid& f_coll, const Grid& s_coll, const Grid& f_i, const Grid& s_i) {
  require_same_shape(f_coll, f_i, "confidence_mask");
  require_same_shape(s_coll, s_i, "confidence_mask");
  return {broadcast_multiply(f_coll, s_coll), broadcast_multiply(f_i, s_i)};
}

Grid harmonize(const Grid& f, const LcWeights& weights) {
  const Grid tokens = avg_pool(f, weights.pool);
  const Grid q = conv2d(tokens, weights.attn_q);
  const Grid k = conv2d(tokens, weights.attn_k);
  const Grid v = conv2d(tokens, weights.attn_v);
  const float scale = 1.0f / std::sqrt(float(f.channels()));
  Eigen::MatrixXf logits = (q.data().transpose() * k.data()) * scale;  // T × T
  for (Index r = 0; r < logits.rows(); ++r) {
    const float m = logits.row(r).maxCoeff();
    logits.row(r) = (logits.row(r).array() - m).exp();
    logits.row(r) /= logits.row(r).sum();
  }
  Grid mixed = v.zeros_like();
  mixed.data().noalias() = v.data() * logits.transpose();
  const Grid up = upsample_nearest(conv2d(mixed, weights.attn_o), weights.pool);
  Grid out = f;
  out.data() += up.data();
  return out;
}

LcOutput lc_forward(const Grid& f_coll, const Grid& s_coll, const Grid& f_i, const Grid& s_i, const LcWeights& weights,
                    const ConvSpec<float>& det_head) {
  auto [m_coll, m_i] = confidence_mask(f_coll, s_coll, f_i, s_i);
  const Grid z_coll = conv2d(harmonize(m_coll, weights), weights.branch_coll);
  const Grid z_i = conv2d(m_i, weights.branch_ego);
  Grid z_fused = z_coll;
  z_fused.data() += z_i.data();

  const Grid dt1 = conv2d(z_fused, weights.dt_head);
  Grid dt = z_fused.zeros_like();
  dt.data().rowwise() = dt1.data().row(0);
  const Grid x = selective_scan(z_fused, dt, z_i, weights.ssm);

  LcOutput out;
  out.gate = sigmoid(conv2d(conv2d(x, weights.gate_conv), weights.gate_dw));
  out.gate.data() = out.gate.data().cwiseMax(kGateLo).cwiseMin(kGateHi);
  const Grid mlp = conv2d(gelu(conv2d(x, weights.mlp_in)), weights.mlp_out);
  out.fused_feature = conv2d(broadcast_multiply(mlp, out.gate), weights.out_conv);
  out.detmaps = DetMaps::unstack(conv2d(out.fused_feature, det_head));
  return out;
}

std::pair<Grid, Grid> dense_collab(std::span<const Grid> features, std::span<const Grid> s_maps,
                                   std::span<const Grid> blend_weights) {
  if (features.empty()) throw InvalidInput("dense_collab: no collaborators");
  if (s_maps.size() != features.size() || blend_weights.size() != features.size())
    throw InvalidInput("dense_collab: features, s-maps and weights must align");
  std::vector<Grid> supports(features.size(), Grid::Constant(1, features.front().height(), features.front().width(),
                                                             1.0f, features.front().cell_size()));
  return {blend(features, blend_weights, supports), blend(s_maps, blend_weights, supports)};
}

Grid teacher_forward(std::span<const Grid> dense_features, std::span<const Grid> s_maps,
                     std::span<const Grid> blend_weights, const Grid& f_i, const Grid& s_i, const LcWeights& weights) {
  // The detection head does not influence F_out; a zero head keeps this self-contained.
  const ConvSpec<float> no_head = ConvSpec<float>::zeros(f_i.channels(), DetMaps::kNumCls + DetMaps::kNumReg, 1);
  if (dense_features.empty())
    return lc_forward(f_i.zeros_like(), s_i.zeros_like(), f_i, s_i, weights, no_head).fused_feature;
  auto [f_coll, s_coll] = dense_collab(dense_features, s_maps, blend_weights);
  return lc_forward(f_coll, s_coll, f_i, s_i, weights, no_head).fused_feature;
}

double align_loss(const Grid& f_out, const Grid& f_teacher) {
  require_same_shape(f_out, f_teacher, "align_loss");
  if (f_out.size() == 0) return 0.0;
  return (f_out.data().cast<double>() - f_teacher.data().cast<double>()).squaredNorm() / double(f_out.size());
}

}  // namespace coop
