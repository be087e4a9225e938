#include "coop/paccorrect.hpp"

#include <cmath>

#include "coop/error.hpp"
#include "coop/rng.hpp"

namespace coop {

namespace {

void require_same(const DetMaps& a, const DetMaps& b, const char* what) {
  require_same_shape(a.cls, b.cls, what);
  require_same_shape(a.reg, b.reg, what);
}

bool finite(const ConvSpec<float>& s) { return s.weights.allFinite() && s.bias.allFinite(); }

}  // namespace

std::string to_string(PacMode m) { return m == PacMode::kOracle ? "oracle" : "learned"; }

PacMode pac_mode_from_string(const std::string& s) {
  if (s == "oracle") return PacMode::kOracle;
  if (s == "learned") return PacMode::kLearned;
  throw InvalidInput("unknown PAC mode '" + s + "' (expected oracle or learned)");
}

std::string to_string(AttentionMode m) { return m == AttentionMode::kCosine ? "cosine" : "learned"; }

AttentionMode attention_mode_from_string(const std::string& s) {
  if (s == "cosine") return AttentionMode::kCosine;
  if (s == "learned") return AttentionMode::kLearned;
  throw InvalidInput("unknown attention mode '" + s + "' (expected cosine or learned)");
}

PacWeights PacWeights::seeded(std::uint64_t seed, const PacConfig& cfg) {
  if (cfg.pe_dims <= 0 || cfg.pe_dims % 2 != 0) throw InvalidInput("PacConfig: pe_dims must be positive and even");
  if (cfg.attn_hidden < 1 || cfg.offset_width < 1) throw InvalidInput("PacConfig: widths must be >= 1");
  Rng rng = make_rng(seed, {tag(Stream::kPacWeights)});
  PacWeights w;
  w.config = cfg;
  const Index D = w.descriptor_dims(), Hd = cfg.attn_hidden;
  std::normal_distribution<double> nd(0.0, 1.0 / std::sqrt(double(2 * D)));
  w.attn_ego.resize(Hd, D);
  w.attn_collab.resize(Hd, D);
  for (Index r = 0; r < Hd; ++r)
    for (Index c = 0; c < D; ++c) w.attn_ego(r, c) = float(nd(rng));
  for (Index r = 0; r < Hd; ++r)
    for (Index c = 0; c < D; ++c) w.attn_collab(r, c) = float(nd(rng));
  std::normal_distribution<double> nh(0.0, 1.0 / std::sqrt(double(Hd)));
  w.attn_bias = Eigen::VectorXf::Zero(Hd);
  w.attn_out.resize(Hd);
  for (Index r = 0; r < Hd; ++r) w.attn_out(r) = float(nh(rng));

  const Index in = 2 * (DetMaps::kNumCls + DetMaps::kNumReg), ow = cfg.offset_width;
  w.offset_stack.push_back(ConvSpec<float>::seeded(in, ow, 3, rng, false, std::sqrt(2.0), 0.01));
  w.offset_stack.push_back(ConvSpec<float>::seeded(ow, ow, 3, rng, false, std::sqrt(2.0), 0.01));
  w.offset_stack.push_back(ConvSpec<float>::seeded(ow, ow, 3, rng, false, std::sqrt(2.0), 0.01));
  w.offset_stack.push_back(ConvSpec<float>::seeded(ow, 2, 3, rng, false, 0.1, 0.0));

  if (cfg.identity_correct) {
    w.correct_cls = ConvSpec<float>::identity(DetMaps::kNumCls);
    w.correct_reg = ConvSpec<float>::identity(DetMaps::kNumReg);
  } else {
    // Near-identity: pass-through plus a small seeded perturbation.
    w.correct_cls = ConvSpec<float>::seeded(DetMaps::kNumCls, DetMaps::kNumCls, 1, rng, false, 0.1);
    w.correct_cls.weights += ConvSpec<float>::identity(DetMaps::kNumCls).weights;
    w.correct_reg = ConvSpec<float>::seeded(DetMaps::kNumReg, DetMaps::kNumReg, 1, rng, false, 0.1);
    w.correct_reg.weights += ConvSpec<float>::identity(DetMaps::kNumReg).weights;
  }
  w.fuse = ConvSpec<float>::seeded(in, DetMaps::kNumCls + DetMaps::kNumReg, 1, rng, false, 1.0, 0.01);
  return w;
}

bool PacWeights::all_finite() const {
  bool ok = attn_ego.allFinite() && attn_collab.allFinite() && attn_bias.allFinite() && attn_out.allFinite() &&
            std::isfinite(attn_out_bias) && finite(correct_cls) && finite(correct_reg) && finite(fuse);
  for (const auto& s : offset_stack) ok = ok && finite(s);
  return ok;
}

long long PacWeights::ego_macs_per_cell() const {
  return config.attention == AttentionMode::kCosine ? descriptor_dims() : attn_ego.size();
}

long long PacWeights::pair_macs_per_cell() const {
  const long long maps = DetMaps::kNumCls + DetMaps::kNumReg;
  long long total = 0;
  total += 4 * maps;                                      // warp into the ego frame
  total += config.attention == AttentionMode::kCosine ? 2 * descriptor_dims()
                                                      : attn_collab.size() + attn_out.size();
  total += maps;                                          // relevance scoring
  for (const auto& s : offset_stack) total += s.macs_per_cell();
  total += 4 * maps;                                      // deformable resampling
  total += correct_cls.macs_per_cell() + correct_reg.macs_per_cell();
  total += fuse.macs_per_cell();
  return total;
}

Eigen::MatrixXf descriptors(const DetMaps& maps, const PacWeights& weights) {
  const Index H = maps.cls.height(), W = maps.cls.width(), P = weights.config.pe_dims;
  const double cs = maps.cls.cell_size();
  Grid keep = maps.cls.zeros_like(1);
  for (Index i = 0; i < maps.cls.cells(); ++i)
    keep.data()(0, i) = sigmoid(double(maps.cls.data()(0, i))) > weights.config.select_threshold ? 1.0f : 0.0f;
  keep = max_pool3x3(keep);

  Eigen::MatrixXf d = Eigen::MatrixXf::Zero(weights.descriptor_dims(), H * W);
  for (Index h = 0; h < H; ++h) {
    for (Index w = 0; w < W; ++w) {
      const Index i = h * W + w;
      if (keep.data()(0, i) == 0.0f) continue;
      const Eigen::Vector2d c = cell_center(H, W, cs, double(h), double(w));
      const auto r = maps.reg.column(i);
      const float params[kDescriptorParams] = {
          float(c.x() + double(r(0)) * cs), float(c.y() + double(r(1)) * cs), std::exp(r(2)), std::exp(r(3)),
          r(4), r(5), sigmoid(maps.cls.data()(0, i))};
      const auto pe = pos_embed<float>(std::span<const float>(params, kDescriptorParams), P);
      d.col(i) = Eigen::Map<const Eigen::VectorXf>(pe.data(), Index(pe.size()));
    }
  }
  return d;
}

Grid cross_agent_attention(const DetMaps& ego, const DetMaps& collab, const PacWeights& weights) {
  require_same(ego, collab, "cross_agent_attention");
  const Eigen::MatrixXf de = descriptors(ego, weights);
  const Eigen::MatrixXf dc = descriptors(collab, weights);
  Grid a = ego.cls.zeros_like(1);
  if (weights.config.attention == AttentionMode::kCosine) {
    const float gain = float(weights.config.cosine_gain);
    for (Index i = 0; i < a.cells(); ++i) {
      const float ne = de.col(i).norm(), nc = dc.col(i).norm();
      const float cosine = (ne > 0.0f && nc > 0.0f) ? de.col(i).dot(dc.col(i)) / (ne * nc) : 0.0f;
      a.data()(0, i) = sigmoid(gain * cosine);
    }
    return a;
  }
  Eigen::MatrixXf hidden = weights.attn_ego * de + weights.attn_collab * dc;
  hidden.colwise() += weights.attn_bias;
  hidden = hidden.cwiseMax(0.0f);
  const Eigen::RowVectorXf logits = weights.attn_out.transpose() * hidden;
  for (Index i = 0; i < a.cells(); ++i) a.data()(0, i) = sigmoid(logits(i) + weights.attn_out_bias);
  return a;
}

DetMaps score_maps(const DetMaps& collab, const Grid& attention, double eps) {
  if (attention.channels() != 1) throw InvalidInput("score_maps: attention must have one channel");
  require_same_plane(collab.cls, attention, "score_maps");
  DetMaps out;
  Grid p = sigmoid(collab.cls);
  p.data().array() *= attention.data().array();
  out.cls = clamped_logit(p, eps);
  out.reg = broadcast_multiply(collab.reg, attention);
  return out;
}

Grid predict_offsets(const DetMaps& ego, const DetMaps& collab, const PacWeights& weights) {
  require_same(ego, collab, "predict_offsets");
  Grid x = concat_channels(ego.stacked(), collab.stacked());
  for (std::size_t l = 0; l < weights.offset_stack.size(); ++l) {
    x = conv2d(x, weights.offset_stack[l]);
    if (l + 1 < weights.offset_stack.size()) x = relu(std::move(x));
  }
  return x;
}

Grid oracle_offsets(const Pose2& error, const GridShape& shape) {
  Grid off = shape.zeros(2);
  const double cs = shape.cell_size;
  for (Index h = 0; h < shape.height; ++h) {
    for (Index w = 0; w < shape.width; ++w) {
      const Eigen::Vector2d p = cell_center(shape.height, shape.width, cs, double(h), double(w));
      const Eigen::Vector2d d = (error.apply(p) - p) / cs;
      off(0, h, w) = float(d.x());
      off(1, h, w) = float(d.y());
    }
  }
  return off;
}

DetMaps correct(const DetMaps& collab, const Grid& offsets, const PacWeights& weights, double eps) {
  DetMaps out;
  out.cls = conv2d(clamped_logit(deform_resample(sigmoid(collab.cls), offsets), eps), weights.correct_cls);
  out.reg = conv2d(deform_resample(collab.reg, offsets), weights.correct_reg);
  return out;
}

DetMaps max_merge(std::span<const DetMaps> maps) {
  if (maps.empty()) throw InvalidInput("max_merge: no maps");
  DetMaps out = maps.front();
  for (std::size_t j = 1; j < maps.size(); ++j) {
    require_same(out, maps[j], "max_merge");
    for (Index i = 0; i < out.cls.cells(); ++i) {
      if (maps[j].cls.data()(0, i) > out.cls.data()(0, i)) {
        out.cls.data()(0, i) = maps[j].cls.data()(0, i);
        out.reg.column(i) = maps[j].reg.column(i);
      }
    }
  }
  return out;
}

DetMaps pac_fuse(const DetMaps& scored, const DetMaps& corrected, const PacWeights& weights, PacMode mode) {
  require_same(scored, corrected, "pac_fuse");
  if (mode == PacMode::kLearned)
    return DetMaps::unstack(conv2d(concat_channels(scored.stacked(), corrected.stacked()), weights.fuse));
  const DetMaps pair[2] = {corrected, scored};
  return max_merge(pair);
}

CorrectionResult pac_correct(const DetMaps& ego, const DetMaps& collab, const PacWeights& weights, PacMode mode,
                             const Pose2& oracle_error, double eps) {
  CorrectionResult r;
  r.mode = mode;
  r.attention = cross_agent_attention(ego, collab, weights);
  r.scored = score_maps(collab, r.attention, eps);
  const GridShape shape{collab.reg.channels(), collab.cls.height(), collab.cls.width(), collab.cls.cell_size()};
  r.offsets = mode == PacMode::kOracle ? oracle_offsets(oracle_error, shape) : predict_offsets(ego, collab, weights);
  r.resampled = correct(collab, r.offsets, weights, eps);
  r.corrected = pac_fuse(r.scored, r.resampled, weights, mode);
  return r;
}

}  // namespace coop
