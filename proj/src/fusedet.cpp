#include "coop/fusedet.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <tuple>

#include "coop/error.hpp"
#include "coop/rng.hpp"

namespace coop {

namespace {

using Polygon = std::vector<Eigen::Vector2d>;

double cross(const Eigen::Vector2d& a, const Eigen::Vector2d& b) { return a.x() * b.y() - a.y() * b.x(); }

double polygon_area(const Polygon& p) {
  double s = 0.0;
  for (std::size_t i = 0; i < p.size(); ++i) s += cross(p[i], p[(i + 1) % p.size()]);
  return 0.5 * std::abs(s);
}

// Clips `subject` against every edge of the counter-clockwise convex `clip`.
Polygon clip_convex(Polygon subject, const Polygon& clip) {
  for (std::size_t e = 0; e < clip.size() && !subject.empty(); ++e) {
    const Eigen::Vector2d a = clip[e], b = clip[(e + 1) % clip.size()];
    const Eigen::Vector2d edge = b - a;
    auto side = [&](const Eigen::Vector2d& p) { return cross(edge, p - a); };
    Polygon out;
    for (std::size_t i = 0; i < subject.size(); ++i) {
      const Eigen::Vector2d p = subject[i], q = subject[(i + 1) % subject.size()];
      const double sp = side(p), sq = side(q);
      if (sp >= 0.0) out.push_back(p);
      if ((sp >= 0.0) != (sq >= 0.0)) out.push_back(p + (q - p) * (sp / (sp - sq)));
    }
    subject = std::move(out);
  }
  return subject;
}

void require_valid(const OrientedBox& b) {
  if (!(b.w > 0.0) || !(b.l > 0.0) || !std::isfinite(b.w) || !std::isfinite(b.l) || !std::isfinite(b.cx) ||
      !std::isfinite(b.cy) || !std::isfinite(b.yaw))
    throw InvalidInput("rotated_iou: degenerate box");
}

auto order_key(const OrientedBox& b) { return std::make_tuple(-b.score, b.cx, b.cy, b.w, b.l, b.yaw); }

void sort_boxes(std::vector<OrientedBox>& boxes) {
  std::stable_sort(boxes.begin(), boxes.end(),
                   [](const OrientedBox& a, const OrientedBox& b) { return order_key(a) < order_key(b); });
}

}  // namespace

std::string to_string(BoxSource s) {
  switch (s) {
    case BoxSource::kEgo: return "ego";
    case BoxSource::kFeatureBranch: return "feature_branch";
    case BoxSource::kObjectBranch: return "object_branch";
  }
  return "ego";
}

std::vector<Eigen::Vector2d> OrientedBox::corners() const {
  const double c = std::cos(yaw), s = std::sin(yaw), hl = 0.5 * l, hw = 0.5 * w;
  const Eigen::Vector2d ax(c * hl, s * hl), ay(-s * hw, c * hw), ctr(cx, cy);
  return {ctr + ax + ay, ctr - ax + ay, ctr - ax - ay, ctr + ax - ay};
}

std::vector<OrientedBox> decode_boxes(const DetMaps& maps, double score_threshold, BoxSource source) {
  std::vector<OrientedBox> out;
  const Index H = maps.cls.height(), W = maps.cls.width();
  const double cs = maps.cls.cell_size();
  for (Index h = 0; h < H; ++h) {
    for (Index w = 0; w < W; ++w) {
      const Index i = h * W + w;
      const double score = sigmoid(double(maps.cls.data()(0, i)));
      if (!(score > score_threshold)) continue;
      const auto r = maps.reg.column(i);
      const Eigen::Vector2d c = cell_center(H, W, cs, double(h), double(w));
      OrientedBox b;
      b.cx = c.x() + double(r(0)) * cs;
      b.cy = c.y() + double(r(1)) * cs;
      b.w = std::exp(double(r(2)));
      b.l = std::exp(double(r(3)));
      b.yaw = std::atan2(double(r(4)), double(r(5)));
      b.score = score;
      b.source = source;
      out.push_back(b);
    }
  }
  return out;
}

RecalibWeights RecalibWeights::seeded(std::uint64_t seed) {
  Rng rng = make_rng(seed, {tag(Stream::kFusionWeights)});
  RecalibWeights w;
  w.conv = ConvSpec<float>::seeded(2, 2, 3, rng, false, 0.5, 0.0);
  w.conv.bias.setConstant(-2.0f);  // starts near low uncertainty
  return w;
}

RecalibWeights RecalibWeights::none() {
  RecalibWeights w;
  w.conv = ConvSpec<float>::zeros(2, 2, 3);
  w.identity = true;
  return w;
}

DetMaps apply_uncertainty(const DetMaps& maps, const Grid& uncertainty, double eps) {
  require_same_shape(maps.cls, uncertainty, "apply_uncertainty");
  DetMaps out = maps;
  Grid p = sigmoid(maps.cls);
  p.data().array() *= (1.0f - uncertainty.data().array());
  out.cls = clamped_logit(p, eps);
  return out;
}

std::pair<DetMaps, DetMaps> recalibrate(const DetMaps& lc_maps, const DetMaps& pac_maps, const RecalibWeights& weights,
                                        double eps) {
  require_same_shape(lc_maps.cls, pac_maps.cls, "recalibrate");
  require_same_shape(lc_maps.reg, pac_maps.reg, "recalibrate");
  if (weights.identity) return {lc_maps, pac_maps};
  const Grid u = sigmoid(conv2d(concat_channels(lc_maps.cls, pac_maps.cls), weights.conv));
  return {apply_uncertainty(lc_maps, u.slice(0, 1), eps), apply_uncertainty(pac_maps, u.slice(1, 1), eps)};
}

double rotated_iou(const OrientedBox& a, const OrientedBox& b) {
  require_valid(a);
  require_valid(b);
  const double reach = 0.5 * (std::hypot(a.w, a.l) + std::hypot(b.w, b.l));
  if (std::hypot(a.cx - b.cx, a.cy - b.cy) >= reach) return 0.0;
  const double inter = polygon_area(clip_convex(a.corners(), b.corners()));
  const double uni = a.area() + b.area() - inter;
  if (uni <= 0.0) return 0.0;
  return std::clamp(inter / uni, 0.0, 1.0);
}

std::vector<OrientedBox> nms(std::vector<OrientedBox> boxes, double iou_threshold) {
  if (!(iou_threshold > 0.0 && iou_threshold < 1.0)) throw InvalidInput("nms: threshold must lie in (0, 1)");
  sort_boxes(boxes);
  std::vector<OrientedBox> kept;
  for (const auto& b : boxes) {
    bool suppressed = false;
    for (const auto& k : kept) {
      if (rotated_iou(b, k) > iou_threshold) {
        suppressed = true;
        break;
      }
    }
    if (!suppressed) kept.push_back(b);
  }
  return kept;
}

ApResult evaluate_ap(std::vector<OrientedBox> predictions, const std::vector<OrientedBox>& ground_truth,
                     double iou_threshold) {
  ApResult r;
  if (ground_truth.empty()) {
    r.empty_ground_truth = true;
    return r;
  }
  sort_boxes(predictions);
  std::vector<bool> matched(ground_truth.size(), false);
  int tp = 0;
  const double n_gt = double(ground_truth.size());
  for (std::size_t k = 0; k < predictions.size(); ++k) {
    // Each prediction is judged against its highest-IoU ground truth; a
    // ground truth already claimed turns later duplicates into false positives.
    int best = -1;
    double best_iou = 0.0;
    for (std::size_t g = 0; g < ground_truth.size(); ++g) {
      const double iou = rotated_iou(predictions[k], ground_truth[g]);
      if (iou > best_iou) {
        best = int(g);
        best_iou = iou;
      }
    }
    if (best >= 0 && best_iou >= iou_threshold && !matched[std::size_t(best)]) {
      matched[std::size_t(best)] = true;
      ++tp;
    }
    r.precision_curve.push_back(double(tp) / double(k + 1));
    r.recall_curve.push_back(double(tp) / n_gt);
  }
  r.recall = double(tp) / n_gt;
  // Area under the monotone precision envelope.
  double envelope = 0.0, prev_recall = 0.0;
  std::vector<double> env(r.precision_curve.size());
  for (std::size_t k = env.size(); k-- > 0;) {
    envelope = std::max(envelope, r.precision_curve[k]);
    env[k] = envelope;
  }
  for (std::size_t k = 0; k < env.size(); ++k) {
    r.ap += (r.recall_curve[k] - prev_recall) * env[k];
    prev_recall = r.recall_curve[k];
  }
  return r;
}

double average_precision(const std::vector<OrientedBox>& predictions, const std::vector<OrientedBox>& ground_truth,
                         double iou_threshold) {
  return evaluate_ap(predictions, ground_truth, iou_threshold).ap;
}

EvalReport evaluate(const std::vector<OrientedBox>& predictions, const std::vector<OrientedBox>& ground_truth) {
  EvalReport rep;
  const ApResult a50 = evaluate_ap(predictions, ground_truth, 0.5);
  const ApResult a70 = evaluate_ap(predictions, ground_truth, 0.7);
  rep.ap50 = a50.ap;
  rep.ap70 = a70.ap;
  rep.recall50 = a50.recall;
  rep.precision50 = a50.precision_curve;
  rep.recall_curve50 = a50.recall_curve;
  rep.num_gt = int(ground_truth.size());
  rep.num_pred = int(predictions.size());
  rep.empty_ground_truth = a50.empty_ground_truth;
  return rep;
}

}  // namespace coop
