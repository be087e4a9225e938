#pragma once

// Box decoding, uncertainty-based score recalibration, rotated-box NMS and
// average precision.

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "coop/frontend.hpp"
#include "coop/gridmath.hpp"

namespace coop {

enum class BoxSource { kEgo, kFeatureBranch, kObjectBranch };

std::string to_string(BoxSource s);

struct OrientedBox {
  double cx = 0.0, cy = 0.0;  // metres
  double w = 1.0, l = 1.0;    // width across, length along the heading
  double yaw = 0.0;
  double score = 0.0;
  BoxSource source = BoxSource::kEgo;

  std::vector<Eigen::Vector2d> corners() const;
  double area() const { return w * l; }
};

/// One box per cell with σ(cls) > threshold. Coordinates are in the maps' frame.
std::vector<OrientedBox> decode_boxes(const DetMaps& maps, double score_threshold,
                                      BoxSource source = BoxSource::kEgo);

struct RecalibWeights {
  ConvSpec<float> conv;  // 3×3, 2 → 2 over (C_lc, C_pac)
  bool identity = false; // U ≡ 0

  static RecalibWeights seeded(std::uint64_t seed);
  static RecalibWeights none();
};

/// U = σ(conv(concat(C_lc, C_pac))); each branch's logit becomes
/// logit(σ(logit)·(1 - U)), i.e. the score is damped by 1 - U.
std::pair<DetMaps, DetMaps> recalibrate(const DetMaps& lc_maps, const DetMaps& pac_maps, const RecalibWeights& weights,
                                        double eps = 1e-4);

/// Scores damped by (1 - U) given uncertainty maps directly.
DetMaps apply_uncertainty(const DetMaps& maps, const Grid& uncertainty, double eps = 1e-4);

double rotated_iou(const OrientedBox& a, const OrientedBox& b);

/// Greedy suppression in (score desc, cx, cy) order.
std::vector<OrientedBox> nms(std::vector<OrientedBox> boxes, double iou_threshold);

struct ApResult {
  double ap = 0.0;
  double recall = 0.0;  // final recall over all predictions
  std::vector<double> precision_curve, recall_curve;
  bool empty_ground_truth = false;
};

/// Greedy score-descending matching with all-point interpolation.
ApResult evaluate_ap(std::vector<OrientedBox> predictions, const std::vector<OrientedBox>& ground_truth,
                     double iou_threshold);
double average_precision(const std::vector<OrientedBox>& predictions, const std::vector<OrientedBox>& ground_truth,
                         double iou_threshold);

struct EvalReport {
  double ap50 = 0.0, ap70 = 0.0;
  double recall50 = 0.0;
  int num_gt = 0, num_pred = 0;
  std::vector<double> precision50, recall_curve50;
  std::uint64_t comm_bytes = 0;
  std::uint64_t stage2_bytes = 0;
  long long flops = 0;
  bool empty_ground_truth = false;
};

EvalReport evaluate(const std::vector<OrientedBox>& predictions, const std::vector<OrientedBox>& ground_truth);

}  // namespace coop
