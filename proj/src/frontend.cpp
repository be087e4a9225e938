#include "coop/frontend.hpp"

#include <algorithm>
#include <cmath>

namespace coop {

namespace {

// Calls fn(cell, rel_center, visibility) for every cell whose centre lies in
// a visible object's footprint, with the object expressed in the agent frame.
template <typename Fn>
void for_each_footprint_cell(const Observation& obs, const GridShape& shape, Fn&& fn) {
  const Pose2 to_agent = obs.pose.inverse();
  const double cs = shape.cell_size;
  for (const auto& vo : obs.objects) {
    const Pose2 rel = to_agent * vo.object.center;
    const double hx = 0.5 * vo.object.length, hy = 0.5 * vo.object.width;
    const double reach = std::hypot(hx, hy);
    const Eigen::Vector2d lo = point_to_cell(shape.height, shape.width, cs, rel.translation() - Eigen::Vector2d(reach, reach));
    const Eigen::Vector2d hi = point_to_cell(shape.height, shape.width, cs, rel.translation() + Eigen::Vector2d(reach, reach));
    const Index w0 = std::max<Index>(0, Index(std::floor(lo.x()))), w1 = std::min<Index>(shape.width - 1, Index(std::ceil(hi.x())));
    const Index h0 = std::max<Index>(0, Index(std::floor(lo.y()))), h1 = std::min<Index>(shape.height - 1, Index(std::ceil(hi.y())));
    const Pose2 inv = rel.inverse();
    for (Index h = h0; h <= h1; ++h) {
      for (Index w = w0; w <= w1; ++w) {
        const Eigen::Vector2d local = inv.apply(cell_center(shape.height, shape.width, cs, double(h), double(w)));
        if (std::abs(local.x()) <= hx && std::abs(local.y()) <= hy) fn(h * shape.width + w, rel, vo.visibility, vo.object);
      }
    }
  }
}

}  // namespace

DetMaps DetMaps::background(const GridShape& shape, double eps) {
  DetMaps m;
  m.cls = Grid::Constant(kNumCls, shape.height, shape.width, logit(float(eps)), shape.cell_size);
  m.reg = shape.zeros(kNumReg);
  return m;
}

DetMaps DetMaps::unstack(const Grid& g) {
  if (g.channels() != kNumCls + kNumReg) throw InvalidInput("DetMaps::unstack: expected 7 channels");
  return {g.slice(0, kNumCls), g.slice(kNumCls, kNumReg)};
}

FrontendWeights FrontendWeights::seeded(const GridShape& shape, std::uint64_t seed) {
  Rng rng = make_rng(seed, {tag(Stream::kEncoder)});
  const Index C = shape.channels;
  if (C < 3) throw InvalidInput("frontend needs at least 3 feature channels");
  FrontendWeights w;
  w.oracle_mix = ConvSpec<float>::seeded(2, C - 2, 3, rng);
  w.net_conv1 = ConvSpec<float>::seeded(2, C, 3, rng, false, std::sqrt(2.0), 0.05);
  w.net_conv2 = ConvSpec<float>::seeded(C, C, 3, rng, false, 1.0, 0.05);
  w.conf_head = ConvSpec<float>::seeded(C, 1, 1, rng, false, 1.0, 0.05);
  w.det_head = ConvSpec<float>::seeded(C, DetMaps::kNumCls + DetMaps::kNumReg, 1, rng, false, 1.0, 0.05);
  return w;
}

Grid rasterize(const Observation& obs, const GridShape& shape) {
  Grid r = shape.zeros(2);
  for_each_footprint_cell(obs, shape, [&](Index cell, const Pose2&, double vis, const WorldObject&) {
    r.data()(0, cell) = std::max(r.data()(0, cell), float(vis));
  });
  const double half = shape.half_extent();
  for (Index h = 0; h < shape.height; ++h)
    for (Index w = 0; w < shape.width; ++w)
      r(1, h, w) = float(cell_center(shape.height, shape.width, shape.cell_size, double(h), double(w)).norm() / half);
  return r;
}

Grid encode(const Observation& obs, const FrontendConfig& cfg, const FrontendWeights& weights) {
  const Grid raster = rasterize(obs, cfg.shape);
  if (cfg.mode == HeadMode::kOracle) return concat_channels(raster, conv2d(raster, weights.oracle_mix));
  return conv2d(relu(conv2d(raster, weights.net_conv1)), weights.net_conv2);
}

Grid confidence_head(const Grid& feature, const FrontendConfig& cfg, const FrontendWeights& weights) {
  if (cfg.mode == HeadMode::kOracle) return clamped_logit(feature.slice(0, 1), cfg.eps);
  return conv2d(feature, weights.conf_head);
}

DetMaps shared_detection_head(const Grid& feature, const FrontendWeights& weights) {
  return DetMaps::unstack(conv2d(feature, weights.det_head));
}

DetMaps detection_head(const Grid& feature, const Observation& obs, const FrontendConfig& cfg,
                       const FrontendWeights& weights) {
  if (cfg.mode == HeadMode::kNetwork) return shared_detection_head(feature, weights);

  const GridShape& s = cfg.shape;
  DetMaps maps = DetMaps::background(s, cfg.eps);
  std::vector<float> best(static_cast<std::size_t>(s.cells()), -1.0f);
  for_each_footprint_cell(obs, s, [&](Index cell, const Pose2& rel, double vis, const WorldObject& obj) {
    if (float(vis) <= best[static_cast<std::size_t>(cell)]) return;
    best[static_cast<std::size_t>(cell)] = float(vis);
    const Eigen::Vector2d c = cell_center(s.height, s.width, s.cell_size, double(cell / s.width), double(cell % s.width));
    maps.cls.data()(0, cell) = logit(std::clamp(float(vis), float(cfg.eps), float(1.0 - cfg.eps)));
    maps.reg.data()(0, cell) = float((rel.x - c.x()) / s.cell_size);
    maps.reg.data()(1, cell) = float((rel.y - c.y()) / s.cell_size);
    maps.reg.data()(2, cell) = float(std::log(obj.width));
    maps.reg.data()(3, cell) = float(std::log(obj.length));
    maps.reg.data()(4, cell) = float(std::sin(rel.yaw));
    maps.reg.data()(5, cell) = float(std::cos(rel.yaw));
  });
  return maps;
}

AgentLocal run_frontend(const Observation& obs, const Pose2& declared_pose, const FrontendConfig& cfg,
                        const FrontendWeights& weights) {
  AgentLocal a;
  a.agent_id = obs.agent_id;
  a.feature = encode(obs, cfg, weights);
  a.confidence_logits = confidence_head(a.feature, cfg, weights);
  a.detmaps = detection_head(a.feature, obs, cfg, weights);
  a.declared_pose = declared_pose;
  a.true_pose = obs.pose;
  return a;
}

Grid warp_logits(const Grid& logits, const Pose2& relative_pose, double eps) {
  return clamped_logit(warp_grid(sigmoid(logits), relative_pose), eps);
}

void rotate_reg_channels(Grid& reg, double yaw) {
  if (yaw == 0.0) return;
  const float c = float(std::cos(yaw)), s = float(std::sin(yaw));
  auto rotate_pair = [&](Index a, Index b) {
    const Eigen::RowVectorXf x = reg.channel(a), y = reg.channel(b);
    reg.channel(a) = c * x - s * y;
    reg.channel(b) = s * x + c * y;
  };
  rotate_pair(0, 1);
  // (cos θ', sin θ') = R(yaw)(cos θ, sin θ); channels hold (sin, cos).
  const Eigen::RowVectorXf sn = reg.channel(4), cn = reg.channel(5);
  reg.channel(5) = c * cn - s * sn;
  reg.channel(4) = s * cn + c * sn;
}

DetMaps warp_detmaps(const DetMaps& maps, const Pose2& relative_pose, double eps) {
  DetMaps out;
  out.cls = warp_logits(maps.cls, relative_pose, eps);
  out.reg = warp_grid(maps.reg, relative_pose);
  rotate_reg_channels(out.reg, relative_pose.yaw);
  return out;
}

}  // namespace coop
