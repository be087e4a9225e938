#include "coop/world.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>
#include <sstream>

#include "coop/error.hpp"

namespace coop {

namespace {

// Rectangle with extra margin on every side, in its own local frame.
bool local_contains(const WorldObject& o, const Eigen::Vector2d& p, double margin) {
  const Eigen::Vector2d local = o.center.inverse().apply(p);
  return std::abs(local.x()) <= 0.5 * o.length + margin && std::abs(local.y()) <= 0.5 * o.width + margin;
}

// Separating-axis test on the two footprints grown by `gap` / 2 each.
bool footprints_overlap(const WorldObject& a, const WorldObject& b, double gap) {
  const WorldObject* boxes[2] = {&a, &b};
  for (const WorldObject* axis_owner : boxes) {
    const Eigen::Rotation2Dd r = axis_owner->center.rotation();
    const Eigen::Vector2d axes[2] = {r * Eigen::Vector2d::UnitX(), r * Eigen::Vector2d::UnitY()};
    for (const auto& axis : axes) {
      double lo[2], hi[2];
      for (int k = 0; k < 2; ++k) {
        lo[k] = std::numeric_limits<double>::infinity();
        hi[k] = -lo[k];
        for (const auto& c : boxes[k]->corners()) {
          const double d = c.dot(axis);
          lo[k] = std::min(lo[k], d);
          hi[k] = std::max(hi[k], d);
        }
      }
      if (hi[0] + 0.5 * gap < lo[1] - 0.5 * gap || hi[1] + 0.5 * gap < lo[0] - 0.5 * gap) return false;
    }
  }
  return true;
}

// True when the open segment a→b passes through the interior of `o`
// (Liang–Barsky clip in the rectangle's frame). Grazing contact does not block.
bool segment_blocked(const Eigen::Vector2d& a, const Eigen::Vector2d& b, const WorldObject& o) {
  const Pose2 inv = o.center.inverse();
  const Eigen::Vector2d p = inv.apply(a), q = inv.apply(b);
  const Eigen::Vector2d d = q - p;
  const double hx = 0.5 * o.length, hy = 0.5 * o.width;
  double t0 = 0.0, t1 = 1.0;
  const double pk[4] = {-d.x(), d.x(), -d.y(), d.y()};
  const double qk[4] = {p.x() + hx, hx - p.x(), p.y() + hy, hy - p.y()};
  for (int i = 0; i < 4; ++i) {
    if (pk[i] == 0.0) {
      if (qk[i] < 0.0) return false;
      continue;
    }
    const double t = qk[i] / pk[i];
    if (pk[i] < 0.0) t0 = std::max(t0, t);
    else t1 = std::min(t1, t);
    if (t0 > t1) return false;
  }
  return (t1 - t0) * d.norm() > 1e-9;
}

std::vector<Eigen::Vector2d> boundary_samples(const WorldObject& o) {
  const auto c = o.corners();
  const double perimeter = 2.0 * (o.width + o.length);
  std::vector<Eigen::Vector2d> pts;
  pts.reserve(kVisibilitySamples);
  for (int k = 0; k < kVisibilitySamples; ++k) {
    double s = (k + 0.5) * perimeter / kVisibilitySamples;
    for (int e = 0; e < 4; ++e) {
      const Eigen::Vector2d& a = c[e];
      const Eigen::Vector2d& b = c[(e + 1) % 4];
      const double len = (b - a).norm();
      if (s <= len || e == 3) {
        pts.push_back(a + (b - a) * std::min(1.0, s / len));
        break;
      }
      s -= len;
    }
  }
  return pts;
}

nlohmann::json pose_json(const Pose2& p) { return nlohmann::json::array({p.x, p.y, p.yaw}); }
Pose2 pose_from(const nlohmann::json& j) { return {j.at(0).get<double>(), j.at(1).get<double>(), j.at(2).get<double>()}; }

}  // namespace

std::vector<Eigen::Vector2d> WorldObject::corners() const {
  const double hx = 0.5 * length, hy = 0.5 * width;
  return {center.apply({hx, hy}), center.apply({-hx, hy}), center.apply({-hx, -hy}), center.apply({hx, -hy})};
}

bool WorldObject::contains(const Eigen::Vector2d& p) const { return local_contains(*this, p, 0.0); }

WorldObject ObjectTrack::at(int tick) const {
  WorldObject o;
  o.id = id;
  o.center = trajectory.at(static_cast<std::size_t>(tick));
  o.width = width;
  o.length = length;
  o.velocity = velocity;
  return o;
}

const AgentTrack& Scenario::agent(int id) const {
  for (const auto& a : agents)
    if (a.id == id) return a;
  throw InvalidInput("unknown agent id " + std::to_string(id));
}

std::vector<WorldObject> Scenario::objects_at(int tick) const {
  std::vector<WorldObject> out;
  out.reserve(objects.size());
  for (const auto& o : objects) out.push_back(o.at(tick));
  return out;
}

Scenario generate_scenario(std::uint64_t seed, int n_agents, int n_objects, int ticks, double area,
                           const ScenarioOptions& opt) {
  if (n_agents < 1) throw InvalidInput("generate_scenario: n_agents must be >= 1");
  if (n_objects < 0) throw InvalidInput("generate_scenario: n_objects must be >= 0");
  if (ticks < 1) throw InvalidInput("generate_scenario: ticks must be >= 1");
  if (!(area > 0.0)) throw InvalidInput("generate_scenario: area must be positive");

  Rng rng = make_rng(seed, {tag(Stream::kScene)});
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  std::uniform_real_distribution<double> angle(-std::numbers::pi, std::numbers::pi);
  const double half = 0.5 * area;
  const double agent_radius = opt.agent_radius < 0.0 ? half : opt.agent_radius;

  Scenario sc;
  sc.seed = seed;
  sc.ticks = ticks;
  sc.area = area;
  sc.comm_range = opt.comm_range;
  sc.sensing_range = opt.sensing_range;

  std::vector<Pose2> agent_poses;
  agent_poses.emplace_back(0.0, 0.0, angle(rng));
  for (int a = 1; a < n_agents; ++a) {
    bool placed = false;
    for (int attempt = 0; attempt < 1000 && !placed; ++attempt) {
      const double r = agent_radius * std::sqrt(unit(rng));
      const double th = angle(rng);
      const Eigen::Vector2d p(r * std::cos(th), r * std::sin(th));
      placed = std::all_of(agent_poses.begin(), agent_poses.end(), [&](const Pose2& q) {
        return (q.translation() - p).norm() >= opt.min_agent_separation;
      });
      if (placed) agent_poses.emplace_back(p.x(), p.y(), angle(rng));
    }
    if (!placed) {
      std::ostringstream msg;
      msg << "generate_scenario: could not place agent " << a << " with separation " << opt.min_agent_separation
          << " m inside radius " << agent_radius << " m";
      throw GenerationError(msg.str());
    }
  }

  auto random_object = [&](int id) {
    WorldObject o;
    o.id = id;
    o.width = opt.width_min + (opt.width_max - opt.width_min) * unit(rng);
    o.length = opt.length_min + (opt.length_max - opt.length_min) * unit(rng);
    const double yaw = angle(rng);
    o.center = Pose2(-half + area * unit(rng), -half + area * unit(rng), yaw);
    const double speed = opt.speed_min + (opt.speed_max - opt.speed_min) * unit(rng);
    o.velocity = speed * Eigen::Vector2d(std::cos(yaw), std::sin(yaw));
    return o;
  };
  auto fits = [&](const WorldObject& o, const std::vector<WorldObject>& placed, std::size_t skip) {
    for (const auto& p : agent_poses)
      if (local_contains(o, p.translation(), 1.0)) return false;
    for (std::size_t i = 0; i < placed.size(); ++i)
      if (i != skip && footprints_overlap(o, placed[i], opt.object_clearance)) return false;
    return true;
  };
  auto place = [&](int id, const std::vector<WorldObject>& placed, std::size_t skip) -> std::optional<WorldObject> {
    for (int attempt = 0; attempt < 500; ++attempt) {
      WorldObject o = random_object(id);
      if (fits(o, placed, skip)) return o;
    }
    return std::nullopt;
  };

  std::vector<WorldObject> objs;
  for (int i = 0; i < n_objects; ++i) {
    auto o = place(i, objs, objs.size());
    if (!o) {
      std::ostringstream msg;
      msg << "generate_scenario: no free space for object " << i << " of " << n_objects << " in a " << area
          << " m area";
      throw GenerationError(msg.str());
    }
    objs.push_back(*o);
  }

  // Re-place objects nobody can see until every object is seen by some agent.
  for (int round = 0;; ++round) {
    std::vector<std::size_t> unseen;
    for (std::size_t i = 0; i < objs.size(); ++i) {
      std::vector<WorldObject> others;
      for (std::size_t j = 0; j < objs.size(); ++j)
        if (j != i) others.push_back(objs[j]);
      const bool seen = std::any_of(agent_poses.begin(), agent_poses.end(), [&](const Pose2& p) {
        return visibility(p.translation(), objs[i], others, opt.sensing_range) > 0.0;
      });
      if (!seen) unseen.push_back(i);
    }
    if (unseen.empty()) break;
    if (round >= opt.max_rounds) {
      std::ostringstream msg;
      msg << "generate_scenario: " << unseen.size() << " object(s) remain invisible to all " << n_agents
          << " agents after " << opt.max_rounds << " re-placement rounds (sensing range " << opt.sensing_range
          << " m, area " << area << " m)";
      throw GenerationError(msg.str());
    }
    for (std::size_t i : unseen) {
      if (auto o = place(static_cast<int>(i), objs, i)) objs[i] = *o;
    }
  }

  for (int a = 0; a < n_agents; ++a) {
    AgentTrack t;
    t.id = a;
    t.trajectory.assign(static_cast<std::size_t>(ticks), agent_poses[static_cast<std::size_t>(a)]);
    sc.agents.push_back(std::move(t));
  }
  for (const auto& o : objs) {
    ObjectTrack t;
    t.id = o.id;
    t.width = o.width;
    t.length = o.length;
    t.velocity = o.velocity;
    for (int k = 0; k < ticks; ++k) {
      const Eigen::Vector2d c = o.center.translation() + double(k) * o.velocity;
      t.trajectory.emplace_back(c.x(), c.y(), o.center.yaw);
    }
    sc.objects.push_back(std::move(t));
  }
  return sc;
}

Pose2 perturb_pose(const Pose2& pose, const NoiseSpec& noise, Rng& rng) {
  if (noise.sigma_t < 0.0 || noise.sigma_r < 0.0) throw InvalidInput("perturb_pose: noise must be non-negative");
  if (noise.sigma_t == 0.0 && noise.sigma_r == 0.0) return pose;
  std::normal_distribution<double> n01(0.0, 1.0);
  const double dx = noise.sigma_t * n01(rng);
  const double dy = noise.sigma_t * n01(rng);
  const double dyaw = deg2rad(noise.sigma_r) * n01(rng);
  return {pose.x + dx, pose.y + dy, pose.yaw + dyaw};
}

double visibility(const Eigen::Vector2d& viewer, const WorldObject& target, std::span<const WorldObject> occluders,
                  double range) {
  int seen = 0;
  for (const auto& s : boundary_samples(target)) {
    if ((s - viewer).norm() > range) continue;
    const bool blocked = std::any_of(occluders.begin(), occluders.end(),
                                     [&](const WorldObject& o) { return segment_blocked(viewer, s, o); });
    if (!blocked) ++seen;
  }
  return double(seen) / double(kVisibilitySamples);
}

std::vector<VisibleObject> visible_objects(const Scenario& scenario, int agent_id, int tick) {
  if (tick < 0 || tick >= scenario.ticks) throw InvalidInput("visible_objects: tick out of range");
  const Eigen::Vector2d viewer = scenario.agent(agent_id).trajectory.at(static_cast<std::size_t>(tick)).translation();
  const auto objs = scenario.objects_at(tick);
  std::vector<VisibleObject> out;
  std::vector<WorldObject> others;
  for (std::size_t i = 0; i < objs.size(); ++i) {
    others.clear();
    for (std::size_t j = 0; j < objs.size(); ++j)
      if (j != i) others.push_back(objs[j]);
    const double v = visibility(viewer, objs[i], others, scenario.sensing_range);
    if (v > 0.0) out.push_back({objs[i], v});
  }
  return out;
}

Observation snapshot(const Scenario& scenario, int agent_id, int tick, int lag) {
  const int t = tick - lag;
  if (lag < 0 || t < 0 || t >= scenario.ticks) {
    throw InvalidInput("snapshot: effective tick " + std::to_string(t) + " outside [0, " +
                       std::to_string(scenario.ticks) + ")");
  }
  Observation obs;
  obs.agent_id = agent_id;
  obs.tick = t;
  obs.pose = scenario.agent(agent_id).trajectory.at(static_cast<std::size_t>(t));
  obs.objects = visible_objects(scenario, agent_id, t);
  return obs;
}

nlohmann::json scenario_to_json(const Scenario& sc) {
  nlohmann::json doc;
  doc["schema_version"] = Scenario::kSchemaVersion;
  doc["seed"] = sc.seed;
  doc["ticks"] = sc.ticks;
  doc["area"] = sc.area;
  doc["comm_range"] = sc.comm_range;
  doc["sensing_range"] = sc.sensing_range;
  doc["agents"] = nlohmann::json::array();
  for (const auto& a : sc.agents) {
    nlohmann::json traj = nlohmann::json::array();
    for (const auto& p : a.trajectory) traj.push_back(pose_json(p));
    doc["agents"].push_back({{"id", a.id}, {"trajectory", traj}});
  }
  doc["objects"] = nlohmann::json::array();
  for (const auto& o : sc.objects) {
    nlohmann::json traj = nlohmann::json::array();
    for (const auto& p : o.trajectory) traj.push_back(pose_json(p));
    doc["objects"].push_back({{"id", o.id},
                              {"width", o.width},
                              {"length", o.length},
                              {"velocity", {o.velocity.x(), o.velocity.y()}},
                              {"trajectory", traj}});
  }
  return doc;
}

Scenario scenario_from_json(const nlohmann::json& doc) {
  try {
    const int version = doc.at("schema_version").get<int>();
    if (version != Scenario::kSchemaVersion)
      throw InvalidInput("scenario schema_version " + std::to_string(version) + " is not supported");
    Scenario sc;
    sc.seed = doc.at("seed").get<std::uint64_t>();
    sc.ticks = doc.at("ticks").get<int>();
    sc.area = doc.at("area").get<double>();
    sc.comm_range = doc.at("comm_range").get<double>();
    sc.sensing_range = doc.at("sensing_range").get<double>();
    for (const auto& a : doc.at("agents")) {
      AgentTrack t;
      t.id = a.at("id").get<int>();
      for (const auto& p : a.at("trajectory")) t.trajectory.push_back(pose_from(p));
      if (static_cast<int>(t.trajectory.size()) != sc.ticks) throw InvalidInput("agent trajectory length != ticks");
      for (const auto& other : sc.agents)
        if (other.id == t.id) throw InvalidInput("duplicate agent id " + std::to_string(t.id));
      sc.agents.push_back(std::move(t));
    }
    for (const auto& o : doc.at("objects")) {
      ObjectTrack t;
      t.id = o.at("id").get<int>();
      t.width = o.at("width").get<double>();
      t.length = o.at("length").get<double>();
      if (!(t.width > 0.0) || !(t.length > 0.0)) throw InvalidInput("object dimensions must be positive");
      t.velocity = {o.at("velocity").at(0).get<double>(), o.at("velocity").at(1).get<double>()};
      for (const auto& p : o.at("trajectory")) t.trajectory.push_back(pose_from(p));
      if (static_cast<int>(t.trajectory.size()) != sc.ticks) throw InvalidInput("object trajectory length != ticks");
      sc.objects.push_back(std::move(t));
    }
    return sc;
  } catch (const nlohmann::json::exception& e) {
    throw InvalidInput(std::string("malformed scenario document: ") + e.what());
  }
}

}  // namespace coop
