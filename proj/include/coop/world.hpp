#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Core>
#include <json.hpp>

#include "coop/pose2.hpp"
#include "coop/rng.hpp"

namespace coop {

/// Rectangular object footprint. Length runs along the heading (yaw), width
/// across it.
struct WorldObject {
  int id = 0;
  Pose2 center;
  double width = 2.0;
  double length = 4.5;
  Eigen::Vector2d velocity = Eigen::Vector2d::Zero();  // m/tick, world frame

  /// Corners in counter-clockwise order, world frame.
  std::vector<Eigen::Vector2d> corners() const;
  bool contains(const Eigen::Vector2d& p) const;
};

struct AgentTrack {
  int id = 0;
  std::vector<Pose2> trajectory;  // one pose per tick
};

struct ObjectTrack {
  int id = 0;
  double width = 2.0;
  double length = 4.5;
  Eigen::Vector2d velocity = Eigen::Vector2d::Zero();
  std::vector<Pose2> trajectory;

  WorldObject at(int tick) const;
};

struct Scenario {
  static constexpr int kSchemaVersion = 1;

  std::uint64_t seed = 0;
  int ticks = 1;
  double area = 20.0;
  double comm_range = 70.0;
  double sensing_range = 9.6;
  std::vector<AgentTrack> agents;
  std::vector<ObjectTrack> objects;

  const AgentTrack& agent(int id) const;
  std::vector<WorldObject> objects_at(int tick) const;
};

/// Generator knobs beyond the (seed, agents, objects, ticks, area) core.
struct ScenarioOptions {
  double agent_radius = -1.0;   // collaborator placement disc; < 0 means area / 2
  double min_agent_separation = 3.0;
  double object_clearance = 0.4;  // minimum gap between footprints
  double width_min = 1.8, width_max = 2.2;
  double length_min = 4.0, length_max = 4.8;
  double speed_min = 0.0, speed_max = 0.0;  // m/tick
  double sensing_range = 9.6;
  double comm_range = 70.0;
  int max_rounds = 200;
};

struct NoiseSpec {
  double sigma_t = 0.0;  // metres
  double sigma_r = 0.0;  // degrees
};

struct VisibleObject {
  WorldObject object;
  double visibility = 0.0;
};

/// What one agent perceives at one (possibly lagged) tick.
struct Observation {
  int agent_id = 0;
  int tick = 0;
  Pose2 pose;  // true pose at `tick`
  std::vector<VisibleObject> objects;
};

/// Number of boundary sample points used for ray-cast visibility.
inline constexpr int kVisibilitySamples = 16;

/// Agent 0 sits at the origin; collaborators are drawn uniformly from a disc.
/// Objects are placed without overlap and each is visible to at least one
/// agent at tick 0. Throws GenerationError when placement cannot succeed.
Scenario generate_scenario(std::uint64_t seed, int n_agents, int n_objects, int ticks, double area,
                           const ScenarioOptions& options = {});

/// Adds N(0, σ_t²) to x and y and N(0, σ_r²) (σ_r in degrees) to yaw.
Pose2 perturb_pose(const Pose2& pose, const NoiseSpec& noise, Rng& rng);

/// Fraction of the target's boundary samples within `range` of `viewer`
/// whose line of sight is not blocked by any occluder.
double visibility(const Eigen::Vector2d& viewer, const WorldObject& target, std::span<const WorldObject> occluders,
                  double range);

/// Objects with non-zero visibility from agent `agent_id` at `tick`.
std::vector<VisibleObject> visible_objects(const Scenario& scenario, int agent_id, int tick);

/// Observation of the world as it was at tick - lag. Throws InvalidInput when
/// tick - lag is outside [0, ticks).
Observation snapshot(const Scenario& scenario, int agent_id, int tick, int lag);

nlohmann::json scenario_to_json(const Scenario& scenario);
Scenario scenario_from_json(const nlohmann::json& doc);

}  // namespace coop
