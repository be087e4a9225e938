#pragma once

#include <cmath>
#include <numbers>

#include <Eigen/Core>
#include <Eigen/Geometry>

namespace coop {

/// Wraps an angle into (-pi, pi].
inline double normalize_angle(double a) {
  a = std::remainder(a, 2.0 * std::numbers::pi);
  if (a <= -std::numbers::pi) a += 2.0 * std::numbers::pi;
  return a;
}

inline double deg2rad(double d) { return d * std::numbers::pi / 180.0; }
inline double rad2deg(double r) { return r * 180.0 / std::numbers::pi; }

/// Planar rigid transform. Interpreted as the pose of a child frame expressed
/// in a parent frame: apply() maps child coordinates into the parent.
struct Pose2 {
  double x = 0.0;
  double y = 0.0;
  double yaw = 0.0;

  Pose2() = default;
  Pose2(double x_, double y_, double yaw_) : x(x_), y(y_), yaw(normalize_angle(yaw_)) {}

  static Pose2 identity() { return {}; }

  Eigen::Vector2d translation() const { return {x, y}; }
  Eigen::Rotation2Dd rotation() const { return Eigen::Rotation2Dd(yaw); }

  Eigen::Vector2d apply(const Eigen::Vector2d& p) const {
    return rotation() * p + translation();
  }

  Pose2 inverse() const {
    const Eigen::Vector2d t = rotation().inverse() * (-translation());
    return {t.x(), t.y(), -yaw};
  }

  /// this ∘ other: first other, then this.
  Pose2 compose(const Pose2& other) const {
    const Eigen::Vector2d t = apply(other.translation());
    return {t.x(), t.y(), yaw + other.yaw};
  }

  Pose2 operator*(const Pose2& other) const { return compose(other); }

  bool operator==(const Pose2&) const = default;
};

/// Pose of `child` expressed in the frame of `reference`.
inline Pose2 relative_pose(const Pose2& reference, const Pose2& child) {
  return reference.inverse() * child;
}

}  // namespace coop
