#include <doctest.h>

#include <cmath>
#include <numbers>

#include "coop/error.hpp"
#include "coop/world.hpp"

using namespace coop;

namespace {

WorldObject box(double x, double y, double yaw, double w, double l, int id = 0) {
  WorldObject o;
  o.id = id;
  o.center = Pose2(x, y, yaw);
  o.width = w;
  o.length = l;
  return o;
}

Scenario one_mover(double speed, int ticks) {
  Scenario sc;
  sc.ticks = ticks;
  AgentTrack a;
  a.trajectory.assign(std::size_t(ticks), Pose2());
  sc.agents.push_back(a);
  ObjectTrack o;
  o.width = 2;
  o.length = 4;
  o.velocity = {speed, 0};
  for (int t = 0; t < ticks; ++t) o.trajectory.emplace_back(4.0 + speed * t, 0.0, 0.0);
  sc.objects.push_back(o);
  return sc;
}

}  // namespace

TEST_CASE("pose group laws") {
  const Pose2 p(1.5, -2.0, 2.9), q(-0.3, 0.7, -1.2), r(4, 1, 0.4);
  const Pose2 e = p * p.inverse();
  CHECK(std::abs(e.x) < 1e-9);
  CHECK(std::abs(e.y) < 1e-9);
  CHECK(std::abs(e.yaw) < 1e-9);
  const Pose2 a = (p * q) * r, b = p * (q * r);
  CHECK(a.x == doctest::Approx(b.x).epsilon(1e-12));
  CHECK(a.y == doctest::Approx(b.y).epsilon(1e-12));
  CHECK(std::abs(normalize_angle(a.yaw - b.yaw)) < 1e-9);
  CHECK(Pose2(0, 0, 3 * std::numbers::pi).yaw == doctest::Approx(std::numbers::pi));
  CHECK(Pose2(0, 0, -std::numbers::pi).yaw == doctest::Approx(std::numbers::pi));
  const Pose2 rel = relative_pose(p, q);
  const Pose2 back = p * rel;
  CHECK(back.x == doctest::Approx(q.x));
  CHECK(back.yaw == doctest::Approx(q.yaw));
}

TEST_CASE("generate_scenario") {
  const Scenario a = generate_scenario(11, 5, 10, 4, 24);
  const Scenario b = generate_scenario(11, 5, 10, 4, 24);
  CHECK(scenario_to_json(a).dump() == scenario_to_json(b).dump());
  CHECK(scenario_to_json(generate_scenario(12, 5, 10, 4, 24)).dump() != scenario_to_json(a).dump());
  CHECK(a.agents.size() == 5);
  CHECK(a.objects.size() == 10);
  for (const auto& t : a.agents) CHECK(t.trajectory.size() == 4);
  for (const auto& t : a.objects) CHECK(t.trajectory.size() == 4);

  const Scenario empty = generate_scenario(3, 2, 0, 1, 20);
  CHECK(empty.objects.empty());

  // every object seen by someone at tick 0, no overlap
  const auto objs = a.objects_at(0);
  for (std::size_t i = 0; i < objs.size(); ++i) {
    bool seen = false;
    for (const auto& ag : a.agents)
      for (const auto& v : visible_objects(a, ag.id, 0)) seen |= v.object.id == objs[i].id;
    CHECK(seen);
    for (std::size_t j = 0; j < i; ++j)
      for (const auto& c : objs[j].corners()) CHECK_FALSE(objs[i].contains(c));
  }

  CHECK_THROWS_AS(generate_scenario(1, 0, 1, 1, 20), InvalidInput);
  ScenarioOptions crowded;
  crowded.agent_radius = 1.0;
  crowded.min_agent_separation = 5.0;
  CHECK_THROWS_AS(generate_scenario(1, 4, 1, 1, 20, crowded), GenerationError);
  CHECK_THROWS_AS(generate_scenario(1, 1, 500, 1, 10), GenerationError);
}

TEST_CASE("agents within communication range at area 60") {
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    ScenarioOptions opt;
    opt.sensing_range = 40;  // keeps the visibility re-placement loop short at this area
    const Scenario sc = generate_scenario(seed, 5, 4, 1, 60, opt);
    for (const auto& a : sc.agents)
      for (const auto& b : sc.agents)
        CHECK((a.trajectory[0].translation() - b.trajectory[0].translation()).norm() < 70.0);
  }
}

TEST_CASE("scenario json round trip") {
  const Scenario a = generate_scenario(5, 3, 6, 3, 24);
  const Scenario b = scenario_from_json(scenario_to_json(a));
  CHECK(scenario_to_json(b).dump() == scenario_to_json(a).dump());
}

TEST_CASE("perturb_pose") {
  Rng rng(1);
  const Pose2 p(1, 2, 0.3);
  CHECK(perturb_pose(p, {0, 0}, rng) == p);
  CHECK_THROWS_AS(perturb_pose(p, {-1, 0}, rng), InvalidInput);

  const int n = 10000;
  double sx = 0, sxx = 0, sy = 0, syy = 0;
  for (int i = 0; i < n; ++i) {
    const Pose2 q = perturb_pose(Pose2(), {0.6, 0.6}, rng);
    sx += q.x;
    sxx += q.x * q.x;
    sy += q.yaw;
    syy += q.yaw * q.yaw;
  }
  const double mx = sx / n, sdx = std::sqrt(sxx / n - mx * mx);
  CHECK(sdx >= 0.57);
  CHECK(sdx <= 0.63);
  const double my = sy / n, sdy = std::sqrt(syy / n - my * my);
  CHECK(std::abs(my) < 3 * sdy / std::sqrt(double(n)));
  CHECK(sdy == doctest::Approx(deg2rad(0.6)).epsilon(0.05));
}

TEST_CASE("visibility") {
  const Eigen::Vector2d eye(0, 0);
  const WorldObject target = box(3, 0, 0, 2, 2);
  CHECK(visibility(eye, target, {}, 9.6) == 1.0);

  const WorldObject far = box(12, 0, 0, 2, 2);
  CHECK(visibility(eye, far, {}, 9.6) == 0.0);

  // target fully behind a wide wall on the viewing axis
  const WorldObject behind = box(10, 0, 0, 2, 2);
  const WorldObject wall[] = {box(5, 0, 0, 8, 1)};
  CHECK(visibility(eye, behind, wall, 20) == 0.0);

  // partly hidden behind a narrow post
  const WorldObject post[] = {box(5, 0, 0, 0.6, 0.6)};
  const double partial = visibility(eye, behind, post, 20);
  CHECK(partial > 0.0);
  CHECK(partial < 1.0);

  double last = 1.0;
  for (double w = 0.1; w <= 8.0; w += 0.1) {
    const WorldObject occ[] = {box(5, 0.3, 0, w, 1)};
    const double v = visibility(eye, behind, occ, 20);
    CHECK(v <= last);
    last = v;
  }
  CHECK(last == 0.0);
}

TEST_CASE("snapshot and latency") {
  const Scenario sc = one_mover(1.0, 5);
  const Observation now = snapshot(sc, 0, 4, 0);
  REQUIRE(now.objects.size() == 1);
  CHECK(now.tick == 4);
  CHECK(now.objects[0].object.center.x == 8.0);

  const Observation lagged = snapshot(sc, 0, 4, 2);
  REQUIRE(lagged.objects.size() == 1);
  CHECK(lagged.tick == 2);
  CHECK(now.objects[0].object.center.x - lagged.objects[0].object.center.x == doctest::Approx(2.0));

  const Scenario still = one_mover(0.0, 5);
  const auto a = snapshot(still, 0, 4, 0), b = snapshot(still, 0, 4, 3);
  CHECK(a.objects[0].object.center == b.objects[0].object.center);
  CHECK(a.objects[0].visibility == b.objects[0].visibility);

  CHECK_THROWS_AS(snapshot(sc, 0, 1, 2), InvalidInput);
  CHECK_THROWS_AS(snapshot(sc, 0, 5, 0), InvalidInput);
  CHECK_THROWS_AS(snapshot(sc, 0, 2, -1), InvalidInput);
}

TEST_CASE("object corners are counter-clockwise") {
  const auto c = box(1, 2, 0.7, 2, 4).corners();
  double area = 0;
  for (std::size_t i = 0; i < 4; ++i) area += c[i].x() * c[(i + 1) % 4].y() - c[i].y() * c[(i + 1) % 4].x();
  CHECK(area / 2 == doctest::Approx(8.0));
}
