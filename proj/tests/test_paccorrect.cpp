#include <doctest.h>

#include <cmath>
#include <numbers>

#include "coop/paccorrect.hpp"
#include "oracles.hpp"
#include "scene_probe.hpp"

using namespace coop;

namespace {

const GridShape kShape{};

VisibleObject visible(double x, double y, double yaw, double vis = 1.0) {
  VisibleObject v;
  v.object.center = Pose2(x, y, yaw);
  v.object.width = 2.0;
  v.object.length = 4.4;
  v.visibility = vis;
  return v;
}

DetMaps maps_of(std::vector<VisibleObject> objs, Pose2 pose = {}) {
  FrontendConfig cfg;
  static const FrontendWeights weights = FrontendWeights::seeded(cfg.shape, 1);
  Observation o;
  o.pose = pose;
  o.objects = std::move(objs);
  return detection_head(encode(o, cfg, weights), o, cfg, weights);
}

PacWeights cosine_weights(bool identity = true) {
  PacConfig cfg;
  cfg.attention = AttentionMode::kCosine;
  cfg.identity_correct = identity;
  return PacWeights::seeded(1, cfg);
}

std::uint64_t checksum(const Grid& g) { return fnv1a(g.data().data(), sizeof(float) * std::size_t(g.size())); }

DetMaps fixture_a() { return maps_of({visible(2.0, 1.0, 0.3), visible(-4.0, -3.0, 1.2, 0.6)}); }
DetMaps fixture_b() { return maps_of({visible(2.4, 1.2, 0.35), visible(5.0, 6.0, -0.5, 0.9)}); }

}  // namespace

TEST_CASE("weights") {
  const PacWeights a = PacWeights::seeded(3), b = PacWeights::seeded(3);
  CHECK(a.all_finite());
  CHECK(a.attn_ego == b.attn_ego);
  CHECK(a.offset_stack.size() == 4);
  CHECK(a.offset_stack.back().out_channels == 2);
  CHECK(a.descriptor_dims() == 56);
  CHECK_FALSE(a.attn_ego == PacWeights::seeded(4).attn_ego);
  PacConfig bad;
  bad.pe_dims = 3;
  CHECK_THROWS_AS(PacWeights::seeded(1, bad), InvalidInput);
}

TEST_CASE("cosine attention on identical maps") {
  const PacWeights w = cosine_weights();
  const DetMaps m = fixture_a();
  const Grid a = cross_agent_attention(m, m, w);
  const Eigen::MatrixXf d = descriptors(m, w);
  const float top = sigmoid(4.0f);
  int occupied = 0;
  for (Index i = 0; i < a.cells(); ++i) {
    if (d.col(i).norm() == 0.0f) continue;
    ++occupied;
    CHECK(a.data()(0, i) == doctest::Approx(top).epsilon(1e-5));
  }
  CHECK(occupied > 0);
}

TEST_CASE("attention drops where the collaborator sees nothing") {
  for (const AttentionMode mode : {AttentionMode::kCosine, AttentionMode::kLearned}) {
    PacConfig cfg;
    cfg.attention = mode;
    const PacWeights w = PacWeights::seeded(2, cfg);
    const DetMaps ego = fixture_a();
    const DetMaps empty = DetMaps::background(kShape, 1e-4);
    const Grid matched = cross_agent_attention(ego, ego, w);
    const Grid unmatched = cross_agent_attention(ego, empty, w);
    const Eigen::Vector2d c = point_to_cell(kShape.height, kShape.width, kShape.cell_size, {2.0, 1.0});
    const Index h = Index(std::lround(c.y())), col = Index(std::lround(c.x()));
    if (mode == AttentionMode::kCosine) CHECK(unmatched(0, h, col) < matched(0, h, col));
    CHECK(unmatched.data().minCoeff() > 0.0f);
    CHECK(matched.data().maxCoeff() < 1.0f);
  }
  CHECK_THROWS_AS(cross_agent_attention(fixture_a(), DetMaps::background({16, 8, 8, 0.4}, 1e-4), cosine_weights()),
                  InvalidInput);
}

TEST_CASE("learned attention golden output") {
  const PacWeights w = PacWeights::seeded(5);
  const Grid a = cross_agent_attention(fixture_a(), fixture_b(), w);
  CHECK(a.data().minCoeff() > 0.0f);
  CHECK(a.data().maxCoeff() < 1.0f);
  CHECK(checksum(a) == 0x8710a01f5457110fULL);
}

TEST_CASE("score_maps") {
  const DetMaps m = fixture_a();
  const Grid ones = Grid::Constant(1, kShape.height, kShape.width, 1.0f);
  const DetMaps same = score_maps(m, ones);
  CHECK(same.reg == m.reg);
  for (Index i = 0; i < m.cls.cells(); ++i)
    CHECK(sigmoid(same.cls.data()(0, i)) == doctest::Approx(sigmoid(m.cls.data()(0, i))).epsilon(1e-5));

  const DetMaps zero = score_maps(m, Grid(1, kShape.height, kShape.width));
  CHECK(zero.reg.data().isZero());
  CHECK((zero.cls.data().array() == logit(1e-4f)).all());

  const DetMaps half = score_maps(m, Grid::Constant(1, kShape.height, kShape.width, 0.5f));
  for (Index i = 0; i < m.cls.cells(); ++i) {
    const double p = sigmoid(double(m.cls.data()(0, i)));
    if (p < 2e-4) continue;  // clamped at the floor
    CHECK(sigmoid(double(half.cls.data()(0, i))) == doctest::Approx(0.5 * p).epsilon(1e-4));
  }
  CHECK(half.reg.data() == (m.reg.data() * 0.5f));

  std::mt19937_64 rng(3);
  const Grid att = oracle::random_grid<float>(rng, 1, kShape.height, kShape.width, 0.01, 0.99);
  const DetMaps s = score_maps(m, att);
  CHECK(s.reg.data().cwiseAbs().maxCoeff() <= m.reg.data().cwiseAbs().maxCoeff());
  CHECK(sigmoid(s.cls).data().maxCoeff() <= sigmoid(m.cls).data().maxCoeff());
  CHECK_THROWS_AS(score_maps(m, Grid(2, kShape.height, kShape.width)), InvalidInput);
}

TEST_CASE("predict_offsets") {
  PacWeights w = PacWeights::seeded(6);
  const DetMaps a = fixture_a(), b = fixture_b();
  const Grid off = predict_offsets(a, b, w);
  CHECK(off.channels() == 2);
  CHECK(off.all_finite());
  CHECK(checksum(off) == 0x72ef47d2af490051ULL);
  CHECK_FALSE(predict_offsets(b, a, w) == off);

  for (auto& layer : w.offset_stack) {
    layer.weights.setZero();
    layer.bias.setZero();
  }
  CHECK(predict_offsets(a, b, w).data().isZero());
}

TEST_CASE("oracle_offsets") {
  CHECK(oracle_offsets(Pose2(), kShape).data().isZero());

  const Grid t = oracle_offsets(Pose2(2 * kShape.cell_size, 0, 0), kShape);
  for (Index i = 0; i < t.cells(); ++i) {
    CHECK(t.data()(0, i) == doctest::Approx(2.0).epsilon(1e-6));
    CHECK(std::abs(t.data()(1, i)) < 1e-6);
  }

  // 5° about the grid centre: |Δp| = 2 r sin(2.5°) / cell_size
  const double yaw = 5.0 * std::numbers::pi / 180.0;
  const Grid r = oracle_offsets(Pose2(0, 0, yaw), kShape);
  const Index cells[][2] = {{24, 24}, {24, 47}, {0, 0}};
  const double radius_m[] = {std::hypot(0.2, 0.2), std::hypot(0.2, 9.4), std::hypot(9.4, 9.4)};
  for (int k = 0; k < 3; ++k) {
    const Index h = cells[k][0], w = cells[k][1];
    const double mag = std::hypot(double(r(0, h, w)), double(r(1, h, w)));
    CHECK(mag == doctest::Approx(2 * radius_m[k] * std::sin(yaw / 2) / kShape.cell_size).epsilon(1e-5));
  }
}

TEST_CASE("correct") {
  const PacWeights w = cosine_weights(true);
  const DetMaps m = fixture_a();
  const DetMaps same = correct(m, Grid(2, kShape.height, kShape.width), w);
  CHECK(same.reg == m.reg);
  for (Index i = 0; i < m.cls.cells(); ++i)
    CHECK(sigmoid(same.cls.data()(0, i)) == doctest::Approx(sigmoid(m.cls.data()(0, i))).epsilon(1e-5));

  // integer offsets equal index-shifted maps
  Grid off(2, kShape.height, kShape.width);
  off.channel(0).setConstant(2.0f);
  off.channel(1).setConstant(-1.0f);
  const DetMaps shifted = correct(m, off, w);
  for (Index h = 1; h < kShape.height; ++h)
    for (Index x = 0; x + 2 < kShape.width; ++x) {
      for (Index c = 0; c < DetMaps::kNumReg; ++c) CHECK(shifted.reg(c, h, x) == m.reg(c, h - 1, x + 2));
      CHECK(sigmoid(shifted.cls(0, h, x)) == doctest::Approx(sigmoid(m.cls(0, h - 1, x + 2))).epsilon(1e-5));
    }
  CHECK_THROWS_AS(correct(m, Grid(3, kShape.height, kShape.width), w), InvalidInput);
}

TEST_CASE("pac_fuse") {
  const PacWeights w = PacWeights::seeded(8);
  const DetMaps a = fixture_a(), b = fixture_b();
  const DetMaps same = pac_fuse(a, a, w, PacMode::kOracle);
  CHECK(same.cls == a.cls);
  CHECK(same.reg == a.reg);
  const DetMaps bg = DetMaps::background(kShape, 1e-4);
  const DetMaps dom = pac_fuse(bg, b, w, PacMode::kOracle);
  CHECK(dom.cls == b.cls);
  CHECK(pac_fuse(b, bg, w, PacMode::kOracle).cls == b.cls);

  const DetMaps learned = pac_fuse(a, b, w, PacMode::kLearned);
  CHECK(learned.cls.all_finite());
  CHECK(checksum(learned.stacked()) == 0x98a208c78ab8c050ULL);
  CHECK_THROWS_AS(pac_fuse(a, DetMaps::background({16, 8, 8, 0.4}, 1e-4), w, PacMode::kOracle), InvalidInput);
}

TEST_CASE("max_merge") {
  const DetMaps a = fixture_a(), b = fixture_b();
  const DetMaps pair[] = {a, b};
  const DetMaps m = max_merge(pair);
  for (Index i = 0; i < m.cls.cells(); ++i) {
    const bool from_b = b.cls.data()(0, i) > a.cls.data()(0, i);
    CHECK(m.cls.data()(0, i) == std::max(a.cls.data()(0, i), b.cls.data()(0, i)));
    CHECK(m.reg.column(i) == (from_b ? b : a).reg.column(i));
  }
  CHECK_THROWS_AS(max_merge({}), InvalidInput);
}

TEST_CASE("zero-error fixpoint") {
  const PacWeights w = cosine_weights(true);
  const DetMaps ego = fixture_a(), collab = fixture_b();
  const CorrectionResult r = pac_correct(ego, collab, w, PacMode::kOracle, Pose2());
  CHECK(r.offsets.data().isZero());
  const auto before = decode_boxes(collab, 0.1), after = decode_boxes(r.corrected, 0.1);
  REQUIRE(before.size() == after.size());
  for (std::size_t i = 0; i < before.size(); ++i) {
    CHECK(std::abs(before[i].cx - after[i].cx) / kShape.cell_size <= 1e-6);
    CHECK(std::abs(before[i].cy - after[i].cy) / kShape.cell_size <= 1e-6);
  }
}

TEST_CASE("oracle correction reduces centre error on every scene") {
  PipelineConfig cfg;
  const Models models = Models::build(cfg);
  ScenarioParams p;
  p.ticks = 1;
  for (const double sigma : {0.2, 0.4, 0.6}) {
    int scored_scenes = 0;
    for (std::uint64_t seed = 0; seed < 100; ++seed) {
      const Scenario sc = probe::scene(1000 + seed, p);
      TickOptions opt;
      opt.noise = {sigma, sigma};
      const TickResult r = run_tick(sc, opt, cfg, models);
      double before = 0, after = 0;
      int n = 0;
      for (const auto& c : probe::check_objects(sc, r, cfg, 0)) {
        // faint objects can fall under the score threshold once resampled
        if (!std::isfinite(c.before_cells) || !std::isfinite(c.after_cells)) continue;
        before += c.before_cells;
        after += c.after_cells;
        ++n;
      }
      if (n == 0) continue;
      ++scored_scenes;
      CHECK_MESSAGE(after < before, "sigma ", sigma, " seed ", seed);
    }
    CHECK(scored_scenes >= 90);
  }
}
