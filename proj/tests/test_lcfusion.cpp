#include <doctest.h>

#include "coop/lcfusion.hpp"
#include "oracles.hpp"

using namespace coop;

namespace {

constexpr Index kC = 8, kH = 16, kW = 16;

struct Inputs {
  Grid f_coll, s_coll, f_i, s_i;
};

Inputs random_inputs(std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  return {oracle::random_grid<float>(rng, kC, kH, kW), oracle::random_grid<float>(rng, 1, kH, kW, 0, 1),
          oracle::random_grid<float>(rng, kC, kH, kW), oracle::random_grid<float>(rng, 1, kH, kW, 0, 1)};
}

ConvSpec<float> head(std::uint64_t seed) {
  Rng rng(seed);
  return ConvSpec<float>::seeded(kC, 7, 1, rng);
}

std::uint64_t checksum(const Grid& g) { return fnv1a(g.data().data(), sizeof(float) * std::size_t(g.size())); }

}  // namespace

TEST_CASE("confidence_mask") {
  const Inputs in = random_inputs(1);
  const Grid ones = Grid::Constant(1, kH, kW, 1.0f), zeros(1, kH, kW), half = Grid::Constant(1, kH, kW, 0.5f);
  auto [a, b] = confidence_mask(in.f_coll, ones, in.f_i, ones);
  CHECK(a == in.f_coll);
  CHECK(b == in.f_i);
  auto [c, d] = confidence_mask(in.f_coll, zeros, in.f_i, zeros);
  CHECK(c.data().isZero());
  CHECK(d.data().isZero());
  auto [e, f] = confidence_mask(in.f_coll, half, in.f_i, half);
  CHECK(e.data() == (in.f_coll.data() * 0.5f));
  CHECK_THROWS_AS(confidence_mask(in.f_coll, Grid(1, kH, kW + 1), in.f_i, ones), InvalidInput);
}

TEST_CASE("weights are deterministic and finite") {
  const LcWeights a = LcWeights::seeded(kC, 3), b = LcWeights::seeded(kC, 3);
  CHECK(a.all_finite());
  CHECK(a.attn_q.weights == b.attn_q.weights);
  CHECK(a.out_conv.weights == b.out_conv.weights);
  CHECK(a.ssm.b_proj == b.ssm.b_proj);
  CHECK_FALSE(a.out_conv.weights == LcWeights::seeded(kC, 4).out_conv.weights);
  CHECK(a.macs(kH, kW) > 0);
}

TEST_CASE("masked-out collaborative input has no effect") {
  const LcWeights w = LcWeights::seeded(kC, 5);
  const Inputs in = random_inputs(2);
  const Grid zero_s(1, kH, kW);
  const LcOutput a = lc_forward(in.f_coll, zero_s, in.f_i, in.s_i, w, head(1));
  Grid other = in.f_coll;
  other.data() *= -3.0f;
  other.data().array() += 0.25f;
  const LcOutput b = lc_forward(other, zero_s, in.f_i, in.s_i, w, head(1));
  CHECK(checksum(a.fused_feature) == checksum(b.fused_feature));
  const LcOutput c = lc_forward(Grid(kC, kH, kW), zero_s, in.f_i, in.s_i, w, head(1));
  CHECK(checksum(a.fused_feature) == checksum(c.fused_feature));
}

TEST_CASE("zero inputs with zero biases give zero output") {
  LcConfig cfg;
  cfg.zero_bias = true;
  const LcWeights w = LcWeights::seeded(kC, 6, cfg);
  const Grid z(kC, kH, kW), s = Grid::Constant(1, kH, kW, 1.0f);
  const LcOutput out = lc_forward(z, s, z, s, w, head(2));
  CHECK(out.fused_feature.data().isZero());
}

TEST_CASE("gate lies strictly inside (0, 1)") {
  const LcWeights w = LcWeights::seeded(kC, 7);
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    Inputs in = random_inputs(seed + 10);
    in.f_coll.data() *= float(1 + 50 * seed);  // drive the gate towards saturation
    in.f_i.data() *= float(1 + 50 * seed);
    const LcOutput out = lc_forward(in.f_coll, in.s_coll, in.f_i, in.s_i, w, head(3));
    CHECK(out.gate.data().minCoeff() > 0.0f);
    CHECK(out.gate.data().maxCoeff() < 1.0f);
    CHECK(out.fused_feature.all_finite());
    CHECK(out.detmaps.cls.all_finite());
  }
}

TEST_CASE("golden output") {
  const LcWeights w = LcWeights::seeded(kC, 42);
  const Inputs in = random_inputs(42);
  const LcOutput out = lc_forward(in.f_coll, in.s_coll, in.f_i, in.s_i, w, head(42));
  const std::uint64_t got = checksum(out.fused_feature);
  CHECK(got == 0x3c5517bd8130f198ULL);
}

TEST_CASE("Lipschitz bound") {
  // empirical ratio |dF| / |dx| under small perturbations, frozen with margin
  const LcWeights w = LcWeights::seeded(kC, 8);
  std::mt19937_64 rng(8);
  double worst = 0;
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    const Inputs in = random_inputs(100 + seed);
    Grid f_coll = in.f_coll, f_i = in.f_i;
    const Grid d1 = oracle::random_grid<float>(rng, kC, kH, kW, -1e-2, 1e-2);
    const Grid d2 = oracle::random_grid<float>(rng, kC, kH, kW, -1e-2, 1e-2);
    f_coll.data() += d1.data();
    f_i.data() += d2.data();
    const LcOutput a = lc_forward(in.f_coll, in.s_coll, in.f_i, in.s_i, w, head(4));
    const LcOutput b = lc_forward(f_coll, in.s_coll, f_i, in.s_i, w, head(4));
    const double dx = std::sqrt(double(d1.data().squaredNorm() + d2.data().squaredNorm()));
    const double dy = (b.fused_feature.data() - a.fused_feature.data()).cast<double>().norm();
    worst = std::max(worst, dy / dx);
  }
  CHECK(worst <= 0.5);
}

TEST_CASE("teacher equals student when every cell is sent") {
  const LcWeights w = LcWeights::seeded(kC, 9);
  std::mt19937_64 rng(9);
  const Grid f_i = oracle::random_grid<float>(rng, kC, kH, kW);
  const Grid s_i = oracle::random_grid<float>(rng, 1, kH, kW, 0, 1);
  const std::vector<Grid> feats = {oracle::random_grid<float>(rng, kC, kH, kW)};
  const std::vector<Grid> s = {oracle::random_grid<float>(rng, 1, kH, kW, 0, 1)};
  const std::vector<Grid> weights = {Grid::Constant(1, kH, kW, 1.0f)};
  const auto [f_coll, s_coll] = dense_collab(feats, s, weights);
  CHECK(f_coll == feats[0]);
  const Grid teacher = teacher_forward(feats, s, weights, f_i, s_i, w);
  const LcOutput student = lc_forward(f_coll, s_coll, f_i, s_i, w, head(5));
  CHECK(align_loss(student.fused_feature, teacher) <= 1e-10);

  // no collaborators: teacher runs with a zero collaborative branch
  const Grid t0 = teacher_forward({}, {}, {}, f_i, s_i, w);
  const LcOutput s0 = lc_forward(Grid(kC, kH, kW), Grid(1, kH, kW), f_i, s_i, w, head(5));
  CHECK(align_loss(s0.fused_feature, t0) == 0.0);

  // dropping half of the collaborative cells makes the student differ
  Grid half = s_coll;
  for (Index i = 0; i < half.cells(); i += 2) half.data()(0, i) = 0.0f;
  Grid sparse = f_coll;
  for (Index i = 0; i < sparse.cells(); i += 2) sparse.column(i).setZero();
  const LcOutput dropped = lc_forward(sparse, half, f_i, s_i, w, head(5));
  CHECK(align_loss(dropped.fused_feature, teacher) > 0.0);
}

TEST_CASE("align_loss arithmetic") {
  const Grid a = Grid::Constant(2, 2, 2, 1.0f);
  CHECK(align_loss(a, a) == 0.0);
  CHECK(align_loss(a, Grid(2, 2, 2)) == 1.0);
  Grid b = a;
  b.data().row(0).array() += 2.0f;
  CHECK(align_loss(b, a) == 2.0);
  CHECK_THROWS_AS(align_loss(a, Grid(1, 2, 2)), InvalidInput);
}

TEST_CASE("harmonize keeps the shape") {
  const LcWeights w = LcWeights::seeded(kC, 10);
  std::mt19937_64 rng(11);
  const Grid f = oracle::random_grid<float>(rng, kC, kH, kW);
  const Grid h = harmonize(f, w);
  CHECK(h.same_shape(f));
  CHECK(h.all_finite());
  CHECK_THROWS_AS(harmonize(oracle::random_grid<float>(rng, kC, 10, 10), w), InvalidInput);
}
