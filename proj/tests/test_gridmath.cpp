#include <doctest.h>

#include <cstring>
#include <numbers>
#include <set>

#include "coop/gridmath.hpp"
#include "oracles.hpp"

using namespace coop;

TEST_CASE("grid construction and layout") {
  Grid g(2, 3, 4, 0.5);
  CHECK(g.size() == 24);
  g(1, 2, 3) = 5.0f;
  CHECK(g.data()(1, 2 * 4 + 3) == 5.0f);
  CHECK_THROWS_AS(Grid(1, 2, 2, 0.0), InvalidInput);
  CHECK_THROWS_AS(Grid(1, 2, 2, -1.0), InvalidInput);
  CHECK_THROWS_AS(g.slice(1, 2), InvalidInput);
}

TEST_CASE("conv2d basic cases") {
  std::mt19937_64 rng(1);
  auto spec = ConvSpec<float>::seeded(1, 2, 3, rng);
  const Grid zero(1, 3, 3);
  CHECK(conv2d(zero, spec).data().isZero());

  const Grid x = oracle::random_grid<float>(rng, 3, 5, 5);
  CHECK(conv2d(x, ConvSpec<float>::identity(3)) == x);

  CHECK_THROWS_AS(conv2d(x, spec), InvalidInput);
  CHECK_THROWS_AS(ConvSpec<float>::zeros(1, 1, 2), InvalidInput);
  CHECK_THROWS_AS(ConvSpec<float>::zeros(2, 3, 3, true), InvalidInput);
}

TEST_CASE("conv2d matches the nested-loop reference") {
  std::mt19937_64 rng(2);
  for (int trial = 0; trial < 20; ++trial) {
    const Index k = (trial % 3) * 2 + 1;
    const bool dw = trial % 4 == 3;
    const Index in = 2 + trial % 3, out = dw ? in : 1 + trial % 4;
    auto spec = ConvSpec<double>::seeded(in, out, k, rng, dw, 1.0, 0.3);
    const GridD x = oracle::random_grid(rng, in, 5 + trial % 3, 4 + trial % 5);
    CHECK(oracle::rel_error(conv2d(x, spec), oracle::conv2d(x, spec)) < 1e-12);
  }
  // single precision instantiation against the double reference
  auto spec = ConvSpec<double>::seeded(2, 3, 3, rng);
  const GridD x = oracle::random_grid(rng, 2, 5, 5);
  ConvSpec<float> fs = ConvSpec<float>::zeros(2, 3, 3);
  fs.weights = spec.weights.cast<float>();
  CHECK(oracle::rel_error(conv2d(x.cast<float>(), fs), oracle::conv2d(x, spec)) < 1e-6);
}

TEST_CASE("conv2d is linear") {
  std::mt19937_64 rng(3);
  auto spec = ConvSpec<double>::seeded(3, 4, 3, rng);
  const GridD a = oracle::random_grid(rng, 3, 6, 6), b = oracle::random_grid(rng, 3, 6, 6);
  GridD mix = a;
  mix.data() = 2.5 * a.data() - 0.75 * b.data();
  GridD expect = conv2d(a, spec);
  expect.data() = 2.5 * expect.data() - 0.75 * conv2d(b, spec).data();
  CHECK(oracle::rel_error(conv2d(mix, spec), expect) < 1e-6);
}

TEST_CASE("bilinear_sample") {
  GridD g(1, 2, 2);
  g(0, 0, 0) = 0;
  g(0, 0, 1) = 1;
  g(0, 1, 0) = 2;
  g(0, 1, 1) = 3;
  CHECK(bilinear_sample(g, 1, 1)(0) == 3);
  CHECK(bilinear_sample(g, 0.5, 0)(0) == doctest::Approx(0.5));
  CHECK(bilinear_sample(g, 0.5, 0.5)(0) == doctest::Approx(1.5));
  CHECK(bilinear_sample(g, 5, 5)(0) == 0);
  CHECK(bilinear_sample(g, -3, 0)(0) == 0);
  CHECK(bilinear_sample(g, std::nan(""), 0)(0) == 0);
  // half a cell outside: half the edge value
  CHECK(bilinear_sample(g, 1.5, 0)(0) == doctest::Approx(0.5));
}

TEST_CASE("deform_resample") {
  std::mt19937_64 rng(4);
  const GridD x = oracle::random_grid(rng, 3, 6, 7);
  CHECK(deform_resample(x, x.zeros_like(2)) == x);

  GridD shift = x.zeros_like(2);
  shift.channel(0).setOnes();
  const GridD s = deform_resample(x, shift);
  for (Index c = 0; c < 3; ++c)
    for (Index h = 0; h < 6; ++h) {
      for (Index w = 0; w + 1 < 7; ++w) CHECK(s(c, h, w) == x(c, h, w + 1));
      CHECK(s(c, h, 6) == 0.0);
    }

  for (int trial = 0; trial < 10; ++trial) {
    const GridD off = oracle::random_grid(rng, 2, 6, 7, -1.0, 1.0);
    CHECK(oracle::rel_error(deform_resample(x, off), oracle::deform(x, off)) < 1e-6);
  }
  CHECK_THROWS_AS(deform_resample(x, x.zeros_like(3)), InvalidInput);
  CHECK_THROWS_AS(deform_resample(x, GridD(2, 5, 7)), InvalidInput);
}

TEST_CASE("warp_grid") {
  std::mt19937_64 rng(5);
  const GridD x = oracle::random_grid(rng, 2, 8, 8, -1, 1, 0.5);
  CHECK(warp_grid(x, Pose2::identity()) == x);

  // Source frame sits one cell along +x: content moves one column right.
  const GridD t = warp_grid(x, Pose2(0.5, 0.0, 0.0));
  for (Index h = 0; h < 8; ++h) {
    CHECK(t(0, h, 0) == 0.0);
    for (Index w = 1; w < 8; ++w) CHECK(t(0, h, w) == x(0, h, w - 1));
  }

  // 90° rotation of a single hot cell.
  GridD hot(1, 9, 9, 1.0);
  hot(0, 4, 7) = 1.0;  // point (3, 0) in metres
  const GridD r = warp_grid(hot, Pose2(0, 0, std::numbers::pi / 2));
  // (3, 0) rotated by +90° is (0, 3): column 4, row 7
  CHECK(r(0, 7, 4) == doctest::Approx(1.0).epsilon(1e-9));
  CHECK(r.data().sum() == doctest::Approx(1.0).epsilon(1e-9));
}

TEST_CASE("warp_grid round trip on smooth grids") {
  const Index n = 32;
  GridD x(1, n, n, 0.4);
  for (Index h = 0; h < n; ++h)
    for (Index w = 0; w < n; ++w) x(0, h, w) = std::sin(0.3 * double(w)) * std::cos(0.25 * double(h));
  std::mt19937_64 rng(6);
  std::normal_distribution<double> t(0, 0.6), yaw(0, 0.2);
  for (int trial = 0; trial < 10; ++trial) {
    const Pose2 p(t(rng), t(rng), yaw(rng));
    const GridD back = warp_grid(warp_grid(x, p), p.inverse());
    // interior: at least 2 cells beyond the region the pose moves off-grid
    const double margin = 2.0 + (std::hypot(p.x, p.y) + std::abs(p.yaw) * n * 0.4 * 0.75) / 0.4;
    double worst = 0;
    for (Index h = 0; h < n; ++h)
      for (Index w = 0; w < n; ++w)
        if (h >= margin && w >= margin && h < n - margin && w < n - margin)
          worst = std::max(worst, std::abs(back(0, h, w) - x(0, h, w)));
    CHECK(worst <= 0.15);
  }
}

TEST_CASE("pooling") {
  GridD g(1, 4, 4, 0.5);
  for (Index i = 0; i < 16; ++i) g.data()(0, i) = double(i);
  const GridD p = avg_pool(g, 2);
  CHECK(p.height() == 2);
  CHECK(p.cell_size() == 1.0);
  CHECK(p(0, 0, 0) == doctest::Approx((0 + 1 + 4 + 5) / 4.0));
  CHECK(upsample_nearest(p, 2)(0, 3, 3) == p(0, 1, 1));
  CHECK_THROWS_AS(avg_pool(g, 3), InvalidInput);

  GridD m(1, 5, 5);
  m(0, 2, 2) = 1;
  CHECK(max_pool3x3(m).data().sum() == 9);
  m(0, 0, 0) = 1;
  CHECK(max_pool3x3(m)(0, 1, 1) == 1);
}

TEST_CASE("selective_scan") {
  std::mt19937_64 rng(7);
  const Index C = 3, H = 4, W = 5;
  auto params = SsmParams<double>::seeded(4, C, rng);
  const GridD zf = oracle::random_grid(rng, C, H, W), zi = oracle::random_grid(rng, C, H, W);

  // dt = 0: state never leaves zero
  CHECK(selective_scan_steps(zf, zf.zeros_like(), zi, params).data().isZero());

  // A = 0, dt = 1, C_t = 1: running sum of B_t x_t
  SsmParams<double> p1;
  p1.a = Eigen::VectorXd::Zero(1);
  p1.b_proj = Eigen::MatrixXd::Constant(1, C, 0.5);
  p1.c_proj = Eigen::MatrixXd::Ones(1, C);
  const GridD ones = GridD::Constant(C, H, W, 1.0 / double(C));  // so C_t = 1
  GridD dt = GridD::Constant(C, H, W, 1.0);
  const GridD y = selective_scan_steps(zf, dt, ones, p1);
  for (Index c = 0; c < C; ++c) {
    double run = 0;
    for (Index t = 0; t < H * W; ++t) {
      run += 0.5 * zf.data().col(t).sum() * zf.data()(c, t);
      CHECK(y.data()(c, t) == doctest::Approx(run).epsilon(1e-12));
    }
  }

  for (int trial = 0; trial < 10; ++trial) {
    const GridD dl = oracle::random_grid(rng, C, H, W, -3, 2);
    CHECK(oracle::rel_error(selective_scan(zf, dl, zi, params), oracle::scan(zf, dl, zi, params)) < 1e-6);
  }

  CHECK_THROWS_AS(selective_scan(zf, GridD(C, H, W + 1), zi, params), InvalidInput);
  SsmParams<double> bad = params;
  bad.a(0) = 0.5;
  CHECK_THROWS_AS(selective_scan(zf, zf, zi, bad), InvalidInput);
  CHECK_THROWS_AS(selective_scan_steps(zf, GridD::Constant(C, H, W, -1.0), zi, params), InvalidInput);
}

TEST_CASE("selective_scan stays finite for extreme step logits") {
  std::mt19937_64 rng(8);
  auto params = SsmParams<float>::seeded(16, 4, rng);
  const Grid zf = oracle::random_grid<float>(rng, 4, 6, 6, -3, 3), zi = oracle::random_grid<float>(rng, 4, 6, 6);
  const Grid dl = oracle::random_grid<float>(rng, 4, 6, 6, -80, 80);
  CHECK(selective_scan(zf, dl, zi, params).all_finite());
}

TEST_CASE("pos_embed") {
  const double zero[] = {0.0};
  const auto e = pos_embed<double>(zero, 8);
  for (int k = 0; k < 4; ++k) {
    CHECK(e[std::size_t(2 * k)] == 0.0);
    CHECK(e[std::size_t(2 * k + 1)] == 1.0);
  }
  const double v[] = {0.7};
  const auto e2 = pos_embed<double>(v, 2);
  CHECK(e2[0] == std::sin(0.7));
  CHECK(e2[1] == std::cos(0.7));
  CHECK_THROWS_AS(pos_embed<double>(v, 3), InvalidInput);
  CHECK_THROWS_AS(pos_embed<double>(v, 0), InvalidInput);

  std::set<std::vector<double>> seen;
  for (int i = -100; i <= 100; ++i) {
    const double x[] = {0.1 * i};
    seen.insert(pos_embed<double>(x, 8));
  }
  CHECK(seen.size() == 201);
}

TEST_CASE("activations") {
  CHECK(sigmoid(0.0) == 0.5);
  CHECK(sigmoid(-1000.0) == 0.0);
  CHECK(sigmoid(1000.0) == 1.0);
  CHECK(logit(0.5) == 0.0);
  CHECK(softplus(-1e9) == 0.0);
  CHECK(softplus(0.0) == doctest::Approx(std::log(2.0)));
  CHECK(gelu(0.0) == 0.0);
  const GridD p = GridD::Constant(1, 1, 2, 1.0);
  CHECK(clamped_logit(p, 1e-4)(0, 0, 0) == doctest::Approx(logit(1 - 1e-4)));
}

TEST_CASE("kernels are pure") {
  std::mt19937_64 rng(9);
  auto spec = ConvSpec<float>::seeded(4, 4, 3, rng);
  const Grid x = oracle::random_grid<float>(rng, 4, 7, 7);
  const Grid a = conv2d(x, spec), b = conv2d(x, spec);
  CHECK(std::memcmp(a.data().data(), b.data().data(), sizeof(float) * std::size_t(a.size())) == 0);
  const Pose2 p(0.3, -0.2, 0.1);
  CHECK(warp_grid(x, p) == warp_grid(x, p));
}
