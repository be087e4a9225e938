#pragma once

// Dense grid kernels shared by every stage of the pipeline. All functions are
// pure, templated on the scalar type, and operate on BasicGrid values.

#include <algorithm>
#include <cmath>
#include <limits>
#include <span>
#include <vector>

#include <Eigen/Core>

#include "coop/error.hpp"
#include "coop/grid.hpp"
#include "coop/pose2.hpp"
#include "coop/rng.hpp"

namespace coop {

// ---------------------------------------------------------------------------
// Activations

template <typename Scalar>
Scalar sigmoid(Scalar x) {
  if (x >= Scalar(0)) return Scalar(1) / (Scalar(1) + std::exp(-x));
  const Scalar e = std::exp(x);
  return e / (Scalar(1) + e);
}

template <typename Scalar>
Scalar logit(Scalar p) {
  return std::log(p) - std::log1p(-p);
}

/// log(1 + e^x); exactly 0 at -inf.
template <typename Scalar>
Scalar softplus(Scalar x) {
  return std::max(x, Scalar(0)) + std::log1p(std::exp(-std::abs(x)));
}

template <typename Scalar>
Scalar gelu(Scalar x) {
  return Scalar(0.5) * x * (Scalar(1) + std::erf(x / std::sqrt(Scalar(2))));
}

template <typename Scalar>
BasicGrid<Scalar> sigmoid(const BasicGrid<Scalar>& g) {
  BasicGrid<Scalar> out = g;
  out.data() = g.data().unaryExpr([](Scalar v) { return sigmoid(v); });
  return out;
}

/// logit(clamp(p, eps, 1 - eps)), element-wise.
template <typename Scalar>
BasicGrid<Scalar> clamped_logit(const BasicGrid<Scalar>& p, double eps) {
  BasicGrid<Scalar> out = p;
  const Scalar lo = Scalar(eps), hi = Scalar(1.0 - eps);
  out.data() = p.data().unaryExpr([lo, hi](Scalar v) { return logit(std::clamp(v, lo, hi)); });
  return out;
}

template <typename Scalar>
BasicGrid<Scalar> gelu(BasicGrid<Scalar> g) {
  g.data() = g.data().unaryExpr([](Scalar v) { return gelu(v); });
  return g;
}

template <typename Scalar>
BasicGrid<Scalar> relu(BasicGrid<Scalar> g) {
  g.data() = g.data().cwiseMax(Scalar(0));
  return g;
}

// ---------------------------------------------------------------------------
// Convolution

/// Stride-1, zero-padded ("same") 2D convolution parameters.
///
/// Dense weights are stored as an out × (in·k·k) matrix with column index
/// c·k·k + i·k + j for input channel c and kernel tap (i, j). Depthwise
/// weights are channels × (k·k).
template <typename Scalar>
struct ConvSpec {
  using Matrix = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
  using Vector = Eigen::Matrix<Scalar, Eigen::Dynamic, 1>;

  Index kernel = 1;
  Index in_channels = 0;
  Index out_channels = 0;
  bool depthwise = false;
  Matrix weights;
  Vector bias;

  static ConvSpec zeros(Index in, Index out, Index k, bool depthwise = false) {
    if (k < 1 || k % 2 == 0) throw InvalidInput("conv kernel size must be odd");
    if (depthwise && in != out) throw InvalidInput("depthwise conv needs in == out channels");
    ConvSpec s;
    s.kernel = k;
    s.in_channels = in;
    s.out_channels = out;
    s.depthwise = depthwise;
    s.weights = Matrix::Zero(out, depthwise ? k * k : in * k * k);
    s.bias = Vector::Zero(out);
    return s;
  }

  /// Weights ~ N(0, gain²/fan_in); bias ~ N(0, bias_std²).
  static ConvSpec seeded(Index in, Index out, Index k, Rng& rng, bool depthwise = false,
                         double gain = 1.0, double bias_std = 0.0) {
    ConvSpec s = zeros(in, out, k, depthwise);
    const double fan_in = static_cast<double>(s.weights.cols());
    std::normal_distribution<double> w(0.0, gain / std::sqrt(fan_in));
    for (Index r = 0; r < s.weights.rows(); ++r)
      for (Index c = 0; c < s.weights.cols(); ++c) s.weights(r, c) = Scalar(w(rng));
    if (bias_std > 0.0) {
      std::normal_distribution<double> b(0.0, bias_std);
      for (Index r = 0; r < s.bias.size(); ++r) s.bias(r) = Scalar(b(rng));
    }
    return s;
  }

  /// 1×1 pass-through on `c` channels.
  static ConvSpec identity(Index c) {
    ConvSpec s = zeros(c, c, 1);
    s.weights.setIdentity();
    return s;
  }

  /// Multiply-accumulates per output cell.
  long long macs_per_cell() const {
    return static_cast<long long>(out_channels) * weights.cols();
  }
};

template <typename Scalar>
BasicGrid<Scalar> conv2d(const BasicGrid<Scalar>& input, const ConvSpec<Scalar>& spec) {
  if (input.channels() != spec.in_channels) throw InvalidInput("conv2d: input channel count does not match spec");
  const Index H = input.height(), W = input.width(), k = spec.kernel, pad = k / 2;
  BasicGrid<Scalar> out = input.zeros_like(spec.out_channels);

  if (spec.depthwise) {
    for (Index c = 0; c < spec.out_channels; ++c) {
      for (Index h = 0; h < H; ++h) {
        for (Index w = 0; w < W; ++w) {
          Scalar acc = spec.bias(c);
          for (Index i = 0; i < k; ++i) {
            const Index hs = h + i - pad;
            if (hs < 0 || hs >= H) continue;
            for (Index j = 0; j < k; ++j) {
              const Index ws = w + j - pad;
              if (ws < 0 || ws >= W) continue;
              acc += spec.weights(c, i * k + j) * input(c, hs, ws);
            }
          }
          out(c, h, w) = acc;
        }
      }
    }
    return out;
  }

  if (k == 1) {
    out.data().noalias() = spec.weights * input.data();
  } else {
    // im2col: one row per (in-channel, tap), one column per output cell.
    typename BasicGrid<Scalar>::Matrix cols =
        BasicGrid<Scalar>::Matrix::Zero(spec.in_channels * k * k, H * W);
    for (Index c = 0; c < spec.in_channels; ++c) {
      for (Index i = 0; i < k; ++i) {
        for (Index j = 0; j < k; ++j) {
          const Index row = c * k * k + i * k + j;
          const Index dx = j - pad;
          const Index w_lo = std::max<Index>(0, -dx), w_hi = std::min<Index>(W, W - dx);
          for (Index h = 0; h < H; ++h) {
            const Index hs = h + i - pad;
            if (hs < 0 || hs >= H || w_lo >= w_hi) continue;
            for (Index w = w_lo; w < w_hi; ++w) cols(row, h * W + w) = input(c, hs, w + dx);
          }
        }
      }
    }
    out.data().noalias() = spec.weights * cols;
  }
  out.data().colwise() += spec.bias;
  return out;
}

// ---------------------------------------------------------------------------
// Sampling

/// Bilinear weights of the (up to) four in-range neighbours of (x, y).
struct BilinearTap {
  Index cell[4];
  double weight[4];
  int count = 0;
};

inline BilinearTap bilinear_taps(Index height, Index width, double x, double y) {
  BilinearTap tap;
  const double fx = std::floor(x), fy = std::floor(y);
  const double ax = x - fx, ay = y - fy;
  const Index x0 = static_cast<Index>(fx), y0 = static_cast<Index>(fy);
  const double wx[2] = {1.0 - ax, ax};
  const double wy[2] = {1.0 - ay, ay};
  for (int dy = 0; dy < 2; ++dy) {
    for (int dx = 0; dx < 2; ++dx) {
      const Index xi = x0 + dx, yi = y0 + dy;
      const double wgt = wx[dx] * wy[dy];
      if (wgt == 0.0 || xi < 0 || yi < 0 || xi >= width || yi >= height) continue;
      tap.cell[tap.count] = yi * width + xi;
      tap.weight[tap.count] = wgt;
      ++tap.count;
    }
  }
  return tap;
}

/// Samples every channel at continuous cell coordinates (x = column, y = row).
/// Out-of-range neighbours read as zero.
template <typename Scalar>
Eigen::Matrix<Scalar, Eigen::Dynamic, 1> bilinear_sample(const BasicGrid<Scalar>& input, double x, double y) {
  Eigen::Matrix<Scalar, Eigen::Dynamic, 1> v = Eigen::Matrix<Scalar, Eigen::Dynamic, 1>::Zero(input.channels());
  if (!std::isfinite(x) || !std::isfinite(y)) return v;
  const BilinearTap tap = bilinear_taps(input.height(), input.width(), x, y);
  for (int t = 0; t < tap.count; ++t) v += Scalar(tap.weight[t]) * input.column(tap.cell[t]);
  return v;
}

namespace detail {

// Sampling positions within 1e-9 of an integer are snapped so that identity
// and integer-shift resampling reproduce the input exactly.
inline double snap(double v) {
  const double r = std::round(v);
  return std::abs(v - r) < 1e-9 ? r : v;
}

template <typename Scalar, typename PositionFn>
BasicGrid<Scalar> resample(const BasicGrid<Scalar>& input, PositionFn&& position) {
  BasicGrid<Scalar> out = input.zeros_like();
  const Index H = input.height(), W = input.width();
  for (Index h = 0; h < H; ++h) {
    for (Index w = 0; w < W; ++w) {
      auto [x, y] = position(h, w);
      if (!std::isfinite(x) || !std::isfinite(y)) continue;
      const BilinearTap tap = bilinear_taps(H, W, snap(x), snap(y));
      auto col = out.column(h * W + w);
      for (int t = 0; t < tap.count; ++t) col += Scalar(tap.weight[t]) * input.column(tap.cell[t]);
    }
  }
  return out;
}

}  // namespace detail

/// output(c, h, w) = input sampled at (w + dx(h, w), h + dy(h, w)); offsets in cells.
template <typename Scalar>
BasicGrid<Scalar> deform_resample(const BasicGrid<Scalar>& input, const BasicGrid<Scalar>& offsets) {
  if (offsets.channels() != 2) throw InvalidInput("deform_resample: offsets must have 2 channels (dx, dy)");
  require_same_plane(input, offsets, "deform_resample");
  return detail::resample(input, [&](Index h, Index w) {
    return std::pair<double, double>{static_cast<double>(w) + static_cast<double>(offsets(0, h, w)),
                                     static_cast<double>(h) + static_cast<double>(offsets(1, h, w))};
  });
}

/// Metric coordinates of a cell centre in the grid's own frame (centre of the
/// lattice at the origin, x along columns, y along rows).
inline Eigen::Vector2d cell_center(Index height, Index width, double cell_size, double h, double w) {
  return {(w - 0.5 * static_cast<double>(width - 1)) * cell_size,
          (h - 0.5 * static_cast<double>(height - 1)) * cell_size};
}

/// Inverse of cell_center: continuous (column, row) coordinates of a point.
inline Eigen::Vector2d point_to_cell(Index height, Index width, double cell_size, const Eigen::Vector2d& p) {
  return {p.x() / cell_size + 0.5 * static_cast<double>(width - 1),
          p.y() / cell_size + 0.5 * static_cast<double>(height - 1)};
}

/// Projects a grid expressed in a source frame into the target frame, where
/// `relative_pose` is the source frame's pose in the target frame. Each target
/// cell pulls from the source at relative_pose⁻¹(cell centre).
template <typename Scalar>
BasicGrid<Scalar> warp_grid(const BasicGrid<Scalar>& input, const Pose2& relative_pose) {
  const Pose2 inv = relative_pose.inverse();
  const Index H = input.height(), W = input.width();
  const double cs = input.cell_size();
  return detail::resample(input, [&](Index h, Index w) {
    const Eigen::Vector2d q = inv.apply(cell_center(H, W, cs, double(h), double(w)));
    const Eigen::Vector2d s = point_to_cell(H, W, cs, q);
    return std::pair<double, double>{s.x(), s.y()};
  });
}

// ---------------------------------------------------------------------------
// Pooling

template <typename Scalar>
BasicGrid<Scalar> avg_pool(const BasicGrid<Scalar>& g, Index factor) {
  if (factor < 1 || g.height() % factor != 0 || g.width() % factor != 0)
    throw InvalidInput("avg_pool: grid size must be divisible by the pooling factor");
  const Index Ho = g.height() / factor, Wo = g.width() / factor;
  BasicGrid<Scalar> out(g.channels(), Ho, Wo, g.cell_size() * double(factor));
  const Scalar norm = Scalar(1) / Scalar(factor * factor);
  for (Index c = 0; c < g.channels(); ++c)
    for (Index h = 0; h < g.height(); ++h)
      for (Index w = 0; w < g.width(); ++w) out(c, h / factor, w / factor) += g(c, h, w) * norm;
  return out;
}

template <typename Scalar>
BasicGrid<Scalar> upsample_nearest(const BasicGrid<Scalar>& g, Index factor) {
  BasicGrid<Scalar> out(g.channels(), g.height() * factor, g.width() * factor, g.cell_size() / double(factor));
  for (Index c = 0; c < out.channels(); ++c)
    for (Index h = 0; h < out.height(); ++h)
      for (Index w = 0; w < out.width(); ++w) out(c, h, w) = g(c, h / factor, w / factor);
  return out;
}

/// 3×3 max filter (binary dilation on {0,1} maps), edges clamp to the grid.
template <typename Scalar>
BasicGrid<Scalar> max_pool3x3(const BasicGrid<Scalar>& g) {
  BasicGrid<Scalar> out = g;
  const Index H = g.height(), W = g.width();
  for (Index c = 0; c < g.channels(); ++c)
    for (Index h = 0; h < H; ++h)
      for (Index w = 0; w < W; ++w) {
        Scalar m = g(c, h, w);
        for (Index i = std::max<Index>(0, h - 1); i <= std::min(H - 1, h + 1); ++i)
          for (Index j = std::max<Index>(0, w - 1); j <= std::min(W - 1, w + 1); ++j) m = std::max(m, g(c, i, j));
        out(c, h, w) = m;
      }
  return out;
}

// ---------------------------------------------------------------------------
// Selective state-space scan

/// Diagonal selective SSM. B_t and C_t are per-cell linear projections
/// (state_dim × channels) of the input and output-driving grids.
template <typename Scalar>
struct SsmParams {
  using Matrix = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
  using Vector = Eigen::Matrix<Scalar, Eigen::Dynamic, 1>;

  Vector a;       // diagonal state matrix, entries <= 0
  Matrix b_proj;  // state_dim × channels
  Matrix c_proj;  // state_dim × channels

  Index state_dim() const { return a.size(); }

  /// A = -(1..state_dim); projections ~ N(0, 1/channels).
  static SsmParams seeded(Index state_dim, Index channels, Rng& rng) {
    if (state_dim < 1) throw InvalidInput("ssm state_dim must be >= 1");
    SsmParams p;
    p.a.resize(state_dim);
    for (Index n = 0; n < state_dim; ++n) p.a(n) = -Scalar(n + 1);
    std::normal_distribution<double> d(0.0, 1.0 / std::sqrt(double(channels)));
    p.b_proj.resize(state_dim, channels);
    p.c_proj.resize(state_dim, channels);
    for (Index n = 0; n < state_dim; ++n)
      for (Index c = 0; c < channels; ++c) p.b_proj(n, c) = Scalar(d(rng));
    for (Index n = 0; n < state_dim; ++n)
      for (Index c = 0; c < channels; ++c) p.c_proj(n, c) = Scalar(d(rng));
    return p;
  }

  void validate(Index channels) const {
    if (state_dim() < 1) throw InvalidInput("ssm state_dim must be >= 1");
    if ((a.array() > Scalar(0)).any()) throw InvalidInput("ssm A entries must be non-positive");
    if (b_proj.rows() != state_dim() || c_proj.rows() != state_dim() || b_proj.cols() != channels ||
        c_proj.cols() != channels)
      throw InvalidInput("ssm projection shapes do not match state_dim × channels");
  }
};

/// Scan with explicit non-negative step sizes. The H·W plane is flattened row
/// major into one sequence; each channel carries its own state vector:
///   h_t = exp(dt_t·A) ⊙ h_{t-1} + dt_t·B_t·x_t,   y_t = C_t · h_t,   h_0 = 0.
template <typename Scalar>
BasicGrid<Scalar> selective_scan_steps(const BasicGrid<Scalar>& z_fused, const BasicGrid<Scalar>& dt,
                                       const BasicGrid<Scalar>& z_i, const SsmParams<Scalar>& params) {
  require_same_shape(z_fused, dt, "selective_scan");
  require_same_shape(z_fused, z_i, "selective_scan");
  params.validate(z_fused.channels());
  if ((dt.data().array() < Scalar(0)).any()) throw InvalidInput("selective_scan: step sizes must be >= 0");

  const Index C = z_fused.channels(), L = z_fused.cells(), N = params.state_dim();
  const typename BasicGrid<Scalar>::Matrix B = params.b_proj * z_fused.data();  // N × L
  const typename BasicGrid<Scalar>::Matrix Cm = params.c_proj * z_i.data();     // N × L

  BasicGrid<Scalar> y = z_fused.zeros_like();
  Eigen::Matrix<Scalar, Eigen::Dynamic, 1> state(N);
  for (Index c = 0; c < C; ++c) {
    state.setZero();
    for (Index t = 0; t < L; ++t) {
      const Scalar step = dt.data()(c, t);
      const Scalar drive = step * z_fused.data()(c, t);
      Scalar out = 0;
      for (Index n = 0; n < N; ++n) {
        state(n) = std::exp(step * params.a(n)) * state(n) + drive * B(n, t);
        out += Cm(n, t) * state(n);
      }
      y.data()(c, t) = out;
    }
  }
  return y;
}

/// As selective_scan_steps with dt = softplus(dt_logits).
template <typename Scalar>
BasicGrid<Scalar> selective_scan(const BasicGrid<Scalar>& z_fused, const BasicGrid<Scalar>& dt_logits,
                                 const BasicGrid<Scalar>& z_i, const SsmParams<Scalar>& params) {
  BasicGrid<Scalar> dt = dt_logits;
  dt.data() = dt_logits.data().unaryExpr([](Scalar v) { return softplus(v); });
  return selective_scan_steps(z_fused, dt, z_i, params);
}

// ---------------------------------------------------------------------------
// Positional embedding

/// Sinusoidal embedding of each value into `dims` entries laid out as
/// [sin(f0 v), cos(f0 v), sin(f1 v), cos(f1 v), ...] with f_k = 10000^(-2k/dims).
template <typename Scalar>
std::vector<Scalar> pos_embed(std::span<const Scalar> values, Index dims) {
  if (dims <= 0 || dims % 2 != 0) throw InvalidInput("pos_embed: dims must be a positive even number");
  std::vector<Scalar> out;
  out.reserve(values.size() * static_cast<std::size_t>(dims));
  for (Scalar v : values) {
    for (Index k = 0; k < dims / 2; ++k) {
      const double freq = std::pow(10000.0, -2.0 * double(k) / double(dims));
      const double arg = freq * double(v);
      out.push_back(Scalar(std::sin(arg)));
      out.push_back(Scalar(std::cos(arg)));
    }
  }
  return out;
}

}  // namespace coop
