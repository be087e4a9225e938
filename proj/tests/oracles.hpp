#pragma once

// Brute-force reference implementations used by the unit and acceptance tests.
// Each one is written independently of the library code it checks.

#include <algorithm>
#include <cmath>
#include <map>
#include <random>
#include <vector>

#include <Eigen/Core>

#include "coop/citproto.hpp"
#include "coop/fusedet.hpp"
#include "coop/gridmath.hpp"

namespace oracle {

using coop::GridD;
using coop::Index;

template <typename Scalar = double>
coop::BasicGrid<Scalar> random_grid(std::mt19937_64& rng, Index c, Index h, Index w, double lo = -1.0,
                                    double hi = 1.0, double cell = 0.4) {
  std::uniform_real_distribution<double> d(lo, hi);
  coop::BasicGrid<Scalar> g(c, h, w, cell);
  for (Index k = 0; k < c; ++k)
    for (Index i = 0; i < h; ++i)
      for (Index j = 0; j < w; ++j) g(k, i, j) = Scalar(d(rng));
  return g;
}

/// max |a - b| / max(max |b|, 1e-300)
template <typename A, typename B>
double rel_error(const A& a, const B& b) {
  double num = 0, den = 0;
  for (Index c = 0; c < b.channels(); ++c)
    for (Index i = 0; i < b.height(); ++i)
      for (Index j = 0; j < b.width(); ++j) {
        num = std::max(num, std::abs(double(a(c, i, j)) - double(b(c, i, j))));
        den = std::max(den, std::abs(double(b(c, i, j))));
      }
  return num / std::max(den, 1e-300);
}

// Direct nested-loop convolution over (out, h, w, in, i, j).
inline GridD conv2d(const GridD& x, const coop::ConvSpec<double>& s) {
  const Index k = s.kernel, p = k / 2;
  GridD y(s.out_channels, x.height(), x.width(), x.cell_size());
  for (Index o = 0; o < s.out_channels; ++o)
    for (Index h = 0; h < x.height(); ++h)
      for (Index w = 0; w < x.width(); ++w) {
        double acc = s.bias(o);
        for (Index c = 0; c < x.channels(); ++c) {
          if (s.depthwise && c != o) continue;
          for (Index i = 0; i < k; ++i)
            for (Index j = 0; j < k; ++j) {
              const Index hh = h + i - p, ww = w + j - p;
              if (hh < 0 || ww < 0 || hh >= x.height() || ww >= x.width()) continue;
              const double wt = s.depthwise ? s.weights(o, i * k + j) : s.weights(o, (c * k + i) * k + j);
              acc += wt * x(c, hh, ww);
            }
        }
        y(o, h, w) = acc;
      }
  return y;
}

inline double cell_or_zero(const GridD& g, Index c, long long row, long long col) {
  if (row < 0 || col < 0 || row >= g.height() || col >= g.width()) return 0.0;
  return g(c, Index(row), Index(col));
}

inline double bilinear(const GridD& g, Index c, double x, double y) {
  const double x0 = std::floor(x), y0 = std::floor(y);
  const double ax = x - x0, ay = y - y0;
  const auto c0 = (long long)x0, r0 = (long long)y0;
  return (1 - ax) * (1 - ay) * cell_or_zero(g, c, r0, c0) + ax * (1 - ay) * cell_or_zero(g, c, r0, c0 + 1) +
         (1 - ax) * ay * cell_or_zero(g, c, r0 + 1, c0) + ax * ay * cell_or_zero(g, c, r0 + 1, c0 + 1);
}

inline GridD deform(const GridD& x, const GridD& off) {
  GridD y = x.zeros_like();
  for (Index c = 0; c < x.channels(); ++c)
    for (Index h = 0; h < x.height(); ++h)
      for (Index w = 0; w < x.width(); ++w) y(c, h, w) = bilinear(x, c, w + off(0, h, w), h + off(1, h, w));
  return y;
}

// Step-by-step recurrence with every term spelled out.
inline GridD scan(const GridD& zf, const GridD& dt_logits, const GridD& zi, const coop::SsmParams<double>& p) {
  const Index C = zf.channels(), H = zf.height(), W = zf.width(), N = p.a.size();
  GridD y = zf.zeros_like();
  for (Index c = 0; c < C; ++c) {
    std::vector<double> h(std::size_t(N), 0.0);
    for (Index r = 0; r < H; ++r)
      for (Index q = 0; q < W; ++q) {
        const double l = dt_logits(c, r, q);
        const double dt = std::log(1.0 + std::exp(l));
        double out = 0.0;
        for (Index n = 0; n < N; ++n) {
          double b = 0.0, cc = 0.0;
          for (Index m = 0; m < C; ++m) {
            b += p.b_proj(n, m) * zf(m, r, q);
            cc += p.c_proj(n, m) * zi(m, r, q);
          }
          h[std::size_t(n)] = std::exp(dt * p.a(n)) * h[std::size_t(n)] + dt * b * zf(c, r, q);
          out += cc * h[std::size_t(n)];
        }
        y(c, r, q) = out;
      }
  }
  return y;
}

// Per-cell sort of (relevance desc, id asc), keep the first k above tau.
inline std::map<int, std::vector<int>> topk_masks(const std::vector<coop::RelevanceMap>& rel, int k, double tau) {
  std::map<int, std::vector<int>> masks;
  const Index cells = rel.front().second.cells();
  for (const auto& r : rel) masks[r.first].assign(std::size_t(cells), 0);
  for (Index cell = 0; cell < cells; ++cell) {
    std::vector<std::pair<float, int>> v;
    for (const auto& r : rel) v.push_back({r.second.data()(0, cell), r.first});
    std::sort(v.begin(), v.end(), [](auto a, auto b) { return a.first != b.first ? a.first > b.first : a.second < b.second; });
    for (int i = 0; i < k && i < int(v.size()); ++i)
      if (double(v[std::size_t(i)].first) > tau) masks[v[std::size_t(i)].second][std::size_t(cell)] = 1;
  }
  return masks;
}

// Intersection area by collecting vertices (corners inside the other box and
// pairwise edge crossings), ordering them by angle and applying the shoelace rule.
inline bool inside(const std::vector<Eigen::Vector2d>& poly, const Eigen::Vector2d& p) {
  for (std::size_t i = 0; i < poly.size(); ++i) {
    const Eigen::Vector2d a = poly[i], b = poly[(i + 1) % poly.size()];
    const double cr = (b - a).x() * (p - a).y() - (b - a).y() * (p - a).x();
    if (cr < -1e-12) return false;
  }
  return true;
}

inline double intersection_area(const coop::OrientedBox& A, const coop::OrientedBox& B) {
  const auto pa = A.corners(), pb = B.corners();
  std::vector<Eigen::Vector2d> pts;
  for (const auto& p : pa)
    if (inside(pb, p)) pts.push_back(p);
  for (const auto& p : pb)
    if (inside(pa, p)) pts.push_back(p);
  for (std::size_t i = 0; i < 4; ++i)
    for (std::size_t j = 0; j < 4; ++j) {
      const Eigen::Vector2d p = pa[i], r = pa[(i + 1) % 4] - p, q = pb[j], s = pb[(j + 1) % 4] - q;
      const double den = r.x() * s.y() - r.y() * s.x();
      if (std::abs(den) < 1e-15) continue;
      const Eigen::Vector2d qp = q - p;
      const double t = (qp.x() * s.y() - qp.y() * s.x()) / den, u = (qp.x() * r.y() - qp.y() * r.x()) / den;
      if (t >= 0 && t <= 1 && u >= 0 && u <= 1) pts.push_back(p + t * r);
    }
  if (pts.size() < 3) return 0.0;
  Eigen::Vector2d c = Eigen::Vector2d::Zero();
  for (const auto& p : pts) c += p;
  c /= double(pts.size());
  std::sort(pts.begin(), pts.end(), [&](const Eigen::Vector2d& a, const Eigen::Vector2d& b) {
    return std::atan2(a.y() - c.y(), a.x() - c.x()) < std::atan2(b.y() - c.y(), b.x() - c.x());
  });
  double area = 0;
  for (std::size_t i = 0; i < pts.size(); ++i) {
    const auto& a = pts[i];
    const auto& b = pts[(i + 1) % pts.size()];
    area += a.x() * b.y() - a.y() * b.x();
  }
  return std::abs(area) / 2;
}

inline double iou(const coop::OrientedBox& a, const coop::OrientedBox& b) {
  const double inter = intersection_area(a, b);
  return inter / (a.area() + b.area() - inter);
}

// O(n²) greedy: repeatedly take the best remaining box, drop its overlaps.
inline std::vector<coop::OrientedBox> nms(std::vector<coop::OrientedBox> boxes, double thr) {
  auto better = [](const coop::OrientedBox& a, const coop::OrientedBox& b) {
    if (a.score != b.score) return a.score > b.score;
    if (a.cx != b.cx) return a.cx < b.cx;
    return a.cy < b.cy;
  };
  std::vector<coop::OrientedBox> kept;
  while (!boxes.empty()) {
    std::size_t best = 0;
    for (std::size_t i = 1; i < boxes.size(); ++i)
      if (better(boxes[i], boxes[best])) best = i;
    const auto top = boxes[best];
    kept.push_back(top);
    std::vector<coop::OrientedBox> rest;
    for (std::size_t i = 0; i < boxes.size(); ++i)
      if (i != best && iou(top, boxes[i]) <= thr) rest.push_back(boxes[i]);
    boxes = std::move(rest);
  }
  return kept;
}

inline coop::OrientedBox random_box(std::mt19937_64& rng, double extent = 6.0) {
  std::uniform_real_distribution<double> pos(-extent, extent), size(0.8, 4.0), yaw(-3.14, 3.14), score(0.05, 1.0);
  coop::OrientedBox b;
  b.cx = pos(rng);
  b.cy = pos(rng);
  b.w = size(rng);
  b.l = size(rng);
  b.yaw = yaw(rng);
  b.score = score(rng);
  return b;
}

}  // namespace oracle
