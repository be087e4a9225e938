#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <string>

#include <Eigen/Core>

#include "coop/error.hpp"

namespace coop {

using Index = Eigen::Index;

/// Dense C×H×W field over a metric BEV lattice centred on its owner.
///
/// Storage is a row-major C × (H·W) matrix, so element (c, h, w) lives at
/// c·H·W + h·W + w and each channel is one contiguous row. Channel-mixing
/// operations therefore reduce to ordinary matrix products on data().
template <typename Scalar>
class BasicGrid {
 public:
  using Matrix = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
  using scalar_type = Scalar;

  BasicGrid() = default;

  BasicGrid(Index channels, Index height, Index width, double cell_size = 0.4)
      : height_(height), width_(width), cell_size_(cell_size),
        data_(Matrix::Zero(channels, height * width)) {
    if (channels < 0 || height < 0 || width < 0) throw InvalidInput("grid dimensions must be non-negative");
    if (!(cell_size > 0.0)) throw InvalidInput("grid cell_size must be positive");
  }

  static BasicGrid Zero(Index c, Index h, Index w, double cell_size = 0.4) {
    return BasicGrid(c, h, w, cell_size);
  }

  static BasicGrid Constant(Index c, Index h, Index w, Scalar value, double cell_size = 0.4) {
    BasicGrid g(c, h, w, cell_size);
    g.data_.setConstant(value);
    return g;
  }

  /// A zero grid with this grid's spatial layout and `c` channels.
  BasicGrid zeros_like(Index c) const { return BasicGrid(c, height_, width_, cell_size_); }
  BasicGrid zeros_like() const { return zeros_like(channels()); }

  Index channels() const { return data_.rows(); }
  Index height() const { return height_; }
  Index width() const { return width_; }
  Index cells() const { return height_ * width_; }
  Index size() const { return data_.size(); }
  double cell_size() const { return cell_size_; }

  Scalar& operator()(Index c, Index h, Index w) { return data_(c, h * width_ + w); }
  Scalar operator()(Index c, Index h, Index w) const { return data_(c, h * width_ + w); }

  Matrix& data() { return data_; }
  const Matrix& data() const { return data_; }

  auto channel(Index c) { return data_.row(c); }
  auto channel(Index c) const { return data_.row(c); }

  /// Cell column (all channels) at linear cell index.
  auto column(Index cell) { return data_.col(cell); }
  auto column(Index cell) const { return data_.col(cell); }

  bool same_shape(const BasicGrid& o) const {
    return channels() == o.channels() && height_ == o.height_ && width_ == o.width_;
  }
  bool same_plane(const BasicGrid& o) const { return height_ == o.height_ && width_ == o.width_; }

  bool all_finite() const { return data_.allFinite(); }

  template <typename Other>
  BasicGrid<Other> cast() const {
    BasicGrid<Other> out(channels(), height_, width_, cell_size_);
    out.data() = data_.template cast<Other>();
    return out;
  }

  /// Channel slice [first, first + count).
  BasicGrid slice(Index first, Index count) const {
    if (first < 0 || count < 0 || first + count > channels()) throw InvalidInput("channel slice out of range");
    BasicGrid out(count, height_, width_, cell_size_);
    out.data_ = data_.middleRows(first, count);
    return out;
  }

  bool operator==(const BasicGrid& o) const {
    return same_shape(o) && cell_size_ == o.cell_size_ && data_ == o.data_;
  }

 private:
  Index height_ = 0;
  Index width_ = 0;
  double cell_size_ = 0.4;
  Matrix data_;
};

using Grid = BasicGrid<float>;
using GridD = BasicGrid<double>;

/// Spatial layout shared by every grid in one pipeline instance.
struct GridShape {
  Index channels = 16;
  Index height = 48;
  Index width = 48;
  double cell_size = 0.4;

  Index cells() const { return height * width; }
  /// Distance from the lattice centre to its edge along the shorter axis.
  double half_extent() const { return 0.5 * double(std::min(height, width)) * cell_size; }

  template <typename Scalar = float>
  BasicGrid<Scalar> zeros(Index c) const {
    return BasicGrid<Scalar>(c, height, width, cell_size);
  }

  bool operator==(const GridShape&) const = default;
};

template <typename Scalar>
void require_same_shape(const BasicGrid<Scalar>& a, const BasicGrid<Scalar>& b, const char* what) {
  if (!a.same_shape(b)) throw InvalidInput(std::string(what) + ": grid shape mismatch");
}

template <typename Scalar>
void require_same_plane(const BasicGrid<Scalar>& a, const BasicGrid<Scalar>& b, const char* what) {
  if (!a.same_plane(b)) throw InvalidInput(std::string(what) + ": grid H×W mismatch");
}

template <typename Scalar>
BasicGrid<Scalar> concat_channels(const BasicGrid<Scalar>& a, const BasicGrid<Scalar>& b) {
  require_same_plane(a, b, "concat_channels");
  BasicGrid<Scalar> out(a.channels() + b.channels(), a.height(), a.width(), a.cell_size());
  out.data().topRows(a.channels()) = a.data();
  out.data().bottomRows(b.channels()) = b.data();
  return out;
}

/// Multiplies every channel of `g` by the single-channel map `s`.
template <typename Scalar>
BasicGrid<Scalar> broadcast_multiply(const BasicGrid<Scalar>& g, const BasicGrid<Scalar>& s) {
  require_same_plane(g, s, "broadcast_multiply");
  if (s.channels() != 1) throw InvalidInput("broadcast_multiply: scale map must have one channel");
  BasicGrid<Scalar> out = g;
  // "+ 0" folds -0 into +0 so masked-out cells are bit-identical regardless of input sign.
  out.data() = (g.data().array().rowwise() * s.data().row(0).array()) + Scalar(0);
  return out;
}

/// FNV-1a over the raw scalar bytes; used for golden-output checks and run hashes.
inline std::uint64_t fnv1a(const void* bytes, std::size_t n, std::uint64_t h = 1469598103934665603ULL) {
  const auto* p = static_cast<const unsigned char*>(bytes);
  for (std::size_t i = 0; i < n; ++i) {
    h ^= p[i];
    h *= 1099511628211ULL;
  }
  return h;
}

}  // namespace coop
