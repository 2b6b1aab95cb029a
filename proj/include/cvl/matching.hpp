#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdlib>
#include <limits>
#include <optional>
#include <string>
#include <vector>

#include "cvl/conv.hpp"
#include "cvl/error.hpp"
#include "cvl/feature_map.hpp"
#include "cvl/parallel.hpp"

namespace cvl {

// Square grid of scores over integer displacements (m, n) in [-R, R]^2.
// m shifts rows, n shifts columns.
class SimilarityField {
 public:
  SimilarityField() = default;
  explicit SimilarityField(int radius, double meters_per_cell = 1.0)
      : radius_(radius),
        meters_per_cell_(meters_per_cell),
        scores_(static_cast<std::size_t>((2 * radius + 1) * (2 * radius + 1)), 0.0),
        valid_(scores_.size(), 0) {}

  int radius() const noexcept { return radius_; }
  int side() const noexcept { return 2 * radius_ + 1; }
  double meters_per_cell() const noexcept { return meters_per_cell_; }
  std::size_t size() const noexcept { return scores_.size(); }

  std::size_t index(int m, int n) const {
    return static_cast<std::size_t>((m + radius_) * side() + (n + radius_));
  }
  double& score(int m, int n) { return scores_[index(m, n)]; }
  double score(int m, int n) const { return scores_[index(m, n)]; }
  bool valid(int m, int n) const { return valid_[index(m, n)] != 0; }
  void set_valid(int m, int n, bool v) { valid_[index(m, n)] = v ? 1 : 0; }

 private:
  int radius_ = 0;
  double meters_per_cell_ = 1.0;
  std::vector<double> scores_;
  std::vector<std::uint8_t> valid_;
};

// Per-displacement uncertainty in (0, 1], same grid as SimilarityField.
class UncertaintyField {
 public:
  UncertaintyField() = default;
  explicit UncertaintyField(int radius, double fill = 1.0)
      : radius_(radius), values_(static_cast<std::size_t>((2 * radius + 1) * (2 * radius + 1)), fill) {}

  int radius() const noexcept { return radius_; }
  int side() const noexcept { return 2 * radius_ + 1; }
  double& operator()(int m, int n) { return values_[static_cast<std::size_t>((m + radius_) * side() + n + radius_)]; }
  double operator()(int m, int n) const {
    return values_[static_cast<std::size_t>((m + radius_) * side() + n + radius_)];
  }

 private:
  int radius_ = 0;
  std::vector<double> values_;
};

inline constexpr double kUncertaintyFloor = 1e-2;

// Displacement radius covering a square search region (metres per side).
inline int search_radius(double meters_per_cell, double region_m = 10.0) {
  require(meters_per_cell > 0, ErrorCode::InvalidArgument, "meters_per_cell must be positive");
  return static_cast<int>(std::ceil(region_m / 2.0 / meters_per_cell - 1e-9));
}

namespace detail {
template <typename T>
void check_radius(const FeatureMap<T>& f, int radius) {
  const auto half = static_cast<int>(std::min(f.height(), f.width()) / 2);
  require(radius >= 0 && radius <= half, ErrorCode::RadiusTooLarge,
          "radius " + std::to_string(radius) + " exceeds half the map size " + std::to_string(half));
}
}  // namespace detail

/// Map recentred at (m, n): out[p] = F[p + (m, n)]; pixels whose source
/// falls outside F are masked.
template <typename T>
FeatureMap<T> shifted_view(const FeatureMap<T>& f, int m, int n) {
  detail::check_radius(f, std::max(std::abs(m), std::abs(n)));
  const auto h = static_cast<long>(f.height());
  const auto w = static_cast<long>(f.width());
  FeatureMap<T> out(f.height(), f.width(), f.channels());
  for (long r = 0; r < h; ++r) {
    const long sr = r + m;
    if (sr < 0 || sr >= h) continue;
    for (long c = 0; c < w; ++c) {
      const long sc = c + n;
      if (sc < 0 || sc >= w || !f.valid(sr, sc)) continue;
      const auto src = f.pixel(sr, sc);
      std::copy(src.begin(), src.end(), out.pixel(r, c).begin());
      out.set_valid(r, c, true);
    }
  }
  return out;
}

/// Normalised cross-correlation of the query against the satellite map
/// shifted by every displacement within `radius`. Inner product and both
/// norms run over the pixels valid in both maps; cells with no overlap or a
/// zero norm score 0 and stay invalid.
template <typename T>
SimilarityField ncc_field(const FeatureMap<T>& satellite, const FeatureMap<T>& query, int radius,
                          double meters_per_cell = 1.0) {
  require_same_shape(satellite, query, "ncc_field");
  detail::check_radius(satellite, radius);
  bool informative = false;
  for (std::size_t r = 0; r < query.height() && !informative; ++r)
    for (std::size_t c = 0; c < query.width() && !informative; ++c) {
      if (!query.valid(r, c)) continue;
      for (auto v : query.pixel(r, c)) informative = informative || v != T(0);
    }
  require(informative, ErrorCode::DegenerateQuery, "query map is entirely masked or zero");

  SimilarityField field(radius, meters_per_cell);
  const auto h = static_cast<long>(query.height());
  const auto w = static_cast<long>(query.width());
  const std::size_t channels = query.channels();
  const auto side = static_cast<std::size_t>(field.side());

  std::vector<double> scores(side * side, 0.0);
  std::vector<std::uint8_t> ok(side * side, 0);
  parallel_for(0, side * side, [&](std::size_t cell) {
    const int m = static_cast<int>(cell / side) - radius;
    const int n = static_cast<int>(cell % side) - radius;
    double inner = 0.0, ss = 0.0, qq = 0.0;
    const long r0 = std::max(0L, -static_cast<long>(m));
    const long r1 = std::min(h, h - m);
    const long c0 = std::max(0L, -static_cast<long>(n));
    const long c1 = std::min(w, w - n);
    for (long r = r0; r < r1; ++r)
      for (long c = c0; c < c1; ++c) {
        if (!query.valid(r, c) || !satellite.valid(r + m, c + n)) continue;
        const auto q = query.pixel(r, c);
        const auto s = satellite.pixel(r + m, c + n);
        for (std::size_t ch = 0; ch < channels; ++ch) {
          const double a = static_cast<double>(s[ch]);
          const double b = static_cast<double>(q[ch]);
          inner += a * b;
          ss += a * a;
          qq += b * b;
        }
      }
    if (ss > 0.0 && qq > 0.0) {
      scores[cell] = inner / (std::sqrt(ss) * std::sqrt(qq));
      ok[cell] = 1;
    }
  });
  for (int m = -radius; m <= radius; ++m)
    for (int n = -radius; n <= radius; ++n) {
      const std::size_t cell = field.index(m, n);
      field.score(m, n) = scores[cell];
      field.set_valid(m, n, ok[cell] != 0);
    }
  return field;
}

struct UncertaintyOptions {
  // Odd side of the pixel window averaged into each displacement cell.
  std::size_t pool_size = 1;
  double floor = kUncertaintyFloor;
};

/// Uncertainty over displacements: conv stack -> sigmoid -> average pooled
/// around the satellite pixel each displacement points at -> floored.
template <typename T>
UncertaintyField uncertainty_field(const FeatureMap<T>& satellite, const ConvStack& weights, int radius,
                                   UncertaintyOptions options = {}) {
  require(weights.out_channels() == 1, ErrorCode::DimensionMismatch,
          "uncertainty stack must produce one channel, got " + std::to_string(weights.out_channels()));
  require(options.pool_size % 2 == 1, ErrorCode::InvalidArgument, "pool size must be odd");
  detail::check_radius(satellite, radius);
  const FeatureMap<T> logits = apply(weights, satellite);
  const auto h = static_cast<long>(satellite.height());
  const auto w = static_cast<long>(satellite.width());
  const long cu = h / 2;
  const long cv = w / 2;
  const long half = static_cast<long>(options.pool_size / 2);

  UncertaintyField u(radius);
  for (int m = -radius; m <= radius; ++m)
    for (int n = -radius; n <= radius; ++n) {
      double sum = 0.0;
      std::size_t count = 0;
      for (long r = cu + m - half; r <= cu + m + half; ++r)
        for (long c = cv + n - half; c <= cv + n + half; ++c) {
          if (r < 0 || r >= h || c < 0 || c >= w) continue;
          sum += 1.0 / (1.0 + std::exp(-static_cast<double>(logits.at(r, c, 0))));
          ++count;
        }
      const double mean = count ? sum / static_cast<double>(count) : 0.5;
      u(m, n) = std::max(options.floor, mean);
    }
  return u;
}

// D = D0 / U; invalid cells score -inf.
inline SimilarityField weighted_similarity(const SimilarityField& raw, const UncertaintyField& u) {
  require(raw.radius() == u.radius(), ErrorCode::DimensionMismatch, "similarity and uncertainty grids differ");
  SimilarityField out(raw.radius(), raw.meters_per_cell());
  for (int m = -raw.radius(); m <= raw.radius(); ++m)
    for (int n = -raw.radius(); n <= raw.radius(); ++n) {
      out.set_valid(m, n, raw.valid(m, n));
      out.score(m, n) = raw.valid(m, n) ? raw.score(m, n) / u(m, n) : -std::numeric_limits<double>::infinity();
    }
  return out;
}

struct Displacement {
  int m = 0;
  int n = 0;
  double score = 0.0;

  friend bool operator==(const Displacement&, const Displacement&) = default;
};

// Argmax over valid cells; ties go to the smallest m, then the smallest n.
inline Displacement best_displacement(const SimilarityField& field) {
  std::optional<Displacement> best;
  for (int m = -field.radius(); m <= field.radius(); ++m)
    for (int n = -field.radius(); n <= field.radius(); ++n) {
      if (!field.valid(m, n)) continue;
      if (!best || field.score(m, n) > best->score) best = Displacement{m, n, field.score(m, n)};
    }
  if (!best) fail(ErrorCode::AllCellsInvalid, "no valid displacement cell");
  return *best;
}

struct Alignment {
  Displacement displacement;  // argmax of the weighted field
  double ncc = 0.0;           // raw NCC at the chosen cell
  double weighted = 0.0;      // NCC / U at the chosen cell
  double distance = 0.0;      // sqrt(2 - 2 ncc)
};

/// Best-aligned L2 distance between unit-normalised maps. Uncertainty only
/// chooses the displacement; the distance uses the raw NCC there.
template <typename T>
Alignment align(const FeatureMap<T>& satellite, const FeatureMap<T>& query, const UncertaintyField* uncertainty,
                int radius, double meters_per_cell = 1.0) {
  const SimilarityField raw = ncc_field(satellite, query, radius, meters_per_cell);
  const SimilarityField weighted = uncertainty ? weighted_similarity(raw, *uncertainty)
                                               : weighted_similarity(raw, UncertaintyField(radius, 1.0));
  const Displacement best = best_displacement(weighted);
  const double ncc = raw.score(best.m, best.n);
  return {best, ncc, best.score, std::sqrt(std::max(0.0, 2.0 - 2.0 * ncc))};
}

template <typename T>
double aligned_distance(const FeatureMap<T>& satellite, const FeatureMap<T>& query, const UncertaintyField* uncertainty,
                        int radius) {
  return align(satellite, query, uncertainty, radius).distance;
}

}  // namespace cvl
