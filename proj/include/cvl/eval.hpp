#pragma once

#include <cmath>
#include <cstddef>
#include <numbers>
#include <span>
#include <string>
#include <unordered_map>
#include <unordered_set>
#include <vector>

#include "cvl/error.hpp"

namespace cvl {

inline constexpr double kDefaultAlpha = 10.0;
inline constexpr double kEarthRadiusM = 6378137.0;
inline constexpr double kSuccessRadiusM = 10.0;

// Fixed-shape pairwise reduction; the result does not depend on threading.
inline double pairwise_sum(std::span<const double> values) {
  if (values.size() <= 8) {
    double s = 0.0;
    for (double v : values) s += v;
    return s;
  }
  const std::size_t half = values.size() / 2;
  return pairwise_sum(values.first(half)) + pairwise_sum(values.subspan(half));
}

inline double logistic(double x) {
  if (x >= 0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

/// Soft-margin triplet loss log(1 + exp(alpha (d_pos - d_neg))).
inline double triplet_loss(double d_pos, double d_neg, double alpha = kDefaultAlpha) {
  const double x = alpha * (d_pos - d_neg);
  return x > 0 ? x + std::log1p(std::exp(-x)) : std::log1p(std::exp(x));
}

struct TripletGrad {
  double d_pos;
  double d_neg;
};

inline TripletGrad triplet_loss_grad(double d_pos, double d_neg, double alpha = kDefaultAlpha) {
  const double s = alpha * logistic(alpha * (d_pos - d_neg));
  return {s, -s};
}

// B x B aligned distances; entry (q, s) pairs query q with satellite s, so
// the diagonal holds the matching pairs.
class DistanceMatrix {
 public:
  DistanceMatrix() = default;
  explicit DistanceMatrix(std::size_t batch, double fill = 0.0) : batch_(batch), values_(batch * batch, fill) {}

  std::size_t batch() const noexcept { return batch_; }
  double& operator()(std::size_t q, std::size_t s) { return values_[q * batch_ + s]; }
  double operator()(std::size_t q, std::size_t s) const { return values_[q * batch_ + s]; }

  void validate() const {
    for (double v : values_)
      require(std::isfinite(v) && v >= 0.0, ErrorCode::InvalidArgument, "distances must be finite and nonnegative");
  }

 private:
  std::size_t batch_ = 0;
  std::vector<double> values_;
};

namespace detail {
// Visits every exhaustive-batch triplet as (positive cell, negative cell):
// query-anchored (q,q) vs (q,s) and satellite-anchored (q,q) vs (p,q).
template <typename Visit>
void for_each_triplet(std::size_t batch, Visit&& visit) {
  for (std::size_t q = 0; q < batch; ++q)
    for (std::size_t s = 0; s < batch; ++s) {
      if (s == q) continue;
      visit(q, q, q, s);
      visit(q, q, s, q);
    }
}
}  // namespace detail

/// Mean soft-margin loss over all 2 B (B - 1) triplets of the batch.
inline double batch_loss(const DistanceMatrix& d, double alpha = kDefaultAlpha) {
  require(d.batch() >= 2, ErrorCode::BatchTooSmall, "batch needs at least 2 pairs");
  std::vector<double> terms;
  terms.reserve(2 * d.batch() * (d.batch() - 1));
  detail::for_each_triplet(d.batch(), [&](std::size_t pq, std::size_t ps, std::size_t nq, std::size_t ns) {
    terms.push_back(triplet_loss(d(pq, ps), d(nq, ns), alpha));
  });
  return pairwise_sum(terms) / static_cast<double>(terms.size());
}

// Gradient of batch_loss with respect to every matrix entry.
inline DistanceMatrix batch_loss_grad(const DistanceMatrix& d, double alpha = kDefaultAlpha) {
  require(d.batch() >= 2, ErrorCode::BatchTooSmall, "batch needs at least 2 pairs");
  const double scale = 1.0 / static_cast<double>(2 * d.batch() * (d.batch() - 1));
  DistanceMatrix g(d.batch());
  detail::for_each_triplet(d.batch(), [&](std::size_t pq, std::size_t ps, std::size_t nq, std::size_t ns) {
    const TripletGrad t = triplet_loss_grad(d(pq, ps), d(nq, ns), alpha);
    g(pq, ps) += scale * t.d_pos;
    g(nq, ns) += scale * t.d_neg;
  });
  return g;
}

struct GeoPoint {
  double lat = 0.0;
  double lon = 0.0;

  void validate() const {
    require(std::abs(lat) <= 90.0 && std::abs(lon) <= 180.0, ErrorCode::InvalidArgument,
            "geo point out of range");
  }
};

inline double deg_to_rad(double deg) { return deg * std::numbers::pi / 180.0; }

// Local equirectangular distance in metres; sub-metre accurate at sub-km range.
inline double geo_distance(const GeoPoint& a, const GeoPoint& b) {
  const double dphi = deg_to_rad(b.lat - a.lat);
  const double dlambda = deg_to_rad(b.lon - a.lon);
  const double c = std::cos(deg_to_rad(0.5 * (a.lat + b.lat)));
  return kEarthRadiusM * std::sqrt(dphi * dphi + (c * dlambda) * (c * dlambda));
}

// World (x south, y east) metres relative to `origin` -> geographic point.
inline GeoPoint offset_to_geo(const GeoPoint& origin, double x_south, double y_east) {
  const double lat = origin.lat - (x_south / kEarthRadiusM) * 180.0 / std::numbers::pi;
  const double c = std::cos(deg_to_rad(0.5 * (origin.lat + lat)));
  const double lon = origin.lon + (y_east / (kEarthRadiusM * c)) * 180.0 / std::numbers::pi;
  return {lat, lon};
}

struct QueryRanking {
  std::string query_id;
  std::vector<std::string> ranked_ids;
};

struct RecallAtK {
  std::size_t k;
  double recall;
};

// Fraction of queries with at least one of their top-k entries within
// `threshold_m` of the query position.
inline std::vector<RecallAtK> recall_at_k(const std::vector<QueryRanking>& rankings,
                                          const std::unordered_map<std::string, GeoPoint>& query_positions,
                                          const std::unordered_map<std::string, GeoPoint>& database_positions,
                                          std::span<const std::size_t> ks, double threshold_m = kSuccessRadiusM) {
  std::vector<std::size_t> first_hit;  // 1-based rank of the first success, 0 if none
  first_hit.reserve(rankings.size());
  for (const auto& r : rankings) {
    auto qit = query_positions.find(r.query_id);
    require(qit != query_positions.end(), ErrorCode::UnknownId, "query '" + r.query_id + "' has no position");
    std::unordered_set<std::string> seen;
    std::size_t hit = 0;
    for (std::size_t i = 0; i < r.ranked_ids.size(); ++i) {
      const auto& id = r.ranked_ids[i];
      require(seen.insert(id).second, ErrorCode::InvalidArgument, "duplicate id '" + id + "' in ranking");
      auto dit = database_positions.find(id);
      require(dit != database_positions.end(), ErrorCode::UnknownId, "database id '" + id + "' has no position");
      if (hit == 0 && geo_distance(qit->second, dit->second) <= threshold_m) hit = i + 1;
    }
    first_hit.push_back(hit);
  }
  std::vector<RecallAtK> out;
  for (std::size_t k : ks) {
    std::size_t successes = 0;
    for (std::size_t h : first_hit) successes += (h != 0 && h <= k);
    out.push_back({k, rankings.empty() ? 0.0 : static_cast<double>(successes) / static_cast<double>(rankings.size())});
  }
  return out;
}

}  // namespace cvl
