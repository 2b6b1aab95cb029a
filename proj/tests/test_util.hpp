#pragma once

#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <string>

#include <unistd.h>

#include "cvl/feature_map.hpp"
#include "cvl/synth.hpp"

namespace cvl::testing {

inline FeatureMap<double> random_map(std::size_t h, std::size_t w, std::size_t c, Rng& rng, double lo = -1.0,
                                     double hi = 1.0, double mask_prob = 0.0) {
  FeatureMap<double> f(h, w, c, true);
  for (std::size_t r = 0; r < h; ++r)
    for (std::size_t col = 0; col < w; ++col) {
      if (mask_prob > 0 && rng.uniform() < mask_prob) {
        f.set_valid(r, col, false);
        continue;
      }
      for (auto& v : f.pixel(r, col)) v = rng.uniform(lo, hi);
    }
  return f;
}

// Pearson correlation and mean absolute error over pixels valid in both.
struct Agreement {
  std::size_t count = 0;
  double mae = 0.0;
  double corr = 0.0;
};

inline Agreement agreement(const FeatureMap<double>& a, const FeatureMap<double>& b) {
  double sa = 0, sb = 0, saa = 0, sbb = 0, sab = 0, mae = 0;
  std::size_t n = 0;
  for (std::size_t r = 0; r < a.height(); ++r)
    for (std::size_t c = 0; c < a.width(); ++c) {
      if (!a.valid(r, c) || !b.valid(r, c)) continue;
      const double x = a.at(r, c, 0), y = b.at(r, c, 0);
      sa += x;
      sb += y;
      saa += x * x;
      sbb += y * y;
      sab += x * y;
      mae += std::abs(x - y);
      ++n;
    }
  if (n == 0) return {};
  const double dn = static_cast<double>(n);
  const double cov = sab / dn - (sa / dn) * (sb / dn);
  const double va = saa / dn - (sa / dn) * (sa / dn);
  const double vb = sbb / dn - (sb / dn) * (sb / dn);
  return {n, mae / dn, cov / std::sqrt(va * vb)};
}

// Sets CVL_THREADS for the lifetime of the guard.
class ThreadsGuard {
 public:
  explicit ThreadsGuard(int n) {
    if (const char* old = std::getenv("CVL_THREADS")) previous_ = old;
    ::setenv("CVL_THREADS", std::to_string(n).c_str(), 1);
  }
  ~ThreadsGuard() {
    if (previous_.empty())
      ::unsetenv("CVL_THREADS");
    else
      ::setenv("CVL_THREADS", previous_.c_str(), 1);
  }

 private:
  std::string previous_;
};

inline std::filesystem::path temp_dir(const std::string& name) {
  const auto dir = std::filesystem::temp_directory_path() / ("cvl_test_" + name + "_" + std::to_string(::getpid()));
  std::filesystem::remove_all(dir);
  std::filesystem::create_directories(dir);
  return dir;
}

}  // namespace cvl::testing
