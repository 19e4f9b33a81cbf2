// Test-side helpers: scratch directories, random generators and oracles that
// recompute library results by independent, deliberately naive means.
#pragma once

#include <algorithm>
#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <numbers>
#include <random>
#include <set>
#include <string>
#include <vector>

#include "reidfuse/core.hpp"
#include "reidfuse/geometry.hpp"

namespace testing {

class TempDir {
 public:
  TempDir() {
    std::string tmpl = (std::filesystem::temp_directory_path() / "reidfuse-XXXXXX").string();
    path_ = ::mkdtemp(tmpl.data());
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path_, ec);
  }
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;

  const std::filesystem::path& path() const { return path_; }
  std::filesystem::path operator/(const std::string& name) const { return path_ / name; }

 private:
  std::filesystem::path path_;
};

inline std::vector<float> random_vector(std::mt19937_64& rng, std::size_t d) {
  std::normal_distribution<float> normal;
  std::vector<float> v(d);
  for (auto& x : v) x = normal(rng);
  return v;
}

/// Vertices of a random convex polygon in counterclockwise order: points on an
/// ellipse at sorted random angles, rotated and shifted.
inline reidfuse::Polygon random_convex_polygon(std::mt19937_64& rng, std::size_t n) {
  std::uniform_real_distribution<double> angle(0.0, 2.0 * std::numbers::pi);
  std::uniform_real_distribution<double> axis(20.0, 200.0);
  std::uniform_real_distribution<double> shift(-500.0, 500.0);
  std::vector<double> angles(n);
  for (auto& a : angles) a = angle(rng);
  std::sort(angles.begin(), angles.end());
  angles.erase(std::unique(angles.begin(), angles.end()), angles.end());
  const double a = axis(rng), b = axis(rng), tilt = angle(rng);
  const reidfuse::Vec2 center{shift(rng), shift(rng)};
  reidfuse::Polygon poly;
  for (double t : angles) poly.push_back(reidfuse::rotate({a * std::cos(t), b * std::sin(t)}, tilt) + center);
  return poly;
}

/// Enumerates every prefix of the ranking, counting relevant items afresh for
/// each one, and averages the prefix precisions at relevant positions.
template <typename Id>
double brute_force_ap(const std::vector<Id>& ranked, const std::set<Id>& relevant) {
  double sum = 0.0;
  for (std::size_t len = 1; len <= ranked.size(); ++len) {
    if (!relevant.count(ranked[len - 1])) continue;
    std::size_t hits = 0;
    for (std::size_t i = 0; i < len; ++i) hits += relevant.count(ranked[i]);
    sum += static_cast<double>(hits) / static_cast<double>(len);
  }
  return sum / static_cast<double>(relevant.size());
}

/// Expected AP of a uniformly random ranking of N items with R relevant:
/// (1/N) * sum_{r=1..N} (1 + (r-1)(R-1)/(N-1)) / r.
inline double expected_random_ap(std::size_t n, std::size_t r) {
  if (n == 1) return 1.0;
  double sum = 0.0;
  for (std::size_t k = 1; k <= n; ++k)
    sum += (1.0 + static_cast<double>(k - 1) * static_cast<double>(r - 1) / static_cast<double>(n - 1)) /
           static_cast<double>(k);
  return sum / static_cast<double>(n);
}

/// Kolmogorov-Smirnov distance between the empirical CDF of `values` and U(0, 1).
inline double ks_uniform(std::vector<double> values) {
  std::sort(values.begin(), values.end());
  const double n = static_cast<double>(values.size());
  double d = 0.0;
  for (std::size_t i = 0; i < values.size(); ++i) {
    d = std::max(d, static_cast<double>(i + 1) / n - values[i]);
    d = std::max(d, values[i] - static_cast<double>(i) / n);
  }
  return d;
}

/// One-sided binomial tail P(X >= k) for X ~ Bin(n, 1/2).
inline double sign_test_pvalue(std::size_t k, std::size_t n) {
  double p = 0.0;
  for (std::size_t i = k; i <= n; ++i) {
    double c = 1.0;
    for (std::size_t j = 0; j < i; ++j) c = c * static_cast<double>(n - j) / static_cast<double>(j + 1);
    p += c * std::pow(0.5, static_cast<double>(n));
  }
  return p;
}

}  // namespace testing
