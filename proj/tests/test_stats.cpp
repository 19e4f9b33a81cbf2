#include <cmath>
#include <random>

#include "doctest.h"
#include "reidfuse/error.hpp"
#include "reidfuse/stats.hpp"
#include "support.hpp"

using namespace reidfuse;
using doctest::Approx;

namespace {

ErrorCode code_of(auto&& f) {
  try {
    f();
  } catch (const Error& e) {
    return e.code();
  }
  FAIL("expected an error");
  return ErrorCode::InvalidArgument;
}

BootstrapParams with_resamples(std::size_t b, std::uint64_t seed = 7) {
  BootstrapParams p;
  p.resamples = b;
  p.seed = seed;
  return p;
}

// Smallest x with P(Bin(n, 1/2) <= x) >= level, as a fraction of n.
double binomial_quantile(int n, double level) {
  double cdf = 0.0, c = 1.0;
  for (int x = 0; x <= n; ++x) {
    if (x > 0) c = c * (n - x + 1) / x;
    cdf += c * std::pow(0.5, n);
    if (cdf >= level) return static_cast<double>(x) / n;
  }
  return 1.0;
}

}  // namespace

TEST_CASE("constant AP vectors give a degenerate interval") {
  const std::vector<double> flat(40, 0.8);
  const auto ci = bootstrap_ci(flat, with_resamples(2000));
  CHECK(ci.mean == Approx(0.8).epsilon(1e-12));
  CHECK(ci.lo == Approx(0.8).epsilon(1e-12));
  CHECK(ci.hi == Approx(0.8).epsilon(1e-12));
  CHECK(ci.lo == ci.hi);

  const std::vector<double> one{1.0};
  const auto single = bootstrap_ci(one, with_resamples(100));
  CHECK(single.mean == 1.0);
  CHECK(single.lo == 1.0);
  CHECK(single.hi == 1.0);

  CHECK(code_of([] { bootstrap_ci({}, with_resamples(10)); }) == ErrorCode::EmptyAPs);
}

TEST_CASE("half zeros and half ones match the binomial percentiles") {
  std::vector<double> aps(100);
  for (std::size_t i = 0; i < 100; ++i) aps[i] = i % 2;
  const auto ci = bootstrap_ci(aps, with_resamples(50000));
  CHECK(ci.mean == 0.5);
  CHECK(binomial_quantile(100, 0.025) == 0.40);
  CHECK(binomial_quantile(100, 0.975) == 0.60);
  CHECK(std::abs(ci.lo - binomial_quantile(100, 0.025)) <= 0.02);
  CHECK(std::abs(ci.hi - binomial_quantile(100, 0.975)) <= 0.02);
}

TEST_CASE("intervals are ordered and reproducible, whatever the thread count") {
  std::mt19937_64 rng(1);
  std::uniform_real_distribution<double> u(0, 1);
  for (int trial = 0; trial < 10; ++trial) {
    std::vector<double> aps(1 + rng() % 60);
    for (auto& x : aps) x = u(rng);
    auto p = with_resamples(3000 + rng() % 3000, rng());
    const auto one = bootstrap_ci(aps, p);
    p.threads = 4;
    const auto four = bootstrap_ci(aps, p);
    CHECK(one.lo <= one.hi);
    CHECK(one.lo == four.lo);
    CHECK(one.hi == four.hi);
    CHECK(bootstrap_ci(aps, p).lo == four.lo);

    std::vector<double> b(aps.size());
    for (auto& x : b) x = u(rng);
    auto q = with_resamples(2500, 3);
    const auto r1 = paired_pvalue(aps, b, q);
    q.threads = 3;
    const auto r3 = paired_pvalue(aps, b, q);
    CHECK(r1.p_value == r3.p_value);
  }
}

TEST_CASE("nearest-rank percentiles") {
  const std::vector<double> v{1, 2, 3, 4, 5, 6, 7, 8, 9, 10};
  CHECK(nearest_rank_percentile(v, 0.025) == 1);
  CHECK(nearest_rank_percentile(v, 0.5) == 5);
  CHECK(nearest_rank_percentile(v, 0.55) == 6);
  CHECK(nearest_rank_percentile(v, 0.975) == 10);
  CHECK(code_of([] { nearest_rank_percentile({}, 0.5); }) == ErrorCode::InvalidArgument);
}

TEST_CASE("paired p-value examples") {
  std::mt19937_64 rng(2);
  std::uniform_real_distribution<double> u(0, 1);
  std::vector<double> a(30);
  for (auto& x : a) x = u(rng);

  const auto same = paired_pvalue(a, a, with_resamples(2000));
  CHECK(same.delta == 0.0);
  CHECK(same.p_value == 1.0);
  CHECK_FALSE(same.significant);

  const std::vector<double> hi(25, 0.8), lo(25, 0.3);
  const auto shifted = paired_pvalue(hi, lo, with_resamples(2000));
  CHECK(shifted.delta == Approx(0.5).epsilon(1e-12));
  CHECK(shifted.p_value == 1.0 / 2001.0);
  CHECK(shifted.significant);

  CHECK(code_of([&] { paired_pvalue(a, std::vector<double>(29, 0.1), with_resamples(10)); }) ==
        ErrorCode::LengthMismatch);
}

TEST_CASE("swapping the models negates delta and keeps p") {
  std::mt19937_64 rng(4);
  std::uniform_real_distribution<double> u(0, 1);
  for (int trial = 0; trial < 20; ++trial) {
    std::vector<double> a(2 + rng() % 40), b(a.size());
    for (auto& x : a) x = u(rng);
    for (auto& x : b) x = u(rng) * u(rng);
    const auto p = with_resamples(1500, trial);
    const auto ab = paired_pvalue(a, b, p);
    const auto ba = paired_pvalue(b, a, p);
    CHECK(ab.delta == -ba.delta);
    CHECK(ab.p_value == ba.p_value);
    CHECK(ab.p_value > 0.0);
    CHECK(ab.p_value <= 1.0);
  }
}

TEST_CASE("null p-values are close to uniform") {
  std::mt19937_64 rng(2024);
  std::uniform_real_distribution<double> u(0, 1);
  std::vector<double> ps;
  for (int trial = 0; trial < 300; ++trial) {
    std::vector<double> a(40), b(40);
    for (auto& x : a) x = u(rng);
    for (auto& x : b) x = u(rng);
    ps.push_back(paired_pvalue(a, b, with_resamples(1000, rng())).p_value);
  }
  // The 1000-trial version runs in the acceptance binary; 300 trials allow a looser bound.
  CHECK(testing::ks_uniform(ps) < 0.1);
}

TEST_CASE("Bonferroni threshold") {
  CHECK(comparison_count(10, 2) == 90);
  CHECK(comparison_count(10, 1) == 45);
  CHECK(comparison_count(1, 2) == 0);
  CHECK(bonferroni_threshold(0.05, 90) == Approx(5.6e-4).epsilon(0.01));
  CHECK(bonferroni_threshold(0.05, 1) == 0.05);
  CHECK(code_of([] { bonferroni_threshold(0.05, 0); }) == ErrorCode::InvalidArgument);

  auto p = with_resamples(1000);
  p.n_comparisons = 90;
  const std::vector<double> hi(25, 0.8), lo(25, 0.3);
  // The smallest attainable p is 1/(B+1): 1/1001 misses 0.05/90, 1/2001 clears it.
  CHECK_FALSE(paired_pvalue(hi, lo, p).significant);
  p.resamples = 2000;
  CHECK(paired_pvalue(hi, lo, p).significant);
}

TEST_CASE("bootstrap parameter validation") {
  CHECK(code_of([] { bootstrap_ci(std::vector<double>{1.0}, with_resamples(0)); }) == ErrorCode::InvalidArgument);
  auto p = with_resamples(10);
  p.hi_level = 1.0;
  CHECK(code_of([&] { bootstrap_ci(std::vector<double>{1.0}, p); }) == ErrorCode::InvalidArgument);
}

TEST_CASE("pairwise matrix shape") {
  std::mt19937_64 rng(6);
  std::uniform_real_distribution<double> u(0, 1);
  auto make = [&](std::size_t m) {
    std::vector<ApSeries> out;
    for (std::size_t i = 0; i < m; ++i) {
      ApSeries s;
      s.label = "m" + std::to_string(i);
      for (std::uint32_t q = 0; q < 12; ++q) {
        s.queries.push_back({1, q / 3, q});
        s.aps.push_back(u(rng));
      }
      out.push_back(std::move(s));
    }
    return out;
  };
  const auto p = with_resamples(200);
  const auto ten = make(10);
  const auto results = pairwise_matrix(ten, p);
  CHECK(results.size() == 45);
  CHECK(results[0].model_a == "m0");
  CHECK(results[0].model_b == "m1");
  CHECK(results[44].model_a == "m8");
  CHECK(results[44].model_b == "m9");
  CHECK(pairwise_matrix(make(2), p).size() == 1);
  CHECK(pairwise_matrix(make(1), p).empty());

  const auto text = format_pairwise_matrix(ten, results, 0.05 / 90);
  CHECK(std::count(text.begin(), text.end(), '\n') == 12);

  auto broken = make(3);
  broken[2].queries[0] = {9, 9, 9};
  CHECK(code_of([&] { pairwise_matrix(broken, p); }) == ErrorCode::QuerySetMismatch);
}

TEST_CASE("trajectory-level series average each trajectory") {
  ApSeries s;
  s.label = "x";
  s.queries = {{1, 2, 10}, {1, 1, 5}, {1, 2, 0}, {1, 1, 0}, {1, 3, 0}};
  s.aps = {1.0, 0.5, 0.0, 0.25, 0.75};
  const auto t = trajectory_level(s);
  CHECK(t.label == "x");
  CHECK(t.queries == std::vector<SampleId>{{1, 1, 0}, {1, 2, 0}, {1, 3, 0}});
  REQUIRE(t.aps.size() == 3);
  CHECK(t.aps[0] == Approx(0.375));
  CHECK(t.aps[1] == Approx(0.5));
  CHECK(t.aps[2] == Approx(0.75));
}

TEST_CASE("derived seeds differ across streams and masters") {
  std::set<std::uint64_t> seen;
  for (std::uint64_t m = 0; m < 20; ++m)
    for (std::uint64_t s = 0; s < 50; ++s) seen.insert(derive_seed(m, s));
  CHECK(seen.size() == 1000);
  CHECK(derive_seed(7, 3) == derive_seed(7, 3));
}
