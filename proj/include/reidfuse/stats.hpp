#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "reidfuse/core.hpp"

namespace reidfuse {

struct BootstrapParams {
  std::size_t resamples = 50'000;
  double lo_level = 0.025;
  double hi_level = 0.975;
  std::uint64_t seed = 7;
  double alpha = 0.05;
  std::size_t n_comparisons = 1;
  unsigned threads = 1;

  void validate() const;
};

struct ConfidenceInterval {
  double mean = 0.0;  // point estimate over the original vector
  double lo = 0.0;
  double hi = 0.0;
};

/// splitmix64 finalizer; derives independent sub-seeds from a master seed.
std::uint64_t derive_seed(std::uint64_t master, std::uint64_t stream);

/// Nearest-rank percentile of an ascending vector: element ceil(level * n), 1-based.
double nearest_rank_percentile(std::span<const double> sorted, double level);

/// Non-parametric bootstrap of the mean AP. Resamples are drawn in fixed-size
/// batches with per-batch seeds, so results do not depend on params.threads.
ConfidenceInterval bootstrap_ci(std::span<const double> aps, const BootstrapParams& params);

struct PairwiseResult {
  std::string model_a;
  std::string model_b;
  double delta = 0.0;  // mAP(A) - mAP(B)
  double p_value = 1.0;
  bool significant = false;
};

/// Two-sided paired bootstrap test of H0: mAP(A) = mAP(B). Both vectors are
/// mean-centered, query indices are resampled jointly and
/// p = (1 + #{|delta_b| >= |delta_obs|}) / (B + 1).
PairwiseResult paired_pvalue(std::span<const double> a, std::span<const double> b, const BootstrapParams& params,
                             std::string model_a = "A", std::string model_b = "B");

double bonferroni_threshold(double alpha, std::size_t n_comparisons);

/// Unordered model pairs over `splits` splits: splits * M(M-1)/2.
std::size_t comparison_count(std::size_t models, std::size_t splits);

/// Per-query APs of one model, aligned by query id.
struct ApSeries {
  std::string label;
  std::vector<SampleId> queries;
  std::vector<double> aps;
};

/// Averages the APs of each query trajectory; the result has one entry per
/// trajectory, keyed by its first query sample.
ApSeries trajectory_level(const ApSeries& series);

/// Upper triangle (row < column) in row-major order; M(M-1)/2 entries.
/// Throws QuerySetMismatch unless every series has the same queries.
std::vector<PairwiseResult> pairwise_matrix(const std::vector<ApSeries>& series, const BootstrapParams& params);

std::string format_pairwise_matrix(const std::vector<ApSeries>& series, const std::vector<PairwiseResult>& results,
                                   double threshold);

}  // namespace reidfuse
