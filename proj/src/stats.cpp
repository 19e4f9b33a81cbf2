#include "reidfuse/stats.hpp"

#include <fmt/format.h>

#include <algorithm>
#include <cmath>
#include <map>
#include <numeric>
#include <random>

#include "reidfuse/error.hpp"
#include "reidfuse/parallel.hpp"

namespace reidfuse {

namespace {

constexpr std::size_t kBatch = 1024;

double mean_of(std::span<const double> v) { return std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size()); }

std::size_t batch_count(std::size_t resamples) { return (resamples + kBatch - 1) / kBatch; }

}  // namespace

void BootstrapParams::validate() const {
  if (resamples < 1) throw Error(ErrorCode::InvalidArgument, "bootstrap needs at least one resample");
  if (!(lo_level > 0.0 && lo_level < 1.0 && hi_level > 0.0 && hi_level < 1.0 && lo_level <= hi_level))
    throw Error(ErrorCode::InvalidArgument, "percentile levels must lie in (0,1)");
  if (n_comparisons < 1) throw Error(ErrorCode::InvalidArgument, "n_comparisons must be >= 1");
}

std::uint64_t derive_seed(std::uint64_t master, std::uint64_t stream) {
  std::uint64_t z = master + 0x9E3779B97F4A7C15ULL * (stream + 1);
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
  return z ^ (z >> 31);
}

double nearest_rank_percentile(std::span<const double> sorted, double level) {
  if (sorted.empty()) throw Error(ErrorCode::InvalidArgument, "percentile of empty vector");
  const auto n = static_cast<double>(sorted.size());
  auto rank = static_cast<std::size_t>(std::ceil(level * n - 1e-9));
  rank = std::clamp<std::size_t>(rank, 1, sorted.size());
  return sorted[rank - 1];
}

ConfidenceInterval bootstrap_ci(std::span<const double> aps, const BootstrapParams& params) {
  params.validate();
  if (aps.empty()) throw Error(ErrorCode::EmptyAPs, "no per-query APs to resample");
  const std::size_t n = aps.size();
  std::vector<double> means(params.resamples);
  parallel_for(batch_count(params.resamples), params.threads, [&](std::size_t b) {
    std::mt19937_64 rng(derive_seed(params.seed, b));
    std::uniform_int_distribution<std::size_t> pick(0, n - 1);
    const std::size_t end = std::min(params.resamples, (b + 1) * kBatch);
    for (std::size_t r = b * kBatch; r < end; ++r) {
      double sum = 0.0;
      for (std::size_t i = 0; i < n; ++i) sum += aps[pick(rng)];
      means[r] = sum / static_cast<double>(n);
    }
  });
  std::sort(means.begin(), means.end());
  return {mean_of(aps), nearest_rank_percentile(means, params.lo_level), nearest_rank_percentile(means, params.hi_level)};
}

PairwiseResult paired_pvalue(std::span<const double> a, std::span<const double> b, const BootstrapParams& params,
                             std::string model_a, std::string model_b) {
  params.validate();
  if (a.size() != b.size())
    throw Error(ErrorCode::LengthMismatch, fmt::format("{} vs {} per-query APs", a.size(), b.size()));
  if (a.empty()) throw Error(ErrorCode::EmptyAPs, "no per-query APs to compare");
  const std::size_t n = a.size();
  const double mean_a = mean_of(a);
  const double mean_b = mean_of(b);
  const double observed = std::abs(mean_a - mean_b);

  std::vector<double> ca(n), cb(n);
  for (std::size_t i = 0; i < n; ++i) {
    ca[i] = a[i] - mean_a;
    cb[i] = b[i] - mean_b;
  }
  std::vector<std::size_t> extreme(batch_count(params.resamples), 0);
  parallel_for(extreme.size(), params.threads, [&](std::size_t batch) {
    std::mt19937_64 rng(derive_seed(params.seed, batch));
    std::uniform_int_distribution<std::size_t> pick(0, n - 1);
    const std::size_t count = std::min(params.resamples, (batch + 1) * kBatch) - batch * kBatch;
    std::size_t hits = 0;
    for (std::size_t r = 0; r < count; ++r) {
      double sa = 0.0, sb = 0.0;
      for (std::size_t i = 0; i < n; ++i) {
        const std::size_t j = pick(rng);
        sa += ca[j];
        sb += cb[j];
      }
      const double delta = sa / static_cast<double>(n) - sb / static_cast<double>(n);
      if (std::abs(delta) >= observed) ++hits;
    }
    extreme[batch] = hits;
  });
  const std::size_t total = std::accumulate(extreme.begin(), extreme.end(), std::size_t{0});

  PairwiseResult result;
  result.model_a = std::move(model_a);
  result.model_b = std::move(model_b);
  result.delta = mean_a - mean_b;
  result.p_value = static_cast<double>(1 + total) / static_cast<double>(params.resamples + 1);
  result.significant = result.p_value < bonferroni_threshold(params.alpha, params.n_comparisons);
  return result;
}

double bonferroni_threshold(double alpha, std::size_t n_comparisons) {
  if (n_comparisons < 1) throw Error(ErrorCode::InvalidArgument, "n_comparisons must be >= 1");
  return alpha / static_cast<double>(n_comparisons);
}

std::size_t comparison_count(std::size_t models, std::size_t splits) {
  return models < 2 ? 0 : splits * models * (models - 1) / 2;
}

ApSeries trajectory_level(const ApSeries& series) {
  std::map<TrajectoryKey, std::pair<SampleId, std::vector<double>>> groups;
  for (std::size_t i = 0; i < series.queries.size(); ++i) {
    auto [it, inserted] = groups.try_emplace(trajectory_of(series.queries[i]), series.queries[i], std::vector<double>{});
    it->second.first = std::min(it->second.first, series.queries[i]);
    it->second.second.push_back(series.aps[i]);
  }
  ApSeries out;
  out.label = series.label;
  for (const auto& [key, group] : groups) {
    out.queries.push_back(group.first);
    out.aps.push_back(mean_of(group.second));
  }
  return out;
}

std::vector<PairwiseResult> pairwise_matrix(const std::vector<ApSeries>& series, const BootstrapParams& params) {
  for (const auto& s : series) {
    if (s.queries != series.front().queries)
      throw Error(ErrorCode::QuerySetMismatch,
                  fmt::format("'{}' and '{}' were evaluated on different queries", s.label, series.front().label));
    if (s.aps.size() != s.queries.size()) throw Error(ErrorCode::LengthMismatch, s.label);
  }
  std::vector<PairwiseResult> results;
  for (std::size_t i = 0; i < series.size(); ++i)
    for (std::size_t j = i + 1; j < series.size(); ++j)
      results.push_back(paired_pvalue(series[i].aps, series[j].aps, params, series[i].label, series[j].label));
  return results;
}

std::string format_pairwise_matrix(const std::vector<ApSeries>& series, const std::vector<PairwiseResult>& results,
                                   double threshold) {
  // Cells hold "p (delta)" for row < column; the rest stay blank.
  std::string out = fmt::format("# pairwise comparison; delta = mAP(row) - mAP(column); significant if p < {:.2g}\n",
                                threshold);
  out += "model";
  for (const auto& s : series) out += '\t' + s.label;
  out += '\n';
  std::size_t next = 0;
  for (std::size_t i = 0; i < series.size(); ++i) {
    out += series[i].label;
    for (std::size_t j = 0; j < series.size(); ++j) {
      if (j <= i) {
        out += "\t.";
        continue;
      }
      const auto& r = results.at(next++);
      out += fmt::format("\t{:.3g} ({:+.3f}){}", r.p_value, r.delta, r.p_value < threshold ? "*" : "");
    }
    out += '\n';
  }
  return out;
}

}  // namespace reidfuse
