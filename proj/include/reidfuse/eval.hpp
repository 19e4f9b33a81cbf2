#pragma once

#include <cstdint>
#include <optional>
#include <set>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "json.hpp"

#include "reidfuse/core.hpp"
#include "reidfuse/fusion.hpp"
#include "reidfuse/stats.hpp"

namespace reidfuse {

struct QueryEntry {
  SampleId query;
  std::vector<SampleId> relevant;
};

struct QuerySet {
  std::vector<QueryEntry> entries;
  std::uint64_t seed = 0;

  std::vector<SampleId> queries() const;
};

/// Up to `per_id` samples of every trajectory, drawn without replacement with
/// a seeded generator. Output is sorted.
std::vector<SampleId> sample_per_trajectory(const std::vector<SampleId>& split, std::size_t per_id, std::uint64_t seed);

/// Samples queries and marks the other samples of each query's trajectory as
/// relevant. Relevance is drawn from the sampled subset, or from the whole
/// split when `relevance_from_full_split` is set.
QuerySet sample_queries(const std::vector<SampleId>& split, std::size_t per_id, std::uint64_t seed,
                        bool relevance_from_full_split = false);

/// Within-split relevance for an explicit query list against a gallery.
QuerySet within_split_relevance(const std::vector<SampleId>& queries, const std::vector<SampleId>& gallery);

enum class MatchStatus { Confirmed, Rejected, Unsure };

std::string_view to_string(MatchStatus status);
MatchStatus parse_match_status(std::string_view text);

/// Annotator decision about a (camera-1 trajectory, camera-2 trajectory) pair.
struct VerifiedMatch {
  TrajectoryKey query;
  TrajectoryKey gallery;
  MatchStatus status = MatchStatus::Confirmed;
  std::string annotator;
  std::string timestamp;

  bool operator==(const VerifiedMatch&) const = default;
};

// Matches file: `query<TAB>gallery<TAB>status<TAB>annotator<TAB>timestamp`,
// trajectories written as camera:trajectory.
VerifiedMatch parse_match_line(std::string_view line, int line_no = 0);
std::string format_match_line(const VerifiedMatch& match);
std::vector<VerifiedMatch> parse_matches(std::string_view text);
std::string format_matches(const std::vector<VerifiedMatch>& matches);

/// The latest record for every pair, in first-seen pair order.
std::vector<VerifiedMatch> latest_decisions(const std::vector<VerifiedMatch>& log);
std::set<std::pair<TrajectoryKey, TrajectoryKey>> confirmed_pairs(const std::vector<VerifiedMatch>& log);

/// Mean over relevant positions r of (relevant items in the top r) / r.
/// Throws NoRelevant when `relevant` is empty and InvalidArgument when it is
/// not contained in `ranked`.
double average_precision(std::span<const SampleId> ranked, const std::set<SampleId>& relevant);

enum class EvalMode { Validation, Test };

std::string_view to_string(EvalMode mode);
EvalMode parse_eval_mode(std::string_view text);

struct QueryAp {
  SampleId query;
  double ap = 0.0;
};

struct EvalReport {
  EvalMode mode = EvalMode::Validation;
  std::string label;
  std::string query_split;
  std::string gallery_split;
  FusionParams params;
  std::vector<QueryAp> per_query;
  double map = 0.0;

  ApSeries series() const;
};

/// Within-split retrieval: self matches are never candidates. Queries with no
/// relevant gallery item are left out of the mean.
EvalReport validation_eval(const FusedScores& scores, const QuerySet& queries);

/// Cross-camera retrieval against confirmed trajectory pairs. Queries are the
/// rows whose trajectory has a confirmed match; every gallery sample of a
/// matched trajectory is relevant.
EvalReport test_eval(const FusedScores& scores, const std::vector<VerifiedMatch>& matches);

std::string to_text(const EvalReport& report);
EvalReport parse_report(std::string_view text);
nlohmann::json to_json(const EvalReport& report);

/// One Table-1 row: a configuration with optional validation and test reports.
struct ModelReports {
  std::string label;
  std::optional<EvalReport> validation;
  std::optional<EvalReport> test;
};

struct CompareRow {
  std::string label;
  std::optional<ConfidenceInterval> validation;
  std::optional<ConfidenceInterval> test;
};

/// Throws QuerySetMismatch unless all reports of a mode share their queries.
std::vector<CompareRow> model_compare(const std::vector<ModelReports>& models, const BootstrapParams& params);
std::string format_compare_table(const std::vector<CompareRow>& rows);

}  // namespace reidfuse
