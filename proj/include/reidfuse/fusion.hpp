#pragma once

#include <functional>
#include <limits>
#include <string>
#include <string_view>
#include <vector>

#include "reidfuse/core.hpp"
#include "reidfuse/gallery.hpp"
#include "reidfuse/matrix.hpp"

namespace reidfuse {

/// exp(-(1 - cos) / tau) before per-query normalization.
double temperature_similarity(double cosine, double tau);

/// Maps each row's candidate entries to [0, 1] by (x - min) / (max - min).
/// Constant rows become all zeros. Excluded entries are set to zero.
void minmax_normalize_rows(Matrix<double>& values, const CandidateMask& excluded = {});

/// Temperature-scaled and per-query min-max normalized similarity `s`.
Matrix<double> scaled_similarity(const SimilarityMatrix& sim, double tau);

/// 1 / (k + rank). Rank 0 marks a non-candidate and yields 0.
Matrix<double> reciprocal_rank(const Matrix<int>& ranks, int k);

/// Per-stream terms entering the fused score.
struct StreamTerms {
  StreamId stream;
  Matrix<double> s;
  Matrix<double> rr;
};

/// Per-stream cosine similarities and ranks over one shared query/gallery layout.
struct StreamEvidence {
  SimilarityMatrix sim;
  Matrix<int> ranks;
};

struct FusionInputs {
  std::vector<SampleId> queries;
  std::vector<SampleId> gallery;
  CandidateMask excluded;
  std::vector<StreamEvidence> streams;
  std::string query_split;
  std::string gallery_split;

  const StreamEvidence* find(const StreamId& stream) const;
};

/// Checks that every matrix shares one query/gallery layout and mask, then ranks each.
FusionInputs make_fusion_inputs(std::vector<SimilarityMatrix> sims);

struct FusedScores {
  std::string label;
  std::string query_split;
  std::string gallery_split;
  FusionParams params;
  std::vector<SampleId> queries;
  std::vector<SampleId> gallery;
  CandidateMask excluded;
  Matrix<double> fused;
  std::vector<StreamTerms> terms;  // filled only when requested
};

/// S = lambda * sum_p rr_p + (1 - lambda) * sum_p s_p over params.streams.
/// Throws MissingStream or ShapeMismatch.
Matrix<double> fuse_terms(const std::vector<StreamTerms>& terms, const FusionParams& params);

FusedScores fuse(const FusionInputs& inputs, const FusionParams& params, bool keep_terms = false);

/// fuse() over params.streams without `drop`.
FusedScores holdout(const FusionInputs& inputs, const FusionParams& params, const StreamId& drop);

using Evaluator = std::function<double(const FusedScores&)>;

struct AblationRow {
  std::string label;
  double value = 0.0;  // parameter value; unused for holdout rows
  double map = 0.0;
};

struct SweepGrid {
  std::vector<double> lambdas;
  std::vector<double> taus;
  std::vector<int> ks;

  /// The row sets of the published ablation tables.
  static SweepGrid published();
};

struct SweepTables {
  std::vector<AblationRow> lambda;
  std::vector<AblationRow> tau;
  std::vector<AblationRow> k;
};

/// One-at-a-time sweep: each grid varies one parameter, the others stay at `base`.
SweepTables sweep(const FusionInputs& inputs, const FusionParams& base, const SweepGrid& grid, const Evaluator& evaluate);

/// One row per dropped stream followed by "None" for the full ensemble.
std::vector<AblationRow> holdout_table(const FusionInputs& inputs, const FusionParams& params,
                                       const std::vector<StreamId>& drops, const Evaluator& evaluate);

std::string format_ablation_table(std::string_view header, const std::vector<AblationRow>& rows, bool holdout,
                                  double highlight = std::numeric_limits<double>::quiet_NaN());

/// Scores file: metadata lines, one `gallery` line, then `row <query> <scores...>`
/// with `x` for non-candidates, optionally followed by `top` lines.
std::string to_text(const FusedScores& scores, std::size_t topk = 0);
FusedScores parse_scores(std::string_view text);

}  // namespace reidfuse
