#include "reidfuse/fusion.hpp"

#include <fmt/format.h>

#include <algorithm>
#include <cmath>
#include <map>

#include "reidfuse/error.hpp"

namespace reidfuse {

double temperature_similarity(double cosine, double tau) { return std::exp(-(1.0 - cosine) / tau); }

void minmax_normalize_rows(Matrix<double>& values, const CandidateMask& excluded) {
  for (std::size_t i = 0; i < values.rows(); ++i) {
    auto row = values.row(i);
    double lo = std::numeric_limits<double>::infinity();
    double hi = -std::numeric_limits<double>::infinity();
    for (std::size_t j = 0; j < row.size(); ++j) {
      if (is_excluded(excluded, i, j)) continue;
      lo = std::min(lo, row[j]);
      hi = std::max(hi, row[j]);
    }
    const double span = hi - lo;
    for (std::size_t j = 0; j < row.size(); ++j) {
      if (is_excluded(excluded, i, j) || !(span > 0.0)) {
        row[j] = 0.0;
      } else {
        row[j] = (row[j] - lo) / span;
      }
    }
  }
}

Matrix<double> scaled_similarity(const SimilarityMatrix& sim, double tau) {
  if (!(tau > 0.0)) throw Error(ErrorCode::InvalidArgument, "tau must be > 0");
  Matrix<double> s(sim.cosine.rows(), sim.cosine.cols());
  for (std::size_t i = 0; i < s.rows(); ++i)
    for (std::size_t j = 0; j < s.cols(); ++j) s(i, j) = temperature_similarity(sim.cosine(i, j), tau);
  minmax_normalize_rows(s, sim.excluded);
  return s;
}

Matrix<double> reciprocal_rank(const Matrix<int>& ranks, int k) {
  if (k < 0) throw Error(ErrorCode::InvalidArgument, "k must be >= 0");
  Matrix<double> rr(ranks.rows(), ranks.cols());
  for (std::size_t i = 0; i < ranks.rows(); ++i)
    for (std::size_t j = 0; j < ranks.cols(); ++j) {
      const int r = ranks(i, j);
      if (r < 0) throw Error(ErrorCode::InvalidArgument, "negative rank");
      rr(i, j) = r == 0 ? 0.0 : 1.0 / (static_cast<double>(k) + static_cast<double>(r));
    }
  return rr;
}

const StreamEvidence* FusionInputs::find(const StreamId& stream) const {
  for (const auto& e : streams)
    if (e.sim.stream == stream) return &e;
  return nullptr;
}

FusionInputs make_fusion_inputs(std::vector<SimilarityMatrix> sims) {
  if (sims.empty()) throw Error(ErrorCode::EmptyStreamSet, "no similarity matrices");
  FusionInputs inputs;
  inputs.queries = sims.front().queries;
  inputs.gallery = sims.front().gallery;
  inputs.excluded = sims.front().excluded;
  for (auto& sim : sims) {
    if (sim.queries != inputs.queries || sim.gallery != inputs.gallery || !(sim.excluded == inputs.excluded))
      throw Error(ErrorCode::ShapeMismatch, fmt::format("stream {} has a different query/gallery layout", sim.stream.name()));
    if (inputs.find(sim.stream)) throw Error(ErrorCode::DuplicateStream, sim.stream.name());
    Matrix<int> ranks = rank_matrix(sim);
    inputs.streams.push_back({std::move(sim), std::move(ranks)});
  }
  return inputs;
}

Matrix<double> fuse_terms(const std::vector<StreamTerms>& terms, const FusionParams& params) {
  params.validate();
  std::vector<const StreamTerms*> chosen;
  for (const auto& stream : params.streams) {
    const auto it = std::find_if(terms.begin(), terms.end(), [&](const StreamTerms& t) { return t.stream == stream; });
    if (it == terms.end()) throw Error(ErrorCode::MissingStream, stream.name());
    chosen.push_back(&*it);
  }
  const auto& first = chosen.front()->s;
  for (const auto* t : chosen)
    if (!t->s.same_shape(first) || !t->rr.same_shape(first))
      throw Error(ErrorCode::ShapeMismatch, fmt::format("stream {} has a different shape", t->stream.name()));

  Matrix<double> fused(first.rows(), first.cols());
  for (std::size_t i = 0; i < fused.rows(); ++i)
    for (std::size_t j = 0; j < fused.cols(); ++j) {
      double rr_sum = 0.0, s_sum = 0.0;
      for (const auto* t : chosen) {
        rr_sum += t->rr(i, j);
        s_sum += t->s(i, j);
      }
      fused(i, j) = params.lambda * rr_sum + (1.0 - params.lambda) * s_sum;
    }
  return fused;
}

FusedScores fuse(const FusionInputs& inputs, const FusionParams& params, bool keep_terms) {
  params.validate();
  std::vector<StreamTerms> terms;
  for (const auto& stream : params.streams) {
    const auto* evidence = inputs.find(stream);
    if (!evidence) throw Error(ErrorCode::MissingStream, stream.name());
    terms.push_back({stream, scaled_similarity(evidence->sim, params.tau), reciprocal_rank(evidence->ranks, params.k)});
  }
  FusedScores out;
  out.query_split = inputs.query_split;
  out.gallery_split = inputs.gallery_split;
  out.params = params;
  out.queries = inputs.queries;
  out.gallery = inputs.gallery;
  out.excluded = inputs.excluded;
  out.fused = fuse_terms(terms, params);
  for (std::size_t i = 0; i < out.fused.rows(); ++i)
    for (std::size_t j = 0; j < out.fused.cols(); ++j)
      if (is_excluded(out.excluded, i, j)) out.fused(i, j) = 0.0;
  if (keep_terms) out.terms = std::move(terms);
  return out;
}

FusedScores holdout(const FusionInputs& inputs, const FusionParams& params, const StreamId& drop) {
  FusionParams reduced = params;
  const auto it = std::find(reduced.streams.begin(), reduced.streams.end(), drop);
  if (it == reduced.streams.end()) throw Error(ErrorCode::UnknownStream, fmt::format("{} is not in the ensemble", drop.name()));
  reduced.streams.erase(it);
  if (reduced.streams.empty()) throw Error(ErrorCode::EmptyStreamSet, "holdout leaves no streams");
  return fuse(inputs, reduced);
}

SweepGrid SweepGrid::published() {
  return {{0.0, 0.2, 0.4, 0.6, 0.75, 0.8, 1.0}, {0.2, 0.5, 0.7, 1.0, 2.0, 5.0}, {1, 10, 20, 30, 60, 100, 150, 200, 300, 500}};
}

SweepTables sweep(const FusionInputs& inputs, const FusionParams& base, const SweepGrid& grid, const Evaluator& evaluate) {
  SweepTables tables;
  for (double lambda : grid.lambdas) {
    FusionParams p = base;
    p.lambda = lambda;
    tables.lambda.push_back({"lambda", lambda, evaluate(fuse(inputs, p))});
  }
  for (double tau : grid.taus) {
    FusionParams p = base;
    p.tau = tau;
    tables.tau.push_back({"tau", tau, evaluate(fuse(inputs, p))});
  }
  for (int k : grid.ks) {
    FusionParams p = base;
    p.k = k;
    tables.k.push_back({"k", static_cast<double>(k), evaluate(fuse(inputs, p))});
  }
  return tables;
}

std::vector<AblationRow> holdout_table(const FusionInputs& inputs, const FusionParams& params,
                                       const std::vector<StreamId>& drops, const Evaluator& evaluate) {
  std::vector<AblationRow> rows;
  for (const auto& drop : drops) rows.push_back({drop.name(), 0.0, evaluate(holdout(inputs, params, drop))});
  rows.push_back({"None", 0.0, evaluate(fuse(inputs, params))});
  return rows;
}

std::string format_ablation_table(std::string_view header, const std::vector<AblationRow>& rows, bool holdout,
                                  double highlight) {
  std::string out = fmt::format("{}\tmap\n", header);
  for (const auto& row : rows) {
    const std::string key = holdout ? row.label : format_real(row.value);
    const bool marked = holdout ? row.label == "None" : row.value == highlight;
    out += fmt::format("{}{}\t{:.3f}\n", key, marked ? "*" : "", row.map);
  }
  return out;
}

std::string to_text(const FusedScores& scores, std::size_t topk) {
  std::string out = "# reid-fuse scores v1\n";
  out += fmt::format("label\t{}\n", scores.label.empty() ? join_streams(scores.params.streams) : scores.label);
  out += fmt::format("query_split\t{}\n", scores.query_split);
  out += fmt::format("gallery_split\t{}\n", scores.gallery_split);
  out += fmt::format("streams\t{}\n", join_streams(scores.params.streams));
  out += fmt::format("lambda\t{}\n", format_real(scores.params.lambda));
  out += fmt::format("tau\t{}\n", format_real(scores.params.tau));
  out += fmt::format("k\t{}\n", scores.params.k);
  out += fmt::format("shape\t{}\t{}\n", scores.queries.size(), scores.gallery.size());
  out += "gallery";
  for (const auto& g : scores.gallery) out += '\t' + to_string(g);
  out += '\n';
  for (std::size_t i = 0; i < scores.queries.size(); ++i) {
    out += "row\t" + to_string(scores.queries[i]);
    for (std::size_t j = 0; j < scores.gallery.size(); ++j)
      out += is_excluded(scores.excluded, i, j) ? std::string("\tx") : '\t' + format_real(scores.fused(i, j));
    out += '\n';
  }
  if (topk > 0) {
    for (std::size_t i = 0; i < scores.queries.size(); ++i) {
      out += "top\t" + to_string(scores.queries[i]);
      const auto order = ranked_columns(scores.fused.row(i), scores.excluded, i);
      for (std::size_t n = 0; n < std::min(topk, order.size()); ++n)
        out += '\t' + to_string(scores.gallery[order[n]]);
      out += '\n';
    }
  }
  return out;
}

FusedScores parse_scores(std::string_view text) {
  FusedScores scores;
  std::size_t rows = 0, cols = 0;
  bool shaped = false;
  std::vector<std::vector<std::string_view>> row_fields;
  int line_no = 0;
  const auto bad = [&](const std::string& what) {
    return Error(ErrorCode::MalformedRecord, fmt::format("scores line {}: {}", line_no, what));
  };
  for (auto line : split(text, '\n')) {
    ++line_no;
    if (trim(line).empty() || line.front() == '#') continue;
    auto f = split(line, '\t');
    const auto key = f[0];
    const auto need = [&](std::size_t n) {
      if (f.size() != n) throw bad(fmt::format("expected {} fields", n));
    };
    if (key == "label") {
      need(2);
      scores.label = std::string(f[1]);
    } else if (key == "query_split") {
      need(2);
      scores.query_split = std::string(f[1]);
    } else if (key == "gallery_split") {
      need(2);
      scores.gallery_split = std::string(f[1]);
    } else if (key == "streams") {
      need(2);
      scores.params.streams = parse_stream_list(f[1]);
    } else if (key == "lambda") {
      need(2);
      scores.params.lambda = parse_real(f[1]);
    } else if (key == "tau") {
      need(2);
      scores.params.tau = parse_real(f[1]);
    } else if (key == "k") {
      need(2);
      scores.params.k = static_cast<int>(parse_integer(f[1]));
    } else if (key == "shape") {
      need(3);
      rows = static_cast<std::size_t>(parse_integer(f[1]));
      cols = static_cast<std::size_t>(parse_integer(f[2]));
      shaped = true;
    } else if (key == "gallery") {
      for (std::size_t i = 1; i < f.size(); ++i) scores.gallery.push_back(parse_sample_id(f[i]));
    } else if (key == "row") {
      if (f.size() < 2) throw bad("row without query id");
      scores.queries.push_back(parse_sample_id(f[1]));
      row_fields.push_back(std::move(f));
    } else if (key == "top") {
      continue;
    } else {
      throw bad(fmt::format("unknown key '{}'", key));
    }
  }
  if (!shaped || scores.queries.size() != rows || scores.gallery.size() != cols)
    throw Error(ErrorCode::MalformedRecord, "scores file shape does not match its rows");
  scores.fused = Matrix<double>(rows, cols);
  for (std::size_t i = 0; i < rows; ++i) {
    const auto& f = row_fields[i];
    if (f.size() != cols + 2) throw Error(ErrorCode::MalformedRecord, fmt::format("row {} has {} scores", i, f.size() - 2));
    for (std::size_t j = 0; j < cols; ++j) {
      if (f[j + 2] == "x") {
        if (scores.excluded.rows() == 0) scores.excluded = CandidateMask(rows, cols, 0);
        scores.excluded(i, j) = 1;
      } else {
        scores.fused(i, j) = parse_real(f[j + 2]);
      }
    }
  }
  return scores;
}

}  // namespace reidfuse
