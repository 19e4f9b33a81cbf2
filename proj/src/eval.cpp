#include "reidfuse/eval.hpp"

#include <fmt/format.h>

#include <algorithm>
#include <map>
#include <numeric>
#include <random>
#include <unordered_map>

#include "reidfuse/error.hpp"

namespace reidfuse {

std::vector<SampleId> QuerySet::queries() const {
  std::vector<SampleId> out;
  for (const auto& e : entries) out.push_back(e.query);
  return out;
}

namespace {

std::map<TrajectoryKey, std::vector<SampleId>> group_by_trajectory(const std::vector<SampleId>& samples) {
  std::map<TrajectoryKey, std::vector<SampleId>> groups;
  for (const auto& id : samples) groups[trajectory_of(id)].push_back(id);
  for (auto& [k, v] : groups) std::sort(v.begin(), v.end());
  return groups;
}

}  // namespace

std::vector<SampleId> sample_per_trajectory(const std::vector<SampleId>& split, std::size_t per_id, std::uint64_t seed) {
  std::vector<SampleId> out;
  for (auto& [key, members] : group_by_trajectory(split)) {
    // Seeded per trajectory so one track's draw does not depend on the others.
    std::mt19937_64 rng(derive_seed(seed, (std::uint64_t{key.camera} << 32) | key.trajectory));
    std::shuffle(members.begin(), members.end(), rng);
    members.resize(std::min(per_id, members.size()));
    out.insert(out.end(), members.begin(), members.end());
  }
  std::sort(out.begin(), out.end());
  return out;
}

QuerySet within_split_relevance(const std::vector<SampleId>& queries, const std::vector<SampleId>& gallery) {
  const auto groups = group_by_trajectory(gallery);
  QuerySet set;
  for (const auto& q : queries) {
    QueryEntry entry{q, {}};
    if (const auto it = groups.find(trajectory_of(q)); it != groups.end())
      for (const auto& g : it->second)
        if (g != q) entry.relevant.push_back(g);
    set.entries.push_back(std::move(entry));
  }
  return set;
}

QuerySet sample_queries(const std::vector<SampleId>& split, std::size_t per_id, std::uint64_t seed,
                        bool relevance_from_full_split) {
  const auto sampled = sample_per_trajectory(split, per_id, seed);
  QuerySet set = within_split_relevance(sampled, relevance_from_full_split ? split : sampled);
  set.seed = seed;
  return set;
}

std::string_view to_string(MatchStatus status) {
  switch (status) {
    case MatchStatus::Confirmed: return "confirmed";
    case MatchStatus::Rejected: return "rejected";
    case MatchStatus::Unsure: return "unsure";
  }
  return "unsure";
}

MatchStatus parse_match_status(std::string_view text) {
  text = trim(text);
  if (text == "confirmed") return MatchStatus::Confirmed;
  if (text == "rejected") return MatchStatus::Rejected;
  if (text == "unsure") return MatchStatus::Unsure;
  throw Error(ErrorCode::InvalidArgument, fmt::format("unknown match status '{}'", text));
}

VerifiedMatch parse_match_line(std::string_view line, int line_no) {
  const auto f = split(trim(line), '\t');
  if (f.size() < 3 || f.size() > 5)
    throw Error(ErrorCode::MalformedRecord, fmt::format("matches line {}: expected 3 to 5 fields", line_no));
  try {
    VerifiedMatch m;
    m.query = parse_trajectory_key(f[0]);
    m.gallery = parse_trajectory_key(f[1]);
    m.status = parse_match_status(f[2]);
    if (f.size() > 3) m.annotator = std::string(f[3]);
    if (f.size() > 4) m.timestamp = std::string(f[4]);
    return m;
  } catch (const Error& e) {
    throw Error(ErrorCode::MalformedRecord, fmt::format("matches line {}: {}", line_no, e.what()));
  }
}

std::string format_match_line(const VerifiedMatch& m) {
  return fmt::format("{}\t{}\t{}\t{}\t{}", to_string(m.query), to_string(m.gallery), to_string(m.status), m.annotator,
                     m.timestamp);
}

std::vector<VerifiedMatch> parse_matches(std::string_view text) {
  std::vector<VerifiedMatch> out;
  int line_no = 0;
  for (auto line : split(text, '\n')) {
    ++line_no;
    const auto t = trim(line);
    if (t.empty() || t.front() == '#') continue;
    out.push_back(parse_match_line(line, line_no));
  }
  return out;
}

std::string format_matches(const std::vector<VerifiedMatch>& matches) {
  std::string out = "# query\tgallery\tstatus\tannotator\ttimestamp\n";
  for (const auto& m : matches) out += format_match_line(m) + '\n';
  return out;
}

std::vector<VerifiedMatch> latest_decisions(const std::vector<VerifiedMatch>& log) {
  std::vector<VerifiedMatch> out;
  std::map<std::pair<TrajectoryKey, TrajectoryKey>, std::size_t> slot;
  for (const auto& m : log) {
    const auto key = std::make_pair(m.query, m.gallery);
    if (const auto it = slot.find(key); it != slot.end()) {
      out[it->second] = m;
    } else {
      slot.emplace(key, out.size());
      out.push_back(m);
    }
  }
  return out;
}

std::set<std::pair<TrajectoryKey, TrajectoryKey>> confirmed_pairs(const std::vector<VerifiedMatch>& log) {
  std::set<std::pair<TrajectoryKey, TrajectoryKey>> out;
  for (const auto& m : latest_decisions(log))
    if (m.status == MatchStatus::Confirmed) out.emplace(m.query, m.gallery);
  return out;
}

double average_precision(std::span<const SampleId> ranked, const std::set<SampleId>& relevant) {
  if (relevant.empty()) throw Error(ErrorCode::NoRelevant, "query has no relevant gallery item");
  std::size_t hits = 0;
  double sum = 0.0;
  for (std::size_t r = 0; r < ranked.size(); ++r) {
    if (relevant.count(ranked[r])) {
      ++hits;
      sum += static_cast<double>(hits) / static_cast<double>(r + 1);
    }
  }
  if (hits != relevant.size()) throw Error(ErrorCode::InvalidArgument, "relevant set is not a subset of the gallery");
  return sum / static_cast<double>(relevant.size());
}

std::string_view to_string(EvalMode mode) { return mode == EvalMode::Validation ? "val" : "test"; }

EvalMode parse_eval_mode(std::string_view text) {
  if (text == "val") return EvalMode::Validation;
  if (text == "test") return EvalMode::Test;
  throw Error(ErrorCode::InvalidArgument, fmt::format("mode must be val or test, got '{}'", text));
}

ApSeries EvalReport::series() const {
  ApSeries s;
  s.label = label;
  for (const auto& q : per_query) {
    s.queries.push_back(q.query);
    s.aps.push_back(q.ap);
  }
  return s;
}

namespace {

EvalReport report_shell(const FusedScores& scores, EvalMode mode) {
  EvalReport report;
  report.mode = mode;
  report.label = scores.label.empty() ? join_streams(scores.params.streams) : scores.label;
  report.query_split = scores.query_split;
  report.gallery_split = scores.gallery_split;
  report.params = scores.params;
  return report;
}

/// Ranks row `i` of the fused matrix, dropping non-candidates and the query itself.
std::vector<SampleId> ranked_gallery(const FusedScores& scores, std::size_t i) {
  std::vector<SampleId> ranked;
  for (std::size_t j : ranked_columns(scores.fused.row(i), scores.excluded, i))
    if (scores.gallery[j] != scores.queries[i]) ranked.push_back(scores.gallery[j]);
  return ranked;
}

void finish(EvalReport& report) {
  if (report.per_query.empty()) throw Error(ErrorCode::EmptyQuerySet, "no query has a relevant gallery item");
  double sum = 0.0;
  for (const auto& q : report.per_query) sum += q.ap;
  report.map = sum / static_cast<double>(report.per_query.size());
}

}  // namespace

EvalReport validation_eval(const FusedScores& scores, const QuerySet& queries) {
  if (queries.entries.empty()) throw Error(ErrorCode::EmptyQuerySet, "query set is empty");
  std::unordered_map<SampleId, std::size_t> row_of;
  for (std::size_t i = 0; i < scores.queries.size(); ++i) row_of.emplace(scores.queries[i], i);
  const std::set<SampleId> gallery(scores.gallery.begin(), scores.gallery.end());

  EvalReport report = report_shell(scores, EvalMode::Validation);
  for (const auto& entry : queries.entries) {
    const auto it = row_of.find(entry.query);
    if (it == row_of.end()) throw Error(ErrorCode::UnknownQuery, to_string(entry.query));
    std::set<SampleId> relevant;
    for (const auto& r : entry.relevant)
      if (r != entry.query && gallery.count(r)) relevant.insert(r);
    if (relevant.empty()) continue;
    const auto ranked = ranked_gallery(scores, it->second);
    report.per_query.push_back({entry.query, average_precision(ranked, relevant)});
  }
  finish(report);
  return report;
}

EvalReport test_eval(const FusedScores& scores, const std::vector<VerifiedMatch>& matches) {
  const auto confirmed = confirmed_pairs(matches);
  if (confirmed.empty()) throw Error(ErrorCode::NoVerifiedMatches, "no confirmed cross-camera pairs");
  std::map<TrajectoryKey, std::set<TrajectoryKey>> partners;
  for (const auto& [q, g] : confirmed) partners[q].insert(g);

  EvalReport report = report_shell(scores, EvalMode::Test);
  for (std::size_t i = 0; i < scores.queries.size(); ++i) {
    const auto it = partners.find(trajectory_of(scores.queries[i]));
    if (it == partners.end()) continue;
    std::set<SampleId> relevant;
    for (std::size_t j = 0; j < scores.gallery.size(); ++j)
      if (!is_excluded(scores.excluded, i, j) && scores.gallery[j] != scores.queries[i] &&
          it->second.count(trajectory_of(scores.gallery[j])))
        relevant.insert(scores.gallery[j]);
    if (relevant.empty()) continue;
    report.per_query.push_back({scores.queries[i], average_precision(ranked_gallery(scores, i), relevant)});
  }
  finish(report);
  return report;
}

std::string to_text(const EvalReport& report) {
  std::string out = "# reid-fuse report v1\n";
  out += fmt::format("mode\t{}\n", to_string(report.mode));
  out += fmt::format("label\t{}\n", report.label);
  out += fmt::format("query_split\t{}\n", report.query_split);
  out += fmt::format("gallery_split\t{}\n", report.gallery_split);
  out += fmt::format("streams\t{}\n", join_streams(report.params.streams));
  out += fmt::format("lambda\t{}\n", format_real(report.params.lambda));
  out += fmt::format("tau\t{}\n", format_real(report.params.tau));
  out += fmt::format("k\t{}\n", report.params.k);
  out += fmt::format("queries\t{}\n", report.per_query.size());
  out += fmt::format("map\t{}\n", format_real(report.map));
  for (const auto& q : report.per_query) out += fmt::format("ap\t{}\t{}\n", to_string(q.query), format_real(q.ap));
  return out;
}

EvalReport parse_report(std::string_view text) {
  EvalReport report;
  std::size_t declared = 0;
  int line_no = 0;
  for (auto line : split(text, '\n')) {
    ++line_no;
    if (trim(line).empty() || line.front() == '#') continue;
    const auto f = split(line, '\t');
    const auto key = f[0];
    if (f.size() < 2) throw Error(ErrorCode::MalformedRecord, fmt::format("report line {}: missing value", line_no));
    if (key == "mode") report.mode = parse_eval_mode(f[1]);
    else if (key == "label") report.label = std::string(f[1]);
    else if (key == "query_split") report.query_split = std::string(f[1]);
    else if (key == "gallery_split") report.gallery_split = std::string(f[1]);
    else if (key == "streams") report.params.streams = parse_stream_list(f[1]);
    else if (key == "lambda") report.params.lambda = parse_real(f[1]);
    else if (key == "tau") report.params.tau = parse_real(f[1]);
    else if (key == "k") report.params.k = static_cast<int>(parse_integer(f[1]));
    else if (key == "queries") declared = static_cast<std::size_t>(parse_integer(f[1]));
    else if (key == "map") report.map = parse_real(f[1]);
    else if (key == "ap") {
      if (f.size() != 3) throw Error(ErrorCode::MalformedRecord, fmt::format("report line {}: ap needs id and value", line_no));
      report.per_query.push_back({parse_sample_id(f[1]), parse_real(f[2])});
    } else {
      throw Error(ErrorCode::MalformedRecord, fmt::format("report line {}: unknown key '{}'", line_no, key));
    }
  }
  if (declared != report.per_query.size())
    throw Error(ErrorCode::MalformedRecord, fmt::format("report declares {} queries but lists {}", declared, report.per_query.size()));
  return report;
}

nlohmann::json to_json(const EvalReport& report) {
  nlohmann::json j;
  j["mode"] = std::string(to_string(report.mode));
  j["label"] = report.label;
  j["query_split"] = report.query_split;
  j["gallery_split"] = report.gallery_split;
  j["streams"] = join_streams(report.params.streams);
  j["lambda"] = report.params.lambda;
  j["tau"] = report.params.tau;
  j["k"] = report.params.k;
  j["map"] = report.map;
  auto& aps = j["per_query"] = nlohmann::json::array();
  for (const auto& q : report.per_query) aps.push_back({{"query", to_string(q.query)}, {"ap", q.ap}});
  return j;
}

std::vector<CompareRow> model_compare(const std::vector<ModelReports>& models, const BootstrapParams& params) {
  const auto check = [&](auto member) {
    const EvalReport* reference = nullptr;
    for (const auto& m : models) {
      const auto& report = m.*member;
      if (!report) continue;
      if (!reference) {
        reference = &*report;
      } else if (report->series().queries != reference->series().queries) {
        throw Error(ErrorCode::QuerySetMismatch,
                    fmt::format("'{}' and '{}' were evaluated on different queries", m.label, reference->label));
      }
    }
  };
  check(&ModelReports::validation);
  check(&ModelReports::test);

  std::vector<CompareRow> rows;
  for (const auto& m : models) {
    CompareRow row{m.label, std::nullopt, std::nullopt};
    if (m.validation) row.validation = bootstrap_ci(m.validation->series().aps, params);
    if (m.test) row.test = bootstrap_ci(m.test->series().aps, params);
    rows.push_back(std::move(row));
  }
  return rows;
}

std::string format_compare_table(const std::vector<CompareRow>& rows) {
  const auto cell = [](const std::optional<ConfidenceInterval>& ci) {
    return ci ? fmt::format("{:.3f} ({:.2f}, {:.2f})", ci->mean, ci->lo, ci->hi) : std::string("-");
  };
  std::string out = "#\tsetup\tval mAP (95% CI)\ttest mAP (95% CI)\n";
  for (std::size_t i = 0; i < rows.size(); ++i)
    out += fmt::format("{}\t{}\t{}\t{}\n", i + 1, rows[i].label, cell(rows[i].validation), cell(rows[i].test));
  return out;
}

}  // namespace reidfuse
