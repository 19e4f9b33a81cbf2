#include <fmt/format.h>

#include <numeric>
#include <random>

#include "doctest.h"
#include "reidfuse/error.hpp"
#include "reidfuse/eval.hpp"
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

SampleId sid(std::uint32_t cam, std::uint32_t traj, std::uint32_t frame) { return {cam, traj, frame}; }

std::vector<SampleId> gallery_of(std::size_t n) {
  std::vector<SampleId> out;
  for (std::size_t i = 0; i < n; ++i) out.push_back(sid(2, static_cast<std::uint32_t>(100 + i), 0));
  return out;
}

FusedScores scores_of(std::vector<SampleId> queries, std::vector<SampleId> gallery, std::vector<std::vector<double>> rows) {
  FusedScores s;
  s.label = "m";
  s.query_split = "val";
  s.gallery_split = "test";
  s.params.streams = {StreamId("head")};
  s.queries = std::move(queries);
  s.gallery = std::move(gallery);
  s.fused = Matrix<double>(s.queries.size(), s.gallery.size());
  for (std::size_t i = 0; i < rows.size(); ++i)
    for (std::size_t j = 0; j < rows[i].size(); ++j) s.fused(i, j) = rows[i][j];
  return s;
}

VerifiedMatch confirmed(TrajectoryKey q, TrajectoryKey g, std::string ts = "2024-01-01T00:00:00Z") {
  return {q, g, MatchStatus::Confirmed, "ann", std::move(ts)};
}

EvalReport report_with(std::string label, std::vector<double> aps, EvalMode mode = EvalMode::Test) {
  EvalReport r;
  r.mode = mode;
  r.label = std::move(label);
  for (std::size_t i = 0; i < aps.size(); ++i) r.per_query.push_back({sid(1, 1, static_cast<std::uint32_t>(i)), aps[i]});
  r.map = std::accumulate(aps.begin(), aps.end(), 0.0) / static_cast<double>(aps.size());
  return r;
}

}  // namespace

TEST_CASE("average precision examples") {
  const auto g = gallery_of(10);
  CHECK(average_precision(g, {g[0]}) == 1.0);
  CHECK(average_precision(g, {g[1]}) == 0.5);
  CHECK(average_precision(g, {g[0], g[2]}) == Approx(5.0 / 6.0).epsilon(1e-12));
  CHECK(code_of([&] { average_precision(g, {}); }) == ErrorCode::NoRelevant);
  CHECK(code_of([&] { average_precision(g, {sid(9, 9, 9)}); }) == ErrorCode::InvalidArgument);
}

TEST_CASE("average precision equals the prefix oracle on every small instance") {
  for (std::size_t n = 1; n <= 10; ++n) {
    const auto g = gallery_of(n);
    for (unsigned mask = 1; mask < (1u << n); ++mask) {
      std::set<SampleId> relevant;
      for (std::size_t i = 0; i < n; ++i)
        if (mask & (1u << i)) relevant.insert(g[i]);
      const double ap = average_precision(g, relevant);
      REQUIRE(std::abs(ap - testing::brute_force_ap(g, relevant)) <= 1e-12);
      REQUIRE((ap > 0.0 && ap <= 1.0));
    }
  }
}

TEST_CASE("mean AP of random rankings approaches the analytic expectation") {
  std::mt19937_64 rng(3);
  const std::size_t n = 12, r = 3;
  auto g = gallery_of(n);
  const std::set<SampleId> relevant(g.begin(), g.begin() + r);
  const int trials = 40000;
  double sum = 0.0;
  for (int t = 0; t < trials; ++t) {
    std::shuffle(g.begin(), g.end(), rng);
    sum += average_precision(g, relevant);
  }
  // Standard error is below 0.0015 here; 0.006 is four of them.
  CHECK(sum / trials == Approx(testing::expected_random_ap(n, r)).epsilon(0.006 / testing::expected_random_ap(n, r)));
}

TEST_CASE("sampling per trajectory") {
  std::vector<SampleId> split;
  for (std::uint32_t f = 0; f < 3; ++f) split.push_back(sid(1, 1, f * 5));
  for (std::uint32_t f = 0; f < 20; ++f) split.push_back(sid(1, 2, f * 5));

  const auto a = sample_per_trajectory(split, 5, 7);
  const auto b = sample_per_trajectory(split, 5, 7);
  CHECK(a == b);
  CHECK(std::count_if(a.begin(), a.end(), [](const SampleId& s) { return s.trajectory == 1; }) == 3);
  CHECK(std::count_if(a.begin(), a.end(), [](const SampleId& s) { return s.trajectory == 2; }) == 5);
  CHECK(std::is_sorted(a.begin(), a.end()));
  for (const auto& s : a) CHECK(std::find(split.begin(), split.end(), s) != split.end());

  bool differs = false;
  for (std::uint64_t seed = 8; seed < 20 && !differs; ++seed) differs = sample_per_trajectory(split, 5, seed) != a;
  CHECK(differs);

  const auto q1 = sample_queries(split, 5, 7);
  const auto q2 = sample_queries(split, 5, 7);
  REQUIRE(q1.entries.size() == 8);
  for (std::size_t i = 0; i < q1.entries.size(); ++i) {
    CHECK(q1.entries[i].query == q2.entries[i].query);
    CHECK(q1.entries[i].relevant == q2.entries[i].relevant);
    const auto& e = q1.entries[i];
    CHECK(std::find(e.relevant.begin(), e.relevant.end(), e.query) == e.relevant.end());
    for (const auto& r : e.relevant) CHECK(trajectory_of(r) == trajectory_of(e.query));
    CHECK(e.relevant.size() == (e.query.trajectory == 1 ? 2u : 4u));
  }
  const auto full = sample_queries(split, 5, 7, true);
  for (const auto& e : full.entries) CHECK(e.relevant.size() == (e.query.trajectory == 1 ? 2u : 19u));
}

TEST_CASE("sampling one trajectory does not depend on the others") {
  std::vector<SampleId> small, large;
  for (std::uint32_t f = 0; f < 12; ++f) small.push_back(sid(1, 4, f));
  large = small;
  for (std::uint32_t f = 0; f < 9; ++f) large.push_back(sid(1, 2, f));
  auto picked = sample_per_trajectory(large, 5, 99);
  picked.erase(std::remove_if(picked.begin(), picked.end(), [](const SampleId& s) { return s.trajectory != 4; }),
               picked.end());
  CHECK(picked == sample_per_trajectory(small, 5, 99));
}

TEST_CASE("validation: mutually closest identities give mAP 1") {
  std::vector<SampleId> all;
  for (std::uint32_t t = 1; t <= 3; ++t)
    for (std::uint32_t f = 0; f < 3; ++f) all.push_back(sid(1, t, f));
  std::vector<std::vector<double>> rows(all.size(), std::vector<double>(all.size()));
  for (std::size_t i = 0; i < all.size(); ++i)
    for (std::size_t j = 0; j < all.size(); ++j) rows[i][j] = all[i].trajectory == all[j].trajectory ? 0.9 : 0.1;
  auto scores = scores_of(all, all, rows);
  const auto report = validation_eval(scores, within_split_relevance(all, all));
  CHECK(report.per_query.size() == 9);
  CHECK(report.map == 1.0);
  CHECK(report.mode == EvalMode::Validation);
}

TEST_CASE("validation: relevant item always ranked last among three") {
  // Two trajectories of two images; the self match scores highest but is never a candidate.
  const std::vector<SampleId> all{sid(1, 1, 0), sid(1, 1, 5), sid(1, 2, 0), sid(1, 2, 5)};
  std::vector<std::vector<double>> rows(4, std::vector<double>(4, 0.5));
  for (std::size_t i = 0; i < 4; ++i) {
    rows[i][i] = 1.0;
    rows[i][i ^ 1] = 0.0;
  }
  const auto report = validation_eval(scores_of(all, all, rows), within_split_relevance(all, all));
  REQUIRE(report.per_query.size() == 4);
  for (const auto& q : report.per_query) CHECK(q.ap == Approx(1.0 / 3.0).epsilon(1e-12));
  CHECK(report.map == Approx(1.0 / 3.0).epsilon(1e-12));
}

TEST_CASE("validation errors and exclusions") {
  const std::vector<SampleId> all{sid(1, 1, 0), sid(1, 1, 5), sid(1, 2, 0)};
  const auto scores = scores_of(all, all, {{1, 0.5, 0.2}, {0.5, 1, 0.2}, {0.2, 0.2, 1}});
  CHECK(code_of([&] { validation_eval(scores, QuerySet{}); }) == ErrorCode::EmptyQuerySet);

  // The lone image of trajectory 2 has nothing relevant and drops out.
  const auto report = validation_eval(scores, within_split_relevance(all, all));
  CHECK(report.per_query.size() == 2);

  QuerySet only_lonely;
  only_lonely.entries.push_back({sid(1, 2, 0), {}});
  CHECK(code_of([&] { validation_eval(scores, only_lonely); }) == ErrorCode::EmptyQuerySet);

  QuerySet unknown;
  unknown.entries.push_back({sid(1, 7, 0), {sid(1, 1, 0)}});
  CHECK(code_of([&] { validation_eval(scores, unknown); }) == ErrorCode::UnknownQuery);
}

TEST_CASE("test: one confirmed pair with its samples on top") {
  const std::vector<SampleId> queries{sid(1, 1, 0), sid(1, 1, 5), sid(1, 2, 0)};
  std::vector<SampleId> gallery;
  for (std::uint32_t f = 0; f < 4; ++f) gallery.push_back(sid(2, 8, f * 5));
  for (std::uint32_t f = 0; f < 4; ++f) gallery.push_back(sid(2, 9, f * 5));
  std::vector<std::vector<double>> rows(3, std::vector<double>(8));
  for (std::size_t i = 0; i < 3; ++i)
    for (std::size_t j = 0; j < 8; ++j) rows[i][j] = j < 4 ? 0.9 - 0.01 * j : 0.1 * j;
  const auto scores = scores_of(queries, gallery, rows);
  const auto report = test_eval(scores, {confirmed({1, 1}, {2, 8})});
  REQUIRE(report.per_query.size() == 2);
  CHECK(report.per_query[0].query == queries[0]);
  CHECK(report.per_query[1].query == queries[1]);
  CHECK(report.map == 1.0);

  CHECK(code_of([&] { test_eval(scores, {}); }) == ErrorCode::NoVerifiedMatches);
  auto rejected = confirmed({1, 1}, {2, 8});
  rejected.status = MatchStatus::Rejected;
  CHECK(code_of([&] { test_eval(scores, {rejected}); }) == ErrorCode::NoVerifiedMatches);
  // Confirmed then overturned: only the latest decision counts.
  auto overturned = rejected;
  overturned.timestamp = "2024-02-01T00:00:00Z";
  CHECK(code_of([&] { test_eval(scores, {confirmed({1, 1}, {2, 8}), overturned}); }) ==
        ErrorCode::NoVerifiedMatches);
}

TEST_CASE("test: queries are limited to confirmed trajectories") {
  std::mt19937_64 rng(5);
  std::uniform_real_distribution<double> u(0, 1);
  std::vector<SampleId> queries, gallery;
  for (std::uint32_t t = 1; t <= 30; ++t)
    for (std::uint32_t f = 0; f < 3; ++f) queries.push_back(sid(1, t, f));
  for (std::uint32_t t = 1; t <= 30; ++t)
    for (std::uint32_t f = 0; f < 2; ++f) gallery.push_back(sid(2, t + 50, f));
  std::vector<std::vector<double>> rows(queries.size(), std::vector<double>(gallery.size()));
  for (auto& r : rows)
    for (auto& x : r) x = u(rng);
  std::vector<VerifiedMatch> matches;
  for (std::uint32_t t = 1; t <= 18; ++t) matches.push_back(confirmed({1, t}, {2, t + 50}));
  matches.push_back({{1, 25}, {2, 75}, MatchStatus::Unsure, "ann", ""});
  const auto report = test_eval(scores_of(queries, gallery, rows), matches);
  std::set<TrajectoryKey> trajs;
  for (const auto& q : report.per_query) trajs.insert(trajectory_of(q.query));
  CHECK(trajs.size() == 18);
  CHECK(report.per_query.size() == 54);
  for (const auto& t : trajs) CHECK(t.trajectory <= 18);
}

TEST_CASE("test: AP follows the ranking of the matched trajectory") {
  const std::vector<SampleId> queries{sid(1, 1, 0)};
  const std::vector<SampleId> gallery{sid(2, 5, 0), sid(2, 6, 0), sid(2, 5, 5), sid(2, 7, 0)};
  const auto scores = scores_of(queries, gallery, {{0.9, 0.8, 0.7, 0.6}});
  const auto report = test_eval(scores, {confirmed({1, 1}, {2, 5})});
  REQUIRE(report.per_query.size() == 1);
  CHECK(report.per_query[0].ap == Approx((1.0 + 2.0 / 3.0) / 2.0).epsilon(1e-12));
}

TEST_CASE("match lines") {
  const auto m = parse_match_line("1:4\t2:9\tconfirmed\talice\t2024-03-01T10:00:00Z", 3);
  CHECK(m.query == TrajectoryKey{1, 4});
  CHECK(m.gallery == TrajectoryKey{2, 9});
  CHECK(m.status == MatchStatus::Confirmed);
  CHECK(m.annotator == "alice");
  CHECK(parse_match_line(format_match_line(m)) == m);
  CHECK(parse_match_line("1:4\t2:9\tunsure").annotator.empty());

  try {
    parse_match_line("1:4\t2:9\tmaybe", 12);
    FAIL("expected MalformedRecord");
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::MalformedRecord);
    CHECK(std::string(e.what()).find("12") != std::string::npos);
  }
  CHECK(code_of([] { parse_match_line("1:4\t2:9", 1); }) == ErrorCode::MalformedRecord);
  CHECK(code_of([] { parse_match_line("x\t2:9\tconfirmed", 1); }) == ErrorCode::MalformedRecord);

  const std::vector<VerifiedMatch> log{m, {{1, 5}, {2, 3}, MatchStatus::Rejected, "bob", "t"}};
  CHECK(parse_matches(format_matches(log)) == log);
  CHECK(parse_matches("# header\n\n" + format_match_line(m) + "\n") == std::vector<VerifiedMatch>{m});
}

TEST_CASE("the latest decision per pair wins") {
  const VerifiedMatch a{{1, 1}, {2, 1}, MatchStatus::Confirmed, "x", "1"};
  const VerifiedMatch b{{1, 2}, {2, 2}, MatchStatus::Confirmed, "x", "2"};
  const VerifiedMatch a2{{1, 1}, {2, 1}, MatchStatus::Rejected, "y", "3"};
  const auto latest = latest_decisions({a, b, a2});
  REQUIRE(latest.size() == 2);
  CHECK(latest[0] == a2);
  CHECK(latest[1] == b);
  const auto pairs = confirmed_pairs({a, b, a2});
  CHECK(pairs.size() == 1);
  CHECK(pairs.count({{1, 2}, {2, 2}}) == 1);
  CHECK(confirmed_pairs({a, b, a2, a}).size() == 2);
}

TEST_CASE("reports round-trip through text") {
  auto r = report_with("Ensemble sliced", {1.0, 0.5, 1.0 / 3.0}, EvalMode::Validation);
  r.query_split = "val";
  r.gallery_split = "val";
  r.params.streams = {StreamId("q1_sliced"), StreamId("head")};
  r.params.lambda = 0.6;
  const auto back = parse_report(to_text(r));
  CHECK(back.mode == r.mode);
  CHECK(back.label == r.label);
  CHECK(back.query_split == "val");
  CHECK(back.params == r.params);
  CHECK(back.map == r.map);
  REQUIRE(back.per_query.size() == 3);
  for (std::size_t i = 0; i < 3; ++i) {
    CHECK(back.per_query[i].query == r.per_query[i].query);
    CHECK(back.per_query[i].ap == r.per_query[i].ap);
  }
  const auto j = to_json(r);
  CHECK(j["mode"] == "val");
  CHECK(j["per_query"].size() == 3);

  auto text = to_text(r);
  text.replace(text.find("queries\t3"), 9, "queries\t4");
  CHECK(code_of([&] { parse_report(text); }) == ErrorCode::MalformedRecord);
}

TEST_CASE("mAP of a disjoint union is the size-weighted mean") {
  std::mt19937_64 rng(13);
  std::uniform_real_distribution<double> u(0, 1);
  for (int trial = 0; trial < 50; ++trial) {
    const std::size_t na = 1 + rng() % 10, nb = 1 + rng() % 10;
    std::vector<SampleId> queries;
    for (std::size_t i = 0; i < na + nb; ++i) queries.push_back(sid(1, static_cast<std::uint32_t>(i < na ? 1 : 2), static_cast<std::uint32_t>(i)));
    const auto gallery = gallery_of(8);
    std::vector<std::vector<double>> rows(queries.size(), std::vector<double>(8));
    for (auto& r : rows)
      for (auto& x : r) x = u(rng);
    const auto scores = scores_of(queries, gallery, rows);
    std::vector<VerifiedMatch> ma{confirmed({1, 1}, {2, 100}), confirmed({1, 1}, {2, 103})};
    std::vector<VerifiedMatch> mb{confirmed({1, 2}, {2, 105})};
    auto mall = ma;
    mall.insert(mall.end(), mb.begin(), mb.end());
    const auto a = test_eval(scores, ma), b = test_eval(scores, mb), all = test_eval(scores, mall);
    CHECK(all.map == Approx((a.map * na + b.map * nb) / static_cast<double>(na + nb)).epsilon(1e-12));
  }
}

TEST_CASE("equal-score permutations do not change AP") {
  // All scores equal: the order is fixed by gallery index, so reshuffling the
  // rows' equal values is a no-op.
  const std::vector<SampleId> queries{sid(1, 1, 0)};
  const auto gallery = gallery_of(6);
  const auto a = test_eval(scores_of(queries, gallery, {{0.5, 0.5, 0.5, 0.5, 0.5, 0.5}}), {confirmed({1, 1}, {2, 102})});
  const auto b = test_eval(scores_of(queries, gallery, {{0.5, 0.5, 0.5, 0.5, 0.5, 0.5}}), {confirmed({1, 1}, {2, 102})});
  CHECK(a.per_query[0].ap == b.per_query[0].ap);
  CHECK(a.per_query[0].ap == Approx(1.0 / 3.0));
}

TEST_CASE("model comparison table") {
  BootstrapParams params;
  params.resamples = 500;
  std::vector<ModelReports> models;
  for (int m = 0; m < 10; ++m)
    models.push_back({fmt::format("model{}", m), report_with("v", {0.5, 1.0, 0.25}, EvalMode::Validation),
                      report_with("t", {1.0, 0.0})});
  const auto rows = model_compare(models, params);
  CHECK(rows.size() == 10);
  CHECK(rows[0].validation->mean == Approx(0.5833333).epsilon(1e-6));
  const auto table = format_compare_table(rows);
  CHECK(std::count(table.begin(), table.end(), '\n') == 11);
  CHECK(table.find("10\tmodel9\t0.583 (") != std::string::npos);

  const auto single = model_compare({{"only", std::nullopt, report_with("t", {0.8, 0.8})}}, params);
  REQUIRE(single.size() == 1);
  CHECK(format_compare_table(single).find("only\t-\t0.800 (0.80, 0.80)") != std::string::npos);

  auto mismatched = models;
  mismatched[3].test->per_query[0].query = sid(1, 9, 9);
  CHECK(code_of([&] { model_compare(mismatched, params); }) == ErrorCode::QuerySetMismatch);
}
