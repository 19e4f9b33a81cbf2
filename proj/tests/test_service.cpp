#include <fmt/format.h>

#include <fstream>
#include <thread>

#include "doctest.h"
#include "httplib.h"
#include "reidfuse/error.hpp"
#include "reidfuse/service.hpp"
#include "reidfuse/synth.hpp"
#include "support.hpp"

using namespace reidfuse;
using doctest::Approx;
using nlohmann::json;

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

SynthSpec service_spec(bool noiseless) {
  SynthSpec s;
  s.n_ids = 8;
  s.images_per_id = 6;
  s.dimension = 16;
  s.seed = 3;
  if (noiseless) s.sigma_traj = s.sigma_obs = s.corruption = 0.0;
  return s;
}

/// A dataset directory with prebuilt galleries and a fixed clock.
struct Fixture {
  testing::TempDir dir;
  SynthDataset synth;
  Dataset dataset;
  ServiceOptions options;
  int tick = 0;

  explicit Fixture(bool noiseless = true, bool build = true) {
    synth = generate(service_spec(noiseless));
    dataset = to_dataset(synth);
    save_dataset(dataset, dir.path());
    if (build) {
      const RetrievalPlan plan;
      save_galleries(dir.path(), plan.gallery_split, build_galleries(dataset, plan));
    }
    options.clock = [this] { return fmt::format("2024-05-01T00:00:{:02}Z", tick++); };
    options.images_dir = dir / "images";
  }

  VerificationService service(ServiceOptions opts) const { return VerificationService(dataset, dir.path(), std::move(opts)); }
  VerificationService service() const { return service(options); }

  // The true partner of a camera-1 trajectory.
  TrajectoryKey partner(const TrajectoryKey& q) const {
    for (const auto& m : synth.matches)
      if (m.query == q) return m.gallery;
    FAIL("no partner");
    return {};
  }
  TrajectoryKey wrong_partner(const TrajectoryKey& q) const {
    for (const auto& m : synth.matches)
      if (m.query != q) return m.gallery;
    return {};
  }
};

std::size_t confirmed_count(const VerificationService& s) { return confirmed_pairs(s.decisions()).size(); }

}  // namespace

TEST_CASE("model specs parse") {
  const auto m = parse_model_spec("baseline=head,dorsal_fin");
  CHECK(m.name == "baseline");
  CHECK(m.streams == std::vector<StreamId>{StreamId("head"), StreamId("dorsal_fin")});
  CHECK(code_of([] { parse_model_spec("head,dorsal_fin"); }) == ErrorCode::InvalidArgument);
}

TEST_CASE("retrieval returns the fused top-k with per-stream evidence") {
  Fixture fx;
  const auto service = fx.service();
  REQUIRE(service.galleries_built());
  const auto r = service.retrieve_topk("1:1", 3);
  CHECK(r.model == "ensemble");
  CHECK(r.query.camera == 1);
  CHECK(r.query.trajectory == 1);
  REQUIRE(r.candidates.size() == 3);
  CHECK(trajectory_of(r.candidates[0].gallery) == fx.partner({1, 1}));
  CHECK(r.candidates[0].fused >= r.candidates[1].fused);
  CHECK(r.candidates[1].fused >= r.candidates[2].fused);
  CHECK_FALSE(r.query_image.empty());
  for (const auto& c : r.candidates) {
    REQUIRE(c.streams.size() == 4);
    double rr = 0.0, s = 0.0;
    for (const auto& b : c.streams) rr += b.rr, s += b.s;
    CHECK(c.fused == Approx(r.params.lambda * rr + (1 - r.params.lambda) * s).epsilon(1e-12));
    CHECK_FALSE(c.image_path.empty());
  }

  const auto best = service.retrieve_topk(to_string(r.query), 1);
  REQUIRE(best.candidates.size() == 1);
  CHECK(best.candidates[0].gallery == r.candidates[0].gallery);

  const auto all = service.retrieve_topk("1:1", 100000);
  CHECK(all.candidates.size() == 8 * 5);

  CHECK(to_json(service.retrieve_topk("1:1", 3)) == to_json(r));
  CHECK(code_of([&] { service.retrieve_topk("1:999", 3); }) == ErrorCode::UnknownQuery);
  CHECK(code_of([&] { service.retrieve_topk("2:1", 3); }) == ErrorCode::UnknownQuery);
  CHECK(code_of([&] { service.retrieve_topk("junk", 3); }) == ErrorCode::UnknownQuery);
  CHECK(code_of([&] { service.retrieve_topk("1:1", 0); }) == ErrorCode::InvalidArgument);
  CHECK(code_of([&] { service.retrieve_topk("1:1", 3, "nope"); }) == ErrorCode::InvalidArgument);
}

TEST_CASE("without galleries the service answers GalleryNotBuilt") {
  Fixture fx(true, false);
  auto service = fx.service();
  CHECK_FALSE(service.galleries_built());
  CHECK(code_of([&] { service.retrieve_topk("1:1", 3); }) == ErrorCode::GalleryNotBuilt);
  CHECK(code_of([&] { service.queue(10); }) == ErrorCode::GalleryNotBuilt);
  CHECK(code_of([&] { service.evaluation_snapshot(); }) == ErrorCode::GalleryNotBuilt);
  CHECK(code_of([&] { service.load_galleries(); }) == ErrorCode::GalleryNotBuilt);
}

TEST_CASE("verification log: latest wins and survives a restart") {
  Fixture fx;
  std::vector<VerifiedMatch> before;
  {
    auto service = fx.service();
    const TrajectoryKey q{1, 2};
    service.record_verification(q, fx.partner(q), MatchStatus::Confirmed, "ann");
    CHECK(confirmed_count(service) == 1);
    service.record_verification({1, 3}, fx.partner({1, 3}), MatchStatus::Confirmed, "ann");
    CHECK(confirmed_count(service) == 2);
    const auto again = service.record_verification(q, fx.partner(q), MatchStatus::Rejected, "ann");
    CHECK(again.timestamp == "2024-05-01T00:00:02Z");
    CHECK(confirmed_count(service) == 1);
    service.record_verification({1, 4}, fx.wrong_partner({1, 4}), MatchStatus::Unsure, "other");
    CHECK(confirmed_count(service) == 1);
    CHECK(service.decisions().size() == 4);
    before = service.decisions();

    CHECK(code_of([&] { service.record_verification({1, 99}, {2, 1}, MatchStatus::Confirmed, "a"); }) ==
          ErrorCode::UnknownTrajectory);
    CHECK(code_of([&] { service.record_verification({1, 1}, {2, 99}, MatchStatus::Confirmed, "a"); }) ==
          ErrorCode::UnknownTrajectory);
    // Camera-2 trajectories are not queries of the validation split.
    CHECK(code_of([&] { service.record_verification({2, 1}, {2, 1}, MatchStatus::Confirmed, "a"); }) ==
          ErrorCode::UnknownTrajectory);
    CHECK(code_of([&] { service.record_verification({1, 1}, fx.partner({1, 1}), MatchStatus::Confirmed, "a\tb"); }) ==
          ErrorCode::InvalidArgument);
    CHECK(service.decisions().size() == 4);
  }
  const auto restarted = fx.service();
  CHECK(restarted.decisions() == before);
  CHECK(confirmed_pairs(restarted.decisions()) == confirmed_pairs(before));
}

TEST_CASE("evaluation snapshots track confirmations") {
  Fixture fx;
  auto service = fx.service();
  CHECK(code_of([&] { service.evaluation_snapshot(); }) == ErrorCode::NoVerifiedMatches);

  service.record_verification({1, 5}, fx.partner({1, 5}), MatchStatus::Confirmed, "ann");
  const auto one = service.evaluation_snapshot();
  CHECK(one.report.map == 1.0);
  CHECK(one.query_trajectories == 1);
  CHECK(one.confirmed_pairs == 1);
  CHECK(one.ci.lo == 1.0);

  for (std::uint32_t t : {1u, 2u, 3u}) service.record_verification({1, t}, fx.partner({1, t}), MatchStatus::Confirmed, "ann");
  const auto four = service.evaluation_snapshot();
  CHECK(four.query_trajectories == 4);
  CHECK(four.confirmed_pairs == 4);
  CHECK(four.report.per_query.size() == 4 * 5);
}

TEST_CASE("the queue drops decided queries and orders by top-1 score") {
  Fixture fx(false);
  auto service = fx.service();
  const auto full = service.queue(0);
  CHECK(full.total == 8);
  CHECK(full.decided == 0);
  REQUIRE(full.pending.size() == 8);
  for (std::size_t i = 1; i < full.pending.size(); ++i) CHECK(full.pending[i - 1].score >= full.pending[i].score);
  CHECK(service.queue(3).pending.size() == 3);

  const auto first = full.pending[0];
  service.record_verification(first.query, first.proposal, MatchStatus::Unsure, "ann");
  const auto after = service.queue(0);
  CHECK(after.decided == 1);
  CHECK(after.pending.size() == 7);
  for (const auto& e : after.pending) CHECK(e.query != first.query);
  CHECK(to_json(service.queue(0)) == to_json(after));
}

TEST_CASE("two models interleave in the queue") {
  Fixture fx(false);
  auto opts = fx.options;
  opts.models = {parse_model_spec("ensemble=q1_sliced,q2_sliced,head,dorsal_fin"), parse_model_spec("head=head")};
  const auto service = fx.service(opts);
  const auto q = service.queue(0);
  REQUIRE(q.pending.size() == 8);
  CHECK(q.pending[0].model == "ensemble");
  CHECK(q.pending[1].model == "head");
  std::set<TrajectoryKey> seen;
  for (const auto& e : q.pending) CHECK(seen.insert(e.query).second);
  CHECK(service.retrieve_topk("1:1", 2, "head").candidates[0].streams.size() == 1);
}

TEST_CASE("images stay inside the images directory") {
  Fixture fx;
  const auto sample = fx.dataset.samples.front().id();
  const auto& rel = fx.dataset.samples.front().detection.image_path;
  std::filesystem::create_directories((fx.dir / "images" / rel).parent_path());
  std::ofstream(fx.dir / "images" / rel) << "PNGDATA";
  const auto service = fx.service();
  CHECK(service.image_file(sample) == std::filesystem::weakly_canonical(fx.dir / "images" / rel));
  CHECK(code_of([&] { service.image_file(fx.dataset.samples.back().id()); }) == ErrorCode::Io);
  CHECK(code_of([&] { service.image_file({9, 9, 9}); }) == ErrorCode::UnknownQuery);

  auto escaped = fx.dataset;
  escaped.samples.front().detection.image_path = "../engine.cfg";
  const VerificationService sneaky(escaped, fx.dir.path(), fx.options);
  CHECK(code_of([&] { sneaky.image_file(sample); }) == ErrorCode::InvalidArgument);
}

TEST_CASE("HTTP API") {
  Fixture fx;
  const auto sample = fx.dataset.samples.front().id();
  const auto& rel = fx.dataset.samples.front().detection.image_path;
  std::filesystem::create_directories((fx.dir / "images" / rel).parent_path());
  std::ofstream(fx.dir / "images" / rel, std::ios::binary) << "PNGDATA";

  auto service = fx.service();
  httplib::Server server;
  install_routes(server, service);
  const int port = server.bind_to_any_port("127.0.0.1");
  REQUIRE(port > 0);
  std::thread thread([&] { server.listen_after_bind(); });
  server.wait_until_ready();
  httplib::Client client("127.0.0.1", port);

  SUBCASE("models") {
    const auto res = client.Get("/api/models");
    REQUIRE(res);
    CHECK(res->status == 200);
    const auto body = json::parse(res->body);
    CHECK(body["models"][0]["name"] == "ensemble");
    CHECK(body["models"][0]["streams"].size() == 4);
    CHECK(body["lambda"] == 0.75);
    CHECK(body["k"] == 20);
    CHECK(body["galleries_built"] == true);
  }
  SUBCASE("retrieve") {
    auto res = client.Get("/api/retrieve?query=1:1&k=2");
    REQUIRE(res);
    CHECK(res->status == 200);
    const auto body = json::parse(res->body);
    REQUIRE(body["candidates"].size() == 2);
    CHECK(body["candidates"][0]["trajectory"] == to_string(fx.partner({1, 1})));
    CHECK(body["candidates"][0]["streams"][0].contains("rr"));
    CHECK(body == to_json(service.retrieve_topk("1:1", 2)));
    CHECK(json::parse(client.Get("/api/retrieve?query=1:1")->body)["candidates"].size() == 10);

    res = client.Get("/api/retrieve?query=1:404");
    CHECK(res->status == 404);
    CHECK(json::parse(res->body)["error"] == "UnknownQuery");
    CHECK(client.Get("/api/retrieve")->status == 400);
    CHECK(client.Get("/api/retrieve?query=1:1&k=-1")->status == 400);
  }
  SUBCASE("verify, evaluate and queue") {
    auto res = client.Get("/api/evaluate?mode=test");
    CHECK(res->status == 409);
    CHECK(json::parse(res->body)["error"] == "NoVerifiedMatches");
    CHECK(client.Get("/api/evaluate?mode=val")->status == 400);

    const json decision{{"pair", {{"query", "1:2"}, {"gallery", to_string(fx.partner({1, 2}))}}},
                        {"status", "confirmed"},
                        {"annotator", "web"}};
    res = client.Post("/api/verify", decision.dump(), "application/json");
    REQUIRE(res);
    CHECK(res->status == 201);
    auto body = json::parse(res->body);
    CHECK(body["status"] == "confirmed");
    CHECK(body["confirmed_pairs"] == 1);
    // Submitting twice is harmless: latest wins.
    res = client.Post("/api/verify", decision.dump(), "application/json");
    CHECK(json::parse(res->body)["confirmed_pairs"] == 1);

    res = client.Get("/api/evaluate?mode=test");
    CHECK(res->status == 200);
    body = json::parse(res->body);
    CHECK(body["map"] == 1.0);
    CHECK(body["query_trajectories"] == 1);
    CHECK(body["ci"]["lo"] == 1.0);

    body = json::parse(client.Get("/api/queue?limit=50")->body);
    CHECK(body["decided"] == 1);
    CHECK(body["total"] == 8);
    CHECK(body["pending"].size() == 7);

    json unknown = decision;
    unknown["pair"]["query"] = "1:77";
    res = client.Post("/api/verify", unknown.dump(), "application/json");
    CHECK(res->status == 404);
    CHECK(json::parse(res->body)["error"] == "UnknownTrajectory");
    CHECK(client.Post("/api/verify", "{not json", "application/json")->status == 400);
    json bad_status = decision;
    bad_status["status"] = "maybe";
    CHECK(client.Post("/api/verify", bad_status.dump(), "application/json")->status == 400);
    CHECK(service.decisions().size() == 2);
  }
  SUBCASE("image") {
    auto res = client.Get("/api/image?sample=" + to_string(sample));
    REQUIRE(res);
    CHECK(res->status == 200);
    CHECK(res->body == "PNGDATA");
    CHECK(res->get_header_value("Content-Type") == "image/png");
    CHECK(client.Get("/api/image?sample=9:9:9")->status == 404);
    CHECK(client.Get("/api/image")->status == 400);
  }

  server.stop();
  thread.join();
}
