#include "reidfuse/service.hpp"

#include <fmt/format.h>

#include <algorithm>
#include <cctype>
#include <chrono>
#include <ctime>
#include <fstream>
#include <map>
#include <mutex>
#include <set>
#include <sstream>

#include "httplib.h"
#include "reidfuse/error.hpp"

namespace reidfuse {

ModelSpec parse_model_spec(std::string_view text) {
  const auto eq = text.find('=');
  if (eq == std::string_view::npos || trim(text.substr(0, eq)).empty())
    throw Error(ErrorCode::InvalidArgument, fmt::format("model spec '{}' is not name=streams", text));
  return {std::string(trim(text.substr(0, eq))), parse_stream_list(text.substr(eq + 1))};
}

namespace {

std::string utc_now() {
  const auto now = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  std::tm tm{};
  gmtime_r(&now, &tm);
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

std::filesystem::path log_path(const std::filesystem::path& dataset_dir) { return dataset_dir / "verifications.log"; }

}  // namespace

VerificationService::VerificationService(Dataset dataset, std::filesystem::path dataset_dir, ServiceOptions options)
    : dataset_(std::move(dataset)), dataset_dir_(std::move(dataset_dir)), options_(std::move(options)) {
  params_ = options_.params.value_or(dataset_.config.fusion);
  params_.validate();
  specs_ = options_.models;
  if (specs_.empty()) specs_.push_back({"ensemble", params_.streams});
  for (const auto& spec : specs_) dataset_.config.registry.require(spec.streams);
  if (!options_.clock) options_.clock = utc_now;

  if (const auto file = log_path(dataset_dir_); std::filesystem::exists(file)) log_ = parse_matches(read_text_file(file));
  try {
    load_galleries();
  } catch (const Error& e) {
    if (e.code() != ErrorCode::GalleryNotBuilt) throw;
  }
}

void VerificationService::load_galleries() {
  std::vector<StreamId> all;
  for (const auto& spec : specs_)
    for (const auto& s : spec.streams)
      if (std::find(all.begin(), all.end(), s) == all.end()) all.push_back(s);
  const auto galleries = ::reidfuse::load_galleries(dataset_dir_, options_.plan.gallery_split, all);

  std::vector<Model> built;
  for (const auto& spec : specs_) {
    std::vector<GalleryIndex> subset;
    for (const auto& s : spec.streams)
      subset.push_back(galleries[static_cast<std::size_t>(std::find(all.begin(), all.end(), s) - all.begin())]);
    Model m{spec, prepare_retrieval(dataset_, subset, options_.plan), {}};
    FusionParams p = params_;
    p.streams = spec.streams;
    m.scores = fuse(m.inputs, p, true);
    m.scores.label = spec.name;
    built.push_back(std::move(m));
  }
  models_ = std::move(built);
}

const VerificationService::Model& VerificationService::model(std::string_view name) const {
  if (models_.empty()) throw Error(ErrorCode::GalleryNotBuilt, "run `gallery build` for the gallery split first");
  if (name.empty()) return models_.front();
  for (const auto& m : models_)
    if (m.spec.name == name) return m;
  throw Error(ErrorCode::InvalidArgument, fmt::format("unknown model '{}'", name));
}

std::size_t VerificationService::query_row(const Model& m, std::string_view query) const {
  const auto& queries = m.scores.queries;
  try {
    if (std::count(query.begin(), query.end(), ':') == 2) {
      const auto id = parse_sample_id(query);
      const auto it = std::find(queries.begin(), queries.end(), id);
      if (it != queries.end()) return static_cast<std::size_t>(it - queries.begin());
    } else {
      const auto key = parse_trajectory_key(query);
      for (std::size_t i = 0; i < queries.size(); ++i)
        if (trajectory_of(queries[i]) == key) return i;
    }
  } catch (const Error&) {
  }
  throw Error(ErrorCode::UnknownQuery, fmt::format("'{}' is not a query of split '{}'", query, m.inputs.query_split));
}

Retrieval VerificationService::retrieve_topk(std::string_view query, std::size_t k, std::string_view name) const {
  if (k == 0) throw Error(ErrorCode::InvalidArgument, "k must be positive");
  const Model& m = model(name);
  const std::size_t i = query_row(m, query);
  const auto& scores = m.scores;

  Retrieval out;
  out.model = m.spec.name;
  out.query = scores.queries[i];
  out.params = scores.params;
  if (const auto* rec = dataset_.find(out.query)) out.query_image = rec->detection.image_path;
  const auto order = ranked_columns(scores.fused.row(i), scores.excluded, i);
  for (std::size_t n = 0; n < std::min(k, order.size()); ++n) {
    const std::size_t j = order[n];
    Candidate c;
    c.gallery = scores.gallery[j];
    c.fused = scores.fused(i, j);
    for (const auto& t : scores.terms) {
      const auto* ev = m.inputs.find(t.stream);
      c.streams.push_back({t.stream, ev->sim.cosine(i, j), ev->ranks(i, j), t.rr(i, j), t.s(i, j)});
    }
    if (const auto* rec = dataset_.find(c.gallery)) c.image_path = rec->detection.image_path;
    out.candidates.push_back(std::move(c));
  }
  return out;
}

void VerificationService::check_trajectory(const TrajectoryKey& key, const std::string& split) const {
  for (const auto& s : dataset_.samples)
    if (s.split == split && trajectory_of(s.id()) == key) return;
  throw Error(ErrorCode::UnknownTrajectory, fmt::format("{} has no samples in split '{}'", to_string(key), split));
}

VerifiedMatch VerificationService::record_verification(const TrajectoryKey& query, const TrajectoryKey& gallery,
                                                       MatchStatus status, const std::string& annotator) {
  check_trajectory(query, options_.plan.query_split);
  check_trajectory(gallery, options_.plan.gallery_split);
  if (annotator.find_first_of("\t\n") != std::string::npos)
    throw Error(ErrorCode::InvalidArgument, "annotator may not contain tabs or newlines");

  std::unique_lock lock(mutex_);
  VerifiedMatch match{query, gallery, status, annotator, options_.clock()};
  const auto file = log_path(dataset_dir_);
  std::ofstream out(file, std::ios::app | std::ios::binary);
  out << format_match_line(match) << '\n';
  out.flush();
  if (!out) throw Error(ErrorCode::Io, fmt::format("cannot append to {}", file.string()));
  log_.push_back(match);
  return match;
}

std::vector<VerifiedMatch> VerificationService::decisions() const {
  std::shared_lock lock(mutex_);
  return log_;
}

std::vector<QueueEntry> VerificationService::model_queue(const Model& m) const {
  const auto& scores = m.scores;
  std::map<TrajectoryKey, QueueEntry> best;
  for (std::size_t i = 0; i < scores.queries.size(); ++i) {
    const auto order = ranked_columns(scores.fused.row(i), scores.excluded, i);
    if (order.empty()) continue;
    QueueEntry e{trajectory_of(scores.queries[i]), scores.queries[i], trajectory_of(scores.gallery[order.front()]),
                 scores.fused(i, order.front()), m.spec.name};
    const auto [it, fresh] = best.emplace(e.query, e);
    if (!fresh && e.score > it->second.score) it->second = e;
  }
  std::vector<QueueEntry> out;
  for (auto& [k, e] : best) out.push_back(e);
  std::stable_sort(out.begin(), out.end(), [](const QueueEntry& a, const QueueEntry& b) { return a.score > b.score; });
  return out;
}

QueueState VerificationService::queue(std::size_t limit) const {
  if (models_.empty()) throw Error(ErrorCode::GalleryNotBuilt, "run `gallery build` for the gallery split first");
  std::set<TrajectoryKey> decided;
  {
    std::shared_lock lock(mutex_);
    for (const auto& m : latest_decisions(log_)) decided.insert(m.query);
  }

  std::vector<std::vector<QueueEntry>> queues;
  for (const auto& m : models_) queues.push_back(model_queue(m));

  QueueState state;
  std::set<TrajectoryKey> all;
  for (const auto& e : queues.front()) all.insert(e.query);
  state.total = all.size();
  for (const auto& key : all) state.decided += decided.count(key);

  std::set<TrajectoryKey> emitted;
  std::vector<std::size_t> cursor(queues.size(), 0);
  for (bool progress = true; progress;) {
    progress = false;
    for (std::size_t q = 0; q < queues.size(); ++q) {
      auto& c = cursor[q];
      while (c < queues[q].size() && (decided.count(queues[q][c].query) || emitted.count(queues[q][c].query))) ++c;
      if (c == queues[q].size()) continue;
      if (limit != 0 && state.pending.size() == limit) return state;
      emitted.insert(queues[q][c].query);
      state.pending.push_back(queues[q][c++]);
      progress = true;
    }
  }
  return state;
}

Snapshot VerificationService::evaluation_snapshot(std::string_view name) const {
  const Model& m = model(name);
  const auto log = decisions();
  Snapshot snap;
  snap.report = test_eval(m.scores, log);
  BootstrapParams bp;
  bp.resamples = options_.snapshot_resamples;
  bp.seed = options_.plan.seed;
  snap.ci = bootstrap_ci(snap.report.series().aps, bp);
  std::set<TrajectoryKey> trajectories;
  for (const auto& q : snap.report.per_query) trajectories.insert(trajectory_of(q.query));
  snap.query_trajectories = trajectories.size();
  snap.confirmed_pairs = confirmed_pairs(log).size();
  return snap;
}

std::filesystem::path VerificationService::image_file(const SampleId& sample) const {
  const auto* rec = dataset_.find(sample);
  if (!rec) throw Error(ErrorCode::UnknownQuery, fmt::format("unknown sample {}", to_string(sample)));
  if (rec->detection.image_path.empty())
    throw Error(ErrorCode::Io, fmt::format("sample {} has no image", to_string(sample)));
  if (options_.images_dir.empty()) throw Error(ErrorCode::Io, "no images directory configured");
  const auto base = std::filesystem::weakly_canonical(options_.images_dir);
  const auto path = std::filesystem::weakly_canonical(base / rec->detection.image_path);
  const auto rel = path.lexically_relative(base);
  if (rel.empty() || *rel.begin() == "..")
    throw Error(ErrorCode::InvalidArgument, fmt::format("image of {} lies outside the images directory", to_string(sample)));
  if (!std::filesystem::is_regular_file(path)) throw Error(ErrorCode::Io, fmt::format("missing image {}", path.string()));
  return path;
}

nlohmann::json to_json(const VerifiedMatch& m) {
  return {{"query", to_string(m.query)},
          {"gallery", to_string(m.gallery)},
          {"status", std::string(to_string(m.status))},
          {"annotator", m.annotator},
          {"timestamp", m.timestamp}};
}

nlohmann::json to_json(const Retrieval& r) {
  nlohmann::json candidates = nlohmann::json::array();
  for (const auto& c : r.candidates) {
    nlohmann::json streams = nlohmann::json::array();
    for (const auto& s : c.streams)
      streams.push_back({{"stream", s.stream.name()}, {"cos", s.cosine}, {"rank", s.rank}, {"rr", s.rr}, {"s", s.s}});
    candidates.push_back({{"gallery", to_string(c.gallery)},
                          {"trajectory", to_string(trajectory_of(c.gallery))},
                          {"fused", c.fused},
                          {"image", c.image_path},
                          {"streams", std::move(streams)}});
  }
  return {{"model", r.model},
          {"query", to_string(r.query)},
          {"query_image", r.query_image},
          {"lambda", r.params.lambda},
          {"tau", r.params.tau},
          {"k", r.params.k},
          {"candidates", std::move(candidates)}};
}

nlohmann::json to_json(const QueueState& q) {
  nlohmann::json pending = nlohmann::json::array();
  for (const auto& e : q.pending)
    pending.push_back({{"query", to_string(e.query)},
                       {"query_sample", to_string(e.query_sample)},
                       {"proposal", to_string(e.proposal)},
                       {"score", e.score},
                       {"model", e.model}});
  return {{"pending", std::move(pending)}, {"decided", q.decided}, {"total", q.total}};
}

nlohmann::json to_json(const Snapshot& s) {
  auto j = to_json(s.report);
  j["ci"] = {{"mean", s.ci.mean}, {"lo", s.ci.lo}, {"hi", s.ci.hi}};
  j["query_trajectories"] = s.query_trajectories;
  j["confirmed_pairs"] = s.confirmed_pairs;
  return j;
}

namespace {

int http_status(ErrorCode code) {
  switch (code) {
    case ErrorCode::UnknownQuery:
    case ErrorCode::UnknownTrajectory:
      return 404;
    case ErrorCode::GalleryNotBuilt:
    case ErrorCode::NoVerifiedMatches:
      return 409;
    case ErrorCode::Io:
      return 404;
    default:
      return 400;
  }
}

void reply_json(httplib::Response& res, const nlohmann::json& body, int status = 200) {
  res.status = status;
  res.set_content(body.dump(), "application/json");
}

void reply_error(httplib::Response& res, ErrorCode code, const std::string& message) {
  reply_json(res, {{"error", std::string(to_string(code))}, {"message", message}}, http_status(code));
}

/// Runs a handler and turns failures into structured error replies.
template <typename F>
httplib::Server::Handler guarded(F f) {
  return [f](const httplib::Request& req, httplib::Response& res) {
    try {
      f(req, res);
    } catch (const Error& e) {
      reply_error(res, e.code(), e.what());
    } catch (const nlohmann::json::exception& e) {
      reply_error(res, ErrorCode::InvalidArgument, e.what());
    } catch (const std::exception& e) {
      res.status = 500;
      res.set_content(nlohmann::json{{"error", "Internal"}, {"message", e.what()}}.dump(), "application/json");
    }
  };
}

std::size_t size_param(const httplib::Request& req, const char* name, std::size_t fallback) {
  if (!req.has_param(name)) return fallback;
  const auto v = parse_integer(req.get_param_value(name));
  if (v < 0) throw Error(ErrorCode::InvalidArgument, fmt::format("{} must be non-negative", name));
  return static_cast<std::size_t>(v);
}

std::string content_type(const std::filesystem::path& file) {
  auto ext = file.extension().string();
  std::transform(ext.begin(), ext.end(), ext.begin(), [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
  if (ext == ".png") return "image/png";
  if (ext == ".jpg" || ext == ".jpeg") return "image/jpeg";
  if (ext == ".bmp") return "image/bmp";
  if (ext == ".webp") return "image/webp";
  return "application/octet-stream";
}

}  // namespace

void install_routes(httplib::Server& server, VerificationService& service) {
  server.Get("/api/queue", guarded([&service](const httplib::Request& req, httplib::Response& res) {
               reply_json(res, to_json(service.queue(size_param(req, "limit", 0))));
             }));
  server.Get("/api/retrieve", guarded([&service](const httplib::Request& req, httplib::Response& res) {
               if (!req.has_param("query")) throw Error(ErrorCode::InvalidArgument, "missing query parameter");
               reply_json(res, to_json(service.retrieve_topk(req.get_param_value("query"), size_param(req, "k", 10),
                                                             req.get_param_value("model"))));
             }));
  server.Post("/api/verify", guarded([&service](const httplib::Request& req, httplib::Response& res) {
                const auto body = nlohmann::json::parse(req.body);
                const auto& pair = body.at("pair");
                const auto match = service.record_verification(
                    parse_trajectory_key(pair.at("query").get<std::string>()),
                    parse_trajectory_key(pair.at("gallery").get<std::string>()),
                    parse_match_status(body.at("status").get<std::string>()),
                    body.value("annotator", std::string("anonymous")));
                auto reply = to_json(match);
                reply["confirmed_pairs"] = confirmed_pairs(service.decisions()).size();
                reply_json(res, reply, 201);
              }));
  server.Get("/api/evaluate", guarded([&service](const httplib::Request& req, httplib::Response& res) {
               const auto mode = req.has_param("mode") ? req.get_param_value("mode") : std::string("test");
               if (parse_eval_mode(mode) != EvalMode::Test)
                 throw Error(ErrorCode::InvalidArgument, "the service evaluates against verified matches: mode=test");
               reply_json(res, to_json(service.evaluation_snapshot(req.get_param_value("model"))));
             }));
  server.Get("/api/models", guarded([&service](const httplib::Request&, httplib::Response& res) {
               nlohmann::json models = nlohmann::json::array();
               for (const auto& m : service.models()) {
                 nlohmann::json streams = nlohmann::json::array();
                 for (const auto& s : m.streams) streams.push_back(s.name());
                 models.push_back({{"name", m.name}, {"streams", std::move(streams)}});
               }
               const auto& p = service.params();
               reply_json(res, {{"models", std::move(models)},
                                {"lambda", p.lambda},
                                {"tau", p.tau},
                                {"k", p.k},
                                {"galleries_built", service.galleries_built()}});
             }));
  server.Get("/api/image", guarded([&service](const httplib::Request& req, httplib::Response& res) {
               if (!req.has_param("sample")) throw Error(ErrorCode::InvalidArgument, "missing sample parameter");
               const auto file = service.image_file(parse_sample_id(req.get_param_value("sample")));
               std::ifstream in(file, std::ios::binary);
               std::ostringstream bytes;
               bytes << in.rdbuf();
               res.set_content(bytes.str(), content_type(file));
             }));
}

void serve(VerificationService& service, const std::string& host, int port) {
  httplib::Server server;
  install_routes(server, service);
  if (!server.listen(host, port)) throw Error(ErrorCode::Io, fmt::format("cannot listen on {}:{}", host, port));
}

}  // namespace reidfuse
