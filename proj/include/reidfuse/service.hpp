#pragma once

#include <filesystem>
#include <functional>
#include <memory>
#include <optional>
#include <shared_mutex>
#include <string>
#include <string_view>
#include <vector>

#include "json.hpp"
#include "reidfuse/dataset.hpp"
#include "reidfuse/eval.hpp"
#include "reidfuse/fusion.hpp"
#include "reidfuse/pipeline.hpp"
#include "reidfuse/stats.hpp"

namespace httplib {
class Server;
}

namespace reidfuse {

struct ModelSpec {
  std::string name;
  std::vector<StreamId> streams;
};

/// "name=stream,stream".
ModelSpec parse_model_spec(std::string_view text);

struct ServiceOptions {
  RetrievalPlan plan;                // query and gallery splits, sampling seed
  std::optional<FusionParams> params;  // default: the dataset's engine config
  std::vector<ModelSpec> models;     // default: one "ensemble" model over the fusion streams
  std::size_t snapshot_resamples = 2'000;
  std::filesystem::path images_dir;
  std::function<std::string()> clock;  // default: UTC wall clock, ISO 8601
};

struct StreamBreakdown {
  StreamId stream;
  double cosine = 0.0;
  int rank = 0;
  double rr = 0.0;
  double s = 0.0;
};

struct Candidate {
  SampleId gallery;
  double fused = 0.0;
  std::vector<StreamBreakdown> streams;
  std::string image_path;
};

struct Retrieval {
  std::string model;
  SampleId query;
  std::string query_image;
  FusionParams params;
  std::vector<Candidate> candidates;
};

struct QueueEntry {
  TrajectoryKey query;
  SampleId query_sample;  // the row holding the best top-1 score
  TrajectoryKey proposal;
  double score = 0.0;
  std::string model;
};

struct QueueState {
  std::vector<QueueEntry> pending;
  std::size_t decided = 0;
  std::size_t total = 0;
};

struct Snapshot {
  EvalReport report;
  ConfidenceInterval ci;
  std::size_t query_trajectories = 0;
  std::size_t confirmed_pairs = 0;
};

/// Retrieval, the annotation queue and the append-only verification log over
/// one ingested dataset. Decisions are persisted to `verifications.log` in the
/// dataset directory and replayed on construction.
class VerificationService {
 public:
  VerificationService(Dataset dataset, std::filesystem::path dataset_dir, ServiceOptions options);

  bool galleries_built() const noexcept { return !models_.empty(); }
  /// Loads the prebuilt galleries from disk; GalleryNotBuilt when absent.
  void load_galleries();

  const std::vector<ModelSpec>& models() const noexcept { return specs_; }
  const FusionParams& params() const noexcept { return params_; }

  /// `query` is a sample id or a trajectory (resolved to its first query sample).
  Retrieval retrieve_topk(std::string_view query, std::size_t k, std::string_view model = {}) const;

  VerifiedMatch record_verification(const TrajectoryKey& query, const TrajectoryKey& gallery, MatchStatus status,
                                    const std::string& annotator);
  std::vector<VerifiedMatch> decisions() const;

  /// Query trajectories without any decision, by descending top-1 fused score.
  /// With two or more models the per-model queues are interleaved.
  QueueState queue(std::size_t limit) const;

  Snapshot evaluation_snapshot(std::string_view model = {}) const;

  /// Absolute path of a sample's image, confined to the images directory.
  std::filesystem::path image_file(const SampleId& sample) const;

  const Dataset& dataset() const noexcept { return dataset_; }

 private:
  struct Model {
    ModelSpec spec;
    FusionInputs inputs;
    FusedScores scores;
  };

  const Model& model(std::string_view name) const;
  std::size_t query_row(const Model& m, std::string_view query) const;
  void check_trajectory(const TrajectoryKey& key, const std::string& split) const;
  std::vector<QueueEntry> model_queue(const Model& m) const;

  Dataset dataset_;
  std::filesystem::path dataset_dir_;
  ServiceOptions options_;
  FusionParams params_;
  std::vector<ModelSpec> specs_;
  std::vector<Model> models_;
  std::vector<VerifiedMatch> log_;
  mutable std::shared_mutex mutex_;
};

nlohmann::json to_json(const Retrieval& retrieval);
nlohmann::json to_json(const QueueState& queue);
nlohmann::json to_json(const Snapshot& snapshot);
nlohmann::json to_json(const VerifiedMatch& match);

/// Installs the /api routes. Errors are answered as {"error": code, "message": text}.
void install_routes(httplib::Server& server, VerificationService& service);

/// Blocks serving on host:port.
void serve(VerificationService& service, const std::string& host, int port);

}  // namespace reidfuse
