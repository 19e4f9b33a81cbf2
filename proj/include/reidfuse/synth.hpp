#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

#include "reidfuse/config.hpp"
#include "reidfuse/dataset.hpp"
#include "reidfuse/eval.hpp"
#include "reidfuse/ingest.hpp"
#include "reidfuse/pipeline.hpp"

namespace reidfuse {

/// Synthetic benchmark: every identity appears once per camera, camera 1 is
/// the validation split and the remaining cameras form the test split.
struct SynthSpec {
  std::size_t n_ids = 40;
  std::size_t images_per_id = 8;
  std::size_t n_cameras = 2;
  std::size_t dimension = 32;
  std::vector<StreamId> streams;  // empty: q1_sliced, q2_sliced, head, dorsal_fin
  double identity_scale = 1.0;
  double sigma_traj = 0.5;
  double sigma_obs = 0.5;
  double corruption = 0.3;  // chance that one stream of one sample carries no identity
  std::uint64_t seed = 1;

  std::vector<StreamId> stream_list() const;
  void validate() const;
  bool operator==(const SynthSpec&) const = default;
};

SynthSpec parse_synth_spec(std::string_view text);
std::string to_text(const SynthSpec& spec);

struct SynthDataset {
  EngineConfig config;
  std::vector<Track> tracks;
  EmbeddingSet embeddings;
  std::vector<VerifiedMatch> matches;  // every cross-camera pair, confirmed
};

SynthDataset generate(const SynthSpec& spec);

/// Runs the generated records through the regular ingest path.
Dataset to_dataset(const SynthDataset& synth);

/// Writes detections.tsv, embeddings/, engine.cfg and matches.tsv: the inputs
/// `ingest` and `evaluate` read.
void write_synth_inputs(const SynthDataset& synth, const std::filesystem::path& dir);

struct BiasLadderRow {
  double sigma_traj = 0.0;
  std::vector<std::pair<StreamId, double>> single;  // per-stream cross-camera mAP
  double ensemble = 0.0;

  double best_single() const;
};

/// Cross-camera mAP of each single stream and of the fused ensemble for every
/// sigma_traj in the grid, all else fixed.
std::vector<BiasLadderRow> bias_ladder(const SynthSpec& base, const std::vector<double>& sigmas,
                                       const FusionParams& params, const RetrievalPlan& plan);
std::string format_bias_ladder(const std::vector<BiasLadderRow>& rows);

}  // namespace reidfuse
