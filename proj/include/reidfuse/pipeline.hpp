#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "reidfuse/dataset.hpp"
#include "reidfuse/eval.hpp"
#include "reidfuse/fusion.hpp"
#include "reidfuse/gallery.hpp"

namespace reidfuse {

/// Everything that decides which samples meet in a retrieval run.
struct RetrievalPlan {
  std::string query_split = "val";
  std::string gallery_split = "test";
  std::vector<StreamId> streams;  // empty: the config's fusion streams
  std::size_t per_id = 5;
  std::uint64_t seed = 7;
  bool full_gallery = false;
  unsigned threads = 1;
};

/// The per-trajectory sample of a split, or the whole split when `full` is set.
std::vector<SampleId> sampled_split(const Dataset& dataset, const std::string& split, std::size_t per_id,
                                    std::uint64_t seed, bool full);

std::vector<GalleryIndex> build_galleries(const Dataset& dataset, const RetrievalPlan& plan);

std::filesystem::path gallery_dir(const std::filesystem::path& dataset_dir, const std::string& split);
void save_galleries(const std::filesystem::path& dataset_dir, const std::string& split,
                    const std::vector<GalleryIndex>& galleries);
/// Throws GalleryNotBuilt when a stream's index file is absent.
std::vector<GalleryIndex> load_galleries(const std::filesystem::path& dataset_dir, const std::string& split,
                                         const std::vector<StreamId>& streams);

/// Similarities of the plan's queries against prebuilt galleries. Queries are
/// always a per-trajectory sample of the query split; when both splits are
/// equal, self matches are masked.
FusionInputs prepare_retrieval(const Dataset& dataset, const std::vector<GalleryIndex>& galleries,
                               const RetrievalPlan& plan);
FusionInputs prepare_retrieval(const Dataset& dataset, const RetrievalPlan& plan);

std::vector<StreamId> plan_streams(const Dataset& dataset, const RetrievalPlan& plan);

/// Validation relevance comes from the scores' own ids; test relevance from
/// the confirmed pairs in `matches`.
EvalReport evaluate_scores(const FusedScores& scores, EvalMode mode, const std::vector<VerifiedMatch>& matches);

Evaluator map_evaluator(EvalMode mode, const std::vector<VerifiedMatch>& matches);

}  // namespace reidfuse
