#include "reidfuse/pipeline.hpp"

#include <fmt/format.h>

#include "reidfuse/error.hpp"

namespace reidfuse {

std::vector<SampleId> sampled_split(const Dataset& dataset, const std::string& split, std::size_t per_id,
                                    std::uint64_t seed, bool full) {
  auto ids = dataset.split_samples(split);
  if (full) return ids;
  return sample_per_trajectory(ids, per_id, seed);
}

std::vector<StreamId> plan_streams(const Dataset& dataset, const RetrievalPlan& plan) {
  auto streams = plan.streams.empty() ? dataset.config.fusion.streams : plan.streams;
  if (streams.empty()) throw Error(ErrorCode::EmptyStreamSet, "no streams selected");
  dataset.config.registry.require(streams);
  return streams;
}

std::vector<GalleryIndex> build_galleries(const Dataset& dataset, const RetrievalPlan& plan) {
  const auto ids = sampled_split(dataset, plan.gallery_split, plan.per_id, plan.seed, plan.full_gallery);
  std::vector<GalleryIndex> out;
  for (const auto& stream : plan_streams(dataset, plan)) out.push_back(build_index(dataset.embeddings, ids, stream));
  return out;
}

std::filesystem::path gallery_dir(const std::filesystem::path& dataset_dir, const std::string& split) {
  return dataset_dir / "galleries" / split;
}

void save_galleries(const std::filesystem::path& dataset_dir, const std::string& split,
                    const std::vector<GalleryIndex>& galleries) {
  const auto dir = gallery_dir(dataset_dir, split);
  std::filesystem::create_directories(dir);
  for (const auto& g : galleries) save_index(g, dir / (g.stream.name() + ".rfe"));
}

std::vector<GalleryIndex> load_galleries(const std::filesystem::path& dataset_dir, const std::string& split,
                                         const std::vector<StreamId>& streams) {
  std::vector<GalleryIndex> out;
  for (const auto& stream : streams) {
    const auto file = gallery_dir(dataset_dir, split) / (stream.name() + ".rfe");
    if (!std::filesystem::exists(file))
      throw Error(ErrorCode::GalleryNotBuilt, fmt::format("no '{}' gallery for split '{}'", stream.name(), split));
    out.push_back(load_index(file));
    if (!(out.back().stream == stream))
      throw Error(ErrorCode::MalformedRecord, fmt::format("{} holds stream '{}'", file.string(), out.back().stream.name()));
  }
  return out;
}

FusionInputs prepare_retrieval(const Dataset& dataset, const std::vector<GalleryIndex>& galleries,
                               const RetrievalPlan& plan) {
  if (galleries.empty()) throw Error(ErrorCode::EmptyStreamSet, "no galleries");
  const bool within = plan.query_split == plan.gallery_split;
  const auto queries = sampled_split(dataset, plan.query_split, plan.per_id, plan.seed, false);

  std::vector<SimilarityMatrix> sims;
  for (const auto& gallery : galleries) {
    const auto query_index = build_index(dataset.embeddings, queries, gallery.stream);
    auto sim = cosine_matrix(query_index, gallery, plan.threads);
    if (within) exclude_self_matches(sim);
    sims.push_back(std::move(sim));
  }
  auto inputs = make_fusion_inputs(std::move(sims));
  inputs.query_split = plan.query_split;
  inputs.gallery_split = plan.gallery_split;
  return inputs;
}

FusionInputs prepare_retrieval(const Dataset& dataset, const RetrievalPlan& plan) {
  return prepare_retrieval(dataset, build_galleries(dataset, plan), plan);
}

EvalReport evaluate_scores(const FusedScores& scores, EvalMode mode, const std::vector<VerifiedMatch>& matches) {
  if (mode == EvalMode::Test) return test_eval(scores, matches);
  return validation_eval(scores, within_split_relevance(scores.queries, scores.gallery));
}

Evaluator map_evaluator(EvalMode mode, const std::vector<VerifiedMatch>& matches) {
  return [mode, &matches](const FusedScores& scores) { return evaluate_scores(scores, mode, matches).map; };
}

}  // namespace reidfuse
