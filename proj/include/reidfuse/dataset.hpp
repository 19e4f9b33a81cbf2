#pragma once

#include <filesystem>
#include <map>
#include <string>
#include <string_view>
#include <vector>

#include "reidfuse/config.hpp"
#include "reidfuse/ingest.hpp"

namespace reidfuse {

/// Filtered, split-assigned samples plus their embeddings.
///
/// On disk a dataset is a directory holding `engine.cfg`, `samples.tsv`
/// (split name, tab, detection record) and `embeddings/<stream>.rfe`.
struct Dataset {
  EngineConfig config;
  std::vector<SampleRecord> samples;  // sorted by (split, id)
  EmbeddingSet embeddings;

  std::vector<std::string> split_names() const;
  std::vector<SampleId> split_samples(std::string_view split) const;
  const SampleRecord* find(const SampleId& id) const;
};

struct IngestSummary {
  std::size_t tracks_in = 0;
  std::size_t tracks_kept = 0;
  FilterStats filter;
  std::map<std::string, std::size_t> per_split;
  std::size_t embeddings_dropped = 0;
};

/// Filters tracks, builds the splits and keeps the embeddings of retained samples.
Dataset ingest_dataset(const std::vector<Track>& tracks, const EmbeddingSet& embeddings, const EngineConfig& config,
                       IngestSummary* summary = nullptr);

std::string format_ingest_summary(const IngestSummary& summary);

void save_dataset(const Dataset& dataset, const std::filesystem::path& dir);
Dataset load_dataset(const std::filesystem::path& dir);

}  // namespace reidfuse
