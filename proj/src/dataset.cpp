#include "reidfuse/dataset.hpp"

#include <fmt/format.h>

#include <algorithm>

#include "reidfuse/error.hpp"

namespace reidfuse {

std::vector<std::string> Dataset::split_names() const {
  std::vector<std::string> names;
  for (const auto& s : samples)
    if (names.empty() || names.back() != s.split) names.push_back(s.split);
  return names;
}

std::vector<SampleId> Dataset::split_samples(std::string_view split) const {
  std::vector<SampleId> out;
  for (const auto& s : samples)
    if (s.split == split) out.push_back(s.id());
  return out;
}

const SampleRecord* Dataset::find(const SampleId& id) const {
  for (const auto& s : samples)
    if (s.id() == id) return &s;
  return nullptr;
}

Dataset ingest_dataset(const std::vector<Track>& tracks, const EmbeddingSet& embeddings, const EngineConfig& config,
                       IngestSummary* summary) {
  IngestSummary local;
  local.tracks_in = tracks.size();
  const auto filtered = filter_detections(tracks, config.filter, &local.filter);
  local.tracks_kept = filtered.size();

  Dataset dataset;
  dataset.config = config;
  for (auto& [name, records] : build_split(filtered, config.splits, config.filter)) {
    local.per_split[name] = records.size();
    for (auto& r : records) dataset.samples.push_back(std::move(r));
  }
  std::stable_sort(dataset.samples.begin(), dataset.samples.end(), [](const SampleRecord& a, const SampleRecord& b) {
    return a.split != b.split ? a.split < b.split : a.id() < b.id();
  });

  std::vector<SampleId> ids;
  for (const auto& s : dataset.samples) ids.push_back(s.id());
  dataset.embeddings = embeddings.restricted_to(ids);
  local.embeddings_dropped = embeddings.size() - dataset.embeddings.size();
  if (summary) *summary = local;
  return dataset;
}

std::string format_ingest_summary(const IngestSummary& s) {
  std::string out = "# ingest summary\n";
  out += fmt::format("tracks_in\t{}\n", s.tracks_in);
  out += fmt::format("tracks_kept\t{}\n", s.tracks_kept);
  out += fmt::format("dropped_small\t{}\n", s.filter.too_small);
  out += fmt::format("dropped_occluded\t{}\n", s.filter.occluded);
  out += fmt::format("dropped_outside_longest_run\t{}\n", s.filter.outside_longest_run);
  out += fmt::format("dropped_short_tracks\t{}\n", s.filter.short_tracks);
  for (const auto& [name, n] : s.per_split) out += fmt::format("split.{}\t{}\n", name, n);
  out += fmt::format("embeddings_dropped\t{}\n", s.embeddings_dropped);
  return out;
}

void save_dataset(const Dataset& dataset, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  write_text_file(dir / "engine.cfg", to_text(dataset.config));
  std::string samples = "# split\tdetection record\n";
  for (const auto& s : dataset.samples) samples += s.split + '\t' + format_detection(s.detection) + '\n';
  write_text_file(dir / "samples.tsv", samples);
  const auto emb_dir = dir / "embeddings";
  if (std::filesystem::exists(emb_dir)) std::filesystem::remove_all(emb_dir);
  write_embedding_dir(emb_dir, dataset.embeddings, dataset.config.registry);
}

Dataset load_dataset(const std::filesystem::path& dir) {
  Dataset dataset;
  dataset.config = read_engine_config(dir / "engine.cfg");
  const std::string text = read_text_file(dir / "samples.tsv");
  int line_no = 0;
  for (auto line : split(text, '\n')) {
    ++line_no;
    const auto t = trim(line);
    if (t.empty() || t.front() == '#') continue;
    const auto tab = line.find('\t');
    if (tab == std::string_view::npos)
      throw Error(ErrorCode::MalformedRecord, fmt::format("samples.tsv line {}: missing split", line_no));
    dataset.samples.push_back({std::string(line.substr(0, tab)), parse_detection(line.substr(tab + 1), line_no)});
  }
  std::stable_sort(dataset.samples.begin(), dataset.samples.end(), [](const SampleRecord& a, const SampleRecord& b) {
    return a.split != b.split ? a.split < b.split : a.id() < b.id();
  });
  if (std::filesystem::exists(dir / "embeddings"))
    dataset.embeddings = load_embedding_dir(dir / "embeddings", dataset.config.registry);
  return dataset;
}

}  // namespace reidfuse
