#include "reidfuse/gallery.hpp"

#include <fmt/format.h>

#include <algorithm>
#include <cmath>
#include <numeric>

#include "reidfuse/error.hpp"
#include "reidfuse/parallel.hpp"

namespace reidfuse {

GalleryIndex build_index(const EmbeddingSet& embeddings, std::vector<SampleId> samples, const StreamId& stream) {
  std::sort(samples.begin(), samples.end());
  samples.erase(std::unique(samples.begin(), samples.end()), samples.end());

  GalleryIndex index;
  index.stream = stream;
  std::vector<std::string> missing;
  for (const auto& id : samples) {
    const auto* v = embeddings.find(stream, id);
    if (!v) {
      missing.push_back(to_string(id));
      continue;
    }
    if (index.ids.empty()) index.dimension = v->size();
    if (v->size() != index.dimension)
      throw Error(ErrorCode::DimensionMismatch, fmt::format("{} / {}", stream.name(), to_string(id)));
    index.ids.push_back(id);
    index.vectors.insert(index.vectors.end(), v->begin(), v->end());
  }
  if (!missing.empty()) {
    std::string list;
    for (std::size_t i = 0; i < missing.size(); ++i) list += (i ? ", " : "") + missing[i];
    throw Error(ErrorCode::MissingEmbedding, fmt::format("stream {} lacks: {}", stream.name(), list));
  }
  return index;
}

void save_index(const GalleryIndex& index, const std::filesystem::path& file) {
  std::map<SampleId, std::vector<float>> vectors;
  for (std::size_t i = 0; i < index.size(); ++i) {
    const auto v = index.vector(i);
    vectors.emplace(index.ids[i], std::vector<float>(v.begin(), v.end()));
  }
  write_embeddings(file, index.stream, index.dimension, vectors);
}

GalleryIndex load_index(const std::filesystem::path& file) {
  const auto header = read_embedding_header(file);
  const StreamRegistry registry = validate_registry({{header.stream.name(), header.dimension}});
  const EmbeddingSet set = load_embeddings(file, registry);
  std::vector<SampleId> ids;
  for (const auto& [id, v] : set.stream(header.stream)) ids.push_back(id);
  return build_index(set, std::move(ids), header.stream);
}

SimilarityMatrix cosine_matrix(const GalleryIndex& queries, const GalleryIndex& gallery, unsigned threads) {
  if (queries.stream != gallery.stream)
    throw Error(ErrorCode::InvalidArgument,
                fmt::format("query stream {} vs gallery stream {}", queries.stream.name(), gallery.stream.name()));
  if (queries.size() && gallery.size() && queries.dimension != gallery.dimension)
    throw Error(ErrorCode::DimensionMismatch,
                fmt::format("query dim {} vs gallery dim {}", queries.dimension, gallery.dimension));
  SimilarityMatrix sim;
  sim.stream = gallery.stream;
  sim.queries = queries.ids;
  sim.gallery = gallery.ids;
  sim.cosine = Matrix<double>(queries.size(), gallery.size());
  parallel_for(queries.size(), threads, [&](std::size_t i) {
    const auto q = queries.vector(i);
    auto row = sim.cosine.row(i);
    for (std::size_t j = 0; j < gallery.size(); ++j) {
      const auto g = gallery.vector(j);
      double dot = 0.0;
      for (std::size_t d = 0; d < q.size(); ++d) dot += double{q[d]} * double{g[d]};
      row[j] = dot;
    }
  });
  return sim;
}

void exclude_self_matches(SimilarityMatrix& sim) {
  if (sim.excluded.rows() == 0) sim.excluded = CandidateMask(sim.queries.size(), sim.gallery.size(), 0);
  for (std::size_t i = 0; i < sim.queries.size(); ++i)
    for (std::size_t j = 0; j < sim.gallery.size(); ++j)
      if (sim.queries[i] == sim.gallery[j]) sim.excluded(i, j) = 1;
}

std::vector<std::size_t> ranked_columns(std::span<const double> row, const CandidateMask& excluded, std::size_t r) {
  std::vector<std::size_t> cols;
  cols.reserve(row.size());
  for (std::size_t j = 0; j < row.size(); ++j)
    if (!is_excluded(excluded, r, j)) cols.push_back(j);
  std::stable_sort(cols.begin(), cols.end(), [&](std::size_t a, std::size_t b) { return row[a] > row[b]; });
  return cols;
}

Matrix<int> rank_matrix(const Matrix<double>& similarity, const CandidateMask& excluded) {
  if (excluded.rows() != 0 && !excluded.same_shape(similarity))
    throw Error(ErrorCode::ShapeMismatch, "candidate mask shape differs from similarity matrix");
  Matrix<int> ranks(similarity.rows(), similarity.cols(), 0);
  for (std::size_t i = 0; i < similarity.rows(); ++i) {
    const auto row = similarity.row(i);
    for (std::size_t j = 0; j < row.size(); ++j)
      if (!std::isfinite(row[j]) && !is_excluded(excluded, i, j))
        throw Error(ErrorCode::NonFiniteValue, fmt::format("similarity ({}, {})", i, j));
    const auto order = ranked_columns(row, excluded, i);
    for (std::size_t pos = 0; pos < order.size(); ++pos) ranks(i, order[pos]) = static_cast<int>(pos + 1);
  }
  return ranks;
}

}  // namespace reidfuse
