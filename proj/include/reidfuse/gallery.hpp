#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <vector>

#include "reidfuse/core.hpp"
#include "reidfuse/ingest.hpp"
#include "reidfuse/matrix.hpp"

namespace reidfuse {

/// Entries set to 1 are not candidates for that query (e.g. the query itself
/// in within-split retrieval). An empty 0x0 mask means every entry is a candidate.
using CandidateMask = Matrix<std::uint8_t>;

inline bool is_excluded(const CandidateMask& mask, std::size_t r, std::size_t c) {
  return mask.rows() != 0 && mask(r, c) != 0;
}

/// Unit vectors of one stream for a fixed, sorted list of samples.
struct GalleryIndex {
  StreamId stream;
  std::vector<SampleId> ids;
  std::size_t dimension = 0;
  std::vector<float> vectors;  // ids.size() x dimension, row-major

  std::size_t size() const noexcept { return ids.size(); }
  std::span<const float> vector(std::size_t i) const { return {vectors.data() + i * dimension, dimension}; }
};

/// Throws MissingEmbedding naming every sample without a vector for `stream`.
GalleryIndex build_index(const EmbeddingSet& embeddings, std::vector<SampleId> samples, const StreamId& stream);

void save_index(const GalleryIndex& index, const std::filesystem::path& file);
GalleryIndex load_index(const std::filesystem::path& file);

struct SimilarityMatrix {
  StreamId stream;
  std::vector<SampleId> queries;
  std::vector<SampleId> gallery;
  Matrix<double> cosine;
  CandidateMask excluded;
};

SimilarityMatrix cosine_matrix(const GalleryIndex& queries, const GalleryIndex& gallery, unsigned threads = 1);

/// Marks entries whose query and gallery sample are the same.
void exclude_self_matches(SimilarityMatrix& sim);

/// Per row, rank 1 is the highest similarity; ties go to the lower gallery
/// index. Excluded entries get rank 0 and do not count.
Matrix<int> rank_matrix(const Matrix<double>& similarity, const CandidateMask& excluded = {});
inline Matrix<int> rank_matrix(const SimilarityMatrix& sim) { return rank_matrix(sim.cosine, sim.excluded); }

/// Candidate columns of one row ordered best first.
std::vector<std::size_t> ranked_columns(std::span<const double> row, const CandidateMask& excluded, std::size_t r);

}  // namespace reidfuse
