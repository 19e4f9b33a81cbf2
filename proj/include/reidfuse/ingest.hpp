#pragma once

#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "reidfuse/config.hpp"
#include "reidfuse/core.hpp"
#include "reidfuse/geometry.hpp"

namespace reidfuse {

struct BodyPart {
  Rect bbox;
  bool occluded = false;
  bool operator==(const BodyPart&) const = default;
};

/// One tracker detection with its body parts and quarter masks.
struct Detection {
  SampleId id;
  Rect fish_bbox;
  std::map<std::string, BodyPart> parts;  // head, dorsal_fin, tail_fin
  std::optional<Polygon> q1_mask;
  std::optional<Polygon> q2_mask;
  std::string image_path;

  bool any_occluded() const;
  bool operator==(const Detection&) const = default;
};

struct Track {
  TrajectoryKey key;
  std::vector<Detection> detections;  // strictly increasing frames
};

// Detections file: one tab-separated record per line,
//   camera  traj  frame  x,y,w,h  [part:name,x,y,w,h,occluded]*  [mask:Q1|Q2,poly:x1 y1 x2 y2 ...]*  [image:path]
// Lines starting with '#' and blank lines are ignored.
Detection parse_detection(std::string_view line, int line_no = 0);
std::string format_detection(const Detection& detection);

/// Groups records by (camera, trajectory) with frames ascending.
std::vector<Track> parse_tracks(std::string_view text);
std::vector<Track> read_tracks(const std::filesystem::path& path);

struct FilterStats {
  std::size_t too_small = 0;
  std::size_t occluded = 0;
  std::size_t outside_longest_run = 0;
  std::size_t short_tracks = 0;
};

/// Drops small and occluded detections, keeps each track's longest gap-free
/// run (earliest on ties) and drops runs shorter than min_traj_length.
std::vector<Track> filter_detections(const std::vector<Track>& tracks, const FilterParams& params,
                                     FilterStats* stats = nullptr);

/// Polygon area over the area of its axis-aligned bounding rectangle.
double foreground_fraction(const Polygon& mask);

struct SampleRecord {
  std::string split;
  Detection detection;

  const SampleId& id() const { return detection.id; }
};

/// Stride-samples each track from its first frame, keeps samples whose Q1 and
/// Q2 masks both exceed the foreground threshold, and assigns them to splits.
/// Samples outside every split range are dropped.
std::map<std::string, std::vector<SampleRecord>> build_split(const std::vector<Track>& tracks,
                                                             const std::vector<SplitSpec>& splits,
                                                             const FilterParams& params);

/// Unit-norm vectors keyed by (stream, sample).
class EmbeddingSet {
 public:
  /// Normalizes and stores. Throws NonFiniteValue, ZeroVector, DuplicateEmbedding.
  void insert(const StreamId& stream, const SampleId& sample, std::vector<float> vector);

  const std::vector<float>* find(const StreamId& stream, const SampleId& sample) const;
  bool has_stream(const StreamId& stream) const { return data_.count(stream) != 0; }
  std::vector<StreamId> streams() const;
  const std::map<SampleId, std::vector<float>>& stream(const StreamId& stream) const;
  std::size_t size() const;

  /// Keeps only the listed samples.
  EmbeddingSet restricted_to(const std::vector<SampleId>& samples) const;

  bool operator==(const EmbeddingSet&) const = default;

 private:
  std::map<StreamId, std::map<SampleId, std::vector<float>>> data_;
};

// Embedding file (little-endian):
//   "RFE1", u32 name_length, name bytes, u32 D, u32 N,
//   N x (u32 camera, u32 traj, u32 frame, D x f32)
struct EmbeddingFileHeader {
  StreamId stream;
  std::size_t dimension = 0;
  std::size_t count = 0;
};
EmbeddingFileHeader read_embedding_header(const std::filesystem::path& file);

void load_embeddings(const std::filesystem::path& file, const StreamRegistry& registry, EmbeddingSet& into);
EmbeddingSet load_embeddings(const std::filesystem::path& file, const StreamRegistry& registry);
/// Loads every *.rfe file of a directory in name order.
EmbeddingSet load_embedding_dir(const std::filesystem::path& dir, const StreamRegistry& registry);

void write_embeddings(const std::filesystem::path& file, const StreamId& stream, std::size_t dimension,
                      const std::map<SampleId, std::vector<float>>& vectors);
void write_embedding_dir(const std::filesystem::path& dir, const EmbeddingSet& set, const StreamRegistry& registry);

}  // namespace reidfuse
