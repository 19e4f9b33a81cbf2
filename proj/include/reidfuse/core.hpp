#pragma once

#include <compare>
#include <cstdint>
#include <functional>
#include <map>
#include <set>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

namespace reidfuse {

/// One salmon ROI occurrence. Trajectory ids are scoped per camera: the same
/// value on two cameras denotes two unrelated tracks.
struct SampleId {
  std::uint32_t camera = 0;
  std::uint32_t trajectory = 0;
  std::uint32_t frame = 0;

  auto operator<=>(const SampleId&) const = default;
};

/// A tracker-assigned trajectory, unique only together with its camera.
struct TrajectoryKey {
  std::uint32_t camera = 0;
  std::uint32_t trajectory = 0;

  auto operator<=>(const TrajectoryKey&) const = default;
};

inline TrajectoryKey trajectory_of(const SampleId& id) { return {id.camera, id.trajectory}; }

// "camera:trajectory:frame" and "camera:trajectory".
std::string to_string(const SampleId& id);
std::string to_string(const TrajectoryKey& key);
SampleId parse_sample_id(std::string_view text);
TrajectoryKey parse_trajectory_key(std::string_view text);

/// Name of one embedding producer (a patch type or a sliced-patch fusion head).
class StreamId {
 public:
  StreamId() = default;
  explicit StreamId(std::string name);

  const std::string& name() const noexcept { return name_; }
  auto operator<=>(const StreamId&) const = default;

 private:
  std::string name_;
};

std::vector<StreamId> parse_stream_list(std::string_view comma_separated);
std::string join_streams(const std::vector<StreamId>& streams);

std::vector<std::string> default_stream_names();

class StreamRegistry {
 public:
  StreamRegistry() = default;

  bool contains(const StreamId& stream) const { return dims_.count(stream) != 0; }
  std::size_t dimension(const StreamId& stream) const;
  std::size_t size() const noexcept { return dims_.size(); }
  const std::map<StreamId, std::size_t>& entries() const noexcept { return dims_; }

  /// Throws UnknownStream if any entry is absent.
  void require(const std::vector<StreamId>& streams) const;

  bool operator==(const StreamRegistry&) const = default;

 private:
  friend StreamRegistry validate_registry(const std::vector<std::pair<std::string, std::size_t>>&);
  std::map<StreamId, std::size_t> dims_;
};

/// Builds a registry from (name, dimension) declarations in file order.
/// Rejects duplicate names and zero dimensions.
StreamRegistry validate_registry(const std::vector<std::pair<std::string, std::size_t>>& declared);

struct FusionParams {
  double lambda = 0.75;
  double tau = 0.7;
  int k = 20;
  std::vector<StreamId> streams;

  void validate() const;
  bool operator==(const FusionParams&) const = default;
};

struct FilterParams {
  double l_diag = 600.0;
  int min_traj_length = 20;
  int frame_stride = 5;
  double min_foreground_fraction = 0.25;

  void validate() const;
  bool operator==(const FilterParams&) const = default;
};

struct FrameRange {
  std::uint32_t begin = 0;  // inclusive
  std::uint32_t end = 0;    // exclusive

  bool contains(std::uint32_t frame) const { return frame >= begin && frame < end; }
  bool overlaps(const FrameRange& other) const { return begin < other.end && other.begin < end; }
  bool operator==(const FrameRange&) const = default;
};

struct SplitSpec {
  std::string name;
  std::uint32_t camera = 0;
  FrameRange frames;

  bool operator==(const SplitSpec&) const = default;
};

/// Throws OverlappingSplits when two ranges on the same camera intersect.
void validate_splits(const std::vector<SplitSpec>& splits);

/// Formats a double so that parsing it back yields the same value.
std::string format_real(double value);
double parse_real(std::string_view text);
long long parse_integer(std::string_view text);

std::string_view trim(std::string_view text);
std::vector<std::string_view> split(std::string_view text, char delimiter);

}  // namespace reidfuse

template <>
struct std::hash<reidfuse::SampleId> {
  std::size_t operator()(const reidfuse::SampleId& id) const noexcept {
    std::uint64_t h = (std::uint64_t{id.camera} << 48) ^ (std::uint64_t{id.trajectory} << 24) ^ id.frame;
    return std::hash<std::uint64_t>{}(h);
  }
};
