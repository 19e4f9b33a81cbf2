#include "reidfuse/core.hpp"

#include <fmt/format.h>

#include <charconv>
#include <cmath>
#include <limits>

#include "reidfuse/error.hpp"

namespace reidfuse {

std::string_view to_string(ErrorCode code) {
  switch (code) {
    case ErrorCode::InvalidArgument: return "InvalidArgument";
    case ErrorCode::InvalidConfig: return "InvalidConfig";
    case ErrorCode::Io: return "Io";
    case ErrorCode::DuplicateStream: return "DuplicateStream";
    case ErrorCode::ZeroDimension: return "ZeroDimension";
    case ErrorCode::MalformedRecord: return "MalformedRecord";
    case ErrorCode::DuplicateFrameInTrack: return "DuplicateFrameInTrack";
    case ErrorCode::DegeneratePolygon: return "DegeneratePolygon";
    case ErrorCode::OverlappingSplits: return "OverlappingSplits";
    case ErrorCode::DimensionMismatch: return "DimensionMismatch";
    case ErrorCode::UnknownStream: return "UnknownStream";
    case ErrorCode::NonFiniteValue: return "NonFiniteValue";
    case ErrorCode::ZeroVector: return "ZeroVector";
    case ErrorCode::DuplicateEmbedding: return "DuplicateEmbedding";
    case ErrorCode::CoincidentCenters: return "CoincidentCenters";
    case ErrorCode::DegenerateHull: return "DegenerateHull";
    case ErrorCode::CoincidentCentroids: return "CoincidentCentroids";
    case ErrorCode::ZeroLengthLateralLine: return "ZeroLengthLateralLine";
    case ErrorCode::MissingEmbedding: return "MissingEmbedding";
    case ErrorCode::MissingStream: return "MissingStream";
    case ErrorCode::ShapeMismatch: return "ShapeMismatch";
    case ErrorCode::EmptyStreamSet: return "EmptyStreamSet";
    case ErrorCode::NoRelevant: return "NoRelevant";
    case ErrorCode::EmptyQuerySet: return "EmptyQuerySet";
    case ErrorCode::NoVerifiedMatches: return "NoVerifiedMatches";
    case ErrorCode::QuerySetMismatch: return "QuerySetMismatch";
    case ErrorCode::EmptyAPs: return "EmptyAPs";
    case ErrorCode::LengthMismatch: return "LengthMismatch";
    case ErrorCode::UnknownQuery: return "UnknownQuery";
    case ErrorCode::GalleryNotBuilt: return "GalleryNotBuilt";
    case ErrorCode::UnknownTrajectory: return "UnknownTrajectory";
  }
  return "Unknown";
}

std::string_view trim(std::string_view text) {
  const auto first = text.find_first_not_of(" \t\r\n");
  if (first == std::string_view::npos) return {};
  const auto last = text.find_last_not_of(" \t\r\n");
  return text.substr(first, last - first + 1);
}

std::vector<std::string_view> split(std::string_view text, char delimiter) {
  std::vector<std::string_view> parts;
  std::size_t start = 0;
  while (true) {
    const auto pos = text.find(delimiter, start);
    if (pos == std::string_view::npos) {
      parts.push_back(text.substr(start));
      return parts;
    }
    parts.push_back(text.substr(start, pos - start));
    start = pos + 1;
  }
}

std::string format_real(double value) {
  if (std::isnan(value)) return "nan";
  if (std::isinf(value)) return value > 0 ? "inf" : "-inf";
  // Shortest representation that round-trips.
  return fmt::format("{}", value);
}

double parse_real(std::string_view text) {
  text = trim(text);
  if (text == "nan") return std::numeric_limits<double>::quiet_NaN();
  if (text == "inf") return std::numeric_limits<double>::infinity();
  if (text == "-inf") return -std::numeric_limits<double>::infinity();
  double value = 0.0;
  const auto* end = text.data() + text.size();
  auto [ptr, ec] = std::from_chars(text.data(), end, value);
  if (ec != std::errc{} || ptr != end || text.empty())
    throw Error(ErrorCode::InvalidArgument, fmt::format("not a number: '{}'", text));
  return value;
}

long long parse_integer(std::string_view text) {
  text = trim(text);
  long long value = 0;
  const auto* end = text.data() + text.size();
  auto [ptr, ec] = std::from_chars(text.data(), end, value);
  if (ec != std::errc{} || ptr != end || text.empty())
    throw Error(ErrorCode::InvalidArgument, fmt::format("not an integer: '{}'", text));
  return value;
}

namespace {

std::uint32_t parse_u32(std::string_view text) {
  const long long v = parse_integer(text);
  if (v < 0 || v > std::numeric_limits<std::uint32_t>::max())
    throw Error(ErrorCode::InvalidArgument, fmt::format("out of range: '{}'", text));
  return static_cast<std::uint32_t>(v);
}

}  // namespace

std::string to_string(const SampleId& id) { return fmt::format("{}:{}:{}", id.camera, id.trajectory, id.frame); }

std::string to_string(const TrajectoryKey& key) { return fmt::format("{}:{}", key.camera, key.trajectory); }

SampleId parse_sample_id(std::string_view text) {
  const auto parts = split(trim(text), ':');
  if (parts.size() != 3) throw Error(ErrorCode::InvalidArgument, fmt::format("bad sample id '{}'", text));
  return {parse_u32(parts[0]), parse_u32(parts[1]), parse_u32(parts[2])};
}

TrajectoryKey parse_trajectory_key(std::string_view text) {
  const auto parts = split(trim(text), ':');
  if (parts.size() != 2) throw Error(ErrorCode::InvalidArgument, fmt::format("bad trajectory '{}'", text));
  return {parse_u32(parts[0]), parse_u32(parts[1])};
}

StreamId::StreamId(std::string name) : name_(std::move(name)) {
  if (name_.empty()) throw Error(ErrorCode::InvalidArgument, "empty stream name");
  for (char c : name_) {
    if (c == ',' || c == ' ' || c == '\t' || c == '\n' || c == '=' || c == '+')
      throw Error(ErrorCode::InvalidArgument, fmt::format("invalid character in stream name '{}'", name_));
  }
}

std::vector<StreamId> parse_stream_list(std::string_view comma_separated) {
  std::vector<StreamId> streams;
  for (auto part : split(comma_separated, ',')) {
    part = trim(part);
    if (!part.empty()) streams.emplace_back(std::string(part));
  }
  return streams;
}

std::string join_streams(const std::vector<StreamId>& streams) {
  std::string out;
  for (std::size_t i = 0; i < streams.size(); ++i) {
    if (i) out += ',';
    out += streams[i].name();
  }
  return out;
}

std::vector<std::string> default_stream_names() {
  return {"full_image", "head",  "dorsal_fin", "q1",    "q2",    "q1_sliced", "q2_sliced",
          "q1_s1",      "q1_s2", "q1_s3",      "q2_s1", "q2_s2", "q2_s3"};
}

std::size_t StreamRegistry::dimension(const StreamId& stream) const {
  const auto it = dims_.find(stream);
  if (it == dims_.end()) throw Error(ErrorCode::UnknownStream, stream.name());
  return it->second;
}

void StreamRegistry::require(const std::vector<StreamId>& streams) const {
  for (const auto& s : streams)
    if (!contains(s)) throw Error(ErrorCode::UnknownStream, fmt::format("stream '{}' is not registered", s.name()));
}

StreamRegistry validate_registry(const std::vector<std::pair<std::string, std::size_t>>& declared) {
  StreamRegistry registry;
  for (const auto& [name, dim] : declared) {
    StreamId id(name);
    if (registry.dims_.count(id)) throw Error(ErrorCode::DuplicateStream, name);
    if (dim == 0) throw Error(ErrorCode::ZeroDimension, name);
    registry.dims_.emplace(std::move(id), dim);
  }
  return registry;
}

void FusionParams::validate() const {
  if (!(lambda >= 0.0 && lambda <= 1.0))
    throw Error(ErrorCode::InvalidArgument, fmt::format("lambda {} outside [0,1]", lambda));
  if (!(tau > 0.0) || !std::isfinite(tau)) throw Error(ErrorCode::InvalidArgument, fmt::format("tau {} must be > 0", tau));
  if (k < 0) throw Error(ErrorCode::InvalidArgument, fmt::format("k {} must be >= 0", k));
  if (streams.empty()) throw Error(ErrorCode::EmptyStreamSet, "fusion stream set is empty");
  std::set<StreamId> seen;
  for (const auto& s : streams)
    if (!seen.insert(s).second) throw Error(ErrorCode::DuplicateStream, s.name());
}

void FilterParams::validate() const {
  if (!(l_diag > 0.0)) throw Error(ErrorCode::InvalidArgument, "l_diag must be > 0");
  if (min_traj_length <= 0) throw Error(ErrorCode::InvalidArgument, "min_traj_length must be > 0");
  if (frame_stride <= 0) throw Error(ErrorCode::InvalidArgument, "frame_stride must be > 0");
  if (!(min_foreground_fraction > 0.0 && min_foreground_fraction < 1.0))
    throw Error(ErrorCode::InvalidArgument, "min_foreground_fraction must lie in (0,1)");
}

void validate_splits(const std::vector<SplitSpec>& splits) {
  for (std::size_t i = 0; i < splits.size(); ++i) {
    const auto& a = splits[i];
    if (a.frames.end <= a.frames.begin)
      throw Error(ErrorCode::InvalidConfig, fmt::format("split '{}' has an empty frame range", a.name));
    for (std::size_t j = i + 1; j < splits.size(); ++j) {
      const auto& b = splits[j];
      if (a.camera == b.camera && a.frames.overlaps(b.frames))
        throw Error(ErrorCode::OverlappingSplits,
                    fmt::format("'{}' [{},{}) and '{}' [{},{}) overlap on camera {}", a.name, a.frames.begin,
                                a.frames.end, b.name, b.frames.begin, b.frames.end, a.camera));
    }
  }
}

}  // namespace reidfuse
