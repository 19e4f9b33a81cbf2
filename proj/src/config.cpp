#include "reidfuse/config.hpp"

#include <fmt/format.h>

#include <fstream>
#include <sstream>

#include "reidfuse/error.hpp"

namespace reidfuse {

std::vector<KeyValue> parse_key_values(std::string_view text) {
  std::vector<KeyValue> out;
  int line_no = 0;
  for (auto line : split(text, '\n')) {
    ++line_no;
    if (const auto hash = line.find('#'); hash != std::string_view::npos) line = line.substr(0, hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string_view::npos)
      throw Error(ErrorCode::InvalidConfig, fmt::format("line {}: expected 'key = value'", line_no));
    auto key = trim(line.substr(0, eq));
    if (key.empty()) throw Error(ErrorCode::InvalidConfig, fmt::format("line {}: empty key", line_no));
    out.push_back({std::string(key), std::string(trim(line.substr(eq + 1))), line_no});
  }
  return out;
}

std::string read_text_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorCode::Io, fmt::format("cannot open '{}'", path.string()));
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write_text_file(const std::filesystem::path& path, std::string_view text) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error(ErrorCode::Io, fmt::format("cannot write '{}'", path.string()));
  out.write(text.data(), static_cast<std::streamsize>(text.size()));
  if (!out) throw Error(ErrorCode::Io, fmt::format("write failed for '{}'", path.string()));
}

std::vector<std::pair<std::string, std::size_t>> EngineConfig::stream_declarations() const {
  std::vector<std::pair<std::string, std::size_t>> out;
  for (const auto& [id, dim] : registry.entries()) out.emplace_back(id.name(), dim);
  return out;
}

namespace {

SplitSpec parse_split_range(const std::string& name, std::string_view text, int line) {
  // camera:begin-end
  const auto colon = text.find(':');
  const auto dash = text.find('-', colon == std::string_view::npos ? 0 : colon);
  if (colon == std::string_view::npos || dash == std::string_view::npos)
    throw Error(ErrorCode::InvalidConfig, fmt::format("line {}: split range must be camera:begin-end", line));
  SplitSpec spec;
  spec.name = name;
  spec.camera = static_cast<std::uint32_t>(parse_integer(text.substr(0, colon)));
  spec.frames.begin = static_cast<std::uint32_t>(parse_integer(text.substr(colon + 1, dash - colon - 1)));
  spec.frames.end = static_cast<std::uint32_t>(parse_integer(text.substr(dash + 1)));
  return spec;
}

}  // namespace

EngineConfig parse_engine_config(std::string_view text) {
  EngineConfig config;
  std::vector<std::pair<std::string, std::size_t>> declared;
  bool streams_given = false;

  for (const auto& kv : parse_key_values(text)) {
    try {
      const std::string_view key = kv.key;
      if (key.starts_with("stream.")) {
        const long long dim = parse_integer(kv.value);
        if (dim < 0) throw Error(ErrorCode::ZeroDimension, kv.key);
        declared.emplace_back(std::string(key.substr(7)), static_cast<std::size_t>(dim));
      } else if (key == "fusion.lambda") {
        config.fusion.lambda = parse_real(kv.value);
      } else if (key == "fusion.tau") {
        config.fusion.tau = parse_real(kv.value);
      } else if (key == "fusion.k") {
        config.fusion.k = static_cast<int>(parse_integer(kv.value));
      } else if (key == "fusion.streams") {
        config.fusion.streams = parse_stream_list(kv.value);
        streams_given = true;
      } else if (key == "filter.l_diag") {
        config.filter.l_diag = parse_real(kv.value);
      } else if (key == "filter.min_traj_length") {
        config.filter.min_traj_length = static_cast<int>(parse_integer(kv.value));
      } else if (key == "filter.frame_stride") {
        config.filter.frame_stride = static_cast<int>(parse_integer(kv.value));
      } else if (key == "filter.min_foreground_fraction") {
        config.filter.min_foreground_fraction = parse_real(kv.value);
      } else if (key == "geometry.corner_offset_deg") {
        config.geometry.corner_offset_deg = parse_real(kv.value);
      } else if (key == "geometry.cut_fractions") {
        const auto parts = split(kv.value, ',');
        if (parts.size() != 2) throw Error(ErrorCode::InvalidConfig, "cut_fractions needs two values");
        config.geometry.cut_fractions = {parse_real(parts[0]), parse_real(parts[1])};
      } else if (key == "geometry.overlap_fraction") {
        config.geometry.overlap_fraction = parse_real(kv.value);
      } else if (key.starts_with("split.")) {
        const std::string name(key.substr(6));
        if (name.empty()) throw Error(ErrorCode::InvalidConfig, "empty split name");
        for (auto range : split(kv.value, ','))
          config.splits.push_back(parse_split_range(name, trim(range), kv.line));
      } else {
        throw Error(ErrorCode::InvalidConfig, fmt::format("unknown key '{}'", kv.key));
      }
    } catch (const Error& e) {
      if (e.code() == ErrorCode::InvalidArgument)
        throw Error(ErrorCode::InvalidConfig, fmt::format("line {}: {}", kv.line, e.what()));
      throw;
    }
  }

  config.registry = validate_registry(declared);
  if (!streams_given)
    for (const auto& [id, dim] : config.registry.entries()) config.fusion.streams.push_back(id);
  config.fusion.validate();
  config.registry.require(config.fusion.streams);
  config.filter.validate();
  config.geometry.validate();
  validate_splits(config.splits);
  return config;
}

EngineConfig read_engine_config(const std::filesystem::path& path) { return parse_engine_config(read_text_file(path)); }

std::string to_text(const EngineConfig& config) {
  std::string out = "# reid-fuse engine configuration\n";
  for (const auto& [id, dim] : config.registry.entries()) out += fmt::format("stream.{} = {}\n", id.name(), dim);
  out += fmt::format("fusion.lambda = {}\n", format_real(config.fusion.lambda));
  out += fmt::format("fusion.tau = {}\n", format_real(config.fusion.tau));
  out += fmt::format("fusion.k = {}\n", config.fusion.k);
  out += fmt::format("fusion.streams = {}\n", join_streams(config.fusion.streams));
  out += fmt::format("filter.l_diag = {}\n", format_real(config.filter.l_diag));
  out += fmt::format("filter.min_traj_length = {}\n", config.filter.min_traj_length);
  out += fmt::format("filter.frame_stride = {}\n", config.filter.frame_stride);
  out += fmt::format("filter.min_foreground_fraction = {}\n", format_real(config.filter.min_foreground_fraction));
  out += fmt::format("geometry.corner_offset_deg = {}\n", format_real(config.geometry.corner_offset_deg));
  out += fmt::format("geometry.cut_fractions = {},{}\n", format_real(config.geometry.cut_fractions[0]),
                     format_real(config.geometry.cut_fractions[1]));
  out += fmt::format("geometry.overlap_fraction = {}\n", format_real(config.geometry.overlap_fraction));
  for (const auto& s : config.splits)
    out += fmt::format("split.{} = {}:{}-{}\n", s.name, s.camera, s.frames.begin, s.frames.end);
  return out;
}

}  // namespace reidfuse
