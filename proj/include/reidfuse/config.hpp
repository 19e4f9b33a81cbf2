#pragma once

#include <filesystem>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "reidfuse/core.hpp"
#include "reidfuse/geometry.hpp"

namespace reidfuse {

struct KeyValue {
  std::string key;
  std::string value;
  int line = 0;
};

/// `key = value` lines; `#` starts a comment; blank lines ignored. Keys keep
/// file order and may repeat.
std::vector<KeyValue> parse_key_values(std::string_view text);

std::string read_text_file(const std::filesystem::path& path);
void write_text_file(const std::filesystem::path& path, std::string_view text);

struct EngineConfig {
  StreamRegistry registry;
  FusionParams fusion;
  FilterParams filter;
  GeometryParams geometry;
  std::vector<SplitSpec> splits;

  /// Stream names with their dimensions, in registry order.
  std::vector<std::pair<std::string, std::size_t>> stream_declarations() const;
  bool operator==(const EngineConfig&) const = default;
};

EngineConfig parse_engine_config(std::string_view text);
EngineConfig read_engine_config(const std::filesystem::path& path);
std::string to_text(const EngineConfig& config);

}  // namespace reidfuse
