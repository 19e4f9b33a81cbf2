#include "reidfuse/ingest.hpp"

#include <fmt/format.h>

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>

#include "reidfuse/error.hpp"

namespace reidfuse {

namespace {

const std::set<std::string>& known_parts() {
  static const std::set<std::string> parts{"head", "dorsal_fin", "tail_fin"};
  return parts;
}

[[noreturn]] void malformed(int line_no, const std::string& what) {
  throw Error(ErrorCode::MalformedRecord, fmt::format("line {}: {}", line_no, what));
}

Rect parse_rect(const std::vector<std::string_view>& v, std::size_t at, int line_no) {
  if (v.size() < at + 4) malformed(line_no, "rectangle needs x,y,w,h");
  Rect r{parse_real(v[at]), parse_real(v[at + 1]), parse_real(v[at + 2]), parse_real(v[at + 3])};
  if (!(r.w > 0 && r.h > 0)) malformed(line_no, "rectangle needs positive width and height");
  return r;
}

Polygon parse_polygon(std::string_view text, int line_no) {
  Polygon poly;
  std::vector<double> coords;
  for (auto tok : split(trim(text), ' ')) {
    if (tok.empty()) continue;
    coords.push_back(parse_real(tok));
  }
  if (coords.size() % 2 != 0) malformed(line_no, "polygon has an odd number of coordinates");
  for (std::size_t i = 0; i < coords.size(); i += 2) poly.push_back({coords[i], coords[i + 1]});
  if (poly.size() < 3) malformed(line_no, "polygon needs at least 3 vertices");
  if (signed_area(poly) == 0.0) malformed(line_no, "polygon has zero area");
  return poly;
}

std::string format_polygon(const Polygon& poly) {
  std::string out;
  for (std::size_t i = 0; i < poly.size(); ++i) {
    if (i) out += ' ';
    out += format_real(poly[i].x) + ' ' + format_real(poly[i].y);
  }
  return out;
}

std::string format_rect(const Rect& r) {
  return fmt::format("{},{},{},{}", format_real(r.x), format_real(r.y), format_real(r.w), format_real(r.h));
}

}  // namespace

bool Detection::any_occluded() const {
  return std::any_of(parts.begin(), parts.end(), [](const auto& kv) { return kv.second.occluded; });
}

Detection parse_detection(std::string_view line, int line_no) {
  const auto fields = split(trim(line), '\t');
  if (fields.size() < 4) malformed(line_no, "expected camera, traj, frame and fish bbox");
  Detection d;
  try {
    const auto cam = parse_integer(fields[0]);
    const auto traj = parse_integer(fields[1]);
    const auto frame = parse_integer(fields[2]);
    if (cam < 0 || traj < 0 || frame < 0) malformed(line_no, "negative identifier");
    d.id = {static_cast<std::uint32_t>(cam), static_cast<std::uint32_t>(traj), static_cast<std::uint32_t>(frame)};
    d.fish_bbox = parse_rect(split(fields[3], ','), 0, line_no);

    for (std::size_t i = 4; i < fields.size(); ++i) {
      const auto field = trim(fields[i]);
      if (field.empty()) continue;
      if (field.starts_with("part:")) {
        const auto v = split(field.substr(5), ',');
        if (v.size() != 6) malformed(line_no, "part needs name,x,y,w,h,occluded");
        const std::string name(trim(v[0]));
        if (!known_parts().count(name)) malformed(line_no, fmt::format("unknown part '{}'", name));
        const auto flag = trim(v[5]);
        if (flag != "0" && flag != "1") malformed(line_no, "occluded flag must be 0 or 1");
        if (!d.parts.emplace(name, BodyPart{parse_rect(v, 1, line_no), flag == "1"}).second)
          malformed(line_no, fmt::format("duplicate part '{}'", name));
      } else if (field.starts_with("mask:")) {
        const auto body = field.substr(5);
        const auto comma = body.find(',');
        if (comma == std::string_view::npos || !body.substr(comma + 1).starts_with("poly:"))
          malformed(line_no, "mask must be Q1|Q2,poly:...");
        const auto kind = trim(body.substr(0, comma));
        auto poly = parse_polygon(body.substr(comma + 6), line_no);
        std::optional<Polygon>* slot = nullptr;
        if (kind == "Q1") {
          slot = &d.q1_mask;
        } else if (kind == "Q2") {
          slot = &d.q2_mask;
        } else {
          malformed(line_no, "mask kind must be Q1 or Q2");
        }
        if (*slot) malformed(line_no, fmt::format("duplicate mask {}", kind));
        *slot = std::move(poly);
      } else if (field.starts_with("image:")) {
        d.image_path = std::string(field.substr(6));
      } else {
        malformed(line_no, fmt::format("unrecognized field '{}'", field));
      }
    }
  } catch (const Error& e) {
    if (e.code() == ErrorCode::MalformedRecord) throw;
    malformed(line_no, e.what());
  }
  return d;
}

std::string format_detection(const Detection& d) {
  std::string out = fmt::format("{}\t{}\t{}\t{}", d.id.camera, d.id.trajectory, d.id.frame, format_rect(d.fish_bbox));
  for (const auto& [name, part] : d.parts)
    out += fmt::format("\tpart:{},{},{}", name, format_rect(part.bbox), part.occluded ? 1 : 0);
  if (d.q1_mask) out += "\tmask:Q1,poly:" + format_polygon(*d.q1_mask);
  if (d.q2_mask) out += "\tmask:Q2,poly:" + format_polygon(*d.q2_mask);
  if (!d.image_path.empty()) out += "\timage:" + d.image_path;
  return out;
}

std::vector<Track> parse_tracks(std::string_view text) {
  std::map<TrajectoryKey, std::vector<Detection>> grouped;
  int line_no = 0;
  for (auto line : split(text, '\n')) {
    ++line_no;
    const auto t = trim(line);
    if (t.empty() || t.front() == '#') continue;
    Detection d = parse_detection(line, line_no);
    grouped[trajectory_of(d.id)].push_back(std::move(d));
  }
  std::vector<Track> tracks;
  tracks.reserve(grouped.size());
  for (auto& [key, dets] : grouped) {
    std::stable_sort(dets.begin(), dets.end(), [](const Detection& a, const Detection& b) { return a.id.frame < b.id.frame; });
    for (std::size_t i = 1; i < dets.size(); ++i)
      if (dets[i].id.frame == dets[i - 1].id.frame)
        throw Error(ErrorCode::DuplicateFrameInTrack, fmt::format("{} appears twice", to_string(dets[i].id)));
    tracks.push_back({key, std::move(dets)});
  }
  return tracks;
}

std::vector<Track> read_tracks(const std::filesystem::path& path) { return parse_tracks(read_text_file(path)); }

std::vector<Track> filter_detections(const std::vector<Track>& tracks, const FilterParams& params, FilterStats* stats) {
  params.validate();
  FilterStats local;
  std::vector<Track> out;
  for (const auto& track : tracks) {
    std::vector<const Detection*> kept;
    for (const auto& d : track.detections) {
      if (d.fish_bbox.diagonal() < params.l_diag) {
        ++local.too_small;
      } else if (d.any_occluded()) {
        ++local.occluded;
      } else {
        kept.push_back(&d);
      }
    }
    // Longest run of consecutive frames; strict '>' keeps the earliest on ties.
    std::size_t best_start = 0, best_len = 0;
    for (std::size_t i = 0; i < kept.size();) {
      std::size_t j = i + 1;
      while (j < kept.size() && kept[j]->id.frame == kept[j - 1]->id.frame + 1) ++j;
      if (j - i > best_len) {
        best_len = j - i;
        best_start = i;
      }
      i = j;
    }
    local.outside_longest_run += kept.size() - best_len;
    if (best_len == 0) continue;
    if (best_len < static_cast<std::size_t>(params.min_traj_length)) {
      local.short_tracks += 1;
      continue;
    }
    Track t{track.key, {}};
    for (std::size_t i = best_start; i < best_start + best_len; ++i) t.detections.push_back(*kept[i]);
    out.push_back(std::move(t));
  }
  if (stats) *stats = local;
  return out;
}

double foreground_fraction(const Polygon& mask) {
  if (mask.size() < 3) throw Error(ErrorCode::DegeneratePolygon, "polygon needs at least 3 vertices");
  const double area = std::abs(signed_area(mask));
  double x0 = mask[0].x, x1 = mask[0].x, y0 = mask[0].y, y1 = mask[0].y;
  for (const auto& p : mask) {
    x0 = std::min(x0, p.x);
    x1 = std::max(x1, p.x);
    y0 = std::min(y0, p.y);
    y1 = std::max(y1, p.y);
  }
  const double box = (x1 - x0) * (y1 - y0);
  if (area == 0.0 || box == 0.0) throw Error(ErrorCode::DegeneratePolygon, "polygon has zero area");
  return area / box;
}

std::map<std::string, std::vector<SampleRecord>> build_split(const std::vector<Track>& tracks,
                                                             const std::vector<SplitSpec>& splits,
                                                             const FilterParams& params) {
  params.validate();
  validate_splits(splits);
  std::map<std::string, std::vector<SampleRecord>> out;
  for (const auto& s : splits) out[s.name];

  const auto passes = [&](const std::optional<Polygon>& mask) {
    return mask && foreground_fraction(*mask) > params.min_foreground_fraction;
  };
  for (const auto& track : tracks) {
    if (track.detections.empty()) continue;
    const std::uint32_t first = track.detections.front().id.frame;
    for (const auto& d : track.detections) {
      if ((d.id.frame - first) % static_cast<std::uint32_t>(params.frame_stride) != 0) continue;
      if (!passes(d.q1_mask) || !passes(d.q2_mask)) continue;
      const auto it = std::find_if(splits.begin(), splits.end(), [&](const SplitSpec& s) {
        return s.camera == d.id.camera && s.frames.contains(d.id.frame);
      });
      if (it == splits.end()) continue;
      out[it->name].push_back({it->name, d});
    }
  }
  for (auto& [name, records] : out)
    std::sort(records.begin(), records.end(), [](const SampleRecord& a, const SampleRecord& b) { return a.id() < b.id(); });
  return out;
}

void EmbeddingSet::insert(const StreamId& stream, const SampleId& sample, std::vector<float> vector) {
  double sq = 0.0;
  for (float v : vector) {
    if (!std::isfinite(v))
      throw Error(ErrorCode::NonFiniteValue, fmt::format("{} / {}", stream.name(), to_string(sample)));
    sq += double{v} * double{v};
  }
  if (sq == 0.0) throw Error(ErrorCode::ZeroVector, fmt::format("{} / {}", stream.name(), to_string(sample)));
  // Vectors that are already unit length up to float rounding are kept as is,
  // so that writing a set and loading it back is exact.
  if (std::abs(sq - 1.0) > 1e-6) {
    const double inv = 1.0 / std::sqrt(sq);
    for (float& v : vector) v = static_cast<float>(v * inv);
  }
  auto& slot = data_[stream];
  if (!slot.emplace(sample, std::move(vector)).second)
    throw Error(ErrorCode::DuplicateEmbedding, fmt::format("{} / {}", stream.name(), to_string(sample)));
}

const std::vector<float>* EmbeddingSet::find(const StreamId& stream, const SampleId& sample) const {
  const auto s = data_.find(stream);
  if (s == data_.end()) return nullptr;
  const auto it = s->second.find(sample);
  return it == s->second.end() ? nullptr : &it->second;
}

std::vector<StreamId> EmbeddingSet::streams() const {
  std::vector<StreamId> out;
  for (const auto& [k, v] : data_) out.push_back(k);
  return out;
}

const std::map<SampleId, std::vector<float>>& EmbeddingSet::stream(const StreamId& stream) const {
  static const std::map<SampleId, std::vector<float>> empty;
  const auto it = data_.find(stream);
  return it == data_.end() ? empty : it->second;
}

std::size_t EmbeddingSet::size() const {
  std::size_t n = 0;
  for (const auto& [k, v] : data_) n += v.size();
  return n;
}

EmbeddingSet EmbeddingSet::restricted_to(const std::vector<SampleId>& samples) const {
  const std::set<SampleId> keep(samples.begin(), samples.end());
  EmbeddingSet out;
  for (const auto& [stream, vectors] : data_) {
    auto& dst = out.data_[stream];
    for (const auto& [id, v] : vectors)
      if (keep.count(id)) dst.emplace(id, v);
  }
  return out;
}

namespace {

class ByteReader {
 public:
  ByteReader(std::vector<char> bytes, std::string name) : bytes_(std::move(bytes)), name_(std::move(name)) {}

  std::uint32_t u32() {
    need(4);
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= std::uint32_t{static_cast<unsigned char>(bytes_[pos_ + i])} << (8 * i);
    pos_ += 4;
    return v;
  }
  float f32() { return std::bit_cast<float>(u32()); }
  std::string bytes(std::size_t n) {
    need(n);
    std::string s(bytes_.data() + pos_, n);
    pos_ += n;
    return s;
  }
  bool done() const { return pos_ == bytes_.size(); }

 private:
  void need(std::size_t n) const {
    if (bytes_.size() - pos_ < n) throw Error(ErrorCode::MalformedRecord, fmt::format("'{}' is truncated", name_));
  }
  std::vector<char> bytes_;
  std::string name_;
  std::size_t pos_ = 0;
};

void put_u32(std::string& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xFF));
}

ByteReader open_embedding_file(const std::filesystem::path& file) {
  std::ifstream in(file, std::ios::binary);
  if (!in) throw Error(ErrorCode::Io, fmt::format("cannot open '{}'", file.string()));
  std::vector<char> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return ByteReader(std::move(bytes), file.string());
}

EmbeddingFileHeader read_header(ByteReader& r, const std::filesystem::path& file) {
  if (r.bytes(4) != "RFE1") throw Error(ErrorCode::MalformedRecord, fmt::format("'{}' lacks RFE1 magic", file.string()));
  const std::uint32_t name_len = r.u32();
  if (name_len == 0 || name_len > 256) throw Error(ErrorCode::MalformedRecord, "bad stream name length");
  EmbeddingFileHeader h;
  h.stream = StreamId(r.bytes(name_len));
  h.dimension = r.u32();
  h.count = r.u32();
  return h;
}

}  // namespace

EmbeddingFileHeader read_embedding_header(const std::filesystem::path& file) {
  auto r = open_embedding_file(file);
  return read_header(r, file);
}

void load_embeddings(const std::filesystem::path& file, const StreamRegistry& registry, EmbeddingSet& into) {
  auto r = open_embedding_file(file);
  const auto header = read_header(r, file);
  const StreamId& stream = header.stream;
  if (!registry.contains(stream)) throw Error(ErrorCode::UnknownStream, stream.name());
  const std::size_t dim = header.dimension;
  const std::size_t count = header.count;
  if (dim != registry.dimension(stream))
    throw Error(ErrorCode::DimensionMismatch,
                fmt::format("stream {} expects {} dims, file has {}", stream.name(), registry.dimension(stream), dim));
  for (std::size_t n = 0; n < count; ++n) {
    SampleId id;
    id.camera = r.u32();
    id.trajectory = r.u32();
    id.frame = r.u32();
    std::vector<float> v(dim);
    for (auto& x : v) x = r.f32();
    into.insert(stream, id, std::move(v));
  }
  if (!r.done()) throw Error(ErrorCode::MalformedRecord, fmt::format("trailing bytes in '{}'", file.string()));
}

EmbeddingSet load_embeddings(const std::filesystem::path& file, const StreamRegistry& registry) {
  EmbeddingSet set;
  load_embeddings(file, registry, set);
  return set;
}

EmbeddingSet load_embedding_dir(const std::filesystem::path& dir, const StreamRegistry& registry) {
  if (!std::filesystem::is_directory(dir)) throw Error(ErrorCode::Io, fmt::format("'{}' is not a directory", dir.string()));
  std::vector<std::filesystem::path> files;
  for (const auto& entry : std::filesystem::directory_iterator(dir))
    if (entry.is_regular_file() && entry.path().extension() == ".rfe") files.push_back(entry.path());
  std::sort(files.begin(), files.end());
  EmbeddingSet set;
  for (const auto& f : files) load_embeddings(f, registry, set);
  return set;
}

void write_embeddings(const std::filesystem::path& file, const StreamId& stream, std::size_t dimension,
                      const std::map<SampleId, std::vector<float>>& vectors) {
  std::string out = "RFE1";
  put_u32(out, static_cast<std::uint32_t>(stream.name().size()));
  out += stream.name();
  put_u32(out, static_cast<std::uint32_t>(dimension));
  put_u32(out, static_cast<std::uint32_t>(vectors.size()));
  for (const auto& [id, v] : vectors) {
    if (v.size() != dimension)
      throw Error(ErrorCode::DimensionMismatch, fmt::format("{} / {}", stream.name(), to_string(id)));
    put_u32(out, id.camera);
    put_u32(out, id.trajectory);
    put_u32(out, id.frame);
    for (float x : v) put_u32(out, std::bit_cast<std::uint32_t>(x));
  }
  write_text_file(file, out);
}

void write_embedding_dir(const std::filesystem::path& dir, const EmbeddingSet& set, const StreamRegistry& registry) {
  std::filesystem::create_directories(dir);
  for (const auto& stream : set.streams())
    write_embeddings(dir / (stream.name() + ".rfe"), stream, registry.dimension(stream), set.stream(stream));
}

}  // namespace reidfuse
