#include "reidfuse/synth.hpp"

#include <fmt/format.h>

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>

#include "reidfuse/error.hpp"
#include "reidfuse/stats.hpp"

namespace reidfuse {

std::vector<StreamId> SynthSpec::stream_list() const {
  if (!streams.empty()) return streams;
  return parse_stream_list("q1_sliced,q2_sliced,head,dorsal_fin");
}

void SynthSpec::validate() const {
  const auto fail = [](const std::string& msg) { throw Error(ErrorCode::InvalidConfig, msg); };
  if (n_ids == 0) fail("n_ids must be positive");
  if (images_per_id == 0) fail("images_per_id must be positive");
  if (n_cameras == 0) fail("n_cameras must be positive");
  if (dimension == 0) fail("dimension must be positive");
  for (double v : {identity_scale, sigma_traj, sigma_obs})
    if (!(v >= 0.0) || !std::isfinite(v)) fail("scales must be finite and non-negative");
  if (!(corruption >= 0.0 && corruption <= 1.0)) fail("corruption must lie in [0, 1]");
  auto s = stream_list();
  std::sort(s.begin(), s.end());
  if (std::adjacent_find(s.begin(), s.end()) != s.end()) fail("duplicate stream");
}

SynthSpec parse_synth_spec(std::string_view text) {
  SynthSpec spec;
  const auto count = [](const KeyValue& kv) {
    const auto v = parse_integer(kv.value);
    if (v < 0) throw Error(ErrorCode::InvalidConfig, fmt::format("line {}: {} must be non-negative", kv.line, kv.key));
    return static_cast<std::size_t>(v);
  };
  for (const auto& kv : parse_key_values(text)) {
    try {
      if (kv.key == "n_ids") spec.n_ids = count(kv);
      else if (kv.key == "images_per_id") spec.images_per_id = count(kv);
      else if (kv.key == "n_cameras") spec.n_cameras = count(kv);
      else if (kv.key == "dimension") spec.dimension = count(kv);
      else if (kv.key == "streams") spec.streams = parse_stream_list(kv.value);
      else if (kv.key == "identity_scale") spec.identity_scale = parse_real(kv.value);
      else if (kv.key == "sigma_traj") spec.sigma_traj = parse_real(kv.value);
      else if (kv.key == "sigma_obs") spec.sigma_obs = parse_real(kv.value);
      else if (kv.key == "corruption") spec.corruption = parse_real(kv.value);
      else if (kv.key == "seed") spec.seed = static_cast<std::uint64_t>(count(kv));
      else throw Error(ErrorCode::InvalidConfig, fmt::format("unknown key '{}'", kv.key));
    } catch (const Error& e) {
      if (e.code() == ErrorCode::InvalidConfig) throw;
      throw Error(ErrorCode::InvalidConfig, fmt::format("line {}: {}", kv.line, e.what()));
    }
  }
  spec.validate();
  return spec;
}

std::string to_text(const SynthSpec& spec) {
  std::string out;
  out += fmt::format("n_ids = {}\n", spec.n_ids);
  out += fmt::format("images_per_id = {}\n", spec.images_per_id);
  out += fmt::format("n_cameras = {}\n", spec.n_cameras);
  out += fmt::format("dimension = {}\n", spec.dimension);
  out += fmt::format("streams = {}\n", join_streams(spec.stream_list()));
  out += fmt::format("identity_scale = {}\n", format_real(spec.identity_scale));
  out += fmt::format("sigma_traj = {}\n", format_real(spec.sigma_traj));
  out += fmt::format("sigma_obs = {}\n", format_real(spec.sigma_obs));
  out += fmt::format("corruption = {}\n", format_real(spec.corruption));
  out += fmt::format("seed = {}\n", spec.seed);
  return out;
}

namespace {

constexpr int kStride = 5;

using Vec = std::vector<double>;

Vec gaussian(std::mt19937_64& rng, std::size_t d, double sd) {
  std::normal_distribution<double> normal(0.0, 1.0);
  Vec v(d);
  for (auto& x : v) x = sd * normal(rng);
  return v;
}

Vec random_direction(std::mt19937_64& rng, std::size_t d, double length) {
  for (;;) {
    Vec v = gaussian(rng, d, 1.0);
    const double n = std::sqrt(std::inner_product(v.begin(), v.end(), v.begin(), 0.0));
    if (n == 0.0) continue;
    for (auto& x : v) x *= length / n;
    return v;
  }
}

/// A side-on fish facing +x, shifted a little along x with the frame.
Detection synth_detection(const SampleId& id) {
  const double x0 = 100.0 + static_cast<double>(id.frame % 40);
  const double y0 = 100.0;
  Detection d;
  d.id = id;
  d.fish_bbox = {x0, y0, 800.0, 300.0};
  d.parts["head"] = {{x0 + 680.0, y0 + 80.0, 120.0, 140.0}, false};
  d.parts["dorsal_fin"] = {{x0 + 320.0, y0, 160.0, 60.0}, false};
  d.parts["tail_fin"] = {{x0, y0 + 60.0, 110.0, 180.0}, false};
  d.q1_mask = Polygon{{x0 + 120.0, y0 + 40.0}, {x0 + 660.0, y0 + 40.0}, {x0 + 700.0, y0 + 150.0}, {x0 + 100.0, y0 + 150.0}};
  d.q2_mask =
      Polygon{{x0 + 100.0, y0 + 150.0}, {x0 + 700.0, y0 + 150.0}, {x0 + 660.0, y0 + 260.0}, {x0 + 120.0, y0 + 260.0}};
  d.image_path = fmt::format("cam{}/{}/{}.png", id.camera, id.trajectory, id.frame);
  return d;
}

}  // namespace

SynthDataset generate(const SynthSpec& spec) {
  spec.validate();
  const auto streams = spec.stream_list();
  const std::size_t d = spec.dimension;
  const double noise_sd = spec.sigma_obs / std::sqrt(static_cast<double>(d));

  SynthDataset out;
  std::vector<std::pair<std::string, std::size_t>> decl;
  for (const auto& s : streams) decl.emplace_back(s.name(), d);
  out.config.registry = validate_registry(decl);
  out.config.fusion.streams = streams;
  out.config.filter.frame_stride = kStride;
  out.config.filter.min_traj_length = static_cast<int>(std::min<std::size_t>(20, spec.images_per_id * kStride));
  constexpr std::uint32_t kFrames = 1'000'000;
  for (std::uint32_t c = 1; c <= spec.n_cameras; ++c)
    out.config.splits.push_back({c == 1 ? "val" : "test", c, {0, kFrames}});

  // Trajectory ids are shuffled per camera so they carry no identity information.
  std::vector<std::vector<std::uint32_t>> traj_of(spec.n_cameras);
  for (std::size_t c = 0; c < spec.n_cameras; ++c) {
    traj_of[c].resize(spec.n_ids);
    std::iota(traj_of[c].begin(), traj_of[c].end(), 1u);
    std::mt19937_64 rng(derive_seed(spec.seed, (std::uint64_t{1} << 40) + c));
    std::shuffle(traj_of[c].begin(), traj_of[c].end(), rng);
  }

  const std::uint32_t length = static_cast<std::uint32_t>(spec.images_per_id) * kStride;
  for (std::size_t identity = 0; identity < spec.n_ids; ++identity) {
    std::mt19937_64 rng(derive_seed(spec.seed, identity));
    std::bernoulli_distribution corrupt(spec.corruption);
    std::vector<Vec> signal;
    for (std::size_t s = 0; s < streams.size(); ++s) signal.push_back(random_direction(rng, d, spec.identity_scale));

    for (std::uint32_t c = 0; c < spec.n_cameras; ++c) {
      const SampleId first{c + 1, traj_of[c][identity], static_cast<std::uint32_t>(identity % 50) * 10};
      std::vector<Vec> bias;
      for (std::size_t s = 0; s < streams.size(); ++s) bias.push_back(random_direction(rng, d, spec.sigma_traj));

      Track track{trajectory_of(first), {}};
      for (std::uint32_t f = 0; f < length; ++f) {
        SampleId id = first;
        id.frame += f;
        track.detections.push_back(synth_detection(id));
        if (f % kStride != 0) continue;
        for (std::size_t s = 0; s < streams.size(); ++s) {
          const Vec identity_term = corrupt(rng) ? random_direction(rng, d, spec.identity_scale) : signal[s];
          const Vec noise = gaussian(rng, d, noise_sd);
          std::vector<float> v(d);
          for (std::size_t i = 0; i < d; ++i) v[i] = static_cast<float>(identity_term[i] + bias[s][i] + noise[i]);
          // All-zero sums only arise with every scale at zero; any fixed direction will do.
          if (std::all_of(v.begin(), v.end(), [](float x) { return x == 0.0f; })) v[0] = 1.0f;
          out.embeddings.insert(streams[s], id, std::move(v));
        }
      }
      out.tracks.push_back(std::move(track));
    }
    for (std::uint32_t c = 1; c < spec.n_cameras; ++c)
      out.matches.push_back({{1, traj_of[0][identity]}, {c + 1, traj_of[c][identity]}, MatchStatus::Confirmed,
                             "synth", "1970-01-01T00:00:00Z"});
  }
  std::sort(out.tracks.begin(), out.tracks.end(), [](const Track& a, const Track& b) { return a.key < b.key; });
  std::sort(out.matches.begin(), out.matches.end(), [](const VerifiedMatch& a, const VerifiedMatch& b) {
    return std::tie(a.query, a.gallery) < std::tie(b.query, b.gallery);
  });
  return out;
}

Dataset to_dataset(const SynthDataset& synth) { return ingest_dataset(synth.tracks, synth.embeddings, synth.config); }

void write_synth_inputs(const SynthDataset& synth, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  std::string detections = "# camera\ttraj\tframe\tfish_bbox\tparts\tmasks\timage\n";
  for (const auto& track : synth.tracks)
    for (const auto& det : track.detections) detections += format_detection(det) + '\n';
  write_text_file(dir / "detections.tsv", detections);
  write_text_file(dir / "engine.cfg", to_text(synth.config));
  write_text_file(dir / "matches.tsv", format_matches(synth.matches));
  write_embedding_dir(dir / "embeddings", synth.embeddings, synth.config.registry);
}

double BiasLadderRow::best_single() const {
  double best = 0.0;
  for (const auto& [s, m] : single) best = std::max(best, m);
  return best;
}

std::vector<BiasLadderRow> bias_ladder(const SynthSpec& base, const std::vector<double>& sigmas,
                                       const FusionParams& params, const RetrievalPlan& plan) {
  std::vector<BiasLadderRow> rows;
  for (double sigma : sigmas) {
    SynthSpec spec = base;
    spec.sigma_traj = sigma;
    const auto synth = generate(spec);
    const auto dataset = to_dataset(synth);
    RetrievalPlan p = plan;
    p.streams = spec.stream_list();
    const auto inputs = prepare_retrieval(dataset, p);
    const auto evaluate = map_evaluator(EvalMode::Test, synth.matches);

    BiasLadderRow row;
    row.sigma_traj = sigma;
    FusionParams fp = params;
    for (const auto& s : p.streams) {
      fp.streams = {s};
      row.single.emplace_back(s, evaluate(fuse(inputs, fp)));
    }
    fp.streams = p.streams;
    row.ensemble = evaluate(fuse(inputs, fp));
    rows.push_back(std::move(row));
  }
  return rows;
}

std::string format_bias_ladder(const std::vector<BiasLadderRow>& rows) {
  std::string out = "sigma_traj";
  if (!rows.empty())
    for (const auto& [s, m] : rows.front().single) out += '\t' + s.name();
  out += "\tensemble\n";
  for (const auto& row : rows) {
    out += format_real(row.sigma_traj);
    for (const auto& [s, m] : row.single) out += fmt::format("\t{:.3f}", m);
    out += fmt::format("\t{:.3f}\n", row.ensemble);
  }
  return out;
}

}  // namespace reidfuse
