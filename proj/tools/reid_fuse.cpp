// reid-fuse: command-line entry point for ingest, retrieval, evaluation,
// statistics, the synthetic benchmark and the verification service.

#include <fmt/format.h>
#include <fmt/ranges.h>

#include <algorithm>
#include <cstdio>
#include <filesystem>
#include <iostream>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "reidfuse/config.hpp"
#include "reidfuse/dataset.hpp"
#include "reidfuse/error.hpp"
#include "reidfuse/eval.hpp"
#include "reidfuse/fusion.hpp"
#include "reidfuse/geometry.hpp"
#include "reidfuse/pipeline.hpp"
#include "reidfuse/service.hpp"
#include "reidfuse/stats.hpp"
#include "reidfuse/synth.hpp"

namespace fs = std::filesystem;
using namespace reidfuse;

namespace {

struct Common {
  std::uint64_t seed = 7;
  unsigned threads = 1;
  std::string config;
  bool json = false;
};

void add_common(CLI::App* cmd, Common& c) {
  cmd->add_option("--seed", c.seed, "Master seed for every random draw");
  cmd->add_option("--threads", c.threads, "Worker thread cap")->check(CLI::PositiveNumber);
  cmd->add_option("--config", c.config, "Engine configuration file");
  cmd->add_flag("--json", c.json, "Also write a JSON variant of the report");
}

/// Writes `text` to `out`, or to stdout when `out` is empty.
void emit(const std::string& out, const std::string& text) {
  if (out.empty()) {
    std::fwrite(text.data(), 1, text.size(), stdout);
  } else {
    write_text_file(out, text);
  }
}

void emit_json(const Common& c, const std::string& out, const nlohmann::json& j) {
  if (!c.json) return;
  const std::string text = j.dump(2) + "\n";
  if (out.empty()) {
    std::fwrite(text.data(), 1, text.size(), stdout);
  } else {
    write_text_file(out + ".json", text);
  }
}

/// Dataset with the engine config optionally replaced by --config.
Dataset open_dataset(const std::string& dir, const Common& c) {
  Dataset d = load_dataset(dir);
  if (!c.config.empty()) {
    auto cfg = read_engine_config(c.config);
    if (!(cfg.registry == d.config.registry))
      throw Error(ErrorCode::InvalidConfig, "--config declares different streams than the dataset");
    d.config = std::move(cfg);
  }
  return d;
}

/// Resolves a patch name to a stream of `streams`: exact match first, then a
/// unique prefix such as q2 for q2_sliced.
StreamId resolve_stream(const std::string& name, const std::vector<StreamId>& streams) {
  for (const auto& s : streams)
    if (s.name() == name) return s;
  std::vector<StreamId> hits;
  for (const auto& s : streams)
    if (s.name().rfind(name, 0) == 0) hits.push_back(s);
  if (hits.size() == 1) return hits.front();
  throw Error(ErrorCode::UnknownStream,
              fmt::format("'{}' does not name {} stream of {}", name, hits.empty() ? "a" : "exactly one", join_streams(streams)));
}

struct PlanFlags {
  std::string query_split = "val";
  std::string gallery_split = "test";
  std::string streams;
  std::size_t per_id = 5;
  bool full_gallery = false;
  std::optional<double> lambda;
  std::optional<double> tau;
  std::optional<int> k;

  void add(CLI::App* cmd, bool with_query = true) {
    if (with_query) cmd->add_option("--query-split", query_split, "Split providing queries");
    cmd->add_option("--gallery-split", gallery_split, "Split providing the gallery");
    cmd->add_option("--streams", streams, "Comma-separated stream list (default: config fusion streams)");
    cmd->add_option("--per-id", per_id, "Samples drawn per trajectory")->check(CLI::PositiveNumber);
    cmd->add_flag("--full-gallery", full_gallery, "Use the whole gallery split instead of the sampled subset");
  }
  void add_fusion(CLI::App* cmd) {
    cmd->add_option("--lambda", lambda, "Reciprocal-rank weight");
    cmd->add_option("--tau", tau, "Similarity temperature");
    cmd->add_option("--k", k, "Reciprocal-rank offset");
  }
  RetrievalPlan plan(const Common& c) const {
    RetrievalPlan p;
    p.query_split = query_split;
    p.gallery_split = gallery_split;
    if (!streams.empty()) p.streams = parse_stream_list(streams);
    p.per_id = per_id;
    p.seed = c.seed;
    p.full_gallery = full_gallery;
    p.threads = c.threads;
    return p;
  }
  FusionParams params(const Dataset& d, const RetrievalPlan& plan) const {
    FusionParams p = d.config.fusion;
    if (lambda) p.lambda = *lambda;
    if (tau) p.tau = *tau;
    if (k) p.k = *k;
    p.streams = plan_streams(d, plan);
    p.validate();
    return p;
  }
};

std::vector<VerifiedMatch> read_matches(const std::string& file) {
  return file.empty() ? std::vector<VerifiedMatch>{} : parse_matches(read_text_file(file));
}

std::vector<double> parse_real_list(const std::string& text) {
  std::vector<double> out;
  for (auto f : split(text, ',')) out.push_back(parse_real(f));
  return out;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Patch-ensemble re-identification: ingest, retrieval, evaluation and statistics", "reid-fuse"};
  app.require_subcommand(1);
  app.set_version_flag("--version", "reid-fuse 1.0.0");

  Common common;
  std::function<void()> run;

  // ingest
  std::string detections, embeddings_dir, out, dataset_dir;
  auto* ingest = app.add_subcommand("ingest", "Filter tracker output and build a dataset directory");
  add_common(ingest, common);
  ingest->add_option("--detections", detections, "Detections file")->required();
  ingest->add_option("--embeddings", embeddings_dir, "Directory of .rfe embedding files")->required();
  ingest->add_option("--out", out, "Dataset directory to create")->required();
  ingest->callback([&] {
    run = [&] {
      if (common.config.empty()) throw Error(ErrorCode::InvalidConfig, "ingest needs --config");
      const auto config = read_engine_config(common.config);
      const auto tracks = read_tracks(detections);
      const auto embeddings = load_embedding_dir(embeddings_dir, config.registry);
      IngestSummary summary;
      const auto dataset = ingest_dataset(tracks, embeddings, config, &summary);
      save_dataset(dataset, out);
      const auto text = format_ingest_summary(summary);
      write_text_file(fs::path(out) / "ingest_summary.txt", text);
      emit("", text);
    };
  });

  // slice-geometry
  std::string split_name;
  auto* slice = app.add_subcommand("slice-geometry", "Lateral-line slice layouts for every sample");
  add_common(slice, common);
  slice->add_option("--dataset", dataset_dir, "Dataset directory")->required();
  slice->add_option("--out", out, "Layouts file")->required();
  slice->add_option("--split", split_name, "Restrict to one split");
  slice->callback([&] {
    run = [&] {
      const auto d = open_dataset(dataset_dir, common);
      std::string text = "# sample\tquarter\tposterior\tanterior\tangle\tlength\tslice 1\tslice 2\tslice 3\n";
      std::map<std::string, std::size_t> skipped;
      std::size_t written = 0;
      for (const auto& rec : d.samples) {
        if (!split_name.empty() && rec.split != split_name) continue;
        const auto& det = rec.detection;
        const auto head = det.parts.find("head");
        const auto tail = det.parts.find("tail_fin");
        if (head == det.parts.end() || tail == det.parts.end() || !det.q1_mask || !det.q2_mask) {
          ++skipped["MissingPart"];
          continue;
        }
        try {
          const auto layouts = compute_quarter_layouts(head->second.bbox, tail->second.bbox, *det.q1_mask, *det.q2_mask,
                                                       d.config.geometry);
          const auto id = to_string(det.id);
          text += format_layout_record(id, layouts.q1, layouts.duplicate_corner, det.image_path) + '\n';
          text += format_layout_record(id, layouts.q2, layouts.duplicate_corner, det.image_path) + '\n';
          written += 2;
        } catch (const Error& e) {
          ++skipped[std::string(to_string(e.code()))];
        }
      }
      write_text_file(out, text);
      fmt::print("layouts\t{}\n", written);
      for (const auto& [code, n] : skipped) fmt::print("skipped.{}\t{}\n", code, n);
    };
  });

  // gallery build
  PlanFlags plan_flags;
  auto* gallery = app.add_subcommand("gallery", "Per-stream gallery indexes");
  gallery->require_subcommand(1);
  auto* build = gallery->add_subcommand("build", "Build and store the gallery indexes of one split");
  add_common(build, common);
  build->add_option("--dataset", dataset_dir, "Dataset directory")->required();
  build->add_option("--split", plan_flags.gallery_split, "Split to index");
  build->add_option("--streams", plan_flags.streams, "Comma-separated stream list (default: config fusion streams)");
  build->add_option("--per-id", plan_flags.per_id, "Samples drawn per trajectory")->check(CLI::PositiveNumber);
  build->add_flag("--full-gallery", plan_flags.full_gallery, "Index the whole split instead of the sampled subset");
  build->callback([&] {
    run = [&] {
      const auto d = open_dataset(dataset_dir, common);
      const auto plan = plan_flags.plan(common);
      const auto galleries = build_galleries(d, plan);
      save_galleries(dataset_dir, plan.gallery_split, galleries);
      for (const auto& g : galleries) fmt::print("{}\t{}\t{}\n", g.stream.name(), g.size(), g.dimension);
    };
  });

  // retrieve
  std::size_t topk = 10;
  std::string label;
  auto* retrieve = app.add_subcommand("retrieve", "Fuse per-stream similarities of queries against a built gallery");
  add_common(retrieve, common);
  retrieve->add_option("--dataset", dataset_dir, "Dataset directory")->required();
  retrieve->add_option("--out", out, "Scores file")->required();
  retrieve->add_option("--topk", topk, "Ranked candidates listed per query (0: none)");
  retrieve->add_option("--label", label, "Model label carried into reports");
  plan_flags.add(retrieve);
  plan_flags.add_fusion(retrieve);
  retrieve->callback([&] {
    run = [&] {
      const auto d = open_dataset(dataset_dir, common);
      const auto plan = plan_flags.plan(common);
      const auto params = plan_flags.params(d, plan);
      const auto galleries = load_galleries(dataset_dir, plan.gallery_split, params.streams);
      auto scores = fuse(prepare_retrieval(d, galleries, plan), params);
      scores.label = label;
      write_text_file(out, to_text(scores, topk));
    };
  });

  // evaluate
  std::string mode = "val", scores_file, matches_file;
  auto* evaluate = app.add_subcommand("evaluate", "Per-query AP and mAP of a scores file");
  add_common(evaluate, common);
  evaluate->add_option("--mode", mode, "val or test")->check(CLI::IsMember({"val", "test"}));
  evaluate->add_option("--scores", scores_file, "Scores file from retrieve")->required();
  evaluate->add_option("--matches", matches_file, "Verified matches (test mode)");
  evaluate->add_option("--out", out, "Report file (default: stdout)");
  evaluate->callback([&] {
    run = [&] {
      const auto scores = parse_scores(read_text_file(scores_file));
      const auto m = parse_eval_mode(mode);
      if (m == EvalMode::Test && matches_file.empty()) throw Error(ErrorCode::NoVerifiedMatches, "test mode needs --matches");
      const auto report = evaluate_scores(scores, m, read_matches(matches_file));
      emit(out, to_text(report));
      emit_json(common, out, to_json(report));
    };
  });

  // bootstrap
  std::vector<std::string> reports;
  std::size_t resamples = 50'000;
  std::size_t comparisons = 0;
  bool trajectory_level_flag = false;
  auto* boot = app.add_subcommand("bootstrap", "Confidence intervals and paired significance tests");
  add_common(boot, common);
  boot->add_option("--reports", reports, "Report files")->required();
  boot->add_option("--B", resamples, "Bootstrap resamples")->check(CLI::PositiveNumber);
  boot->add_option("--comparisons", comparisons, "Comparisons for the Bonferroni threshold (default: model pairs)");
  boot->add_flag("--trajectory-level", trajectory_level_flag, "Resample query trajectories instead of query images");
  boot->add_option("--out", out, "Statistics report (default: stdout)");
  boot->callback([&] {
    run = [&] {
      std::vector<ApSeries> series;
      for (const auto& file : reports) {
        auto s = parse_report(read_text_file(file)).series();
        series.push_back(trajectory_level_flag ? trajectory_level(s) : std::move(s));
      }
      BootstrapParams bp;
      bp.resamples = resamples;
      bp.seed = common.seed;
      bp.threads = common.threads;
      bp.n_comparisons = comparisons ? comparisons : std::max<std::size_t>(1, comparison_count(series.size(), 1));
      bp.validate();
      const double threshold = bonferroni_threshold(bp.alpha, bp.n_comparisons);

      std::string text = "# reid-fuse bootstrap v1\n";
      text += fmt::format("resamples\t{}\nseed\t{}\nunit\t{}\ncomparisons\t{}\nthreshold\t{}\n", bp.resamples, bp.seed,
                          trajectory_level_flag ? "trajectory" : "query", bp.n_comparisons, format_real(threshold));
      nlohmann::json j{{"resamples", bp.resamples}, {"seed", bp.seed}, {"threshold", threshold}};
      for (const auto& s : series) {
        const auto ci = bootstrap_ci(s.aps, bp);
        text += fmt::format("ci\t{}\t{}\t{}\t{}\n", s.label, format_real(ci.mean), format_real(ci.lo), format_real(ci.hi));
        j["ci"].push_back({{"label", s.label}, {"mean", ci.mean}, {"lo", ci.lo}, {"hi", ci.hi}});
      }
      if (series.size() > 1) {
        const auto results = pairwise_matrix(series, bp);
        for (const auto& r : results) {
          text += fmt::format("pair\t{}\t{}\t{}\t{}\t{}\n", r.model_a, r.model_b, format_real(r.delta),
                              format_real(r.p_value), r.significant ? "significant" : "ns");
          j["pairs"].push_back({{"a", r.model_a}, {"b", r.model_b}, {"delta", r.delta}, {"p", r.p_value},
                                {"significant", r.significant}});
        }
        text += "# matrix\n" + format_pairwise_matrix(series, results, threshold);
      }
      emit(out, text);
      emit_json(common, out, j);
    };
  });

  // sweep
  std::string parameter = "all", lambdas, taus, ks;
  auto* sweep_cmd = app.add_subcommand("sweep", "One-at-a-time sweeps over lambda, tau and k");
  add_common(sweep_cmd, common);
  sweep_cmd->add_option("--dataset", dataset_dir, "Dataset directory")->required();
  sweep_cmd->add_option("--mode", mode, "val or test")->check(CLI::IsMember({"val", "test"}));
  sweep_cmd->add_option("--matches", matches_file, "Verified matches (test mode)");
  sweep_cmd->add_option("--param", parameter, "lambda, tau, k or all")->check(CLI::IsMember({"lambda", "tau", "k", "all"}));
  sweep_cmd->add_option("--lambdas", lambdas, "Comma-separated lambda grid");
  sweep_cmd->add_option("--taus", taus, "Comma-separated tau grid");
  sweep_cmd->add_option("--ks", ks, "Comma-separated k grid");
  sweep_cmd->add_option("--out", out, "Tables file (default: stdout)");
  plan_flags.add(sweep_cmd);
  plan_flags.add_fusion(sweep_cmd);

  // holdout
  std::vector<std::string> drops;
  auto* holdout_cmd = app.add_subcommand("holdout", "Leave-one-stream-out ablation table");
  add_common(holdout_cmd, common);
  holdout_cmd->add_option("--dataset", dataset_dir, "Dataset directory")->required();
  holdout_cmd->add_option("--mode", mode, "val or test")->check(CLI::IsMember({"val", "test"}));
  holdout_cmd->add_option("--matches", matches_file, "Verified matches (test mode)");
  holdout_cmd->add_option("--drop", drops, "Patch of interest; the table always lists every holdout")->delimiter(',');
  holdout_cmd->add_option("--out", out, "Table file (default: stdout)");
  plan_flags.add(holdout_cmd);
  plan_flags.add_fusion(holdout_cmd);

  const auto ablation_setup = [&] {
    const auto plan = plan_flags.plan(common);
    if (mode == "val") {
      // Validation retrieval is within one split.
      auto p = plan;
      p.gallery_split = plan.query_split;
      return p;
    }
    return plan;
  };

  sweep_cmd->callback([&] {
    run = [&] {
      const auto d = open_dataset(dataset_dir, common);
      const auto plan = ablation_setup();
      const auto params = plan_flags.params(d, plan);
      const auto m = parse_eval_mode(mode);
      const auto matches = read_matches(matches_file);
      if (m == EvalMode::Test && matches.empty()) throw Error(ErrorCode::NoVerifiedMatches, "test mode needs --matches");
      const auto inputs = prepare_retrieval(d, plan);
      SweepGrid grid = SweepGrid::published();
      if (!lambdas.empty()) grid.lambdas = parse_real_list(lambdas);
      if (!taus.empty()) grid.taus = parse_real_list(taus);
      if (!ks.empty()) {
        grid.ks.clear();
        for (auto f : split(ks, ',')) grid.ks.push_back(static_cast<int>(parse_integer(f)));
      }
      if (parameter != "all" && parameter != "lambda") grid.lambdas.clear();
      if (parameter != "all" && parameter != "tau") grid.taus.clear();
      if (parameter != "all" && parameter != "k") grid.ks.clear();
      const auto tables = sweep(inputs, params, grid, map_evaluator(m, matches));
      std::string text;
      nlohmann::json j;
      const auto add = [&](const char* name, const std::vector<AblationRow>& rows, double base) {
        if (rows.empty()) return;
        if (!text.empty()) text += '\n';
        text += format_ablation_table(name, rows, false, base);
        for (const auto& r : rows) j[name].push_back({{"value", r.value}, {"map", r.map}});
      };
      add("lambda", tables.lambda, params.lambda);
      add("tau", tables.tau, params.tau);
      add("k", tables.k, params.k);
      emit(out, text);
      emit_json(common, out, j);
    };
  });

  holdout_cmd->callback([&] {
    run = [&] {
      const auto d = open_dataset(dataset_dir, common);
      const auto plan = ablation_setup();
      const auto params = plan_flags.params(d, plan);
      const auto m = parse_eval_mode(mode);
      const auto matches = read_matches(matches_file);
      if (m == EvalMode::Test && matches.empty()) throw Error(ErrorCode::NoVerifiedMatches, "test mode needs --matches");
      std::vector<std::string> focus;
      for (const auto& name : drops) focus.push_back(resolve_stream(name, params.streams).name());
      const auto rows = holdout_table(prepare_retrieval(d, plan), params, params.streams, map_evaluator(m, matches));
      std::string text;
      if (!focus.empty()) text += "# focus\t" + fmt::format("{}", fmt::join(focus, ",")) + "\n";
      text += format_ablation_table("holdout", rows, true);
      nlohmann::json j = nlohmann::json::array();
      for (const auto& r : rows) j.push_back({{"holdout", r.label}, {"map", r.map}});
      emit(out, text);
      emit_json(common, out, j);
    };
  });

  // synth
  std::string spec_file, ladder;
  std::optional<std::uint64_t> synth_seed;
  auto* synth_cmd = app.add_subcommand("synth", "Generate a synthetic benchmark in the ingest input formats");
  add_common(synth_cmd, common);
  synth_cmd->add_option("--spec", spec_file, "Synthetic benchmark spec file")->required();
  synth_cmd->add_option("--out", out, "Output directory")->required();
  synth_cmd->add_option("--spec-seed", synth_seed, "Override the spec's generator seed");
  synth_cmd->add_option("--bias-ladder", ladder, "Comma-separated sigma_traj grid; writes bias_ladder.txt");
  synth_cmd->callback([&] {
    run = [&] {
      auto spec = parse_synth_spec(read_text_file(spec_file));
      if (synth_seed) spec.seed = *synth_seed;
      const auto synth = generate(spec);
      write_synth_inputs(synth, out);
      write_text_file(fs::path(out) / "synth.spec", to_text(spec));
      fmt::print("tracks\t{}\nembeddings\t{}\nmatches\t{}\n", synth.tracks.size(), synth.embeddings.size(),
                 synth.matches.size());
      if (!ladder.empty()) {
        RetrievalPlan plan;
        plan.seed = common.seed;
        plan.threads = common.threads;
        const auto rows = bias_ladder(spec, parse_real_list(ladder), synth.config.fusion, plan);
        write_text_file(fs::path(out) / "bias_ladder.txt", format_bias_ladder(rows));
      }
    };
  });

  // compare
  auto* compare = app.add_subcommand("compare", "Table of mAP with confidence intervals per configuration");
  add_common(compare, common);
  compare->add_option("--reports", reports, "Report files; val and test reports pair up by label")->required();
  compare->add_option("--B", resamples, "Bootstrap resamples")->check(CLI::PositiveNumber);
  compare->add_option("--out", out, "Table file (default: stdout)");
  compare->callback([&] {
    run = [&] {
      std::vector<ModelReports> models;
      for (const auto& file : reports) {
        auto report = parse_report(read_text_file(file));
        auto it = std::find_if(models.begin(), models.end(), [&](const ModelReports& m) { return m.label == report.label; });
        if (it == models.end()) it = models.insert(models.end(), ModelReports{report.label, std::nullopt, std::nullopt});
        auto& slot = report.mode == EvalMode::Validation ? it->validation : it->test;
        if (slot) throw Error(ErrorCode::InvalidArgument, fmt::format("two {} reports for '{}'", to_string(report.mode), report.label));
        slot = std::move(report);
      }
      BootstrapParams bp;
      bp.resamples = resamples;
      bp.seed = common.seed;
      bp.threads = common.threads;
      const auto rows = model_compare(models, bp);
      emit(out, format_compare_table(rows));
      nlohmann::json j = nlohmann::json::array();
      for (const auto& r : rows) {
        nlohmann::json row{{"label", r.label}};
        if (r.validation) row["val"] = {{"mean", r.validation->mean}, {"lo", r.validation->lo}, {"hi", r.validation->hi}};
        if (r.test) row["test"] = {{"mean", r.test->mean}, {"lo", r.test->lo}, {"hi", r.test->hi}};
        j.push_back(row);
      }
      emit_json(common, out, j);
    };
  });

  // serve
  int port = 8080;
  std::string host = "127.0.0.1", images_dir;
  std::vector<std::string> model_specs;
  auto* serve_cmd = app.add_subcommand("serve", "HTTP service for retrieval and match verification");
  add_common(serve_cmd, common);
  serve_cmd->add_option("--dataset", dataset_dir, "Dataset directory")->required();
  serve_cmd->add_option("--port", port, "TCP port")->check(CLI::Range(1, 65535));
  serve_cmd->add_option("--host", host, "Bind address");
  serve_cmd->add_option("--images", images_dir, "Root directory of referenced images");
  serve_cmd->add_option("--model", model_specs, "name=stream,stream (repeatable; two or more interleave the queue)");
  plan_flags.add(serve_cmd);
  plan_flags.add_fusion(serve_cmd);
  serve_cmd->callback([&] {
    run = [&] {
      auto d = open_dataset(dataset_dir, common);
      ServiceOptions options;
      options.plan = plan_flags.plan(common);
      options.params = plan_flags.params(d, options.plan);
      for (const auto& m : model_specs) options.models.push_back(parse_model_spec(m));
      options.images_dir = images_dir;
      VerificationService service(std::move(d), dataset_dir, options);
      fmt::print(stderr, "serving {} on http://{}:{}\n", dataset_dir, host, port);
      serve(service, host, port);
    };
  });

  try {
    app.parse(argc, argv);
  } catch (const CLI::Success& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return 2;
  }

  try {
    run();
  } catch (const Error& e) {
    fmt::print(stderr, "error: {}\n", e.what());
    return 1;
  } catch (const std::exception& e) {
    fmt::print(stderr, "error: Internal: {}\n", e.what());
    return 1;
  }
  return 0;
}
