/* Copyright 2026 The mhforge Authors. All Rights Reserved.

Licensed under the Apache License, Version 2.0 (the "License");
you may not use this file except in compliance with the License.
You may obtain a copy of the License at

    http://www.apache.org/licenses/LICENSE-2.0

Unless required by applicable law or agreed to in writing, software
distributed under the License is distributed on an "AS IS" BASIS,
WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
See the License for the specific language governing permissions and
limitations under the License.
==============================================================================*/
#pragma once

// Command-line surface: gen-data, build, train, eval, analyze, bench,
// compare. run_cli() is the whole program; tools/mhforge.cpp only forwards
// argv to it.

#include <chrono>
#include <cstdlib>
#include <ctime>
#include <filesystem>
#include <iostream>
#include <map>
#include <ostream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "json.hpp"
#include "mhforge/analysis.hpp"
#include "mhforge/bench.hpp"
#include "mhforge/dataset.hpp"
#include "mhforge/model_io.hpp"
#include "mhforge/netspec.hpp"
#include "mhforge/surgery.hpp"
#include "mhforge/training.hpp"

namespace mhforge {

inline constexpr std::string_view kToolVersion = "0.1.0";

namespace fs = std::filesystem;

// Worker cap for image decoding and the optional parallel bench mode.
inline std::size_t env_threads() {
  if (const char* v = std::getenv("MHFORGE_THREADS")) {
    const auto n = detail::parse_size(v);
    if (n && *n >= 1) return *n;
  }
  return 1;
}

struct RunManifest {
  std::string command;
  nlohmann::ordered_json config = nlohmann::ordered_json::object();
  std::uint64_t seed = 0;
  std::vector<std::string> artifacts;
  std::string tool_version{kToolVersion};
  std::string timestamp;
};

inline std::string utc_timestamp() {
  const std::time_t t = std::time(nullptr);
  std::tm tm{};
  gmtime_r(&t, &tm);
  char buf[32];
  std::strftime(buf, sizeof(buf), "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

inline void write_run_manifest(const fs::path& dir, const std::string& file,
                               RunManifest m) {
  m.timestamp = utc_timestamp();
  nlohmann::ordered_json j;
  j["command"] = m.command;
  j["config"] = m.config;
  j["seed"] = m.seed;
  j["artifacts"] = m.artifacts;
  j["tool_version"] = m.tool_version;
  j["timestamp"] = m.timestamp;
  detail::write_file(dir / file, j.dump(2) + "\n");
}

namespace detail {

inline void ensure_dir(const fs::path& dir) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec || !fs::is_directory(dir)) {
    throw IoError(concat("cannot create output directory '", dir.string(),
                         "'"));
  }
}

inline std::vector<ManifestEntry> read_manifest(const fs::path& path,
                                                const LabelCategories& cats) {
  try {
    return parse_manifest(read_file(path), cats);
  } catch (const ParseError& e) {
    throw Error(concat(path.string(), ": ", e.what()));
  }
}

inline std::vector<Sample> read_samples(const fs::path& manifest,
                                        const LabelCategories& cats) {
  const auto entries = read_manifest(manifest, cats);
  return load_samples(entries, manifest.parent_path(), env_threads());
}

inline std::string default_feature_layer(const NetworkSpec& spec) {
  if (spec.layers.empty()) throw Error("backbone has no layers");
  return spec.layers.back().name;
}

inline nlohmann::ordered_json breakdown_json(const CostBreakdown& b) {
  nlohmann::ordered_json j;
  j["macc_total"] = b.macc_total;
  j["macc_trained"] = b.macc_trained;
  j["params_total"] = b.params_total;
  j["size_bytes_estimate"] = b.size_bytes_estimate;
  j["coverage"] = b.coverage;
  j["layers"] = nlohmann::ordered_json::array();
  for (const auto& l : b.layers) {
    nlohmann::ordered_json e;
    e["name"] = l.name;
    e["kind"] = std::string(to_string(l.kind));
    e["macc"] = l.macc;
    e["params"] = l.params;
    e["trained"] = l.trained;
    j["layers"].push_back(std::move(e));
  }
  return j;
}

inline std::string breakdown_text(const CostBreakdown& b) {
  std::string out;
  char buf[160];
  std::snprintf(buf, sizeof(buf), "%-20s %-9s %14s %12s %s\n", "layer", "kind",
                "macc", "params", "trained");
  out += buf;
  for (const auto& l : b.layers) {
    std::snprintf(buf, sizeof(buf), "%-20s %-9s %14llu %12llu %s\n",
                  l.name.c_str(), std::string(to_string(l.kind)).c_str(),
                  static_cast<unsigned long long>(l.macc),
                  static_cast<unsigned long long>(l.params),
                  l.trained ? "yes" : "no");
    out += buf;
  }
  std::snprintf(buf, sizeof(buf),
                "macc_total=%llu macc_trained=%llu params_total=%llu "
                "size_bytes=%llu coverage=%llu\n",
                static_cast<unsigned long long>(b.macc_total),
                static_cast<unsigned long long>(b.macc_trained),
                static_cast<unsigned long long>(b.params_total),
                static_cast<unsigned long long>(b.size_bytes_estimate),
                static_cast<unsigned long long>(b.coverage));
  out += buf;
  return out;
}

inline std::vector<fs::path> models_in(const fs::path& dir) {
  std::vector<fs::path> out;
  if (!fs::is_directory(dir)) {
    throw IoError(concat("run directory '", dir.string(), "' not found"));
  }
  for (const auto& e : fs::directory_iterator(dir)) {
    if (e.path().extension() == ".mhf") out.push_back(e.path());
  }
  std::sort(out.begin(), out.end());
  if (out.empty()) {
    throw Error(concat("no .mhf model files in '", dir.string(), "'"));
  }
  return out;
}

inline nlohmann::json read_json(const fs::path& path) {
  try {
    return nlohmann::json::parse(read_file(path));
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(concat(path.string(), ": ", e.what()));
  }
}

}  // namespace detail

struct CliContext {
  std::ostream& out;
  std::ostream& err;
};

inline int cmd_gen_data(const CliContext& ctx, const fs::path& out_dir,
                        const SyntheticConfig& cfg) {
  detail::ensure_dir(out_dir);
  const auto ds = generate_synthetic(cfg, out_dir);
  detail::write_file(out_dir / "manifest.txt", ds.manifest_text);
  detail::write_file(out_dir / "categories.txt",
                     format_categories(ds.categories));
  RunManifest m{"gen-data", {}, cfg.seed, {"manifest.txt", "categories.txt",
                                           "images/"}};
  m.config["image_size"] = cfg.image_size;
  m.config["samples_per_combo"] = cfg.samples_per_combo;
  m.config["noise_std"] = cfg.noise_std;
  m.config["shapes"] = cfg.shapes;
  m.config["positions"] = cfg.positions;
  write_run_manifest(out_dir, "run_gen-data.json", m);
  ctx.out << "wrote " << ds.entries.size() << " images to "
          << out_dir.string() << "\n";
  return 0;
}

struct BuildArgs {
  fs::path netspec;
  fs::path categories;
  VariantKind variant = VariantKind::proposed;
  fs::path manifest;
  std::string feature;
  fs::path out;
  std::uint64_t seed = 1;
};

inline int cmd_build(const CliContext& ctx, const BuildArgs& a) {
  const NetworkSpec backbone = parse_netspec(detail::read_file(a.netspec));
  const LabelCategories cats = parse_categories(detail::read_file(a.categories));
  const std::string feature =
      a.feature.empty() ? detail::default_feature_layer(backbone) : a.feature;
  detail::ensure_dir(a.out);
  RunManifest m{"build", {}, a.seed, {}};
  m.config["netspec"] = a.netspec.string();
  m.config["categories"] = a.categories.string();
  m.config["variant"] = std::string(to_string(a.variant));
  m.config["feature"] = feature;

  switch (a.variant) {
    case VariantKind::proposed: {
      const auto spec = attach_heads(backbone, cats, feature);
      detail::write_file(a.out / "model.netspec", serialize_netspec(spec));
      m.artifacts.push_back("model.netspec");
      break;
    }
    case VariantKind::two_model: {
      const auto specs = build_two_model(backbone, cats, feature);
      for (std::size_t k = 0; k < specs.size(); ++k) {
        const std::string file = "model_" + cats.names[k] + ".netspec";
        detail::write_file(a.out / file, serialize_netspec(specs[k]));
        m.artifacts.push_back(file);
      }
      break;
    }
    case VariantKind::hard_coded: {
      const auto entries = detail::read_manifest(a.manifest, cats);
      std::vector<std::vector<int>> observed;
      for (const auto& e : entries) observed.push_back(e.labels);
      const auto hc = build_hard_coded(backbone, cats, observed, feature);
      detail::write_file(a.out / "model.netspec", serialize_netspec(hc.spec));
      detail::write_file(a.out / "hc_map.txt", format_hc_map(hc.map));
      auto converted = convert_manifest_hc(entries, hc.map);
      const fs::path base = fs::absolute(a.manifest).parent_path();
      for (auto& e : converted) {
        if (!fs::path(e.image_path).is_absolute()) {
          e.image_path = (base / e.image_path).string();
        }
      }
      detail::write_file(a.out / "hc_manifest.txt", format_manifest(converted));
      m.config["manifest"] = a.manifest.string();
      m.artifacts.insert(m.artifacts.end(),
                         {"model.netspec", "hc_map.txt", "hc_manifest.txt"});
      ctx.out << "hard-coded classes: " << hc.map.size() << " of "
              << class_coverage(cats) << " combinations\n";
      break;
    }
  }
  write_run_manifest(a.out, "run_build.json", m);
  for (const auto& f : m.artifacts) ctx.out << "wrote " << (a.out / f).string() << "\n";
  return 0;
}

struct TrainArgs {
  fs::path netspec;
  fs::path categories;
  fs::path manifest;
  fs::path hc_map;
  fs::path out;
  TrainConfig config;
};

inline int cmd_train(const CliContext& ctx, const TrainArgs& a) {
  NetworkSpec spec = parse_netspec(detail::read_file(a.netspec));
  LabelMaps maps{parse_categories(detail::read_file(a.categories)), {}};
  const auto slots = spec.label_slots();
  if (std::find(slots.begin(), slots.end(), kHcSlot) != slots.end()) {
    if (a.hc_map.empty()) {
      throw Error("network has a hard-coded head; pass --hc-map");
    }
    maps.hc = parse_hc_map(detail::read_file(a.hc_map));
  }
  const auto samples = detail::read_samples(a.manifest, maps.categories);
  ModelBundle bundle = initialize_bundle(std::move(spec), maps, a.config.seed);
  TrainResult r = train(std::move(bundle), samples, a.config);

  detail::ensure_dir(a.out);
  const std::string stem = a.netspec.stem().string();
  const std::size_t bytes = save_model(r.bundle, a.out / (stem + ".mhf"));
  detail::write_file(a.out / (stem + ".train_log.csv"),
                     format_train_log_csv(r.log));

  RunManifest m{"train", {}, a.config.seed,
                {stem + ".mhf", stem + ".train_log.csv"}};
  m.config["netspec"] = a.netspec.string();
  m.config["categories"] = a.categories.string();
  m.config["manifest"] = a.manifest.string();
  if (!a.hc_map.empty()) m.config["hc_map"] = a.hc_map.string();
  m.config["epochs"] = a.config.epochs;
  m.config["batch"] = a.config.batch_size;
  m.config["lr"] = a.config.learning_rate;
  m.config["momentum"] = a.config.momentum;
  m.config["split"] = a.config.split_fraction;
  write_run_manifest(a.out, "run_train_" + stem + ".json", m);

  ctx.out << "saved " << (a.out / (stem + ".mhf")).string() << " (" << bytes
          << " bytes)\n";
  if (!r.log.epochs.empty()) {
    const auto& last = r.log.epochs.back();
    for (std::size_t s = 0; s < r.log.slots.size(); ++s) {
      ctx.out << "  " << r.log.slots[s]
              << ": val_loss=" << last.validation[s].loss
              << " val_acc=" << last.validation[s].accuracy << "\n";
    }
  }
  return 0;
}

struct EvalArgs {
  std::vector<fs::path> models;
  fs::path manifest;
  fs::path out;
  std::uint64_t seed = 1;
};

inline nlohmann::ordered_json evaluate_models(const std::vector<fs::path>& models,
                                              const fs::path& manifest) {
  nlohmann::ordered_json j;
  j["models"] = nlohmann::ordered_json::array();
  j["per_slot"] = nlohmann::ordered_json::object();
  j["category_accuracy"] = nlohmann::ordered_json::object();
  std::size_t count = 0;
  for (const auto& path : models) {
    const ModelBundle b = load_model(path);
    const auto samples = detail::read_samples(manifest, b.label_maps.categories);
    const EvalResult r = evaluate(b, samples);
    count = r.samples;
    j["models"].push_back(path.filename().string());
    for (std::size_t s = 0; s < r.slots.size(); ++s) {
      j["per_slot"][r.slots[s]] = {{"loss", r.per_slot[s].loss},
                                   {"accuracy", r.per_slot[s].accuracy}};
    }
    for (const auto& [cat, acc] : r.category_accuracy) {
      j["category_accuracy"][cat] = acc;
    }
  }
  j["samples"] = count;
  return j;
}

inline int cmd_eval(const CliContext& ctx, const EvalArgs& a) {
  const auto j = evaluate_models(a.models, a.manifest);
  detail::ensure_dir(a.out);
  detail::write_file(a.out / "metrics.json", j.dump(2) + "\n");
  RunManifest m{"eval", {}, a.seed, {"metrics.json"}};
  m.config["models"] = nlohmann::ordered_json::array();
  for (const auto& p : a.models) m.config["models"].push_back(p.string());
  m.config["manifest"] = a.manifest.string();
  write_run_manifest(a.out, "run_eval.json", m);
  ctx.out << j.dump(2) << "\n";
  return 0;
}

struct AnalyzeArgs {
  std::vector<fs::path> netspecs;
  fs::path categories;
  fs::path hc_map;
  ReportFormat format = ReportFormat::text;
  fs::path out;
  std::uint64_t seed = 1;
};

inline int cmd_analyze(const CliContext& ctx, const AnalyzeArgs& a) {
  LabelMaps maps;
  if (!a.categories.empty()) {
    maps.categories = parse_categories(detail::read_file(a.categories));
  }
  if (!a.hc_map.empty()) maps.hc = parse_hc_map(detail::read_file(a.hc_map));
  std::vector<CostBreakdown> parts;
  for (const auto& p : a.netspecs) {
    parts.push_back(analyze(parse_netspec(detail::read_file(p)), maps));
  }
  const CostBreakdown b =
      parts.size() == 1 ? parts.front() : combine_independent(parts);
  const std::string text = a.format == ReportFormat::json
                               ? detail::breakdown_json(b).dump(2) + "\n"
                               : detail::breakdown_text(b);
  if (!a.out.empty()) {
    detail::ensure_dir(a.out);
    const std::string file =
        a.format == ReportFormat::json ? "analysis.json" : "analysis.txt";
    detail::write_file(a.out / file, text);
    RunManifest m{"analyze", {}, a.seed, {file}};
    m.config["netspecs"] = nlohmann::ordered_json::array();
    for (const auto& p : a.netspecs) m.config["netspecs"].push_back(p.string());
    write_run_manifest(a.out, "run_analyze.json", m);
  }
  ctx.out << text;
  return 0;
}

struct BenchArgs {
  std::vector<fs::path> models;
  fs::path manifest;
  std::size_t repeats = 5;
  std::size_t images = 100;
  std::string variant;
  fs::path out;
  std::uint64_t seed = 1;
};

inline int cmd_bench(const CliContext& ctx, const BenchArgs& a) {
  std::vector<ModelBundle> bundles;
  for (const auto& p : a.models) bundles.push_back(load_model(p));
  const auto entries = detail::read_manifest(
      a.manifest, bundles.front().label_maps.categories);
  const std::size_t n = std::min(a.images, entries.size());
  const auto samples =
      load_samples(std::span(entries).first(n), a.manifest.parent_path(),
                   env_threads());
  std::vector<Tensor> images;
  for (const auto& s : samples) images.push_back(s.image);
  std::vector<const ModelBundle*> ptrs;
  for (const auto& b : bundles) ptrs.push_back(&b);

  LatencyResult r = measure_latency(ptrs, images, a.repeats, 1);
  r.stats.variant = a.variant;
  detail::ensure_dir(a.out);
  const nlohmann::json j = r.stats;
  detail::write_file(a.out / "latency.json", j.dump(2) + "\n");
  detail::write_file(a.out / "timings.csv", format_run_timings_csv(r.run_seconds));
  RunManifest m{"bench", {}, a.seed, {"latency.json", "timings.csv"}};
  m.config["models"] = nlohmann::ordered_json::array();
  for (const auto& p : a.models) m.config["models"].push_back(p.string());
  m.config["manifest"] = a.manifest.string();
  m.config["repeats"] = a.repeats;
  m.config["images"] = n;
  write_run_manifest(a.out, "run_bench.json", m);
  ctx.out << j.dump(2) << "\n";
  return 0;
}

struct CompareArgs {
  std::map<VariantKind, fs::path> runs;
  fs::path out;
  ReportFormat format = ReportFormat::text;
  std::uint64_t seed = 1;
};

struct LoadedRun {
  CostBreakdown cost;
  VariantMetrics metrics;
  bool has_metrics = false;
  std::vector<std::string> categories;
};

inline LoadedRun load_run(const fs::path& dir) {
  LoadedRun run;
  std::vector<CostBreakdown> parts;
  for (const auto& p : detail::models_in(dir)) {
    const ModelBundle b = load_model(p);
    CostBreakdown c = analyze(b.spec, b.label_maps);
    const auto actual = fs::file_size(p);
    if (c.size_bytes_estimate != actual) {
      throw Error(detail::concat(p.string(), ": size estimate ",
                                 c.size_bytes_estimate, " != file size ",
                                 actual));
    }
    parts.push_back(std::move(c));
    if (run.categories.empty()) run.categories = b.label_maps.categories.names;
  }
  run.cost = parts.size() == 1 ? parts.front() : combine_independent(parts);
  if (fs::exists(dir / "metrics.json")) {
    const auto j = detail::read_json(dir / "metrics.json");
    for (const auto& [cat, acc] : j.at("category_accuracy").items()) {
      run.metrics.accuracy[cat] = acc.get<double>();
    }
    for (const auto& [slot, m] : j.at("per_slot").items()) {
      if (slot == kHcSlot) {
        run.metrics.combined_loss = m.at("loss").get<double>();
      } else {
        run.metrics.loss[slot] = m.at("loss").get<double>();
      }
    }
    run.has_metrics = true;
  }
  if (fs::exists(dir / "latency.json")) {
    run.metrics.latency_seconds =
        detail::read_json(dir / "latency.json").at("total_seconds").get<double>();
    run.has_metrics = true;
  }
  return run;
}

inline int cmd_compare(const CliContext& ctx, const CompareArgs& a) {
  std::map<VariantKind, CostBreakdown> costs;
  std::map<VariantKind, VariantMetrics> metrics;
  std::vector<std::string> categories;
  for (VariantKind v : kAllVariants) {
    const auto it = a.runs.find(v);
    if (it == a.runs.end()) {
      throw Error(detail::concat("missing run directory for variant '",
                                 to_string(v), "'"));
    }
    LoadedRun run = load_run(it->second);
    costs[v] = run.cost;
    if (run.has_metrics) metrics[v] = run.metrics;
    if (v == VariantKind::proposed) categories = run.categories;
  }
  const ComparisonReport report = compare_variants(costs, metrics, categories);
  detail::ensure_dir(a.out);
  emit_report(report, ReportFormat::text, a.out / "report.txt");
  emit_report(report, ReportFormat::json, a.out / "report.json");
  emit_report(report, ReportFormat::csv, a.out / "report.csv");
  RunManifest m{"compare", {}, a.seed,
                {"report.txt", "report.json", "report.csv"}};
  for (const auto& [v, dir] : a.runs) {
    m.config[std::string(to_string(v))] = dir.string();
  }
  write_run_manifest(a.out, "run_compare.json", m);
  ctx.out << render_report(report, a.format);
  return 0;
}

// Parses argv-style arguments (args[0] is the program name) and dispatches.
// Returns the process exit status.
inline int run_cli(const std::vector<std::string>& args, std::ostream& out,
                   std::ostream& err) {
  CLI::App app{"mhforge: multi-head multi-label CNN builder, trainer and "
               "cost/latency comparator"};
  app.require_subcommand(1);
  app.set_version_flag("--version", std::string(kToolVersion));
  const CliContext ctx{out, err};

  auto add_seed = [](CLI::App* sub, std::uint64_t& seed) {
    sub->add_option("--seed", seed, "Random seed")->capture_default_str();
  };

  // gen-data
  fs::path gen_out;
  SyntheticConfig gen_cfg;
  auto* gen = app.add_subcommand("gen-data", "Generate the synthetic glyph/"
                                             "position dataset");
  gen->add_option("--out", gen_out, "Output directory")->required();
  gen->add_option("--image-size", gen_cfg.image_size, "Image side in pixels")
      ->capture_default_str()
      ->check(CLI::Range(8, 4096));
  gen->add_option("--samples", gen_cfg.samples_per_combo,
                  "Images per (shape, position) combination")
      ->capture_default_str()
      ->check(CLI::Range(1, 1000000));
  gen->add_option("--noise", gen_cfg.noise_std, "Gaussian noise std")
      ->capture_default_str()
      ->check(CLI::Range(0.0, 10.0));
  add_seed(gen, gen_cfg.seed);

  // build
  BuildArgs build_args;
  std::string build_variant;
  auto* build = app.add_subcommand("build", "Build a variant netspec from a "
                                            "backbone");
  build->add_option("--netspec", build_args.netspec, "Backbone netspec")
      ->required()
      ->check(CLI::ExistingFile);
  build->add_option("--categories", build_args.categories, "Category file")
      ->required()
      ->check(CLI::ExistingFile);
  build->add_option("--variant", build_variant, "proposed, 2m or hc")
      ->required()
      ->check(CLI::IsMember({"proposed", "2m", "hc"}));
  build->add_option("--manifest", build_args.manifest,
                    "Training manifest (required for hc)")
      ->check(CLI::ExistingFile);
  build->add_option("--feature", build_args.feature,
                    "Feature layer the heads read (default: last layer)");
  build->add_option("--out", build_args.out, "Output directory")->required();
  add_seed(build, build_args.seed);

  // train
  TrainArgs train_args;
  auto* trn = app.add_subcommand("train", "Train one network");
  trn->add_option("--netspec", train_args.netspec, "Variant netspec")
      ->required()
      ->check(CLI::ExistingFile);
  trn->add_option("--categories", train_args.categories, "Category file")
      ->required()
      ->check(CLI::ExistingFile);
  trn->add_option("--manifest", train_args.manifest, "Training manifest")
      ->required()
      ->check(CLI::ExistingFile);
  trn->add_option("--hc-map", train_args.hc_map, "Hard-coded label map")
      ->check(CLI::ExistingFile);
  trn->add_option("--out", train_args.out, "Output directory")->required();
  trn->add_option("--epochs", train_args.config.epochs)->capture_default_str();
  trn->add_option("--batch", train_args.config.batch_size)
      ->capture_default_str()
      ->check(CLI::PositiveNumber);
  trn->add_option("--lr", train_args.config.learning_rate)
      ->capture_default_str()
      ->check(CLI::PositiveNumber);
  trn->add_option("--momentum", train_args.config.momentum)
      ->capture_default_str()
      ->check(CLI::Range(0.0, 0.999999));
  trn->add_option("--split", train_args.config.split_fraction,
                  "Training fraction of the manifest")
      ->capture_default_str()
      ->check(CLI::Range(0.01, 0.99));
  add_seed(trn, train_args.config.seed);

  // eval
  EvalArgs eval_args;
  auto* evl = app.add_subcommand("eval", "Evaluate trained model(s)");
  evl->add_option("--model", eval_args.models, "Model file(s)")
      ->required()
      ->check(CLI::ExistingFile);
  evl->add_option("--manifest", eval_args.manifest, "Evaluation manifest")
      ->required()
      ->check(CLI::ExistingFile);
  evl->add_option("--out", eval_args.out, "Output directory")->required();
  add_seed(evl, eval_args.seed);

  // analyze
  AnalyzeArgs analyze_args;
  std::string analyze_format = "text";
  auto* ana = app.add_subcommand("analyze", "Static MACC/params/size cost");
  ana->add_option("--netspec", analyze_args.netspecs,
                  "Netspec file(s); several are costed as independent models")
      ->required()
      ->check(CLI::ExistingFile);
  ana->add_option("--categories", analyze_args.categories,
                  "Category file (label maps count toward size)")
      ->check(CLI::ExistingFile);
  ana->add_option("--hc-map", analyze_args.hc_map, "Hard-coded label map")
      ->check(CLI::ExistingFile);
  ana->add_option("--format", analyze_format, "text or json")
      ->capture_default_str()
      ->check(CLI::IsMember({"text", "json"}));
  ana->add_option("--out", analyze_args.out, "Output directory");
  add_seed(ana, analyze_args.seed);

  // bench
  BenchArgs bench_args;
  auto* bch = app.add_subcommand("bench", "Measure inference latency");
  bch->add_option("--model", bench_args.models,
                  "Model file(s); several run back to back per image")
      ->required()
      ->check(CLI::ExistingFile);
  bch->add_option("--manifest", bench_args.manifest, "Test manifest")
      ->required()
      ->check(CLI::ExistingFile);
  bch->add_option("--repeats", bench_args.repeats, "Timed runs")
      ->capture_default_str()
      ->check(CLI::PositiveNumber);
  bch->add_option("--images", bench_args.images, "Test images to use")
      ->capture_default_str()
      ->check(CLI::PositiveNumber);
  bch->add_option("--variant", bench_args.variant, "Tag stored in the stats");
  bch->add_option("--out", bench_args.out, "Output directory")->required();
  add_seed(bch, bench_args.seed);

  // compare
  CompareArgs compare_args;
  fs::path cmp_proposed, cmp_2m, cmp_hc;
  std::string compare_format = "text";
  auto* cmp = app.add_subcommand("compare", "Compare the three variant runs");
  cmp->add_option("--proposed", cmp_proposed, "Proposed run directory")
      ->required();
  cmp->add_option("--2m", cmp_2m, "Two-model run directory")->required();
  cmp->add_option("--hc", cmp_hc, "Hard-coded run directory")->required();
  cmp->add_option("--out", compare_args.out, "Output directory")->required();
  cmp->add_option("--format", compare_format,
                  "Format printed to stdout (all three are written)")
      ->capture_default_str()
      ->check(CLI::IsMember({"text", "json", "csv"}));
  add_seed(cmp, compare_args.seed);

  std::vector<std::string> rest(args.size() > 1 ? args.begin() + 1 : args.end(),
                                args.end());
  std::reverse(rest.begin(), rest.end());
  try {
    app.parse(rest);
  } catch (const CLI::ParseError& e) {
    // --help exits 0; every usage error exits 2.
    return app.exit(e, out, err) == 0 ? 0 : 2;
  }

  try {
    if (*gen) return cmd_gen_data(ctx, gen_out, gen_cfg);
    if (*build) {
      build_args.variant = parse_variant(build_variant);
      if (build_args.variant == VariantKind::hard_coded &&
          build_args.manifest.empty()) {
        err << "mhforge build: --variant hc requires --manifest\n";
        return 2;
      }
      return cmd_build(ctx, build_args);
    }
    if (*trn) return cmd_train(ctx, train_args);
    if (*evl) return cmd_eval(ctx, eval_args);
    if (*ana) {
      analyze_args.format = parse_report_format(analyze_format);
      return cmd_analyze(ctx, analyze_args);
    }
    if (*bch) return cmd_bench(ctx, bench_args);
    if (*cmp) {
      compare_args.runs = {{VariantKind::proposed, cmp_proposed},
                           {VariantKind::two_model, cmp_2m},
                           {VariantKind::hard_coded, cmp_hc}};
      compare_args.format = parse_report_format(compare_format);
      return cmd_compare(ctx, compare_args);
    }
  } catch (const std::exception& e) {
    err << "mhforge: error: " << e.what() << "\n";
    return 1;
  }
  return 2;
}

}  // namespace mhforge
