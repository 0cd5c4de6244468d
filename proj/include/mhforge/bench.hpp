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

// Inference latency over a fixed test set, and the comparison report
// writers (text table, JSON, CSV).

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <numeric>
#include <span>
#include <string>
#include <thread>
#include <vector>

#include "json.hpp"
#include "mhforge/analysis.hpp"
#include "mhforge/error.hpp"
#include "mhforge/model_io.hpp"
#include "mhforge/training.hpp"

namespace mhforge {

struct LatencyStats {
  std::string variant;
  std::size_t runs = 0;
  std::size_t images = 0;
  double total_seconds = 0.0;  // sum over all timed runs
  double mean_ms = 0.0;        // per run (one pass over the image set)
  double median_ms = 0.0;
  double std_ms = 0.0;
  double min_ms = 0.0;
  double max_ms = 0.0;
  double per_image_ms = 0.0;
  double throughput_images_per_s = 0.0;
};

NLOHMANN_DEFINE_TYPE_NON_INTRUSIVE(LatencyStats, variant, runs, images,
                                   total_seconds, mean_ms, median_ms, std_ms,
                                   min_ms, max_ms, per_image_ms,
                                   throughput_images_per_s)

struct LatencyResult {
  LatencyStats stats;
  std::vector<double> run_seconds;
  // predictions[image] = argmax of every head of every model, in order.
  std::vector<std::vector<int>> predictions;
};

inline LatencyStats summarize_runs(std::span<const double> run_seconds,
                                   std::size_t images) {
  if (run_seconds.empty()) throw Error("no timed runs");
  LatencyStats s;
  s.runs = run_seconds.size();
  s.images = images;
  std::vector<double> ms;
  for (double v : run_seconds) ms.push_back(v * 1e3);
  s.total_seconds = std::accumulate(run_seconds.begin(), run_seconds.end(), 0.0);
  s.mean_ms = std::accumulate(ms.begin(), ms.end(), 0.0) /
              static_cast<double>(ms.size());
  double var = 0.0;
  for (double v : ms) var += (v - s.mean_ms) * (v - s.mean_ms);
  s.std_ms = std::sqrt(var / static_cast<double>(ms.size()));
  std::sort(ms.begin(), ms.end());
  s.min_ms = ms.front();
  s.max_ms = ms.back();
  const std::size_t mid = ms.size() / 2;
  s.median_ms = ms.size() % 2 ? ms[mid] : 0.5 * (ms[mid - 1] + ms[mid]);
  s.mean_ms = std::clamp(s.mean_ms, s.min_ms, s.max_ms);
  s.per_image_ms = s.mean_ms / static_cast<double>(std::max<std::size_t>(images, 1));
  s.throughput_images_per_s =
      s.total_seconds > 0.0
          ? static_cast<double>(images * s.runs) / s.total_seconds
          : 0.0;
  return s;
}

namespace detail {

// One image through every model; only the forward calls are timed.
inline double timed_pass(std::span<const ModelBundle* const> models,
                         const Tensor& image, std::vector<int>& preds) {
  using clock = std::chrono::steady_clock;
  double seconds = 0.0;
  preds.clear();
  for (const ModelBundle* m : models) {
    const auto t0 = clock::now();
    const ForwardCache cache = forward(*m, image);
    seconds += std::chrono::duration<double>(clock::now() - t0).count();
    for (const LayerSpec* h : m->spec.heads()) {
      preds.push_back(argmax_rows(cache.activations.at(h->name))[0]);
    }
  }
  return seconds;
}

}  // namespace detail

// For the two-model variant pass every per-category model: one image pass
// runs all of them back to back. A warm-up pass precedes the timed runs.
// threads > 1 splits images across workers and times wall clock instead.
inline LatencyResult measure_latency(std::span<const ModelBundle* const> models,
                                     std::span<const Tensor> images,
                                     std::size_t repeats,
                                     std::size_t threads = 1) {
  if (models.empty()) throw Error("measure_latency: no models");
  if (images.empty()) throw Error("measure_latency: empty image list");
  if (repeats == 0) throw Error("measure_latency: repeats must be >= 1");
  for (const ModelBundle* m : models) {
    const Shape3& s = m->spec.input_layer().shape;
    for (const Tensor& img : images) {
      const Shape4& g = img.shape();
      if (g.n != 1 || g.c != s.c || g.h != s.h || g.w != s.w) {
        throw ShapeError(detail::concat("test image ", g.str(),
                                        " does not match model input 1x",
                                        s.str()));
      }
    }
  }

  LatencyResult r;
  r.predictions.resize(images.size());
  std::vector<int> preds;
  for (std::size_t i = 0; i < images.size(); ++i) {
    detail::timed_pass(models, images[i], r.predictions[i]);
  }

  for (std::size_t run = 0; run < repeats; ++run) {
    double seconds = 0.0;
    std::vector<std::vector<int>> run_preds(images.size());
    if (threads <= 1) {
      for (std::size_t i = 0; i < images.size(); ++i) {
        seconds += detail::timed_pass(models, images[i], run_preds[i]);
      }
    } else {
      const auto t0 = std::chrono::steady_clock::now();
      std::vector<std::thread> pool;
      const std::size_t n = std::min(threads, images.size());
      for (std::size_t t = 0; t < n; ++t) {
        pool.emplace_back([&, t] {
          for (std::size_t i = t; i < images.size(); i += n) {
            detail::timed_pass(models, images[i], run_preds[i]);
          }
        });
      }
      for (auto& th : pool) th.join();
      seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() -
                                              t0)
                    .count();
    }
    if (run_preds != r.predictions) {
      throw Error("predictions changed between timed runs");
    }
    r.run_seconds.push_back(seconds);
  }
  r.stats = summarize_runs(r.run_seconds, images.size());
  return r;
}

inline std::string format_run_timings_csv(std::span<const double> run_seconds) {
  std::string out = "run_index,seconds\n";
  char buf[64];
  for (std::size_t i = 0; i < run_seconds.size(); ++i) {
    std::snprintf(buf, sizeof(buf), "%zu,%.9f\n", i, run_seconds[i]);
    out += buf;
  }
  return out;
}

// ---------------------------------------------------------------------------
// Report writers. All three formats print the same rounded values.

enum class ReportFormat { text, json, csv };

inline ReportFormat parse_report_format(std::string_view s) {
  if (s == "text") return ReportFormat::text;
  if (s == "json") return ReportFormat::json;
  if (s == "csv") return ReportFormat::csv;
  throw Error(detail::concat("unknown format '", s,
                             "'; expected text, json or csv"));
}

inline std::string format_cell(const std::optional<double>& v, int decimals) {
  if (!v) return {};
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.*f", decimals, *v);
  return buf;
}

inline std::string render_report(const ComparisonReport& report,
                                 ReportFormat format) {
  if (format == ReportFormat::json) {
    nlohmann::ordered_json j;
    j["columns"] = nlohmann::json::array();
    for (VariantKind v : kAllVariants) j["columns"].push_back(to_string(v));
    j["rows"] = nlohmann::json::array();
    for (const auto& row : report.rows) {
      nlohmann::ordered_json r;
      r["metric"] = row.metric;
      r["decimals"] = row.decimals;
      for (VariantKind v : kAllVariants) {
        const auto& cell = row.values[variant_slot(v)];
        r[std::string(to_string(v))] =
            cell ? nlohmann::ordered_json(std::stod(format_cell(cell, row.decimals)))
                 : nlohmann::ordered_json(nullptr);
      }
      j["rows"].push_back(std::move(r));
    }
    return j.dump(2) + "\n";
  }

  if (format == ReportFormat::csv) {
    std::string out = "metric";
    for (VariantKind v : kAllVariants) out += "," + std::string(to_string(v));
    out += '\n';
    for (const auto& row : report.rows) {
      out += row.metric;
      for (const auto& cell : row.values) {
        out += "," + format_cell(cell, row.decimals);
      }
      out += '\n';
    }
    return out;
  }

  std::vector<std::array<std::string, 4>> cells;
  cells.push_back({"Metric", "Proposed", "2M", "HC"});
  for (const auto& row : report.rows) {
    std::array<std::string, 4> c{row.metric, "", "", ""};
    for (std::size_t i = 0; i < 3; ++i) {
      c[i + 1] = row.values[i] ? format_cell(row.values[i], row.decimals) : "-";
    }
    cells.push_back(std::move(c));
  }
  std::array<std::size_t, 4> width{};
  for (const auto& c : cells) {
    for (std::size_t i = 0; i < 4; ++i) width[i] = std::max(width[i], c[i].size());
  }
  auto rule = [&] {
    std::string s = "+";
    for (std::size_t w : width) s += std::string(w + 2, '-') + "+";
    return s + "\n";
  };
  std::string out = rule();
  for (std::size_t r = 0; r < cells.size(); ++r) {
    out += "|";
    for (std::size_t i = 0; i < 4; ++i) {
      const auto& s = cells[r][i];
      const std::string padding(width[i] - s.size(), ' ');
      out += " " + (i == 0 ? s + padding : padding + s) + " |";
    }
    out += "\n";
    if (r == 0) out += rule();
  }
  out += rule();
  return out;
}

inline ComparisonReport parse_report_json(std::string_view text) {
  const auto j = nlohmann::json::parse(text);
  ComparisonReport report;
  for (const auto& r : j.at("rows")) {
    ReportRow row{r.at("metric").get<std::string>(), {},
                  r.at("decimals").get<int>()};
    for (VariantKind v : kAllVariants) {
      const auto& cell = r.at(std::string(to_string(v)));
      if (!cell.is_null()) row.values[variant_slot(v)] = cell.get<double>();
    }
    report.rows.push_back(std::move(row));
  }
  return report;
}

// Returns the number of bytes written.
inline std::size_t emit_report(const ComparisonReport& report,
                               ReportFormat format,
                               const std::filesystem::path& path) {
  const std::string text = render_report(report, format);
  detail::write_file(path, text);
  return text.size();
}

}  // namespace mhforge
