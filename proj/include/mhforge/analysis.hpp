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

// Static cost model over a validated NetworkSpec: MACC, parameter count,
// serialized size and class coverage, plus the three-way variant comparison.
//
// Conventions:
//   conv MACC = K*K*Cin*Cout*Hout*Wout, fc MACC = D*F; bias additions are
//   not counted. Pool, relu, loss and accuracy layers cost 0.
//   "Trained" MACC covers unfrozen layers for one inference forward pass.

#include <array>
#include <cmath>
#include <cstdint>
#include <limits>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "mhforge/dataset.hpp"
#include "mhforge/error.hpp"
#include "mhforge/model_io.hpp"
#include "mhforge/netspec.hpp"
#include "mhforge/surgery.hpp"

namespace mhforge {

struct LayerCost {
  std::string name;
  LayerKind kind = LayerKind::input;
  std::uint64_t macc = 0;
  std::uint64_t params = 0;
  bool trained = false;
};

struct CostBreakdown {
  std::vector<LayerCost> layers;
  std::uint64_t macc_total = 0;
  std::uint64_t macc_trained = 0;
  std::uint64_t params_total = 0;
  std::uint64_t size_bytes_estimate = 0;
  std::uint64_t coverage = 0;

  bool operator==(const CostBreakdown&) const = default;
};

inline CostBreakdown count_macc(const NetworkSpec& spec, const ShapeMap& shapes) {
  CostBreakdown b;
  for (const auto& l : spec.layers) {
    LayerCost c{l.name, l.kind, 0, 0, has_params(l.kind) && !l.frozen};
    const auto out = shapes.find(l.name);
    if (out == shapes.end()) {
      throw Error(detail::concat("layer '", l.name,
                                 "' has no shape; validate the spec first"));
    }
    if (l.kind == LayerKind::conv) {
      const Shape3& in = shapes.at(l.inputs[0]);
      c.macc = static_cast<std::uint64_t>(l.kernel) * l.kernel * in.c *
               out->second.c * out->second.h * out->second.w;
    } else if (l.kind == LayerKind::fc) {
      c.macc = static_cast<std::uint64_t>(shapes.at(l.inputs[0]).size()) *
               l.out_features;
    }
    b.macc_total += c.macc;
    if (c.trained) b.macc_trained += c.macc;
    b.layers.push_back(std::move(c));
  }
  return b;
}

inline std::uint64_t layer_param_count(const LayerSpec& l, const ShapeMap& shapes) {
  if (l.kind == LayerKind::conv) {
    const Shape3& in = shapes.at(l.inputs[0]);
    return static_cast<std::uint64_t>(l.out_channels) * in.c * l.kernel *
               l.kernel +
           l.out_channels;
  }
  if (l.kind == LayerKind::fc) {
    return static_cast<std::uint64_t>(l.out_features) *
               shapes.at(l.inputs[0]).size() +
           l.out_features;
  }
  return 0;
}

inline std::uint64_t count_params(const NetworkSpec& spec) {
  const ShapeMap shapes = validate_shapes(spec);
  std::uint64_t total = 0;
  for (const auto& l : spec.layers) total += layer_param_count(l, shapes);
  return total;
}

// Exact byte count save_model produces for any bundle of this spec.
inline std::uint64_t estimate_size(const NetworkSpec& spec,
                                   const LabelMaps& maps = {}) {
  return header_bytes(spec, maps) + 4 * count_params(spec);
}

inline std::uint64_t class_coverage(std::span<const std::size_t> class_counts) {
  std::uint64_t p = 1;
  for (std::size_t m : class_counts) {
    if (m != 0 && p > std::numeric_limits<std::uint64_t>::max() / m) {
      throw Error("class coverage overflows 64 bits");
    }
    p *= m;
  }
  return p;
}

inline std::uint64_t class_coverage(const LabelCategories& categories) {
  const auto counts = categories.class_counts();
  return class_coverage(counts);
}

// Product of head widths: the label combinations one network can emit.
inline std::uint64_t head_coverage(const NetworkSpec& spec) {
  std::vector<std::size_t> widths;
  for (const LayerSpec* h : spec.heads()) widths.push_back(h->out_features);
  return widths.empty() ? 0 : class_coverage(widths);
}

inline CostBreakdown analyze(const NetworkSpec& spec, const LabelMaps& maps = {}) {
  const ShapeMap shapes = validate_shapes(spec);
  CostBreakdown b = count_macc(spec, shapes);
  for (std::size_t i = 0; i < spec.layers.size(); ++i) {
    b.layers[i].params = layer_param_count(spec.layers[i], shapes);
    b.params_total += b.layers[i].params;
  }
  b.size_bytes_estimate = header_bytes(spec, maps) + 4 * b.params_total;
  b.coverage = head_coverage(spec);
  return b;
}

// Independent networks share nothing: costs add, coverages multiply.
inline CostBreakdown combine_independent(std::span<const CostBreakdown> parts) {
  if (parts.empty()) throw Error("no breakdowns to combine");
  CostBreakdown total;
  total.coverage = 1;
  for (const auto& p : parts) {
    for (const auto& l : p.layers) total.layers.push_back(l);
    total.macc_total += p.macc_total;
    total.macc_trained += p.macc_trained;
    total.params_total += p.params_total;
    total.size_bytes_estimate += p.size_bytes_estimate;
    total.coverage *= p.coverage;
  }
  return total;
}

// ---------------------------------------------------------------------------
// Variant comparison.

struct VariantMetrics {
  std::map<std::string, double> accuracy;  // per category
  std::map<std::string, double> loss;      // per category
  std::optional<double> combined_loss;     // single hard-coded loss
  std::optional<double> latency_seconds;   // total over the test set
};

struct ReportRow {
  std::string metric;
  std::array<std::optional<double>, 3> values;  // proposed, 2M, HC
  int decimals = 0;
};

struct ComparisonReport {
  std::vector<ReportRow> rows;

  const ReportRow* find(std::string_view metric) const {
    for (const auto& r : rows) {
      if (r.metric == metric) return &r;
    }
    return nullptr;
  }
};

inline double round_to(double v, int decimals) {
  const double scale = std::pow(10.0, decimals);
  return std::round(v * scale) / scale;
}

// a/b with 0/0 treated as parity.
inline std::optional<double> safe_ratio(double a, double b) {
  if (b == 0.0) return a == 0.0 ? std::optional<double>(1.0) : std::nullopt;
  return a / b;
}

inline std::size_t variant_slot(VariantKind v) {
  return static_cast<std::size_t>(v);
}

inline ComparisonReport compare_variants(
    const std::map<VariantKind, CostBreakdown>& breakdowns,
    const std::map<VariantKind, VariantMetrics>& metrics,
    std::span<const std::string> category_order = {}) {
  for (VariantKind v : kAllVariants) {
    if (!breakdowns.contains(v)) {
      throw Error(detail::concat("missing cost breakdown for variant '",
                                 to_string(v), "'"));
    }
  }
  std::vector<std::string> cats(category_order.begin(), category_order.end());
  if (cats.empty()) {
    for (const auto& [v, m] : metrics) {
      for (const auto& [name, acc] : m.accuracy) {
        (void)acc;
        if (std::find(cats.begin(), cats.end(), name) == cats.end()) {
          cats.push_back(name);
        }
      }
    }
  }

  ComparisonReport report;
  auto add = [&](std::string metric, int decimals, auto&& get) {
    ReportRow row{std::move(metric), {}, decimals};
    bool any = false;
    for (VariantKind v : kAllVariants) {
      std::optional<double> value = get(v);
      if (value) {
        value = round_to(*value, decimals);
        any = true;
      }
      row.values[variant_slot(v)] = value;
    }
    if (any) report.rows.push_back(std::move(row));
  };
  auto metric_of = [&](VariantKind v) -> const VariantMetrics* {
    const auto it = metrics.find(v);
    return it == metrics.end() ? nullptr : &it->second;
  };
  auto lookup = [](const std::map<std::string, double>& m,
                   const std::string& key) -> std::optional<double> {
    const auto it = m.find(key);
    if (it == m.end()) return std::nullopt;
    return it->second;
  };

  for (const auto& c : cats) {
    add("Accuracy/" + c, 4, [&](VariantKind v) -> std::optional<double> {
      const auto* m = metric_of(v);
      return m ? lookup(m->accuracy, c) : std::nullopt;
    });
  }
  for (const auto& c : cats) {
    add("Loss/" + c, 4, [&](VariantKind v) -> std::optional<double> {
      const auto* m = metric_of(v);
      return m ? lookup(m->loss, c) : std::nullopt;
    });
  }
  add("Loss/hc", 4, [&](VariantKind v) -> std::optional<double> {
    const auto* m = metric_of(v);
    return m ? m->combined_loss : std::nullopt;
  });

  auto structural = [&](auto field) {
    return [&breakdowns, field](VariantKind v) -> std::optional<double> {
      return static_cast<double>(breakdowns.at(v).*field);
    };
  };
  add("Size (bytes)", 0, structural(&CostBreakdown::size_bytes_estimate));
  add("#Params", 0, structural(&CostBreakdown::params_total));
  add("#Trained-MACC", 0, structural(&CostBreakdown::macc_trained));
  add("#MACC", 0, structural(&CostBreakdown::macc_total));
  auto latency = [&](VariantKind v) -> std::optional<double> {
    const auto* m = metric_of(v);
    return m ? m->latency_seconds : std::nullopt;
  };
  add("Latency (s)", 6, latency);
  add("Classes", 0, structural(&CostBreakdown::coverage));

  // Ratio rows: proposed / column.
  auto ratio = [&](auto get) {
    return [get](VariantKind v) -> std::optional<double> {
      const auto p = get(VariantKind::proposed);
      const auto x = get(v);
      if (!p || !x) return std::nullopt;
      return safe_ratio(*p, *x);
    };
  };
  add("Ratio Trained-MACC", 3,
      ratio(structural(&CostBreakdown::macc_trained)));
  add("Ratio MACC", 3, ratio(structural(&CostBreakdown::macc_total)));
  add("Ratio Params", 3, ratio(structural(&CostBreakdown::params_total)));
  add("Ratio Size", 3, ratio(structural(&CostBreakdown::size_bytes_estimate)));
  if (metric_of(VariantKind::proposed) &&
      metric_of(VariantKind::proposed)->latency_seconds) {
    add("Ratio Latency", 3, ratio(latency));
  }
  return report;
}

}  // namespace mhforge
