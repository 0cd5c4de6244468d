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

// Graph surgery producing the three comparison variants from one backbone:
//   proposed    one shared backbone, one head/loss/accuracy per category
//   two_model   one independent single-head network per category
//   hard_coded  one head over the observed label combinations

#include <algorithm>
#include <charconv>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "mhforge/dataset.hpp"
#include "mhforge/error.hpp"
#include "mhforge/netspec.hpp"

namespace mhforge {

enum class VariantKind { proposed, two_model, hard_coded };

inline constexpr VariantKind kAllVariants[] = {
    VariantKind::proposed, VariantKind::two_model, VariantKind::hard_coded};

inline std::string_view to_string(VariantKind v) {
  switch (v) {
    case VariantKind::proposed: return "proposed";
    case VariantKind::two_model: return "2m";
    case VariantKind::hard_coded: return "hc";
  }
  return "?";
}

inline std::string_view display_name(VariantKind v) {
  switch (v) {
    case VariantKind::proposed: return "Proposed";
    case VariantKind::two_model: return "2M";
    case VariantKind::hard_coded: return "HC";
  }
  return "?";
}

inline VariantKind parse_variant(std::string_view s) {
  if (s == "proposed") return VariantKind::proposed;
  if (s == "2m" || s == "two_model") return VariantKind::two_model;
  if (s == "hc" || s == "hard_coded") return VariantKind::hard_coded;
  throw Error(detail::concat("unknown variant '", s,
                             "'; expected proposed, 2m or hc"));
}

// Label slot used by the single hard-coded head.
inline constexpr std::string_view kHcSlot = "hc";

// Dense ids for observed label tuples, ordered lexicographically.
struct HcLabelMap {
  std::vector<std::vector<int>> combos;
  std::map<std::vector<int>, int> index;

  std::size_t size() const { return combos.size(); }
  bool operator==(const HcLabelMap& o) const { return combos == o.combos; }
};

inline HcLabelMap make_hc_map(std::vector<std::vector<int>> combos) {
  std::sort(combos.begin(), combos.end());
  combos.erase(std::unique(combos.begin(), combos.end()), combos.end());
  HcLabelMap map;
  map.combos = std::move(combos);
  for (std::size_t i = 0; i < map.combos.size(); ++i) {
    map.index.emplace(map.combos[i], static_cast<int>(i));
  }
  return map;
}

inline int hc_encode(const HcLabelMap& map, std::span<const int> labels) {
  const std::vector<int> key(labels.begin(), labels.end());
  const auto it = map.index.find(key);
  if (it == map.index.end()) {
    std::string t;
    for (std::size_t i = 0; i < key.size(); ++i) {
      t += (i ? "," : "") + std::to_string(key[i]);
    }
    throw Error(detail::concat("label combination (", t,
                               ") was not observed; the hard-coded label "
                               "space cannot represent it"));
  }
  return it->second;
}

inline const std::vector<int>& hc_decode(const HcLabelMap& map, int id) {
  if (id < 0 || static_cast<std::size_t>(id) >= map.combos.size()) {
    throw Error(detail::concat("hard-coded class id ", id, " outside [0, ",
                               map.combos.size(), ")"));
  }
  return map.combos[static_cast<std::size_t>(id)];
}

// `id: lab_1,...,lab_n` per line.
inline std::string format_hc_map(const HcLabelMap& map) {
  std::string out;
  for (std::size_t i = 0; i < map.combos.size(); ++i) {
    out += std::to_string(i) + ":";
    for (std::size_t k = 0; k < map.combos[i].size(); ++k) {
      out += (k ? "," : " ") + std::to_string(map.combos[i][k]);
    }
    out += '\n';
  }
  return out;
}

inline HcLabelMap parse_hc_map(std::string_view text) {
  std::vector<std::vector<int>> combos;
  std::size_t line_no = 0;
  auto number = [&](std::string_view s) {
    s = detail::trim(s);
    int v = 0;
    auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
    if (ec != std::errc() || ptr != s.data() + s.size() || v < 0) {
      throw ParseError(line_no, 0,
                       detail::concat("expected non-negative integer, found '",
                                      s, "'"));
    }
    return v;
  };
  for (auto raw : detail::split_lines(text)) {
    ++line_no;
    const auto line = detail::trim(raw);
    if (line.empty()) continue;
    const auto colon = line.find(':');
    if (colon == std::string_view::npos) {
      throw ParseError(line_no, 0, "expected 'id: lab_1,...,lab_n'");
    }
    if (number(line.substr(0, colon)) != static_cast<int>(combos.size())) {
      throw ParseError(line_no, 0, "hard-coded ids must be dense and ordered");
    }
    auto& combo = combos.emplace_back();
    auto rest = line.substr(colon + 1);
    std::size_t pos = 0;
    while (true) {
      const auto comma = rest.find(',', pos);
      combo.push_back(number(rest.substr(
          pos, comma == std::string_view::npos ? std::string_view::npos
                                               : comma - pos)));
      if (comma == std::string_view::npos) break;
      pos = comma + 1;
    }
    if (combo.size() != combos.front().size()) {
      throw ParseError(line_no, 0, "inconsistent tuple arity");
    }
  }
  auto map = make_hc_map(combos);
  if (map.combos != combos) {
    throw FormatError("hard-coded map must list distinct tuples in "
                      "lexicographic order");
  }
  return map;
}

namespace detail {

inline void require_plain_backbone(const NetworkSpec& backbone,
                                   std::string_view feature_layer) {
  check_structure(backbone);
  for (const auto& l : backbone.layers) {
    if (l.kind == LayerKind::loss || l.kind == LayerKind::accuracy || l.head) {
      throw Error(concat("backbone already has classification heads (layer '",
                         l.name, "')"));
    }
  }
  if (!backbone.find(feature_layer)) {
    throw Error(concat("feature layer '", feature_layer,
                       "' not found in backbone"));
  }
  validate_shapes(backbone);
}

inline void append_head(NetworkSpec& spec, std::string_view feature_layer,
                        const std::string& slot, std::size_t classes) {
  LayerSpec fc;
  fc.kind = LayerKind::fc;
  fc.name = "head_" + slot;
  fc.inputs = {std::string(feature_layer)};
  fc.out_features = classes;
  fc.head = slot;
  for (const char* prefix : {"loss_", "acc_"}) {
    if (spec.find(prefix + slot) || spec.find(fc.name)) {
      throw Error(concat("layer name collision for head '", slot, "'"));
    }
  }
  LayerSpec loss;
  loss.kind = LayerKind::loss;
  loss.name = "loss_" + slot;
  loss.inputs = {fc.name};
  loss.label = slot;
  LayerSpec acc;
  acc.kind = LayerKind::accuracy;
  acc.name = "acc_" + slot;
  acc.inputs = {fc.name};
  acc.label = slot;
  spec.layers.push_back(std::move(fc));
  spec.layers.push_back(std::move(loss));
  spec.layers.push_back(std::move(acc));
}

inline NetworkSpec frozen_copy(const NetworkSpec& backbone) {
  NetworkSpec spec = backbone;
  for (auto& l : spec.layers) l.frozen = true;
  return spec;
}

}  // namespace detail

// Backbone layers are frozen; only the new heads train. Heads are appended
// as fc layers first, then losses, then accuracies.
inline NetworkSpec attach_heads(const NetworkSpec& backbone,
                                const LabelCategories& categories,
                                std::string_view feature_layer) {
  check_categories(categories);
  detail::require_plain_backbone(backbone, feature_layer);
  for (std::size_t k = 0; k < categories.size(); ++k) {
    if (categories.class_count(k) < 2) {
      throw Error(detail::concat("category '", categories.names[k],
                                 "' has fewer than 2 classes"));
    }
  }
  NetworkSpec spec = detail::frozen_copy(backbone);
  NetworkSpec heads;
  for (std::size_t k = 0; k < categories.size(); ++k) {
    detail::append_head(heads, feature_layer, categories.names[k],
                        categories.class_count(k));
  }
  for (LayerKind kind : {LayerKind::fc, LayerKind::loss, LayerKind::accuracy}) {
    for (const auto& l : heads.layers) {
      if (l.kind != kind) continue;
      if (spec.find(l.name)) {
        throw Error(detail::concat("layer name collision: '", l.name, "'"));
      }
      spec.layers.push_back(l);
    }
  }
  check_structure(spec);
  validate_shapes(spec);
  return spec;
}

inline std::vector<NetworkSpec> build_two_model(
    const NetworkSpec& backbone, const LabelCategories& categories,
    std::string_view feature_layer) {
  check_categories(categories);
  std::vector<NetworkSpec> out;
  for (std::size_t k = 0; k < categories.size(); ++k) {
    LabelCategories one{{categories.names[k]}, {categories.class_names[k]}};
    out.push_back(attach_heads(backbone, one, feature_layer));
  }
  return out;
}

struct HardCodedVariant {
  NetworkSpec spec;
  HcLabelMap map;
};

inline HardCodedVariant build_hard_coded(
    const NetworkSpec& backbone, const LabelCategories& categories,
    std::span<const std::vector<int>> observed, std::string_view feature_layer) {
  check_categories(categories);
  if (observed.empty()) throw Error("hard-coded variant needs observed labels");
  for (const auto& t : observed) {
    if (t.size() != categories.size()) {
      throw Error(detail::concat("label tuple arity ", t.size(),
                                 " does not match ", categories.size(),
                                 " categories"));
    }
    for (std::size_t k = 0; k < t.size(); ++k) {
      if (t[k] < 0 || static_cast<std::size_t>(t[k]) >= categories.class_count(k)) {
        throw Error(detail::concat("label ", t[k],
                                   " out of range for category '",
                                   categories.names[k], "'"));
      }
    }
  }
  if (categories.index_of(kHcSlot)) {
    throw Error("category name 'hc' is reserved for the hard-coded head");
  }
  HardCodedVariant v;
  v.map = make_hc_map({observed.begin(), observed.end()});
  if (v.map.size() < 2) throw Error("HC requires >=2 classes");
  detail::require_plain_backbone(backbone, feature_layer);
  v.spec = detail::frozen_copy(backbone);
  detail::append_head(v.spec, feature_layer, std::string(kHcSlot), v.map.size());
  check_structure(v.spec);
  validate_shapes(v.spec);
  return v;
}

inline std::vector<ManifestEntry> convert_manifest_hc(
    std::span<const ManifestEntry> entries, const HcLabelMap& map) {
  std::vector<ManifestEntry> out;
  out.reserve(entries.size());
  for (const auto& e : entries) {
    out.push_back({e.image_path, {hc_encode(map, e.labels)}});
  }
  return out;
}

}  // namespace mhforge
