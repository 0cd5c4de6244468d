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

// Network description language. One directive per line:
//
//   <kind> name=<id> [in=<id>] key=value ...     # comment
//
// Kinds: input, conv, relu, maxpool, gavgpool, fc, loss, accuracy.

#include <charconv>
#include <cmath>
#include <cstddef>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <string_view>
#include <system_error>
#include <unordered_map>
#include <vector>

#include "mhforge/error.hpp"

namespace mhforge {

enum class LayerKind { input, conv, relu, maxpool, gavgpool, fc, loss, accuracy };

inline std::string_view to_string(LayerKind kind) {
  switch (kind) {
    case LayerKind::input: return "input";
    case LayerKind::conv: return "conv";
    case LayerKind::relu: return "relu";
    case LayerKind::maxpool: return "maxpool";
    case LayerKind::gavgpool: return "gavgpool";
    case LayerKind::fc: return "fc";
    case LayerKind::loss: return "loss";
    case LayerKind::accuracy: return "accuracy";
  }
  return "?";
}

inline std::optional<LayerKind> parse_layer_kind(std::string_view s) {
  for (LayerKind k : {LayerKind::input, LayerKind::conv, LayerKind::relu,
                      LayerKind::maxpool, LayerKind::gavgpool, LayerKind::fc,
                      LayerKind::loss, LayerKind::accuracy}) {
    if (to_string(k) == s) return k;
  }
  return std::nullopt;
}

inline bool has_params(LayerKind kind) {
  return kind == LayerKind::conv || kind == LayerKind::fc;
}

// Per-sample activation shape.
struct Shape3 {
  std::size_t c = 0;
  std::size_t h = 0;
  std::size_t w = 0;

  std::size_t size() const { return c * h * w; }
  bool operator==(const Shape3&) const = default;
  std::string str() const { return detail::concat(c, "x", h, "x", w); }
};

struct LayerSpec {
  std::string name;
  LayerKind kind = LayerKind::input;
  std::vector<std::string> inputs;

  Shape3 shape;                  // input
  std::size_t kernel = 0;        // conv, maxpool
  std::size_t stride = 1;        // conv, maxpool
  std::size_t pad = 0;           // conv
  std::size_t out_channels = 0;  // conv
  std::size_t out_features = 0;  // fc
  std::string label;             // loss, accuracy
  double loss_weight = 1.0;      // loss
  std::optional<std::string> head;  // fc serving as a classification head
  bool frozen = false;

  bool operator==(const LayerSpec&) const = default;
};

struct NetworkSpec {
  std::vector<LayerSpec> layers;

  const LayerSpec* find(std::string_view name) const {
    for (const auto& l : layers) {
      if (l.name == name) return &l;
    }
    return nullptr;
  }
  LayerSpec* find(std::string_view name) {
    for (auto& l : layers) {
      if (l.name == name) return &l;
    }
    return nullptr;
  }

  const LayerSpec& input_layer() const {
    for (const auto& l : layers) {
      if (l.kind == LayerKind::input) return l;
    }
    throw Error("no input layer");
  }

  // Label slots in loss-layer order.
  std::vector<std::string> label_slots() const {
    std::vector<std::string> out;
    for (const auto& l : layers) {
      if (l.kind == LayerKind::loss) out.push_back(l.label);
    }
    return out;
  }

  std::vector<const LayerSpec*> heads() const {
    std::vector<const LayerSpec*> out;
    for (const auto& l : layers) {
      if (l.kind == LayerKind::fc && l.head) out.push_back(&l);
    }
    return out;
  }

  bool operator==(const NetworkSpec&) const = default;
};

using ShapeMap = std::map<std::string, Shape3, std::less<>>;

namespace detail {

inline bool is_identifier(std::string_view s) {
  if (s.empty()) return false;
  for (char ch : s) {
    const bool ok = (ch >= 'a' && ch <= 'z') || (ch >= 'A' && ch <= 'Z') ||
                    (ch >= '0' && ch <= '9') || ch == '_' || ch == '-' ||
                    ch == '.';
    if (!ok) return false;
  }
  return true;
}

inline std::optional<std::size_t> parse_size(std::string_view s) {
  std::size_t v = 0;
  const auto* end = s.data() + s.size();
  auto [ptr, ec] = std::from_chars(s.data(), end, v);
  if (ec != std::errc() || ptr != end || s.empty()) return std::nullopt;
  return v;
}

inline std::optional<double> parse_double(std::string_view s) {
  double v = 0.0;
  const auto* end = s.data() + s.size();
  auto [ptr, ec] = std::from_chars(s.data(), end, v);
  if (ec != std::errc() || ptr != end || s.empty() || !std::isfinite(v)) {
    return std::nullopt;
  }
  return v;
}

inline std::string format_double(double v) {
  char buf[64];
  auto [ptr, ec] = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, ptr);
}

struct Token {
  std::string_view text;
  std::size_t column;  // 1-based
};

inline std::vector<Token> tokenize(std::string_view line) {
  std::vector<Token> out;
  std::size_t i = 0;
  auto is_space = [](char ch) {
    return ch == ' ' || ch == '\t' || ch == '\r' || ch == '\v' || ch == '\f';
  };
  while (i < line.size()) {
    while (i < line.size() && is_space(line[i])) ++i;
    if (i >= line.size() || line[i] == '#') break;
    const std::size_t start = i;
    while (i < line.size() && !is_space(line[i]) && line[i] != '#') ++i;
    out.push_back({line.substr(start, i - start), start + 1});
  }
  return out;
}

inline LayerSpec parse_directive(const std::vector<Token>& tokens,
                                 std::size_t line_no) {
  const auto kind = parse_layer_kind(tokens[0].text);
  if (!kind) {
    throw ParseError(line_no, tokens[0].column,
                     concat("unknown layer kind '", tokens[0].text,
                            "'; expected one of input, conv, relu, maxpool, "
                            "gavgpool, fc, loss, accuracy"));
  }
  LayerSpec layer;
  layer.kind = *kind;

  std::set<std::string_view> allowed = {"name", "frozen"};
  std::set<std::string_view> required = {"name"};
  switch (*kind) {
    case LayerKind::input:
      allowed.insert("shape");
      required.insert("shape");
      break;
    case LayerKind::conv:
      allowed.insert({"in", "out_channels", "kernel", "stride", "pad"});
      required.insert({"in", "out_channels", "kernel"});
      break;
    case LayerKind::relu:
    case LayerKind::gavgpool:
      allowed.insert("in");
      required.insert("in");
      break;
    case LayerKind::maxpool:
      allowed.insert({"in", "kernel", "stride"});
      required.insert({"in", "kernel"});
      break;
    case LayerKind::fc:
      allowed.insert({"in", "out", "head"});
      required.insert({"in", "out"});
      break;
    case LayerKind::loss:
      allowed.insert({"in", "label", "weight"});
      required.insert({"in", "label"});
      break;
    case LayerKind::accuracy:
      allowed.insert({"in", "label"});
      required.insert({"in", "label"});
      break;
  }

  std::set<std::string_view> seen;
  bool stride_given = false;
  for (std::size_t t = 1; t < tokens.size(); ++t) {
    const Token& tok = tokens[t];
    const auto eq = tok.text.find('=');
    if (eq == std::string_view::npos || eq == 0) {
      throw ParseError(line_no, tok.column,
                       concat("expected key=value, found '", tok.text, "'"));
    }
    const std::string_view key = tok.text.substr(0, eq);
    const std::string_view value = tok.text.substr(eq + 1);
    const std::size_t vcol = tok.column + eq + 1;
    if (!allowed.contains(key)) {
      throw ParseError(line_no, tok.column,
                       concat("unknown key '", key, "' for ",
                              to_string(*kind), " layer"));
    }
    if (!seen.insert(key).second) {
      throw ParseError(line_no, tok.column,
                       concat("duplicate key '", key, "'"));
    }
    if (value.empty()) {
      throw ParseError(line_no, vcol, concat("expected value for '", key, "'"));
    }

    auto positive = [&](std::size_t min) {
      const auto v = parse_size(value);
      if (!v) {
        throw ParseError(line_no, vcol,
                         concat("expected integer for '", key, "', found '",
                                value, "'"));
      }
      if (*v < min) {
        throw ParseError(line_no, vcol,
                         concat(key, " must be >= ", min, ", found ", *v));
      }
      return *v;
    };

    if (key == "name") {
      if (!is_identifier(value)) {
        throw ParseError(line_no, vcol,
                         concat("invalid layer name '", value, "'"));
      }
      layer.name = std::string(value);
    } else if (key == "in") {
      std::size_t start = 0;
      while (true) {
        const auto comma = value.find(',', start);
        const auto part = value.substr(start, comma == std::string_view::npos
                                                  ? std::string_view::npos
                                                  : comma - start);
        if (!is_identifier(part)) {
          throw ParseError(line_no, vcol + start,
                           concat("invalid input reference '", part, "'"));
        }
        layer.inputs.emplace_back(part);
        if (comma == std::string_view::npos) break;
        start = comma + 1;
      }
    } else if (key == "shape") {
      std::size_t dims[3] = {0, 0, 0};
      std::size_t start = 0;
      for (int d = 0; d < 3; ++d) {
        const auto x = value.find('x', start);
        if ((d < 2) == (x == std::string_view::npos)) {
          throw ParseError(line_no, vcol,
                           concat("expected shape CxHxW, found '", value, "'"));
        }
        const auto part = value.substr(
            start, x == std::string_view::npos ? std::string_view::npos
                                               : x - start);
        const auto v = parse_size(part);
        if (!v || *v == 0) {
          throw ParseError(line_no, vcol + start,
                           concat("shape dimensions must be positive integers, "
                                  "found '",
                                  value, "'"));
        }
        dims[d] = *v;
        start = x + 1;
      }
      layer.shape = {dims[0], dims[1], dims[2]};
    } else if (key == "kernel") {
      layer.kernel = positive(1);
    } else if (key == "stride") {
      layer.stride = positive(1);
      stride_given = true;
    } else if (key == "pad") {
      layer.pad = positive(0);
    } else if (key == "out_channels") {
      layer.out_channels = positive(1);
    } else if (key == "out") {
      layer.out_features = positive(1);
    } else if (key == "head" || key == "label") {
      if (!is_identifier(value)) {
        throw ParseError(line_no, vcol,
                         concat("invalid ", key, " '", value, "'"));
      }
      (key == "head" ? layer.head.emplace() : layer.label) = std::string(value);
    } else if (key == "weight") {
      const auto v = parse_double(value);
      if (!v || *v < 0.0) {
        throw ParseError(line_no, vcol,
                         concat("weight must be a finite number >= 0, found '",
                                value, "'"));
      }
      layer.loss_weight = *v;
    } else if (key == "frozen") {
      if (value == "1" || value == "true") {
        layer.frozen = true;
      } else if (value == "0" || value == "false") {
        layer.frozen = false;
      } else {
        throw ParseError(line_no, vcol,
                         concat("frozen must be 0/1/true/false, found '",
                                value, "'"));
      }
    }
  }

  for (std::string_view key : required) {
    if (!seen.contains(key)) {
      throw ParseError(line_no, 0,
                       concat(to_string(*kind), " layer missing required key '",
                              key, "'"));
    }
  }
  if (*kind == LayerKind::maxpool && !stride_given) layer.stride = layer.kernel;
  return layer;
}

}  // namespace detail

// Graph-level rules: unique names, one input layer, inputs defined before
// use, one input per non-input layer, every head paired with exactly one
// loss and one accuracy layer over the same label slot.
inline void check_structure(const NetworkSpec& spec) {
  std::set<std::string, std::less<>> defined;
  std::size_t input_layers = 0;
  for (const auto& l : spec.layers) {
    if (l.name.empty()) throw Error("layer with empty name");
    if (defined.contains(l.name)) {
      throw Error(detail::concat("duplicate layer name '", l.name, "'"));
    }
    if (l.kind == LayerKind::input) {
      ++input_layers;
      if (!l.inputs.empty()) {
        throw Error(detail::concat("input layer '", l.name,
                                   "' cannot have inputs"));
      }
    } else {
      if (l.inputs.size() != 1) {
        throw Error(detail::concat("layer '", l.name,
                                   "' needs exactly one input, has ",
                                   l.inputs.size()));
      }
      if (!defined.contains(l.inputs[0])) {
        throw Error(detail::concat("layer '", l.name,
                                   "' references undefined input '",
                                   l.inputs[0], "'"));
      }
    }
    defined.insert(l.name);
  }
  if (input_layers == 0) throw Error("no input layer");
  if (input_layers > 1) {
    throw Error(detail::concat("expected exactly one input layer, found ",
                               input_layers));
  }

  std::map<std::string, std::string, std::less<>> head_of_slot;
  std::map<std::string, int, std::less<>> losses, accuracies;
  for (const auto& l : spec.layers) {
    if (l.kind != LayerKind::loss && l.kind != LayerKind::accuracy) continue;
    const LayerSpec* src = spec.find(l.inputs[0]);
    if (src->kind != LayerKind::fc || !src->head) {
      throw Error(detail::concat(to_string(l.kind), " layer '", l.name,
                                 "' must read a head fc layer, reads '",
                                 src->name, "'"));
    }
    if (*src->head != l.label) {
      throw Error(detail::concat(to_string(l.kind), " layer '", l.name,
                                 "' has label '", l.label, "' but head '",
                                 src->name, "' serves '", *src->head, "'"));
    }
    auto [it, inserted] = head_of_slot.emplace(l.label, src->name);
    if (!inserted && it->second != src->name) {
      throw Error(detail::concat("label slot '", l.label,
                                 "' bound to two heads"));
    }
    (l.kind == LayerKind::loss ? losses : accuracies)[l.label]++;
  }
  std::set<std::string, std::less<>> head_tags;
  for (const LayerSpec* h : spec.heads()) {
    if (!head_tags.insert(*h->head).second) {
      throw Error(detail::concat("two heads tagged '", *h->head, "'"));
    }
    if (losses[*h->head] != 1 || accuracies[*h->head] != 1) {
      throw Error(detail::concat("head '", h->name,
                                 "' needs exactly one loss and one accuracy "
                                 "layer, has ",
                                 losses[*h->head], " and ",
                                 accuracies[*h->head]));
    }
  }
}

inline NetworkSpec parse_netspec(std::string_view text) {
  NetworkSpec spec;
  std::set<std::string, std::less<>> names;
  std::size_t line_no = 0;
  std::size_t pos = 0;
  while (pos <= text.size()) {
    const auto nl = text.find('\n', pos);
    const auto line = text.substr(
        pos, nl == std::string_view::npos ? std::string_view::npos : nl - pos);
    ++line_no;
    const auto tokens = detail::tokenize(line);
    if (!tokens.empty()) {
      LayerSpec layer = detail::parse_directive(tokens, line_no);
      if (!names.insert(layer.name).second) {
        throw ParseError(line_no, tokens[0].column,
                         detail::concat("duplicate layer name '", layer.name,
                                        "'"));
      }
      for (const auto& in : layer.inputs) {
        if (!names.contains(in) || in == layer.name) {
          throw ParseError(line_no, tokens[0].column,
                           detail::concat("dangling input reference '", in,
                                          "' in layer '", layer.name, "'"));
        }
      }
      spec.layers.push_back(std::move(layer));
    }
    if (nl == std::string_view::npos) break;
    pos = nl + 1;
  }
  check_structure(spec);
  return spec;
}

inline std::string serialize_layer(const LayerSpec& l) {
  std::string out(to_string(l.kind));
  out += " name=" + l.name;
  if (!l.inputs.empty()) {
    out += " in=";
    for (std::size_t i = 0; i < l.inputs.size(); ++i) {
      if (i) out += ',';
      out += l.inputs[i];
    }
  }
  switch (l.kind) {
    case LayerKind::input:
      out += " shape=" + l.shape.str();
      break;
    case LayerKind::conv:
      out += detail::concat(" out_channels=", l.out_channels,
                            " kernel=", l.kernel, " stride=", l.stride,
                            " pad=", l.pad);
      break;
    case LayerKind::maxpool:
      out += detail::concat(" kernel=", l.kernel, " stride=", l.stride);
      break;
    case LayerKind::fc:
      out += detail::concat(" out=", l.out_features);
      if (l.head) out += " head=" + *l.head;
      break;
    case LayerKind::loss:
      out += " label=" + l.label + " weight=" +
             detail::format_double(l.loss_weight);
      break;
    case LayerKind::accuracy:
      out += " label=" + l.label;
      break;
    case LayerKind::relu:
    case LayerKind::gavgpool:
      break;
  }
  if (l.frozen) out += " frozen=1";
  return out;
}

// Canonical text; parse_netspec(serialize_netspec(s)) == s.
inline std::string serialize_netspec(const NetworkSpec& spec) {
  std::string out;
  for (const auto& l : spec.layers) {
    out += serialize_layer(l);
    out += '\n';
  }
  return out;
}

// Propagates per-sample shapes from the input layer through the graph.
inline ShapeMap validate_shapes(const NetworkSpec& spec) {
  check_structure(spec);
  ShapeMap shapes;
  for (const auto& l : spec.layers) {
    if (l.kind == LayerKind::input) {
      shapes[l.name] = l.shape;
      continue;
    }
    const Shape3 in = shapes.at(l.inputs[0]);
    auto fail = [&](const std::string& why) {
      return ShapeError(detail::concat("layer '", l.name, "' (",
                                       to_string(l.kind), "): ", why));
    };
    switch (l.kind) {
      case LayerKind::conv: {
        if (l.kernel == 0) throw fail("kernel must be >= 1");
        if (l.stride == 0) throw fail("stride must be >= 1");
        const std::size_t ph = in.h + 2 * l.pad;
        const std::size_t pw = in.w + 2 * l.pad;
        if (ph < l.kernel || pw < l.kernel) {
          throw fail(detail::concat("(", in.h, "+2*", l.pad, "-", l.kernel,
                                    ")/", l.stride, "+1 < 1 for input ",
                                    in.str()));
        }
        shapes[l.name] = {l.out_channels, (ph - l.kernel) / l.stride + 1,
                          (pw - l.kernel) / l.stride + 1};
        break;
      }
      case LayerKind::maxpool:
        if (l.kernel == 0 || l.stride == 0) {
          throw fail("kernel and stride must be >= 1");
        }
        if (in.h < l.kernel || in.w < l.kernel) {
          throw fail(detail::concat("window ", l.kernel, "x", l.kernel,
                                    " exceeds input ", in.str()));
        }
        shapes[l.name] = {in.c, (in.h - l.kernel) / l.stride + 1,
                          (in.w - l.kernel) / l.stride + 1};
        break;
      case LayerKind::relu:
        shapes[l.name] = in;
        break;
      case LayerKind::gavgpool:
        shapes[l.name] = {in.c, 1, 1};
        break;
      case LayerKind::fc:
        if (l.out_features == 0) throw fail("out must be >= 1");
        shapes[l.name] = {l.out_features, 1, 1};
        break;
      case LayerKind::loss:
      case LayerKind::accuracy:
        shapes[l.name] = {1, 1, 1};
        break;
      case LayerKind::input:
        break;
    }
  }
  return shapes;
}

// Flattened feature dimension each fc layer reads.
inline std::size_t fc_input_dim(const ShapeMap& shapes, const LayerSpec& fc) {
  return shapes.at(fc.inputs[0]).size();
}

}  // namespace mhforge
