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

// Model bundle and its binary file format.
//
//   offset  size  field
//   0       8     magic "MHFORGE1"
//   8       4     format_version (u32 LE)
//   12      8     spec text length S (u64 LE)
//   20      S     canonical netspec text
//   20+S    8     label-map text length L (u64 LE)
//   28+S    L     label-map text
//   28+S+L  ...   for each conv/fc layer in spec order: weights then bias,
//                 little-endian IEEE-754 binary32
//
// The label-map text holds one `category: class0,class1,...` line per
// category, optionally followed by a `[hc]` line and `id: lab_1,...,lab_n`
// lines for a hard-coded label map.

#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <string_view>

#include "mhforge/dataset.hpp"
#include "mhforge/error.hpp"
#include "mhforge/netspec.hpp"
#include "mhforge/surgery.hpp"
#include "mhforge/tensor.hpp"

namespace mhforge {

inline constexpr std::string_view kModelMagic = "MHFORGE1";
inline constexpr std::uint32_t kModelFormatVersion = 1;

struct LabelMaps {
  LabelCategories categories;
  std::optional<HcLabelMap> hc;

  bool operator==(const LabelMaps&) const = default;
};

struct ModelBundle {
  NetworkSpec spec;
  std::map<std::string, LayerParams, std::less<>> params;
  LabelMaps label_maps;
  std::uint32_t format_version = kModelFormatVersion;
};

inline std::string format_label_maps(const LabelMaps& maps) {
  std::string out = format_categories(maps.categories);
  if (maps.hc) {
    out += "[hc]\n";
    out += format_hc_map(*maps.hc);
  }
  return out;
}

inline LabelMaps parse_label_maps(std::string_view text) {
  LabelMaps maps;
  std::string_view cats = text;
  std::string_view hc;
  bool has_hc = false;
  if (text.starts_with("[hc]\n")) {
    cats = {};
    hc = text.substr(5);
    has_hc = true;
  } else if (const auto at = text.find("\n[hc]\n");
             at != std::string_view::npos) {
    cats = text.substr(0, at + 1);
    hc = text.substr(at + 6);
    has_hc = true;
  }
  if (!detail::trim(cats).empty()) maps.categories = parse_categories(cats);
  if (has_hc) maps.hc = parse_hc_map(hc);
  return maps;
}

// Bytes preceding the parameter block.
inline std::size_t header_bytes(const NetworkSpec& spec, const LabelMaps& maps) {
  return kModelMagic.size() + 4 + 8 + serialize_netspec(spec).size() + 8 +
         format_label_maps(maps).size();
}

// Expected weight shape for every conv/fc layer.
inline std::map<std::string, std::pair<Shape4, std::size_t>, std::less<>>
param_shapes(const NetworkSpec& spec) {
  const ShapeMap shapes = validate_shapes(spec);
  std::map<std::string, std::pair<Shape4, std::size_t>, std::less<>> out;
  for (const auto& l : spec.layers) {
    const Shape3* in = l.inputs.empty() ? nullptr : &shapes.at(l.inputs[0]);
    if (l.kind == LayerKind::conv) {
      out[l.name] = {{l.out_channels, in->c, l.kernel, l.kernel},
                     l.out_channels};
    } else if (l.kind == LayerKind::fc) {
      out[l.name] = {{l.out_features, in->size(), 1, 1}, l.out_features};
    }
  }
  return out;
}

inline void check_params(const ModelBundle& bundle) {
  const auto expected = param_shapes(bundle.spec);
  for (const auto& [name, shape] : expected) {
    const auto it = bundle.params.find(name);
    if (it == bundle.params.end()) {
      throw Error(detail::concat("missing parameters for layer '", name, "'"));
    }
    const Shape4& ws = it->second.weights.shape();
    const LayerSpec& l = *bundle.spec.find(name);
    if (l.kind == LayerKind::fc && ws.c * ws.h * ws.w != shape.first.c) {
      throw ShapeError(detail::concat("layer '", name, "': fc expects D=",
                                      shape.first.c, ", found D=",
                                      ws.c * ws.h * ws.w));
    }
    if (ws != shape.first || it->second.bias.size() != shape.second) {
      throw ShapeError(detail::concat("layer '", name, "': weights ", ws.str(),
                                      " do not match expected ",
                                      shape.first.str()));
    }
  }
  for (const auto& [name, p] : bundle.params) {
    if (!expected.contains(name)) {
      throw Error(detail::concat("parameters for unknown layer '", name, "'"));
    }
  }
}

inline std::uint64_t layer_seed(std::uint64_t seed, std::string_view name) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (char ch : name) {
    h ^= static_cast<unsigned char>(ch);
    h *= 0x100000001b3ULL;
  }
  return detail::splitmix64(seed ^ h);
}

// Parameters depend only on (seed, layer name, shape), so variants built from
// the same backbone start from identical backbone weights.
inline ModelBundle initialize_bundle(NetworkSpec spec, LabelMaps maps,
                                     std::uint64_t seed) {
  ModelBundle b{std::move(spec), {}, std::move(maps), kModelFormatVersion};
  for (const auto& [name, shape] : param_shapes(b.spec)) {
    const LayerSpec& l = *b.spec.find(name);
    const std::uint64_t s = layer_seed(seed, name);
    LayerParams p = l.kind == LayerKind::conv
                        ? init_conv_params(shape.first.n, shape.first.c,
                                           shape.first.h, s)
                    : l.head ? init_head_params(shape.first.n, shape.first.c, s)
                             : init_fc_params(shape.first.n, shape.first.c, s);
    p.frozen = l.frozen;
    b.params.emplace(name, std::move(p));
  }
  return b;
}

namespace detail {

template <typename T>
void put_le(std::string& out, T v) {
  for (std::size_t i = 0; i < sizeof(T); ++i) {
    out.push_back(static_cast<char>((v >> (8 * i)) & 0xFF));
  }
}

inline void put_f32(std::string& out, double v) {
  put_le(out, std::bit_cast<std::uint32_t>(static_cast<float>(v)));
}

class Reader {
 public:
  explicit Reader(std::string_view bytes) : bytes_(bytes) {}

  template <typename T>
  T le() {
    need(sizeof(T));
    T v = 0;
    for (std::size_t i = 0; i < sizeof(T); ++i) {
      v |= static_cast<T>(static_cast<unsigned char>(bytes_[pos_ + i]))
           << (8 * i);
    }
    pos_ += sizeof(T);
    return v;
  }
  double f32() { return std::bit_cast<float>(le<std::uint32_t>()); }
  std::string_view take(std::size_t n) {
    need(n);
    auto s = bytes_.substr(pos_, n);
    pos_ += n;
    return s;
  }
  std::size_t remaining() const { return bytes_.size() - pos_; }

 private:
  void need(std::size_t n) const {
    if (bytes_.size() - pos_ < n) {
      throw FormatError(concat("truncated model file: needed ", n,
                               " bytes at offset ", pos_, ", have ",
                               bytes_.size() - pos_));
    }
  }

  std::string_view bytes_;
  std::size_t pos_ = 0;
};

}  // namespace detail

inline std::string encode_model(const ModelBundle& bundle) {
  check_params(bundle);
  const std::string spec_text = serialize_netspec(bundle.spec);
  const std::string maps_text = format_label_maps(bundle.label_maps);
  std::string out(kModelMagic);
  detail::put_le<std::uint32_t>(out, bundle.format_version);
  detail::put_le<std::uint64_t>(out, spec_text.size());
  out += spec_text;
  detail::put_le<std::uint64_t>(out, maps_text.size());
  out += maps_text;
  for (const auto& l : bundle.spec.layers) {
    if (!has_params(l.kind)) continue;
    const LayerParams& p = bundle.params.find(l.name)->second;
    for (double v : p.weights.data()) detail::put_f32(out, v);
    for (double v : p.bias) detail::put_f32(out, v);
  }
  return out;
}

inline ModelBundle decode_model(std::string_view bytes) {
  detail::Reader r(bytes);
  if (bytes.size() < kModelMagic.size() ||
      r.take(kModelMagic.size()) != kModelMagic) {
    throw FormatError("bad magic: not an mhforge model file");
  }
  ModelBundle b;
  b.format_version = r.le<std::uint32_t>();
  if (b.format_version != kModelFormatVersion) {
    throw FormatError(detail::concat("unsupported model format version ",
                                     b.format_version, " (expected ",
                                     kModelFormatVersion, ")"));
  }
  const auto spec_len = r.le<std::uint64_t>();
  b.spec = parse_netspec(r.take(spec_len));
  const auto maps_len = r.le<std::uint64_t>();
  b.label_maps = parse_label_maps(r.take(maps_len));
  const auto shapes = param_shapes(b.spec);
  for (const auto& l : b.spec.layers) {
    if (!has_params(l.kind)) continue;
    const auto& [ws, nb] = shapes.at(l.name);
    LayerParams p{Tensor(ws), std::vector<double>(nb), l.frozen};
    for (double& v : p.weights.data()) v = r.f32();
    for (double& v : p.bias) v = r.f32();
    b.params.emplace(l.name, std::move(p));
  }
  if (r.remaining() != 0) {
    throw FormatError(detail::concat("model file has ", r.remaining(),
                                     " trailing bytes"));
  }
  return b;
}

// Returns the number of bytes written.
inline std::size_t save_model(const ModelBundle& bundle,
                              const std::filesystem::path& path) {
  const std::string bytes = encode_model(bundle);
  detail::write_file(path, bytes);
  return bytes.size();
}

inline ModelBundle load_model(const std::filesystem::path& path) {
  return decode_model(detail::read_file(path));
}

}  // namespace mhforge
