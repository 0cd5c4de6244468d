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

// Multi-label manifests, label-category metadata, PGM images and the
// synthetic glyph/position dataset.

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <map>
#include <random>
#include <set>
#include <span>
#include <string>
#include <string_view>
#include <thread>
#include <vector>

#include "mhforge/error.hpp"
#include "mhforge/tensor.hpp"

namespace mhforge {

// One entry per mutually exclusive attribute axis, each with its own class
// list. A sample carries one label per category.
struct LabelCategories {
  std::vector<std::string> names;
  std::vector<std::vector<std::string>> class_names;

  std::size_t size() const { return names.size(); }
  std::size_t class_count(std::size_t k) const { return class_names[k].size(); }
  std::vector<std::size_t> class_counts() const {
    std::vector<std::size_t> out;
    for (const auto& c : class_names) out.push_back(c.size());
    return out;
  }
  std::optional<std::size_t> index_of(std::string_view name) const {
    for (std::size_t k = 0; k < names.size(); ++k) {
      if (names[k] == name) return k;
    }
    return std::nullopt;
  }

  bool operator==(const LabelCategories&) const = default;
};

inline void check_categories(const LabelCategories& cats) {
  if (cats.names.empty()) throw Error("at least one label category required");
  if (cats.names.size() != cats.class_names.size()) {
    throw Error("category names and class lists differ in length");
  }
  std::set<std::string_view> seen;
  for (std::size_t k = 0; k < cats.size(); ++k) {
    if (cats.names[k].empty()) throw Error("empty category name");
    if (!seen.insert(cats.names[k]).second) {
      throw Error(detail::concat("duplicate category '", cats.names[k], "'"));
    }
    if (cats.class_names[k].empty()) {
      throw Error(detail::concat("category '", cats.names[k],
                                 "' has no classes"));
    }
    std::set<std::string_view> classes;
    for (const auto& c : cats.class_names[k]) {
      if (c.empty()) {
        throw Error(detail::concat("empty class name in '", cats.names[k],
                                   "'"));
      }
      if (!classes.insert(c).second) {
        throw Error(detail::concat("duplicate class '", c, "' in category '",
                                   cats.names[k], "'"));
      }
    }
  }
}

namespace detail {

inline std::string_view trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t\r\n");
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(" \t\r\n");
  return s.substr(b, e - b + 1);
}

inline std::vector<std::string_view> split_lines(std::string_view text) {
  std::vector<std::string_view> out;
  std::size_t pos = 0;
  while (pos <= text.size()) {
    const auto nl = text.find('\n', pos);
    if (nl == std::string_view::npos) {
      if (pos < text.size()) out.push_back(text.substr(pos));
      break;
    }
    out.push_back(text.substr(pos, nl - pos));
    pos = nl + 1;
  }
  return out;
}

inline std::string read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError(concat("cannot read '", path.string(), "'"));
  return std::string(std::istreambuf_iterator<char>(in), {});
}

inline void write_file(const std::filesystem::path& path,
                       std::string_view bytes) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError(concat("cannot write '", path.string(), "'"));
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw IoError(concat("write failed for '", path.string(), "'"));
}

inline std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9E3779B97F4A7C15ULL;
  x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ULL;
  x = (x ^ (x >> 27)) * 0x94D049BB133111EBULL;
  return x ^ (x >> 31);
}

// Fisher-Yates with an explicit draw so the order is stable across
// standard libraries.
template <typename T>
void shuffle_in_place(std::vector<T>& v, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  for (std::size_t i = v.size(); i > 1; --i) {
    const std::size_t j = static_cast<std::size_t>(rng() % i);
    std::swap(v[i - 1], v[j]);
  }
}

}  // namespace detail

// `name: class0,class1,...` per line.
inline LabelCategories parse_categories(std::string_view text) {
  LabelCategories cats;
  std::size_t line_no = 0;
  for (auto raw : detail::split_lines(text)) {
    ++line_no;
    auto line = detail::trim(raw);
    if (line.empty() || line.front() == '#') continue;
    const auto colon = line.find(':');
    if (colon == std::string_view::npos) {
      throw ParseError(line_no, 0, "expected 'name: class0,class1,...'");
    }
    cats.names.emplace_back(detail::trim(line.substr(0, colon)));
    auto& classes = cats.class_names.emplace_back();
    auto rest = line.substr(colon + 1);
    std::size_t pos = 0;
    while (true) {
      const auto comma = rest.find(',', pos);
      classes.emplace_back(detail::trim(rest.substr(
          pos, comma == std::string_view::npos ? std::string_view::npos
                                               : comma - pos)));
      if (comma == std::string_view::npos) break;
      pos = comma + 1;
    }
  }
  check_categories(cats);
  return cats;
}

inline std::string format_categories(const LabelCategories& cats) {
  std::string out;
  for (std::size_t k = 0; k < cats.size(); ++k) {
    out += cats.names[k] + ": ";
    for (std::size_t c = 0; c < cats.class_names[k].size(); ++c) {
      if (c) out += ',';
      out += cats.class_names[k][c];
    }
    out += '\n';
  }
  return out;
}

struct ManifestEntry {
  std::string image_path;
  std::vector<int> labels;

  bool operator==(const ManifestEntry&) const = default;
};

inline std::vector<ManifestEntry> parse_manifest(
    std::string_view text, const LabelCategories& cats) {
  std::vector<ManifestEntry> entries;
  const std::size_t n = cats.size();
  std::size_t line_no = 0;
  for (auto raw : detail::split_lines(text)) {
    ++line_no;
    auto line = detail::trim(raw);
    if (line.empty()) continue;
    std::vector<std::string_view> fields;
    std::size_t pos = 0;
    while (pos < line.size()) {
      const auto b = line.find_first_not_of(" \t\r", pos);
      if (b == std::string_view::npos) break;
      const auto e = line.find_first_of(" \t\r", b);
      fields.push_back(line.substr(
          b, e == std::string_view::npos ? std::string_view::npos : e - b));
      pos = e == std::string_view::npos ? line.size() : e;
    }
    if (fields.size() != n + 1) {
      throw ParseError(line_no, 0,
                       detail::concat("expected a path and ", n,
                                      " labels, found ", fields.size() - 1,
                                      " labels"));
    }
    ManifestEntry entry{std::string(fields[0]), {}};
    for (std::size_t k = 0; k < n; ++k) {
      const auto f = fields[k + 1];
      int v = 0;
      auto [ptr, ec] = std::from_chars(f.data(), f.data() + f.size(), v);
      if (ec != std::errc() || ptr != f.data() + f.size() || v < 0) {
        throw ParseError(line_no, 0,
                         detail::concat("unreadable label '", f,
                                        "' for category '", cats.names[k],
                                        "'"));
      }
      if (static_cast<std::size_t>(v) >= cats.class_count(k)) {
        throw ParseError(line_no, 0,
                         detail::concat("label ", v,
                                        " out of range for category '",
                                        cats.names[k], "' (",
                                        cats.class_count(k), " classes)"));
      }
      entry.labels.push_back(v);
    }
    entries.push_back(std::move(entry));
  }
  return entries;
}

inline std::string format_manifest(std::span<const ManifestEntry> entries) {
  std::string out;
  for (const auto& e : entries) {
    out += e.image_path;
    for (int l : e.labels) out += ' ' + std::to_string(l);
    out += '\n';
  }
  return out;
}

// ---------------------------------------------------------------------------
// Portable graymap (P5, 8-bit).

struct GrayImage {
  std::size_t width = 0;
  std::size_t height = 0;
  std::vector<std::uint8_t> pixels;

  bool operator==(const GrayImage&) const = default;
};

inline std::string encode_pgm(const GrayImage& img) {
  std::string out = detail::concat("P5\n", img.width, " ", img.height, "\n255\n");
  out.append(reinterpret_cast<const char*>(img.pixels.data()),
             img.pixels.size());
  return out;
}

inline GrayImage decode_pgm(std::string_view bytes) {
  std::size_t pos = 0;
  auto skip_ws = [&] {
    while (pos < bytes.size()) {
      const char ch = bytes[pos];
      if (ch == '#') {
        while (pos < bytes.size() && bytes[pos] != '\n') ++pos;
      } else if (ch == ' ' || ch == '\t' || ch == '\r' || ch == '\n') {
        ++pos;
      } else {
        break;
      }
    }
  };
  auto number = [&]() -> std::size_t {
    skip_ws();
    std::size_t v = 0;
    auto [ptr, ec] =
        std::from_chars(bytes.data() + pos, bytes.data() + bytes.size(), v);
    if (ec != std::errc()) throw FormatError("pgm: malformed header");
    pos = static_cast<std::size_t>(ptr - bytes.data());
    return v;
  };
  if (bytes.substr(0, 2) != "P5") throw FormatError("pgm: expected P5 magic");
  pos = 2;
  GrayImage img;
  img.width = number();
  img.height = number();
  const std::size_t maxval = number();
  if (maxval != 255) throw FormatError("pgm: only 8-bit (maxval 255) supported");
  if (pos >= bytes.size()) throw FormatError("pgm: truncated header");
  ++pos;  // single whitespace before raster
  const std::size_t count = img.width * img.height;
  if (bytes.size() - pos < count) throw FormatError("pgm: truncated raster");
  img.pixels.assign(bytes.begin() + static_cast<std::ptrdiff_t>(pos),
                    bytes.begin() + static_cast<std::ptrdiff_t>(pos + count));
  return img;
}

inline Tensor image_to_tensor(const GrayImage& img) {
  Tensor t({1, 1, img.height, img.width});
  for (std::size_t i = 0; i < img.pixels.size(); ++i) {
    t[i] = static_cast<double>(img.pixels[i]) / 255.0;
  }
  return t;
}

// ---------------------------------------------------------------------------
// Synthetic glyph/position dataset.

struct SyntheticConfig {
  std::size_t image_size = 32;
  std::vector<std::string> shapes = {"square", "circle", "triangle", "cross"};
  std::vector<std::string> positions = {"top_left", "top_right", "bottom_left",
                                        "bottom_right"};
  std::size_t samples_per_combo = 16;
  double noise_std = 0.05;
  std::uint64_t seed = 1;
};

struct SyntheticDataset {
  LabelCategories categories;
  std::vector<ManifestEntry> entries;
  std::string manifest_text;
};

namespace detail {

enum class Glyph { square, circle, triangle, cross };

inline Glyph glyph_from_name(std::string_view name) {
  if (name == "square") return Glyph::square;
  if (name == "circle") return Glyph::circle;
  if (name == "triangle") return Glyph::triangle;
  if (name == "cross") return Glyph::cross;
  throw Error(concat("unknown glyph '", name,
                     "'; expected square, circle, triangle or cross"));
}

inline std::pair<double, double> quadrant_center(std::string_view name,
                                                 double size) {
  const double lo = size / 4.0;
  const double hi = 3.0 * size / 4.0;
  if (name == "top_left") return {lo, lo};
  if (name == "top_right") return {hi, lo};
  if (name == "bottom_left") return {lo, hi};
  if (name == "bottom_right") return {hi, hi};
  throw Error(concat("unknown position '", name,
                     "'; expected top_left, top_right, bottom_left or "
                     "bottom_right"));
}

// Glyph side is 40% of the image width.
inline bool glyph_covers(Glyph g, double dx, double dy, double side) {
  const double r = side / 2.0;
  switch (g) {
    case Glyph::square:
      return std::abs(dx) <= r && std::abs(dy) <= r;
    case Glyph::circle:
      return dx * dx + dy * dy <= r * r;
    case Glyph::triangle:
      return dy >= -r && dy <= r && std::abs(dx) <= (dy + r) / 2.0;
    case Glyph::cross: {
      const double arm = r / 3.0;
      return (std::abs(dx) <= arm && std::abs(dy) <= r) ||
             (std::abs(dy) <= arm && std::abs(dx) <= r);
    }
  }
  return false;
}

}  // namespace detail

inline GrayImage render_glyph(const SyntheticConfig& cfg, std::size_t shape,
                              std::size_t position, std::uint64_t noise_seed) {
  const auto glyph = detail::glyph_from_name(cfg.shapes.at(shape));
  const double size = static_cast<double>(cfg.image_size);
  const auto [cx, cy] = detail::quadrant_center(cfg.positions.at(position), size);
  const double side = 0.4 * size;
  GrayImage img{cfg.image_size, cfg.image_size,
                std::vector<std::uint8_t>(cfg.image_size * cfg.image_size)};
  std::mt19937_64 rng(noise_seed);
  std::normal_distribution<double> noise(0.0, 1.0);
  for (std::size_t y = 0; y < cfg.image_size; ++y) {
    for (std::size_t x = 0; x < cfg.image_size; ++x) {
      const double dx = static_cast<double>(x) + 0.5 - cx;
      const double dy = static_cast<double>(y) + 0.5 - cy;
      double v = detail::glyph_covers(glyph, dx, dy, side) ? 1.0 : 0.0;
      if (cfg.noise_std > 0.0) v += cfg.noise_std * noise(rng);
      v = std::clamp(v, 0.0, 1.0);
      img.pixels[y * cfg.image_size + x] =
          static_cast<std::uint8_t>(std::lround(v * 255.0));
    }
  }
  return img;
}

// Writes images under out_dir/images and returns the manifest (paths relative
// to out_dir). Category 0 is the glyph, category 1 the quadrant.
inline SyntheticDataset generate_synthetic(const SyntheticConfig& cfg,
                                           const std::filesystem::path& out_dir) {
  if (cfg.image_size < 8) throw Error("image_size must be >= 8");
  if (cfg.samples_per_combo < 1) throw Error("samples_per_combo must be >= 1");
  if (cfg.noise_std < 0.0) throw Error("noise_std must be >= 0");
  SyntheticDataset ds;
  ds.categories = {{"shape", "position"}, {cfg.shapes, cfg.positions}};
  check_categories(ds.categories);
  for (const auto& s : cfg.shapes) detail::glyph_from_name(s);
  for (const auto& p : cfg.positions) detail::quadrant_center(p, 1.0);

  std::error_code ec;
  std::filesystem::create_directories(out_dir / "images", ec);
  if (ec) {
    throw IoError(detail::concat("cannot create '",
                                 (out_dir / "images").string(),
                                 "': ", ec.message()));
  }
  std::uint64_t index = 0;
  for (std::size_t s = 0; s < cfg.shapes.size(); ++s) {
    for (std::size_t p = 0; p < cfg.positions.size(); ++p) {
      for (std::size_t i = 0; i < cfg.samples_per_combo; ++i, ++index) {
        const auto img =
            render_glyph(cfg, s, p, detail::splitmix64(cfg.seed ^ (index << 1)));
        char name[64];
        std::snprintf(name, sizeof(name), "img%06llu.pgm",
                      static_cast<unsigned long long>(index));
        const std::string rel = std::string("images/") + name;
        detail::write_file(out_dir / rel, encode_pgm(img));
        ds.entries.push_back(
            {rel, {static_cast<int>(s), static_cast<int>(p)}});
      }
    }
  }
  ds.manifest_text = format_manifest(ds.entries);
  return ds;
}

// ---------------------------------------------------------------------------
// Loading and batching.

struct Sample {
  Tensor image;  // 1 x C x H x W
  std::vector<int> labels;
};

// Decodes every manifest image relative to base_dir. Workers write disjoint
// slots, so the result is independent of the thread count.
inline std::vector<Sample> load_samples(std::span<const ManifestEntry> entries,
                                        const std::filesystem::path& base_dir,
                                        std::size_t threads = 1) {
  std::vector<Sample> out(entries.size());
  auto work = [&](std::size_t begin, std::size_t end) {
    for (std::size_t i = begin; i < end; ++i) {
      const auto path = std::filesystem::path(entries[i].image_path);
      const auto full = path.is_absolute() ? path : base_dir / path;
      out[i] = {image_to_tensor(decode_pgm(detail::read_file(full))),
                entries[i].labels};
    }
  };
  threads = std::max<std::size_t>(1, std::min(threads, entries.size()));
  if (threads == 1) {
    work(0, entries.size());
    return out;
  }
  std::vector<std::thread> pool;
  std::vector<std::exception_ptr> errors(threads);
  const std::size_t chunk = (entries.size() + threads - 1) / threads;
  for (std::size_t t = 0; t < threads; ++t) {
    pool.emplace_back([&, t] {
      try {
        work(t * chunk, std::min(entries.size(), (t + 1) * chunk));
      } catch (...) {
        errors[t] = std::current_exception();
      }
    });
  }
  for (auto& th : pool) th.join();
  for (auto& e : errors) {
    if (e) std::rethrow_exception(e);
  }
  return out;
}

struct Batch {
  Tensor images;
  std::vector<std::vector<int>> labels;  // [category][row]
  std::vector<std::size_t> indices;      // positions in the sample list
};

inline Batch gather_batch(std::span<const Sample> samples,
                          std::span<const std::size_t> indices) {
  if (indices.empty()) throw Error("empty batch");
  const Shape4 one = samples[indices[0]].image.shape();
  Batch b{Tensor({indices.size(), one.c, one.h, one.w}),
          std::vector<std::vector<int>>(samples[indices[0]].labels.size()),
          {indices.begin(), indices.end()}};
  const std::size_t stride = one.per_sample();
  for (std::size_t i = 0; i < indices.size(); ++i) {
    const Sample& s = samples[indices[i]];
    if (s.image.shape() != one) {
      throw ShapeError(detail::concat("sample ", indices[i], " has shape ",
                                      s.image.shape().str(), ", expected ",
                                      one.str()));
    }
    std::copy(s.image.data().begin(), s.image.data().end(),
              b.images.data().begin() + static_cast<std::ptrdiff_t>(i * stride));
    for (std::size_t k = 0; k < b.labels.size(); ++k) {
      b.labels[k].push_back(s.labels.at(k));
    }
  }
  return b;
}

// Partitions `order` (or 0..N-1 when empty) into batches; the final short
// batch is kept.
inline std::vector<Batch> make_batches(std::span<const Sample> samples,
                                       std::size_t batch_size,
                                       std::uint64_t seed, bool shuffle,
                                       std::vector<std::size_t> order = {}) {
  if (batch_size == 0) throw Error("batch_size must be >= 1");
  if (order.empty()) {
    order.resize(samples.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  }
  if (shuffle) detail::shuffle_in_place(order, seed);
  std::vector<Batch> batches;
  for (std::size_t start = 0; start < order.size(); start += batch_size) {
    const std::size_t end = std::min(order.size(), start + batch_size);
    batches.push_back(gather_batch(
        samples, std::span<const std::size_t>(order).subspan(start, end - start)));
  }
  return batches;
}

struct Split {
  std::vector<std::size_t> train;
  std::vector<std::size_t> validation;
};

// Stratified by the full label tuple so each combination lands in both
// splits whenever it has at least two samples.
inline Split stratified_split(std::span<const std::vector<int>> labels,
                              double train_fraction, std::uint64_t seed) {
  if (!(train_fraction > 0.0 && train_fraction < 1.0)) {
    throw Error("split fraction must lie in (0, 1)");
  }
  std::map<std::vector<int>, std::vector<std::size_t>> groups;
  for (std::size_t i = 0; i < labels.size(); ++i) groups[labels[i]].push_back(i);
  Split split;
  std::uint64_t g = 0;
  for (auto& [combo, members] : groups) {
    detail::shuffle_in_place(members, detail::splitmix64(seed + g++));
    std::size_t n_train = members.size();
    if (members.size() >= 2) {
      n_train = static_cast<std::size_t>(
          std::llround(train_fraction * static_cast<double>(members.size())));
      n_train = std::clamp<std::size_t>(n_train, 1, members.size() - 1);
    }
    split.train.insert(split.train.end(), members.begin(),
                       members.begin() + static_cast<std::ptrdiff_t>(n_train));
    split.validation.insert(
        split.validation.end(),
        members.begin() + static_cast<std::ptrdiff_t>(n_train), members.end());
  }
  std::sort(split.train.begin(), split.train.end());
  std::sort(split.validation.begin(), split.validation.end());
  return split;
}

}  // namespace mhforge
