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
#include <gtest/gtest.h>

#include <set>

#include "mhforge/dataset.hpp"
#include "test_util.hpp"

namespace mhforge {
namespace {

TEST(Categories, ParseAndFormatRoundTrip) {
  const auto cats = parse_categories("# comment\nmake: a, b ,c\ntype: x,y\n");
  EXPECT_EQ(cats.names, (std::vector<std::string>{"make", "type"}));
  EXPECT_EQ(cats.class_counts(), (std::vector<std::size_t>{3, 2}));
  EXPECT_EQ(cats.class_names[0][1], "b");
  EXPECT_EQ(parse_categories(format_categories(cats)), cats);
  EXPECT_EQ(cats.index_of("type"), 1u);
  EXPECT_FALSE(cats.index_of("colour"));
}

TEST(Categories, RejectsInvalid) {
  EXPECT_THROW(parse_categories(""), Error);
  EXPECT_THROW(parse_categories("make a,b"), ParseError);
  EXPECT_THROW(parse_categories("make: a,a"), Error);
  EXPECT_THROW(parse_categories("make: a,,b"), Error);
  EXPECT_THROW(parse_categories("make: a\nmake: b"), Error);
}

TEST(Manifest, ParsesAndRoundTrips) {
  const auto cats = parse_categories("make: a,b,c\ntype: x,y\n");
  const auto entries = parse_manifest("img/0.pgm 2 1\n\n  img/1.pgm\t0 0\n", cats);
  ASSERT_EQ(entries.size(), 2u);
  EXPECT_EQ(entries[0].image_path, "img/0.pgm");
  EXPECT_EQ(entries[0].labels, (std::vector<int>{2, 1}));
  EXPECT_EQ(parse_manifest(format_manifest(entries), cats), entries);
}

TEST(Manifest, ErrorsCarryLineNumbers) {
  const auto cats = parse_categories("make: a,b,c\ntype: x,y\n");
  auto line_of = [&](const std::string& text) -> std::size_t {
    try {
      parse_manifest(text, cats);
    } catch (const ParseError& e) {
      return e.line();
    }
    return 0;
  };
  EXPECT_EQ(line_of("a.pgm 0 0\nb.pgm 0\n"), 2u);
  EXPECT_EQ(line_of("a.pgm 0 0\nb.pgm 0 0\nc.pgm 3 0\n"), 3u);
  EXPECT_EQ(line_of("a.pgm 0 two\n"), 1u);
  EXPECT_EQ(line_of("a.pgm -1 0\n"), 1u);
  EXPECT_EQ(line_of("a.pgm 0 0 0\n"), 1u);
}

TEST(Pgm, EncodeDecodeRoundTrip) {
  GrayImage img{3, 2, {0, 1, 2, 253, 254, 255}};
  const std::string bytes = encode_pgm(img);
  EXPECT_EQ(decode_pgm(bytes), img);
  const Tensor t = image_to_tensor(img);
  EXPECT_EQ(t.shape(), (Shape4{1, 1, 2, 3}));
  EXPECT_DOUBLE_EQ(t[5], 1.0);
  EXPECT_THROW(decode_pgm("P2\n1 1\n255\nx"), FormatError);
  EXPECT_THROW(decode_pgm("P5\n4 4\n255\nab"), FormatError);
  EXPECT_THROW(decode_pgm("P5\n1 1\n65535\nab"), FormatError);
}

// Glyph pixels must sit in the labelled quadrant: the intensity centroid
// lies inside it.
TEST(Synthetic, CentroidLandsInLabelledQuadrant) {
  SyntheticConfig cfg;
  cfg.noise_std = 0.0;
  for (std::size_t s = 0; s < cfg.shapes.size(); ++s) {
    for (std::size_t p = 0; p < cfg.positions.size(); ++p) {
      const GrayImage img = render_glyph(cfg, s, p, 0);
      double sx = 0.0, sy = 0.0, total = 0.0;
      for (std::size_t y = 0; y < img.height; ++y)
        for (std::size_t x = 0; x < img.width; ++x) {
          const double v = img.pixels[y * img.width + x];
          sx += v * (x + 0.5);
          sy += v * (y + 0.5);
          total += v;
        }
      ASSERT_GT(total, 0.0);
      const bool right = sx / total > 16.0;
      const bool bottom = sy / total > 16.0;
      const std::string& pos = cfg.positions[p];
      EXPECT_EQ(right, pos.find("right") != std::string::npos) << pos;
      EXPECT_EQ(bottom, pos.find("bottom") != std::string::npos) << pos;
    }
  }
}

TEST(Synthetic, ShapesAreDistinguishable) {
  SyntheticConfig cfg;
  cfg.noise_std = 0.0;
  std::set<std::vector<std::uint8_t>> seen;
  for (std::size_t s = 0; s < cfg.shapes.size(); ++s) {
    seen.insert(render_glyph(cfg, s, 0, 0).pixels);
  }
  EXPECT_EQ(seen.size(), cfg.shapes.size());
}

TEST(Synthetic, GeneratesDeterministicBalancedSet) {
  SyntheticConfig cfg;
  cfg.samples_per_combo = 3;
  const auto dir_a = testing::fresh_dir("synthetic_a");
  const auto dir_b = testing::fresh_dir("synthetic_b");
  const auto a = generate_synthetic(cfg, dir_a);
  const auto b = generate_synthetic(cfg, dir_b);
  ASSERT_EQ(a.entries.size(), 48u);
  EXPECT_EQ(a.manifest_text, b.manifest_text);
  for (const auto& e : a.entries) {
    EXPECT_EQ(detail::read_file(dir_a / e.image_path),
              detail::read_file(dir_b / e.image_path));
  }
  std::map<std::vector<int>, int> counts;
  for (const auto& e : a.entries) counts[e.labels]++;
  EXPECT_EQ(counts.size(), 16u);
  for (const auto& [combo, n] : counts) EXPECT_EQ(n, 3);
  EXPECT_EQ(parse_manifest(a.manifest_text, a.categories), a.entries);

  cfg.seed = 2;
  const auto dir_c = testing::fresh_dir("synthetic_c");
  const auto c = generate_synthetic(cfg, dir_c);
  EXPECT_NE(detail::read_file(dir_a / a.entries[0].image_path),
            detail::read_file(dir_c / c.entries[0].image_path));
}

TEST(Synthetic, RejectsBadConfig) {
  SyntheticConfig cfg;
  cfg.image_size = 4;
  EXPECT_THROW(generate_synthetic(cfg, testing::fresh_dir("bad")), Error);
  cfg = {};
  cfg.shapes = {"square", "hexagon"};
  EXPECT_THROW(generate_synthetic(cfg, testing::fresh_dir("bad")), Error);
}

TEST(LoadSamples, ThreadCountDoesNotChangeResult) {
  SyntheticConfig cfg;
  cfg.samples_per_combo = 2;
  const auto dir = testing::fresh_dir("load");
  const auto ds = generate_synthetic(cfg, dir);
  const auto one = load_samples(ds.entries, dir, 1);
  const auto four = load_samples(ds.entries, dir, 4);
  ASSERT_EQ(one.size(), 32u);
  for (std::size_t i = 0; i < one.size(); ++i) {
    EXPECT_EQ(one[i].image, four[i].image);
    EXPECT_EQ(one[i].labels, ds.entries[i].labels);
  }
  EXPECT_EQ(one[0].image.shape(), (Shape4{1, 1, 32, 32}));
  std::vector<ManifestEntry> missing{{"images/nope.pgm", {0, 0}}};
  EXPECT_THROW(load_samples(missing, dir, 1), Error);
}

std::vector<Sample> toy_samples(std::size_t n) {
  std::vector<Sample> out;
  for (std::size_t i = 0; i < n; ++i) {
    out.push_back({Tensor({1, 1, 2, 2}, static_cast<double>(i)),
                   {static_cast<int>(i % 3), static_cast<int>(i % 2)}});
  }
  return out;
}

TEST(Batching, CoversEverySampleOnce) {
  const auto samples = toy_samples(10);
  const auto batches = make_batches(samples, 4, 7, true);
  ASSERT_EQ(batches.size(), 3u);
  EXPECT_EQ(batches.back().indices.size(), 2u);
  std::multiset<std::size_t> seen;
  for (const auto& b : batches) {
    for (std::size_t r = 0; r < b.indices.size(); ++r) {
      const std::size_t i = b.indices[r];
      seen.insert(i);
      EXPECT_EQ(b.images.at(r, 0, 1, 1), static_cast<double>(i));
      EXPECT_EQ(b.labels[0][r], samples[i].labels[0]);
      EXPECT_EQ(b.labels[1][r], samples[i].labels[1]);
    }
  }
  EXPECT_EQ(seen, (std::multiset<std::size_t>{0, 1, 2, 3, 4, 5, 6, 7, 8, 9}));
}

TEST(Batching, ShuffleDependsOnlyOnSeed) {
  const auto samples = toy_samples(20);
  auto order = [&](std::uint64_t seed) {
    std::vector<std::size_t> out;
    for (const auto& b : make_batches(samples, 6, seed, true)) {
      out.insert(out.end(), b.indices.begin(), b.indices.end());
    }
    return out;
  };
  EXPECT_EQ(order(3), order(3));
  EXPECT_NE(order(3), order(4));
  const auto plain = make_batches(samples, 6, 3, false);
  EXPECT_EQ(plain[0].indices, (std::vector<std::size_t>{0, 1, 2, 3, 4, 5}));
  EXPECT_THROW(make_batches(samples, 0, 1, false), Error);
}

TEST(StratifiedSplit, EveryComboInBothHalves) {
  std::vector<std::vector<int>> labels;
  for (int c = 0; c < 16; ++c)
    for (int i = 0; i < 16; ++i) labels.push_back({c / 4, c % 4});
  const Split s = stratified_split(labels, 0.8, 1);
  EXPECT_EQ(s.train.size(), 208u);
  EXPECT_EQ(s.validation.size(), 48u);
  std::set<std::size_t> all(s.train.begin(), s.train.end());
  for (std::size_t v : s.validation) EXPECT_TRUE(all.insert(v).second);
  EXPECT_EQ(all.size(), 256u);
  std::set<std::vector<int>> val_combos;
  for (std::size_t v : s.validation) val_combos.insert(labels[v]);
  EXPECT_EQ(val_combos.size(), 16u);
  EXPECT_EQ(stratified_split(labels, 0.8, 1).train, s.train);
  EXPECT_NE(stratified_split(labels, 0.8, 2).train, s.train);
  EXPECT_THROW(stratified_split(labels, 1.0, 1), Error);
}

}  // namespace
}  // namespace mhforge
