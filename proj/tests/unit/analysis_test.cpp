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

#include "mhforge/analysis.hpp"
#include "mhforge/surgery.hpp"
#include "test_util.hpp"

namespace mhforge {
namespace {

const std::filesystem::path kSamples(MHFORGE_SAMPLES_DIR);

LabelCategories stanford_categories() {
  return parse_categories(detail::read_file(kSamples / "stanford_categories.txt"));
}

NetworkSpec stanford_backbone() {
  return parse_netspec(detail::read_file(kSamples / "stanford_backbone.netspec"));
}

NetworkSpec tiny_backbone() {
  return parse_netspec(detail::read_file(kSamples / "tinynet_backbone.netspec"));
}

LabelCategories shape_position() {
  return parse_categories(
      "shape: square,circle,triangle,cross\n"
      "position: top_left,top_right,bottom_left,bottom_right\n");
}

// Test-side executor: runs a spec with the naive kernels and counts every
// multiply it performs.
std::uint64_t instrumented_multiplies(const NetworkSpec& spec) {
  const auto bundle_shapes = validate_shapes(spec);
  std::map<std::string, Tensor> act;
  std::uint64_t mults = 0;
  std::uint64_t seed = 1;
  for (const auto& l : spec.layers) {
    if (l.kind == LayerKind::input) {
      act[l.name] = testing::random_tensor({1, l.shape.c, l.shape.h, l.shape.w}, 7);
      continue;
    }
    if (l.kind == LayerKind::loss || l.kind == LayerKind::accuracy) continue;
    const Tensor& in = act.at(l.inputs[0]);
    switch (l.kind) {
      case LayerKind::conv: {
        const Tensor w = testing::random_tensor(
            {l.out_channels, in.shape().c, l.kernel, l.kernel}, ++seed);
        const auto r = testing::naive_conv(
            in, w, std::vector<double>(l.out_channels, 0.0), l.stride, l.pad);
        mults += r.multiplies;
        act[l.name] = r.output;
        break;
      }
      case LayerKind::fc: {
        const Tensor w = testing::random_tensor(
            {l.out_features, in.shape().per_sample(), 1, 1}, ++seed);
        act[l.name] = testing::naive_fc(
            in, w, std::vector<double>(l.out_features, 0.0), &mults);
        break;
      }
      case LayerKind::relu:
        act[l.name] = relu(in);
        break;
      case LayerKind::maxpool:
        act[l.name] = maxpool2d(in, l.kernel, l.stride).output;
        break;
      case LayerKind::gavgpool:
        act[l.name] = global_avgpool(in);
        break;
      default:
        break;
    }
    const Shape3 want = bundle_shapes.at(l.name);
    const Shape4 got = act[l.name].shape();
    EXPECT_EQ((Shape3{got.c, got.h, got.w}), want) << l.name;
  }
  return mults;
}

TEST(Macc, StanfordHeadsOnFrozenFeatures) {
  const NetworkSpec s = attach_heads(stanford_backbone(), stanford_categories(),
                                     "features");
  const CostBreakdown b = analyze(s);
  EXPECT_EQ(b.macc_trained, 57344u);
  EXPECT_EQ(b.macc_total, 57344u);
  EXPECT_EQ(b.coverage, 384u);
}

TEST(Macc, StanfordHardCodedWith105Classes) {
  std::vector<std::vector<int>> observed;
  for (int i = 0; i < 105; ++i) observed.push_back({i / 8, i % 8});
  const auto hc = build_hard_coded(stanford_backbone(), stanford_categories(),
                                   observed, "features");
  ASSERT_EQ(hc.map.size(), 105u);
  EXPECT_EQ(analyze(hc.spec).macc_trained, 107520u);
  EXPECT_EQ(analyze(hc.spec).coverage, 105u);
}

TEST(Macc, MatchesInstrumentedCounterOnRandomSpecs) {
  for (std::uint64_t seed = 0; seed < 80; ++seed) {
    const NetworkSpec spec = testing::random_spec(seed);
    EXPECT_EQ(count_macc(spec, validate_shapes(spec)).macc_total,
              instrumented_multiplies(spec))
        << serialize_netspec(spec);
  }
}

TEST(Macc, TrainedCountsOnlyUnfrozenLayers) {
  for (std::uint64_t seed = 0; seed < 50; ++seed) {
    const NetworkSpec spec = testing::random_spec(seed);
    const CostBreakdown b = analyze(spec);
    std::uint64_t trained = 0;
    for (const auto& l : b.layers) {
      const LayerSpec& ls = *spec.find(l.name);
      EXPECT_EQ(l.trained, has_params(ls.kind) && !ls.frozen);
      if (l.trained) trained += l.macc;
      if (!has_params(ls.kind)) {
        EXPECT_EQ(l.macc, 0u);
      }
    }
    EXPECT_EQ(b.macc_trained, trained);
  }
}

TEST(Params, MatchInitializedTensorSizes) {
  for (std::uint64_t seed = 0; seed < 50; ++seed) {
    const NetworkSpec spec = testing::random_spec(seed);
    const ModelBundle b = initialize_bundle(spec, {}, seed);
    std::uint64_t n = 0;
    for (const auto& [name, p] : b.params) n += p.count();
    EXPECT_EQ(count_params(spec), n);
  }
}

TEST(Params, TinyBackboneFigures) {
  const NetworkSpec s = attach_heads(tiny_backbone(), shape_position(), "p4");
  const CostBreakdown b = analyze(s);
  std::uint64_t backbone = 0, heads = 0;
  for (const auto& l : b.layers) (l.trained ? heads : backbone) += l.params;
  EXPECT_EQ(backbone, 15136u);
  EXPECT_EQ(heads, 2u * 516u);
  EXPECT_EQ(b.params_total, 16168u);
}

TEST(Size, TwoModelIsTwoBackbonesPlusHeads) {
  const auto cats = shape_position();
  const NetworkSpec prop = attach_heads(tiny_backbone(), cats, "p4");
  const auto two = build_two_model(tiny_backbone(), cats, "p4");
  std::vector<CostBreakdown> parts;
  for (const auto& s : two) parts.push_back(analyze(s));
  const CostBreakdown sum = combine_independent(parts);
  const std::uint64_t backbone = count_params(tiny_backbone());
  EXPECT_EQ(sum.params_total, 2 * backbone + 2 * 516);
  EXPECT_EQ(analyze(prop).params_total, backbone + 2 * 516);
  EXPECT_EQ(sum.coverage, 16u);
  const std::uint64_t backbone_macc = analyze(tiny_backbone()).macc_total;
  EXPECT_EQ(sum.macc_total, 2 * backbone_macc + 2 * 512);
  EXPECT_EQ(analyze(prop).macc_total, backbone_macc + 2 * 512);
}

// With B backbone and H total head parameters, proposed/2M = (B+H)/(2B+H).
// The bound 0.52 holds once B > 12H; at B = 10H the ratio is 11/21.
TEST(Size, ProposedToTwoModelRatioBound) {
  for (std::size_t width : {64u, 256u, 1024u}) {
    const NetworkSpec b = parse_netspec(
        "input name=x shape=" + std::to_string(width) + "x1x1\n"
        "fc name=f1 in=x out=" + std::to_string(width) + "\n");
    LabelCategories cats = parse_categories("a: p,q\nb: r,s\n");
    const NetworkSpec prop = attach_heads(b, cats, "f1");
    const auto two = build_two_model(b, cats, "f1");
    std::vector<CostBreakdown> parts;
    for (const auto& s : two) parts.push_back(analyze(s, {cats, {}}));
    const double backbone = static_cast<double>(count_params(b));
    const double heads = static_cast<double>(count_params(prop)) - backbone;
    const double ratio =
        static_cast<double>(analyze(prop, {cats, {}}).params_total) /
        static_cast<double>(combine_independent(parts).params_total);
    EXPECT_NEAR(ratio, (backbone + heads) / (2 * backbone + heads), 1e-12);
    if (backbone > 12 * heads) {
      EXPECT_LT(ratio, 0.52);
    }
  }
  EXPECT_GT(11.0 / 21.0, 0.52);
}

TEST(Coverage, ProductOfClassCounts) {
  const std::vector<std::size_t> stanford{48, 8};
  EXPECT_EQ(class_coverage(stanford), 384u);
  EXPECT_EQ(class_coverage(stanford_categories()), 384u);
  EXPECT_EQ(class_coverage(std::vector<std::size_t>{}), 1u);
  const std::vector<std::size_t> huge{1u << 20, 1u << 20, 1u << 20, 1u << 20};
  EXPECT_THROW(class_coverage(huge), Error);
}

TEST(Compare, RowStructureAndRatios) {
  const auto cats = shape_position();
  std::map<VariantKind, CostBreakdown> costs;
  costs[VariantKind::proposed] = analyze(attach_heads(tiny_backbone(), cats, "p4"));
  std::vector<CostBreakdown> parts;
  for (const auto& s : build_two_model(tiny_backbone(), cats, "p4")) {
    parts.push_back(analyze(s));
  }
  costs[VariantKind::two_model] = combine_independent(parts);
  std::vector<std::vector<int>> obs;
  for (int s = 0; s < 4; ++s)
    for (int p = 0; p < 4; ++p) obs.push_back({s, p});
  costs[VariantKind::hard_coded] =
      analyze(build_hard_coded(tiny_backbone(), cats, obs, "p4").spec);

  std::map<VariantKind, VariantMetrics> metrics;
  metrics[VariantKind::proposed] = {{{"shape", 0.99}, {"position", 1.0}},
                                    {{"shape", 0.1}, {"position", 0.01}},
                                    std::nullopt, 2.0};
  metrics[VariantKind::two_model] = {{{"shape", 0.98}, {"position", 1.0}},
                                     {{"shape", 0.12}, {"position", 0.02}},
                                     std::nullopt, 4.0};
  metrics[VariantKind::hard_coded] = {{{"shape", 0.97}, {"position", 0.99}},
                                      {}, 0.2, 2.1};
  const std::vector<std::string> order{"shape", "position"};
  const ComparisonReport r = compare_variants(costs, metrics, order);
  std::vector<std::string> names;
  for (const auto& row : r.rows) names.push_back(row.metric);
  EXPECT_EQ(names, (std::vector<std::string>{
                       "Accuracy/shape", "Accuracy/position", "Loss/shape",
                       "Loss/position", "Loss/hc", "Size (bytes)", "#Params",
                       "#Trained-MACC", "#MACC", "Latency (s)", "Classes",
                       "Ratio Trained-MACC", "Ratio MACC", "Ratio Params",
                       "Ratio Size", "Ratio Latency"}));
  EXPECT_DOUBLE_EQ(*r.find("Ratio Latency")->values[1], 0.5);
  EXPECT_DOUBLE_EQ(*r.find("Ratio MACC")->values[1], 0.5);
  EXPECT_DOUBLE_EQ(*r.find("Classes")->values[2], 16.0);
  EXPECT_FALSE(r.find("Loss/hc")->values[0].has_value());
  EXPECT_DOUBLE_EQ(*r.find("Ratio Params")->values[0], 1.0);

  costs.erase(VariantKind::hard_coded);
  EXPECT_THROW(compare_variants(costs, metrics, order), Error);
}

TEST(Compare, SafeRatio) {
  EXPECT_EQ(*safe_ratio(0.0, 0.0), 1.0);
  EXPECT_FALSE(safe_ratio(1.0, 0.0));
  EXPECT_EQ(round_to(0.12345, 3), 0.123);
}

}  // namespace
}  // namespace mhforge
