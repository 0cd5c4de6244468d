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

#include <cmath>

#include "mhforge/bench.hpp"
#include "mhforge/surgery.hpp"
#include "test_util.hpp"

namespace mhforge {
namespace {

TEST(SummarizeRuns, MatchesHandStatistics) {
  const std::vector<double> runs{0.004, 0.001, 0.003, 0.002};
  const LatencyStats s = summarize_runs(runs, 10);
  EXPECT_EQ(s.runs, 4u);
  EXPECT_NEAR(s.total_seconds, 0.010, 1e-15);
  EXPECT_NEAR(s.mean_ms, 2.5, 1e-12);
  EXPECT_NEAR(s.median_ms, 2.5, 1e-12);
  EXPECT_NEAR(s.min_ms, 1.0, 1e-12);
  EXPECT_NEAR(s.max_ms, 4.0, 1e-12);
  EXPECT_NEAR(s.std_ms, std::sqrt(1.25), 1e-12);
  EXPECT_NEAR(s.per_image_ms, 0.25, 1e-12);
  EXPECT_NEAR(s.throughput_images_per_s, 4000.0, 1e-6);
  const std::vector<double> odd{0.003, 0.001, 0.002};
  EXPECT_NEAR(summarize_runs(odd, 1).median_ms, 2.0, 1e-12);
  EXPECT_THROW(summarize_runs({}, 1), Error);
}

struct BenchFixture : ::testing::Test {
  NetworkSpec spec = parse_netspec(
      "input name=x shape=1x6x6\nconv name=c in=x out_channels=2 kernel=3\n"
      "relu name=r in=c\nfc name=head_a in=r out=3 head=a\n"
      "fc name=head_b in=r out=2 head=b\n"
      "loss name=loss_a in=head_a label=a\nloss name=loss_b in=head_b label=b\n"
      "accuracy name=acc_a in=head_a label=a\n"
      "accuracy name=acc_b in=head_b label=b\n");
  ModelBundle bundle = initialize_bundle(spec, {}, 3);
  std::vector<Tensor> images;

  void SetUp() override {
    for (std::uint64_t i = 0; i < 7; ++i) {
      images.push_back(testing::random_tensor({1, 1, 6, 6}, i));
    }
  }
};

TEST_F(BenchFixture, PredictionsStableAndCounted) {
  const std::vector<const ModelBundle*> models{&bundle, &bundle};
  const LatencyResult r = measure_latency(models, images, 5);
  EXPECT_EQ(r.run_seconds.size(), 5u);
  EXPECT_EQ(r.stats.runs, 5u);
  EXPECT_EQ(r.stats.images, 7u);
  ASSERT_EQ(r.predictions.size(), 7u);
  for (std::size_t i = 0; i < images.size(); ++i) {
    ASSERT_EQ(r.predictions[i].size(), 4u);
    const ForwardCache c = forward(bundle, images[i]);
    EXPECT_EQ(r.predictions[i][0], argmax_rows(c.activations.at("head_a"))[0]);
    EXPECT_EQ(r.predictions[i][3], argmax_rows(c.activations.at("head_b"))[0]);
  }
  for (double s : r.run_seconds) EXPECT_GT(s, 0.0);
  const LatencyResult threaded = measure_latency(models, images, 2, 3);
  EXPECT_EQ(threaded.predictions, r.predictions);
}

TEST_F(BenchFixture, RejectsBadArguments) {
  const std::vector<const ModelBundle*> models{&bundle};
  EXPECT_THROW(measure_latency(models, images, 0), Error);
  EXPECT_THROW(measure_latency({}, images, 1), Error);
  EXPECT_THROW(measure_latency(models, {}, 1), Error);
  std::vector<Tensor> wrong{Tensor({1, 1, 5, 5})};
  EXPECT_THROW(measure_latency(models, wrong, 1), ShapeError);
}

TEST(TimingsCsv, OneRowPerRun) {
  const std::vector<double> runs{0.5, 0.25};
  EXPECT_EQ(format_run_timings_csv(runs),
            "run_index,seconds\n0,0.500000000\n1,0.250000000\n");
}

ComparisonReport sample_report() {
  ComparisonReport r;
  r.rows.push_back({"Accuracy/shape", {0.98765, 0.5, std::nullopt}, 4});
  r.rows.push_back({"Size (bytes)", {65730, 127012, 69786}, 0});
  r.rows.push_back({"Ratio Size", {1.0, 0.5175, 0.94188}, 3});
  return r;
}

TEST(Report, JsonRoundTripsRoundedValues) {
  const ComparisonReport r = sample_report();
  const ComparisonReport back =
      parse_report_json(render_report(r, ReportFormat::json));
  ASSERT_EQ(back.rows.size(), r.rows.size());
  EXPECT_EQ(*back.rows[0].values[0], 0.9877);
  EXPECT_FALSE(back.rows[0].values[2].has_value());
  EXPECT_EQ(*back.rows[2].values[2], 0.942);
  EXPECT_EQ(back.rows[1].decimals, 0);
}

TEST(Report, FormatsCarryIdenticalNumbers) {
  const ComparisonReport r = sample_report();
  const std::string csv = render_report(r, ReportFormat::csv);
  const std::string text = render_report(r, ReportFormat::text);
  const ComparisonReport js = parse_report_json(render_report(r, ReportFormat::json));
  EXPECT_EQ(csv.substr(0, csv.find('\n')), "metric,proposed,2m,hc");
  for (const auto& row : js.rows) {
    for (const auto& cell : row.values) {
      if (!cell) continue;
      const std::string s = format_cell(cell, row.decimals);
      EXPECT_NE(csv.find(s), std::string::npos) << s;
      EXPECT_NE(text.find(s), std::string::npos) << s;
    }
  }
  EXPECT_NE(csv.find("Accuracy/shape,0.9877,0.5000,\n"), std::string::npos);
  EXPECT_NE(text.find("| Metric"), std::string::npos);
  EXPECT_NE(text.find("Proposed"), std::string::npos);
}

TEST(Report, EmitWritesFile) {
  const auto dir = testing::fresh_dir("report");
  const std::size_t n = emit_report(sample_report(), ReportFormat::csv, dir / "r.csv");
  EXPECT_EQ(std::filesystem::file_size(dir / "r.csv"), n);
  EXPECT_EQ(parse_report_format("json"), ReportFormat::json);
  EXPECT_THROW(parse_report_format("xml"), Error);
}

}  // namespace
}  // namespace mhforge
