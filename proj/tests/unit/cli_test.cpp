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

#include <sstream>

#include "mhforge/cli.hpp"
#include "test_util.hpp"

namespace mhforge {
namespace {

const std::filesystem::path kSamples(MHFORGE_SAMPLES_DIR);

struct CliRun {
  int code;
  std::string out;
  std::string err;
};

CliRun run(std::vector<std::string> args) {
  args.insert(args.begin(), "mhforge");
  std::ostringstream out, err;
  const int code = run_cli(args, out, err);
  return {code, out.str(), err.str()};
}

std::size_t lines(const std::string& s) {
  return static_cast<std::size_t>(std::count(s.begin(), s.end(), '\n'));
}

TEST(Cli, GenDataWritesManifestAndRunRecord) {
  const auto dir = testing::fresh_dir("cli_gen");
  const CliRun r = run({"gen-data", "--out", dir.string(), "--samples", "2",
                     "--seed", "9"});
  ASSERT_EQ(r.code, 0) << r.err;
  EXPECT_TRUE(std::filesystem::exists(dir / "manifest.txt"));
  const auto cats = parse_categories(detail::read_file(dir / "categories.txt"));
  EXPECT_EQ(parse_manifest(detail::read_file(dir / "manifest.txt"), cats).size(), 32u);
  const auto j = nlohmann::json::parse(detail::read_file(dir / "run_gen-data.json"));
  EXPECT_EQ(j.at("command"), "gen-data");
  EXPECT_EQ(j.at("seed"), 9);
  EXPECT_EQ(j.at("config").at("samples_per_combo"), 2);
  EXPECT_TRUE(j.contains("tool_version"));
  EXPECT_TRUE(j.contains("timestamp"));
  EXPECT_FALSE(j.at("artifacts").empty());
}

TEST(Cli, HardCodedBuildWithoutManifestIsUsageError) {
  const auto dir = testing::fresh_dir("cli_hc");
  detail::write_file(dir / "cats.txt", "a: x,y\nb: p,q\n");
  const CliRun r = run({"build", "--netspec",
                     (kSamples / "tinynet_backbone.netspec").string(),
                     "--categories", (dir / "cats.txt").string(), "--variant",
                     "hc", "--out", (dir / "out").string()});
  EXPECT_NE(r.code, 0);
  EXPECT_EQ(lines(r.err), 1u) << r.err;
  EXPECT_NE(r.err.find("--manifest"), std::string::npos);
  EXPECT_FALSE(std::filesystem::exists(dir / "out" / "model.netspec"));
}

TEST(Cli, LibraryErrorsAreOneLine) {
  const auto dir = testing::fresh_dir("cli_err");
  detail::write_file(dir / "bad.netspec", "input name=data shape=1x8x8\n"
                                          "conv name=c1 in=data kernel=0\n");
  detail::write_file(dir / "cats.txt", "a: x,y\n");
  const CliRun r = run({"build", "--netspec", (dir / "bad.netspec").string(),
                     "--categories", (dir / "cats.txt").string(), "--variant",
                     "proposed", "--out", (dir / "out").string()});
  EXPECT_EQ(r.code, 1);
  EXPECT_EQ(lines(r.err), 1u);
  EXPECT_NE(r.err.find("line 2"), std::string::npos) << r.err;
}

TEST(Cli, ParseErrorsExitNonZero) {
  EXPECT_NE(run({}).code, 0);
  EXPECT_NE(run({"frobnicate"}).code, 0);
  EXPECT_NE(run({"build", "--variant", "3m"}).code, 0);
  EXPECT_NE(run({"train", "--epochs", "many"}).code, 0);
  EXPECT_EQ(run({"--help"}).code, 0);
}

TEST(Cli, AnalyzeStanfordHeads) {
  const auto dir = testing::fresh_dir("cli_analyze");
  const auto spec = attach_heads(
      parse_netspec(detail::read_file(kSamples / "stanford_backbone.netspec")),
      parse_categories(detail::read_file(kSamples / "stanford_categories.txt")),
      "features");
  detail::write_file(dir / "s.netspec", serialize_netspec(spec));
  const CliRun r = run({"analyze", "--netspec", (dir / "s.netspec").string(),
                     "--format", "json", "--out", dir.string()});
  ASSERT_EQ(r.code, 0) << r.err;
  const auto j = nlohmann::json::parse(r.out);
  EXPECT_EQ(j.at("macc_trained"), 57344);
  EXPECT_EQ(j.at("coverage"), 384);
  EXPECT_TRUE(std::filesystem::exists(dir / "analysis.json"));
  EXPECT_TRUE(std::filesystem::exists(dir / "run_analyze.json"));
}

TEST(Cli, BuildDoesNotTouchInputs) {
  const auto dir = testing::fresh_dir("cli_inputs");
  ASSERT_EQ(run({"gen-data", "--out", (dir / "data").string(), "--samples", "1"}).code,
            0);
  const auto manifest = dir / "data" / "manifest.txt";
  const auto cats = dir / "data" / "categories.txt";
  const auto spec = kSamples / "tinynet_backbone.netspec";
  const std::string before = detail::read_file(manifest) + detail::read_file(cats) +
                             detail::read_file(spec);
  for (const char* v : {"proposed", "2m", "hc"}) {
    const CliRun r = run({"build", "--netspec", spec.string(), "--categories",
                       cats.string(), "--variant", v, "--manifest",
                       manifest.string(), "--out", (dir / v).string()});
    ASSERT_EQ(r.code, 0) << r.err;
  }
  EXPECT_EQ(detail::read_file(manifest) + detail::read_file(cats) +
                detail::read_file(spec),
            before);
  EXPECT_TRUE(std::filesystem::exists(dir / "2m" / "model_shape.netspec"));
  EXPECT_TRUE(std::filesystem::exists(dir / "2m" / "model_position.netspec"));
  EXPECT_TRUE(std::filesystem::exists(dir / "hc" / "hc_map.txt"));
}

}  // namespace
}  // namespace mhforge

TEST(Cli, UsageErrorsExitTwo) {
  std::ostringstream out, err;
  EXPECT_EQ(mhforge::run_cli({"mhforge", "train", "--bogus"}, out, err), 2);
  EXPECT_EQ(mhforge::run_cli({"mhforge", "eval", "--model", "/nonexistent.mhf",
                     "--manifest", "m", "--out", "o"},
                    out, err),
            2);
  EXPECT_EQ(mhforge::run_cli({"mhforge", "--help"}, out, err), 0);
}
