// Copyright 2026 The cexplain Authors.
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//      http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#include "cexplain/cli.h"

#include <gmock/gmock.h>
#include <gtest/gtest.h>

#include <map>
#include <sstream>

#include "cexplain/io.h"
#include "cexplain/questionnaire.h"
#include "survey_fixture.h"
#include "test_util.h"

namespace cexplain {
namespace {

namespace fs = std::filesystem;
using testing::fixture_path;
using testing::source_dir;
using testing::TempDir;
using ::testing::HasSubstr;

struct CliRun {
  int code = 0;
  std::string out, err;
};

CliRun run(std::vector<std::string> args, std::map<std::string, std::string> env = {}) {
  std::ostringstream out, err;
  const EnvLookup lookup = [env](const std::string& name) -> std::optional<std::string> {
    const auto it = env.find(name);
    if (it == env.end()) return std::nullopt;
    return it->second;
  };
  const int code = run_cli(args, out, err, lookup);
  return {code, out.str(), err.str()};
}

std::vector<std::string> explain_args(const fs::path& out) {
  return {"explain",
          "--image",
          fixture_path("toy/images/image_0.png").string(),
          "--model",
          fixture_path("toy").string(),
          "--layer",
          "relu2",
          "--refset",
          fixture_path("toy/refset").string(),
          "--llm",
          "mock",
          "--out",
          out.string()};
}

std::map<std::string, std::string> directory_bytes(const fs::path& dir) {
  std::map<std::string, std::string> out;
  for (const auto& e : fs::directory_iterator(dir)) {
    const auto bytes = read_binary_file(e.path());
    out[e.path().filename().string()] = std::string(bytes.begin(), bytes.end());
  }
  return out;
}

TEST(CliTest, HelpAndUsageErrors) {
  CliRun r = run({"--help"});
  EXPECT_EQ(r.code, 0);
  EXPECT_THAT(r.out, HasSubstr("questionnaire"));

  r = run({"explain", "--model", "m", "--layer", "l", "--refset", "r", "--out", "o"});
  EXPECT_EQ(r.code, 1);
  EXPECT_THAT(r.err, HasSubstr("--image is required"));
  EXPECT_THAT(r.err, HasSubstr("Usage:"));

  r = run({"explain", "--bogus", "1"});
  EXPECT_EQ(r.code, 1);
  EXPECT_THAT(r.err, HasSubstr("Usage:"));

  EXPECT_EQ(run({}).code, 1);
  EXPECT_EQ(run({"questionnaire"}).code, 1);

  auto args = explain_args("/tmp/unused");
  args.push_back("--top-n");
  args.push_back("five");
  EXPECT_EQ(run(args).code, 1);
  args = explain_args("/tmp/unused");
  args.push_back("--llm");
  args.push_back("oracle");
  EXPECT_EQ(run(args).code, 1);
}

TEST(CliTest, ExplainMatchesGoldenBundle) {
  TempDir dir("cli_explain");
  const CliRun r = run(explain_args(dir.path() / "bundle"));
  ASSERT_EQ(r.code, 0) << r.err;
  const auto golden = directory_bytes(source_dir() / "tests" / "golden" / "toy_image_0");
  EXPECT_EQ(directory_bytes(dir.path() / "bundle"), golden);
}

TEST(CliTest, StageFailureExitsTwo) {
  TempDir dir("cli_stage");
  auto args = explain_args(dir.path());
  args[2] = "missing.png";
  CliRun r = run(args);
  EXPECT_EQ(r.code, 2);
  EXPECT_THAT(r.err, HasSubstr("stage load_image"));

  args = explain_args(dir.path());
  args[4] = "no_model_here";
  r = run(args);
  EXPECT_EQ(r.code, 2);
  EXPECT_THAT(r.err, HasSubstr("stage load_model"));
}

TEST(CliTest, FlagBeatsEnvBeatsConfig) {
  TempDir dir("cli_precedence");
  write_text_file(dir.path() / "config.json",
                  R"({"top-n": 4, "explain": {"prototypes": 2}, "prototypes": 5})");
  auto count_concepts = [&](const fs::path& out) {
    const auto m = nlohmann::json::parse(read_text_file(out / "manifest.json"));
    return std::pair{m["concepts"].size(), m["concepts"][0]["prototypes"].size()};
  };

  auto args = explain_args(dir.path() / "a");
  args.insert(args.begin(), {"--config", (dir.path() / "config.json").string()});
  ASSERT_EQ(run(args).code, 0);
  EXPECT_EQ(count_concepts(dir.path() / "a"), (std::pair<std::size_t, std::size_t>{4, 2}));

  args = explain_args(dir.path() / "b");
  ASSERT_EQ(run(args, {{"CEXPLAIN_CONFIG", (dir.path() / "config.json").string()},
                       {"CEXPLAIN_TOP_N", "3"}})
                .code,
            0);
  EXPECT_EQ(count_concepts(dir.path() / "b"), (std::pair<std::size_t, std::size_t>{3, 2}));

  args = explain_args(dir.path() / "c");
  args.insert(args.end(), {"--top-n", "2"});
  ASSERT_EQ(run(args, {{"CEXPLAIN_TOP_N", "3"}, {"CEXPLAIN_LAYER", "fc"}}).code, 0);
  EXPECT_EQ(count_concepts(dir.path() / "c"), (std::pair<std::size_t, std::size_t>{2, 6}));

  const CliRun from_env = run({"explain", "--out", (dir.path() / "d").string()},
                           {{"CEXPLAIN_IMAGE", fixture_path("toy/images/image_1.png").string()},
                            {"CEXPLAIN_MODEL", fixture_path("toy").string()},
                            {"CEXPLAIN_LAYER", "relu2"},
                            {"CEXPLAIN_REFSET", fixture_path("toy/refset").string()}});
  EXPECT_EQ(from_env.code, 0) << from_env.err;
}

TEST(CliTest, Prototypes) {
  TempDir dir("cli_protos");
  const CliRun r = run({"prototypes", "--model", fixture_path("toy").string(), "--layer", "relu2",
                     "--channel", "3", "--refset", fixture_path("toy/refset").string(), "--k",
                     "4", "--out", dir.path().string()});
  ASSERT_EQ(r.code, 0) << r.err;
  const auto m = nlohmann::json::parse(read_text_file(dir.path() / "prototypes.json"));
  EXPECT_EQ(m["prototypes"].size(), 4u);
  EXPECT_EQ(m["channel"], 3);
  EXPECT_TRUE(fs::exists(dir.path() / "proto_4_overlay.png"));
}

TEST(CliTest, QuestionnaireBuildAndAggregate) {
  TempDir dir("cli_questionnaire");
  std::vector<std::string> args = {"questionnaire", "build", "--bundles"};
  std::vector<std::string> names;
  for (int i = 0; i < 9; ++i) names.push_back("bundle_" + std::to_string(i));
  const auto bundles = testing::synthetic_bundles(names, 5);
  for (const NamedBundle& nb : bundles) {
    save_bundle(nb.bundle, dir.path() / "bundles" / nb.id);
    args.push_back((dir.path() / "bundles" / nb.id).string());
  }
  const fs::path qfile = dir.path() / "survey" / "questionnaire.json";
  args.insert(args.end(), {"--seed", "0", "--n", "8", "--out", qfile.string()});
  CliRun r = run(args);
  ASSERT_EQ(r.code, 0) << r.err;
  const Questionnaire q = load_questionnaire(qfile);
  EXPECT_EQ(q.sections.size(), 8u);
  EXPECT_EQ(q.question_count(), 184u);
  EXPECT_EQ(q.sections[0].bundle_id, sample_bundles(names, 0, 8)[0]);
  EXPECT_TRUE(fs::exists(dir.path() / "survey" / "assets" / q.sections[7].image));

  const Questionnaire small = testing::survey_questionnaire();
  save_questionnaire(small, dir.path() / "small.json");
  std::string lines;
  for (const ResponseSet& s : testing::survey_responses()) {
    lines += response_to_json(s).dump() + "\n";
  }
  write_text_file(dir.path() / "responses.jsonl", lines);
  r = run({"aggregate", "--responses", (dir.path() / "responses.jsonl").string(),
           "--questionnaire", (dir.path() / "small.json").string(), "--kind", "conditional",
           "--given", "pattern,highlighted_areas", "--out", (dir.path() / "t.json").string()});
  ASSERT_EQ(r.code, 0) << r.err;
  const std::vector<QuestionType> given = {QuestionType::kPattern,
                                           QuestionType::kHighlightedAreas};
  EXPECT_EQ(read_text_file(dir.path() / "t.json"),
            render_aggregation(aggregate_conditional(small, testing::survey_responses(), given)));
  EXPECT_THAT(r.out, HasSubstr("useful explanation & 71 & 14 & 14"));

  r = run({"aggregate", "--responses", (dir.path() / "responses.jsonl").string(),
           "--questionnaire", (dir.path() / "small.json").string(), "--out",
           (dir.path() / "o.json").string()});
  EXPECT_THAT(r.out, HasSubstr("pattern & 75 & 17 & 8"));
  EXPECT_EQ(run({"aggregate", "--responses", "x", "--questionnaire", "y", "--kind", "conditional",
                 "--out", "z"})
                .code,
            1);
  EXPECT_EQ(run({"aggregate", "--responses", "x", "--questionnaire", "y", "--out", "z"}).code, 2);
}

TEST(CliTest, ServeRejectsBadQuestionnaire) {
  TempDir dir("cli_serve");
  const CliRun r = run({"serve", "--questionnaire", (dir.path() / "none.json").string(), "--assets",
                     dir.path().string(), "--responses", (dir.path() / "r.jsonl").string(),
                     "--port", "0"});
  EXPECT_EQ(r.code, 2);
  EXPECT_THAT(r.err, HasSubstr("stage serve"));
}

}  // namespace
}  // namespace cexplain
