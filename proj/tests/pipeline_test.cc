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

#include "cexplain/pipeline.h"

#include <gmock/gmock.h>
#include <gtest/gtest.h>

#include <cstdlib>
#include <map>

#include "cexplain/io.h"
#include "test_util.h"

namespace cexplain {
namespace {

namespace fs = std::filesystem;
using testing::fixture_path;
using testing::source_dir;
using testing::TempDir;
using ::testing::HasSubstr;
using ::testing::Not;

struct Toy {
  ModelGraph model = load_model_files(fixture_path("toy"));
  ReferenceSet refset = load_reference_set(fixture_path("toy/refset"));
};

const Toy& toy() {
  static const Toy t;
  return t;
}

PipelineConfig toy_config(const fs::path& out = {}) {
  PipelineConfig c;
  c.layer_name = "relu2";
  c.output_dir = out;
  return c;
}

ExplanationBundle run_toy(const PipelineConfig& config, std::optional<int> override_class = {},
                          const std::string& image = "image_0.png") {
  CrpIdentifier identifier(toy().model, config.layer_name, config.rules);
  CrpVisualizer visualizer(toy().model, toy().refset, config.rules);
  MockClient llm;
  return explain(toy().model, fixture_path("toy/images") / image, override_class, config,
                 identifier, visualizer, llm);
}

std::map<std::string, std::string> directory_bytes(const fs::path& dir) {
  std::map<std::string, std::string> out;
  for (const auto& e : fs::directory_iterator(dir)) {
    const auto bytes = read_binary_file(e.path());
    out[e.path().filename().string()] = std::string(bytes.begin(), bytes.end());
  }
  return out;
}

TEST(PipelineTest, BundleLayout) {
  TempDir dir("bundle_layout");
  const ExplanationBundle b = run_toy(toy_config(dir.path()));
  ASSERT_EQ(b.concepts.size(), 5u);
  for (const char* f : {"manifest.json", "input.png", "concept_1_heatmap.png",
                        "concept_1_overlay.png", "concept_5_proto_6.png",
                        "concept_5_proto_6_overlay.png"}) {
    EXPECT_TRUE(fs::exists(dir.path() / f)) << f;
  }
  for (const ConceptExplanation& c : b.concepts) {
    EXPECT_EQ(c.record.prototypes.size(), 6u);
    EXPECT_FALSE(c.label.empty());
    EXPECT_TRUE(c.taxonomy.recognition.has_value());
  }
  EXPECT_THAT(b.summary, HasSubstr("5 key concepts"));
  const auto manifest = nlohmann::json::parse(read_text_file(dir.path() / "manifest.json"));
  EXPECT_EQ(manifest["schema_version"], 1);
  EXPECT_EQ(manifest["provenance"]["llm_model_id"], "gpt-4o-2024-11-20");
}

TEST(PipelineTest, SaveLoadRoundTrip) {
  TempDir dir("bundle_roundtrip");
  const ExplanationBundle b = run_toy(toy_config(dir.path()));
  EXPECT_EQ(load_bundle(dir.path()), b);
  TempDir again("bundle_resave");
  save_bundle(b, again.path());
  EXPECT_EQ(directory_bytes(again.path()), directory_bytes(dir.path()));
}

TEST(PipelineTest, DeterministicAndMatchesGolden) {
  TempDir a("bundle_a"), b("bundle_b");
  PipelineConfig ca = toy_config(a.path());
  PipelineConfig cb = toy_config(b.path());
  cb.parallel = false;
  EXPECT_EQ(run_toy(ca), run_toy(cb));
  const auto bytes = directory_bytes(a.path());
  EXPECT_EQ(bytes, directory_bytes(b.path()));

  const fs::path golden = source_dir() / "tests" / "golden" / "toy_image_0";
  if (std::getenv("CEXPLAIN_UPDATE_GOLDEN")) {
    fs::remove_all(golden);
    fs::create_directories(golden);
    for (const auto& [name, content] : bytes) write_text_file(golden / name, content);
  }
  const auto expected = directory_bytes(golden);
  ASSERT_EQ(expected.size(), bytes.size());
  for (const auto& [name, content] : expected) {
    EXPECT_TRUE(bytes.count(name) && bytes.at(name) == content) << name << " differs";
  }
}

TEST(PipelineTest, SingleConcept) {
  PipelineConfig c = toy_config();
  c.n = 1;
  const ExplanationBundle b = run_toy(c);
  ASSERT_EQ(b.concepts.size(), 1u);
  EXPECT_EQ(b.concepts[0].record.attribution.relevance_share, 100.0);
  EXPECT_THAT(b.summary, HasSubstr("one key concept"));
  EXPECT_THAT(b.summary, HasSubstr("Concept 1 (100.00%)"));
  EXPECT_THAT(b.summary, Not(HasSubstr("Concept 2")));
}

TEST(PipelineTest, ProvenanceOrder) {
  const ExplanationBundle b = run_toy(toy_config());
  const auto& p = b.provenance.prompts;
  ASSERT_EQ(p.size(), 2 * b.concepts.size() + 1);
  for (std::size_t i = 0; i < b.concepts.size(); ++i) {
    EXPECT_EQ(p[2 * i].stage, PromptStage::kLabel);
    EXPECT_EQ(p[2 * i + 1].stage, PromptStage::kContext);
    EXPECT_EQ(p[2 * i].rank, i + 1);
  }
  EXPECT_EQ(p.back().stage, PromptStage::kSummary);
  EXPECT_EQ(b.provenance.model_sha256, model_fingerprint(toy().model));
  EXPECT_EQ(b.provenance.schema_version, 1);
}

TEST(PipelineTest, ClassOverride) {
  const ExplanationBundle top = run_toy(toy_config());
  const int other = (top.prediction.class_id + 1) % 10;
  const ExplanationBundle b = run_toy(toy_config(), other);
  EXPECT_EQ(b.prediction.class_id, other);
  const Tensor pixels = image_to_tensor(b.input);
  const ActivationRecord rec = forward(toy().model, pixels);
  EXPECT_DOUBLE_EQ(b.prediction.confidence,
                   softmax(rec.logits().data())[static_cast<std::size_t>(other)]);
  const auto expected = top_concepts(toy().model, pixels, other, "relu2", 5, RuleConfig{});
  ASSERT_EQ(b.concepts.size(), expected.concepts.size());
  for (std::size_t i = 0; i < b.concepts.size(); ++i) {
    EXPECT_EQ(b.concepts[i].record.attribution, expected.concepts[i]);
  }
}

TEST(PipelineTest, StageErrors) {
  PipelineConfig c = toy_config();
  try {
    run_toy(c, std::nullopt, "no_such_image.png");
    FAIL();
  } catch (const PipelineError& e) {
    EXPECT_EQ(e.stage(), "load_image");
  }
  try {
    run_toy(c, 42);
    FAIL();
  } catch (const PipelineError& e) {
    EXPECT_EQ(e.stage(), "predict");
  }
  c.layer_name = "fc";
  try {
    run_toy(c);
    FAIL();
  } catch (const PipelineError& e) {
    EXPECT_EQ(e.stage(), "identify");
  }
}

// Fails every contextualization request.
class FailingContext : public LlmClient {
 public:
  std::string send(const ChatRequest& r) override {
    if (r.stage == PromptStage::kContext) throw LlmError("provider down");
    return mock_.send(r);
  }

 private:
  MockClient mock_;
};

TEST(PipelineTest, LlmFailureAbortsAndKeepsPartialAssets) {
  TempDir dir("bundle_partial");
  const PipelineConfig c = toy_config(dir.path());
  CrpIdentifier identifier(toy().model, c.layer_name, c.rules);
  CrpVisualizer visualizer(toy().model, toy().refset, c.rules);
  FailingContext llm;
  try {
    explain(toy().model, fixture_path("toy/images/image_0.png"), std::nullopt, c, identifier,
            visualizer, llm);
    FAIL();
  } catch (const PipelineError& e) {
    EXPECT_EQ(e.stage(), "contextualize");
    EXPECT_THAT(e.what(), HasSubstr("provider down"));
  }
  EXPECT_TRUE(fs::exists(dir.path() / "input.png"));
  EXPECT_TRUE(fs::exists(dir.path() / "concept_5_overlay.png"));
  EXPECT_FALSE(fs::exists(dir.path() / "manifest.json"));
}

TEST(PipelineTest, LoadErrors) {
  TempDir dir("bundle_errors");
  run_toy(toy_config(dir.path()));
  const fs::path manifest = dir.path() / "manifest.json";
  const std::string text = read_text_file(manifest);

  std::string future = text;
  future.replace(future.rfind("\"schema_version\": 1"), 19, "\"schema_version\": 999");
  write_text_file(manifest, future);
  try {
    load_bundle(dir.path());
    FAIL();
  } catch (const SchemaError& e) {
    EXPECT_THAT(e.what(), HasSubstr("schema_version 999"));
  }

  write_text_file(manifest, text);
  fs::remove(dir.path() / "concept_2_heatmap.png");
  try {
    load_bundle(dir.path());
    FAIL();
  } catch (const MissingAssetError& e) {
    EXPECT_EQ(e.file(), "concept_2_heatmap.png");
  }
}

TEST(PipelineTest, ConfigValidation) {
  PipelineConfig c = toy_config();
  c.k = 0;
  EXPECT_THROW(run_toy(c), Error);
}

// The published lizard example, replayed through the mock from fixture files.
TEST(LizardWalkthroughTest, ReproducesPublishedTexts) {
  const fs::path dir = fixture_path("lizard");
  const auto w = nlohmann::json::parse(read_text_file(dir / "walkthrough.json"));
  const Prediction prediction{w["prediction"]["class_id"], w["prediction"]["label"],
                              w["prediction"]["confidence"]};
  const std::vector<double> shares = w["shares"];
  std::vector<ConceptEvidence> evidence;
  for (std::size_t i = 0; i < shares.size(); ++i) {
    const std::string stem = "concept_" + std::to_string(i + 1);
    ConceptEvidence e;
    e.share = shares[i];
    e.overlay = read_png(dir / (stem + "_overlay.png"));
    for (int j = 1; j <= 6; ++j) {
      const std::string proto = stem + "_proto_" + std::to_string(j);
      e.prototypes.push_back(
          {read_png(dir / (proto + ".png")), read_png(dir / (proto + "_overlay.png"))});
    }
    evidence.push_back(std::move(e));
  }
  MockClient mock = load_cassette(dir / "cassette.json");
  const Narration n =
      narrate(mock, read_png(dir / "input.png"), prediction, evidence, PromptOptions{});

  EXPECT_THAT(n.labels[4], HasSubstr("\"circular holes or openings with a distinct rim.\""));
  EXPECT_EQ(parse_taxonomy(n.contexts[4]),
            (Taxonomy{Recognition::kFeature, Relation::kCompositional}));
  EXPECT_EQ(parse_taxonomy(n.contexts[2]),
            (Taxonomy{Recognition::kDirect, Relation::kContextual}));
  EXPECT_THAT(n.summary, HasSubstr("\"American chameleon\" with 86.11% confidence"));
  EXPECT_THAT(n.summary, HasSubstr("five key concepts"));
  for (const char* pct : {"(40.62%)", "(21.35%)", "(21.29%)", "(8.60%)", "(8.14%)"}) {
    EXPECT_THAT(n.summary, HasSubstr(pct));
  }
  double sum = 0.0;
  for (double s : shares) sum += s;
  EXPECT_NEAR(sum, 100.0, 1e-9);
}

}  // namespace
}  // namespace cexplain
