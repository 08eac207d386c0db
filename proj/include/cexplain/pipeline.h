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

// End-to-end explanation of one image: prediction, concept attribution,
// prototypes, the three LLM stages, and the on-disk bundle.

#ifndef CEXPLAIN_PIPELINE_H_
#define CEXPLAIN_PIPELINE_H_

#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "cexplain/concept_api.h"
#include "cexplain/crp.h"
#include "cexplain/error.h"
#include "cexplain/image.h"
#include "cexplain/llm.h"
#include "cexplain/model.h"

namespace cexplain {

inline constexpr int kBundleSchemaVersion = 1;

// Failure inside explain(); stage() is one of load_image, predict, identify,
// visualize, label, contextualize, summarize, save.
class PipelineError : public Error {
 public:
  PipelineError(std::string stage, const std::string& what)
      : Error("stage " + stage + ": " + what), stage_(std::move(stage)) {}
  const std::string& stage() const { return stage_; }

 private:
  std::string stage_;
};

struct PipelineConfig {
  std::string layer_name;
  std::size_t n = 5;
  std::size_t k = 6;
  RuleConfig rules;
  PromptOptions prompts;
  // When set, assets are written here as each stage completes.
  std::filesystem::path output_dir;
  // Run per-concept LLM calls concurrently.
  bool parallel = true;

  void validate() const;
};

struct PromptRecord {
  PromptStage stage = PromptStage::kLabel;
  std::size_t rank = 0;  // 1-based concept rank; 0 for the summary
  std::string request_hash;
  std::string response_hash;

  friend bool operator==(const PromptRecord&, const PromptRecord&) = default;
};

struct Provenance {
  std::string model_sha256;
  std::string layer_name;
  RuleConfig rules;
  std::string llm_model_id;
  double temperature = 0.0;
  // Label and contextualization of each concept in rank order, then the summary.
  std::vector<PromptRecord> prompts;
  int schema_version = kBundleSchemaVersion;

  friend bool operator==(const Provenance&, const Provenance&) = default;
};

struct ConceptExplanation {
  ConceptRecord record;
  std::string label;
  std::string context;
  Taxonomy taxonomy;

  friend bool operator==(const ConceptExplanation&, const ConceptExplanation&) = default;
};

struct ExplanationBundle {
  std::string source_name;  // file name of the explained image
  Image input;
  Prediction prediction;
  std::vector<ConceptExplanation> concepts;
  std::string summary;
  Provenance provenance;

  // Concepts present, each labeled and contextualized, summary present,
  // shares valid. Throws SchemaError.
  void validate() const;
  friend bool operator==(const ExplanationBundle&, const ExplanationBundle&) = default;
};

// SHA-256 over the serialized manifest followed by the weight blob.
std::string model_fingerprint(const ModelGraph& model);

// Inputs to the LLM stages for one concept.
struct ConceptEvidence {
  std::vector<PrototypePair> prototypes;
  Image overlay;
  double share = 0.0;
};

struct Narration {
  std::vector<std::string> labels;
  std::vector<std::string> contexts;
  std::string summary;
  std::vector<PromptRecord> prompts;
};

// Labels and contextualizes every concept (concurrently when `parallel`),
// then summarizes the contextualizations in rank order.
Narration narrate(LlmClient& client, const Image& input, const Prediction& prediction,
                  std::span<const ConceptEvidence> concepts, const PromptOptions& options,
                  bool parallel = true);

// The overlay of a concept heatmap on an image, at the default alpha.
Image concept_overlay(const Image& image, const RelevanceMap& heatmap);
Image prototype_overlay(const ConceptPrototype& prototype);

ExplanationBundle explain(const ModelGraph& model, const std::filesystem::path& image_path,
                          std::optional<int> class_override, const PipelineConfig& config,
                          ConceptIdentifier& identifier, ConceptVisualizer& visualizer,
                          LlmClient& llm);

// manifest.json, input.png and per-concept assets. The manifest is written last.
void save_bundle(const ExplanationBundle& bundle, const std::filesystem::path& dir);
ExplanationBundle load_bundle(const std::filesystem::path& dir);

}  // namespace cexplain

#endif  // CEXPLAIN_PIPELINE_H_
