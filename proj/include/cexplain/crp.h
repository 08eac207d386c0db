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

// Layer-wise relevance propagation with channel conditioning.
//
// Relevance starts at the raw logit of the target class and is pushed back
// layer by layer. Conditioning on a channel keeps only that channel's
// relevance at the chosen layer before continuing to the input, so summing the
// conditional input maps over every channel of a layer gives back the
// unconditional map (the backward pass is linear in the incoming relevance).
//
// Rules:
//   epsilon   R_j = a_j w_jk / (z_k + eps * sign(z_k)) * R_k, z_k including bias
//   zplus     R_j = (a_j w_jk)^+ / (sum_j (a_j w_jk)^+ + eps) * R_k, bias ignored
//   relu, flatten  pass-through
//   maxpool   all of R_k to the first maximal input of the window
//   avgpool   proportional to the inputs, stabilized like epsilon
// With eps == 0 a zero denominator that carries nonzero relevance is an error.

#ifndef CEXPLAIN_CRP_H_
#define CEXPLAIN_CRP_H_

#include <cstddef>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "cexplain/model.h"
#include "cexplain/tensor.h"
#include "json.hpp"

namespace cexplain {

struct ConceptRef {
  std::string layer_name;
  std::size_t channel = 0;

  friend bool operator==(const ConceptRef&, const ConceptRef&) = default;
};

struct RelevanceMap {
  Tensor values;
  double total = 0.0;

  RelevanceMap() = default;
  explicit RelevanceMap(Tensor t) : values(std::move(t)), total(values.sum()) {}

  friend bool operator==(const RelevanceMap&, const RelevanceMap&) = default;
};

// Collapses a [C, H, W] map to [1, H, W] by summing channels; other ranks are
// returned unchanged.
Tensor spatial_relevance(const Tensor& map);

nlohmann::json relevance_map_to_json(const RelevanceMap& map);
RelevanceMap relevance_map_from_json(const nlohmann::json& j);

enum class LrpRule { kEpsilon, kZPlus };

struct RuleConfig {
  LrpRule conv = LrpRule::kZPlus;
  LrpRule dense = LrpRule::kEpsilon;
  double epsilon = 1e-6;

  void validate() const;
  friend bool operator==(const RuleConfig&, const RuleConfig&) = default;
};

nlohmann::json rule_config_to_json(const RuleConfig& rules);
RuleConfig rule_config_from_json(const nlohmann::json& j);

struct LrpResult {
  // layers[i] is the relevance of layer i's output.
  std::vector<RelevanceMap> layers;
  RelevanceMap input;
};

LrpResult lrp_attribute(const ModelGraph& model, const ActivationRecord& record,
                        int target_class, const RuleConfig& rules);

// Relevance of the output of layer `layer_index`, starting from the target
// logit. Passing num_layers()-1 returns the initial one-hot relevance.
Tensor relevance_at_layer(const ModelGraph& model, const ActivationRecord& record,
                          int target_class, std::size_t layer_index,
                          const RuleConfig& rules);

// Pushes relevance given at the output of `layer_index` down to the input.
RelevanceMap propagate_to_input(const ModelGraph& model, const ActivationRecord& record,
                                std::size_t layer_index, Tensor relevance,
                                const RuleConfig& rules);

struct ConditionalRelevance {
  double raw_relevance = 0.0;
  RelevanceMap input;
};

ConditionalRelevance conditional_attribute(const ModelGraph& model,
                                           const ActivationRecord& record,
                                           int target_class, const ConceptRef& condition,
                                           const RuleConfig& rules);

// Resolves the layer of a condition and checks it has a channel axis and sits
// strictly below the logit layer.
std::size_t condition_layer_index(const ModelGraph& model, const std::string& layer_name);

struct ConceptAttribution {
  ConceptRef concept_ref;
  double raw_relevance = 0.0;
  double relevance_share = 0.0;  // percent
  RelevanceMap heatmap;          // input space, [C, H, W]

  friend bool operator==(const ConceptAttribution&, const ConceptAttribution&) = default;
};

// Denominator used for relevance shares. kSelected normalizes over the
// returned concepts, so the shares of one result always add up to 100.
enum class ShareBasis { kSelected, kAllPositive };

struct ConceptSelection {
  std::vector<ConceptAttribution> concepts;
  // Set when fewer than n channels had positive relevance.
  bool fewer_than_requested = false;
};

ConceptSelection top_concepts(const ModelGraph& model, const ActivationRecord& record,
                              int target_class, const std::string& layer_name,
                              std::size_t n, const RuleConfig& rules,
                              ShareBasis basis = ShareBasis::kSelected);
ConceptSelection top_concepts(const ModelGraph& model, const Tensor& image,
                              int target_class, const std::string& layer_name,
                              std::size_t n, const RuleConfig& rules,
                              ShareBasis basis = ShareBasis::kSelected);

// ---------------------------------------------------------------------------
// Prototype mining over a reference set.

struct ReferenceImage {
  std::string id;
  std::filesystem::path path;
  std::string label;
  // Preloaded pixels; when empty the PNG at `path` is decoded on demand.
  std::optional<Tensor> pixels;
};

struct ReferenceSet {
  std::vector<ReferenceImage> images;
};

// Reads <dir>/refset.csv with header "identifier,filename[,label]".
ReferenceSet load_reference_set(const std::filesystem::path& dir);

struct ConceptPrototype {
  std::string reference_id;
  Tensor image;
  RelevanceMap heatmap;
  double score = 0.0;

  friend bool operator==(const ConceptPrototype&, const ConceptPrototype&) = default;
};

struct MiningStats {
  std::size_t scored = 0;
  std::vector<std::string> skipped;  // unreadable or wrongly shaped images
};

// Scores every reference image by the concept's conditional relevance for the
// image's own top-1 class and returns the k best, highest score first, ties
// by identifier. Scoring runs on `threads` workers (0 = hardware concurrency).
std::vector<ConceptPrototype> mine_prototypes(const ModelGraph& model,
                                              const ReferenceSet& refset,
                                              const ConceptRef& concept_ref, std::size_t k,
                                              const RuleConfig& rules,
                                              MiningStats* stats = nullptr,
                                              unsigned threads = 0);

}  // namespace cexplain

#endif  // CEXPLAIN_CRP_H_
