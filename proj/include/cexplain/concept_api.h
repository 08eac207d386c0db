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

// Pluggable concept identification and visualization, with relevance-based
// implementations and a file format for externally computed attributions.

#ifndef CEXPLAIN_CONCEPT_API_H_
#define CEXPLAIN_CONCEPT_API_H_

#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "cexplain/crp.h"
#include "cexplain/model.h"
#include "json.hpp"

namespace cexplain {

// Finds the n most relevant channels for classifying `image` as
// `target_class`. Shares are sorted descending and sum to 100.
class ConceptIdentifier {
 public:
  virtual ~ConceptIdentifier() = default;
  virtual ConceptSelection identify(const Tensor& image, int target_class, std::size_t n) = 0;
};

// Returns up to k representatives of a concept, highest score first.
class ConceptVisualizer {
 public:
  virtual ~ConceptVisualizer() = default;
  virtual std::vector<ConceptPrototype> visualize(const ConceptRef& concept_ref,
                                                  std::size_t k) = 0;
};

class CrpIdentifier : public ConceptIdentifier {
 public:
  CrpIdentifier(const ModelGraph& model, std::string layer_name, RuleConfig rules,
                ShareBasis basis = ShareBasis::kSelected)
      : model_(model), layer_name_(std::move(layer_name)), rules_(rules), basis_(basis) {}

  ConceptSelection identify(const Tensor& image, int target_class, std::size_t n) override;

 private:
  const ModelGraph& model_;
  std::string layer_name_;
  RuleConfig rules_;
  ShareBasis basis_;
};

class CrpVisualizer : public ConceptVisualizer {
 public:
  CrpVisualizer(const ModelGraph& model, const ReferenceSet& refset, RuleConfig rules,
                unsigned threads = 0)
      : model_(model), refset_(refset), rules_(rules), threads_(threads) {}

  std::vector<ConceptPrototype> visualize(const ConceptRef& concept_ref, std::size_t k) override;
  // Counters from the most recent visualize call.
  const MiningStats& last_stats() const { return stats_; }

 private:
  const ModelGraph& model_;
  const ReferenceSet& refset_;
  RuleConfig rules_;
  unsigned threads_;
  MiningStats stats_;
};

// One identified concept together with its representatives.
struct ConceptRecord {
  ConceptAttribution attribution;
  std::vector<ConceptPrototype> prototypes;

  friend bool operator==(const ConceptRecord&, const ConceptRecord&) = default;
};

struct AttributionSet {
  std::optional<int> target_class;
  std::vector<ConceptRecord> concepts;

  friend bool operator==(const AttributionSet&, const AttributionSet&) = default;
};

// Shares must be non-increasing, each in [0, 100], and sum to 100 +- 0.01.
// Throws SchemaError otherwise.
void check_shares(std::span<const ConceptRecord> concepts);

// The per-concept manifest entry shared by attributions.json and bundle
// manifests. Writes concept_<rank>_heatmap.json, concept_<rank>_proto_<j>.png
// (or .json when the image is not 8-bit representable) and
// concept_<rank>_proto_<j>_heatmap.json into `dir`.
nlohmann::json write_concept_section(const ConceptRecord& record, std::size_t rank,
                                     const std::filesystem::path& dir);
// Inverse of write_concept_section. Missing files raise MissingAssetError.
ConceptRecord read_concept_section(const nlohmann::json& entry,
                                   const std::filesystem::path& dir);

// <dir>/attributions.json plus the referenced grids and images.
void export_attributions(const std::filesystem::path& dir, const AttributionSet& set);
AttributionSet import_attributions(const std::filesystem::path& dir);

// Serves identify/visualize calls from an imported set.
class ImportedConcepts : public ConceptIdentifier, public ConceptVisualizer {
 public:
  explicit ImportedConcepts(AttributionSet set) : set_(std::move(set)) {}

  // Returns the first n concepts, renormalizing shares when n cuts the list.
  ConceptSelection identify(const Tensor& image, int target_class, std::size_t n) override;
  std::vector<ConceptPrototype> visualize(const ConceptRef& concept_ref, std::size_t k) override;

 private:
  AttributionSet set_;
};

}  // namespace cexplain

#endif  // CEXPLAIN_CONCEPT_API_H_
