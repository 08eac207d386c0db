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

#include "cexplain/concept_api.h"

#include <cmath>

#include "cexplain/error.h"
#include "cexplain/image.h"
#include "cexplain/io.h"

namespace cexplain {
namespace {

using json = nlohmann::json;
namespace fs = std::filesystem;

constexpr int kAttributionsVersion = 1;

// True when the tensor survives a trip through an 8-bit RGB PNG unchanged.
bool png_exact(const Tensor& t) {
  if (t.rank() != 3 || t.dim(0) != 3) return false;
  for (float v : t.data()) {
    if (!(v >= 0.0f && v <= 1.0f)) return false;
    const auto byte = std::lround(v * 255.0f);
    if (static_cast<float>(byte) / 255.0f != v) return false;
  }
  return true;
}

void write_grid(const fs::path& path, const Tensor& t) {
  write_text_file(path, relevance_map_to_json(RelevanceMap(t)).dump() + "\n");
}

json parse_file(const fs::path& path) {
  if (!fs::exists(path)) throw MissingAssetError(path.filename().string());
  try {
    return json::parse(read_text_file(path));
  } catch (const json::exception& e) {
    throw SchemaError(path.filename().string() + ": " + e.what());
  }
}

RelevanceMap read_grid(const fs::path& dir, const std::string& file) {
  return relevance_map_from_json(parse_file(dir / file));
}

Tensor read_image(const fs::path& dir, const std::string& file) {
  const fs::path path = dir / file;
  if (!fs::exists(path)) throw MissingAssetError(file);
  if (path.extension() == ".json") return read_grid(dir, file).values;
  return image_to_tensor(read_png(path));
}

std::string name(std::size_t rank, const std::string& suffix) {
  return "concept_" + std::to_string(rank) + "_" + suffix;
}

}  // namespace

ConceptSelection CrpIdentifier::identify(const Tensor& image, int target_class, std::size_t n) {
  return top_concepts(model_, image, target_class, layer_name_, n, rules_, basis_);
}

std::vector<ConceptPrototype> CrpVisualizer::visualize(const ConceptRef& concept_ref,
                                                       std::size_t k) {
  stats_ = {};
  return mine_prototypes(model_, refset_, concept_ref, k, rules_, &stats_, threads_);
}

void check_shares(std::span<const ConceptRecord> concepts) {
  double sum = 0.0;
  for (std::size_t i = 0; i < concepts.size(); ++i) {
    const double s = concepts[i].attribution.relevance_share;
    if (!(s >= 0.0 && s <= 100.0)) {
      throw SchemaError("concept " + std::to_string(i + 1) + " has share outside [0, 100]");
    }
    if (i > 0 && s > concepts[i - 1].attribution.relevance_share) {
      throw SchemaError("concept shares are not sorted in descending order");
    }
    sum += s;
  }
  if (!concepts.empty() && std::abs(sum - 100.0) > 0.01) {
    throw SchemaError("relevance shares sum to " + std::to_string(sum) +
                      ", expected 100 +- 0.01");
  }
}

json write_concept_section(const ConceptRecord& record, std::size_t rank, const fs::path& dir) {
  const ConceptAttribution& a = record.attribution;
  const std::string heatmap_file = name(rank, "heatmap.json");
  write_grid(dir / heatmap_file, a.heatmap.values);
  json protos = json::array();
  for (std::size_t j = 0; j < record.prototypes.size(); ++j) {
    const ConceptPrototype& p = record.prototypes[j];
    const std::string stem = "proto_" + std::to_string(j + 1);
    std::string image_file;
    if (png_exact(p.image)) {
      image_file = name(rank, stem + ".png");
      write_png(dir / image_file, tensor_to_image(p.image));
    } else {
      image_file = name(rank, stem + "_image.json");
      write_grid(dir / image_file, p.image);
    }
    const std::string proto_heatmap = name(rank, stem + "_heatmap.json");
    write_grid(dir / proto_heatmap, p.heatmap.values);
    protos.push_back({{"reference_id", p.reference_id},
                      {"score", p.score},
                      {"image_file", image_file},
                      {"heatmap_file", proto_heatmap}});
  }
  return {{"rank", rank},
          {"layer", a.concept_ref.layer_name},
          {"channel", a.concept_ref.channel},
          {"raw_relevance", a.raw_relevance},
          {"relevance_share", a.relevance_share},
          {"heatmap_file", heatmap_file},
          {"prototypes", std::move(protos)}};
}

ConceptRecord read_concept_section(const json& entry, const fs::path& dir) {
  ConceptRecord r;
  try {
    r.attribution.concept_ref = {entry.at("layer").get<std::string>(),
                                 entry.at("channel").get<std::size_t>()};
    r.attribution.raw_relevance = entry.at("raw_relevance").get<double>();
    r.attribution.relevance_share = entry.at("relevance_share").get<double>();
    const std::string heatmap_file = entry.at("heatmap_file").get<std::string>();
    r.attribution.heatmap = read_grid(dir, heatmap_file);
    for (const json& p : entry.at("prototypes")) {
      ConceptPrototype proto;
      proto.reference_id = p.at("reference_id").get<std::string>();
      proto.score = p.at("score").get<double>();
      proto.image = read_image(dir, p.at("image_file").get<std::string>());
      proto.heatmap = read_grid(dir, p.at("heatmap_file").get<std::string>());
      r.prototypes.push_back(std::move(proto));
    }
  } catch (const json::exception& e) {
    throw SchemaError(std::string("invalid concept entry: ") + e.what());
  }
  for (std::size_t j = 1; j < r.prototypes.size(); ++j) {
    if (r.prototypes[j].score > r.prototypes[j - 1].score) {
      throw SchemaError("prototypes are not sorted by descending score");
    }
  }
  return r;
}

void export_attributions(const fs::path& dir, const AttributionSet& set) {
  check_shares(set.concepts);
  fs::create_directories(dir);
  json concepts = json::array();
  for (std::size_t i = 0; i < set.concepts.size(); ++i) {
    concepts.push_back(write_concept_section(set.concepts[i], i + 1, dir));
  }
  json j = {{"format", "cexplain.attributions"},
            {"schema_version", kAttributionsVersion},
            {"concepts", std::move(concepts)}};
  if (set.target_class) j["target_class"] = *set.target_class;
  write_text_file(dir / "attributions.json", j.dump(2) + "\n");
}

AttributionSet import_attributions(const fs::path& dir) {
  const json j = parse_file(dir / "attributions.json");
  if (!j.is_object() || j.value("format", "") != "cexplain.attributions") {
    throw SchemaError("attributions.json: format must be \"cexplain.attributions\"");
  }
  if (j.value("schema_version", -1) != kAttributionsVersion) {
    throw SchemaError("attributions.json: unsupported schema_version " +
                      j.value("schema_version", json(nullptr)).dump());
  }
  if (!j.contains("concepts") || !j["concepts"].is_array() || j["concepts"].empty()) {
    throw SchemaError("attributions.json: concepts must be a non-empty array");
  }
  AttributionSet set;
  if (j.contains("target_class")) set.target_class = j["target_class"].get<int>();
  for (const json& entry : j["concepts"]) set.concepts.push_back(read_concept_section(entry, dir));
  check_shares(set.concepts);
  return set;
}

ConceptSelection ImportedConcepts::identify(const Tensor&, int target_class, std::size_t n) {
  if (set_.target_class && *set_.target_class != target_class) {
    throw Error("imported attributions explain class " + std::to_string(*set_.target_class) +
                ", not " + std::to_string(target_class));
  }
  ConceptSelection sel;
  const std::size_t count = std::min(n, set_.concepts.size());
  sel.fewer_than_requested = count < n;
  double total = 0.0;
  for (std::size_t i = 0; i < count; ++i) total += set_.concepts[i].attribution.raw_relevance;
  for (std::size_t i = 0; i < count; ++i) {
    ConceptAttribution a = set_.concepts[i].attribution;
    if (count < set_.concepts.size()) a.relevance_share = 100.0 * a.raw_relevance / total;
    sel.concepts.push_back(std::move(a));
  }
  return sel;
}

std::vector<ConceptPrototype> ImportedConcepts::visualize(const ConceptRef& concept_ref,
                                                          std::size_t k) {
  for (const ConceptRecord& r : set_.concepts) {
    if (r.attribution.concept_ref == concept_ref) {
      return {r.prototypes.begin(),
              r.prototypes.begin() + static_cast<std::ptrdiff_t>(std::min(k, r.prototypes.size()))};
    }
  }
  throw Error("no imported prototypes for " + concept_ref.layer_name + ":" +
              std::to_string(concept_ref.channel));
}

}  // namespace cexplain
