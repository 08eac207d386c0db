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

#include <spdlog/spdlog.h>

#include <future>
#include <utility>

#include "cexplain/io.h"
#include "cexplain/rendering.h"

namespace cexplain {
namespace {

using json = nlohmann::json;
namespace fs = std::filesystem;

std::string asset(std::size_t rank, const std::string& suffix) {
  return "concept_" + std::to_string(rank) + "_" + suffix;
}

// Runs `fn`, rethrowing library errors as a PipelineError for `stage`.
template <typename Fn>
auto stage(const std::string& name, Fn&& fn) -> decltype(fn()) {
  try {
    return fn();
  } catch (const PipelineError&) {
    throw;
  } catch (const std::exception& e) {
    throw PipelineError(name, e.what());
  }
}

void write_rendered_assets(const ExplanationBundle& bundle, std::size_t i, const fs::path& dir) {
  const ConceptExplanation& c = bundle.concepts[i];
  const std::size_t rank = i + 1;
  const ConceptAttribution& a = c.record.attribution;
  write_png(dir / asset(rank, "heatmap.png"),
            render_heatmap(normalize_heatmap(a.heatmap), bundle.input.width,
                           bundle.input.height));
  write_png(dir / asset(rank, "overlay.png"), concept_overlay(bundle.input, a.heatmap));
  for (std::size_t j = 0; j < c.record.prototypes.size(); ++j) {
    write_png(dir / asset(rank, "proto_" + std::to_string(j + 1) + "_overlay.png"),
              prototype_overlay(c.record.prototypes[j]));
  }
}

json taxonomy_value(const auto& v, auto name_fn) {
  return v ? json(std::string(name_fn(*v))) : json(nullptr);
}

json provenance_to_json(const Provenance& p) {
  json prompts = json::array();
  for (const PromptRecord& r : p.prompts) {
    prompts.push_back({{"stage", stage_name(r.stage)},
                       {"rank", r.rank},
                       {"request_sha256", r.request_hash},
                       {"response_sha256", r.response_hash}});
  }
  return {{"model_sha256", p.model_sha256},
          {"layer", p.layer_name},
          {"rules", rule_config_to_json(p.rules)},
          {"llm_model_id", p.llm_model_id},
          {"temperature", p.temperature},
          {"prompts", std::move(prompts)},
          {"schema_version", p.schema_version}};
}

Provenance provenance_from_json(const json& j) {
  Provenance p;
  p.model_sha256 = j.at("model_sha256").get<std::string>();
  p.layer_name = j.at("layer").get<std::string>();
  p.rules = rule_config_from_json(j.at("rules"));
  p.llm_model_id = j.at("llm_model_id").get<std::string>();
  p.temperature = j.at("temperature").get<double>();
  for (const json& r : j.at("prompts")) {
    p.prompts.push_back({stage_from_name(r.at("stage").get<std::string>()),
                         r.at("rank").get<std::size_t>(), r.at("request_sha256").get<std::string>(),
                         r.at("response_sha256").get<std::string>()});
  }
  p.schema_version = j.at("schema_version").get<int>();
  return p;
}

void require_file(const fs::path& dir, const std::string& file) {
  if (!fs::exists(dir / file)) throw MissingAssetError(file);
}

}  // namespace

void PipelineConfig::validate() const {
  if (n < 1) throw Error("n must be at least 1");
  if (k < 1) throw Error("k must be at least 1");
  rules.validate();
}

void ExplanationBundle::validate() const {
  if (concepts.empty()) throw SchemaError("bundle has no concepts");
  std::vector<ConceptRecord> records;
  for (std::size_t i = 0; i < concepts.size(); ++i) {
    if (concepts[i].label.empty() || concepts[i].context.empty()) {
      throw SchemaError("concept " + std::to_string(i + 1) + " lacks a label or explanation");
    }
    records.push_back(concepts[i].record);
  }
  if (summary.empty()) throw SchemaError("bundle has no summary");
  check_shares(records);
}

std::string model_fingerprint(const ModelGraph& model) {
  const SerializedModel s = save_model(model);
  std::vector<std::uint8_t> bytes(s.manifest_json.begin(), s.manifest_json.end());
  bytes.insert(bytes.end(), s.weights.begin(), s.weights.end());
  return sha256_hex(bytes);
}

Image concept_overlay(const Image& image, const RelevanceMap& heatmap) {
  return overlay(image, normalize_heatmap(heatmap));
}

Image prototype_overlay(const ConceptPrototype& prototype) {
  return concept_overlay(tensor_to_image(prototype.image), prototype.heatmap);
}

Narration narrate(LlmClient& client, const Image& input, const Prediction& prediction,
                  std::span<const ConceptEvidence> concepts, const PromptOptions& options,
                  bool parallel) {
  struct PerConcept {
    Completion label, context;
  };
  auto run = [&](std::size_t i) {
    const ConceptEvidence& c = concepts[i];
    PerConcept out;
    out.label = stage("label", [&] {
      return complete(client, build_label_prompt(c.prototypes, options));
    });
    out.context = stage("contextualize", [&] {
      return complete(client, build_context_prompt(input, c.overlay, prediction, c.share,
                                                   out.label.text, options));
    });
    return out;
  };

  std::vector<PerConcept> results;
  if (parallel && concepts.size() > 1) {
    std::vector<std::future<PerConcept>> futures;
    for (std::size_t i = 0; i < concepts.size(); ++i) {
      futures.push_back(std::async(std::launch::async, run, i));
    }
    // Collect all before rethrowing so no task outlives this frame.
    std::exception_ptr first_error;
    for (auto& f : futures) {
      try {
        results.push_back(f.get());
      } catch (...) {
        if (!first_error) first_error = std::current_exception();
      }
    }
    if (first_error) std::rethrow_exception(first_error);
  } else {
    for (std::size_t i = 0; i < concepts.size(); ++i) results.push_back(run(i));
  }

  Narration n;
  std::vector<ContextEntry> entries;
  for (std::size_t i = 0; i < results.size(); ++i) {
    const PerConcept& r = results[i];
    n.labels.push_back(r.label.text);
    n.contexts.push_back(r.context.text);
    n.prompts.push_back({PromptStage::kLabel, i + 1, r.label.request_hash, r.label.response_hash});
    n.prompts.push_back(
        {PromptStage::kContext, i + 1, r.context.request_hash, r.context.response_hash});
    entries.push_back({concepts[i].share, r.context.text});
  }
  const Completion summary = stage("summarize", [&] {
    return complete(client, build_summary_prompt(prediction, entries, options));
  });
  n.summary = summary.text;
  n.prompts.push_back({PromptStage::kSummary, 0, summary.request_hash, summary.response_hash});
  return n;
}

ExplanationBundle explain(const ModelGraph& model, const fs::path& image_path,
                          std::optional<int> class_override, const PipelineConfig& config,
                          ConceptIdentifier& identifier, ConceptVisualizer& visualizer,
                          LlmClient& llm) {
  config.validate();
  const bool persist = !config.output_dir.empty();
  if (persist) fs::create_directories(config.output_dir);

  ExplanationBundle bundle;
  bundle.source_name = image_path.filename().string();
  bundle.input = stage("load_image", [&] { return read_png(image_path); });
  const Tensor pixels = stage("load_image", [&] {
    return image_to_tensor(bundle.input, model.input_shape().at(0));
  });
  if (persist) write_png(config.output_dir / "input.png", bundle.input);

  bundle.prediction = stage("predict", [&] { return predict(model, pixels, class_override); });
  spdlog::info("predicted \"{}\" ({})", bundle.prediction.label,
               format_percent(100.0 * bundle.prediction.confidence));

  ConceptSelection selection = stage("identify", [&] {
    return identifier.identify(pixels, bundle.prediction.class_id, config.n);
  });
  if (selection.concepts.empty()) throw PipelineError("identify", "no concepts identified");
  if (selection.fewer_than_requested) {
    spdlog::warn("only {} of {} requested concepts have positive relevance",
                 selection.concepts.size(), config.n);
  }

  std::vector<ConceptEvidence> evidence;
  for (std::size_t i = 0; i < selection.concepts.size(); ++i) {
    ConceptExplanation c;
    c.record.attribution = std::move(selection.concepts[i]);
    c.record.prototypes = stage("visualize", [&] {
      return visualizer.visualize(c.record.attribution.concept_ref, config.k);
    });
    ConceptEvidence e;
    e.share = c.record.attribution.relevance_share;
    e.overlay = concept_overlay(bundle.input, c.record.attribution.heatmap);
    for (const ConceptPrototype& p : c.record.prototypes) {
      e.prototypes.push_back({tensor_to_image(p.image), prototype_overlay(p)});
    }
    evidence.push_back(std::move(e));
    bundle.concepts.push_back(std::move(c));
    if (persist) {
      stage("save", [&] {
        write_concept_section(bundle.concepts.back().record, i + 1, config.output_dir);
        write_rendered_assets(bundle, i, config.output_dir);
        return 0;
      });
    }
  }

  Narration narration = narrate(llm, bundle.input, bundle.prediction, evidence, config.prompts,
                                config.parallel);
  for (std::size_t i = 0; i < bundle.concepts.size(); ++i) {
    bundle.concepts[i].label = std::move(narration.labels[i]);
    bundle.concepts[i].context = std::move(narration.contexts[i]);
    bundle.concepts[i].taxonomy = parse_taxonomy(bundle.concepts[i].context);
  }
  bundle.summary = std::move(narration.summary);

  bundle.provenance.model_sha256 = model_fingerprint(model);
  bundle.provenance.layer_name = config.layer_name;
  bundle.provenance.rules = config.rules;
  bundle.provenance.llm_model_id = config.prompts.model_id;
  bundle.provenance.temperature = config.prompts.temperature;
  bundle.provenance.prompts = std::move(narration.prompts);

  stage("save", [&] {
    bundle.validate();
    if (persist) save_bundle(bundle, config.output_dir);
    return 0;
  });
  return bundle;
}

void save_bundle(const ExplanationBundle& bundle, const fs::path& dir) {
  bundle.validate();
  fs::create_directories(dir);
  write_png(dir / "input.png", bundle.input);
  json concepts = json::array();
  for (std::size_t i = 0; i < bundle.concepts.size(); ++i) {
    const ConceptExplanation& c = bundle.concepts[i];
    const std::size_t rank = i + 1;
    json entry = write_concept_section(c.record, rank, dir);
    write_rendered_assets(bundle, i, dir);
    entry["heatmap_image"] = asset(rank, "heatmap.png");
    entry["overlay_file"] = asset(rank, "overlay.png");
    for (std::size_t j = 0; j < c.record.prototypes.size(); ++j) {
      entry["prototypes"][j]["overlay_file"] =
          asset(rank, "proto_" + std::to_string(j + 1) + "_overlay.png");
    }
    entry["label"] = c.label;
    entry["contextualization"] = c.context;
    entry["recognition"] = taxonomy_value(c.taxonomy.recognition, recognition_name);
    entry["relation"] = taxonomy_value(c.taxonomy.relation, relation_name);
    concepts.push_back(std::move(entry));
  }
  const json manifest = {
      {"format", "cexplain.bundle"},
      {"schema_version", kBundleSchemaVersion},
      {"source_name", bundle.source_name},
      {"input", {{"file", "input.png"},
                 {"width", bundle.input.width},
                 {"height", bundle.input.height}}},
      {"prediction", {{"class_id", bundle.prediction.class_id},
                      {"label", bundle.prediction.label},
                      {"confidence", bundle.prediction.confidence}}},
      {"concepts", std::move(concepts)},
      {"summary", bundle.summary},
      {"provenance", provenance_to_json(bundle.provenance)}};
  write_text_file(dir / "manifest.json", manifest.dump(2) + "\n");
}

ExplanationBundle load_bundle(const fs::path& dir) {
  require_file(dir, "manifest.json");
  json m;
  try {
    m = json::parse(read_text_file(dir / "manifest.json"));
  } catch (const json::exception& e) {
    throw SchemaError(std::string("manifest.json: ") + e.what());
  }
  if (!m.is_object() || m.value("format", "") != "cexplain.bundle") {
    throw SchemaError("manifest.json: format must be \"cexplain.bundle\"");
  }
  const json version = m.value("schema_version", json(nullptr));
  if (version != kBundleSchemaVersion) {
    throw SchemaError("manifest.json: unsupported schema_version " + version.dump() +
                      " (this build reads version " + std::to_string(kBundleSchemaVersion) +
                      ")");
  }
  ExplanationBundle b;
  try {
    b.source_name = m.at("source_name").get<std::string>();
    const std::string input_file = m.at("input").at("file").get<std::string>();
    require_file(dir, input_file);
    b.input = read_png(dir / input_file);
    const json& p = m.at("prediction");
    b.prediction = {p.at("class_id").get<int>(), p.at("label").get<std::string>(),
                    p.at("confidence").get<double>()};
    for (const json& entry : m.at("concepts")) {
      ConceptExplanation c;
      require_file(dir, entry.at("heatmap_image").get<std::string>());
      require_file(dir, entry.at("overlay_file").get<std::string>());
      for (const json& proto : entry.at("prototypes")) {
        require_file(dir, proto.at("overlay_file").get<std::string>());
      }
      c.record = read_concept_section(entry, dir);
      c.label = entry.at("label").get<std::string>();
      c.context = entry.at("contextualization").get<std::string>();
      c.taxonomy = parse_taxonomy(c.context);
      b.concepts.push_back(std::move(c));
    }
    b.summary = m.at("summary").get<std::string>();
    b.provenance = provenance_from_json(m.at("provenance"));
  } catch (const json::exception& e) {
    throw SchemaError(std::string("manifest.json: ") + e.what());
  }
  b.validate();
  return b;
}

}  // namespace cexplain
