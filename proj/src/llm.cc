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

#include "cexplain/llm.h"

#include <algorithm>
#include <array>
#include <cctype>
#include <cstdio>
#include <sstream>

#include "cexplain/error.h"
#include "cexplain/io.h"
#include "cexplain/random.h"
#include "cexplain/rendering.h"

namespace cexplain {
namespace embedded {
extern const std::string_view kLabelPrompt;
extern const std::string_view kContextPrompt;
extern const std::string_view kSummaryPrompt;
}  // namespace embedded

namespace {

constexpr std::string_view kPredictedClass = "Predicted class: ";
constexpr std::string_view kConfidence = "Model confidence: ";
constexpr std::string_view kRelevance = "Concept relevance: ";
constexpr std::string_view kDescription = "Concept description: ";

constexpr std::array<std::string_view, 4> kRecognitionPhrases = {
    "direct recognition", "feature recognition", "co-occurrence", "misidentification"};
constexpr std::array<std::string_view, 4> kRelationPhrases = {
    "exact classification", "compositional association", "contextual association",
    "misassociation"};

std::string lower(std::string_view s) {
  std::string out(s);
  for (char& c : out) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
  return out;
}

std::string dump(const nlohmann::json& j) {
  return j.dump(-1, ' ', false, nlohmann::json::error_handler_t::replace);
}

// Value after `key` on the first line that starts with it.
std::string field(std::string_view text, std::string_view key) {
  std::size_t pos = 0;
  while (pos < text.size()) {
    std::size_t end = text.find('\n', pos);
    if (end == std::string_view::npos) end = text.size();
    const std::string_view line = text.substr(pos, end - pos);
    if (line.starts_with(key)) return std::string(line.substr(key.size()));
    pos = end + 1;
  }
  return {};
}

std::string all_text(const ChatRequest& request) {
  std::string out;
  for (const UserPart& part : request.user_parts) {
    if (const auto* s = std::get_if<std::string>(&part)) {
      out += *s;
      out += '\n';
    }
  }
  return out;
}

std::string first_sentence(std::string_view text) {
  std::size_t pos = 0;
  while (pos < text.size()) {
    const std::size_t dot = text.find_first_of(".!?", pos);
    if (dot == std::string_view::npos) break;
    // Skip punctuation inside a quotation, as in "holes." or "holes.''
    if (dot + 1 < text.size() && (text[dot + 1] == '"' || text[dot + 1] == '\'')) {
      pos = dot + 1;
      continue;
    }
    return std::string(text.substr(0, dot + 1));
  }
  return std::string(text);
}

// The quoted name in a label, or the first sentence without its full stop.
std::string concept_name(std::string_view label) {
  const std::size_t open = label.find('"');
  if (open != std::string_view::npos) {
    const std::size_t close = label.find('"', open + 1);
    if (close != std::string_view::npos) {
      std::string name(label.substr(open + 1, close - open - 1));
      while (!name.empty() && (name.back() == '.' || name.back() == ',')) name.pop_back();
      if (!name.empty()) return name;
    }
  }
  std::string s = first_sentence(label);
  while (!s.empty() && (s.back() == '.' || s.back() == ' ')) s.pop_back();
  return s;
}

SplitMix64 rng_for(const ChatRequest& request) {
  return SplitMix64(std::stoull(request_hash(request).substr(0, 16), nullptr, 16));
}

std::string synthesize_label(const ChatRequest& request) {
  static constexpr std::array<std::string_view, 8> kAdjectives = {
      "striped", "dotted", "ringed", "checkered", "curved", "angular", "speckled", "layered"};
  static constexpr std::array<std::string_view, 8> kNouns = {
      "bands", "edges", "blobs", "outlines", "corners", "arcs", "grids", "patches"};
  SplitMix64 rng = rng_for(request);
  const std::string_view adj = kAdjectives[rng.next() % kAdjectives.size()];
  const std::string_view noun = kNouns[rng.next() % kNouns.size()];
  std::ostringstream out;
  out << "The concept appears to be \"" << adj << ' ' << noun << ".\" These are seen in the "
      << "highlighted regions of the representatives. The pattern is characterized by " << adj
      << ' ' << noun << " that stand out against their surroundings.";
  return out.str();
}

std::string synthesize_context(const ChatRequest& request) {
  const std::string text = all_text(request);
  const std::string predicted = field(text, kPredictedClass);
  const std::string name = concept_name(field(text, kDescription));
  SplitMix64 rng = rng_for(request);
  const auto recognition = static_cast<Recognition>(rng.next() % 4);
  const auto relation = recognition == Recognition::kMisidentification
                            ? Relation::kMisassociation
                            : static_cast<Relation>(rng.next() % 3);
  std::ostringstream out;
  out << "The concept is described as \"" << name << ".\" The saliency map highlights the region "
      << "of the image where this pattern is located. ";
  switch (recognition) {
    case Recognition::kDirect:
      out << "The highlighted pattern matches the description, making this a direct "
             "recognition of the concept.";
      break;
    case Recognition::kFeature:
      out << "The highlighted region shares visual cues with the concept, making this a "
             "feature recognition of the highlighted pattern.";
      break;
    case Recognition::kCoOccurrence:
      out << "The concept is not visible in the highlighted region, but it often appears "
             "together with it, making this a co-occurrence recognition of the concept.";
      break;
    case Recognition::kMisidentification:
      out << "The concept is not present in any form, making this a misidentification.";
      break;
  }
  out << " The recognized concept relates to the prediction of \"" << predicted
      << "\" through ";
  switch (relation) {
    case Relation::kExact:
      out << "exact classification, as the recognized concept is the predicted class itself.";
      break;
    case Relation::kCompositional:
      out << "compositional association, as it is a part of the predicted object.";
      break;
    case Relation::kContextual:
      out << "contextual association, as it commonly appears around the predicted object.";
      break;
    case Relation::kMisassociation:
      out << "misassociation, as it is unrelated to the predicted object.";
      break;
  }
  return out.str();
}

std::string synthesize_summary(const ChatRequest& request) {
  const std::string text = all_text(request);
  struct Block {
    std::string header;
    std::string body;
  };
  std::vector<Block> blocks;
  std::istringstream in(text);
  std::string line;
  while (std::getline(in, line)) {
    if (line.starts_with("Concept ") && line.ends_with("):")) {
      blocks.push_back({line.substr(0, line.size() - 1), {}});
    } else if (!blocks.empty() && !line.empty() && blocks.back().body.empty()) {
      blocks.back().body = line;
    }
  }
  const std::string predicted = field(text, kPredictedClass);
  std::ostringstream out;
  out << "The model predicts the image as \"" << predicted << "\" with "
      << field(text, kConfidence) << " confidence, supported by ";
  if (blocks.size() == 1) {
    out << "one key concept.";
  } else {
    out << blocks.size() << " key concepts.";
  }
  for (const Block& b : blocks) {
    out << ' ' << b.header << ": " << first_sentence(b.body);
  }
  out << " Together, these concepts explain the model's classification of the image as "
      << predicted << '.';
  return out.str();
}

}  // namespace

std::string_view stage_name(PromptStage stage) {
  switch (stage) {
    case PromptStage::kLabel: return "label";
    case PromptStage::kContext: return "context";
    case PromptStage::kSummary: return "summary";
  }
  return "label";
}

PromptStage stage_from_name(std::string_view name) {
  if (name == "label") return PromptStage::kLabel;
  if (name == "context") return PromptStage::kContext;
  if (name == "summary") return PromptStage::kSummary;
  throw SchemaError("unknown prompt stage: " + std::string(name));
}

std::size_t ChatRequest::image_count() const {
  return static_cast<std::size_t>(std::count_if(
      user_parts.begin(), user_parts.end(),
      [](const UserPart& p) { return std::holds_alternative<ImagePart>(p); }));
}

void ChatRequest::validate() const {
  if (user_parts.empty()) throw LlmError("chat request has no user parts");
  for (const UserPart& part : user_parts) {
    if (const auto* img = std::get_if<ImagePart>(&part); img && img->base64.empty()) {
      throw LlmError("chat request has an empty image part");
    }
  }
  if (stage == PromptStage::kSummary && image_count() != 0) {
    throw LlmError("summary requests must not carry images");
  }
}

ImagePart png_part(const Image& image) {
  return {"image/png", base64_encode(encode_png(image))};
}

nlohmann::json chat_request_to_json(const ChatRequest& request) {
  nlohmann::json content = nlohmann::json::array();
  for (const UserPart& part : request.user_parts) {
    if (const auto* s = std::get_if<std::string>(&part)) {
      content.push_back({{"type", "text"}, {"text", *s}});
    } else {
      const auto& img = std::get<ImagePart>(part);
      content.push_back(
          {{"type", "image_url"},
           {"image_url", {{"url", "data:" + img.media_type + ";base64," + img.base64}}}});
    }
  }
  return {{"model", request.model_id},
          {"temperature", request.temperature},
          {"messages",
           {{{"role", "system"}, {"content", request.system_text}},
            {{"role", "user"}, {"content", std::move(content)}}}}};
}

std::string request_hash(const ChatRequest& request) {
  return sha256_hex(dump(chat_request_to_json(request)));
}

std::string format_percent(double percent) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.2f%%", percent);
  return buf;
}

ChatRequest build_label_prompt(std::span<const PrototypePair> prototypes,
                               const PromptOptions& options) {
  if (prototypes.empty()) throw LlmError("labeling needs at least one representative");
  ChatRequest req;
  req.stage = PromptStage::kLabel;
  req.system_text = std::string(embedded::kLabelPrompt);
  req.model_id = options.model_id;
  req.temperature = options.temperature;
  std::vector<Image> pairs;
  for (const PrototypePair& p : prototypes) {
    const std::array<Image, 2> both = {p.image, p.overlay};
    pairs.push_back(grid(both, 2));
  }
  if (options.composite_grid) {
    req.user_parts.emplace_back("The " + std::to_string(pairs.size()) +
                                " representatives of the concept, arranged in a grid. Each "
                                "cell shows an image and its heatmap overlay.");
    req.user_parts.emplace_back(png_part(grid(pairs, options.grid_columns)));
  } else {
    req.user_parts.emplace_back("The " + std::to_string(pairs.size()) +
                                " representatives of the concept follow. Each shows an image "
                                "and its heatmap overlay.");
    for (std::size_t j = 0; j < pairs.size(); ++j) {
      req.user_parts.emplace_back("Representative " + std::to_string(j + 1) + ":");
      req.user_parts.emplace_back(png_part(pairs[j]));
    }
  }
  req.user_parts.emplace_back(std::string("Name the common visual pattern."));
  return req;
}

ChatRequest build_context_prompt(const Image& image, const Image& overlay,
                                 const Prediction& prediction, double share,
                                 const std::string& label, const PromptOptions& options) {
  if (label.empty()) throw LlmError("contextualization needs a concept label");
  if (!(share >= 0.0 && share <= 100.0)) throw LlmError("relevance share must lie in [0, 100]");
  ChatRequest req;
  req.stage = PromptStage::kContext;
  req.system_text = std::string(embedded::kContextPrompt);
  req.model_id = options.model_id;
  req.temperature = options.temperature;
  req.user_parts.emplace_back(std::string("Original image:"));
  req.user_parts.emplace_back(png_part(image));
  req.user_parts.emplace_back(std::string("Heatmap of the concept over the original image:"));
  req.user_parts.emplace_back(png_part(overlay));
  std::string facts;
  facts += std::string(kPredictedClass) + prediction.label + "\n";
  facts += std::string(kConfidence) + format_percent(100.0 * prediction.confidence) + "\n";
  facts += std::string(kRelevance) + format_percent(share) + "\n";
  facts += std::string(kDescription) + label;
  req.user_parts.emplace_back(std::move(facts));
  return req;
}

ChatRequest build_summary_prompt(const Prediction& prediction,
                                 std::span<const ContextEntry> contexts,
                                 const PromptOptions& options) {
  if (contexts.empty()) throw LlmError("summary needs at least one concept explanation");
  ChatRequest req;
  req.stage = PromptStage::kSummary;
  req.system_text = std::string(embedded::kSummaryPrompt);
  req.model_id = options.model_id;
  req.temperature = options.temperature;
  std::string text;
  text += std::string(kPredictedClass) + prediction.label + "\n";
  text += std::string(kConfidence) + format_percent(100.0 * prediction.confidence) + "\n";
  for (std::size_t i = 0; i < contexts.size(); ++i) {
    text += "\nConcept " + std::to_string(i + 1) + " (" + format_percent(contexts[i].share) +
            "):\n" + contexts[i].text + "\n";
  }
  req.user_parts.emplace_back(std::move(text));
  return req;
}

Completion complete(LlmClient& client, const ChatRequest& request) {
  request.validate();
  Completion c;
  c.request_hash = request_hash(request);
  c.text = client.send(request);
  if (c.text.empty()) throw MalformedResponseError("chat model returned an empty reply");
  c.response_hash = sha256_hex(c.text);
  return c;
}

std::string MockClient::send(const ChatRequest& request) {
  if (auto it = cassette_.find(request_hash(request)); it != cassette_.end()) {
    return it->second;
  }
  return synthesize_response(request);
}

std::string synthesize_response(const ChatRequest& request) {
  switch (request.stage) {
    case PromptStage::kLabel: return synthesize_label(request);
    case PromptStage::kContext: return synthesize_context(request);
    case PromptStage::kSummary: return synthesize_summary(request);
  }
  return {};
}

MockClient load_cassette(const std::filesystem::path& path) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(read_text_file(path));
  } catch (const nlohmann::json::exception& e) {
    throw SchemaError(path.string() + ": " + e.what());
  }
  if (!j.is_object() || j.value("format", "") != "cexplain.cassette" ||
      j.value("version", 0) != 1 || !j.contains("responses") || !j["responses"].is_object()) {
    throw SchemaError(path.string() + ": not a version 1 cassette");
  }
  std::map<std::string, std::string> responses;
  for (const auto& [hash, text] : j["responses"].items()) {
    if (!text.is_string()) throw SchemaError(path.string() + ": response " + hash + " is not text");
    responses[hash] = text.get<std::string>();
  }
  return MockClient(std::move(responses));
}

void save_cassette(const std::filesystem::path& path,
                   const std::map<std::string, std::string>& responses) {
  nlohmann::json j = {{"format", "cexplain.cassette"}, {"version", 1}, {"responses", responses}};
  write_text_file(path, j.dump(2) + "\n");
}

std::string_view recognition_name(Recognition r) {
  static constexpr std::array<std::string_view, 4> kNames = {"direct", "feature",
                                                             "co_occurrence", "misidentification"};
  return kNames[static_cast<std::size_t>(r)];
}

std::string_view relation_name(Relation r) {
  static constexpr std::array<std::string_view, 4> kNames = {"exact", "compositional",
                                                             "contextual", "misassociation"};
  return kNames[static_cast<std::size_t>(r)];
}

Recognition recognition_from_name(std::string_view name) {
  for (int i = 0; i < 4; ++i) {
    if (recognition_name(static_cast<Recognition>(i)) == name) return static_cast<Recognition>(i);
  }
  throw SchemaError("unknown recognition category: " + std::string(name));
}

Relation relation_from_name(std::string_view name) {
  for (int i = 0; i < 4; ++i) {
    if (relation_name(static_cast<Relation>(i)) == name) return static_cast<Relation>(i);
  }
  throw SchemaError("unknown relation category: " + std::string(name));
}

Taxonomy parse_taxonomy(std::string_view text) {
  const std::string haystack = lower(text);
  auto scan = [&](const auto& phrases) -> std::optional<int> {
    std::optional<int> found;
    for (std::size_t i = 0; i < phrases.size(); ++i) {
      if (haystack.find(phrases[i]) == std::string::npos) continue;
      if (found) return std::nullopt;
      found = static_cast<int>(i);
    }
    return found;
  };
  Taxonomy t;
  if (auto i = scan(kRecognitionPhrases)) t.recognition = static_cast<Recognition>(*i);
  if (auto i = scan(kRelationPhrases)) t.relation = static_cast<Relation>(*i);
  return t;
}

}  // namespace cexplain
