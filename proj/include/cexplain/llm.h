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

// Prompt construction for the labeling, contextualization and summary
// stages, plus chat clients (a hash-keyed mock and an HTTP client for
// chat-completion endpoints).

#ifndef CEXPLAIN_LLM_H_
#define CEXPLAIN_LLM_H_

#include <chrono>
#include <filesystem>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <variant>
#include <vector>

#include "json.hpp"

#include "cexplain/image.h"
#include "cexplain/model.h"

namespace cexplain {

inline constexpr std::string_view kDefaultModelId = "gpt-4o-2024-11-20";

enum class PromptStage { kLabel, kContext, kSummary };
std::string_view stage_name(PromptStage stage);
PromptStage stage_from_name(std::string_view name);

struct ImagePart {
  std::string media_type;
  std::string base64;

  friend bool operator==(const ImagePart&, const ImagePart&) = default;
};

using UserPart = std::variant<std::string, ImagePart>;

struct ChatRequest {
  PromptStage stage = PromptStage::kLabel;
  std::string system_text;
  std::vector<UserPart> user_parts;
  std::string model_id{kDefaultModelId};
  double temperature = 0.0;

  std::size_t image_count() const;
  // Throws LlmError on an empty part list, an empty image payload, or an
  // image in a summary request.
  void validate() const;
};

ImagePart png_part(const Image& image);

// Chat-completion request body. The dump of this object is what gets hashed.
nlohmann::json chat_request_to_json(const ChatRequest& request);
// SHA-256 of the compact dump of chat_request_to_json (keys sorted).
std::string request_hash(const ChatRequest& request);

struct PromptOptions {
  std::string model_id{kDefaultModelId};
  double temperature = 0.0;
  // Send the k prototype pairs as one composite grid image instead of k parts.
  bool composite_grid = false;
  std::size_t grid_columns = 3;
};

// One representative r_i^j: reference image and its concept overlay.
struct PrototypePair {
  Image image;
  Image overlay;
};

// Each pair becomes one side-by-side image part, or all pairs one grid part.
ChatRequest build_label_prompt(std::span<const PrototypePair> prototypes,
                               const PromptOptions& options = {});

// Exactly two image parts: the original image, then the concept overlay.
// share is a percentage in [0, 100].
ChatRequest build_context_prompt(const Image& image, const Image& overlay,
                                 const Prediction& prediction, double share,
                                 const std::string& label, const PromptOptions& options = {});

struct ContextEntry {
  double share = 0.0;
  std::string text;
};

// Text only. Entries are given in concept rank order.
ChatRequest build_summary_prompt(const Prediction& prediction,
                                 std::span<const ContextEntry> contexts,
                                 const PromptOptions& options = {});

// Two decimals and a percent sign: 40.62%.
std::string format_percent(double percent);

class LlmClient {
 public:
  virtual ~LlmClient() = default;
  // Must be safe to call concurrently.
  virtual std::string send(const ChatRequest& request) = 0;
};

struct Completion {
  std::string text;
  std::string request_hash;
  std::string response_hash;
};

// Validates the request, sends it and hashes both directions. An empty reply
// is a MalformedResponseError.
Completion complete(LlmClient& client, const ChatRequest& request);

// Replays responses by request hash. Requests missing from the cassette get a
// synthesized reply that depends only on the request content.
class MockClient : public LlmClient {
 public:
  MockClient() = default;
  explicit MockClient(std::map<std::string, std::string> cassette)
      : cassette_(std::move(cassette)) {}

  std::string send(const ChatRequest& request) override;
  const std::map<std::string, std::string>& cassette() const { return cassette_; }

 private:
  std::map<std::string, std::string> cassette_;
};

// {"format": "cexplain.cassette", "version": 1, "responses": {hash: text}}
MockClient load_cassette(const std::filesystem::path& path);
void save_cassette(const std::filesystem::path& path,
                   const std::map<std::string, std::string>& responses);

// The reply MockClient invents when the cassette has no entry.
std::string synthesize_response(const ChatRequest& request);

struct HttpClientConfig {
  // scheme://host[:port]; the path is appended per request.
  std::string base_url = "https://api.openai.com";
  std::string path = "/v1/chat/completions";
  // Empty means: read the api_key_env variable at send time.
  std::string api_key;
  std::string api_key_env = "LLM_API_KEY";
  std::chrono::milliseconds timeout{60000};
  int max_retries = 3;
  std::chrono::milliseconds initial_backoff{1000};
  double backoff_multiplier = 2.0;
};

// POSTs chat-completion JSON. Transport errors, 408, 429 and 5xx are retried
// with exponential backoff; 401/403 throw AuthError at once.
class HttpClient : public LlmClient {
 public:
  explicit HttpClient(HttpClientConfig config) : config_(std::move(config)) {}
  std::string send(const ChatRequest& request) override;
  const HttpClientConfig& config() const { return config_; }

 private:
  HttpClientConfig config_;
};

enum class Recognition { kDirect, kFeature, kCoOccurrence, kMisidentification };
enum class Relation { kExact, kCompositional, kContextual, kMisassociation };

std::string_view recognition_name(Recognition r);
std::string_view relation_name(Relation r);
Recognition recognition_from_name(std::string_view name);
Relation relation_from_name(std::string_view name);

struct Taxonomy {
  std::optional<Recognition> recognition;
  std::optional<Relation> relation;

  friend bool operator==(const Taxonomy&, const Taxonomy&) = default;
};

// Case-insensitive scan for the category phrases. A family with zero or more
// than one distinct phrase present stays empty.
Taxonomy parse_taxonomy(std::string_view text);

}  // namespace cexplain

#endif  // CEXPLAIN_LLM_H_
