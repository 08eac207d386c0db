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

#include "httplib.h"

#include <spdlog/spdlog.h>

#include <cstdlib>
#include <thread>

#include "cexplain/error.h"
#include "cexplain/llm.h"

namespace cexplain {
namespace {

std::string reply_text(const std::string& body) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(body);
  } catch (const nlohmann::json::exception&) {
    throw MalformedResponseError("chat reply is not JSON");
  }
  try {
    const auto& content = j.at("choices").at(0).at("message").at("content");
    if (!content.is_string()) throw MalformedResponseError("chat reply content is not text");
    return content.get<std::string>();
  } catch (const nlohmann::json::exception&) {
    throw MalformedResponseError("chat reply has no choices[0].message.content");
  }
}

bool retryable(int status) { return status == 408 || status == 429 || status >= 500; }

}  // namespace

std::string HttpClient::send(const ChatRequest& request) {
  std::string key = config_.api_key;
  if (key.empty()) {
    if (const char* env = std::getenv(config_.api_key_env.c_str())) key = env;
  }
  if (key.empty()) throw AuthError("no API key: set " + config_.api_key_env);

  const std::string body = chat_request_to_json(request).dump();
  const httplib::Headers headers = {{"Authorization", "Bearer " + key}};
  const auto seconds = config_.timeout.count() / 1000;
  const auto micros = (config_.timeout.count() % 1000) * 1000;

  auto backoff = config_.initial_backoff;
  std::string last_error;
  for (int attempt = 0; attempt <= config_.max_retries; ++attempt) {
    if (attempt > 0) {
      spdlog::warn("chat request failed ({}), retry {} of {} in {} ms", last_error, attempt,
                   config_.max_retries, backoff.count());
      std::this_thread::sleep_for(backoff);
      backoff = std::chrono::milliseconds(
          static_cast<long long>(backoff.count() * config_.backoff_multiplier));
    }
    httplib::Client client(config_.base_url);
    client.set_connection_timeout(seconds, micros);
    client.set_read_timeout(seconds, micros);
    client.set_write_timeout(seconds, micros);
    const auto res = client.Post(config_.path, headers, body, "application/json");
    if (!res) {
      last_error = httplib::to_string(res.error());
      continue;
    }
    if (res->status == 401 || res->status == 403) {
      throw AuthError("chat endpoint rejected the credentials (HTTP " +
                      std::to_string(res->status) + ")");
    }
    if (retryable(res->status)) {
      last_error = "HTTP " + std::to_string(res->status);
      continue;
    }
    if (res->status != 200) {
      throw LlmError("chat endpoint returned HTTP " + std::to_string(res->status) + ": " +
                     res->body.substr(0, 200));
    }
    return reply_text(res->body);
  }
  throw LlmError("chat request failed after " + std::to_string(config_.max_retries + 1) +
                 " attempts: " + last_error);
}

}  // namespace cexplain
