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

// HTTP backend for the questionnaire: serves the form and its assets,
// stores responses and reports aggregation tables.
//
//   GET  /health
//   GET  /questionnaire                  questionnaire.json, byte for byte
//   GET  /assets/<path>                  PNG assets
//   POST /responses                      ResponseSet -> 201 {receipt} | 422 {violations}
//   GET  /aggregate?kind=overall|rank|conditional[&given=q1,q2]

#ifndef CEXPLAIN_SURVEY_SERVICE_H_
#define CEXPLAIN_SURVEY_SERVICE_H_

#include <filesystem>
#include <memory>
#include <mutex>
#include <optional>
#include <set>
#include <shared_mutex>
#include <string>
#include <thread>
#include <vector>

#include "cexplain/questionnaire.h"

namespace httplib {
class Server;
}

namespace cexplain {

// Content hash of a response: SHA-256 of its compact JSON form.
std::string response_receipt(const ResponseSet& r);

struct StoreResult {
  std::string receipt;
  bool stored = false;  // false when an identical response was already stored
};

class ResponseStore {
 public:
  virtual ~ResponseStore() = default;
  virtual StoreResult record(const ResponseSet& r) = 0;
  virtual std::vector<ResponseSet> snapshot() const = 0;
};

// Append-only JSON lines. Appends are serialized; each response is written
// as one complete line and flushed before record() returns.
class JsonlResponseStore : public ResponseStore {
 public:
  // Reads any responses already in the file.
  explicit JsonlResponseStore(std::filesystem::path path);

  StoreResult record(const ResponseSet& r) override;
  std::vector<ResponseSet> snapshot() const override;

 private:
  std::filesystem::path path_;
  mutable std::shared_mutex mutex_;
  std::vector<ResponseSet> responses_;
  std::set<std::string> receipts_;
};

struct ServiceConfig {
  std::string host = "127.0.0.1";
  int port = 8080;  // 0 picks a free port
  std::filesystem::path questionnaire_path;
  std::filesystem::path assets_dir;
  std::filesystem::path responses_path;
  // When set, every endpoint except /health requires ?token= or the
  // X-Survey-Token header.
  std::optional<std::string> token;
};

class SurveyService {
 public:
  // Loads and validates the questionnaire and opens the response store.
  explicit SurveyService(ServiceConfig config);
  ~SurveyService();
  SurveyService(const SurveyService&) = delete;
  SurveyService& operator=(const SurveyService&) = delete;

  // Binds and serves on a background thread; returns the bound port.
  // Throws Error when the port cannot be bound.
  int start();
  // Binds and serves on the calling thread until stop().
  void run();
  void stop();

  const Questionnaire& questionnaire() const { return questionnaire_; }

 private:
  void bind();
  void install_routes();

  ServiceConfig config_;
  std::string questionnaire_bytes_;
  Questionnaire questionnaire_;
  JsonlResponseStore store_;
  std::unique_ptr<httplib::Server> server_;
  std::thread thread_;
  int port_ = 0;
};

}  // namespace cexplain

#endif  // CEXPLAIN_SURVEY_SERVICE_H_
