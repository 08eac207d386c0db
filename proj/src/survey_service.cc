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

#include "cexplain/survey_service.h"

#include <spdlog/spdlog.h>

#include <sys/socket.h>

#include <fstream>

#include "cexplain/error.h"
#include "cexplain/io.h"
#include "httplib.h"

namespace cexplain {
namespace {

namespace fs = std::filesystem;
using nlohmann::json;

constexpr const char* kJson = "application/json";

void send_json(httplib::Response& res, int status, const json& body) {
  res.status = status;
  res.set_content(body.dump(2) + "\n", kJson);
}

void send_error(httplib::Response& res, int status, const std::string& message) {
  send_json(res, status, {{"error", message}});
}

std::vector<std::string> split_commas(const std::string& text) {
  std::vector<std::string> out;
  std::size_t start = 0;
  while (start <= text.size()) {
    const std::size_t end = std::min(text.find(',', start), text.size());
    if (end > start) out.push_back(text.substr(start, end - start));
    start = end + 1;
  }
  return out;
}

// Resolves an asset path under `root`, refusing anything that escapes it.
std::optional<fs::path> asset_path(const fs::path& root, const std::string& rel) {
  const fs::path p = fs::path(rel).lexically_normal();
  if (rel.empty() || p.is_absolute() || p.empty()) return std::nullopt;
  for (const fs::path& part : p) {
    if (part == "..") return std::nullopt;
  }
  const fs::path full = root / p;
  if (!fs::is_regular_file(full)) return std::nullopt;
  return full;
}

}  // namespace

std::string response_receipt(const ResponseSet& r) {
  return sha256_hex(response_to_json(r).dump());
}

JsonlResponseStore::JsonlResponseStore(fs::path path) : path_(std::move(path)) {
  if (fs::exists(path_)) {
    for (ResponseSet& r : load_responses(path_)) {
      if (receipts_.insert(response_receipt(r)).second) responses_.push_back(std::move(r));
    }
  } else {
    if (path_.has_parent_path()) fs::create_directories(path_.parent_path());
    std::ofstream create(path_, std::ios::app);
    if (!create) throw Error("cannot create " + path_.string());
  }
}

StoreResult JsonlResponseStore::record(const ResponseSet& r) {
  const std::string line = response_to_json(r).dump();
  const std::string receipt = sha256_hex(line);
  std::unique_lock lock(mutex_);
  if (receipts_.count(receipt)) return {receipt, false};
  std::ofstream out(path_, std::ios::app | std::ios::binary);
  out << line << '\n';
  out.flush();
  if (!out) throw Error("cannot append to " + path_.string());
  receipts_.insert(receipt);
  responses_.push_back(r);
  return {receipt, true};
}

std::vector<ResponseSet> JsonlResponseStore::snapshot() const {
  std::shared_lock lock(mutex_);
  return responses_;
}

SurveyService::SurveyService(ServiceConfig config)
    : config_(std::move(config)),
      questionnaire_bytes_(read_text_file(config_.questionnaire_path)),
      questionnaire_(load_questionnaire(config_.questionnaire_path)),
      store_(config_.responses_path),
      server_(std::make_unique<httplib::Server>()) {
  if (!fs::is_directory(config_.assets_dir)) {
    throw Error("assets directory " + config_.assets_dir.string() + " does not exist");
  }
  install_routes();
}

SurveyService::~SurveyService() { stop(); }

void SurveyService::install_routes() {
  httplib::Server& s = *server_;
  s.set_socket_options([](socket_t sock) {
    int yes = 1;
    setsockopt(sock, SOL_SOCKET, SO_REUSEADDR, &yes, sizeof(yes));
  });
  const auto authorized = [this](const httplib::Request& req, httplib::Response& res) {
    if (!config_.token) return true;
    const std::string given = req.has_param("token") ? req.get_param_value("token")
                                                     : req.get_header_value("X-Survey-Token");
    if (given == *config_.token) return true;
    send_error(res, 403, "missing or wrong token");
    return false;
  };

  s.Get("/health", [](const httplib::Request&, httplib::Response& res) {
    send_json(res, 200, {{"status", "ok"}});
  });

  s.Get("/questionnaire", [this, authorized](const httplib::Request& req,
                                             httplib::Response& res) {
    if (!authorized(req, res)) return;
    res.set_content(questionnaire_bytes_, kJson);
  });

  s.Get(R"(/assets/(.+))", [this, authorized](const httplib::Request& req,
                                              httplib::Response& res) {
    if (!authorized(req, res)) return;
    const auto path = asset_path(config_.assets_dir, req.matches[1].str());
    if (!path) return send_error(res, 404, "no such asset");
    const auto bytes = read_binary_file(*path);
    const char* type = path->extension() == ".png" ? "image/png" : "application/octet-stream";
    res.set_content(std::string(bytes.begin(), bytes.end()), type);
  });

  s.Post("/responses", [this, authorized](const httplib::Request& req,
                                          httplib::Response& res) {
    if (!authorized(req, res)) return;
    json body;
    try {
      body = json::parse(req.body);
    } catch (const json::exception& e) {
      return send_error(res, 400, std::string("body is not JSON: ") + e.what());
    }
    ResponseSet r;
    try {
      r = response_from_json(body);
    } catch (const SchemaError& e) {
      const std::vector<Violation> v = {{"malformed", "", e.what()}};
      return send_json(res, 422, violations_to_json(v));
    }
    const std::vector<Violation> violations = validate_response(questionnaire_, r);
    if (!violations.empty()) return send_json(res, 422, violations_to_json(violations));
    try {
      const StoreResult stored = store_.record(r);
      send_json(res, 201, {{"receipt", stored.receipt}, {"stored", stored.stored}});
    } catch (const Error& e) {
      spdlog::error("storing response failed: {}", e.what());
      send_error(res, 500, e.what());
    }
  });

  s.Get("/aggregate", [this, authorized](const httplib::Request& req, httplib::Response& res) {
    if (!authorized(req, res)) return;
    const std::string kind = req.has_param("kind") ? req.get_param_value("kind") : "overall";
    std::vector<QuestionType> given;
    for (const std::string& key : split_commas(req.get_param_value("given"))) {
      const auto t = question_type_from_key(key);
      if (!t) return send_error(res, 400, "unknown question type " + key);
      given.push_back(*t);
    }
    const std::vector<ResponseSet> responses = store_.snapshot();
    try {
      AggregationTable t;
      if (kind == "overall") {
        t = aggregate_overall(questionnaire_, responses);
      } else if (kind == "rank") {
        t = aggregate_by_rank(questionnaire_, responses);
      } else if (kind == "conditional") {
        if (given.empty()) return send_error(res, 400, "conditional aggregation needs given=");
        t = aggregate_conditional(questionnaire_, responses, given);
      } else {
        return send_error(res, 400, "kind must be overall, rank or conditional");
      }
      res.set_content(render_aggregation(t), kJson);
    } catch (const Error& e) {
      send_error(res, 409, e.what());
    }
  });

  s.set_logger([](const httplib::Request& req, const httplib::Response& res) {
    spdlog::debug("{} {} -> {}", req.method, req.path, res.status);
  });
}

void SurveyService::bind() {
  if (config_.port == 0) {
    port_ = server_->bind_to_any_port(config_.host);
    if (port_ < 0) throw Error("cannot bind " + config_.host);
  } else {
    if (!server_->bind_to_port(config_.host, config_.port)) {
      throw Error("cannot bind " + config_.host + ":" + std::to_string(config_.port) +
                  " (port in use?)");
    }
    port_ = config_.port;
  }
  spdlog::info("survey service listening on {}:{}", config_.host, port_);
}

int SurveyService::start() {
  bind();
  thread_ = std::thread([this] { server_->listen_after_bind(); });
  server_->wait_until_ready();
  return port_;
}

void SurveyService::run() {
  bind();
  server_->listen_after_bind();
}

void SurveyService::stop() {
  if (server_) server_->stop();
  if (thread_.joinable()) thread_.join();
}

}  // namespace cexplain
