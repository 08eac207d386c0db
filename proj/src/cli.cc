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

#include "cexplain/cli.h"

#include <spdlog/spdlog.h>

#include <algorithm>
#include <cstdlib>
#include <map>
#include <memory>
#include <vector>

#include "CLI11.hpp"
#include "cexplain/error.h"
#include "cexplain/image.h"
#include "cexplain/io.h"
#include "cexplain/pipeline.h"
#include "cexplain/questionnaire.h"
#include "cexplain/survey_service.h"

namespace cexplain {
namespace {

namespace fs = std::filesystem;
using nlohmann::json;

class UsageError : public Error {
 public:
  using Error::Error;
};

std::string env_name(const std::string& flag) {
  std::string out = "CEXPLAIN_";
  for (char c : flag) out += c == '-' ? '_' : static_cast<char>(std::toupper(c));
  return out;
}

std::vector<std::string> split(const std::string& text, char sep) {
  std::vector<std::string> out;
  std::size_t start = 0;
  while (start <= text.size()) {
    const std::size_t end = std::min(text.find(sep, start), text.size());
    if (end > start) out.push_back(text.substr(start, end - start));
    start = end + 1;
  }
  return out;
}

// Flags of one subcommand, resolved from the command line, the environment
// and the config file in that order.
class Flags {
 public:
  Flags(CLI::App* app, std::string section) : app_(app), section_(std::move(section)) {}

  void add(const std::string& name, const std::string& help, bool required = false,
           std::optional<std::string> fallback = std::nullopt) {
    Entry& e = entries_[name];
    e.required = required;
    e.fallback = std::move(fallback);
    std::string text = help + " [env " + env_name(name) + "]";
    if (e.fallback) text += " (default " + *e.fallback + ")";
    e.option = app_->add_option("--" + name, e.raw, text);
  }

  void add_list(const std::string& name, const std::string& help, bool required = false) {
    Entry& e = entries_[name];
    e.required = required;
    e.list = true;
    e.option = app_->add_option("--" + name, e.values,
                                help + " [env " + env_name(name) + ", comma separated]");
  }

  void resolve(const EnvLookup& env, const json& config) {
    for (auto& [name, e] : entries_) {
      if (e.option->count() > 0) {
        if (!e.list) e.values = {e.raw};
        e.set = true;
        continue;
      }
      if (const auto v = env(env_name(name))) {
        e.values = e.list ? split(*v, ',') : std::vector<std::string>{*v};
        e.set = true;
        continue;
      }
      const json* scoped = config.contains(section_) && config[section_].is_object()
                               ? &config[section_]
                               : nullptr;
      const json* found = scoped && scoped->contains(name) ? &scoped->at(name)
                          : config.contains(name)          ? &config.at(name)
                                                           : nullptr;
      if (found) {
        e.values.clear();
        for (const json& item : found->is_array() ? *found : json::array({*found})) {
          e.values.push_back(item.is_string() ? item.get<std::string>() : item.dump());
        }
        e.set = true;
        continue;
      }
      if (e.fallback) {
        e.values = {*e.fallback};
        e.set = true;
      } else if (e.required) {
        throw UsageError(app_->get_name() + ": --" + name + " is required");
      }
    }
  }

  bool has(const std::string& name) const { return entries_.at(name).set; }

  std::string str(const std::string& name) const {
    const Entry& e = entries_.at(name);
    if (!e.set || e.values.empty()) throw UsageError("--" + name + " is required");
    return e.values.front();
  }

  std::vector<std::string> list(const std::string& name) const {
    return entries_.at(name).set ? entries_.at(name).values : std::vector<std::string>{};
  }

  long long integer(const std::string& name) const {
    const std::string v = str(name);
    try {
      std::size_t used = 0;
      const long long n = std::stoll(v, &used);
      if (used == v.size()) return n;
    } catch (const std::exception&) {
    }
    throw UsageError("--" + name + " expects an integer, got '" + v + "'");
  }

  std::size_t count(const std::string& name) const {
    const long long n = integer(name);
    if (n < 0) throw UsageError("--" + name + " must not be negative");
    return static_cast<std::size_t>(n);
  }

  double real(const std::string& name) const {
    const std::string v = str(name);
    try {
      std::size_t used = 0;
      const double d = std::stod(v, &used);
      if (used == v.size()) return d;
    } catch (const std::exception&) {
    }
    throw UsageError("--" + name + " expects a number, got '" + v + "'");
  }

 private:
  struct Entry {
    CLI::Option* option = nullptr;
    std::string raw;
    std::vector<std::string> values;
    std::optional<std::string> fallback;
    bool required = false;
    bool list = false;
    bool set = false;
  };

  CLI::App* app_;
  std::string section_;
  std::map<std::string, Entry> entries_;
};

json read_config(const std::string& path) {
  if (path.empty()) return json::object();
  try {
    json j = json::parse(read_text_file(path));
    if (!j.is_object()) throw UsageError("config file must hold a JSON object");
    return j;
  } catch (const json::exception& e) {
    throw UsageError("cannot parse config file " + path + ": " + e.what());
  } catch (const UsageError&) {
    throw;
  } catch (const Error& e) {
    throw UsageError(e.what());
  }
}

void add_rule_flags(Flags& f) {
  f.add("conv-rule", "LRP rule for convolutions: zplus or epsilon", false, "zplus");
  f.add("dense-rule", "LRP rule for dense layers: zplus or epsilon", false, "epsilon");
  f.add("epsilon", "Epsilon stabilizer", false, "1e-06");
}

RuleConfig rules_from(const Flags& f) {
  try {
    return rule_config_from_json(
        {{"conv", f.str("conv-rule")}, {"dense", f.str("dense-rule")}, {"epsilon", f.real("epsilon")}});
  } catch (const Error& e) {
    throw UsageError(e.what());
  }
}

// Runs a load step, reporting failures under the given stage name.
template <typename F>
auto stage(const std::string& name, F&& f) {
  try {
    return f();
  } catch (const PipelineError&) {
    throw;
  } catch (const Error& e) {
    throw PipelineError(name, e.what());
  }
}

std::unique_ptr<LlmClient> make_llm(const Flags& f, const EnvLookup& env) {
  const std::string kind = f.str("llm");
  if (kind == "mock") {
    if (f.has("cassette")) {
      return std::make_unique<MockClient>(
          stage("load_cassette", [&] { return load_cassette(f.str("cassette")); }));
    }
    return std::make_unique<MockClient>();
  }
  if (kind == "openai") {
    HttpClientConfig config;
    if (f.has("llm-base-url")) config.base_url = f.str("llm-base-url");
    if (const auto key = env(config.api_key_env)) config.api_key = *key;
    return std::make_unique<HttpClient>(config);
  }
  throw UsageError("--llm must be mock or openai, got '" + kind + "'");
}

int cmd_explain(const Flags& f, const EnvLookup& env, std::ostream& out) {
  PipelineConfig config;
  config.layer_name = f.str("layer");
  config.n = f.count("top-n");
  config.k = f.count("prototypes");
  config.rules = rules_from(f);
  config.prompts.model_id = f.str("llm-model");
  config.prompts.temperature = f.real("temperature");
  config.output_dir = f.str("out");
  config.parallel = f.str("parallel") != "false";
  std::optional<int> target;
  if (f.has("class")) target = static_cast<int>(f.integer("class"));
  auto llm = make_llm(f, env);

  const ModelGraph model = stage("load_model", [&] { return load_model_files(f.str("model")); });
  const ReferenceSet refset =
      stage("load_refset", [&] { return load_reference_set(f.str("refset")); });
  CrpIdentifier identifier(model, config.layer_name, config.rules);
  CrpVisualizer visualizer(model, refset, config.rules);
  const ExplanationBundle b =
      explain(model, f.str("image"), target, config, identifier, visualizer, *llm);
  spdlog::info("explained {} as '{}' ({} concepts) into {}", b.source_name, b.prediction.label,
               b.concepts.size(), config.output_dir.string());
  out << config.output_dir.string() << "\n";
  return kExitOk;
}

int cmd_prototypes(const Flags& f, std::ostream& out) {
  const RuleConfig rules = rules_from(f);
  const ConceptRef ref{f.str("layer"), f.count("channel")};
  const std::size_t k = f.count("k");
  const fs::path dir = f.str("out");
  const ModelGraph model = stage("load_model", [&] { return load_model_files(f.str("model")); });
  const ReferenceSet refset =
      stage("load_refset", [&] { return load_reference_set(f.str("refset")); });
  MiningStats stats;
  const auto protos =
      stage("visualize", [&] { return mine_prototypes(model, refset, ref, k, rules, &stats); });
  stage("save", [&] {
    fs::create_directories(dir);
    json list = json::array();
    for (std::size_t j = 0; j < protos.size(); ++j) {
      const std::string stem = "proto_" + std::to_string(j + 1);
      write_png(dir / (stem + ".png"), tensor_to_image(protos[j].image));
      write_png(dir / (stem + "_overlay.png"), prototype_overlay(protos[j]));
      list.push_back({{"rank", j + 1},
                      {"reference_id", protos[j].reference_id},
                      {"score", protos[j].score},
                      {"image_file", stem + ".png"},
                      {"overlay_file", stem + "_overlay.png"}});
    }
    const json manifest = {{"layer", ref.layer_name},
                           {"channel", ref.channel},
                           {"rules", rule_config_to_json(rules)},
                           {"scored", stats.scored},
                           {"skipped", stats.skipped},
                           {"prototypes", list}};
    write_text_file(dir / "prototypes.json", manifest.dump(2) + "\n");
    return 0;
  });
  spdlog::info("wrote {} prototypes for {}:{} to {}", protos.size(), ref.layer_name, ref.channel,
               dir.string());
  out << dir.string() << "\n";
  return kExitOk;
}

int cmd_questionnaire_build(const Flags& f, std::ostream& out) {
  std::vector<fs::path> dirs;
  for (const std::string& d : f.list("bundles")) dirs.emplace_back(d);
  if (dirs.empty()) throw UsageError("questionnaire build: --bundles is required");
  const std::uint64_t seed = static_cast<std::uint64_t>(f.integer("seed"));
  const std::size_t n = f.count("n");
  const fs::path file = f.str("out");
  const Questionnaire q =
      stage("questionnaire", [&] { return export_questionnaire(dirs, seed, n, file); });
  spdlog::info("questionnaire with {} sections and {} questions written to {}",
               q.sections.size(), q.question_count(), file.string());
  out << file.string() << "\n";
  return kExitOk;
}

int cmd_serve(const Flags& f) {
  ServiceConfig config;
  config.host = f.str("host");
  config.port = static_cast<int>(f.integer("port"));
  config.questionnaire_path = f.str("questionnaire");
  config.assets_dir = f.str("assets");
  config.responses_path = f.str("responses");
  if (f.has("token")) config.token = f.str("token");
  auto service = stage("serve", [&] { return std::make_unique<SurveyService>(config); });
  stage("serve", [&] {
    service->run();
    return 0;
  });
  return kExitOk;
}

int cmd_aggregate(const Flags& f, std::ostream& out) {
  const std::string kind = f.str("kind");
  std::vector<QuestionType> given;
  for (const std::string& key : split(f.has("given") ? f.str("given") : "", ',')) {
    const auto t = question_type_from_key(key);
    if (!t) throw UsageError("unknown question type '" + key + "' in --given");
    given.push_back(*t);
  }
  if (kind != "overall" && kind != "rank" && kind != "conditional") {
    throw UsageError("--kind must be overall, rank or conditional");
  }
  if (kind == "conditional" && given.empty()) {
    throw UsageError("--kind conditional needs --given");
  }
  AggregationOptions options;
  options.include_partial = f.str("include-partial") == "true";
  const Questionnaire q =
      stage("load_questionnaire", [&] { return load_questionnaire(f.str("questionnaire")); });
  const auto responses =
      stage("load_responses", [&] { return load_responses(f.str("responses")); });
  const AggregationTable t = stage("aggregate", [&] {
    if (kind == "overall") return aggregate_overall(q, responses, options);
    if (kind == "rank") return aggregate_by_rank(q, responses, options);
    return aggregate_conditional(q, responses, given, options);
  });
  const fs::path file = f.str("out");
  stage("save", [&] {
    if (file.has_parent_path()) fs::create_directories(file.parent_path());
    write_text_file(file, render_aggregation(t));
    return 0;
  });
  spdlog::info("{} table over {} responses written to {}", kind, t.responses, file.string());
  out << render_aggregation_text(t);
  return kExitOk;
}

}  // namespace

std::optional<std::string> process_env(const std::string& name) {
  const char* v = std::getenv(name.c_str());
  if (!v) return std::nullopt;
  return std::string(v);
}

int run_cli(std::span<const std::string> args, std::ostream& out, std::ostream& err,
            const EnvLookup& env) {
  CLI::App app("Concept-based explanations for image classifiers", "cexplain");
  app.require_subcommand(1);
  std::string config_path;
  app.add_option("--config", config_path, "JSON file with default flag values [env CEXPLAIN_CONFIG]");
  bool verbose = false;
  app.add_flag("-v,--verbose", verbose, "Debug logging on standard error");

  CLI::App* explain_cmd = app.add_subcommand("explain", "Explain one image into a bundle directory");
  Flags explain_flags(explain_cmd, "explain");
  explain_flags.add("image", "Input image (PNG)", true);
  explain_flags.add("model", "Model directory or model.json", true);
  explain_flags.add("layer", "Layer whose channels are concepts", true);
  explain_flags.add("class", "Explain this class instead of the top-1 prediction");
  explain_flags.add("top-n", "Number of concepts", false, "5");
  explain_flags.add("prototypes", "Prototypes per concept", false, "6");
  explain_flags.add("refset", "Reference set directory (refset.csv)", true);
  explain_flags.add("llm", "LLM client: mock or openai", false, "mock");
  explain_flags.add("cassette", "Recorded responses for the mock client");
  explain_flags.add("llm-model", "Chat model id", false, std::string(kDefaultModelId));
  explain_flags.add("llm-base-url", "Chat endpoint base URL for --llm openai");
  explain_flags.add("temperature", "Sampling temperature", false, "0");
  explain_flags.add("parallel", "Concurrent per-concept LLM calls: true or false", false, "true");
  explain_flags.add("out", "Bundle output directory", true);
  add_rule_flags(explain_flags);

  CLI::App* proto_cmd = app.add_subcommand("prototypes", "Mine prototypes for one channel");
  Flags proto_flags(proto_cmd, "prototypes");
  proto_flags.add("model", "Model directory or model.json", true);
  proto_flags.add("layer", "Layer name", true);
  proto_flags.add("channel", "Channel index", true);
  proto_flags.add("refset", "Reference set directory (refset.csv)", true);
  proto_flags.add("k", "Number of prototypes", false, "6");
  proto_flags.add("out", "Output directory", true);
  add_rule_flags(proto_flags);

  CLI::App* q_cmd = app.add_subcommand("questionnaire", "Questionnaire tools");
  q_cmd->require_subcommand(1);
  CLI::App* build_cmd = q_cmd->add_subcommand("build", "Sample bundles into a questionnaire");
  Flags build_flags(build_cmd, "questionnaire");
  build_flags.add_list("bundles", "Bundle directories", true);
  build_flags.add("seed", "Sampling seed", false, "0");
  build_flags.add("n", "Number of images", false, "8");
  build_flags.add("out", "questionnaire.json path; assets go next to it", true);

  CLI::App* serve_cmd = app.add_subcommand("serve", "Serve the questionnaire over HTTP");
  Flags serve_flags(serve_cmd, "serve");
  serve_flags.add("questionnaire", "questionnaire.json", true);
  serve_flags.add("assets", "Assets directory", true);
  serve_flags.add("responses", "responses.jsonl (created if missing)", true);
  serve_flags.add("host", "Bind address", false, "127.0.0.1");
  serve_flags.add("port", "Port", false, "8080");
  serve_flags.add("token", "Shared-link token required by all endpoints but /health");

  CLI::App* agg_cmd = app.add_subcommand("aggregate", "Aggregate stored responses");
  Flags agg_flags(agg_cmd, "aggregate");
  agg_flags.add("responses", "responses.jsonl", true);
  agg_flags.add("questionnaire", "questionnaire.json", true);
  agg_flags.add("kind", "overall, rank or conditional", false, "overall");
  agg_flags.add("given", "Conditioning question types, comma separated");
  agg_flags.add("include-partial", "Count incomplete responses: true or false", false, "false");
  agg_flags.add("out", "Output JSON file", true);

  std::vector<std::string> reversed(args.rbegin(), args.rend());
  try {
    app.parse(reversed);
  } catch (const CLI::CallForHelp&) {
    out << app.help();
    return kExitOk;
  } catch (const CLI::CallForAllHelp&) {
    out << app.help("", CLI::AppFormatMode::All);
    return kExitOk;
  } catch (const CLI::ParseError& e) {
    CLI::App* failed = &app;
    for (CLI::App* sub : app.get_subcommands()) {
      failed = sub;
      for (CLI::App* inner : sub->get_subcommands()) failed = inner;
    }
    err << "error: " << e.what() << "\n\n" << failed->help();
    return kExitUsage;
  }
  if (verbose) spdlog::set_level(spdlog::level::debug);

  CLI::App* chosen = app.get_subcommands().front();
  CLI::App* usage = chosen;
  try {
    if (config_path.empty()) config_path = env("CEXPLAIN_CONFIG").value_or("");
    const json config = read_config(config_path);
    if (chosen == explain_cmd) {
      explain_flags.resolve(env, config);
      return cmd_explain(explain_flags, env, out);
    }
    if (chosen == proto_cmd) {
      proto_flags.resolve(env, config);
      return cmd_prototypes(proto_flags, out);
    }
    if (chosen == q_cmd) {
      usage = build_cmd;
      build_flags.resolve(env, config);
      return cmd_questionnaire_build(build_flags, out);
    }
    if (chosen == serve_cmd) {
      serve_flags.resolve(env, config);
      return cmd_serve(serve_flags);
    }
    agg_flags.resolve(env, config);
    return cmd_aggregate(agg_flags, out);
  } catch (const UsageError& e) {
    err << "error: " << e.what() << "\n\n" << usage->help();
    return kExitUsage;
  } catch (const PipelineError& e) {
    err << "error: " << e.what() << "\n";
    return kExitRuntime;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return kExitRuntime;
  }
}

}  // namespace cexplain
