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

#include "cexplain/questionnaire.h"

#include <algorithm>
#include <set>
#include <sstream>

#include "cexplain/error.h"
#include "cexplain/image.h"
#include "cexplain/io.h"
#include "cexplain/random.h"
#include "cexplain/rendering.h"

namespace cexplain {
namespace {

namespace fs = std::filesystem;
using nlohmann::json;

constexpr std::string_view kFormat = "cexplain.questionnaire";
constexpr std::string_view kEndMarker = "End of Image Evaluation";
constexpr std::size_t kGridColumns = 3;

struct QuestionInfo {
  QuestionType type;
  std::string_view key;
  std::string_view label;
  std::string_view text;
};

constexpr std::array<QuestionInfo, 7> kQuestions = {{
    {QuestionType::kPattern, "pattern", "pattern",
     "The concept describes a common visual pattern highlighted in the representative images."},
    {QuestionType::kHighlightedAreas, "highlighted_areas", "highlighted areas",
     "The description identifies the highlighted areas in the original image."},
    {QuestionType::kReasonablePresence, "reasonable_presence", "reasonable presence",
     "The explanation of the concept's presence in the image is reasonable."},
    {QuestionType::kUsefulExplanation, "useful_explanation", "useful explanation",
     "The explanation of the concept's presence in the image is useful for understanding the "
     "prediction."},
    {QuestionType::kOnlyExistingInfo, "only_existing_info", "only existing info",
     "The summary contains only information that was already present in the descriptions of "
     "the individual concepts."},
    {QuestionType::kHelpfulSummary, "helpful_summary", "helpful summary",
     "The summary is helpful for understanding the prediction."},
    {QuestionType::kMoreHelpful, "more_helpful", "more helpful",
     "The summary is more helpful than the individual concept descriptions."},
}};

constexpr std::array<std::string_view, 3> kInstructions = {
    "Step 1, Image and Model Prediction: look at the original image and the class the model "
    "predicted for it.",
    "Step 2, Individual Concept Evaluation: for each concept, compare the saliency map on the "
    "original image, the representative images with their saliency maps, and the generated "
    "description, then rate the four statements.",
    "Step 3, Final Summary Evaluation: read the summary of all concepts for the same image and "
    "prediction, then rate the three statements.",
};

const QuestionInfo& info(QuestionType t) { return kQuestions[static_cast<std::size_t>(t)]; }

std::string concept_stem(std::size_t rank) { return "concept_" + std::to_string(rank); }

Question make_question(const std::string& prefix, QuestionType t, std::size_t rank) {
  return {prefix + "/" + std::string(question_key(t)), t, rank};
}

json question_to_json(const Question& q) {
  return {{"id", q.id},
          {"type", question_key(q.type)},
          {"text", question_text(q.type)},
          {"scale", kScale}};
}

Question question_from_json(const json& j, std::size_t rank) {
  const auto type = question_type_from_key(j.at("type").get<std::string>());
  if (!type) throw SchemaError("unknown question type " + j.at("type").dump());
  if (j.at("text").get<std::string>() != question_text(*type)) {
    throw SchemaError("question " + j.at("id").get<std::string>() + " has altered text");
  }
  if (is_concept_question(*type) != (rank > 0)) {
    throw SchemaError("question " + j.at("id").get<std::string>() + " is in the wrong block");
  }
  return {j.at("id").get<std::string>(), *type, rank};
}

std::vector<json> questions_to_json(const std::vector<Question>& qs) {
  std::vector<json> out;
  for (const Question& q : qs) out.push_back(question_to_json(q));
  return out;
}

Image prototype_grid(const ConceptRecord& record) {
  std::vector<Image> pairs;
  for (const ConceptPrototype& p : record.prototypes) {
    const std::vector<Image> both = {tensor_to_image(p.image), prototype_overlay(p)};
    pairs.push_back(grid(both, 2));
  }
  if (pairs.empty()) throw Error("concept has no prototypes");
  return grid(pairs, kGridColumns);
}

// Answer lookup per (section, question) for one usable response.
using AnswerIndex = std::map<std::string, Answer>;

struct Usable {
  std::vector<AnswerIndex> answers;
};

Usable usable_responses(const Questionnaire& q, std::span<const ResponseSet> responses,
                        const AggregationOptions& options) {
  Usable u;
  for (const ResponseSet& r : responses) {
    if (!validate_response(q, r, options.include_partial).empty()) continue;
    AnswerIndex index;
    for (const auto& [id, text] : r.answers) index[id] = *parse_answer(text);
    u.answers.push_back(std::move(index));
  }
  if (u.answers.empty()) throw Error("no usable responses to aggregate");
  return u;
}

void tally(AggregationRow& row, const AnswerIndex& answers, const std::string& id) {
  const auto it = answers.find(id);
  if (it == answers.end()) return;
  ++row.counts[static_cast<std::size_t>(it->second)];
  ++row.total;
}

void finish(AggregationRow& row) {
  if (row.total == 0) return;
  std::array<int, 3> p{};
  for (std::size_t i = 0; i < 3; ++i) p[i] = rounded_percent(row.counts[i], row.total);
  row.percent = p;
}

std::size_t max_rank(const Questionnaire& q) {
  std::size_t n = 0;
  for (const ImageSection& s : q.sections) n = std::max(n, s.concepts.size());
  return n;
}

}  // namespace

std::string_view answer_name(Answer a) { return kScale[static_cast<std::size_t>(a)]; }

std::optional<Answer> parse_answer(std::string_view text) {
  for (std::size_t i = 0; i < kScale.size(); ++i) {
    if (kScale[i] == text) return static_cast<Answer>(i);
  }
  return std::nullopt;
}

std::string_view question_key(QuestionType t) { return info(t).key; }
std::string_view question_label(QuestionType t) { return info(t).label; }
std::string_view question_text(QuestionType t) { return info(t).text; }

std::optional<QuestionType> question_type_from_key(std::string_view key) {
  for (const QuestionInfo& q : kQuestions) {
    if (q.key == key) return q.type;
  }
  return std::nullopt;
}

bool is_concept_question(QuestionType t) {
  return std::find(kConceptQuestions.begin(), kConceptQuestions.end(), t) !=
         kConceptQuestions.end();
}

std::vector<std::string> sample_bundles(std::vector<std::string> ids, std::uint64_t seed,
                                        std::size_t n) {
  if (n > ids.size()) {
    throw Error("cannot sample " + std::to_string(n) + " of " + std::to_string(ids.size()) +
                " bundles");
  }
  std::sort(ids.begin(), ids.end());
  SplitMix64 rng(seed);
  fisher_yates_shuffle(ids, rng);
  ids.resize(n);
  return ids;
}

std::size_t Questionnaire::question_count() const {
  std::size_t n = 0;
  for (const ImageSection& s : sections) {
    for (const ConceptBlock& c : s.concepts) n += c.questions.size();
    n += s.summary_questions.size();
  }
  return n;
}

std::vector<Question> Questionnaire::questions() const {
  std::vector<Question> out;
  for (const ImageSection& s : sections) {
    for (const ConceptBlock& c : s.concepts) {
      out.insert(out.end(), c.questions.begin(), c.questions.end());
    }
    out.insert(out.end(), s.summary_questions.begin(), s.summary_questions.end());
  }
  return out;
}

Questionnaire build_questionnaire(std::span<const NamedBundle> bundles) {
  Questionnaire q;
  std::set<std::string> seen;
  for (const NamedBundle& nb : bundles) {
    if (nb.id.empty() || nb.id.find('/') != std::string::npos) {
      throw Error("invalid bundle id '" + nb.id + "'");
    }
    if (!seen.insert(nb.id).second) throw Error("duplicate bundle id " + nb.id);
    try {
      nb.bundle.validate();
    } catch (const SchemaError& e) {
      throw Error("incomplete bundle " + nb.id + ": " + e.what());
    }
    const ExplanationBundle& b = nb.bundle;
    ImageSection s;
    s.bundle_id = nb.id;
    s.image = nb.id + "/input.png";
    s.prediction_label = b.prediction.label;
    s.confidence = b.prediction.confidence;
    const std::size_t count = b.concepts.size();
    for (std::size_t i = 0; i < count; ++i) {
      const std::size_t rank = i + 1;
      ConceptBlock c;
      c.rank = rank;
      c.header = "--- Concept " + std::to_string(rank) + " of " + std::to_string(count) + " ---";
      c.overlay = nb.id + "/" + concept_stem(rank) + "_overlay.png";
      c.prototype_grid = nb.id + "/" + concept_stem(rank) + "_prototypes.png";
      c.label = b.concepts[i].label;
      c.contextualization = b.concepts[i].context;
      for (QuestionType t : kConceptQuestions) {
        c.questions.push_back(make_question(nb.id + "/c" + std::to_string(rank), t, rank));
      }
      s.concepts.push_back(std::move(c));
    }
    s.summary = b.summary;
    for (QuestionType t : kSummaryQuestions) {
      s.summary_questions.push_back(make_question(nb.id + "/summary", t, 0));
    }
    q.sections.push_back(std::move(s));
  }
  return q;
}

void write_questionnaire_assets(std::span<const NamedBundle> bundles, const fs::path& assets_dir) {
  for (const NamedBundle& nb : bundles) {
    const fs::path dir = assets_dir / nb.id;
    fs::create_directories(dir);
    const ExplanationBundle& b = nb.bundle;
    write_png(dir / "input.png", b.input);
    for (std::size_t i = 0; i < b.concepts.size(); ++i) {
      const ConceptRecord& r = b.concepts[i].record;
      const std::string stem = concept_stem(i + 1);
      write_png(dir / (stem + "_overlay.png"), concept_overlay(b.input, r.attribution.heatmap));
      write_png(dir / (stem + "_prototypes.png"), prototype_grid(r));
    }
  }
}

Questionnaire export_questionnaire(std::span<const fs::path> bundle_dirs, std::uint64_t seed,
                                   std::size_t n, const fs::path& out_file) {
  std::map<std::string, fs::path> by_id;
  for (const fs::path& d : bundle_dirs) {
    fs::path p = d.lexically_normal();
    if (!p.has_filename()) p = p.parent_path();
    const std::string id = p.filename().string();
    if (!by_id.emplace(id, d).second) throw Error("duplicate bundle directory name " + id);
  }
  std::vector<std::string> ids;
  for (const auto& [id, _] : by_id) ids.push_back(id);
  std::vector<NamedBundle> bundles;
  for (const std::string& id : sample_bundles(ids, seed, n)) {
    bundles.push_back({id, load_bundle(by_id.at(id))});
  }
  const Questionnaire q = build_questionnaire(bundles);
  const fs::path parent = out_file.parent_path();
  write_questionnaire_assets(bundles, parent / "assets");
  save_questionnaire(q, out_file);
  return q;
}

json questionnaire_to_json(const Questionnaire& q) {
  json sections = json::array();
  for (const ImageSection& s : q.sections) {
    json concepts = json::array();
    for (const ConceptBlock& c : s.concepts) {
      concepts.push_back({{"rank", c.rank},
                          {"header", c.header},
                          {"overlay", c.overlay},
                          {"prototype_grid", c.prototype_grid},
                          {"label", c.label},
                          {"contextualization", c.contextualization},
                          {"questions", questions_to_json(c.questions)}});
    }
    sections.push_back(
        {{"bundle_id", s.bundle_id},
         {"prediction",
          {{"image", s.image}, {"label", s.prediction_label}, {"confidence", s.confidence}}},
         {"concepts", concepts},
         {"summary",
          {{"image", s.image},
           {"label", s.prediction_label},
           {"confidence", s.confidence},
           {"text", s.summary},
           {"questions", questions_to_json(s.summary_questions)}}},
         {"end_marker", kEndMarker}});
  }
  return {{"format", kFormat},
          {"schema_version", kQuestionnaireSchemaVersion},
          {"title", "Evaluation Instructions"},
          {"instructions", kInstructions},
          {"scale", kScale},
          {"question_count", q.question_count()},
          {"sections", sections}};
}

Questionnaire questionnaire_from_json(const json& j) {
  try {
    if (j.at("format") != kFormat) throw SchemaError("not a questionnaire file");
    const int version = j.at("schema_version").get<int>();
    if (version != kQuestionnaireSchemaVersion) {
      throw SchemaError("unsupported schema_version " + std::to_string(version) +
                        " (this build reads version " +
                        std::to_string(kQuestionnaireSchemaVersion) + ")");
    }
    Questionnaire q;
    for (const json& js : j.at("sections")) {
      ImageSection s;
      s.bundle_id = js.at("bundle_id").get<std::string>();
      const json& p = js.at("prediction");
      s.image = p.at("image").get<std::string>();
      s.prediction_label = p.at("label").get<std::string>();
      s.confidence = p.at("confidence").get<double>();
      for (const json& jc : js.at("concepts")) {
        ConceptBlock c;
        c.rank = jc.at("rank").get<std::size_t>();
        if (c.rank == 0) throw SchemaError("concept rank must be positive");
        c.header = jc.at("header").get<std::string>();
        c.overlay = jc.at("overlay").get<std::string>();
        c.prototype_grid = jc.at("prototype_grid").get<std::string>();
        c.label = jc.at("label").get<std::string>();
        c.contextualization = jc.at("contextualization").get<std::string>();
        for (const json& jq : jc.at("questions")) {
          c.questions.push_back(question_from_json(jq, c.rank));
        }
        s.concepts.push_back(std::move(c));
      }
      const json& sum = js.at("summary");
      s.summary = sum.at("text").get<std::string>();
      for (const json& jq : sum.at("questions")) {
        s.summary_questions.push_back(question_from_json(jq, 0));
      }
      q.sections.push_back(std::move(s));
    }
    std::set<std::string> ids;
    for (const Question& question : q.questions()) {
      if (!ids.insert(question.id).second) throw SchemaError("duplicate question id " + question.id);
    }
    return q;
  } catch (const json::exception& e) {
    throw SchemaError(std::string("malformed questionnaire: ") + e.what());
  }
}

void save_questionnaire(const Questionnaire& q, const fs::path& path) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  write_text_file(path, questionnaire_to_json(q).dump(2) + "\n");
}

Questionnaire load_questionnaire(const fs::path& path) {
  if (!fs::exists(path)) throw MissingAssetError(path.filename().string());
  json j;
  try {
    j = json::parse(read_text_file(path));
  } catch (const json::exception& e) {
    throw SchemaError(path.filename().string() + ": " + e.what());
  }
  return questionnaire_from_json(j);
}

json response_to_json(const ResponseSet& r) {
  return {{"respondent_id", r.respondent_id},
          {"submitted_at", r.submitted_at},
          {"answers", r.answers}};
}

ResponseSet response_from_json(const json& j) {
  if (!j.is_object()) throw SchemaError("response must be a JSON object");
  ResponseSet r;
  try {
    r.respondent_id = j.at("respondent_id").get<std::string>();
    if (j.contains("submitted_at")) r.submitted_at = j.at("submitted_at").get<std::string>();
    const json& answers = j.at("answers");
    if (!answers.is_object()) throw SchemaError("answers must be an object");
    for (const auto& [id, value] : answers.items()) {
      if (!value.is_string()) throw SchemaError("answer for " + id + " must be a string");
      r.answers[id] = value.get<std::string>();
    }
  } catch (const json::exception& e) {
    throw SchemaError(std::string("malformed response: ") + e.what());
  }
  return r;
}

std::vector<ResponseSet> load_responses(const fs::path& path) {
  if (!fs::exists(path)) throw MissingAssetError(path.filename().string());
  std::vector<ResponseSet> out;
  std::istringstream in(read_text_file(path));
  std::string line;
  std::size_t number = 0;
  while (std::getline(in, line)) {
    ++number;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    try {
      out.push_back(response_from_json(json::parse(line)));
    } catch (const json::exception& e) {
      throw SchemaError(path.filename().string() + " line " + std::to_string(number) + ": " +
                        e.what());
    } catch (const SchemaError& e) {
      throw SchemaError(path.filename().string() + " line " + std::to_string(number) + ": " +
                        e.what());
    }
  }
  return out;
}

std::vector<Violation> validate_response(const Questionnaire& q, const ResponseSet& r,
                                         bool allow_partial) {
  std::vector<Violation> out;
  if (r.respondent_id.empty()) {
    out.push_back({"missing_respondent", "", "respondent_id is empty"});
  }
  const std::vector<Question> questions = q.questions();
  std::set<std::string> known;
  for (const Question& question : questions) known.insert(question.id);
  for (const auto& [id, answer] : r.answers) {
    if (!known.count(id)) {
      out.push_back({"unknown_question", id, "no question with id " + id});
    } else if (!parse_answer(answer)) {
      out.push_back({"invalid_answer", id,
                     "answer '" + answer + "' to " + id +
                         " is not one of Agree, Not sure, Disagree"});
    }
  }
  if (!allow_partial) {
    for (const Question& question : questions) {
      if (!r.answers.count(question.id)) {
        out.push_back({"missing_answer", question.id, "no answer to " + question.id});
      }
    }
  }
  return out;
}

json violations_to_json(std::span<const Violation> violations) {
  json list = json::array();
  for (const Violation& v : violations) {
    list.push_back({{"kind", v.kind}, {"question_id", v.question_id}, {"message", v.message}});
  }
  return {{"violations", list}};
}

int rounded_percent(std::size_t count, std::size_t total) {
  if (total == 0) throw Error("percentage of an empty total");
  return static_cast<int>((200 * count + total) / (2 * total));
}

AggregationTable aggregate_overall(const Questionnaire& q, std::span<const ResponseSet> responses,
                                   const AggregationOptions& options) {
  const Usable u = usable_responses(q, responses, options);
  AggregationTable t;
  t.kind = "overall";
  t.responses = u.answers.size();
  for (const QuestionInfo& qi : kQuestions) t.rows.push_back({qi.type, {}, {}, 0, {}});
  for (const AnswerIndex& a : u.answers) {
    for (const Question& question : q.questions()) {
      tally(t.rows[static_cast<std::size_t>(question.type)], a, question.id);
    }
  }
  for (AggregationRow& row : t.rows) finish(row);
  return t;
}

AggregationTable aggregate_by_rank(const Questionnaire& q, std::span<const ResponseSet> responses,
                                   const AggregationOptions& options) {
  const Usable u = usable_responses(q, responses, options);
  AggregationTable t;
  t.kind = "rank";
  t.responses = u.answers.size();
  const std::size_t ranks = max_rank(q);
  for (QuestionType type : kConceptQuestions) {
    for (std::size_t rank = 1; rank <= ranks; ++rank) t.rows.push_back({type, rank, {}, 0, {}});
  }
  for (const AnswerIndex& a : u.answers) {
    for (const ImageSection& s : q.sections) {
      for (const ConceptBlock& c : s.concepts) {
        for (const Question& question : c.questions) {
          const std::size_t row = static_cast<std::size_t>(question.type) * ranks + c.rank - 1;
          tally(t.rows[row], a, question.id);
        }
      }
    }
  }
  for (AggregationRow& row : t.rows) finish(row);
  return t;
}

AggregationTable aggregate_conditional(const Questionnaire& q,
                                       std::span<const ResponseSet> responses,
                                       std::span<const QuestionType> given,
                                       const AggregationOptions& options) {
  if (given.empty()) throw Error("conditional aggregation needs at least one given question");
  for (QuestionType g : given) {
    if (!is_concept_question(g)) {
      throw Error("conditioning question " + std::string(question_key(g)) +
                  " is not a concept question");
    }
  }
  const auto is_given = [&](QuestionType type) {
    return std::find(given.begin(), given.end(), type) != given.end();
  };
  const Usable u = usable_responses(q, responses, options);
  AggregationTable t;
  t.kind = "conditional";
  for (QuestionType type : kConceptQuestions) {
    if (is_given(type)) t.given.push_back(type);
  }
  t.responses = u.answers.size();
  std::vector<std::size_t> row_of(kQuestions.size(), 0);
  for (QuestionType type : kConceptQuestions) {
    if (is_given(type)) continue;
    row_of[static_cast<std::size_t>(type)] = t.rows.size();
    t.rows.push_back({type, {}, {}, 0, {}});
  }
  std::size_t tuples = 0;
  for (const AnswerIndex& a : u.answers) {
    for (const ImageSection& s : q.sections) {
      for (const ConceptBlock& c : s.concepts) {
        bool satisfied = true;
        for (const Question& question : c.questions) {
          if (!is_given(question.type)) continue;
          const auto it = a.find(question.id);
          if (it == a.end() || it->second != Answer::kAgree) satisfied = false;
        }
        if (!satisfied) continue;
        ++tuples;
        for (const Question& question : c.questions) {
          if (!is_given(question.type)) {
            tally(t.rows[row_of[static_cast<std::size_t>(question.type)]], a, question.id);
          }
        }
      }
    }
  }
  t.tuples = tuples;
  t.empty_subset = tuples == 0;
  for (AggregationRow& row : t.rows) finish(row);
  return t;
}

json aggregation_to_json(const AggregationTable& t) {
  json rows = json::array();
  for (const AggregationRow& r : t.rows) {
    json counts = json::object();
    json percent = r.percent ? json::object() : json(nullptr);
    for (std::size_t i = 0; i < 3; ++i) {
      counts[std::string(kScale[i])] = r.counts[i];
      if (r.percent) percent[std::string(kScale[i])] = (*r.percent)[i];
    }
    json row = {{"question", question_key(r.type)},
                {"label", question_label(r.type)},
                {"counts", counts},
                {"total", r.total},
                {"percent", percent}};
    if (r.rank) row["rank"] = *r.rank;
    rows.push_back(std::move(row));
  }
  std::vector<std::string> given;
  for (QuestionType g : t.given) given.emplace_back(question_key(g));
  json j = {{"kind", t.kind}, {"responses", t.responses}, {"rows", rows}};
  if (t.kind == "conditional") {
    j["given"] = given;
    j["tuples"] = t.tuples.value_or(0);
    j["empty_subset"] = t.empty_subset;
  }
  return j;
}

std::string render_aggregation(const AggregationTable& t) {
  return aggregation_to_json(t).dump(2) + "\n";
}

std::string render_aggregation_text(const AggregationTable& t) {
  std::string out;
  for (const AggregationRow& r : t.rows) {
    out += question_label(r.type);
    if (r.rank) out += " & " + std::to_string(*r.rank);
    for (std::size_t i = 0; i < 3; ++i) {
      out += " & ";
      out += r.percent ? std::to_string((*r.percent)[i]) : std::string("-");
    }
    out += "\n";
  }
  return out;
}

}  // namespace cexplain
