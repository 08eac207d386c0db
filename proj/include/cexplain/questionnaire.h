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

// Human-evaluation questionnaire: bundle sampling, form generation, response
// validation and the Agree / Not sure / Disagree aggregation tables.

#ifndef CEXPLAIN_QUESTIONNAIRE_H_
#define CEXPLAIN_QUESTIONNAIRE_H_

#include <array>
#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "cexplain/pipeline.h"
#include "json.hpp"

namespace cexplain {

inline constexpr int kQuestionnaireSchemaVersion = 1;

enum class Answer { kAgree, kNotSure, kDisagree };
inline constexpr std::array<std::string_view, 3> kScale = {"Agree", "Not sure", "Disagree"};
std::string_view answer_name(Answer a);
std::optional<Answer> parse_answer(std::string_view text);

enum class QuestionType {
  kPattern,
  kHighlightedAreas,
  kReasonablePresence,
  kUsefulExplanation,
  kOnlyExistingInfo,
  kHelpfulSummary,
  kMoreHelpful,
};
inline constexpr std::array<QuestionType, 4> kConceptQuestions = {
    QuestionType::kPattern, QuestionType::kHighlightedAreas, QuestionType::kReasonablePresence,
    QuestionType::kUsefulExplanation};
inline constexpr std::array<QuestionType, 3> kSummaryQuestions = {
    QuestionType::kOnlyExistingInfo, QuestionType::kHelpfulSummary, QuestionType::kMoreHelpful};

// Short key used in ids and tables, e.g. "pattern", "highlighted_areas".
std::string_view question_key(QuestionType t);
std::optional<QuestionType> question_type_from_key(std::string_view key);
// Short display name used in text tables, e.g. "highlighted areas".
std::string_view question_label(QuestionType t);
std::string_view question_text(QuestionType t);
bool is_concept_question(QuestionType t);

// Ordered subset of bundle ids: sort, shuffle with Fisher-Yates driven by
// SplitMix64(seed), keep the first n. Throws Error when n > ids.size().
std::vector<std::string> sample_bundles(std::vector<std::string> ids, std::uint64_t seed,
                                        std::size_t n);

struct Question {
  std::string id;
  QuestionType type = QuestionType::kPattern;
  std::size_t concept_rank = 0;  // 0 for summary questions

  friend bool operator==(const Question&, const Question&) = default;
};

struct ConceptBlock {
  std::size_t rank = 0;
  std::string header;          // "--- Concept 1 of 5 ---"
  std::string overlay;         // asset paths, relative to the assets directory
  std::string prototype_grid;
  std::string label;
  std::string contextualization;
  std::vector<Question> questions;

  friend bool operator==(const ConceptBlock&, const ConceptBlock&) = default;
};

struct ImageSection {
  std::string bundle_id;
  std::string image;
  std::string prediction_label;
  double confidence = 0.0;
  std::vector<ConceptBlock> concepts;
  std::string summary;
  std::vector<Question> summary_questions;

  friend bool operator==(const ImageSection&, const ImageSection&) = default;
};

struct Questionnaire {
  std::vector<ImageSection> sections;

  std::size_t question_count() const;
  std::vector<Question> questions() const;
  friend bool operator==(const Questionnaire&, const Questionnaire&) = default;
};

struct NamedBundle {
  std::string id;
  ExplanationBundle bundle;
};

// One section per bundle, in the given order. Question ids are
// "<bundle>/c<rank>/<key>" and "<bundle>/summary/<key>". Throws Error on an
// incomplete bundle or duplicate bundle ids.
Questionnaire build_questionnaire(std::span<const NamedBundle> bundles);

// Copies each bundle's input and overlays and renders its prototype grids
// into <assets>/<bundle id>/.
void write_questionnaire_assets(std::span<const NamedBundle> bundles,
                                const std::filesystem::path& assets_dir);

// Loads the bundle directories, samples n of them by directory name, builds
// the questionnaire, writes it to `out_file` and its assets next to it under
// assets/.
Questionnaire export_questionnaire(std::span<const std::filesystem::path> bundle_dirs,
                                   std::uint64_t seed, std::size_t n,
                                   const std::filesystem::path& out_file);

nlohmann::json questionnaire_to_json(const Questionnaire& q);
Questionnaire questionnaire_from_json(const nlohmann::json& j);
void save_questionnaire(const Questionnaire& q, const std::filesystem::path& path);
Questionnaire load_questionnaire(const std::filesystem::path& path);

struct ResponseSet {
  std::string respondent_id;
  std::map<std::string, std::string> answers;  // question id -> scale label
  std::string submitted_at;                    // ISO 8601, informational

  friend bool operator==(const ResponseSet&, const ResponseSet&) = default;
};

nlohmann::json response_to_json(const ResponseSet& r);
// Throws SchemaError on structural problems (wrong types, missing fields).
ResponseSet response_from_json(const nlohmann::json& j);
// One ResponseSet per non-empty line.
std::vector<ResponseSet> load_responses(const std::filesystem::path& path);

struct Violation {
  std::string kind;  // missing_respondent, unknown_question, invalid_answer, missing_answer
  std::string question_id;
  std::string message;

  friend bool operator==(const Violation&, const Violation&) = default;
};

// Empty when the response is complete and well formed. With
// allow_partial, unanswered questions are not violations.
std::vector<Violation> validate_response(const Questionnaire& q, const ResponseSet& r,
                                         bool allow_partial = false);
nlohmann::json violations_to_json(std::span<const Violation> violations);

struct AggregationRow {
  QuestionType type = QuestionType::kPattern;
  std::optional<std::size_t> rank;
  std::array<std::size_t, 3> counts{};  // Agree, Not sure, Disagree
  std::size_t total = 0;
  // round(100 * count / total), halves away from zero; empty when total is 0.
  std::optional<std::array<int, 3>> percent;

  friend bool operator==(const AggregationRow&, const AggregationRow&) = default;
};

struct AggregationTable {
  std::string kind;  // overall, rank, conditional
  std::vector<QuestionType> given;
  std::size_t responses = 0;
  // Conditional tables: (respondent, image, concept) tuples that satisfied
  // the condition, and whether there were none.
  std::optional<std::size_t> tuples;
  bool empty_subset = false;
  std::vector<AggregationRow> rows;

  friend bool operator==(const AggregationTable&, const AggregationTable&) = default;
};

// Integer percentage with halves rounded away from zero.
int rounded_percent(std::size_t count, std::size_t total);

struct AggregationOptions {
  // Responses with violations are skipped; this tolerates unanswered questions.
  bool include_partial = false;
};

// Rows for the seven question types. Throws Error when no response is usable.
// `responses` in tables counts the usable responses.
AggregationTable aggregate_overall(const Questionnaire& q, std::span<const ResponseSet> responses,
                                   const AggregationOptions& options = {});
// Rows (concept question type, rank), type-major.
AggregationTable aggregate_by_rank(const Questionnaire& q, std::span<const ResponseSet> responses,
                                   const AggregationOptions& options = {});
// Rows for the concept question types not in `given`, counted over the
// (respondent, image, concept) tuples that answered Agree to all of `given`.
AggregationTable aggregate_conditional(const Questionnaire& q,
                                       std::span<const ResponseSet> responses,
                                       std::span<const QuestionType> given,
                                       const AggregationOptions& options = {});

nlohmann::json aggregation_to_json(const AggregationTable& t);
// The exact bytes served by the survey service and written by the CLI.
std::string render_aggregation(const AggregationTable& t);
// "pattern & 78 & 10 & 11" rows, one per line.
std::string render_aggregation_text(const AggregationTable& t);

}  // namespace cexplain

#endif  // CEXPLAIN_QUESTIONNAIRE_H_
