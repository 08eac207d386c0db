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

#include <gmock/gmock.h>
#include <gtest/gtest.h>

#include <algorithm>
#include <set>

#include "cexplain/io.h"
#include "cexplain/random.h"
#include "survey_fixture.h"
#include "test_util.h"

namespace cexplain {
namespace {

namespace fs = std::filesystem;
using testing::encode_response;
using testing::fixture_path;
using testing::survey_questionnaire;
using testing::survey_responses;
using testing::synthetic_bundles;
using testing::TempDir;
using ::testing::ElementsAre;
using ::testing::HasSubstr;

using QT = QuestionType;

struct Expected {
  QT type;
  std::optional<std::size_t> rank;
  std::array<std::size_t, 3> counts;
  std::array<int, 3> percent;
};

void expect_rows(const AggregationTable& t, const std::vector<Expected>& rows) {
  ASSERT_EQ(t.rows.size(), rows.size());
  for (std::size_t i = 0; i < rows.size(); ++i) {
    const AggregationRow& r = t.rows[i];
    SCOPED_TRACE(std::string(question_key(rows[i].type)) + " row " + std::to_string(i));
    EXPECT_EQ(r.type, rows[i].type);
    EXPECT_EQ(r.rank, rows[i].rank);
    EXPECT_EQ(r.counts, rows[i].counts);
    EXPECT_EQ(r.total, rows[i].counts[0] + rows[i].counts[1] + rows[i].counts[2]);
    ASSERT_TRUE(r.percent.has_value());
    EXPECT_EQ(*r.percent, rows[i].percent);
  }
}

std::vector<std::string> ids(std::size_t n) {
  std::vector<std::string> out;
  for (std::size_t i = 0; i < n; ++i) {
    out.push_back("image_" + std::string(i < 10 ? "0" : "") + std::to_string(i));
  }
  return out;
}

TEST(SamplingTest, MatchesReferenceTraces) {
  const auto traces =
      nlohmann::json::parse(read_text_file(fixture_path("sampling/reference_traces.json")));
  ASSERT_GE(traces["cases"].size(), 4u);
  for (const auto& c : traces["cases"]) {
    const std::vector<std::string> expected = c["expected"];
    EXPECT_EQ(sample_bundles(c["ids"], c["seed"], c["n"]), expected) << c.dump();
  }
  SplitMix64 rng(0);
  for (const auto& v : traces["splitmix64_seed0_first5"]) {
    EXPECT_EQ(std::to_string(rng.next()), v.get<std::string>());
  }
}

TEST(SamplingTest, InputOrderIrrelevantAndDeterministic) {
  std::vector<std::string> v = ids(12);
  const auto a = sample_bundles(v, 7, 8);
  std::reverse(v.begin(), v.end());
  EXPECT_EQ(sample_bundles(v, 7, 8), a);
  EXPECT_EQ(sample_bundles(v, 7, 8), a);
  EXPECT_NE(sample_bundles(v, 8, 8), a);
}

TEST(SamplingTest, FullDrawIsPermutationAndOverdrawFails) {
  const auto v = ids(8);
  auto all = sample_bundles(v, 0, 8);
  std::sort(all.begin(), all.end());
  EXPECT_EQ(all, v);
  EXPECT_THROW(sample_bundles(v, 0, 9), Error);
}

TEST(QuestionnaireTest, VerbatimQuestionTexts) {
  EXPECT_EQ(question_text(QT::kPattern),
            "The concept describes a common visual pattern highlighted in the representative "
            "images.");
  EXPECT_EQ(question_text(QT::kHighlightedAreas),
            "The description identifies the highlighted areas in the original image.");
  EXPECT_EQ(question_text(QT::kReasonablePresence),
            "The explanation of the concept's presence in the image is reasonable.");
  EXPECT_EQ(question_text(QT::kUsefulExplanation),
            "The explanation of the concept's presence in the image is useful for understanding "
            "the prediction.");
  EXPECT_EQ(question_text(QT::kOnlyExistingInfo),
            "The summary contains only information that was already present in the "
            "descriptions of the individual concepts.");
  EXPECT_EQ(question_text(QT::kHelpfulSummary),
            "The summary is helpful for understanding the prediction.");
  EXPECT_EQ(question_text(QT::kMoreHelpful),
            "The summary is more helpful than the individual concept descriptions.");
  EXPECT_THAT(kScale, ElementsAre("Agree", "Not sure", "Disagree"));
}

TEST(QuestionnaireTest, EightBundlesGive184Questions) {
  const auto all = synthetic_bundles(ids(10), 5);
  const auto chosen = sample_bundles(ids(10), 0, 8);
  std::vector<NamedBundle> bundles;
  for (const std::string& id : chosen) {
    bundles.push_back(*std::find_if(all.begin(), all.end(),
                                    [&](const NamedBundle& b) { return b.id == id; }));
  }
  const Questionnaire q = build_questionnaire(bundles);
  ASSERT_EQ(q.sections.size(), 8u);
  EXPECT_EQ(q.question_count(), 8u * (5 * 4 + 3));
  std::set<std::string> unique;
  for (const Question& question : q.questions()) unique.insert(question.id);
  EXPECT_EQ(unique.size(), 184u);
  EXPECT_EQ(q.sections[0].bundle_id, chosen[0]);
  EXPECT_EQ(q.sections[0].concepts[0].header, "--- Concept 1 of 5 ---");
  EXPECT_EQ(q.sections[0].concepts[4].header, "--- Concept 5 of 5 ---");
  EXPECT_EQ(q.sections[0].concepts[2].questions[1].id, chosen[0] + "/c3/highlighted_areas");
  EXPECT_EQ(q.sections[0].summary_questions[2].id, chosen[0] + "/summary/more_helpful");
}

TEST(QuestionnaireTest, SingleConceptGivesSevenQuestions) {
  const Questionnaire q = build_questionnaire(synthetic_bundles({"only"}, 1));
  EXPECT_EQ(q.question_count(), 7u);
  EXPECT_EQ(q.sections[0].concepts[0].header, "--- Concept 1 of 1 ---");
}

TEST(QuestionnaireTest, RejectsIncompleteOrDuplicateBundles) {
  auto bundles = synthetic_bundles({"x", "y"}, 2);
  bundles[1].bundle.summary.clear();
  EXPECT_THROW(build_questionnaire(bundles), Error);
  bundles = synthetic_bundles({"x", "x"}, 2);
  EXPECT_THROW(build_questionnaire(bundles), Error);
}

TEST(QuestionnaireTest, JsonRoundTripAndAssets) {
  TempDir dir("questionnaire");
  const auto bundles = synthetic_bundles({"A", "B"}, 2);
  const Questionnaire q = build_questionnaire(bundles);
  write_questionnaire_assets(bundles, dir.path() / "assets");
  save_questionnaire(q, dir.path() / "questionnaire.json");
  EXPECT_EQ(load_questionnaire(dir.path() / "questionnaire.json"), q);
  for (const ImageSection& s : q.sections) {
    EXPECT_TRUE(fs::exists(dir.path() / "assets" / s.image));
    for (const ConceptBlock& c : s.concepts) {
      EXPECT_TRUE(fs::exists(dir.path() / "assets" / c.overlay)) << c.overlay;
      EXPECT_TRUE(fs::exists(dir.path() / "assets" / c.prototype_grid)) << c.prototype_grid;
    }
  }
  const auto j = nlohmann::json::parse(read_text_file(dir.path() / "questionnaire.json"));
  EXPECT_EQ(j["sections"][0]["end_marker"], "End of Image Evaluation");
  EXPECT_EQ(j["sections"][0]["concepts"][0]["questions"][0]["scale"][1], "Not sure");

  std::string text = read_text_file(dir.path() / "questionnaire.json");
  text.replace(text.find("is reasonable."), 14, "is plausible.");
  write_text_file(dir.path() / "questionnaire.json", text);
  EXPECT_THROW(load_questionnaire(dir.path() / "questionnaire.json"), SchemaError);
}

TEST(QuestionnaireTest, ExportSamplesBundleDirectories) {
  TempDir dir("questionnaire_export");
  std::vector<fs::path> dirs;
  const auto bundles = synthetic_bundles({"b0", "b1", "b2"}, 1);
  for (const NamedBundle& nb : bundles) {
    save_bundle(nb.bundle, dir.path() / "bundles" / nb.id);
    dirs.push_back(dir.path() / "bundles" / nb.id);
  }
  const Questionnaire q = export_questionnaire(dirs, 0, 2, dir.path() / "out" / "q.json");
  ASSERT_EQ(q.sections.size(), 2u);
  const auto expected = sample_bundles({"b0", "b1", "b2"}, 0, 2);
  EXPECT_EQ(q.sections[0].bundle_id, expected[0]);
  EXPECT_EQ(q.sections[1].bundle_id, expected[1]);
  EXPECT_TRUE(fs::exists(dir.path() / "out" / "assets" / expected[0] / "concept_1_prototypes.png"));
  EXPECT_EQ(load_questionnaire(dir.path() / "out" / "q.json"), q);
}

TEST(ValidationTest, CompleteResponseIsClean) {
  const Questionnaire q = survey_questionnaire();
  for (const ResponseSet& r : survey_responses()) EXPECT_TRUE(validate_response(q, r).empty());
}

TEST(ValidationTest, ScaleUnknownAndMissingViolations) {
  const Questionnaire q = survey_questionnaire();
  ResponseSet r = survey_responses()[0];
  r.answers["A/c1/pattern"] = "Strongly agree";
  auto v = validate_response(q, r);
  ASSERT_EQ(v.size(), 1u);
  EXPECT_EQ(v[0].kind, "invalid_answer");
  EXPECT_EQ(v[0].question_id, "A/c1/pattern");

  r = survey_responses()[0];
  r.answers.erase("B/summary/helpful_summary");
  r.answers["Z/c1/pattern"] = "Agree";
  v = validate_response(q, r);
  ASSERT_EQ(v.size(), 2u);
  EXPECT_EQ(v[0], (Violation{"unknown_question", "Z/c1/pattern", "no question with id Z/c1/pattern"}));
  EXPECT_EQ(v[1].kind, "missing_answer");
  EXPECT_EQ(v[1].question_id, "B/summary/helpful_summary");
  r.answers.erase("Z/c1/pattern");
  EXPECT_TRUE(validate_response(q, r, /*allow_partial=*/true).empty());
  r.respondent_id.clear();
  EXPECT_EQ(validate_response(q, r, true)[0].kind, "missing_respondent");
}

TEST(ValidationTest, OneMissingOf184IsListed) {
  const Questionnaire q = build_questionnaire(synthetic_bundles(ids(8), 5));
  ResponseSet r;
  r.respondent_id = "full";
  for (const Question& question : q.questions()) r.answers[question.id] = "Agree";
  EXPECT_TRUE(validate_response(q, r).empty());
  const std::string dropped = q.questions()[101].id;
  r.answers.erase(dropped);
  const auto v = validate_response(q, r);
  ASSERT_EQ(v.size(), 1u);
  EXPECT_EQ(v[0].question_id, dropped);
}

TEST(ResponseJsonTest, RoundTripAndStructuralErrors) {
  const ResponseSet r = survey_responses()[1];
  EXPECT_EQ(response_from_json(response_to_json(r)), r);
  EXPECT_THROW(response_from_json(nlohmann::json::array()), SchemaError);
  EXPECT_THROW(response_from_json({{"answers", nlohmann::json::object()}}), SchemaError);
  EXPECT_THROW(response_from_json({{"respondent_id", "x"}, {"answers", {{"q", 3}}}}),
               SchemaError);

  TempDir dir("responses");
  std::string lines;
  for (const ResponseSet& s : survey_responses()) lines += response_to_json(s).dump() + "\n\n";
  write_text_file(dir.path() / "responses.jsonl", lines);
  EXPECT_EQ(load_responses(dir.path() / "responses.jsonl"), survey_responses());
  write_text_file(dir.path() / "responses.jsonl", lines + "{\n");
  EXPECT_THROW(load_responses(dir.path() / "responses.jsonl"), SchemaError);
}

TEST(RoundingTest, HalvesAwayFromZero) {
  EXPECT_EQ(rounded_percent(1, 8), 13);   // 12.5
  EXPECT_EQ(rounded_percent(3, 8), 38);   // 37.5
  EXPECT_EQ(rounded_percent(1, 200), 1);  // 0.5
  EXPECT_EQ(rounded_percent(1, 3), 33);
  EXPECT_EQ(rounded_percent(2, 3), 67);
  EXPECT_EQ(rounded_percent(0, 5), 0);
  EXPECT_EQ(rounded_percent(5, 5), 100);
  EXPECT_THROW(rounded_percent(0, 0), Error);
}

// Hand tally of survey_responses(): 12 concept tuples and 6 summaries.
TEST(AggregationTest, OverallHandTally) {
  const AggregationTable t = aggregate_overall(survey_questionnaire(), survey_responses());
  EXPECT_EQ(t.kind, "overall");
  EXPECT_EQ(t.responses, 3u);
  expect_rows(t, {
                     {QT::kPattern, {}, {9, 2, 1}, {75, 17, 8}},
                     {QT::kHighlightedAreas, {}, {9, 2, 1}, {75, 17, 8}},
                     {QT::kReasonablePresence, {}, {9, 1, 2}, {75, 8, 17}},
                     {QT::kUsefulExplanation, {}, {8, 2, 2}, {67, 17, 17}},
                     {QT::kOnlyExistingInfo, {}, {4, 1, 1}, {67, 17, 17}},
                     {QT::kHelpfulSummary, {}, {5, 0, 1}, {83, 0, 17}},
                     {QT::kMoreHelpful, {}, {3, 2, 1}, {50, 33, 17}},
                 });
  EXPECT_EQ(render_aggregation_text(t).substr(0, 34), "pattern & 75 & 17 & 8\nhighlighted ");
}

TEST(AggregationTest, ByRankHandTally) {
  const AggregationTable t = aggregate_by_rank(survey_questionnaire(), survey_responses());
  EXPECT_EQ(t.kind, "rank");
  expect_rows(t, {
                     {QT::kPattern, 1, {5, 1, 0}, {83, 17, 0}},
                     {QT::kPattern, 2, {4, 1, 1}, {67, 17, 17}},
                     {QT::kHighlightedAreas, 1, {4, 2, 0}, {67, 33, 0}},
                     {QT::kHighlightedAreas, 2, {5, 0, 1}, {83, 0, 17}},
                     {QT::kReasonablePresence, 1, {4, 1, 1}, {67, 17, 17}},
                     {QT::kReasonablePresence, 2, {5, 0, 1}, {83, 0, 17}},
                     {QT::kUsefulExplanation, 1, {4, 0, 2}, {67, 0, 33}},
                     {QT::kUsefulExplanation, 2, {4, 2, 0}, {67, 33, 0}},
                 });
  EXPECT_THAT(render_aggregation_text(t), HasSubstr("highlighted areas & 2 & 83 & 0 & 17\n"));
}

TEST(AggregationTest, ConditionalChainsHandTally) {
  const Questionnaire q = survey_questionnaire();
  const auto responses = survey_responses();

  const std::vector<QT> g1 = {QT::kPattern};
  const AggregationTable t1 = aggregate_conditional(q, responses, g1);
  EXPECT_EQ(t1.tuples, 9u);
  EXPECT_FALSE(t1.empty_subset);
  expect_rows(t1, {
                      {QT::kHighlightedAreas, {}, {7, 1, 1}, {78, 11, 11}},
                      {QT::kReasonablePresence, {}, {7, 1, 1}, {78, 11, 11}},
                      {QT::kUsefulExplanation, {}, {6, 2, 1}, {67, 22, 11}},
                  });

  const std::vector<QT> g2 = {QT::kPattern, QT::kHighlightedAreas};
  const AggregationTable t2 = aggregate_conditional(q, responses, g2);
  EXPECT_EQ(t2.tuples, 7u);
  expect_rows(t2, {
                      {QT::kReasonablePresence, {}, {5, 1, 1}, {71, 14, 14}},
                      {QT::kUsefulExplanation, {}, {5, 1, 1}, {71, 14, 14}},
                  });

  const std::vector<QT> g3 = {QT::kReasonablePresence, QT::kPattern, QT::kHighlightedAreas};
  const AggregationTable t3 = aggregate_conditional(q, responses, g3);
  EXPECT_EQ(t3.tuples, 5u);
  EXPECT_THAT(t3.given,
              ElementsAre(QT::kPattern, QT::kHighlightedAreas, QT::kReasonablePresence));
  expect_rows(t3, {{QT::kUsefulExplanation, {}, {4, 0, 1}, {80, 0, 20}}});
  EXPECT_LE(*t3.tuples, *t2.tuples);
  EXPECT_LE(*t2.tuples, *t1.tuples);
}

TEST(AggregationTest, ConditionalSingleTupleAndEmptySubset) {
  const Questionnaire q = survey_questionnaire();
  std::vector<ResponseSet> r = {
      encode_response("p", {"ADNA", "DAAA", "AAA"}, {"NAAA", "DDDD", "AAA"}),
      encode_response("q", {"NAAA", "DAAA", "AAA"}, {"DAAA", "NNNN", "AAA"}),
  };
  const std::vector<QT> given = {QT::kPattern};
  const AggregationTable t = aggregate_conditional(q, r, given);
  EXPECT_EQ(t.tuples, 1u);
  expect_rows(t, {
                     {QT::kHighlightedAreas, {}, {0, 0, 1}, {0, 0, 100}},
                     {QT::kReasonablePresence, {}, {0, 1, 0}, {0, 100, 0}},
                     {QT::kUsefulExplanation, {}, {1, 0, 0}, {100, 0, 0}},
                 });

  r[0] = encode_response("p", {"NDNA", "DAAA", "AAA"}, {"NAAA", "DDDD", "AAA"});
  const AggregationTable empty = aggregate_conditional(q, r, given);
  EXPECT_TRUE(empty.empty_subset);
  EXPECT_EQ(empty.tuples, 0u);
  for (const AggregationRow& row : empty.rows) {
    EXPECT_EQ(row.total, 0u);
    EXPECT_FALSE(row.percent.has_value());
  }
  EXPECT_THAT(render_aggregation(empty), HasSubstr("\"empty_subset\": true"));
  EXPECT_THAT(render_aggregation_text(empty), HasSubstr("useful explanation & - & - & -"));
}

TEST(AggregationTest, VacuousConditionEqualsUnconditional) {
  const Questionnaire q = survey_questionnaire();
  std::vector<ResponseSet> responses = survey_responses();
  for (ResponseSet& r : responses) {
    for (auto& [id, a] : r.answers) {
      if (id.ends_with("/pattern")) a = "Agree";
    }
  }
  const std::vector<QT> given = {QT::kPattern};
  const AggregationTable cond = aggregate_conditional(q, responses, given);
  const AggregationTable overall = aggregate_overall(q, responses);
  ASSERT_EQ(cond.rows.size(), 3u);
  for (std::size_t i = 0; i < 3; ++i) {
    EXPECT_EQ(cond.rows[i].counts, overall.rows[i + 1].counts);
    EXPECT_EQ(cond.rows[i].percent, overall.rows[i + 1].percent);
  }
}

TEST(AggregationTest, AllAgreeGivesFullRows) {
  const Questionnaire q = build_questionnaire(synthetic_bundles(ids(8), 5));
  std::vector<ResponseSet> responses;
  for (int i = 0; i < 3; ++i) {
    ResponseSet r;
    r.respondent_id = "r" + std::to_string(i);
    for (const Question& question : q.questions()) r.answers[question.id] = "Agree";
    responses.push_back(r);
  }
  const std::vector<QT> given = {QT::kPattern, QT::kHighlightedAreas};
  for (const AggregationTable& t :
       {aggregate_overall(q, responses), aggregate_by_rank(q, responses),
        aggregate_conditional(q, responses, given)}) {
    for (const AggregationRow& row : t.rows) {
      EXPECT_EQ(*row.percent, (std::array<int, 3>{100, 0, 0}));
    }
  }
  EXPECT_EQ(aggregate_by_rank(q, responses).rows.size(), 4u * 5);
}

TEST(AggregationTest, OnlyRankOneAgree) {
  const Questionnaire q = build_questionnaire(synthetic_bundles({"s", "t"}, 3));
  ResponseSet r;
  r.respondent_id = "one";
  for (const Question& question : q.questions()) {
    r.answers[question.id] = question.concept_rank == 1 ? "Agree" : "Disagree";
  }
  const std::vector<ResponseSet> responses = {r};
  for (const AggregationRow& row : aggregate_by_rank(q, responses).rows) {
    EXPECT_EQ(*row.percent, *row.rank == 1 ? (std::array<int, 3>{100, 0, 0})
                                            : (std::array<int, 3>{0, 0, 100}));
  }
}

TEST(AggregationTest, SingleConceptRankEqualsOverall) {
  const Questionnaire q = build_questionnaire(synthetic_bundles({"u", "v"}, 1));
  std::vector<ResponseSet> responses;
  const char* scale[] = {"Agree", "Not sure", "Disagree"};
  int k = 0;
  for (int i = 0; i < 4; ++i) {
    ResponseSet r;
    r.respondent_id = "r" + std::to_string(i);
    for (const Question& question : q.questions()) r.answers[question.id] = scale[k++ % 3];
    responses.push_back(r);
  }
  const AggregationTable overall = aggregate_overall(q, responses);
  const AggregationTable rank = aggregate_by_rank(q, responses);
  ASSERT_EQ(rank.rows.size(), 4u);
  for (std::size_t i = 0; i < 4; ++i) {
    EXPECT_EQ(rank.rows[i].counts, overall.rows[i].counts);
    EXPECT_EQ(rank.rows[i].percent, overall.rows[i].percent);
  }
}

TEST(AggregationTest, OrderIndependentAndPartialHandling) {
  const Questionnaire q = survey_questionnaire();
  std::vector<ResponseSet> responses = survey_responses();
  const std::string forward = render_aggregation(aggregate_by_rank(q, responses));
  std::reverse(responses.begin(), responses.end());
  EXPECT_EQ(render_aggregation(aggregate_by_rank(q, responses)), forward);

  responses[0].answers.erase("A/c1/pattern");
  EXPECT_EQ(aggregate_overall(q, responses).responses, 2u);
  AggregationOptions partial;
  partial.include_partial = true;
  const AggregationTable t = aggregate_overall(q, responses, partial);
  EXPECT_EQ(t.responses, 3u);
  EXPECT_EQ(t.rows[0].total, 11u);
  EXPECT_EQ(t.rows[1].total, 12u);

  EXPECT_THROW(aggregate_overall(q, {}), Error);
  const std::vector<QT> none;
  EXPECT_THROW(aggregate_conditional(q, survey_responses(), none), Error);
  const std::vector<QT> summary = {QT::kHelpfulSummary};
  EXPECT_THROW(aggregate_conditional(q, survey_responses(), summary), Error);
}

TEST(AggregationTest, CanonicalJson) {
  const AggregationTable t = aggregate_overall(survey_questionnaire(), survey_responses());
  const auto j = nlohmann::json::parse(render_aggregation(t));
  EXPECT_EQ(j["kind"], "overall");
  EXPECT_EQ(j["rows"][3]["question"], "useful_explanation");
  EXPECT_EQ(j["rows"][3]["counts"]["Not sure"], 2);
  EXPECT_EQ(j["rows"][3]["percent"]["Agree"], 67);
  EXPECT_FALSE(j.contains("tuples"));
}

}  // namespace
}  // namespace cexplain
