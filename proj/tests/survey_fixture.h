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

// Synthetic bundles and a hand-tallied three-respondent survey.

#ifndef CEXPLAIN_TESTS_SURVEY_FIXTURE_H_
#define CEXPLAIN_TESTS_SURVEY_FIXTURE_H_

#include <string>
#include <vector>

#include "cexplain/questionnaire.h"

namespace cexplain::testing {

// A complete bundle with `n` concepts on a 4x4 image, each with two
// prototypes. Shares halve from rank to rank and the last takes the rest.
inline ExplanationBundle synthetic_bundle(std::size_t n, int seed) {
  ExplanationBundle b;
  b.source_name = "synthetic_" + std::to_string(seed) + ".png";
  b.input = Image(4, 4, {static_cast<std::uint8_t>(seed * 20), 90, 160, 255});
  b.prediction = {seed, "class" + std::to_string(seed), 0.5};
  double remaining = 100.0;
  for (std::size_t i = 0; i < n; ++i) {
    ConceptExplanation c;
    const double share = i + 1 == n ? remaining : remaining / 2;
    remaining -= share;
    c.record.attribution.concept_ref = {"conv", i};
    c.record.attribution.raw_relevance = share / 10;
    c.record.attribution.relevance_share = share;
    std::vector<float> h(16);
    for (std::size_t p = 0; p < h.size(); ++p) h[p] = static_cast<float>((p + i) % 5) - 1.0f;
    c.record.attribution.heatmap = RelevanceMap(Tensor({1, 4, 4}, h));
    for (int j = 0; j < 2; ++j) {
      std::vector<float> px(48, 0.25f * static_cast<float>(j + 1));
      c.record.prototypes.push_back({"ref_" + std::to_string(j), Tensor({3, 4, 4}, px),
                                     RelevanceMap(Tensor({1, 4, 4}, h)), 1.0 - 0.1 * j});
    }
    c.label = "label " + std::to_string(i + 1);
    c.context = "context " + std::to_string(i + 1);
    b.concepts.push_back(std::move(c));
  }
  b.summary = "summary of " + std::to_string(n) + " concepts";
  return b;
}

inline std::vector<NamedBundle> synthetic_bundles(const std::vector<std::string>& ids,
                                                  std::size_t n) {
  std::vector<NamedBundle> out;
  int seed = 0;
  for (const std::string& id : ids) out.push_back({id, synthetic_bundle(n, seed++)});
  return out;
}

// Two images ("A", "B") with two concepts each.
inline Questionnaire survey_questionnaire() {
  return build_questionnaire(synthetic_bundles({"A", "B"}, 2));
}

// Answers for one respondent: per image, two concept strings over
// {A, N, D} in the order pattern, highlighted areas, reasonable presence,
// useful explanation, then one summary string in the order only existing
// info, helpful summary, more helpful.
struct ImageAnswers {
  std::string c1, c2, summary;
};

inline ResponseSet encode_response(const std::string& respondent, const ImageAnswers& a,
                                   const ImageAnswers& b) {
  const auto name = [](char c) {
    return std::string(c == 'A' ? "Agree" : c == 'N' ? "Not sure" : "Disagree");
  };
  ResponseSet r;
  r.respondent_id = respondent;
  r.submitted_at = "2026-01-01T00:00:00Z";
  const char* concept_keys[] = {"pattern", "highlighted_areas", "reasonable_presence",
                                "useful_explanation"};
  const char* summary_keys[] = {"only_existing_info", "helpful_summary", "more_helpful"};
  for (const auto& [image, answers] : {std::pair{"A", a}, std::pair{"B", b}}) {
    for (int k = 0; k < 4; ++k) {
      r.answers[std::string(image) + "/c1/" + concept_keys[k]] = name(answers.c1[k]);
      r.answers[std::string(image) + "/c2/" + concept_keys[k]] = name(answers.c2[k]);
    }
    for (int k = 0; k < 3; ++k) {
      r.answers[std::string(image) + "/summary/" + summary_keys[k]] = name(answers.summary[k]);
    }
  }
  return r;
}

// The hand-tallied responses; expected tables live next to the tests.
inline std::vector<ResponseSet> survey_responses() {
  return {
      encode_response("r1", {"AAAA", "AADN", "AAN"}, {"AAAD", "NAAA", "ADA"}),
      encode_response("r2", {"AANA", "DAAA", "AAA"}, {"AAAA", "ADAN", "NAD"}),
      encode_response("r3", {"ANAA", "AAAA", "DAN"}, {"NNDD", "AAAA", "AAA"}),
  };
}

}  // namespace cexplain::testing

#endif  // CEXPLAIN_TESTS_SURVEY_FIXTURE_H_
