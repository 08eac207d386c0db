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

// Python bindings for the explanation pipeline and questionnaire tools.

#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>
#include <pybind11/stl/filesystem.h>

#include "cexplain/error.h"
#include "cexplain/image.h"
#include "cexplain/io.h"
#include "cexplain/pipeline.h"
#include "cexplain/questionnaire.h"

namespace py = pybind11;

namespace cexplain {
namespace {

using nlohmann::json;
using FloatArray = py::array_t<float, py::array::c_style | py::array::forcecast>;

py::object to_python(const json& j) {
  const py::object loads = py::module_::import("json").attr("loads");
  return loads(j.dump());
}

json from_python(const py::object& o) {
  const py::object dumps = py::module_::import("json").attr("dumps");
  return json::parse(dumps(o).cast<std::string>());
}

py::array_t<float> to_numpy(const Tensor& t) {
  std::vector<py::ssize_t> shape(t.shape().begin(), t.shape().end());
  py::array_t<float> out(shape);
  std::copy(t.values().begin(), t.values().end(), out.mutable_data());
  return out;
}

Tensor from_numpy(const FloatArray& a) {
  Shape shape(a.shape(), a.shape() + a.ndim());
  return Tensor(shape, std::vector<float>(a.data(), a.data() + a.size()));
}

// A [C, H, W] float array, or the path of a PNG.
Tensor image_argument(const ModelGraph& model, const py::object& image) {
  if (py::isinstance<py::str>(image) ||
      py::isinstance(image, py::module_::import("pathlib").attr("Path"))) {
    return image_to_tensor(read_png(image.cast<std::filesystem::path>()), model.input_shape()[0]);
  }
  return from_numpy(image.cast<FloatArray>());
}

RuleConfig rules_argument(const py::object& rules) {
  if (rules.is_none()) return RuleConfig{};
  json j = rule_config_to_json(RuleConfig{});
  j.update(from_python(rules));
  return rule_config_from_json(j);
}

py::dict attribution_dict(const ConceptAttribution& a) {
  py::dict d;
  d["layer"] = a.concept_ref.layer_name;
  d["channel"] = a.concept_ref.channel;
  d["raw_relevance"] = a.raw_relevance;
  d["relevance_share"] = a.relevance_share;
  d["heatmap"] = to_numpy(a.heatmap.values);
  return d;
}

py::dict prototype_dict(const ConceptPrototype& p) {
  py::dict d;
  d["reference_id"] = p.reference_id;
  d["score"] = p.score;
  d["image"] = to_numpy(p.image);
  d["heatmap"] = to_numpy(p.heatmap.values);
  return d;
}

std::vector<QuestionType> given_argument(const std::vector<std::string>& keys) {
  std::vector<QuestionType> out;
  for (const std::string& k : keys) {
    const auto t = question_type_from_key(k);
    if (!t) throw Error("unknown question type " + k);
    out.push_back(*t);
  }
  return out;
}

}  // namespace
}  // namespace cexplain

PYBIND11_MODULE(_cexplain, m) {
  using namespace cexplain;
  m.doc() = "Concept-based explanations for image classifiers";

  py::register_exception<Error>(m, "Error");
  py::register_exception<SchemaError>(m, "SchemaError", m.attr("Error"));
  py::register_exception<PipelineError>(m, "PipelineError", m.attr("Error"));

  py::class_<ModelGraph>(m, "Model")
      .def_property_readonly("input_shape", &ModelGraph::input_shape)
      .def_property_readonly("class_labels", &ModelGraph::class_labels)
      .def_property_readonly("layer_names",
                             [](const ModelGraph& g) {
                               std::vector<std::string> names;
                               for (const LayerSpec& l : g.layers()) names.push_back(l.name);
                               return names;
                             })
      .def("fingerprint", &model_fingerprint);

  m.def("load_model", &load_model_files, py::arg("path"),
        "Loads a model directory (model.json + weights.bin) or a model.json path.");

  m.def(
      "predict",
      [](const ModelGraph& model, const py::object& image) {
        const Prediction p = predict(model, image_argument(model, image));
        py::dict d;
        d["class_id"] = p.class_id;
        d["label"] = p.label;
        d["confidence"] = p.confidence;
        return d;
      },
      py::arg("model"), py::arg("image"));

  m.def(
      "top_concepts",
      [](const ModelGraph& model, const py::object& image, int target_class,
         const std::string& layer, std::size_t n, const py::object& rules) {
        const ConceptSelection s = top_concepts(model, image_argument(model, image),
                                                target_class, layer, n, rules_argument(rules));
        py::list out;
        for (const ConceptAttribution& a : s.concepts) out.append(attribution_dict(a));
        return out;
      },
      py::arg("model"), py::arg("image"), py::arg("target_class"), py::arg("layer"),
      py::arg("n") = 5, py::arg("rules") = py::none());

  m.def(
      "mine_prototypes",
      [](const ModelGraph& model, const std::filesystem::path& refset, const std::string& layer,
         std::size_t channel, std::size_t k, const py::object& rules) {
        const ReferenceSet set = load_reference_set(refset);
        const RuleConfig r = rules_argument(rules);
        std::vector<ConceptPrototype> protos;
        {
          py::gil_scoped_release release;
          protos = mine_prototypes(model, set, {layer, channel}, k, r);
        }
        py::list out;
        for (const ConceptPrototype& p : protos) out.append(prototype_dict(p));
        return out;
      },
      py::arg("model"), py::arg("refset"), py::arg("layer"), py::arg("channel"),
      py::arg("k") = 6, py::arg("rules") = py::none());

  m.def(
      "explain",
      [](const ModelGraph& model, const std::filesystem::path& image,
         const std::filesystem::path& refset, const std::string& layer,
         const std::filesystem::path& out, std::size_t n, std::size_t k,
         std::optional<int> target_class, std::optional<std::filesystem::path> cassette) {
        PipelineConfig config;
        config.layer_name = layer;
        config.n = n;
        config.k = k;
        config.output_dir = out;
        const ReferenceSet set = load_reference_set(refset);
        MockClient llm = cassette ? load_cassette(*cassette) : MockClient();
        CrpIdentifier identifier(model, layer, config.rules);
        CrpVisualizer visualizer(model, set, config.rules);
        {
          py::gil_scoped_release release;
          explain(model, image, target_class, config, identifier, visualizer, llm);
        }
        return to_python(json::parse(read_text_file(out / "manifest.json")));
      },
      py::arg("model"), py::arg("image"), py::arg("refset"), py::arg("layer"), py::arg("out"),
      py::arg("n") = 5, py::arg("k") = 6, py::arg("target_class") = py::none(),
      py::arg("cassette") = py::none(),
      "Runs the pipeline with the offline mock LLM and returns the bundle manifest.");

  m.def(
      "load_bundle",
      [](const std::filesystem::path& dir) {
        load_bundle(dir);
        return to_python(json::parse(read_text_file(dir / "manifest.json")));
      },
      py::arg("dir"), "Validates a bundle directory and returns its manifest.");

  m.def(
      "parse_taxonomy",
      [](const std::string& text) {
        const Taxonomy t = parse_taxonomy(text);
        py::dict d;
        d["recognition"] = t.recognition ? py::object(py::str(std::string(
                                               recognition_name(*t.recognition))))
                                         : py::object(py::none());
        d["relation"] = t.relation
                            ? py::object(py::str(std::string(relation_name(*t.relation))))
                            : py::object(py::none());
        return d;
      },
      py::arg("text"));

  m.def("sample_bundles", &sample_bundles, py::arg("ids"), py::arg("seed"), py::arg("n"));

  m.def(
      "build_questionnaire",
      [](const std::vector<std::filesystem::path>& bundles, std::uint64_t seed, std::size_t n,
         const std::filesystem::path& out) {
        return to_python(questionnaire_to_json(export_questionnaire(bundles, seed, n, out)));
      },
      py::arg("bundles"), py::arg("seed"), py::arg("n"), py::arg("out"));

  m.def(
      "validate_response",
      [](const std::filesystem::path& questionnaire, const py::object& response,
         bool allow_partial) {
        const Questionnaire q = load_questionnaire(questionnaire);
        const auto v = validate_response(q, response_from_json(from_python(response)),
                                         allow_partial);
        return to_python(violations_to_json(v)["violations"]);
      },
      py::arg("questionnaire"), py::arg("response"), py::arg("allow_partial") = false);

  m.def(
      "aggregate",
      [](const std::filesystem::path& questionnaire, const std::filesystem::path& responses,
         const std::string& kind, const std::vector<std::string>& given, bool include_partial) {
        const Questionnaire q = load_questionnaire(questionnaire);
        const auto r = load_responses(responses);
        AggregationOptions options;
        options.include_partial = include_partial;
        AggregationTable t;
        if (kind == "overall") {
          t = aggregate_overall(q, r, options);
        } else if (kind == "rank") {
          t = aggregate_by_rank(q, r, options);
        } else if (kind == "conditional") {
          t = aggregate_conditional(q, r, given_argument(given), options);
        } else {
          throw Error("kind must be overall, rank or conditional");
        }
        return py::make_tuple(to_python(aggregation_to_json(t)), render_aggregation_text(t));
      },
      py::arg("questionnaire"), py::arg("responses"), py::arg("kind") = "overall",
      py::arg("given") = std::vector<std::string>{}, py::arg("include_partial") = false,
      "Returns the table as a dict and as text rows.");

  m.def(
      "question_text",
      [](const std::string& key) {
        const auto t = question_type_from_key(key);
        if (!t) throw Error("unknown question type " + key);
        return std::string(question_text(*t));
      },
      py::arg("key"));
}
