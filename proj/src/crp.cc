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

#include "cexplain/crp.h"

#include <spdlog/spdlog.h>

#include <algorithm>
#include <atomic>
#include <cmath>
#include <fstream>
#include <numeric>
#include <sstream>
#include <thread>

#include "cexplain/image.h"

namespace cexplain {
namespace {

using nlohmann::json;

[[noreturn]] void zero_denominator(const LayerSpec& spec) {
  throw RelevanceError("zero denominator with nonzero relevance at layer '" + spec.name +
                       "' while epsilon = 0; use epsilon > 0");
}

// Stabilized divisor for the epsilon rule; sign(0) counts as positive.
double stabilize(double z, double eps) { return z + (z >= 0.0 ? eps : -eps); }

LrpRule rule_for(const LayerSpec& spec, const RuleConfig& rules) {
  return spec.kind == LayerKind::kConv2d ? rules.conv : rules.dense;
}

Tensor backward_dense(const LayerSpec& spec, const Tensor& a, const Tensor& r_out,
                      const RuleConfig& rules) {
  const std::size_t out_f = spec.weight.dim(0), in_f = spec.weight.dim(1);
  const LrpRule rule = rule_for(spec, rules);
  std::vector<double> r_in(in_f, 0.0);
  for (std::size_t o = 0; o < out_f; ++o) {
    const double r = r_out[o];
    if (r == 0.0) continue;
    const float* w = spec.weight.data().data() + o * in_f;
    double denom = 0.0;
    if (rule == LrpRule::kEpsilon) {
      double z = spec.bias_at(o);
      for (std::size_t i = 0; i < in_f; ++i) z += static_cast<double>(a[i]) * w[i];
      denom = stabilize(z, rules.epsilon);
    } else {
      for (std::size_t i = 0; i < in_f; ++i) {
        denom += std::max(0.0, static_cast<double>(a[i]) * w[i]);
      }
      denom += rules.epsilon;
    }
    if (denom == 0.0) {
      if (rules.epsilon == 0.0) zero_denominator(spec);
      continue;
    }
    const double s = r / denom;
    for (std::size_t i = 0; i < in_f; ++i) {
      double contrib = static_cast<double>(a[i]) * w[i];
      if (rule == LrpRule::kZPlus) contrib = std::max(0.0, contrib);
      r_in[i] += contrib * s;
    }
  }
  Tensor out(spec.input_shape);
  for (std::size_t i = 0; i < in_f; ++i) out[i] = static_cast<float>(r_in[i]);
  return out;
}

Tensor backward_conv(const LayerSpec& spec, const Tensor& a, const Tensor& r_out,
                     const RuleConfig& rules) {
  const std::size_t in_c = a.dim(0), in_h = a.dim(1), in_w = a.dim(2);
  const std::size_t out_c = r_out.dim(0), out_h = r_out.dim(1), out_w = r_out.dim(2);
  const std::size_t kh = spec.kernel_h, kw = spec.kernel_w;
  const auto pad = static_cast<std::ptrdiff_t>(spec.padding);
  const LrpRule rule = rule_for(spec, rules);
  std::vector<double> r_in(a.size(), 0.0);

  // Visits every (input index, weight) pair feeding output (o, oy, ox).
  auto for_each_tap = [&](std::size_t o, std::size_t oy, std::size_t ox, auto&& fn) {
    for (std::size_t c = 0; c < in_c; ++c) {
      for (std::size_t ky = 0; ky < kh; ++ky) {
        const std::ptrdiff_t iy = static_cast<std::ptrdiff_t>(oy * spec.stride + ky) - pad;
        if (iy < 0 || iy >= static_cast<std::ptrdiff_t>(in_h)) continue;
        for (std::size_t kx = 0; kx < kw; ++kx) {
          const std::ptrdiff_t ix = static_cast<std::ptrdiff_t>(ox * spec.stride + kx) - pad;
          if (ix < 0 || ix >= static_cast<std::ptrdiff_t>(in_w)) continue;
          const std::size_t idx = (c * in_h + static_cast<std::size_t>(iy)) * in_w +
                                  static_cast<std::size_t>(ix);
          fn(idx, spec.weight[((o * in_c + c) * kh + ky) * kw + kx]);
        }
      }
    }
  };

  for (std::size_t o = 0; o < out_c; ++o) {
    for (std::size_t oy = 0; oy < out_h; ++oy) {
      for (std::size_t ox = 0; ox < out_w; ++ox) {
        const double r = r_out.at(o, oy, ox);
        if (r == 0.0) continue;
        double denom = 0.0;
        if (rule == LrpRule::kEpsilon) {
          double z = spec.bias_at(o);
          for_each_tap(o, oy, ox, [&](std::size_t idx, float w) {
            z += static_cast<double>(a[idx]) * w;
          });
          denom = stabilize(z, rules.epsilon);
        } else {
          for_each_tap(o, oy, ox, [&](std::size_t idx, float w) {
            denom += std::max(0.0, static_cast<double>(a[idx]) * w);
          });
          denom += rules.epsilon;
        }
        if (denom == 0.0) {
          if (rules.epsilon == 0.0) zero_denominator(spec);
          continue;
        }
        const double s = r / denom;
        for_each_tap(o, oy, ox, [&](std::size_t idx, float w) {
          double contrib = static_cast<double>(a[idx]) * w;
          if (rule == LrpRule::kZPlus) contrib = std::max(0.0, contrib);
          r_in[idx] += contrib * s;
        });
      }
    }
  }
  Tensor out(spec.input_shape);
  for (std::size_t i = 0; i < r_in.size(); ++i) out[i] = static_cast<float>(r_in[i]);
  return out;
}

Tensor backward_pool(const LayerSpec& spec, const Tensor& a, const Tensor& r_out,
                     const RuleConfig& rules, bool is_max) {
  std::vector<double> r_in(a.size(), 0.0);
  const std::size_t in_h = a.dim(1), in_w = a.dim(2);
  for (std::size_t c = 0; c < r_out.dim(0); ++c) {
    for (std::size_t oy = 0; oy < r_out.dim(1); ++oy) {
      for (std::size_t ox = 0; ox < r_out.dim(2); ++ox) {
        const double r = r_out.at(c, oy, ox);
        if (r == 0.0) continue;
        auto index = [&](std::size_t ky, std::size_t kx) {
          return (c * in_h + oy * spec.stride + ky) * in_w + ox * spec.stride + kx;
        };
        if (is_max) {
          std::size_t best = index(0, 0);
          for (std::size_t ky = 0; ky < spec.kernel_h; ++ky) {
            for (std::size_t kx = 0; kx < spec.kernel_w; ++kx) {
              if (a[index(ky, kx)] > a[best]) best = index(ky, kx);
            }
          }
          r_in[best] += r;
          continue;
        }
        double z = 0.0;
        for (std::size_t ky = 0; ky < spec.kernel_h; ++ky) {
          for (std::size_t kx = 0; kx < spec.kernel_w; ++kx) z += a[index(ky, kx)];
        }
        const double denom = stabilize(z, rules.epsilon);
        if (denom == 0.0) {
          if (rules.epsilon == 0.0) zero_denominator(spec);
          continue;
        }
        for (std::size_t ky = 0; ky < spec.kernel_h; ++ky) {
          for (std::size_t kx = 0; kx < spec.kernel_w; ++kx) {
            r_in[index(ky, kx)] += a[index(ky, kx)] * r / denom;
          }
        }
      }
    }
  }
  Tensor out(spec.input_shape);
  for (std::size_t i = 0; i < r_in.size(); ++i) out[i] = static_cast<float>(r_in[i]);
  return out;
}

// Relevance at the input of layer i given relevance at its output.
Tensor backward_layer(const ModelGraph& model, const ActivationRecord& record,
                      std::size_t i, const Tensor& r_out, const RuleConfig& rules) {
  const LayerSpec& spec = model.layer(i);
  const Tensor& a = record.layer_input(i);
  switch (spec.kind) {
    case LayerKind::kRelu:
    case LayerKind::kFlatten:
      return r_out.reshaped(spec.input_shape);
    case LayerKind::kDense: return backward_dense(spec, a, r_out, rules);
    case LayerKind::kConv2d: return backward_conv(spec, a, r_out, rules);
    case LayerKind::kMaxPool2d: return backward_pool(spec, a, r_out, rules, true);
    case LayerKind::kAvgPool2d: return backward_pool(spec, a, r_out, rules, false);
  }
  throw RelevanceError("unsupported layer kind");
}

void check_record(const ModelGraph& model, const ActivationRecord& record,
                  int target_class) {
  if (record.outputs.size() != model.num_layers()) {
    throw RelevanceError("activation record does not belong to this model");
  }
  for (std::size_t i = 0; i < model.num_layers(); ++i) {
    if (record.outputs[i].shape() != model.layer(i).output_shape) {
      throw RelevanceError("activation record does not belong to this model (layer '" +
                           model.layer(i).name + "')");
    }
  }
  if (target_class < 0 || static_cast<std::size_t>(target_class) >= model.num_classes()) {
    throw RelevanceError("target class " + std::to_string(target_class) + " out of range");
  }
}

Tensor initial_relevance(const ModelGraph& model, const ActivationRecord& record,
                         int target_class) {
  Tensor r(model.layers().back().output_shape);
  const auto t = static_cast<std::size_t>(target_class);
  r[t] = record.logits()[t];
  return r;
}

std::vector<double> channel_sums(const Tensor& r) {
  std::vector<double> sums(r.dim(0), 0.0);
  const std::size_t plane = r.dim(1) * r.dim(2);
  for (std::size_t c = 0; c < r.dim(0); ++c) {
    for (std::size_t i = 0; i < plane; ++i) sums[c] += r[c * plane + i];
  }
  return sums;
}

Tensor keep_channel(const Tensor& r, std::size_t channel) {
  Tensor masked(r.shape());
  const std::size_t plane = r.dim(1) * r.dim(2);
  std::copy_n(r.data().begin() + static_cast<std::ptrdiff_t>(channel * plane), plane,
              masked.data().begin() + static_cast<std::ptrdiff_t>(channel * plane));
  return masked;
}

std::string_view rule_name(LrpRule rule) {
  return rule == LrpRule::kEpsilon ? "epsilon" : "zplus";
}

LrpRule parse_rule(const std::string& name) {
  if (name == "epsilon") return LrpRule::kEpsilon;
  if (name == "zplus") return LrpRule::kZPlus;
  throw SchemaError("unknown LRP rule '" + name + "'");
}

}  // namespace

Tensor spatial_relevance(const Tensor& map) {
  if (map.rank() != 3) return map;
  Tensor out({1, map.dim(1), map.dim(2)});
  const std::size_t plane = map.dim(1) * map.dim(2);
  for (std::size_t i = 0; i < plane; ++i) {
    double s = 0.0;
    for (std::size_t c = 0; c < map.dim(0); ++c) s += map[c * plane + i];
    out[i] = static_cast<float>(s);
  }
  return out;
}

json relevance_map_to_json(const RelevanceMap& map) {
  return json{{"shape", map.values.shape()}, {"values", map.values.values()}};
}

RelevanceMap relevance_map_from_json(const json& j) {
  try {
    Shape shape = j.at("shape").get<Shape>();
    std::vector<float> values = j.at("values").get<std::vector<float>>();
    return RelevanceMap(Tensor(std::move(shape), std::move(values)));
  } catch (const json::exception& e) {
    throw SchemaError(std::string("invalid relevance grid: ") + e.what());
  } catch (const Error& e) {
    throw SchemaError(std::string("invalid relevance grid: ") + e.what());
  }
}

void RuleConfig::validate() const {
  if (!(epsilon >= 0.0) || !std::isfinite(epsilon)) {
    throw RelevanceError("epsilon must be a finite non-negative number");
  }
}

json rule_config_to_json(const RuleConfig& rules) {
  return json{{"conv", rule_name(rules.conv)},
              {"dense", rule_name(rules.dense)},
              {"epsilon", rules.epsilon},
              {"relu", "pass"},
              {"flatten", "pass"},
              {"maxpool2d", "winner_take_all"},
              {"avgpool2d", "proportional"}};
}

RuleConfig rule_config_from_json(const json& j) {
  RuleConfig rules;
  try {
    rules.conv = parse_rule(j.at("conv").get<std::string>());
    rules.dense = parse_rule(j.at("dense").get<std::string>());
    rules.epsilon = j.at("epsilon").get<double>();
  } catch (const json::exception& e) {
    throw SchemaError(std::string("invalid rule config: ") + e.what());
  }
  rules.validate();
  return rules;
}

Tensor relevance_at_layer(const ModelGraph& model, const ActivationRecord& record,
                          int target_class, std::size_t layer_index,
                          const RuleConfig& rules) {
  rules.validate();
  check_record(model, record, target_class);
  Tensor r = initial_relevance(model, record, target_class);
  for (std::size_t i = model.num_layers() - 1; i > layer_index; --i) {
    r = backward_layer(model, record, i, r, rules);
  }
  return r;
}

RelevanceMap propagate_to_input(const ModelGraph& model, const ActivationRecord& record,
                                std::size_t layer_index, Tensor relevance,
                                const RuleConfig& rules) {
  for (std::size_t i = layer_index + 1; i-- > 0;) {
    relevance = backward_layer(model, record, i, relevance, rules);
  }
  return RelevanceMap(std::move(relevance));
}

LrpResult lrp_attribute(const ModelGraph& model, const ActivationRecord& record,
                        int target_class, const RuleConfig& rules) {
  rules.validate();
  check_record(model, record, target_class);
  const std::size_t n = model.num_layers();
  LrpResult result;
  result.layers.resize(n);
  Tensor r = initial_relevance(model, record, target_class);
  for (std::size_t i = n; i-- > 0;) {
    result.layers[i] = RelevanceMap(r);
    r = backward_layer(model, record, i, r, rules);
  }
  result.input = RelevanceMap(std::move(r));
  return result;
}

std::size_t condition_layer_index(const ModelGraph& model, const std::string& layer_name) {
  const std::size_t index = model.layer_index(layer_name);
  const LayerSpec& spec = model.layer(index);
  if (!spec.has_channels()) {
    throw RelevanceError("layer '" + layer_name + "' (" +
                         std::string(layer_kind_name(spec.kind)) +
                         ") has no channel axis and cannot be conditioned on");
  }
  if (index + 1 >= model.num_layers()) {
    throw RelevanceError("condition layer '" + layer_name + "' is the logit layer");
  }
  return index;
}

ConditionalRelevance conditional_attribute(const ModelGraph& model,
                                           const ActivationRecord& record,
                                           int target_class, const ConceptRef& condition,
                                           const RuleConfig& rules) {
  const std::size_t index = condition_layer_index(model, condition.layer_name);
  const std::size_t channels = model.layer(index).output_shape[0];
  if (condition.channel >= channels) {
    throw RelevanceError("channel " + std::to_string(condition.channel) + " out of range for '" +
                         condition.layer_name + "' with " + std::to_string(channels) +
                         " channels");
  }
  const Tensor r = relevance_at_layer(model, record, target_class, index, rules);
  ConditionalRelevance out;
  out.raw_relevance = channel_sums(r)[condition.channel];
  out.input = propagate_to_input(model, record, index, keep_channel(r, condition.channel),
                                 rules);
  return out;
}

ConceptSelection top_concepts(const ModelGraph& model, const ActivationRecord& record,
                              int target_class, const std::string& layer_name,
                              std::size_t n, const RuleConfig& rules, ShareBasis basis) {
  if (n == 0) throw RelevanceError("n must be at least 1");
  const std::size_t index = condition_layer_index(model, layer_name);
  const Tensor r = relevance_at_layer(model, record, target_class, index, rules);
  const std::vector<double> sums = channel_sums(r);

  std::vector<std::size_t> positive;
  for (std::size_t c = 0; c < sums.size(); ++c) {
    if (sums[c] > 0.0) positive.push_back(c);
  }
  if (positive.empty()) {
    throw RelevanceError("no channel of layer '" + layer_name +
                         "' has positive relevance for class " +
                         std::to_string(target_class));
  }
  std::stable_sort(positive.begin(), positive.end(),
                   [&](std::size_t x, std::size_t y) { return sums[x] > sums[y]; });

  ConceptSelection selection;
  selection.fewer_than_requested = positive.size() < n;
  const std::size_t count = std::min(n, positive.size());
  const std::size_t basis_count = basis == ShareBasis::kSelected ? count : positive.size();
  double denom = 0.0;
  for (std::size_t i = 0; i < basis_count; ++i) denom += sums[positive[i]];

  for (std::size_t i = 0; i < count; ++i) {
    const std::size_t c = positive[i];
    ConceptAttribution attr;
    attr.concept_ref = {layer_name, c};
    attr.raw_relevance = sums[c];
    attr.relevance_share = 100.0 * sums[c] / denom;
    attr.heatmap = propagate_to_input(model, record, index, keep_channel(r, c), rules);
    selection.concepts.push_back(std::move(attr));
  }
  if (selection.fewer_than_requested) {
    spdlog::warn("layer '{}' has only {} positive-relevance channels, {} requested",
                 layer_name, positive.size(), n);
  }
  return selection;
}

ConceptSelection top_concepts(const ModelGraph& model, const Tensor& image,
                              int target_class, const std::string& layer_name,
                              std::size_t n, const RuleConfig& rules, ShareBasis basis) {
  return top_concepts(model, forward(model, image), target_class, layer_name, n, rules,
                      basis);
}

ReferenceSet load_reference_set(const std::filesystem::path& dir) {
  const std::filesystem::path csv = dir / "refset.csv";
  std::ifstream in(csv);
  if (!in) throw MissingAssetError(csv.string());
  ReferenceSet set;
  std::string line;
  std::size_t line_no = 0;
  auto split = [](const std::string& s) {
    std::vector<std::string> fields;
    std::stringstream ss(s);
    std::string f;
    while (std::getline(ss, f, ',')) fields.push_back(f);
    if (!s.empty() && s.back() == ',') fields.emplace_back();
    return fields;
  };
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    const std::vector<std::string> fields = split(line);
    if (line_no == 1) {
      if (fields.size() < 2 || fields[0] != "identifier" || fields[1] != "filename") {
        throw SchemaError(csv.string() + ": header must be identifier,filename[,label]");
      }
      continue;
    }
    if (fields.size() < 2 || fields.size() > 3 || fields[0].empty() || fields[1].empty()) {
      throw SchemaError(csv.string() + ":" + std::to_string(line_no) + ": malformed row");
    }
    set.images.push_back({fields[0], dir / fields[1], fields.size() == 3 ? fields[2] : "",
                          std::nullopt});
  }
  if (set.images.empty()) throw SchemaError(csv.string() + ": no reference images");
  return set;
}

std::vector<ConceptPrototype> mine_prototypes(const ModelGraph& model,
                                              const ReferenceSet& refset,
                                              const ConceptRef& concept_ref, std::size_t k,
                                              const RuleConfig& rules, MiningStats* stats,
                                              unsigned threads) {
  if (refset.images.empty()) throw RelevanceError("reference set is empty");
  if (k == 0) throw RelevanceError("k must be at least 1");
  rules.validate();
  const std::size_t index = condition_layer_index(model, concept_ref.layer_name);
  if (concept_ref.channel >= model.layer(index).output_shape[0]) {
    throw RelevanceError("channel " + std::to_string(concept_ref.channel) +
                         " out of range for '" + concept_ref.layer_name + "'");
  }

  struct Scored {
    bool ok = false;
    std::string error;
    Tensor image;
    int target = 0;
    double score = 0.0;
  };
  const std::size_t total = refset.images.size();
  std::vector<Scored> scored(total);
  std::atomic<std::size_t> next{0};
  auto worker = [&] {
    for (std::size_t i = next++; i < total; i = next++) {
      const ReferenceImage& ref = refset.images[i];
      Scored& s = scored[i];
      try {
        s.image = ref.pixels ? *ref.pixels
                             : image_to_tensor(read_png(ref.path), model.input_shape()[0]);
        const ActivationRecord record = forward(model, s.image);
        s.target = prediction_from_logits(model, record.logits()).class_id;
        const Tensor r = relevance_at_layer(model, record, s.target, index, rules);
        s.score = channel_sums(r)[concept_ref.channel];
        s.ok = true;
      } catch (const RelevanceError&) {
        throw;
      } catch (const Error& e) {
        s.error = e.what();
      }
    }
  };
  unsigned n_threads = threads ? threads : std::max(1u, std::thread::hardware_concurrency());
  n_threads = static_cast<unsigned>(std::min<std::size_t>(n_threads, total));
  if (n_threads <= 1) {
    worker();
  } else {
    std::vector<std::exception_ptr> errors(n_threads);
    std::vector<std::thread> pool;
    for (unsigned t = 0; t < n_threads; ++t) {
      pool.emplace_back([&, t] {
        try {
          worker();
        } catch (...) {
          errors[t] = std::current_exception();
        }
      });
    }
    for (auto& th : pool) th.join();
    for (auto& e : errors) {
      if (e) std::rethrow_exception(e);
    }
  }

  std::vector<std::size_t> order;
  MiningStats local;
  for (std::size_t i = 0; i < total; ++i) {
    if (scored[i].ok) {
      order.push_back(i);
    } else {
      spdlog::warn("skipping reference image '{}': {}", refset.images[i].id, scored[i].error);
      local.skipped.push_back(refset.images[i].id);
    }
  }
  local.scored = order.size();
  if (stats) *stats = local;
  if (order.empty()) {
    throw RelevanceError("no reference image could be read (" +
                         std::to_string(local.skipped.size()) + " skipped)");
  }
  std::sort(order.begin(), order.end(), [&](std::size_t x, std::size_t y) {
    if (scored[x].score != scored[y].score) return scored[x].score > scored[y].score;
    return refset.images[x].id < refset.images[y].id;
  });
  order.resize(std::min(k, order.size()));

  std::vector<ConceptPrototype> out;
  for (std::size_t i : order) {
    const ActivationRecord record = forward(model, scored[i].image);
    ConditionalRelevance cond =
        conditional_attribute(model, record, scored[i].target, concept_ref, rules);
    out.push_back({refset.images[i].id, std::move(scored[i].image), std::move(cond.input),
                   scored[i].score});
  }
  return out;
}

}  // namespace cexplain
