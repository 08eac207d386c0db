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

#include "cexplain/model.h"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <limits>
#include <utility>

#include "cexplain/io.h"
#include "json.hpp"

namespace cexplain {
namespace {

using nlohmann::json;

constexpr std::string_view kModelFormat = "cexplain.model";
constexpr int kModelVersion = 1;

static_assert(std::endian::native == std::endian::little,
              "weights.bin is little-endian; big-endian hosts need a byteswap");

std::size_t get_size(const json& obj, const char* key, int layer) {
  auto it = obj.find(key);
  if (it == obj.end() || !it->is_number_integer() || it->get<long long>() < 0) {
    throw ModelError(layer, std::string("missing or invalid '") + key + "'");
  }
  return it->get<std::size_t>();
}

std::size_t get_size_or(const json& obj, const char* key, std::size_t fallback,
                        int layer) {
  if (!obj.contains(key)) return fallback;
  return get_size(obj, key, layer);
}

void read_kernel(const json& obj, int layer, std::size_t& kh, std::size_t& kw) {
  auto it = obj.find("kernel");
  if (it == obj.end()) throw ModelError(layer, "missing 'kernel'");
  if (it->is_number_integer()) {
    kh = kw = get_size(obj, "kernel", layer);
  } else if (it->is_array() && it->size() == 2 && (*it)[0].is_number_integer() &&
             (*it)[1].is_number_integer()) {
    kh = (*it)[0].get<std::size_t>();
    kw = (*it)[1].get<std::size_t>();
  } else {
    throw ModelError(layer, "'kernel' must be an integer or [h, w]");
  }
  if (kh == 0 || kw == 0) throw ModelError(layer, "kernel dimensions must be positive");
}

std::vector<float> read_blob(const json& layer_json, const char* key, int layer,
                             std::size_t expected_count,
                             std::span<const std::uint8_t> weights) {
  auto it = layer_json.find(key);
  if (it == layer_json.end() || !it->is_object()) {
    throw ModelError(layer, std::string("missing tensor reference '") + key + "'");
  }
  const std::size_t offset = get_size(*it, "offset", layer);
  const std::size_t length = get_size(*it, "length", layer);
  if (length != expected_count * sizeof(float)) {
    throw ModelError(layer, std::string("tensor '") + key + "' declares " +
                                std::to_string(length) + " bytes, shape needs " +
                                std::to_string(expected_count * sizeof(float)));
  }
  if (offset > weights.size() || length > weights.size() - offset) {
    throw ModelError(layer, std::string("weight blob truncated: tensor '") + key +
                                "' needs bytes [" + std::to_string(offset) + ", " +
                                std::to_string(offset + length) + ") of " +
                                std::to_string(weights.size()));
  }
  std::vector<float> values(expected_count);
  std::memcpy(values.data(), weights.data() + offset, length);
  for (float v : values) {
    if (!std::isfinite(v)) {
      throw ModelError(layer, std::string("non-finite value in tensor '") + key + "'");
    }
  }
  return values;
}

// Infers output_shape from input_shape and checks the layer's parameters.
void infer_shape(LayerSpec& spec, int index) {
  const Shape& in = spec.input_shape;
  switch (spec.kind) {
    case LayerKind::kConv2d: {
      if (in.size() != 3) {
        throw ModelError(index, "conv2d expects a [C, H, W] input, got " +
                                    shape_to_string(in));
      }
      const std::size_t out_c = spec.weight.dim(0);
      if (spec.weight.dim(1) != in[0]) {
        throw ModelError(index, "conv2d expects " +
                                    std::to_string(spec.weight.dim(1)) +
                                    " input channels, got " + std::to_string(in[0]));
      }
      const std::size_t ph = in[1] + 2 * spec.padding;
      const std::size_t pw = in[2] + 2 * spec.padding;
      if (ph < spec.kernel_h || pw < spec.kernel_w) {
        throw ModelError(index, "conv2d kernel larger than padded input");
      }
      spec.output_shape = {out_c, (ph - spec.kernel_h) / spec.stride + 1,
                           (pw - spec.kernel_w) / spec.stride + 1};
      break;
    }
    case LayerKind::kMaxPool2d:
    case LayerKind::kAvgPool2d: {
      if (in.size() != 3) {
        throw ModelError(index, "pooling expects a [C, H, W] input, got " +
                                    shape_to_string(in));
      }
      if (in[1] < spec.kernel_h || in[2] < spec.kernel_w) {
        throw ModelError(index, "pooling window larger than input");
      }
      spec.output_shape = {in[0], (in[1] - spec.kernel_h) / spec.stride + 1,
                           (in[2] - spec.kernel_w) / spec.stride + 1};
      break;
    }
    case LayerKind::kRelu:
      spec.output_shape = in;
      break;
    case LayerKind::kFlatten:
      spec.output_shape = {shape_size(in)};
      break;
    case LayerKind::kDense: {
      if (in.size() != 1) {
        throw ModelError(index, "dense expects a flat input, got " +
                                    shape_to_string(in) + " (add a flatten layer)");
      }
      if (spec.weight.dim(1) != in[0]) {
        throw ModelError(index, "dense expects " + std::to_string(spec.weight.dim(1)) +
                                    " inputs, got " + std::to_string(in[0]));
      }
      spec.output_shape = {spec.weight.dim(0)};
      break;
    }
  }
}

json blob_ref(std::vector<std::uint8_t>& blob, std::span<const float> values) {
  json ref = {{"offset", blob.size()}, {"length", values.size() * sizeof(float)}};
  const auto* bytes = reinterpret_cast<const std::uint8_t*>(values.data());
  blob.insert(blob.end(), bytes, bytes + values.size() * sizeof(float));
  return ref;
}

}  // namespace

std::string_view layer_kind_name(LayerKind kind) {
  switch (kind) {
    case LayerKind::kConv2d: return "conv2d";
    case LayerKind::kRelu: return "relu";
    case LayerKind::kMaxPool2d: return "maxpool2d";
    case LayerKind::kAvgPool2d: return "avgpool2d";
    case LayerKind::kFlatten: return "flatten";
    case LayerKind::kDense: return "dense";
  }
  return "unknown";
}

std::optional<LayerKind> parse_layer_kind(std::string_view name) {
  for (LayerKind k : {LayerKind::kConv2d, LayerKind::kRelu, LayerKind::kMaxPool2d,
                      LayerKind::kAvgPool2d, LayerKind::kFlatten, LayerKind::kDense}) {
    if (layer_kind_name(k) == name) return k;
  }
  return std::nullopt;
}

bool LayerSpec::has_channels() const { return output_shape.size() == 3; }

ModelGraph::ModelGraph(Shape input_shape, std::vector<LayerSpec> layers,
                       std::vector<std::string> class_labels)
    : input_shape_(std::move(input_shape)),
      layers_(std::move(layers)),
      class_labels_(std::move(class_labels)) {
  if (layers_.empty()) throw ModelError(-1, "model has no layers");
  if (input_shape_.empty() || shape_size(input_shape_) == 0) {
    throw ModelError(-1, "input_shape must be non-empty with positive dimensions");
  }
  Shape current = input_shape_;
  for (std::size_t i = 0; i < layers_.size(); ++i) {
    LayerSpec& spec = layers_[i];
    const int idx = static_cast<int>(i);
    if (spec.name.empty()) {
      spec.name = std::string(layer_kind_name(spec.kind)) + std::to_string(i);
    }
    for (std::size_t j = 0; j < i; ++j) {
      if (layers_[j].name == spec.name) {
        throw ModelError(idx, "duplicate layer name '" + spec.name + "'");
      }
    }
    if (spec.stride == 0) throw ModelError(idx, "stride must be positive");
    if (spec.kind == LayerKind::kConv2d) {
      if (spec.weight.rank() != 4) throw ModelError(idx, "conv2d weight must be 4-D");
      if (spec.weight.dim(2) != spec.kernel_h || spec.weight.dim(3) != spec.kernel_w) {
        throw ModelError(idx, "conv2d weight does not match kernel size");
      }
    }
    if (spec.kind == LayerKind::kDense && spec.weight.rank() != 2) {
      throw ModelError(idx, "dense weight must be 2-D");
    }
    if (!spec.bias.empty() && (spec.kind == LayerKind::kConv2d ||
                               spec.kind == LayerKind::kDense) &&
        spec.bias.size() != spec.weight.dim(0)) {
      throw ModelError(idx, "bias length does not match output width");
    }
    if (!spec.input_shape.empty() && spec.input_shape != current) {
      throw ModelError(idx, "declared input shape " + shape_to_string(spec.input_shape) +
                                " does not match previous output " +
                                shape_to_string(current));
    }
    spec.input_shape = current;
    infer_shape(spec, idx);
    current = spec.output_shape;
  }
  const LayerSpec& last = layers_.back();
  if (last.kind != LayerKind::kDense) {
    throw ModelError(static_cast<int>(layers_.size() - 1),
                     "final layer must be dense (it produces the logits)");
  }
  if (class_labels_.size() != last.output_shape[0]) {
    throw ModelError(-1, "class_labels has " + std::to_string(class_labels_.size()) +
                             " entries but the final dense layer outputs " +
                             std::to_string(last.output_shape[0]));
  }
}

std::size_t ModelGraph::layer_index(std::string_view name) const {
  for (std::size_t i = 0; i < layers_.size(); ++i) {
    if (layers_[i].name == name) return i;
  }
  throw ModelError(-1, "no layer named '" + std::string(name) + "'");
}

ModelGraph load_model(std::string_view manifest_json,
                      std::span<const std::uint8_t> weights) {
  json doc;
  try {
    doc = json::parse(manifest_json);
  } catch (const json::parse_error& e) {
    throw ModelError(-1, std::string("model manifest is not valid JSON: ") + e.what());
  }
  if (!doc.is_object()) throw ModelError(-1, "model manifest must be an object");
  if (doc.value("format", "") != kModelFormat) {
    throw ModelError(-1, "model manifest 'format' must be \"cexplain.model\"");
  }
  if (!doc.contains("version") || doc["version"] != kModelVersion) {
    throw ModelError(-1, "unsupported model manifest version");
  }
  Shape input_shape;
  if (!doc.contains("input_shape") || !doc["input_shape"].is_array()) {
    throw ModelError(-1, "missing 'input_shape'");
  }
  for (const json& d : doc["input_shape"]) {
    if (!d.is_number_integer() || d.get<long long>() <= 0) {
      throw ModelError(-1, "'input_shape' entries must be positive integers");
    }
    input_shape.push_back(d.get<std::size_t>());
  }
  std::vector<std::string> labels;
  if (!doc.contains("class_labels") || !doc["class_labels"].is_array()) {
    throw ModelError(-1, "missing 'class_labels'");
  }
  for (const json& l : doc["class_labels"]) {
    if (!l.is_string()) throw ModelError(-1, "'class_labels' entries must be strings");
    labels.push_back(l.get<std::string>());
  }
  if (!doc.contains("layers") || !doc["layers"].is_array()) {
    throw ModelError(-1, "missing 'layers'");
  }

  std::vector<LayerSpec> layers;
  Shape current = input_shape;
  int index = 0;
  for (const json& lj : doc["layers"]) {
    if (!lj.is_object()) throw ModelError(index, "layer entry must be an object");
    LayerSpec spec;
    spec.name = lj.value("name", "");
    const auto kind = parse_layer_kind(lj.value("kind", ""));
    if (!kind) {
      throw ModelError(index, "unknown layer kind '" + lj.value("kind", "") + "'");
    }
    spec.kind = *kind;
    switch (spec.kind) {
      case LayerKind::kConv2d: {
        read_kernel(lj, index, spec.kernel_h, spec.kernel_w);
        const std::size_t in_c = get_size(lj, "in_channels", index);
        const std::size_t out_c = get_size(lj, "out_channels", index);
        spec.stride = get_size_or(lj, "stride", 1, index);
        spec.padding = get_size_or(lj, "padding", 0, index);
        Shape wshape = {out_c, in_c, spec.kernel_h, spec.kernel_w};
        spec.weight = Tensor(wshape, read_blob(lj, "weight", index,
                                               shape_size(wshape), weights));
        if (lj.contains("bias")) spec.bias = read_blob(lj, "bias", index, out_c, weights);
        break;
      }
      case LayerKind::kDense: {
        const std::size_t in_f = get_size(lj, "in_features", index);
        const std::size_t out_f = get_size(lj, "out_features", index);
        Shape wshape = {out_f, in_f};
        spec.weight = Tensor(wshape, read_blob(lj, "weight", index,
                                               shape_size(wshape), weights));
        if (lj.contains("bias")) spec.bias = read_blob(lj, "bias", index, out_f, weights);
        break;
      }
      case LayerKind::kMaxPool2d:
      case LayerKind::kAvgPool2d:
        read_kernel(lj, index, spec.kernel_h, spec.kernel_w);
        spec.stride = get_size_or(lj, "stride", spec.kernel_h, index);
        break;
      case LayerKind::kRelu:
      case LayerKind::kFlatten:
        break;
    }
    layers.push_back(std::move(spec));
    ++index;
  }
  return ModelGraph(std::move(input_shape), std::move(layers), std::move(labels));
}

ModelGraph load_model_files(const std::filesystem::path& path) {
  std::filesystem::path manifest = path;
  if (std::filesystem::is_directory(path)) manifest = path / "model.json";
  const std::filesystem::path blob = manifest.parent_path() / "weights.bin";
  const std::string manifest_text = read_text_file(manifest);
  const std::vector<std::uint8_t> weights = read_binary_file(blob);
  return load_model(manifest_text, weights);
}

SerializedModel save_model(const ModelGraph& model) {
  SerializedModel out;
  json layers = json::array();
  for (const LayerSpec& spec : model.layers()) {
    json lj = {{"name", spec.name}, {"kind", layer_kind_name(spec.kind)}};
    switch (spec.kind) {
      case LayerKind::kConv2d:
        lj["in_channels"] = spec.weight.dim(1);
        lj["out_channels"] = spec.weight.dim(0);
        lj["kernel"] = {spec.kernel_h, spec.kernel_w};
        lj["stride"] = spec.stride;
        lj["padding"] = spec.padding;
        lj["weight"] = blob_ref(out.weights, spec.weight.data());
        if (!spec.bias.empty()) lj["bias"] = blob_ref(out.weights, spec.bias);
        break;
      case LayerKind::kDense:
        lj["in_features"] = spec.weight.dim(1);
        lj["out_features"] = spec.weight.dim(0);
        lj["weight"] = blob_ref(out.weights, spec.weight.data());
        if (!spec.bias.empty()) lj["bias"] = blob_ref(out.weights, spec.bias);
        break;
      case LayerKind::kMaxPool2d:
      case LayerKind::kAvgPool2d:
        lj["kernel"] = {spec.kernel_h, spec.kernel_w};
        lj["stride"] = spec.stride;
        break;
      case LayerKind::kRelu:
      case LayerKind::kFlatten:
        break;
    }
    layers.push_back(std::move(lj));
  }
  json doc = {{"format", kModelFormat},
              {"version", kModelVersion},
              {"input_shape", model.input_shape()},
              {"class_labels", model.class_labels()},
              {"layers", std::move(layers)}};
  out.manifest_json = doc.dump(2) + "\n";
  return out;
}

void save_model_files(const ModelGraph& model, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  SerializedModel s = save_model(model);
  write_text_file(dir / "model.json", s.manifest_json);
  write_binary_file(dir / "weights.bin", s.weights);
}

namespace {

Tensor conv2d_forward(const LayerSpec& spec, const Tensor& in) {
  Tensor out(spec.output_shape);
  const std::size_t in_c = in.dim(0), in_h = in.dim(1), in_w = in.dim(2);
  const std::size_t out_c = out.dim(0), out_h = out.dim(1), out_w = out.dim(2);
  const auto pad = static_cast<std::ptrdiff_t>(spec.padding);
  for (std::size_t o = 0; o < out_c; ++o) {
    for (std::size_t oy = 0; oy < out_h; ++oy) {
      for (std::size_t ox = 0; ox < out_w; ++ox) {
        float acc = spec.bias_at(o);
        for (std::size_t c = 0; c < in_c; ++c) {
          for (std::size_t ky = 0; ky < spec.kernel_h; ++ky) {
            const std::ptrdiff_t iy =
                static_cast<std::ptrdiff_t>(oy * spec.stride + ky) - pad;
            if (iy < 0 || iy >= static_cast<std::ptrdiff_t>(in_h)) continue;
            for (std::size_t kx = 0; kx < spec.kernel_w; ++kx) {
              const std::ptrdiff_t ix =
                  static_cast<std::ptrdiff_t>(ox * spec.stride + kx) - pad;
              if (ix < 0 || ix >= static_cast<std::ptrdiff_t>(in_w)) continue;
              acc += spec.weight[((o * in_c + c) * spec.kernel_h + ky) * spec.kernel_w + kx] *
                     in.at(c, static_cast<std::size_t>(iy), static_cast<std::size_t>(ix));
            }
          }
        }
        out.at(o, oy, ox) = acc;
      }
    }
  }
  return out;
}

Tensor pool_forward(const LayerSpec& spec, const Tensor& in, bool is_max) {
  Tensor out(spec.output_shape);
  const float window = static_cast<float>(spec.kernel_h * spec.kernel_w);
  for (std::size_t c = 0; c < out.dim(0); ++c) {
    for (std::size_t oy = 0; oy < out.dim(1); ++oy) {
      for (std::size_t ox = 0; ox < out.dim(2); ++ox) {
        float acc = is_max ? -std::numeric_limits<float>::infinity() : 0.0f;
        for (std::size_t ky = 0; ky < spec.kernel_h; ++ky) {
          for (std::size_t kx = 0; kx < spec.kernel_w; ++kx) {
            const float v = in.at(c, oy * spec.stride + ky, ox * spec.stride + kx);
            acc = is_max ? std::max(acc, v) : acc + v;
          }
        }
        out.at(c, oy, ox) = is_max ? acc : acc / window;
      }
    }
  }
  return out;
}

Tensor dense_forward(const LayerSpec& spec, const Tensor& in) {
  const std::size_t out_f = spec.weight.dim(0), in_f = spec.weight.dim(1);
  Tensor out(spec.output_shape);
  for (std::size_t o = 0; o < out_f; ++o) {
    float acc = spec.bias_at(o);
    for (std::size_t i = 0; i < in_f; ++i) acc += spec.weight[o * in_f + i] * in[i];
    out[o] = acc;
  }
  return out;
}

}  // namespace

ActivationRecord forward(const ModelGraph& model, const Tensor& image) {
  if (image.shape() != model.input_shape()) {
    throw ModelError(0, "layer '" + model.layer(0).name + "' expects input " +
                            shape_to_string(model.input_shape()) + ", got " +
                            shape_to_string(image.shape()));
  }
  if (!image.all_finite()) throw ModelError(-1, "input image has non-finite values");
  ActivationRecord record;
  record.input = image;
  record.outputs.reserve(model.num_layers());
  for (std::size_t i = 0; i < model.num_layers(); ++i) {
    const LayerSpec& spec = model.layer(i);
    const Tensor& in = record.layer_input(i);
    if (in.shape() != spec.input_shape) {
      throw ModelError(static_cast<int>(i), "layer '" + spec.name + "' expects input " +
                                                shape_to_string(spec.input_shape) +
                                                ", got " + shape_to_string(in.shape()));
    }
    Tensor out;
    switch (spec.kind) {
      case LayerKind::kConv2d: out = conv2d_forward(spec, in); break;
      case LayerKind::kRelu: {
        out = in;
        for (float& v : out.data()) v = std::max(v, 0.0f);
        break;
      }
      case LayerKind::kMaxPool2d: out = pool_forward(spec, in, true); break;
      case LayerKind::kAvgPool2d: out = pool_forward(spec, in, false); break;
      case LayerKind::kFlatten: out = in.reshaped(spec.output_shape); break;
      case LayerKind::kDense: out = dense_forward(spec, in); break;
    }
    record.outputs.push_back(std::move(out));
  }
  return record;
}

std::vector<double> softmax(std::span<const float> logits) {
  std::vector<double> p(logits.size());
  if (logits.empty()) return p;
  const double mx = *std::max_element(logits.begin(), logits.end());
  double total = 0.0;
  for (std::size_t i = 0; i < logits.size(); ++i) {
    p[i] = std::exp(static_cast<double>(logits[i]) - mx);
    total += p[i];
  }
  for (double& v : p) v /= total;
  return p;
}

Prediction prediction_from_logits(const ModelGraph& model, const Tensor& logits,
                                  std::optional<int> class_override) {
  const std::vector<double> probs = softmax(logits.data());
  int cls = 0;
  if (class_override) {
    if (*class_override < 0 || static_cast<std::size_t>(*class_override) >= probs.size()) {
      throw ModelError(-1, "class override " + std::to_string(*class_override) +
                               " is outside [0, " + std::to_string(probs.size()) + ")");
    }
    cls = *class_override;
  } else {
    // First maximum wins: equal logits select the lowest index.
    for (std::size_t i = 1; i < logits.size(); ++i) {
      if (logits[i] > logits[static_cast<std::size_t>(cls)]) cls = static_cast<int>(i);
    }
  }
  return Prediction{cls, model.class_labels()[static_cast<std::size_t>(cls)],
                    probs[static_cast<std::size_t>(cls)]};
}

Prediction predict(const ModelGraph& model, const Tensor& image,
                   std::optional<int> class_override) {
  return prediction_from_logits(model, forward(model, image).logits(), class_override);
}

}  // namespace cexplain
