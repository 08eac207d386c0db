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

// Minimal feed-forward CNN runtime: model file loading, forward pass with
// full activation capture, and top-1 prediction.

#ifndef CEXPLAIN_MODEL_H_
#define CEXPLAIN_MODEL_H_

#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "cexplain/tensor.h"

namespace cexplain {

enum class LayerKind { kConv2d, kRelu, kMaxPool2d, kAvgPool2d, kFlatten, kDense };

std::string_view layer_kind_name(LayerKind kind);
std::optional<LayerKind> parse_layer_kind(std::string_view name);

struct LayerSpec {
  std::string name;
  LayerKind kind = LayerKind::kRelu;

  // conv2d / pooling geometry. Pools use kernel and stride only.
  std::size_t kernel_h = 0;
  std::size_t kernel_w = 0;
  std::size_t stride = 1;
  std::size_t padding = 0;

  // conv2d: [out_channels, in_channels, kernel_h, kernel_w]
  // dense:  [out_features, in_features]
  Tensor weight;
  // Empty when the layer has no bias (treated as zero).
  std::vector<float> bias;

  // Filled in by shape inference at load time.
  Shape input_shape;
  Shape output_shape;

  bool has_channels() const;  // output is [C, H, W]
  float bias_at(std::size_t i) const { return bias.empty() ? 0.0f : bias[i]; }
};

class ModelGraph {
 public:
  ModelGraph(Shape input_shape, std::vector<LayerSpec> layers,
             std::vector<std::string> class_labels);

  const Shape& input_shape() const { return input_shape_; }
  const std::vector<LayerSpec>& layers() const { return layers_; }
  const LayerSpec& layer(std::size_t i) const { return layers_.at(i); }
  std::size_t num_layers() const { return layers_.size(); }
  const std::vector<std::string>& class_labels() const { return class_labels_; }
  std::size_t num_classes() const { return class_labels_.size(); }

  // Index of the layer with this name; throws ModelError if absent.
  std::size_t layer_index(std::string_view name) const;

 private:
  Shape input_shape_;
  std::vector<LayerSpec> layers_;
  std::vector<std::string> class_labels_;
};

struct ActivationRecord {
  Tensor input;
  // outputs[i] is the output of layer i; the input of layer i is
  // outputs[i - 1] (or `input` for i == 0).
  std::vector<Tensor> outputs;

  const Tensor& layer_input(std::size_t i) const {
    return i == 0 ? input : outputs[i - 1];
  }
  const Tensor& logits() const { return outputs.back(); }
};

struct Prediction {
  int class_id = 0;
  std::string label;
  double confidence = 0.0;

  friend bool operator==(const Prediction&, const Prediction&) = default;
};

// Parses `model.json` bytes and the concatenated little-endian float32 weight
// blob. See schemas/model.md for the manifest fields.
ModelGraph load_model(std::string_view manifest_json,
                      std::span<const std::uint8_t> weights);
// Accepts a directory holding model.json and weights.bin, or the path of the
// model.json itself.
ModelGraph load_model_files(const std::filesystem::path& path);

struct SerializedModel {
  std::string manifest_json;
  std::vector<std::uint8_t> weights;
};
SerializedModel save_model(const ModelGraph& model);
void save_model_files(const ModelGraph& model, const std::filesystem::path& dir);

ActivationRecord forward(const ModelGraph& model, const Tensor& image);

// Softmax in double precision with max subtraction.
std::vector<double> softmax(std::span<const float> logits);

// Top-1 prediction; ties go to the lowest class index. With class_override the
// reported class is the override and confidence is its softmax probability.
Prediction predict(const ModelGraph& model, const Tensor& image,
                   std::optional<int> class_override = std::nullopt);
Prediction prediction_from_logits(const ModelGraph& model, const Tensor& logits,
                                  std::optional<int> class_override = std::nullopt);

}  // namespace cexplain

#endif  // CEXPLAIN_MODEL_H_
