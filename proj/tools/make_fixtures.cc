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

// Regenerates the synthetic models and images under fixtures/. Everything is
// driven by SplitMix64 so the output is identical on every platform.
//
//   make_fixtures <repo>/fixtures

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include "cexplain/image.h"
#include "cexplain/io.h"
#include "cexplain/llm.h"
#include "cexplain/model.h"
#include "cexplain/pipeline.h"
#include "cexplain/random.h"
#include "cexplain/rendering.h"

namespace fs = std::filesystem;
using namespace cexplain;

namespace {

constexpr std::size_t kSide = 12;

std::vector<float> uniform(SplitMix64& rng, std::size_t n, double scale,
                           double offset = 0.0) {
  std::vector<float> v(n);
  for (float& x : v) x = static_cast<float>((2.0 * rng.uniform() - 1.0) * scale + offset);
  return v;
}

LayerSpec make_conv(const std::string& name, std::size_t in_c, std::size_t out_c,
                    std::size_t stride, SplitMix64& rng, double scale, float bias) {
  LayerSpec s;
  s.name = name;
  s.kind = LayerKind::kConv2d;
  s.kernel_h = s.kernel_w = 3;
  s.stride = stride;
  s.padding = 1;
  s.weight = Tensor({out_c, in_c, 3, 3}, uniform(rng, out_c * in_c * 9, scale));
  // Non-positive conv biases: a positive output always has a positive
  // weighted input, so zplus never divides by zero where relevance flows.
  s.bias.assign(out_c, bias);
  return s;
}

LayerSpec make_simple(const std::string& name, LayerKind kind) {
  LayerSpec s;
  s.name = name;
  s.kind = kind;
  return s;
}

LayerSpec make_dense(const std::string& name, std::size_t in_f, std::size_t out_f,
                     SplitMix64& rng, double scale, double offset = 0.0) {
  LayerSpec s;
  s.name = name;
  s.kind = LayerKind::kDense;
  s.weight = Tensor({out_f, in_f}, uniform(rng, out_f * in_f, scale, offset));
  return s;
}

const std::vector<std::string> kShapeLabels = {
    "disc", "ring", "horizontal stripes", "vertical stripes", "checkerboard",
    "diagonal", "cross", "dots", "gradient", "corner block"};

ModelGraph toy_model() {
  SplitMix64 rng(20240601);
  std::vector<LayerSpec> layers;
  layers.push_back(make_conv("conv1", 3, 4, 1, rng, 0.6, -0.05f));
  layers.push_back(make_simple("relu1", LayerKind::kRelu));
  layers.push_back(make_conv("conv2", 4, 12, 2, rng, 0.4, -0.02f));
  layers.push_back(make_simple("relu2", LayerKind::kRelu));
  layers.push_back(make_simple("flatten", LayerKind::kFlatten));
  layers.push_back(make_dense("fc", 12 * 6 * 6, 10, rng, 0.25, 0.06));
  return ModelGraph({3, kSide, kSide}, std::move(layers), kShapeLabels);
}

// Two weight layers, zero biases: the conservation fixture.
ModelGraph conservation_model() {
  SplitMix64 rng(7);
  std::vector<LayerSpec> layers;
  LayerSpec c = make_conv("conv", 3, 6, 1, rng, 0.5, 0.0f);
  c.bias.clear();
  layers.push_back(std::move(c));
  layers.push_back(make_simple("relu", LayerKind::kRelu));
  layers.push_back(make_simple("flatten", LayerKind::kFlatten));
  layers.push_back(make_dense("fc", 6 * 8 * 8, 4, rng, 0.3));
  return ModelGraph({3, 8, 8}, std::move(layers), {"a", "b", "c", "d"});
}

Rgba random_color(SplitMix64& rng) {
  return {static_cast<std::uint8_t>(rng.next() % 256),
          static_cast<std::uint8_t>(rng.next() % 256),
          static_cast<std::uint8_t>(rng.next() % 256), 255};
}

Image pattern_image(std::size_t kind, SplitMix64& rng) {
  const Rgba fg = random_color(rng);
  const Rgba bg = random_color(rng);
  const int shift = static_cast<int>(rng.next() % 3);
  Image img(kSide, kSide, bg);
  const double c = (kSide - 1) / 2.0 + (shift - 1);
  for (std::size_t y = 0; y < kSide; ++y) {
    for (std::size_t x = 0; x < kSide; ++x) {
      const double dx = x - c, dy = y - c;
      const double r = std::sqrt(dx * dx + dy * dy);
      const int xi = static_cast<int>(x), yi = static_cast<int>(y);
      bool on = false;
      switch (kind) {
        case 0: on = r < 3.5; break;
        case 1: on = r > 2.5 && r < 4.5; break;
        case 2: on = ((yi + shift) / 2) % 2 == 0; break;
        case 3: on = ((xi + shift) / 2) % 2 == 0; break;
        case 4: on = ((xi / 3) + (yi / 3) + shift) % 2 == 0; break;
        case 5: on = std::abs(xi - yi + shift - 1) <= 1; break;
        case 6: on = std::abs(dx) < 1.5 || std::abs(dy) < 1.5; break;
        case 7: on = (xi + shift) % 4 == 1 && (yi + shift) % 4 == 1; break;
        case 8: {
          Rgba px;
          for (int ch = 0; ch < 3; ++ch) {
            px[ch] = static_cast<std::uint8_t>(bg[ch] + (fg[ch] - bg[ch]) * xi / 11);
          }
          px[3] = 255;
          img.set(x, y, px);
          continue;
        }
        default: on = xi < 5 + shift && yi < 5 + shift; break;
      }
      if (on) img.set(x, y, fg);
    }
  }
  return img;
}

void write_refset(const fs::path& dir, std::size_t count, std::uint64_t seed) {
  fs::create_directories(dir);
  SplitMix64 rng(seed);
  std::string csv = "identifier,filename,label\n";
  for (std::size_t i = 0; i < count; ++i) {
    const std::size_t kind = i % 10;
    char id[16];
    std::snprintf(id, sizeof id, "ref_%02zu", i);
    const std::string file = std::string(id) + ".png";
    write_png(dir / file, pattern_image(kind, rng));
    csv += std::string(id) + "," + file + "," + kShapeLabels[kind] + "\n";
  }
  write_text_file(dir / "refset.csv", csv);
}

// Published texts of the lizard example, with LaTeX quotes made plain.
constexpr char kEyeLabel[] =
    "The concept appears to be \"circular holes or openings with a distinct rim.\" These are "
    "seen in the cassette reels of the tapes and the circular openings in the birdhouses. The "
    "pattern is characterized by round shapes with a defined edge or border.";
constexpr char kEyeContext[] =
    "The concept is described as \"circular holes or openings with a distinct rim,\" "
    "characterized by round shapes with a defined edge or border. The saliency map highlights "
    "the eye of the lizard in the image. The concept and the highlighted region share visual "
    "cues, as the lizard's eye has a circular shape with a defined edge, making this a feature "
    "recognition of the lizard's eye. The recognized concept, the lizard's eye, relates to the "
    "prediction of \"American chameleon\" through compositional association, as the eye is a "
    "physical part of the lizard and contributes to its identification.";
constexpr char kFoliageContext[] =
    "The concept is described as \"elongated green leaves or stems,\" which refers to narrow, "
    "pointed plant structures. The highlighted region in the saliency map corresponds to the "
    "leaves and stems surrounding the American chameleon in the image. This is a direct "
    "recognition of the concept, as the highlighted pattern matches the description of "
    "elongated green leaves or stems.\nThe recognized concept relates to the prediction through "
    "contextual association. While the leaves and stems are not part of the American chameleon "
    "itself, they provide a natural environment where this species is commonly found. The model "
    "likely associates the presence of such foliage with the habitat of the American chameleon, "
    "contributing to its prediction.";
constexpr char kLizardSummary[] =
    "The model predicts the image as an \"American chameleon\" with 86.11% confidence, "
    "supported by five key concepts. The most influential concept (40.62%) is \"lizards,\" "
    "directly recognized in the lizard's body, tail, and limbs, which are essential features for "
    "identifying the species. The second concept (21.35%) is \"elongated shapes with distinct "
    "edges,\" recognized in the lizard's elongated body, head, torso, and tail, contributing "
    "structurally to the prediction. The third concept (21.29%) is \"elongated green leaves or "
    "stems,\" directly recognized in the surrounding foliage, which provides contextual "
    "association as the natural habitat of the American chameleon. The fourth concept (8.60%) "
    "is the \"rough, scaly texture\" of the lizard's skin, directly recognized on its body and "
    "neck, further supporting the identification through its physical features. Lastly, the "
    "fifth concept (8.14%) is \"circular holes or openings,\" recognized in the lizard's eye, "
    "which shares visual cues with the concept and contributes to the prediction as a defining "
    "physical feature. Together, these concepts explain the model's confident classification of "
    "the image as an American chameleon.";

// Unit map with a square hot spot.
Tensor spot(std::size_t side, std::size_t cx, std::size_t cy, std::size_t r) {
  Tensor m({1, side, side});
  for (std::size_t y = 0; y < side; ++y) {
    for (std::size_t x = 0; x < side; ++x) {
      const bool in = x + r >= cx && x <= cx + r && y + r >= cy && y <= cy + r;
      m[y * side + x] = in ? 1.0f : 0.0f;
    }
  }
  return m;
}

// Placeholder images for the lizard walkthrough plus a cassette that answers
// its prompts with the published texts. Prompts whose text was not published
// (contextualizations 1, 2 and 4) fall through to the mock's own replies.
void write_lizard(const fs::path& dir) {
  fs::create_directories(dir);
  constexpr std::size_t kLizardSide = 24;
  Image input(kLizardSide, kLizardSide, {60, 140, 50, 255});
  for (std::size_t y = 9; y < 15; ++y) {
    for (std::size_t x = 4; x < 20; ++x) input.set(x, y, {110, 170, 60, 255});
  }
  input.set(17, 10, {20, 20, 20, 255});
  write_png(dir / "input.png", input);

  const double shares[5] = {40.62, 21.35, 21.29, 8.60, 8.14};
  const std::size_t spots[5][2] = {{12, 12}, {8, 11}, {3, 4}, {12, 13}, {17, 10}};
  SplitMix64 rng(1234);
  std::vector<ConceptEvidence> evidence;
  for (std::size_t i = 0; i < 5; ++i) {
    const std::string stem = "concept_" + std::to_string(i + 1);
    ConceptEvidence e;
    e.share = shares[i];
    e.overlay = overlay(input, spot(kLizardSide, spots[i][0], spots[i][1], 2));
    write_png(dir / (stem + "_overlay.png"), e.overlay);
    for (std::size_t j = 0; j < 6; ++j) {
      const std::string proto = stem + "_proto_" + std::to_string(j + 1);
      PrototypePair pair;
      pair.image = pattern_image((i * 6 + j) % 10, rng);
      pair.overlay = overlay(pair.image, spot(kSide, 6, 6, 2));
      write_png(dir / (proto + ".png"), pair.image);
      write_png(dir / (proto + "_overlay.png"), pair.overlay);
      e.prototypes.push_back(std::move(pair));
    }
    evidence.push_back(std::move(e));
  }

  const Prediction prediction{0, "American chameleon", 0.8611};
  const char* labels[5] = {"The concept appears to be \"lizards.\"",
                           "The concept appears to be \"elongated shapes with distinct edges.\"",
                           "The concept appears to be \"elongated green leaves or stems.\"",
                           "The concept appears to be \"rough, scaly texture.\"", kEyeLabel};
  // Each pass fixes the replies of one stage, which determines the requests
  // of the next.
  std::map<std::string, std::string> cassette;
  auto pass = [&] {
    MockClient mock(cassette);
    return narrate(mock, input, prediction, evidence, PromptOptions{}, false).prompts;
  };
  auto prompts = pass();
  for (std::size_t i = 0; i < 5; ++i) cassette[prompts[2 * i].request_hash] = labels[i];
  prompts = pass();
  cassette[prompts[2 * 2 + 1].request_hash] = kFoliageContext;
  cassette[prompts[2 * 4 + 1].request_hash] = kEyeContext;
  prompts = pass();
  cassette[prompts.back().request_hash] = kLizardSummary;
  save_cassette(dir / "cassette.json", cassette);

  const nlohmann::json walkthrough = {
      {"prediction", {{"class_id", prediction.class_id},
                      {"label", prediction.label},
                      {"confidence", prediction.confidence}}},
      {"shares", shares},
      {"prototypes_per_concept", 6}};
  write_text_file(dir / "walkthrough.json", walkthrough.dump(2) + "\n");
}

}  // namespace

int main(int argc, char** argv) {
  if (argc != 2) {
    std::fprintf(stderr, "usage: make_fixtures <fixtures-dir>\n");
    return 1;
  }
  const fs::path root = argv[1];
  save_model_files(toy_model(), root / "toy");
  save_model_files(conservation_model(), root / "conserve");
  write_refset(root / "toy" / "refset", 50, 99);

  SplitMix64 rng(4242);
  for (int i = 0; i < 8; ++i) {
    const fs::path dir = root / "toy" / "images";
    fs::create_directories(dir);
    write_png(dir / ("image_" + std::to_string(i) + ".png"),
              pattern_image(static_cast<std::size_t>(i) % 10, rng));
  }
  write_lizard(root / "lizard");
  std::printf("fixtures written to %s\n", root.c_str());
  return 0;
}
