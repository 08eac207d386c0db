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

// Heatmap overlays and prototype grids.

#ifndef CEXPLAIN_RENDERING_H_
#define CEXPLAIN_RENDERING_H_

#include <array>
#include <span>
#include <string_view>
#include <vector>

#include "cexplain/crp.h"
#include "cexplain/image.h"
#include "cexplain/tensor.h"

namespace cexplain {

class Colormap {
 public:
  // Parses 256 "r g b" rows; lines starting with '#' are comments.
  static Colormap parse(std::string_view table);

  // Entry for m in [0, 1], index round(m * 255).
  std::array<std::uint8_t, 3> color(double m) const;
  const std::array<std::uint8_t, 3>& entry(std::size_t i) const { return table_[i]; }

 private:
  std::array<std::array<std::uint8_t, 3>, 256> table_{};
};

// The black -> red -> yellow ramp from data/colormap_heat.txt.
const Colormap& default_colormap();

constexpr double kDefaultAlpha = 0.6;
constexpr std::size_t kGridGutter = 2;
constexpr Rgba kGridBackground = {255, 255, 255, 255};

// Positive part divided by its maximum. Maps with no positive value become
// all zeros. Works elementwise on any shape.
Tensor normalize_heatmap(const Tensor& map);
// Collapses input channels first, giving a [1, H, W] unit map.
Tensor normalize_heatmap(const RelevanceMap& map);

// Nearest-neighbour resample of a [H, W] or [1, H, W] map.
Tensor resample_nearest(const Tensor& unit_map, std::size_t width, std::size_t height);

// out = (1 - alpha * m) * pixel + alpha * m * colormap(m), per RGB channel,
// rounded to nearest; alpha channel copied from the source.
Image overlay(const Image& image, const Tensor& unit_map, double alpha = kDefaultAlpha,
              const Colormap& cmap = default_colormap());

// The unit map painted with the colormap at the given size.
Image render_heatmap(const Tensor& unit_map, std::size_t width, std::size_t height,
                     const Colormap& cmap = default_colormap());

// Row-major grid with min(columns, count) columns. Each cell is as large as
// the largest image; images sit at the top-left of their cell.
// width = cols * (cell_w + gutter) + gutter, likewise for height.
Image grid(std::span<const Image> images, std::size_t columns,
           std::size_t gutter = kGridGutter, Rgba background = kGridBackground);

}  // namespace cexplain

#endif  // CEXPLAIN_RENDERING_H_
