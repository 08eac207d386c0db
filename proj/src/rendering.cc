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

#include "cexplain/rendering.h"

#include <algorithm>
#include <cmath>
#include <sstream>
#include <string>

#include "cexplain/error.h"

namespace cexplain {
namespace embedded {
extern const std::string_view kColormapHeat;
}  // namespace embedded

namespace {

std::size_t map_height(const Tensor& m) { return m.rank() == 3 ? m.dim(1) : m.dim(0); }
std::size_t map_width(const Tensor& m) { return m.rank() == 3 ? m.dim(2) : m.dim(1); }

void check_unit_map(const Tensor& m) {
  if (!(m.rank() == 2 || (m.rank() == 3 && m.dim(0) == 1))) {
    throw ImageError("unit map must be [H, W] or [1, H, W], got " + shape_to_string(m.shape()));
  }
}

std::uint8_t blend(std::uint8_t pixel, std::uint8_t color, double alpha, double m) {
  const double v = (1.0 - alpha * m) * pixel + alpha * m * color;
  return static_cast<std::uint8_t>(std::clamp<long>(std::lround(v), 0, 255));
}

}  // namespace

Colormap Colormap::parse(std::string_view table) {
  Colormap cmap;
  std::istringstream in{std::string(table)};
  std::string line;
  std::size_t count = 0;
  while (std::getline(in, line)) {
    if (line.empty() || line[0] == '#') continue;
    std::istringstream row(line);
    int r, g, b;
    if (!(row >> r >> g >> b) || r < 0 || r > 255 || g < 0 || g > 255 || b < 0 || b > 255) {
      throw SchemaError("colormap row " + std::to_string(count) + " is malformed");
    }
    if (count == 256) throw SchemaError("colormap has more than 256 rows");
    cmap.table_[count++] = {static_cast<std::uint8_t>(r), static_cast<std::uint8_t>(g),
                            static_cast<std::uint8_t>(b)};
  }
  if (count != 256) throw SchemaError("colormap must have 256 rows, got " + std::to_string(count));
  return cmap;
}

std::array<std::uint8_t, 3> Colormap::color(double m) const {
  const long i = std::lround(std::clamp(m, 0.0, 1.0) * 255.0);
  return table_[static_cast<std::size_t>(i)];
}

const Colormap& default_colormap() {
  static const Colormap cmap = Colormap::parse(embedded::kColormapHeat);
  return cmap;
}

Tensor normalize_heatmap(const Tensor& map) {
  if (!map.all_finite()) throw ImageError("heatmap has non-finite values");
  float mx = 0.0f;
  for (float v : map.data()) mx = std::max(mx, v);
  Tensor out(map.shape());
  if (mx <= 0.0f) return out;
  for (std::size_t i = 0; i < map.size(); ++i) out[i] = std::max(map[i], 0.0f) / mx;
  return out;
}

Tensor normalize_heatmap(const RelevanceMap& map) {
  return normalize_heatmap(spatial_relevance(map.values));
}

Tensor resample_nearest(const Tensor& unit_map, std::size_t width, std::size_t height) {
  check_unit_map(unit_map);
  const std::size_t mh = map_height(unit_map), mw = map_width(unit_map);
  Tensor out({1, height, width});
  for (std::size_t y = 0; y < height; ++y) {
    const std::size_t sy = y * mh / height;
    for (std::size_t x = 0; x < width; ++x) {
      out[y * width + x] = unit_map[sy * mw + x * mw / width];
    }
  }
  return out;
}

Image overlay(const Image& image, const Tensor& unit_map, double alpha, const Colormap& cmap) {
  if (alpha < 0.0 || alpha > 1.0) throw ImageError("alpha must lie in [0, 1]");
  const Tensor m = resample_nearest(unit_map, image.width, image.height);
  if (m.size() != image.width * image.height) {
    throw ImageError("resampled map does not match the image");
  }
  Image out = image;
  for (std::size_t y = 0; y < image.height; ++y) {
    for (std::size_t x = 0; x < image.width; ++x) {
      const double v = m[y * image.width + x];
      const Rgba px = image.get(x, y);
      const auto c = cmap.color(v);
      out.set(x, y, {blend(px[0], c[0], alpha, v), blend(px[1], c[1], alpha, v),
                     blend(px[2], c[2], alpha, v), px[3]});
    }
  }
  return out;
}

Image render_heatmap(const Tensor& unit_map, std::size_t width, std::size_t height,
                     const Colormap& cmap) {
  const Tensor m = resample_nearest(unit_map, width, height);
  Image out(width, height);
  for (std::size_t y = 0; y < height; ++y) {
    for (std::size_t x = 0; x < width; ++x) {
      const auto c = cmap.color(m[y * width + x]);
      out.set(x, y, {c[0], c[1], c[2], 255});
    }
  }
  return out;
}

Image grid(std::span<const Image> images, std::size_t columns, std::size_t gutter,
           Rgba background) {
  if (images.empty()) throw ImageError("grid needs at least one image");
  if (columns == 0) throw ImageError("grid needs at least one column");
  std::size_t cell_w = 0, cell_h = 0;
  for (const Image& img : images) {
    cell_w = std::max(cell_w, img.width);
    cell_h = std::max(cell_h, img.height);
  }
  const std::size_t cols = std::min(columns, images.size());
  const std::size_t rows = (images.size() + cols - 1) / cols;
  Image out(cols * (cell_w + gutter) + gutter, rows * (cell_h + gutter) + gutter, background);
  for (std::size_t i = 0; i < images.size(); ++i) {
    const std::size_t x0 = gutter + (i % cols) * (cell_w + gutter);
    const std::size_t y0 = gutter + (i / cols) * (cell_h + gutter);
    const Image& img = images[i];
    for (std::size_t y = 0; y < img.height; ++y) {
      for (std::size_t x = 0; x < img.width; ++x) out.set(x0 + x, y0 + y, img.get(x, y));
    }
  }
  return out;
}

}  // namespace cexplain
