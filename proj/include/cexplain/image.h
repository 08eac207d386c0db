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

#ifndef CEXPLAIN_IMAGE_H_
#define CEXPLAIN_IMAGE_H_

#include <array>
#include <cstdint>
#include <filesystem>
#include <span>
#include <vector>

#include "cexplain/tensor.h"

namespace cexplain {

using Rgba = std::array<std::uint8_t, 4>;

// 8-bit RGBA raster, row-major.
struct Image {
  std::size_t width = 0;
  std::size_t height = 0;
  std::vector<std::uint8_t> pixels;  // width * height * 4

  Image() = default;
  Image(std::size_t w, std::size_t h, Rgba fill = {0, 0, 0, 255});

  Rgba get(std::size_t x, std::size_t y) const;
  void set(std::size_t x, std::size_t y, Rgba px);

  friend bool operator==(const Image&, const Image&) = default;
};

// Writes an 8-bit RGBA PNG with unfiltered scanlines and stored (level 0)
// deflate blocks, so the byte stream depends only on the pixels.
std::vector<std::uint8_t> encode_png(const Image& image);
// Decodes any PNG libpng understands, converted to RGBA8.
Image decode_png(std::span<const std::uint8_t> bytes);

Image read_png(const std::filesystem::path& path);
void write_png(const std::filesystem::path& path, const Image& image);

// [C, H, W] tensor in [0, 1]; C is 3 (RGB) or 1 (luma mean of RGB).
Tensor image_to_tensor(const Image& image, std::size_t channels = 3);
// Inverse of image_to_tensor for C in {1, 3}; values clamped and rounded.
Image tensor_to_image(const Tensor& tensor);

}  // namespace cexplain

#endif  // CEXPLAIN_IMAGE_H_
