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

#include "cexplain/image.h"

#include <png.h>
#include <zlib.h>

#include <algorithm>
#include <cmath>
#include <string>

#include "cexplain/error.h"
#include "cexplain/io.h"

namespace cexplain {
namespace {

void put_u32(std::vector<std::uint8_t>& out, std::uint32_t v) {
  out.push_back(static_cast<std::uint8_t>(v >> 24));
  out.push_back(static_cast<std::uint8_t>(v >> 16));
  out.push_back(static_cast<std::uint8_t>(v >> 8));
  out.push_back(static_cast<std::uint8_t>(v));
}

void put_chunk(std::vector<std::uint8_t>& out, const char type[4],
               std::span<const std::uint8_t> payload) {
  put_u32(out, static_cast<std::uint32_t>(payload.size()));
  const std::size_t type_pos = out.size();
  out.insert(out.end(), type, type + 4);
  out.insert(out.end(), payload.begin(), payload.end());
  uLong crc = crc32(0L, Z_NULL, 0);
  crc = crc32(crc, out.data() + type_pos, static_cast<uInt>(4 + payload.size()));
  put_u32(out, static_cast<std::uint32_t>(crc));
}

// zlib stream made of stored deflate blocks.
std::vector<std::uint8_t> zlib_stored(std::span<const std::uint8_t> raw) {
  constexpr std::size_t kMaxBlock = 65535;
  std::vector<std::uint8_t> out = {0x78, 0x01};
  std::size_t pos = 0;
  do {
    const std::size_t len = std::min(kMaxBlock, raw.size() - pos);
    const bool last = pos + len == raw.size();
    out.push_back(last ? 1 : 0);
    out.push_back(static_cast<std::uint8_t>(len & 0xff));
    out.push_back(static_cast<std::uint8_t>(len >> 8));
    out.push_back(static_cast<std::uint8_t>(~len & 0xff));
    out.push_back(static_cast<std::uint8_t>((~len >> 8) & 0xff));
    out.insert(out.end(), raw.begin() + static_cast<std::ptrdiff_t>(pos),
               raw.begin() + static_cast<std::ptrdiff_t>(pos + len));
    pos += len;
  } while (pos < raw.size());
  uLong adler = adler32(0L, Z_NULL, 0);
  adler = adler32(adler, raw.data(), static_cast<uInt>(raw.size()));
  put_u32(out, static_cast<std::uint32_t>(adler));
  return out;
}

std::uint8_t to_byte(float v) {
  return static_cast<std::uint8_t>(std::lround(std::clamp(v, 0.0f, 1.0f) * 255.0f));
}

}  // namespace

Image::Image(std::size_t w, std::size_t h, Rgba fill) : width(w), height(h) {
  pixels.resize(w * h * 4);
  for (std::size_t i = 0; i < w * h; ++i) {
    std::copy(fill.begin(), fill.end(), pixels.begin() + static_cast<std::ptrdiff_t>(4 * i));
  }
}

Rgba Image::get(std::size_t x, std::size_t y) const {
  const std::size_t o = 4 * (y * width + x);
  return {pixels[o], pixels[o + 1], pixels[o + 2], pixels[o + 3]};
}

void Image::set(std::size_t x, std::size_t y, Rgba px) {
  std::copy(px.begin(), px.end(),
            pixels.begin() + static_cast<std::ptrdiff_t>(4 * (y * width + x)));
}

std::vector<std::uint8_t> encode_png(const Image& image) {
  if (image.width == 0 || image.height == 0) throw ImageError("cannot encode empty image");
  std::vector<std::uint8_t> out = {0x89, 'P', 'N', 'G', '\r', '\n', 0x1a, '\n'};
  std::vector<std::uint8_t> ihdr;
  put_u32(ihdr, static_cast<std::uint32_t>(image.width));
  put_u32(ihdr, static_cast<std::uint32_t>(image.height));
  ihdr.insert(ihdr.end(), {8, 6, 0, 0, 0});  // 8-bit RGBA, no interlace
  put_chunk(out, "IHDR", ihdr);

  const std::size_t stride = image.width * 4;
  std::vector<std::uint8_t> raw;
  raw.reserve(image.height * (stride + 1));
  for (std::size_t y = 0; y < image.height; ++y) {
    raw.push_back(0);  // filter: none
    raw.insert(raw.end(), image.pixels.begin() + static_cast<std::ptrdiff_t>(y * stride),
               image.pixels.begin() + static_cast<std::ptrdiff_t>((y + 1) * stride));
  }
  put_chunk(out, "IDAT", zlib_stored(raw));
  put_chunk(out, "IEND", {});
  return out;
}

Image decode_png(std::span<const std::uint8_t> bytes) {
  png_image img{};
  img.version = PNG_IMAGE_VERSION;
  if (!png_image_begin_read_from_memory(&img, bytes.data(), bytes.size())) {
    throw ImageError(std::string("cannot decode PNG: ") + img.message);
  }
  img.format = PNG_FORMAT_RGBA;
  Image out;
  out.width = img.width;
  out.height = img.height;
  out.pixels.resize(PNG_IMAGE_SIZE(img));
  if (!png_image_finish_read(&img, nullptr, out.pixels.data(), 0, nullptr)) {
    const std::string msg = img.message;
    png_image_free(&img);
    throw ImageError("cannot decode PNG: " + msg);
  }
  return out;
}

Image read_png(const std::filesystem::path& path) {
  try {
    return decode_png(read_binary_file(path));
  } catch (const ImageError& e) {
    throw ImageError(path.string() + ": " + e.what());
  }
}

void write_png(const std::filesystem::path& path, const Image& image) {
  write_binary_file(path, encode_png(image));
}

Tensor image_to_tensor(const Image& image, std::size_t channels) {
  if (channels != 1 && channels != 3) {
    throw ImageError("images convert to 1 or 3 channels, not " + std::to_string(channels));
  }
  Tensor t({channels, image.height, image.width});
  for (std::size_t y = 0; y < image.height; ++y) {
    for (std::size_t x = 0; x < image.width; ++x) {
      const Rgba px = image.get(x, y);
      if (channels == 3) {
        for (std::size_t c = 0; c < 3; ++c) t.at(c, y, x) = px[c] / 255.0f;
      } else {
        t.at(0, y, x) = (px[0] + px[1] + px[2]) / (3.0f * 255.0f);
      }
    }
  }
  return t;
}

Image tensor_to_image(const Tensor& tensor) {
  if (tensor.rank() != 3 || (tensor.dim(0) != 1 && tensor.dim(0) != 3)) {
    throw ImageError("expected a [1|3, H, W] tensor, got " + shape_to_string(tensor.shape()));
  }
  Image img(tensor.dim(2), tensor.dim(1));
  for (std::size_t y = 0; y < img.height; ++y) {
    for (std::size_t x = 0; x < img.width; ++x) {
      Rgba px{0, 0, 0, 255};
      for (std::size_t c = 0; c < 3; ++c) {
        px[c] = to_byte(tensor.at(tensor.dim(0) == 3 ? c : 0, y, x));
      }
      img.set(x, y, px);
    }
  }
  return img;
}

}  // namespace cexplain
