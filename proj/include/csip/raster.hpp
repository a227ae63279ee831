/* Copyright 2026 The CSIP Authors. All Rights Reserved.

Licensed under the Apache License, Version 2.0 (the "License");
you may not use this file except in compliance with the License.
You may obtain a copy of the License at

    http://www.apache.org/licenses/LICENSE-2.0

Unless required by applicable law or agreed to in writing, software
distributed under the License is distributed on an "AS IS" BASIS,
WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
See the License for the specific language governing permissions and
limitations under the License.
==============================================================================*/

#ifndef CSIP_RASTER_HPP_
#define CSIP_RASTER_HPP_

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

namespace csip {

// Interleaved H x W x C raster.
template <typename T>
struct Raster {
  int height = 0;
  int width = 0;
  int channels = 0;
  std::vector<T> data;

  Raster() = default;
  Raster(int h, int w, int c, T fill = T{})
      : height(h), width(w), channels(c),
        data(static_cast<std::size_t>(h) * w * c, fill) {}

  T& at(int y, int x, int c = 0) {
    return data[(static_cast<std::size_t>(y) * width + x) * channels + c];
  }
  const T& at(int y, int x, int c = 0) const {
    return data[(static_cast<std::size_t>(y) * width + x) * channels + c];
  }
  bool SameGrid(int h, int w) const { return height == h && width == w; }

  friend bool operator==(const Raster&, const Raster&) = default;
};

using Image8 = Raster<std::uint8_t>;
using ImageF = Raster<float>;

// 8-bit grayscale or RGB PNG.
void WritePng(const std::filesystem::path& path, const Image8& image);
Image8 ReadPng(const std::filesystem::path& path);

// Baseline uncompressed little-endian TIFF, single strip.
void WriteTiffFloat(const std::filesystem::path& path, const ImageF& image);
void WriteTiff8(const std::filesystem::path& path, const Image8& image);

// Uncompressed TIFF of either byte order with 8-bit unsigned or 32-bit float
// samples, chunky layout. Returned as float regardless of storage type.
ImageF ReadTiff(const std::filesystem::path& path, int* bits_per_sample = nullptr);

// Dispatches on the extension (.png, .tif, .tiff).
Image8 ReadImage8(const std::filesystem::path& path);

std::string Sha256Hex(const void* data, std::size_t size);
std::string Sha256File(const std::filesystem::path& path);

std::vector<std::uint8_t> ReadFileBytes(const std::filesystem::path& path);

}  // namespace csip

#endif  // CSIP_RASTER_HPP_
