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

#include "csip/plot.hpp"

#include <algorithm>
#include <array>
#include <cmath>

#include "csip/error.hpp"

namespace csip {

namespace {

constexpr std::array<std::array<std::uint8_t, 3>, 8> kPalette = {{
    {0, 0, 0},
    {230, 57, 70},
    {69, 123, 157},
    {244, 162, 97},
    {42, 157, 143},
    {131, 56, 236},
    {255, 214, 10},
    {160, 160, 160},
}};

void Put(Image8& img, int y, int x, const std::array<std::uint8_t, 3>& c) {
  if (y < 0 || x < 0 || y >= img.height || x >= img.width) return;
  for (int k = 0; k < 3; ++k) img.at(y, x, k) = c[static_cast<std::size_t>(k)];
}

void Line(Image8& img, int x0, int y0, int x1, int y1, const std::array<std::uint8_t, 3>& c) {
  const int dx = std::abs(x1 - x0), dy = -std::abs(y1 - y0);
  const int sx = x0 < x1 ? 1 : -1, sy = y0 < y1 ? 1 : -1;
  int err = dx + dy;
  while (true) {
    Put(img, y0, x0, c);
    Put(img, y0 + 1, x0, c);
    if (x0 == x1 && y0 == y1) break;
    const int e2 = 2 * err;
    if (e2 >= dy) {
      err += dy;
      x0 += sx;
    }
    if (e2 <= dx) {
      err += dx;
      y0 += sy;
    }
  }
}

}  // namespace

std::array<std::uint8_t, 3> ClassColor(int label) {
  if (label < 0) label = 0;
  if (label < static_cast<int>(kPalette.size())) return kPalette[static_cast<std::size_t>(label)];
  // Deterministic fallback for large label sets.
  const auto h = static_cast<std::uint32_t>(label) * 2654435761u;
  return {static_cast<std::uint8_t>(h >> 24), static_cast<std::uint8_t>(h >> 16),
          static_cast<std::uint8_t>(h >> 8)};
}

Image8 ColorizeMask(const LabelMap& mask) {
  Image8 out(mask.height, mask.width, 3);
  for (int y = 0; y < mask.height; ++y) {
    for (int x = 0; x < mask.width; ++x) Put(out, y, x, ClassColor(mask.at(y, x)));
  }
  return out;
}

Image8 ToRgb8(const ImageF& image) {
  if (image.channels != 1 && image.channels != 3) {
    Fail(ErrorKind::kShape, "cannot render a " + std::to_string(image.channels) + "-channel image");
  }
  Image8 out(image.height, image.width, 3);
  for (int y = 0; y < image.height; ++y) {
    for (int x = 0; x < image.width; ++x) {
      for (int k = 0; k < 3; ++k) {
        const float v = image.at(y, x, image.channels == 1 ? 0 : k);
        out.at(y, x, k) = static_cast<std::uint8_t>(std::lround(std::clamp(v, 0.0f, 1.0f) * 255.0f));
      }
    }
  }
  return out;
}

Image8 ComposePanel(const std::vector<Image8>& tiles, int scale, int gutter) {
  if (tiles.empty()) Fail(ErrorKind::kContract, "panel needs at least one tile");
  const int h = tiles[0].height;
  int width = gutter;
  for (const auto& t : tiles) {
    if (t.height != h || t.channels != 3) {
      Fail(ErrorKind::kShape, "panel tiles must be RGB and equally tall");
    }
    width += t.width * scale + gutter;
  }
  Image8 out(h * scale + 2 * gutter, width, 3, 255);
  int x0 = gutter;
  for (const auto& t : tiles) {
    for (int y = 0; y < h * scale; ++y) {
      for (int x = 0; x < t.width * scale; ++x) {
        for (int k = 0; k < 3; ++k) out.at(gutter + y, x0 + x, k) = t.at(y / scale, x / scale, k);
      }
    }
    x0 += t.width * scale + gutter;
  }
  return out;
}

Image8 RenderCurves(const std::vector<std::vector<double>>& series, int width, int height) {
  std::size_t longest = 0;
  for (const auto& s : series) longest = std::max(longest, s.size());
  if (longest == 0) Fail(ErrorKind::kData, "no curve data to plot (empty run log)");
  Image8 img(height, width, 3, 255);
  const int margin = 12;
  const std::array<std::uint8_t, 3> grid = {225, 225, 225};
  for (int i = 0; i <= 4; ++i) {
    const int y = margin + (height - 2 * margin) * i / 4;
    Line(img, margin, y, width - margin, y, grid);
  }
  for (std::size_t si = 0; si < series.size(); ++si) {
    const auto& s = series[si];
    if (s.empty()) continue;
    double lo = *std::min_element(s.begin(), s.end());
    double hi = *std::max_element(s.begin(), s.end());
    if (hi - lo < 1e-12) {
      lo -= 0.5;
      hi += 0.5;
    }
    const auto color = ClassColor(static_cast<int>(si) + 1);
    const auto px = [&](std::size_t i) {
      return margin + static_cast<int>(std::lround(
                          (width - 2 * margin) * (longest == 1 ? 0.5 : static_cast<double>(i) /
                                                                          (longest - 1))));
    };
    const auto py = [&](double v) {
      return height - margin -
             static_cast<int>(std::lround((height - 2 * margin) * (v - lo) / (hi - lo)));
    };
    for (std::size_t i = 0; i < s.size(); ++i) {
      if (i == 0) {
        Put(img, py(s[0]), px(0), color);
      } else {
        Line(img, px(i - 1), py(s[i - 1]), px(i), py(s[i]), color);
      }
    }
  }
  return img;
}

Image8 RenderRunCurves(const std::vector<nlohmann::json>& epochs) {
  if (epochs.empty()) Fail(ErrorKind::kData, "run log is empty; nothing to plot");
  std::vector<double> train, val, score;
  for (const auto& e : epochs) {
    train.push_back(e.at("train_loss").get<double>());
    val.push_back(e.at("val_loss").get<double>());
    if (e.contains("val_top1")) {
      score.push_back(e["val_top1"].get<double>());
    } else if (e.contains("val_miou")) {
      score.push_back(e["val_miou"].get<double>());
    }
  }
  const Image8 top = RenderCurves({train, val});
  const Image8 bottom = RenderCurves({{}, {}, score});
  Image8 out(top.height + bottom.height, top.width, 3);
  std::copy(top.data.begin(), top.data.end(), out.data.begin());
  std::copy(bottom.data.begin(), bottom.data.end(),
            out.data.begin() + static_cast<std::ptrdiff_t>(top.data.size()));
  return out;
}

}  // namespace csip
