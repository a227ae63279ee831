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

#ifndef CSIP_PLOT_HPP_
#define CSIP_PLOT_HPP_

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include "csip/data.hpp"
#include "json.hpp"

namespace csip {

// Fixed palette indexed by class; index 0 is black.
std::array<std::uint8_t, 3> ClassColor(int label);

Image8 ColorizeMask(const LabelMap& mask);
// [0, 1] float raster (1 or 3 channels) to 8-bit RGB.
Image8 ToRgb8(const ImageF& image);

// Tiles equally tall RGB images left to right with a white gutter,
// upscaled by `scale` (nearest neighbour).
Image8 ComposePanel(const std::vector<Image8>& tiles, int scale = 2, int gutter = 4);

// One curve per entry of `series`, each normalised to its own range, drawn
// in palette order on a white canvas with a light grid. Refuses empty input.
Image8 RenderCurves(const std::vector<std::vector<double>>& series, int width = 480,
                    int height = 240);

// Curves of a log.jsonl: losses on top, validation score below.
Image8 RenderRunCurves(const std::vector<nlohmann::json>& epochs);

}  // namespace csip

#endif  // CSIP_PLOT_HPP_
