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

#ifndef CSIP_DOWNSTREAM_HPP_
#define CSIP_DOWNSTREAM_HPP_

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "csip/data.hpp"
#include "csip/embedding.hpp"
#include "csip/graph.hpp"
#include "json.hpp"

namespace csip {

enum class Architecture { kFcSiamDiff, kUnet };
enum class Fusion { kAbsDiff, kDiff };

Architecture ParseArchitecture(const std::string& s);
const char* ArchitectureName(Architecture a);
Fusion ParseFusion(const std::string& s);
const char* FusionName(Fusion f);

struct HeadSpec {
  Architecture architecture = Architecture::kFcSiamDiff;
  int num_classes = 2;
  // One width per encoder stage, finest first. Empty mirrors the encoder.
  std::vector<int> decoder_widths;
  Fusion fusion = Fusion::kAbsDiff;

  // Widths resolved against an encoder.
  std::vector<int> ResolvedWidths(const EncoderConfig& encoder) const;
  void Validate(const EncoderConfig& encoder) const;

  nlohmann::json ToJson() const;
  static HeadSpec FromJson(const nlohmann::json& j);
};

struct HeadBundle {
  HeadSpec spec;
  ParameterMap parameters;
};

// Encoder plus decoder head. The encoder is shared by both branches of the
// change model (one parameter set).
struct DownstreamModel {
  EncoderBundle encoder;
  HeadBundle head;
};

std::map<std::string, Shape> HeadParameterShapes(const HeadSpec& spec,
                                                 const EncoderConfig& encoder);
HeadBundle BuildHead(const HeadSpec& spec, const EncoderConfig& encoder, std::uint64_t seed);

DownstreamModel BuildChangeModel(const EncoderBundle& encoder, HeadSpec spec,
                                 std::uint64_t seed = 0);
DownstreamModel BuildSegmentationModel(const EncoderBundle& encoder, HeadSpec spec,
                                       std::uint64_t seed = 0);

// Requires both spatial dims to be multiples of the encoder's total stride.
void CheckStrideMultiple(const EncoderConfig& encoder, const Tensor& input);

// Skip tensors fed to the decoder, finest first. For the change model these
// are the fused (differenced) encoder features of pre and post.
std::vector<Tensor> FusedSkips(const DownstreamModel& model, const Tensor& pre,
                               const Tensor& post);
std::vector<Tensor> EncoderSkips(const DownstreamModel& model, const Tensor& image);

// Decoder from skip tensors to full-resolution logits {N, K, H, W}.
nn::Var ForwardDecoder(nn::Graph& graph, const HeadSpec& spec, const EncoderConfig& encoder,
                       ParameterBinding& params, std::span<const nn::Var> skips);

struct SegmentationOutput {
  Tensor logits;                        // {N, K, H, W}
  std::vector<LabelMap> predicted_mask; // argmax, ties to the lowest class
};

SegmentationOutput LogitsToOutput(const Tensor& logits);

// Change model: `post` required. Segmentation model: `post` ignored.
SegmentationOutput Predict(const DownstreamModel& model, const Tensor& pre,
                           const Tensor* post = nullptr);
SegmentationOutput PredictFromSkips(const DownstreamModel& model,
                                    std::span<const Tensor> skips);

}  // namespace csip

#endif  // CSIP_DOWNSTREAM_HPP_
