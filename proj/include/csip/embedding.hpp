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

#ifndef CSIP_EMBEDDING_HPP_
#define CSIP_EMBEDDING_HPP_

#include <Eigen/Core>
#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "csip/graph.hpp"
#include "csip/tensor.hpp"
#include "json.hpp"

namespace csip {

enum class Modality { kRgb, kAgl };

const char* ModalityName(Modality m);
Modality ParseModality(const std::string& s);
int ModalityChannels(Modality m);

// Residual layer plan. Stage widths are given at width multiplier 1.
struct BackbonePlan {
  std::string name = "resnet18";
  int stem_width = 64;
  int stem_kernel = 7;
  int stem_stride = 2;
  bool stem_pool = true;
  std::vector<int> stage_widths = {64, 128, 256, 512};
  std::vector<int> blocks_per_stage = {2, 2, 2, 2};

  static BackbonePlan ResNet18();
  // One block per stage; for fast tests.
  static BackbonePlan ResNet10();
  static BackbonePlan ByName(const std::string& name);

  // Spatial reduction of the stem (convolution stride times pooling).
  int StemStride() const { return stem_stride * (stem_pool ? 2 : 1); }
  int TotalStride() const;
  int NumStages() const { return static_cast<int>(stage_widths.size()); }
};

struct EncoderConfig {
  Modality modality = Modality::kRgb;
  int in_channels = 3;
  BackbonePlan plan;
  int feature_dim = 512;
  int projection_hidden_dim = 512;
  int projection_dim = 128;
  double width_multiplier = 1.0;

  // Config with feature_dim derived from the plan and width.
  static EncoderConfig Make(Modality modality, double width_multiplier = 1.0,
                            const BackbonePlan& plan = BackbonePlan::ResNet18());

  int ScaledWidth(int base) const;
  int StemWidth() const { return ScaledWidth(plan.stem_width); }
  std::vector<int> StageWidths() const;

  // Throws a configuration error naming the offending field.
  void Validate() const;

  nlohmann::json ToJson() const;
  static EncoderConfig FromJson(const nlohmann::json& j);

  friend bool operator==(const EncoderConfig&, const EncoderConfig&);
};

struct EncoderBundle {
  EncoderConfig config;
  ParameterMap parameters;
  bool frozen = false;
};

struct EmbeddingBatch {
  Modality modality = Modality::kRgb;
  Eigen::MatrixXd vectors;  // N x D, unit rows
  std::vector<std::string> sample_ids;

  int size() const { return static_cast<int>(vectors.rows()); }
  int dim() const { return static_cast<int>(vectors.cols()); }
};

struct FeaturePyramid {
  std::vector<Tensor> stages;  // NCHW per stage, finest first
  Tensor pooled;               // {N, feature_dim}
};

// Deterministic given (config, seed); returns an unfrozen bundle.
EncoderBundle BuildEncoder(const EncoderConfig& config, std::uint64_t seed);

// Parameter shapes implied by a config, keyed by parameter name.
std::map<std::string, Shape> EncoderParameterShapes(const EncoderConfig& config);

// Whether a parameter is a normalization running statistic (never trained).
bool IsRunningStatistic(const std::string& name);

// Checks channel count, spatial size and finiteness of an NCHW batch.
void ValidatePatches(const EncoderConfig& config, const Tensor& patches);

// Pure inference. Normalization layers use running statistics.
EmbeddingBatch Encode(const EncoderBundle& bundle, const Tensor& patches,
                      std::vector<std::string> sample_ids = {});
FeaturePyramid BackboneFeatures(const EncoderBundle& bundle, const Tensor& patches);

// Binds named parameters of a map onto a graph, lazily. Trainable bindings
// produce gradient-carrying variables and expose running statistics for
// in-place update.
class ParameterBinding {
 public:
  ParameterBinding(nn::Graph& graph, ParameterMap& params, bool trainable);
  ParameterBinding(nn::Graph& graph, const ParameterMap& params);

  nn::Var Get(const std::string& name);
  Tensor* RunningStat(const std::string& name);
  bool trainable() const { return trainable_; }

  // Gradients of every bound trainable parameter after Backward.
  std::map<std::string, Tensor> Gradients() const;

 private:
  const Tensor& Lookup(const std::string& name) const;

  nn::Graph& graph_;
  ParameterMap* mutable_params_ = nullptr;
  const ParameterMap* params_;
  bool trainable_;
  std::map<std::string, nn::Var> vars_;
};

struct EncoderTrace {
  std::vector<nn::Var> stages;
  nn::Var pooled;
  nn::Var projected;
  nn::Var embedding;  // L2-normalized projection
};

// Records a forward pass. `training` selects batch statistics and updates
// running statistics through the binding.
EncoderTrace ForwardEncoder(nn::Graph& graph, const EncoderConfig& config,
                            ParameterBinding& params, nn::Var input, bool training,
                            bool with_projection = true);

}  // namespace csip

#endif  // CSIP_EMBEDDING_HPP_
