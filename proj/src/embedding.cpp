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

#include "csip/embedding.hpp"

#include <cmath>

#include "csip/error.hpp"
#include "csip/rng.hpp"

namespace csip {

namespace {

std::string StageName(int stage) { return "stage" + std::to_string(stage + 1); }

std::string BlockPrefix(int stage, int block) {
  return StageName(stage) + "/block" + std::to_string(block);
}

struct ShapeCollector {
  std::map<std::string, Shape> shapes;

  void Conv(const std::string& prefix, int out, int in, int k) {
    shapes[prefix + "/weight"] = {out, in, k, k};
  }
  void Bn(const std::string& prefix, int c) {
    for (const char* p : {"/gamma", "/beta", "/running_mean", "/running_var"}) {
      shapes[prefix + p] = {c};
    }
  }
};

nn::Var ConvBn(nn::Graph& g, ParameterBinding& params, const std::string& conv,
               const std::string& bn, nn::Var x, int stride, int pad,
               bool training) {
  nn::Var y = nn::Conv2d(g, x, params.Get(conv + "/weight"), stride, pad);
  nn::BatchNormState state;
  state.running_mean = params.RunningStat(bn + "/running_mean");
  state.running_var = params.RunningStat(bn + "/running_var");
  return nn::BatchNorm2d(g, y, params.Get(bn + "/gamma"), params.Get(bn + "/beta"),
                         state, training);
}

}  // namespace

const char* ModalityName(Modality m) { return m == Modality::kRgb ? "rgb" : "agl"; }

Modality ParseModality(const std::string& s) {
  if (s == "rgb") return Modality::kRgb;
  if (s == "agl") return Modality::kAgl;
  Fail(ErrorKind::kConfig, "modality: unknown value '" + s + "'");
}

int ModalityChannels(Modality m) { return m == Modality::kRgb ? 3 : 1; }

BackbonePlan BackbonePlan::ResNet18() { return BackbonePlan{}; }

BackbonePlan BackbonePlan::ResNet10() {
  BackbonePlan p;
  p.name = "resnet10";
  p.blocks_per_stage = {1, 1, 1, 1};
  return p;
}

BackbonePlan BackbonePlan::ByName(const std::string& name) {
  if (name == "resnet18") return ResNet18();
  if (name == "resnet10") return ResNet10();
  Fail(ErrorKind::kConfig, "backbone_plan: unknown plan '" + name + "'");
}

int BackbonePlan::TotalStride() const {
  int s = StemStride();
  for (int i = 1; i < NumStages(); ++i) s *= 2;
  return s;
}

EncoderConfig EncoderConfig::Make(Modality modality, double width_multiplier,
                                  const BackbonePlan& plan) {
  EncoderConfig c;
  c.modality = modality;
  c.in_channels = ModalityChannels(modality);
  c.plan = plan;
  c.width_multiplier = width_multiplier;
  c.feature_dim = c.ScaledWidth(plan.stage_widths.back());
  return c;
}

int EncoderConfig::ScaledWidth(int base) const {
  return std::max(1, static_cast<int>(std::lround(base * width_multiplier)));
}

std::vector<int> EncoderConfig::StageWidths() const {
  std::vector<int> w;
  for (int b : plan.stage_widths) w.push_back(ScaledWidth(b));
  return w;
}

void EncoderConfig::Validate() const {
  if (in_channels != ModalityChannels(modality)) {
    Fail(ErrorKind::kConfig, "in_channels: " + std::to_string(in_channels) +
                                 " does not match modality " + ModalityName(modality) +
                                 " (expects " +
                                 std::to_string(ModalityChannels(modality)) + ")");
  }
  if (!(width_multiplier > 0.0) || !std::isfinite(width_multiplier)) {
    Fail(ErrorKind::kConfig, "width_multiplier: must be positive");
  }
  if (plan.stage_widths.empty() ||
      plan.stage_widths.size() != plan.blocks_per_stage.size()) {
    Fail(ErrorKind::kConfig, "backbone_plan: stage widths and depths disagree");
  }
  for (int b : plan.blocks_per_stage) {
    if (b < 1) Fail(ErrorKind::kConfig, "backbone_plan: stage depth must be >= 1");
  }
  if (feature_dim != ScaledWidth(plan.stage_widths.back())) {
    Fail(ErrorKind::kConfig,
         "feature_dim: " + std::to_string(feature_dim) +
             " does not match the final stage width " +
             std::to_string(ScaledWidth(plan.stage_widths.back())));
  }
  if (projection_hidden_dim < 1) {
    Fail(ErrorKind::kConfig, "projection_hidden_dim: must be positive");
  }
  if (projection_dim < 2) Fail(ErrorKind::kConfig, "projection_dim: must be >= 2");
}

nlohmann::json EncoderConfig::ToJson() const {
  return {
      {"modality", ModalityName(modality)},
      {"in_channels", in_channels},
      {"backbone_plan",
       {{"name", plan.name},
        {"stem_width", plan.stem_width},
        {"stem_kernel", plan.stem_kernel},
        {"stem_stride", plan.stem_stride},
        {"stem_pool", plan.stem_pool},
        {"stage_widths", plan.stage_widths},
        {"blocks_per_stage", plan.blocks_per_stage}}},
      {"feature_dim", feature_dim},
      {"projection_hidden_dim", projection_hidden_dim},
      {"projection_dim", projection_dim},
      {"width_multiplier", width_multiplier},
  };
}

EncoderConfig EncoderConfig::FromJson(const nlohmann::json& j) {
  try {
    EncoderConfig c;
    c.modality = ParseModality(j.at("modality").get<std::string>());
    c.in_channels = j.at("in_channels").get<int>();
    const auto& p = j.at("backbone_plan");
    c.plan.name = p.at("name").get<std::string>();
    c.plan.stem_width = p.at("stem_width").get<int>();
    c.plan.stem_kernel = p.at("stem_kernel").get<int>();
    c.plan.stem_stride = p.at("stem_stride").get<int>();
    c.plan.stem_pool = p.at("stem_pool").get<bool>();
    c.plan.stage_widths = p.at("stage_widths").get<std::vector<int>>();
    c.plan.blocks_per_stage = p.at("blocks_per_stage").get<std::vector<int>>();
    c.feature_dim = j.at("feature_dim").get<int>();
    c.projection_hidden_dim = j.at("projection_hidden_dim").get<int>();
    c.projection_dim = j.at("projection_dim").get<int>();
    c.width_multiplier = j.at("width_multiplier").get<double>();
    c.Validate();
    return c;
  } catch (const nlohmann::json::exception& e) {
    Fail(ErrorKind::kConfig, std::string("encoder config: ") + e.what());
  }
}

bool operator==(const EncoderConfig& a, const EncoderConfig& b) {
  return a.ToJson() == b.ToJson();
}

std::map<std::string, Shape> EncoderParameterShapes(const EncoderConfig& config) {
  config.Validate();
  ShapeCollector s;
  const int stem = config.StemWidth();
  s.Conv("stem/conv", stem, config.in_channels, config.plan.stem_kernel);
  s.Bn("stem/bn", stem);
  int in = stem;
  const std::vector<int> widths = config.StageWidths();
  for (int st = 0; st < config.plan.NumStages(); ++st) {
    const int out = widths[static_cast<std::size_t>(st)];
    for (int b = 0; b < config.plan.blocks_per_stage[static_cast<std::size_t>(st)]; ++b) {
      const std::string pre = BlockPrefix(st, b);
      const int stride = (st > 0 && b == 0) ? 2 : 1;
      s.Conv(pre + "/conv1", out, in, 3);
      s.Bn(pre + "/bn1", out);
      s.Conv(pre + "/conv2", out, out, 3);
      s.Bn(pre + "/bn2", out);
      if (stride != 1 || in != out) {
        s.Conv(pre + "/downsample/conv", out, in, 1);
        s.Bn(pre + "/downsample/bn", out);
      }
      in = out;
    }
  }
  s.shapes["projection/fc1/weight"] = {config.projection_hidden_dim, config.feature_dim};
  s.shapes["projection/fc1/bias"] = {config.projection_hidden_dim};
  s.shapes["projection/fc2/weight"] = {config.projection_dim, config.projection_hidden_dim};
  s.shapes["projection/fc2/bias"] = {config.projection_dim};
  return s.shapes;
}

bool IsRunningStatistic(const std::string& name) {
  const auto ends_with = [&](const char* suffix) {
    const std::string s(suffix);
    return name.size() >= s.size() && name.compare(name.size() - s.size(), s.size(), s) == 0;
  };
  return ends_with("/running_mean") || ends_with("/running_var");
}

EncoderBundle BuildEncoder(const EncoderConfig& config, std::uint64_t seed) {
  EncoderBundle bundle;
  bundle.config = config;
  const std::map<std::string, Shape> shapes = EncoderParameterShapes(config);
  for (const auto& [name, shape] : shapes) {
    Tensor t(shape);
    const auto ends_with = [&](const char* suffix) {
      const std::string s(suffix);
      return name.size() >= s.size() &&
             name.compare(name.size() - s.size(), s.size(), s) == 0;
    };
    Rng rng(DeriveSeed(seed, HashName(name)));
    if (ends_with("/gamma") || ends_with("/running_var")) {
      t.Fill(1.0f);
    } else if (ends_with("/beta") || ends_with("/running_mean")) {
      t.Fill(0.0f);
    } else if (shape.size() == 4) {
      const double fan_in = static_cast<double>(shape[1]) * shape[2] * shape[3];
      const double std = std::sqrt(2.0 / fan_in);
      for (float& v : t.values()) v = static_cast<float>(rng.Normal() * std);
    } else {
      // Linear weights and biases: U(-1/sqrt(fan_in), 1/sqrt(fan_in)).
      const std::string weight = name.substr(0, name.rfind('/')) + "/weight";
      const double fan_in = static_cast<double>(shapes.at(weight)[1]);
      const double bound = 1.0 / std::sqrt(fan_in);
      for (float& v : t.values()) v = static_cast<float>(rng.Uniform(-bound, bound));
    }
    bundle.parameters.emplace(name, std::move(t));
  }
  return bundle;
}

void ValidatePatches(const EncoderConfig& config, const Tensor& patches) {
  if (patches.rank() != 4) {
    Fail(ErrorKind::kShape, "patches must be NCHW, got " + ShapeString(patches.shape()));
  }
  if (patches.dim(0) < 1) Fail(ErrorKind::kShape, "empty patch batch");
  if (patches.dim(1) != config.in_channels) {
    Fail(ErrorKind::kShape, "patches have " + std::to_string(patches.dim(1)) +
                                " channels, encoder expects " +
                                std::to_string(config.in_channels));
  }
  if (patches.dim(2) < 32 || patches.dim(3) < 32) {
    Fail(ErrorKind::kShape, "patch spatial size " + std::to_string(patches.dim(2)) + "x" +
                                std::to_string(patches.dim(3)) + " below 32x32");
  }
  if (!patches.AllFinite()) Fail(ErrorKind::kData, "patches contain non-finite values");
}

ParameterBinding::ParameterBinding(nn::Graph& graph, ParameterMap& params, bool trainable)
    : graph_(graph), mutable_params_(&params), params_(&params), trainable_(trainable) {}

ParameterBinding::ParameterBinding(nn::Graph& graph, const ParameterMap& params)
    : graph_(graph), params_(&params), trainable_(false) {}

const Tensor& ParameterBinding::Lookup(const std::string& name) const {
  auto it = params_->find(name);
  if (it == params_->end()) Fail(ErrorKind::kShape, "missing parameter '" + name + "'");
  return it->second;
}

nn::Var ParameterBinding::Get(const std::string& name) {
  auto it = vars_.find(name);
  if (it != vars_.end()) return it->second;
  const Tensor& t = Lookup(name);
  nn::Var v = trainable_ ? graph_.Parameter(&t) : graph_.Borrow(&t);
  vars_.emplace(name, v);
  return v;
}

Tensor* ParameterBinding::RunningStat(const std::string& name) {
  // Inference never writes running statistics, so a const map is fine there.
  return const_cast<Tensor*>(&Lookup(name));
}

std::map<std::string, Tensor> ParameterBinding::Gradients() const {
  std::map<std::string, Tensor> grads;
  for (const auto& [name, v] : vars_) {
    if (!trainable_) continue;
    grads.emplace(name, graph_.has_grad(v) ? graph_.grad(v)
                                           : Tensor(graph_.value(v).shape(), 0.0f));
  }
  return grads;
}

EncoderTrace ForwardEncoder(nn::Graph& g, const EncoderConfig& config,
                            ParameterBinding& params, nn::Var input, bool training,
                            bool with_projection) {
  if (training && !params.trainable()) {
    Fail(ErrorKind::kContract, "training-mode forward requires a mutable binding");
  }
  EncoderTrace trace;
  const BackbonePlan& plan = config.plan;
  nn::Var x = ConvBn(g, params, "stem/conv", "stem/bn", input, plan.stem_stride,
                     plan.stem_kernel / 2, training);
  x = nn::Relu(g, x);
  if (plan.stem_pool) x = nn::MaxPool2d(g, x, 3, 2, 1);
  int in = config.StemWidth();
  const std::vector<int> widths = config.StageWidths();
  for (int st = 0; st < plan.NumStages(); ++st) {
    const int out = widths[static_cast<std::size_t>(st)];
    for (int b = 0; b < plan.blocks_per_stage[static_cast<std::size_t>(st)]; ++b) {
      const std::string pre = BlockPrefix(st, b);
      const int stride = (st > 0 && b == 0) ? 2 : 1;
      nn::Var y = ConvBn(g, params, pre + "/conv1", pre + "/bn1", x, stride, 1, training);
      y = nn::Relu(g, y);
      y = ConvBn(g, params, pre + "/conv2", pre + "/bn2", y, 1, 1, training);
      nn::Var shortcut = x;
      if (stride != 1 || in != out) {
        shortcut = ConvBn(g, params, pre + "/downsample/conv", pre + "/downsample/bn", x,
                          stride, 0, training);
      }
      x = nn::Relu(g, nn::Add(g, y, shortcut));
      in = out;
    }
    trace.stages.push_back(x);
  }
  trace.pooled = nn::GlobalAvgPool(g, x);
  if (with_projection) {
    nn::Var h = nn::Linear(g, trace.pooled, params.Get("projection/fc1/weight"),
                           params.Get("projection/fc1/bias"));
    h = nn::Relu(g, h);
    trace.projected = nn::Linear(g, h, params.Get("projection/fc2/weight"),
                                 params.Get("projection/fc2/bias"));
    trace.embedding = nn::L2NormalizeRows(g, trace.projected);
  }
  return trace;
}

EmbeddingBatch Encode(const EncoderBundle& bundle, const Tensor& patches,
                      std::vector<std::string> sample_ids) {
  ValidatePatches(bundle.config, patches);
  if (sample_ids.empty()) {
    for (int i = 0; i < patches.dim(0); ++i) sample_ids.push_back(std::to_string(i));
  }
  if (static_cast<int>(sample_ids.size()) != patches.dim(0)) {
    Fail(ErrorKind::kShape, "sample id count does not match batch size");
  }
  nn::Graph g(false);
  ParameterBinding params(g, bundle.parameters);
  EncoderTrace trace = ForwardEncoder(g, bundle.config, params, g.Borrow(&patches), false);
  const Tensor& z = g.value(trace.embedding);
  EmbeddingBatch out;
  out.modality = bundle.config.modality;
  out.vectors.resize(z.dim(0), z.dim(1));
  for (int i = 0; i < z.dim(0); ++i) {
    for (int j = 0; j < z.dim(1); ++j) out.vectors(i, j) = z[i * z.dim(1) + j];
  }
  out.sample_ids = std::move(sample_ids);
  return out;
}

FeaturePyramid BackboneFeatures(const EncoderBundle& bundle, const Tensor& patches) {
  ValidatePatches(bundle.config, patches);
  nn::Graph g(false);
  ParameterBinding params(g, bundle.parameters);
  EncoderTrace trace =
      ForwardEncoder(g, bundle.config, params, g.Borrow(&patches), false, false);
  FeaturePyramid pyr;
  for (nn::Var v : trace.stages) pyr.stages.push_back(g.value(v));
  pyr.pooled = g.value(trace.pooled);
  return pyr;
}

}  // namespace csip
