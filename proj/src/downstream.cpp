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

#include "csip/downstream.hpp"

#include <cmath>

#include "csip/error.hpp"
#include "csip/rng.hpp"

namespace csip {

namespace {

int Log2Exact(int v) {
  int l = 0;
  while ((1 << l) < v) ++l;
  if ((1 << l) != v) Fail(ErrorKind::kConfig, "stem stride must be a power of two");
  return l;
}

std::string StagePrefix(int j) { return "decoder/stage" + std::to_string(j + 1); }
std::string RefinePrefix(int i) { return "decoder/refine" + std::to_string(i + 1); }

nn::Var ConvRelu(nn::Graph& g, ParameterBinding& p, const std::string& prefix, nn::Var x) {
  nn::Var y = nn::Conv2d(g, x, p.Get(prefix + "/weight"), 1, 1);
  y = nn::AddChannelBias(g, y, p.Get(prefix + "/bias"));
  return nn::Relu(g, y);
}

}  // namespace

Architecture ParseArchitecture(const std::string& s) {
  if (s == "fc_siam_diff") return Architecture::kFcSiamDiff;
  if (s == "unet") return Architecture::kUnet;
  Fail(ErrorKind::kConfig, "architecture: unknown value '" + s + "'");
}

const char* ArchitectureName(Architecture a) {
  return a == Architecture::kFcSiamDiff ? "fc_siam_diff" : "unet";
}

Fusion ParseFusion(const std::string& s) {
  if (s == "abs_diff") return Fusion::kAbsDiff;
  if (s == "diff") return Fusion::kDiff;
  Fail(ErrorKind::kConfig, "fusion: unknown value '" + s + "'");
}

const char* FusionName(Fusion f) { return f == Fusion::kAbsDiff ? "abs_diff" : "diff"; }

std::vector<int> HeadSpec::ResolvedWidths(const EncoderConfig& encoder) const {
  return decoder_widths.empty() ? encoder.StageWidths() : decoder_widths;
}

void HeadSpec::Validate(const EncoderConfig& encoder) const {
  if (num_classes < 2) Fail(ErrorKind::kConfig, "num_classes: must be >= 2");
  if (!decoder_widths.empty() &&
      static_cast<int>(decoder_widths.size()) != encoder.plan.NumStages()) {
    Fail(ErrorKind::kConfig, "decoder_widths: " + std::to_string(decoder_widths.size()) +
                                 " stages for an encoder with " +
                                 std::to_string(encoder.plan.NumStages()) + " skip stages");
  }
  for (int w : decoder_widths) {
    if (w < 1) Fail(ErrorKind::kConfig, "decoder_widths: widths must be positive");
  }
  Log2Exact(encoder.plan.StemStride());
}

nlohmann::json HeadSpec::ToJson() const {
  return {{"architecture", ArchitectureName(architecture)},
          {"num_classes", num_classes},
          {"decoder_widths", decoder_widths},
          {"fusion", FusionName(fusion)}};
}

HeadSpec HeadSpec::FromJson(const nlohmann::json& j) {
  try {
    HeadSpec s;
    s.architecture = ParseArchitecture(j.at("architecture").get<std::string>());
    s.num_classes = j.at("num_classes").get<int>();
    s.decoder_widths = j.value("decoder_widths", std::vector<int>{});
    s.fusion = ParseFusion(j.value("fusion", std::string("abs_diff")));
    return s;
  } catch (const nlohmann::json::exception& e) {
    Fail(ErrorKind::kConfig, std::string("head spec: ") + e.what());
  }
}

std::map<std::string, Shape> HeadParameterShapes(const HeadSpec& spec,
                                                 const EncoderConfig& encoder) {
  spec.Validate(encoder);
  const std::vector<int> skip = encoder.StageWidths();
  const std::vector<int> widths = spec.ResolvedWidths(encoder);
  const int stages = static_cast<int>(widths.size());
  std::map<std::string, Shape> shapes;
  const auto conv = [&](const std::string& prefix, int out, int in, int k) {
    shapes[prefix + "/weight"] = {out, in, k, k};
    shapes[prefix + "/bias"] = {out};
  };
  for (int j = stages - 1; j >= 0; --j) {
    const int in = skip[static_cast<std::size_t>(j)] +
                   (j == stages - 1 ? 0 : widths[static_cast<std::size_t>(j + 1)]);
    const int out = widths[static_cast<std::size_t>(j)];
    conv(StagePrefix(j) + "/conv1", out, in, 3);
    conv(StagePrefix(j) + "/conv2", out, out, 3);
  }
  const int refine = Log2Exact(encoder.plan.StemStride());
  for (int i = 0; i < refine; ++i) conv(RefinePrefix(i), widths[0], widths[0], 3);
  conv("decoder/classifier", spec.num_classes, widths[0], 1);
  return shapes;
}

HeadBundle BuildHead(const HeadSpec& spec, const EncoderConfig& encoder, std::uint64_t seed) {
  HeadBundle head;
  head.spec = spec;
  for (const auto& [name, shape] : HeadParameterShapes(spec, encoder)) {
    Tensor t(shape, 0.0f);
    if (shape.size() == 4) {
      Rng rng(DeriveSeed(seed, HashName(name)));
      const double fan_in = static_cast<double>(shape[1]) * shape[2] * shape[3];
      const double std = std::sqrt(2.0 / fan_in);
      for (float& v : t.values()) v = static_cast<float>(rng.Normal() * std);
    }
    head.parameters.emplace(name, std::move(t));
  }
  return head;
}

namespace {

DownstreamModel BuildModel(const EncoderBundle& encoder, HeadSpec spec, Architecture arch,
                           std::uint64_t seed) {
  if (encoder.config.modality != Modality::kRgb) {
    Fail(ErrorKind::kModality, std::string("downstream models need an rgb encoder, got ") +
                                   ModalityName(encoder.config.modality));
  }
  spec.architecture = arch;
  DownstreamModel m;
  m.encoder = encoder;
  m.head = BuildHead(spec, encoder.config, seed);
  return m;
}

}  // namespace

DownstreamModel BuildChangeModel(const EncoderBundle& encoder, HeadSpec spec,
                                 std::uint64_t seed) {
  return BuildModel(encoder, std::move(spec), Architecture::kFcSiamDiff, seed);
}

DownstreamModel BuildSegmentationModel(const EncoderBundle& encoder, HeadSpec spec,
                                       std::uint64_t seed) {
  return BuildModel(encoder, std::move(spec), Architecture::kUnet, seed);
}

void CheckStrideMultiple(const EncoderConfig& encoder, const Tensor& input) {
  const int stride = encoder.plan.TotalStride();
  if (input.rank() != 4 || input.dim(2) % stride != 0 || input.dim(3) % stride != 0) {
    Fail(ErrorKind::kShape, "input " + ShapeString(input.shape()) +
                                " must have spatial size a multiple of " +
                                std::to_string(stride));
  }
}

std::vector<Tensor> FusedSkips(const DownstreamModel& model, const Tensor& pre,
                               const Tensor& post) {
  if (model.head.spec.architecture != Architecture::kFcSiamDiff) {
    Fail(ErrorKind::kContract, "fused skips are defined for the change model only");
  }
  if (pre.shape() != post.shape()) {
    Fail(ErrorKind::kShape, "pre " + ShapeString(pre.shape()) + " and post " +
                                ShapeString(post.shape()) + " differ");
  }
  CheckStrideMultiple(model.encoder.config, pre);
  const FeaturePyramid a = BackboneFeatures(model.encoder, pre);
  const FeaturePyramid b = BackboneFeatures(model.encoder, post);
  std::vector<Tensor> fused;
  for (std::size_t s = 0; s < a.stages.size(); ++s) {
    Tensor f(a.stages[s].shape());
    const Tensor& x = a.stages[s];
    const Tensor& y = b.stages[s];
    if (model.head.spec.fusion == Fusion::kAbsDiff) {
      for (std::int64_t i = 0; i < f.numel(); ++i) f[i] = std::fabs(x[i] - y[i]);
    } else {
      for (std::int64_t i = 0; i < f.numel(); ++i) f[i] = x[i] - y[i];
    }
    fused.push_back(std::move(f));
  }
  return fused;
}

std::vector<Tensor> EncoderSkips(const DownstreamModel& model, const Tensor& image) {
  CheckStrideMultiple(model.encoder.config, image);
  return BackboneFeatures(model.encoder, image).stages;
}

nn::Var ForwardDecoder(nn::Graph& g, const HeadSpec& spec, const EncoderConfig& encoder,
                       ParameterBinding& p, std::span<const nn::Var> skips) {
  const int stages = encoder.plan.NumStages();
  if (static_cast<int>(skips.size()) != stages) {
    Fail(ErrorKind::kShape, "decoder expects " + std::to_string(stages) + " skips, got " +
                                std::to_string(skips.size()));
  }
  nn::Var x = skips[static_cast<std::size_t>(stages - 1)];
  for (int j = stages - 1; j >= 0; --j) {
    if (j != stages - 1) {
      x = nn::UpsampleNearest(g, x, 2);
      x = nn::ConcatChannels(g, skips[static_cast<std::size_t>(j)], x);
    }
    x = ConvRelu(g, p, StagePrefix(j) + "/conv1", x);
    x = ConvRelu(g, p, StagePrefix(j) + "/conv2", x);
  }
  const int refine = Log2Exact(encoder.plan.StemStride());
  for (int i = 0; i < refine; ++i) {
    x = nn::UpsampleNearest(g, x, 2);
    x = ConvRelu(g, p, RefinePrefix(i), x);
  }
  nn::Var logits = nn::Conv2d(g, x, p.Get("decoder/classifier/weight"), 1, 0);
  (void)spec;
  return nn::AddChannelBias(g, logits, p.Get("decoder/classifier/bias"));
}

SegmentationOutput LogitsToOutput(const Tensor& logits) {
  SegmentationOutput out;
  out.logits = logits;
  const int n = logits.dim(0), k = logits.dim(1), h = logits.dim(2), w = logits.dim(3);
  for (int i = 0; i < n; ++i) {
    LabelMap mask(h, w, 1, 0);
    for (int y = 0; y < h; ++y) {
      for (int x = 0; x < w; ++x) {
        int best = 0;
        float best_v = logits.at(i, 0, y, x);
        for (int c = 1; c < k; ++c) {
          if (logits.at(i, c, y, x) > best_v) {
            best_v = logits.at(i, c, y, x);
            best = c;
          }
        }
        mask.at(y, x) = static_cast<std::uint8_t>(best);
      }
    }
    out.predicted_mask.push_back(std::move(mask));
  }
  return out;
}

SegmentationOutput PredictFromSkips(const DownstreamModel& model, std::span<const Tensor> skips) {
  nn::Graph g(false);
  ParameterBinding p(g, model.head.parameters);
  std::vector<nn::Var> vars;
  for (const Tensor& t : skips) vars.push_back(g.Borrow(&t));
  nn::Var logits = ForwardDecoder(g, model.head.spec, model.encoder.config, p, vars);
  const Tensor& l = g.value(logits);
  if (!l.AllFinite()) Fail(ErrorKind::kNumerical, "non-finite logits");
  return LogitsToOutput(l);
}

SegmentationOutput Predict(const DownstreamModel& model, const Tensor& pre, const Tensor* post) {
  if (model.head.spec.architecture == Architecture::kFcSiamDiff) {
    if (!post) Fail(ErrorKind::kContract, "change model needs a post image");
    return PredictFromSkips(model, FusedSkips(model, pre, *post));
  }
  return PredictFromSkips(model, EncoderSkips(model, pre));
}

}  // namespace csip
