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

#include <cmath>

#include <gtest/gtest.h>

#include "csip/downstream.hpp"
#include "csip/error.hpp"
#include "csip/rng.hpp"

namespace csip {
namespace {

EncoderBundle SmallEncoder(Modality m = Modality::kRgb, std::uint64_t seed = 1) {
  EncoderBundle e = BuildEncoder(EncoderConfig::Make(m, 0.125, BackbonePlan::ResNet10()), seed);
  // Non-trivial running statistics so eval-mode features are not a plain
  // affine copy of the initialisation.
  Rng rng(seed + 100);
  for (auto& [name, t] : e.parameters) {
    if (name.ends_with("running_mean")) {
      for (float& v : t.values()) v = static_cast<float>(0.1 * rng.Normal());
    } else if (name.ends_with("running_var")) {
      for (float& v : t.values()) v = static_cast<float>(0.5 + rng.Uniform());
    }
  }
  e.frozen = true;
  return e;
}

Tensor RandomImages(Rng& rng, int n, int c, int size) {
  Tensor t({n, c, size, size});
  for (float& v : t.values()) v = static_cast<float>(rng.Uniform());
  return t;
}

HeadSpec Binary() {
  HeadSpec h;
  h.num_classes = 2;
  return h;
}

TEST(ChangeModel, EqualInputsGiveZeroFusedSkips) {
  const DownstreamModel m = BuildChangeModel(SmallEncoder(), Binary(), 3);
  Rng rng(1);
  const Tensor x = RandomImages(rng, 2, 3, 64);
  for (const Tensor& s : FusedSkips(m, x, x)) {
    for (float v : s.values()) ASSERT_EQ(v, 0.0f);
  }
}

TEST(ChangeModel, SwapSymmetryIsExact) {
  const DownstreamModel m = BuildChangeModel(SmallEncoder(), Binary(), 3);
  Rng rng(2);
  const Tensor a = RandomImages(rng, 2, 3, 64);
  const Tensor b = RandomImages(rng, 2, 3, 64);
  const SegmentationOutput ab = Predict(m, a, &b);
  const SegmentationOutput ba = Predict(m, b, &a);
  EXPECT_EQ(ab.logits, ba.logits);
  EXPECT_EQ(ab.predicted_mask, ba.predicted_mask);
}

TEST(ChangeModel, SignedFusionIsNotSymmetric) {
  HeadSpec h = Binary();
  h.fusion = Fusion::kDiff;
  const DownstreamModel m = BuildChangeModel(SmallEncoder(), h, 3);
  Rng rng(2);
  const Tensor a = RandomImages(rng, 1, 3, 64);
  const Tensor b = RandomImages(rng, 1, 3, 64);
  EXPECT_FALSE(Predict(m, a, &b).logits == Predict(m, b, &a).logits);
}

TEST(ChangeModel, SharedEncoderWeights) {
  DownstreamModel m = BuildChangeModel(SmallEncoder(), Binary(), 3);
  Rng rng(3);
  const Tensor a = RandomImages(rng, 1, 3, 64);
  const Tensor b = RandomImages(rng, 1, 3, 64);
  const auto before_a = BackboneFeatures(m.encoder, a).stages[0];
  const auto before_b = BackboneFeatures(m.encoder, b).stages[0];
  m.encoder.parameters.at("stem/conv/weight")[0] += 0.5f;
  const auto after_a = BackboneFeatures(m.encoder, a).stages[0];
  const auto after_b = BackboneFeatures(m.encoder, b).stages[0];
  EXPECT_FALSE(before_a == after_a);
  EXPECT_FALSE(before_b == after_b);
  // A single parameter set: there is no second copy to diverge from.
  EXPECT_EQ(m.encoder.parameters.count("stem/conv/weight"), 1u);
}

TEST(ChangeModel, DeterministicLogits) {
  const DownstreamModel m = BuildChangeModel(SmallEncoder(), Binary(), 3);
  Rng rng(4);
  const Tensor a = RandomImages(rng, 1, 3, 64);
  const Tensor b = RandomImages(rng, 1, 3, 64);
  EXPECT_EQ(Predict(m, a, &b).logits, Predict(m, a, &b).logits);
}

TEST(ChangeModel, OutputShape) {
  HeadSpec h;
  h.num_classes = 4;
  const DownstreamModel m = BuildChangeModel(SmallEncoder(), h, 3);
  Rng rng(5);
  const Tensor a = RandomImages(rng, 2, 3, 64);
  const SegmentationOutput out = Predict(m, a, &a);
  EXPECT_EQ(out.logits.shape(), (Shape{2, 4, 64, 64}));
  ASSERT_EQ(out.predicted_mask.size(), 2u);
  EXPECT_EQ(out.predicted_mask[0].height, 64);
}

TEST(Decoder, ZeroHeadPredictsClassZero) {
  DownstreamModel m = BuildChangeModel(SmallEncoder(), Binary(), 3);
  for (auto& [name, t] : m.head.parameters) t.Fill(0.0f);
  Rng rng(6);
  const Tensor a = RandomImages(rng, 1, 3, 64);
  const Tensor b = RandomImages(rng, 1, 3, 64);
  for (std::uint8_t v : Predict(m, a, &b).predicted_mask[0].data) ASSERT_EQ(v, 0);
}

TEST(Decoder, ArgmaxTiesGoToLowestClass) {
  Tensor logits({1, 3, 1, 3}, std::vector<float>{1, 2, 5, 1, 2, 5, 0, 2, 5});
  const SegmentationOutput out = LogitsToOutput(logits);
  EXPECT_EQ(out.predicted_mask[0].data, (std::vector<std::uint8_t>{0, 0, 0}));
  Tensor l2({1, 3, 1, 1}, std::vector<float>{0, 3, 3});
  EXPECT_EQ(LogitsToOutput(l2).predicted_mask[0].data[0], 1);
}

TEST(Decoder, GradientsReachDecoderParameters) {
  const DownstreamModel m = BuildSegmentationModel(SmallEncoder(), Binary(), 3);
  Rng rng(7);
  const Tensor x = RandomImages(rng, 2, 3, 64);
  const std::vector<Tensor> skips = EncoderSkips(m, x);
  nn::Graph g(true);
  ParameterMap head = m.head.parameters;
  ParameterBinding p(g, head, true);
  std::vector<nn::Var> vars;
  for (const Tensor& t : skips) vars.push_back(g.Borrow(&t));
  const nn::Var logits = ForwardDecoder(g, m.head.spec, m.encoder.config, p, vars);
  std::vector<int> labels(2 * 64 * 64);
  for (auto& l : labels) l = rng.UniformInt(0, 1);
  g.Backward(nn::SoftmaxCrossEntropy(g, logits, labels));
  const ParameterMap grads = p.Gradients();
  EXPECT_EQ(grads.size(), head.size());
  double norm = 0.0;
  for (const auto& [name, t] : grads) {
    for (float v : t.values()) norm += static_cast<double>(v) * v;
  }
  EXPECT_GT(norm, 0.0);
}

TEST(Downstream, StrideViolationIsShapeError) {
  const DownstreamModel m = BuildSegmentationModel(SmallEncoder(), Binary(), 3);
  Rng rng(8);
  const Tensor x = RandomImages(rng, 1, 3, 48);
  try {
    Predict(m, x);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::kShape);
    EXPECT_NE(std::string(e.what()).find("multiple of 32"), std::string::npos) << e.what();
  }
}

TEST(Downstream, AglEncoderIsModalityError) {
  try {
    BuildChangeModel(SmallEncoder(Modality::kAgl), Binary());
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::kModality);
  }
}

TEST(Downstream, HeadSpecValidation) {
  const EncoderConfig enc = SmallEncoder().config;
  HeadSpec h = Binary();
  h.num_classes = 1;
  EXPECT_THROW(h.Validate(enc), Error);
  h.num_classes = 2;
  h.decoder_widths = {8, 8};
  EXPECT_THROW(h.Validate(enc), Error);
  h.decoder_widths = {8, 8, 8, 8};
  EXPECT_NO_THROW(h.Validate(enc));
  EXPECT_EQ(HeadSpec::FromJson(h.ToJson()).decoder_widths, h.decoder_widths);
}

TEST(Downstream, SegmentationSingleImage) {
  HeadSpec h;
  h.num_classes = 3;
  const DownstreamModel m = BuildSegmentationModel(SmallEncoder(), h, 4);
  EXPECT_EQ(m.head.spec.architecture, Architecture::kUnet);
  Rng rng(9);
  const Tensor x = RandomImages(rng, 1, 3, 64);
  EXPECT_EQ(Predict(m, x).logits.shape(), (Shape{1, 3, 64, 64}));
}

}  // namespace
}  // namespace csip
