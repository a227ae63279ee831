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
#include <cstdlib>
#include <fstream>

#include <gtest/gtest.h>

#include "csip/embedding.hpp"
#include "csip/error.hpp"
#include "csip/rng.hpp"

namespace csip {
namespace {

Tensor RandomImages(std::uint64_t seed, int n, int c, int size) {
  Rng rng(seed);
  Tensor t({n, c, size, size});
  for (float& v : t.values()) v = static_cast<float>(rng.Uniform());
  return t;
}

TEST(EncoderConfig, DerivesWidths) {
  const EncoderConfig c = EncoderConfig::Make(Modality::kRgb, 0.25);
  EXPECT_EQ(c.StageWidths(), (std::vector<int>{16, 32, 64, 128}));
  EXPECT_EQ(c.StemWidth(), 16);
  EXPECT_EQ(c.feature_dim, 128);
  EXPECT_EQ(c.in_channels, 3);
  EXPECT_EQ(EncoderConfig::Make(Modality::kAgl).in_channels, 1);
  EXPECT_EQ(EncoderConfig::Make(Modality::kAgl).feature_dim, 512);
  EXPECT_EQ(c.plan.TotalStride(), 32);
}

TEST(EncoderConfig, ValidationNamesField) {
  EncoderConfig c = EncoderConfig::Make(Modality::kAgl);
  c.in_channels = 3;
  try {
    c.Validate();
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::kConfig);
    EXPECT_NE(std::string(e.what()).find("in_channels"), std::string::npos);
  }
  c = EncoderConfig::Make(Modality::kRgb);
  c.feature_dim = 100;
  try {
    c.Validate();
    FAIL();
  } catch (const Error& e) {
    EXPECT_NE(std::string(e.what()).find("feature_dim"), std::string::npos);
  }
}

TEST(EncoderConfig, JsonRoundTrip) {
  const EncoderConfig c = EncoderConfig::Make(Modality::kAgl, 0.5, BackbonePlan::ResNet10());
  EXPECT_EQ(EncoderConfig::FromJson(c.ToJson()), c);
}

TEST(Encoder, ResNet18ParameterCount) {
  // Backbone of the standard ResNet-18 without its classifier has 11,176,512
  // parameters, of which 9,600 are running statistics.
  const EncoderConfig c = EncoderConfig::Make(Modality::kRgb);
  std::int64_t backbone = 0, running = 0;
  for (const auto& [name, shape] : EncoderParameterShapes(c)) {
    if (name.starts_with("projection/")) continue;
    (IsRunningStatistic(name) ? running : backbone) += ShapeNumel(shape);
  }
  EXPECT_EQ(backbone + running, 11176512 + 9600);
  EXPECT_EQ(running, 9600);
}

TEST(Encoder, DeterministicInit) {
  const EncoderConfig c = EncoderConfig::Make(Modality::kRgb, 0.125, BackbonePlan::ResNet10());
  const EncoderBundle a = BuildEncoder(c, 5), b = BuildEncoder(c, 5), d = BuildEncoder(c, 6);
  EXPECT_EQ(a.parameters, b.parameters);
  EXPECT_NE(a.parameters, d.parameters);
  EXPECT_FALSE(a.frozen);
}

TEST(Encoder, UnitNormEmbeddings) {
  const EncoderBundle e =
      BuildEncoder(EncoderConfig::Make(Modality::kAgl, 0.125, BackbonePlan::ResNet10()), 2);
  const EmbeddingBatch b = Encode(e, RandomImages(1, 3, 1, 32));
  ASSERT_EQ(b.size(), 3);
  EXPECT_EQ(b.dim(), 128);
  for (int i = 0; i < 3; ++i) EXPECT_NEAR(b.vectors.row(i).norm(), 1.0, 1e-5);
  EXPECT_EQ(b.modality, Modality::kAgl);
}

TEST(Encoder, BatchPositionDoesNotChangeEmbedding) {
  const EncoderBundle e =
      BuildEncoder(EncoderConfig::Make(Modality::kRgb, 0.125, BackbonePlan::ResNet10()), 2);
  const Tensor x = RandomImages(3, 4, 3, 32);
  const EmbeddingBatch all = Encode(e, x);
  const EmbeddingBatch one = Encode(e, x.Rows(2, 3));
  EXPECT_LT((all.vectors.row(2) - one.vectors.row(0)).norm(), 1e-5);
}

TEST(Encoder, FeaturePyramid) {
  const EncoderBundle e =
      BuildEncoder(EncoderConfig::Make(Modality::kRgb, 0.25, BackbonePlan::ResNet18()), 2);
  const FeaturePyramid f = BackboneFeatures(e, RandomImages(3, 1, 3, 64));
  ASSERT_EQ(f.stages.size(), 4u);
  EXPECT_EQ(f.stages[0].shape(), (Shape{1, 16, 16, 16}));
  EXPECT_EQ(f.stages[3].shape(), (Shape{1, 128, 2, 2}));
  EXPECT_EQ(f.pooled.shape(), (Shape{1, 128}));
}

TEST(Encoder, InputErrors) {
  const EncoderBundle e =
      BuildEncoder(EncoderConfig::Make(Modality::kRgb, 0.125, BackbonePlan::ResNet10()), 2);
  const auto kind_of = [&](const Tensor& t) {
    try {
      Encode(e, t);
    } catch (const Error& err) {
      return err.kind();
    }
    return ErrorKind::kConfig;
  };
  EXPECT_EQ(kind_of(RandomImages(1, 1, 1, 32)), ErrorKind::kShape);
  EXPECT_EQ(kind_of(RandomImages(1, 1, 3, 16)), ErrorKind::kShape);
  Tensor nan = RandomImages(1, 1, 3, 32);
  nan[5] = std::nanf("");
  EXPECT_EQ(kind_of(nan), ErrorKind::kData);
}

TEST(Encoder, GoldenEmbedding) {
  const EncoderBundle e =
      BuildEncoder(EncoderConfig::Make(Modality::kRgb, 0.125, BackbonePlan::ResNet10()), 42);
  const EmbeddingBatch b = Encode(e, RandomImages(42, 2, 3, 32));
  const std::string path = std::string(CSIP_TEST_DATA_DIR) + "/golden_embedding.json";
  if (std::getenv("CSIP_WRITE_GOLDEN")) {
    nlohmann::json j = nlohmann::json::array();
    for (int r = 0; r < b.size(); ++r) {
      std::vector<double> v;
      for (int c = 0; c < b.dim(); ++c) v.push_back(b.vectors(r, c));
      j.push_back(v);
    }
    std::ofstream(path) << j.dump() << "\n";
    GTEST_SKIP() << "golden file written";
  }
  std::ifstream in(path);
  ASSERT_TRUE(in) << path;
  const nlohmann::json j = nlohmann::json::parse(in);
  ASSERT_EQ(j.size(), 2u);
  for (int r = 0; r < 2; ++r) {
    for (int c = 0; c < b.dim(); ++c) {
      EXPECT_NEAR(b.vectors(r, c), j[r][c].get<double>(), 1e-4) << r << "," << c;
    }
  }
}

}  // namespace
}  // namespace csip
