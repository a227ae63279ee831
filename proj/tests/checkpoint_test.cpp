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

#include <cstring>
#include <filesystem>
#include <fstream>
#include <string>

#include <gtest/gtest.h>

#include "csip/checkpoint.hpp"
#include "csip/error.hpp"

namespace csip {
namespace {

namespace fs = std::filesystem;

fs::path FreshDir(const std::string& name) {
  const fs::path p = fs::temp_directory_path() / ("csip_ckpt_" + name);
  fs::remove_all(p);
  return p;
}

EncoderBundle Small(Modality m, std::uint64_t seed) {
  return BuildEncoder(EncoderConfig::Make(m, 0.125, BackbonePlan::ResNet10()), seed);
}

bool BitIdentical(const ParameterMap& a, const ParameterMap& b) {
  if (a.size() != b.size()) return false;
  for (const auto& [name, t] : a) {
    auto it = b.find(name);
    if (it == b.end() || it->second.shape() != t.shape()) return false;
    if (std::memcmp(t.data(), it->second.data(), sizeof(float) * t.numel()) != 0) return false;
  }
  return true;
}

Checkpoint SamplePretrain() {
  EncoderBundle rgb = Small(Modality::kRgb, 1), agl = Small(Modality::kAgl, 2);
  rgb.parameters.begin()->second[0] = -0.0f;
  return PretrainCheckpoint(rgb, agl, Temperature::FromTau(0.0731), {7, 42});
}

template <typename F>
void ExpectKind(F&& f, ErrorKind kind, const std::string& needle) {
  try {
    f();
    ADD_FAILURE() << "no error";
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), kind) << e.what();
    EXPECT_NE(std::string(e.what()).find(needle), std::string::npos) << e.what();
  }
}

TEST(Checkpoint, PretrainRoundTripIsBitIdentical) {
  const fs::path a = FreshDir("rt_a"), b = FreshDir("rt_b");
  const Checkpoint ck = SamplePretrain();
  const nlohmann::json m1 = SaveCheckpoint(ck, a);
  const Checkpoint back = LoadCheckpoint(a);
  for (const char* role : {"rgb", "agl"}) {
    EXPECT_TRUE(BitIdentical(ck.encoders.at(role).parameters, back.encoders.at(role).parameters));
    EXPECT_EQ(ck.encoders.at(role).config, back.encoders.at(role).config);
  }
  ASSERT_TRUE(back.temperature.has_value());
  EXPECT_EQ(back.temperature->log_tau, ck.temperature->log_tau);
  EXPECT_EQ(back.run_state.epoch, 7);
  EXPECT_EQ(back.run_state.seed, 42u);
  const nlohmann::json m2 = SaveCheckpoint(back, b);
  EXPECT_EQ(StripMetadata(m1), StripMetadata(m2));
  EXPECT_EQ(StripMetadata(ReadManifest(a)), StripMetadata(m1));
  fs::remove_all(a);
  fs::remove_all(b);
}

TEST(Checkpoint, DownstreamRoundTrip) {
  const fs::path dir = FreshDir("model");
  EncoderBundle enc = Small(Modality::kRgb, 3);
  enc.frozen = true;
  const DownstreamModel model = BuildChangeModel(enc, HeadSpec{}, 5);
  SaveCheckpoint(ModelCheckpoint(model, {25, 1}), dir);
  const DownstreamModel back = ModelFromCheckpoint(LoadCheckpoint(dir));
  EXPECT_TRUE(BitIdentical(model.head.parameters, back.head.parameters));
  EXPECT_TRUE(BitIdentical(model.encoder.parameters, back.encoder.parameters));
  EXPECT_TRUE(back.encoder.frozen);
  EXPECT_EQ(back.head.spec.architecture, Architecture::kFcSiamDiff);
  EXPECT_EQ(DigestParameters(model.encoder.parameters), DigestParameters(back.encoder.parameters));
  fs::remove_all(dir);
}

TEST(Checkpoint, TruncatedBlob) {
  const fs::path dir = FreshDir("trunc");
  SaveCheckpoint(SamplePretrain(), dir);
  const fs::path blob = dir / "rgb" / BlobFileName("stem/conv/weight");
  ASSERT_TRUE(fs::exists(blob));
  fs::resize_file(blob, fs::file_size(blob) - 4);
  ExpectKind([&] { LoadCheckpoint(dir); }, ErrorKind::kCorruption, "stem__conv__weight");
  fs::remove_all(dir);
}

TEST(Checkpoint, HashMismatch) {
  const fs::path dir = FreshDir("hash");
  SaveCheckpoint(SamplePretrain(), dir);
  const fs::path blob = dir / "agl" / BlobFileName("stem/bn/gamma");
  std::fstream f(blob, std::ios::in | std::ios::out | std::ios::binary);
  f.seekp(0);
  f.put('\x7f');
  f.close();
  ExpectKind([&] { LoadCheckpoint(dir); }, ErrorKind::kCorruption, "stem__bn__gamma");
  fs::remove_all(dir);
}

TEST(Checkpoint, ShapeMismatchNamesParameter) {
  const fs::path dir = FreshDir("shape");
  SaveCheckpoint(SamplePretrain(), dir);
  nlohmann::json m = ReadManifest(dir);
  m["bundles"]["rgb"]["parameters"]["stem/conv/weight"]["shape"][0] = 3;
  std::ofstream(dir / kManifestName) << m.dump(2);
  ExpectKind([&] { LoadCheckpoint(dir); }, ErrorKind::kShape, "stem/conv/weight");
  fs::remove_all(dir);
}

TEST(Checkpoint, MissingManifestAndRole) {
  ExpectKind([&] { LoadCheckpoint(FreshDir("none")); }, ErrorKind::kPath, "manifest");
  ExpectKind([&] { EncoderFromCheckpoint(SamplePretrain(), "encoder"); }, ErrorKind::kContract,
             "encoder");
  ExpectKind([&] { ModelFromCheckpoint(SamplePretrain()); }, ErrorKind::kContract, "head");
}

TEST(Checkpoint, ParameterShapeCheck) {
  ParameterMap p{{"a", Tensor({2, 3})}};
  EXPECT_NO_THROW(CheckParameterShapes(p, {{"a", {2, 3}}}));
  ExpectKind([&] { CheckParameterShapes(p, {{"a", {3, 2}}}); }, ErrorKind::kShape, "a");
  ExpectKind([&] { CheckParameterShapes(p, {{"b", {2, 3}}}); }, ErrorKind::kShape, "b");
}

}  // namespace
}  // namespace csip
