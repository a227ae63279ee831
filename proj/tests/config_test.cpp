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

#include <filesystem>
#include <string>

#include <gtest/gtest.h>

#include "csip/config.hpp"
#include "csip/error.hpp"

namespace csip {
namespace {

using nlohmann::json;

std::string Violation(const json& file, const std::vector<std::string>& overrides = {}) {
  try {
    ResolveConfig(file, overrides);
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::kValidation);
    EXPECT_EQ(e.exit_code(), 2);
    return e.what();
  }
  ADD_FAILURE() << "config accepted";
  return "";
}

bool Has(const std::string& text, const std::string& needle) {
  return text.find(needle) != std::string::npos;
}

TEST(Config, DefaultsResolve) {
  const json c = ResolveConfig(json::object(), {});
  EXPECT_EQ(c, DefaultConfig());
  EXPECT_EQ(TrainConfigFrom(c, Phase::kPretrain).batch_size, 16);
  EXPECT_EQ(TrainConfigFrom(c, Phase::kFinetune).epochs, 25);
  EXPECT_DOUBLE_EQ(TemperatureFrom(c).tau(), 0.07);
}

TEST(Config, StructuralProblemsReportedTogether) {
  const json file = {{"pretrain", {{"epochs", "many"}, {"batchsize", 4}}},
                     {"encoder", {{"width_multiplier", "wide"}}},
                     {"mystery", 1}};
  const std::string m = Violation(file, {"head.fusion.x=1", "noequals"});
  EXPECT_TRUE(Has(m, "6 config violation")) << m;
  EXPECT_TRUE(Has(m, "pretrain.epochs: expected integer, got string"));
  EXPECT_TRUE(Has(m, "pretrain.batchsize: unknown key"));
  EXPECT_TRUE(Has(m, "encoder.width_multiplier: expected number"));
  EXPECT_TRUE(Has(m, "mystery: unknown key"));
  EXPECT_TRUE(Has(m, "noequals"));
}

TEST(Config, SemanticProblemsReportedTogether) {
  const json file = {{"pretrain", {{"batch_size", 0}, {"learning_rate", -1.0}}},
                     {"temperature", {{"init", 5.0}}},
                     {"finetune", {{"weight_init", "imagenet"}}}};
  const std::string m = Violation(file);
  EXPECT_TRUE(Has(m, "pretrain.batch_size")) << m;
  EXPECT_TRUE(Has(m, "pretrain.learning_rate"));
  EXPECT_TRUE(Has(m, "temperature.init"));
  EXPECT_TRUE(Has(m, "finetune.weight_init"));
}

TEST(Config, IntegerRejectedForFractionalOnlyWhereIntegerExpected) {
  const json ok = ResolveConfig({{"encoder", {{"width_multiplier", 1}}}}, {});
  EXPECT_TRUE(ok["encoder"]["width_multiplier"].is_number_float());
  EXPECT_TRUE(Has(Violation({{"pretrain", {{"epochs", 2.5}}}}), "expected integer, got number"));
}

TEST(Config, OverridesWinOverFile) {
  const json file = {{"seed", 4}, {"pretrain", {{"epochs", 3}}}, {"head", {{"fusion", "diff"}}}};
  const json c = ResolveConfig(file, {"pretrain.epochs=7", "patch.strategy=grid",
                                      "head.decoder_widths=[8,16,32,64]"});
  EXPECT_EQ(c["seed"], 4);
  EXPECT_EQ(c["pretrain"]["epochs"], 7);
  EXPECT_EQ(c["patch"]["strategy"], "grid");
  EXPECT_EQ(HeadSpecFrom(c).fusion, Fusion::kDiff);
  EXPECT_EQ(HeadSpecFrom(c).decoder_widths, (std::vector<int>{8, 16, 32, 64}));
  EXPECT_EQ(PatchSpecFrom(c).strategy, PatchStrategy::kGrid);
}

TEST(Config, StringOverrideParsedAsStringWhenSlotIsString) {
  const json c = ResolveConfig(json::object(), {"runs_dir=123"});
  EXPECT_EQ(c["runs_dir"], "123");
}

TEST(Config, DeskPresetIsValid) {
  const json c = LoadConfig(std::filesystem::path(CSIP_SOURCE_DIR) / "configs" / "desk.json", {});
  const EncoderConfig e = EncoderConfigFrom(c, Modality::kAgl);
  EXPECT_EQ(e.in_channels, 1);
  EXPECT_DOUBLE_EQ(e.width_multiplier, 0.25);
  EXPECT_EQ(PatchSpecFrom(c).size, 64);
  EXPECT_EQ(TrainConfigFrom(c, Phase::kPretrain).epochs, 30);
  EXPECT_EQ(SyntheticConfigFrom(c).size, 64);
}

TEST(Config, MissingFile) {
  try {
    LoadConfig("/nonexistent/config.json", {});
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::kPath);
  }
}

}  // namespace
}  // namespace csip
