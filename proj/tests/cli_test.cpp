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

#include <sys/wait.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>

#include <gtest/gtest.h>

#include "csip/raster.hpp"
#include "json.hpp"

namespace csip {
namespace {

namespace fs = std::filesystem;

const fs::path& Work() {
  static const fs::path dir = fs::temp_directory_path() / "csip_cli_test";
  return dir;
}

std::string Slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

struct Result {
  int code = -1;
  std::string err;
};

Result Exec(const std::string& args) {
  const fs::path err = Work() / "stderr.txt";
  const std::string cmd = "cd " + Work().string() + " && " + CSIP_CLI_PATH + " " + args +
                          " > /dev/null 2> " + err.string();
  const int status = std::system(cmd.c_str());
  Result r;
  r.code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
  r.err = Slurp(err);
  return r;
}

class Cli : public ::testing::Test {
 protected:
  static void SetUpTestSuite() {
    fs::remove_all(Work());
    fs::create_directories(Work());
    const nlohmann::json cfg = {
        {"seed", 2},
        {"data", {{"paired", "paired"}, {"change", "change"}}},
        {"synthetic", {{"scene", {{"size", 32}, {"max_side", 10}}}}},
        {"patch", {{"size", 32}}},
        {"encoder", {{"backbone", "resnet10"}, {"width_multiplier", 0.125},
                     {"projection_hidden_dim", 32}, {"projection_dim", 16}}},
        {"pretrain", {{"epochs", 2}, {"batch_size", 4}, {"eval_chunk", 4},
                      {"checkpoint_every", 1}}},
        {"finetune", {{"epochs", 1}, {"batch_size", 4}}},
        {"evaluate", {{"max_panels", 2}}}};
    std::ofstream(Work() / "tiny.json") << cfg.dump(2);
  }
  static void TearDownTestSuite() { fs::remove_all(Work()); }

  static Result Csip(const std::string& args) { return Exec(args + " -c tiny.json"); }
};

TEST_F(Cli, HelpAndParseErrors) {
  EXPECT_EQ(Exec("--help").code, 0);
  EXPECT_EQ(Exec("synth --bogus").code, 2);
  EXPECT_EQ(Exec("").code, 2);
}

TEST_F(Cli, SynthIsByteIdentical) {
  ASSERT_EQ(Csip("synth --kind paired --n 6 --out a").code, 0);
  ASSERT_EQ(Csip("synth --kind paired --n 6 --out b").code, 0);
  int files = 0;
  for (const auto& e : fs::recursive_directory_iterator(Work() / "a")) {
    if (!e.is_regular_file()) continue;
    const fs::path rel = fs::relative(e.path(), Work() / "a");
    EXPECT_EQ(Slurp(e.path()), Slurp(Work() / "b" / rel)) << rel;
    ++files;
  }
  EXPECT_EQ(files, 6 * 2 + 2);
}

TEST_F(Cli, SynthRefusals) {
  const Result zero = Csip("synth --kind paired --n 0 --out z");
  EXPECT_EQ(zero.code, 2);
  ASSERT_EQ(Csip("synth --kind change --n 2 --out full").code, 0);
  const Result again = Csip("synth --kind change --n 2 --out full");
  EXPECT_EQ(again.code, 2);
  EXPECT_NE(again.err.find("refusing"), std::string::npos) << again.err;
  EXPECT_EQ(Csip("synth --kind change --n 2 --out full --force").code, 0);
  EXPECT_EQ(Csip("synth --kind trees --n 2 --out t").code, 2);
}

TEST_F(Cli, EndToEnd) {
  ASSERT_EQ(Csip("synth --kind paired --n 20").code, 0);
  ASSERT_EQ(Csip("synth --kind change --n 10").code, 0);
  ASSERT_EQ(Csip("pretrain --run-id pre").code, 0);
  const fs::path pre = Work() / "runs" / "pre";
  EXPECT_TRUE(fs::exists(pre / "ckpt-2" / "manifest.json"));
  EXPECT_TRUE(fs::exists(pre / "record.json"));

  const Result wrong_kind = Csip("finetune --data paired --checkpoint runs/pre/ckpt-2 --run-id x");
  EXPECT_EQ(wrong_kind.code, 2);
  EXPECT_NE(wrong_kind.err.find("kind mismatch"), std::string::npos) << wrong_kind.err;

  const Result no_ck = Csip("evaluate --checkpoint runs/missing/ckpt-1");
  EXPECT_EQ(no_ck.code, 3);

  ASSERT_EQ(Csip("finetune --checkpoint runs/pre/ckpt-2 --run-id ft").code, 0);
  ASSERT_EQ(Csip("evaluate --checkpoint runs/ft/ckpt-1 --out ev").code, 0);
  const nlohmann::json m = nlohmann::json::parse(Slurp(Work() / "ev" / "metrics.json"));
  EXPECT_EQ(m["dataset_kind"], "bitemporal_change");
  EXPECT_EQ(m["weight_init"], "csip");
  EXPECT_TRUE(m["metrics"].contains("miou"));

  ASSERT_EQ(Csip("plot --eval ev --run runs/ft --out fig").code, 0);
  const std::string id = m["sample_ids"][0].get<std::string>();
  const Image8 panel = ReadPng(Work() / "fig" / m["run_id"].get<std::string>() / (id + ".png"));
  EXPECT_EQ(panel.width, 4 * 32 * 2 + 5 * 4);
  EXPECT_TRUE(fs::exists(Work() / "fig" / m["run_id"].get<std::string>() / "curves.png"));

  fs::create_directories(Work() / "empty_run");
  std::ofstream(Work() / "empty_run" / "log.jsonl").close();
  EXPECT_EQ(Csip("plot --eval ev --run empty_run --out fig2").code, 2);

  ASSERT_EQ(Csip("embed --checkpoint runs/pre/ckpt-2 --out emb").code, 0);
  std::ifstream csv(Work() / "emb" / "embeddings.csv");
  std::string line;
  int rows = -1;
  while (std::getline(csv, line)) ++rows;
  EXPECT_EQ(rows, 2 * 20);

  ASSERT_EQ(Exec("report --eval ev --out table.txt").code, 0);
  EXPECT_NE(Slurp(Work() / "table.txt").find("mIoU"), std::string::npos);
}

}  // namespace
}  // namespace csip
