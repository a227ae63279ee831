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

#include <cstdio>
#include <iostream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "csip/config.hpp"
#include "csip/error.hpp"
#include "csip/pipeline.hpp"

namespace {

namespace fs = std::filesystem;
using nlohmann::json;

struct Common {
  std::string config_path;
  std::vector<std::string> overrides;
  std::optional<std::uint64_t> seed;
};

void AddCommon(CLI::App* app, Common& c) {
  app->add_option("-c,--config", c.config_path, "Config file (JSON)");
  app->add_option("--set", c.overrides, "Dotted override key=value (repeatable)");
  app->add_option("--seed", c.seed, "Global seed");
}

json Resolve(const Common& c, std::vector<std::string> extra = {}) {
  std::vector<std::string> overrides = c.overrides;
  if (c.seed) overrides.push_back("seed=" + std::to_string(*c.seed));
  for (auto& e : extra) overrides.push_back(std::move(e));
  return csip::LoadConfig(c.config_path, overrides);
}

fs::path Or(const std::string& value, const fs::path& fallback) {
  return value.empty() ? fallback : fs::path(value);
}


}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Contrastive surface-image pretraining and downstream evaluation"};
  app.require_subcommand(1);

  Common common;

  auto* synth = app.add_subcommand("synth", "Generate a synthetic dataset");
  std::string kind = "paired", out;
  int n = -1, size = -1;
  bool force = false;
  AddCommon(synth, common);
  synth->add_option("--kind", kind, "paired | change | segmentation");
  synth->add_option("--n", n, "Number of samples");
  synth->add_option("--size", size, "Image side in pixels");
  synth->add_option("--out", out, "Output dataset directory");
  synth->add_flag("--force", force, "Replace a nonempty output directory");

  std::string data, run_id, checkpoint;
  auto* pretrain = app.add_subcommand("pretrain", "Contrastive pretraining of RGB/AGL encoders");
  AddCommon(pretrain, common);
  pretrain->add_option("--data", data, "Paired dataset directory");
  pretrain->add_option("--run-id", run_id, "Run directory name under runs_dir");

  auto* finetune = app.add_subcommand("finetune", "Train a head on a frozen encoder");
  AddCommon(finetune, common);
  finetune->add_option("--data", data, "Change or segmentation dataset directory");
  finetune->add_option("--checkpoint", checkpoint, "Pretraining checkpoint directory");
  finetune->add_option("--run-id", run_id, "Run directory name under runs_dir");

  auto* evaluate = app.add_subcommand("evaluate", "Score a fine-tuned checkpoint");
  AddCommon(evaluate, common);
  evaluate->add_option("--checkpoint", checkpoint, "Fine-tuned checkpoint directory")->required();
  evaluate->add_option("--data", data, "Dataset directory");
  evaluate->add_option("--out", out, "Output directory (default: <run>/eval)");

  auto* embed = app.add_subcommand("embed", "Export embeddings and retrieval accuracy");
  AddCommon(embed, common);
  embed->add_option("--checkpoint", checkpoint, "Pretraining checkpoint directory")->required();
  embed->add_option("--data", data, "Paired dataset directory");
  embed->add_option("--out", out, "Output directory (default: <run>/embed)");

  std::vector<std::string> eval_dirs;
  bool pixel_accuracy = false;
  auto* report = app.add_subcommand("report", "Tabulate evaluation results");
  report->add_option("--eval", eval_dirs, "Evaluation directories")->required();
  report->add_option("--out", out, "Write the table to this file");
  report->add_flag("--pixel-accuracy", pixel_accuracy, "Add a pixel accuracy column");

  std::string eval_dir, run_dir;
  auto* plot = app.add_subcommand("plot", "Render prediction panels and training curves");
  AddCommon(plot, common);
  plot->add_option("--eval", eval_dir, "Evaluation directory")->required();
  plot->add_option("--run", run_dir, "Run directory with log.jsonl");
  plot->add_option("--out", out, "Figure directory")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 2;
  }

  try {
    if (synth->parsed()) {
      std::vector<std::string> extra;
      if (size > 0) extra.push_back("synthetic.scene.size=" + std::to_string(size));
      const json config = Resolve(common, extra);
      const csip::DatasetKind k = csip::ParseDatasetKind(kind);
      const char* key = k == csip::DatasetKind::kPairedAgl         ? "paired"
                        : k == csip::DatasetKind::kBitemporalChange ? "change"
                                                                    : "segmentation";
      const fs::path dir = Or(out, config["data"][key].get<std::string>());
      const csip::SynthReport r = csip::RunSynth(config, kind, dir, n, force);
      std::printf("wrote %d %s samples to %s\n", r.count, csip::DatasetKindName(r.kind),
                  r.dir.string().c_str());
    } else if (pretrain->parsed()) {
      const json config = Resolve(common);
      const auto seed = config["seed"].get<std::uint64_t>();
      const fs::path dir = fs::path(config["runs_dir"].get<std::string>()) /
                           (run_id.empty() ? csip::NewRunId(csip::Phase::kPretrain, seed) : run_id);
      const auto r = csip::RunPretrain(config, Or(data, config["data"]["paired"].get<std::string>()), dir);
      if (!r.record.epochs.empty()) {
        std::printf("%s\n", r.record.epochs.back().ToJson().dump().c_str());
      }
      std::printf("run %s\nfinal checkpoint %s\n", dir.string().c_str(),
                  r.record.final_checkpoint.string().c_str());
    } else if (finetune->parsed()) {
      const json config = Resolve(common);
      const auto seed = config["seed"].get<std::uint64_t>();
      const fs::path dir = fs::path(config["runs_dir"].get<std::string>()) /
                           (run_id.empty() ? csip::NewRunId(csip::Phase::kFinetune, seed) : run_id);
      const std::string kind_key = config["data"]["finetune_kind"].get<std::string>();
      const auto r = csip::RunFinetune(
          config, Or(data, config["data"][kind_key].get<std::string>()), checkpoint, dir);
      if (!r.record.epochs.empty()) {
        std::printf("%s\n", r.record.epochs.back().ToJson().dump().c_str());
      }
      std::printf("run %s\nfinal checkpoint %s\n", dir.string().c_str(),
                  r.record.final_checkpoint.string().c_str());
    } else if (evaluate->parsed()) {
      const json config = Resolve(common);
      const std::string kind_key = config["data"]["finetune_kind"].get<std::string>();
      const fs::path ck(checkpoint);
      const auto r = csip::RunEvaluate(config, ck,
                                       Or(data, config["data"][kind_key].get<std::string>()),
                                       Or(out, ck.parent_path() / "eval"));
      for (const auto& w : r.warnings) std::fprintf(stderr, "warning: %s\n", w.c_str());
      std::printf("%s", r.table.c_str());
    } else if (embed->parsed()) {
      const json config = Resolve(common);
      const fs::path ck(checkpoint);
      const auto r = csip::RunEmbed(config, ck, Or(data, config["data"]["paired"].get<std::string>()),
                                    Or(out, ck.parent_path() / "embed"));
      std::printf("wrote %d rows to %s\n", r.rows, r.archive.string().c_str());
      std::printf("top1 rgb->agl %.4f agl->rgb %.4f\n", r.top1.rgb_to_agl, r.top1.agl_to_rgb);
      std::printf("top5 rgb->agl %.4f agl->rgb %.4f\n", r.top5.rgb_to_agl, r.top5.agl_to_rgb);
    } else if (report->parsed()) {
      std::vector<fs::path> dirs(eval_dirs.begin(), eval_dirs.end());
      std::printf("%s", csip::RunReport(dirs, out, pixel_accuracy).c_str());
    } else if (plot->parsed()) {
      const json config = Resolve(common);
      for (const auto& p : csip::RunPlot(config, eval_dir, run_dir, out)) {
        std::printf("%s\n", p.string().c_str());
      }
    }
  } catch (const csip::Error& e) {
    std::fprintf(stderr, "error [%s]: %s\n", csip::ErrorKindName(e.kind()), e.what());
    return e.exit_code();
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 3;
  }
  return 0;
}
