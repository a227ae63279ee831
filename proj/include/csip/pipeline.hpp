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

#ifndef CSIP_PIPELINE_HPP_
#define CSIP_PIPELINE_HPP_

#include <filesystem>
#include <string>
#include <vector>

#include "csip/contrastive.hpp"
#include "csip/harness.hpp"
#include "json.hpp"

namespace csip {

// Subcommand bodies shared by the command-line tool and the tests. Each takes
// a resolved config tree (see LoadConfig).

struct SynthReport {
  std::filesystem::path dir;
  DatasetKind kind = DatasetKind::kPairedAgl;
  int count = 0;
};

// `n` < 0 takes the count from the config. Refuses a nonempty `out` unless
// `force` is set.
SynthReport RunSynth(const nlohmann::json& config, const std::string& kind,
                     const std::filesystem::path& out, int n, bool force);

std::vector<PairedSample> LoadPairedSamples(const nlohmann::json& config,
                                            const std::filesystem::path& data);
std::vector<DenseSample> LoadDenseSamples(const nlohmann::json& config,
                                          const std::filesystem::path& data,
                                          DatasetDescriptor* descriptor = nullptr);

// Writes `run_dir/config.json` and delegates to the harness.
PretrainResult RunPretrain(const nlohmann::json& config, const std::filesystem::path& data,
                           const std::filesystem::path& run_dir);

// `checkpoint` is a pretraining checkpoint; ignored when
// finetune.weight_init is "random".
FinetuneResult RunFinetune(const nlohmann::json& config, const std::filesystem::path& data,
                           const std::filesystem::path& checkpoint,
                           const std::filesystem::path& run_dir);

struct EvaluateReport {
  nlohmann::json metrics;  // contents of metrics.json
  std::string table;
  std::vector<std::string> warnings;
};

// Writes metrics.json, table.txt and predictions/<sample_id>.png into `out`.
EvaluateReport RunEvaluate(const nlohmann::json& config, const std::filesystem::path& checkpoint,
                           const std::filesystem::path& data, const std::filesystem::path& out);

struct EmbedReport {
  std::filesystem::path archive;
  int rows = 0;
  RetrievalAccuracy top1;
  RetrievalAccuracy top5;
};

// Archive columns: sample_id, modality, z0 .. z{D-1}; RGB rows first.
EmbedReport RunEmbed(const nlohmann::json& config, const std::filesystem::path& checkpoint,
                     const std::filesystem::path& data, const std::filesystem::path& out);

// Table over several evaluation directories; also written to `out` if set.
std::string RunReport(const std::vector<std::filesystem::path>& eval_dirs,
                      const std::filesystem::path& out, bool pixel_accuracy);

// Panels `<out>/<run_id>/<sample_id>.png` for the evaluated samples and
// `<out>/<run_id>/curves.png` when a training log is available.
std::vector<std::filesystem::path> RunPlot(const nlohmann::json& config,
                                           const std::filesystem::path& eval_dir,
                                           const std::filesystem::path& run_dir,
                                           const std::filesystem::path& out);

std::vector<nlohmann::json> ReadRunLog(const std::filesystem::path& run_dir);

}  // namespace csip

#endif  // CSIP_PIPELINE_HPP_
