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

#ifndef CSIP_HARNESS_HPP_
#define CSIP_HARNESS_HPP_

#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "csip/contrastive.hpp"
#include "csip/data.hpp"
#include "csip/downstream.hpp"
#include "csip/embedding.hpp"
#include "csip/metrics.hpp"
#include "json.hpp"

namespace csip {

enum class Phase { kPretrain, kFinetune };
const char* PhaseName(Phase p);
Phase ParsePhase(const std::string& s);

struct TrainConfig {
  Phase phase = Phase::kPretrain;
  int batch_size = 16;
  int epochs = 500;
  double learning_rate = 1e-3;
  double weight_decay = 0.01;
  std::string optimizer = "adamw";
  std::uint64_t seed = 0;
  double val_fraction = 0.2;
  int checkpoint_every = 10;
  // Global gradient-norm clip; 0 disables.
  double grad_clip_norm = 0.0;
  Negatives negatives = Negatives::kAll;
  // Random horizontal/vertical flips applied identically to every modality.
  bool augment_flips = true;
  // Chunk size of the held-out retrieval evaluation.
  int eval_chunk = 16;
  // Empty: nothing written to disk.
  std::filesystem::path run_dir;

  static TrainConfig Defaults(Phase phase);
  // Every violation, empty when valid.
  std::vector<std::string> Violations() const;
  void Validate() const;
  nlohmann::json ToJson() const;
};

struct EpochLog {
  int epoch = 0;
  double train_loss = 0.0;
  double val_loss = 0.0;
  std::optional<double> val_top1;      // pretrain
  std::optional<double> tau;           // pretrain
  std::optional<MetricsReport> val;    // finetune
  double seconds = 0.0;

  nlohmann::json ToJson() const;
};

struct StepLog {
  int epoch = 0;
  int step = 0;
  std::vector<int> batch;  // indices into the training split
  double loss = 0.0;
};

struct RunRecord {
  std::string run_id;
  nlohmann::json config;
  std::vector<EpochLog> epochs;
  std::vector<StepLog> steps;
  std::vector<std::string> train_ids;
  std::vector<std::string> val_ids;
  std::filesystem::path final_checkpoint;
  std::filesystem::path best_checkpoint;
  std::string encoder_digest_before;
  std::string encoder_digest_after;

  nlohmann::json ToJson() const;
};

// ---- Pretraining -----------------------------------------------------------

struct PairedSplit {
  std::vector<PairedSample> train;
  std::vector<PairedSample> val;
};

// Seeded split of in-memory samples with |val| = round(val_fraction * N).
PairedSplit SplitPairs(std::span<const PairedSample> samples, double val_fraction,
                       std::uint64_t seed);

struct PretrainResult {
  EncoderBundle rgb;
  EncoderBundle agl;
  Temperature temperature;
  RunRecord record;
};

PretrainResult Pretrain(EncoderBundle rgb, EncoderBundle agl, const PairedSplit& data,
                        const TrainConfig& config, Temperature temperature = {});

// Training-mode loss of one batch with the given parameters, which are not
// modified. Reproduces the loss logged for a step.
double BatchLoss(const EncoderBundle& rgb, const EncoderBundle& agl,
                 const Temperature& temperature, std::span<const PairedSample> samples,
                 std::span<const int> batch, Negatives negatives, bool flip_h = false,
                 bool flip_v = false);

// Flips drawn for a step; shared by training and BatchLoss replays.
std::pair<bool, bool> StepFlips(const TrainConfig& config, int epoch, int step);

struct RetrievalEval {
  double loss = 0.0;
  double top1 = 0.0;  // mean over eval chunks
};

// Held-out loss and top-1 retrieval over consecutive chunks of `chunk`
// samples; a trailing partial chunk is dropped unless it is the only one.
RetrievalEval EvaluateRetrieval(const EncoderBundle& rgb, const EncoderBundle& agl,
                                const Temperature& temperature,
                                std::span<const PairedSample> samples, int chunk,
                                Negatives negatives = Negatives::kAll);

std::pair<EmbeddingBatch, EmbeddingBatch> EmbedPairs(const EncoderBundle& rgb,
                                                     const EncoderBundle& agl,
                                                     std::span<const PairedSample> samples);

// ---- Fine-tuning -----------------------------------------------------------

// A scored sample for a dense head: one image (segmentation) or a pre/post
// pair (change), plus its label map.
struct DenseSample {
  std::string sample_id;
  ImageF pre;
  std::optional<ImageF> post;
  LabelMap mask;
  std::optional<Split> split;
};

std::vector<DenseSample> ToDenseSamples(std::span<const BitemporalSample> samples);
std::vector<DenseSample> ToDenseSamples(std::span<const SegmentationSample> samples);

struct DenseSplit {
  std::vector<DenseSample> train;
  std::vector<DenseSample> val;
  std::vector<DenseSample> test;
  std::vector<std::string> warnings;
};

// Predefined splits are honoured; otherwise a seeded split into train/val.
DenseSplit SplitDense(std::vector<DenseSample> samples, double val_fraction, std::uint64_t seed);

struct FinetuneResult {
  DownstreamModel model;
  RunRecord record;
};

FinetuneResult Finetune(const EncoderBundle& encoder, const HeadSpec& head_spec,
                        const DenseSplit& data, const TrainConfig& config);

struct DenseEvaluation {
  MetricsReport report;
  std::vector<std::string> sample_ids;
  std::vector<LabelMap> predictions;
};

DenseEvaluation EvaluateDense(const DownstreamModel& model, std::span<const DenseSample> samples,
                              int batch_size = 16);

std::string NewRunId(Phase phase, std::uint64_t seed);

}  // namespace csip

#endif  // CSIP_HARNESS_HPP_
