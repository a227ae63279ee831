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

#include "csip/harness.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <fstream>
#include <numeric>

#include "csip/checkpoint.hpp"
#include "csip/error.hpp"
#include "csip/optim.hpp"
#include "csip/rng.hpp"

namespace csip {

namespace fs = std::filesystem;
using nlohmann::json;

const char* PhaseName(Phase p) { return p == Phase::kPretrain ? "pretrain" : "finetune"; }

Phase ParsePhase(const std::string& s) {
  if (s == "pretrain") return Phase::kPretrain;
  if (s == "finetune") return Phase::kFinetune;
  Fail(ErrorKind::kConfig, "phase: unknown value '" + s + "'");
}

TrainConfig TrainConfig::Defaults(Phase phase) {
  TrainConfig c;
  c.phase = phase;
  c.epochs = phase == Phase::kPretrain ? 500 : 25;
  if (phase == Phase::kFinetune) c.augment_flips = false;
  return c;
}

std::vector<std::string> TrainConfig::Violations() const {
  std::vector<std::string> v;
  if (batch_size < 1) v.push_back("batch_size: must be >= 1");
  if (epochs < 0) v.push_back("epochs: must be >= 0");
  if (!(learning_rate > 0.0)) v.push_back("learning_rate: must be > 0");
  if (weight_decay < 0.0) v.push_back("weight_decay: must be >= 0");
  if (optimizer != "adamw") v.push_back("optimizer: only 'adamw' is supported");
  if (!(val_fraction > 0.0 && val_fraction < 1.0)) v.push_back("val_fraction: must be in (0, 1)");
  if (checkpoint_every < 1) v.push_back("checkpoint_every: must be >= 1");
  if (grad_clip_norm < 0.0) v.push_back("grad_clip_norm: must be >= 0");
  if (eval_chunk < 2) v.push_back("eval_chunk: must be >= 2");
  return v;
}

void TrainConfig::Validate() const {
  const auto v = Violations();
  if (v.empty()) return;
  std::string msg = "invalid training config:";
  for (const auto& s : v) msg += "\n  " + s;
  Fail(ErrorKind::kValidation, msg);
}

json TrainConfig::ToJson() const {
  return {{"phase", PhaseName(phase)},
          {"batch_size", batch_size},
          {"epochs", epochs},
          {"learning_rate", learning_rate},
          {"weight_decay", weight_decay},
          {"optimizer", optimizer},
          {"seed", seed},
          {"val_fraction", val_fraction},
          {"checkpoint_every", checkpoint_every},
          {"grad_clip_norm", grad_clip_norm},
          {"negatives", NegativesName(negatives)},
          {"augment_flips", augment_flips},
          {"eval_chunk", eval_chunk}};
}

json EpochLog::ToJson() const {
  json j = {{"epoch", epoch}, {"train_loss", train_loss}, {"val_loss", val_loss}};
  if (val_top1) j["val_top1"] = *val_top1;
  if (tau) j["tau"] = *tau;
  if (val) {
    j["val_miou"] = val->miou;
    j["val_f1"] = val->f1;
    j["val_average_accuracy"] = val->average_accuracy;
    j["val_pixel_accuracy"] = val->pixel_accuracy;
    if (val->num_classes == 2 && val->per_class_iou[1]) j["val_change_iou"] = *val->per_class_iou[1];
  }
  j["seconds"] = seconds;
  return j;
}

json RunRecord::ToJson() const {
  json e = json::array();
  for (const auto& x : epochs) e.push_back(x.ToJson());
  json j = {{"run_id", run_id},
            {"config", config},
            {"epochs", e},
            {"num_steps", steps.size()},
            {"final_checkpoint", final_checkpoint.string()},
            {"best_checkpoint", best_checkpoint.string()}};
  if (!encoder_digest_before.empty()) {
    j["encoder_digest_before"] = encoder_digest_before;
    j["encoder_digest_after"] = encoder_digest_after;
  }
  return j;
}

std::string NewRunId(Phase phase, std::uint64_t seed) {
  return std::string(PhaseName(phase)) + "-s" + std::to_string(seed);
}

namespace {

Eigen::MatrixXd ToMatrix(const Tensor& t) {
  Eigen::MatrixXd m(t.dim(0), t.dim(1));
  for (int r = 0; r < t.dim(0); ++r) {
    for (int c = 0; c < t.dim(1); ++c) m(r, c) = t[static_cast<std::int64_t>(r) * t.dim(1) + c];
  }
  return m;
}

Tensor FromMatrix(const Eigen::MatrixXd& m) {
  Tensor t({static_cast<int>(m.rows()), static_cast<int>(m.cols())});
  for (int r = 0; r < m.rows(); ++r) {
    for (int c = 0; c < m.cols(); ++c) {
      t[static_cast<std::int64_t>(r) * m.cols() + c] = static_cast<float>(m(r, c));
    }
  }
  return t;
}

double SquaredNorm(const ParameterMap& grads) {
  double s = 0.0;
  for (const auto& [name, g] : grads) {
    for (float v : g.values()) s += static_cast<double>(v) * v;
  }
  return s;
}

void Scale(ParameterMap& grads, double f) {
  for (auto& [name, g] : grads) {
    for (float& v : g.values()) v = static_cast<float>(v * f);
  }
}

bool AllFinite(const ParameterMap& grads) {
  for (const auto& [name, g] : grads) {
    if (!g.AllFinite()) return false;
  }
  return true;
}

class RunWriter {
 public:
  explicit RunWriter(const fs::path& dir) : dir_(dir) {
    if (dir_.empty()) return;
    std::error_code ec;
    fs::create_directories(dir_, ec);
    if (ec) Fail(ErrorKind::kPath, "cannot create run dir " + dir_.string());
    std::ofstream(dir_ / "log.jsonl", std::ios::trunc);
  }

  bool enabled() const { return !dir_.empty(); }
  const fs::path& dir() const { return dir_; }

  void Log(const EpochLog& e) const {
    if (!enabled()) return;
    std::ofstream out(dir_ / "log.jsonl", std::ios::app);
    out << e.ToJson().dump() << "\n";
    if (!out) Fail(ErrorKind::kIo, "cannot append to " + (dir_ / "log.jsonl").string());
  }

  void Record(const RunRecord& r) const {
    if (!enabled()) return;
    std::ofstream out(dir_ / "record.json", std::ios::trunc);
    out << r.ToJson().dump(2) << "\n";
  }

  void Failure(const json& snapshot) const {
    if (!enabled()) return;
    std::ofstream out(dir_ / "failure.json", std::ios::trunc);
    out << snapshot.dump(2) << "\n";
  }

  fs::path CheckpointDir(const std::string& name) const { return dir_ / name; }

 private:
  fs::path dir_;
};

double Seconds(std::chrono::steady_clock::time_point since) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - since).count();
}

std::vector<int> EpochOrder(int n, std::uint64_t seed, int epoch) {
  std::vector<int> order(static_cast<std::size_t>(n));
  std::iota(order.begin(), order.end(), 0);
  Rng rng(DeriveSeed(seed, 0x6570000000ULL + static_cast<std::uint64_t>(epoch)));
  rng.Shuffle(order);
  return order;
}

struct PairTensors {
  Tensor rgb;
  Tensor agl;
  std::vector<std::string> ids;
};

PairTensors StackPairs(std::span<const PairedSample> samples, std::span<const int> batch,
                       bool flip_h, bool flip_v) {
  std::vector<PairedSample> flipped;
  std::vector<const ImageF*> rgb, agl;
  PairTensors out;
  if (flip_h || flip_v) {
    flipped.reserve(batch.size());
    for (int i : batch) flipped.push_back(Flip(samples[static_cast<std::size_t>(i)], flip_h, flip_v));
    for (const auto& s : flipped) {
      rgb.push_back(&s.rgb);
      agl.push_back(&s.agl);
      out.ids.push_back(s.sample_id);
    }
  } else {
    for (int i : batch) {
      const auto& s = samples[static_cast<std::size_t>(i)];
      rgb.push_back(&s.rgb);
      agl.push_back(&s.agl);
      out.ids.push_back(s.sample_id);
    }
  }
  out.rgb = ToTensor(rgb);
  out.agl = ToTensor(agl);
  return out;
}

struct PretrainStep {
  LossBreakdown loss;
  LossGradient grad;
  ParameterMap rgb_grads;
  ParameterMap agl_grads;
};

// Forward and backward of one batch; updates running statistics of the
// bundles it is given.
PretrainStep RunPretrainStep(EncoderBundle& rgb, EncoderBundle& agl, const Temperature& temp,
                             const PairTensors& batch, Negatives negatives, bool backward,
                             const std::function<void(const json&)>& on_nonfinite) {
  nn::Graph gr(true), ga(true);
  ParameterBinding br(gr, rgb.parameters, true);
  ParameterBinding ba(ga, agl.parameters, true);
  EncoderTrace tr = ForwardEncoder(gr, rgb.config, br, gr.Constant(batch.rgb), true);
  EncoderTrace ta = ForwardEncoder(ga, agl.config, ba, ga.Constant(batch.agl), true);
  const Tensor& zr = gr.value(tr.embedding);
  const Tensor& za = ga.value(ta.embedding);
  if (!zr.AllFinite() || !za.AllFinite()) {
    on_nonfinite({{"reason", "non-finite embeddings"}});
  }
  EmbeddingBatch er{Modality::kRgb, ToMatrix(zr), batch.ids};
  EmbeddingBatch ea{Modality::kAgl, ToMatrix(za), batch.ids};
  PretrainStep step;
  std::tie(step.loss, step.grad) = NtXentWithGradient(er, ea, temp, negatives);
  if (!std::isfinite(step.loss.total)) {
    on_nonfinite({{"reason", "non-finite loss"}, {"loss_terms", step.loss.per_pair}});
  }
  if (!backward) return step;
  gr.Backward(tr.embedding, FromMatrix(step.grad.d_rgb));
  ga.Backward(ta.embedding, FromMatrix(step.grad.d_agl));
  step.rgb_grads = br.Gradients();
  step.agl_grads = ba.Gradients();
  if (!AllFinite(step.rgb_grads) || !AllFinite(step.agl_grads) ||
      !std::isfinite(step.grad.d_log_tau)) {
    on_nonfinite({{"reason", "non-finite gradients"}, {"loss_terms", step.loss.per_pair}});
  }
  return step;
}

void ClampLogTau(Temperature& t) {
  t.log_tau = std::clamp(t.log_tau, std::log(t.tau_min), std::log(t.tau_max));
}

}  // namespace

PairedSplit SplitPairs(std::span<const PairedSample> samples, double val_fraction,
                       std::uint64_t seed) {
  const int n_val = ValidationCount(samples.size(), val_fraction);
  if (n_val == 0) Fail(ErrorKind::kConfig, "validation empty: raise val_fraction or add samples");
  if (n_val >= static_cast<int>(samples.size())) Fail(ErrorKind::kConfig, "training split empty");
  const std::vector<std::size_t> perm = SplitPermutation(samples.size(), seed);
  std::vector<std::size_t> val(perm.begin(), perm.begin() + n_val);
  std::vector<std::size_t> train(perm.begin() + n_val, perm.end());
  std::sort(val.begin(), val.end());
  std::sort(train.begin(), train.end());
  PairedSplit out;
  for (std::size_t i : train) out.train.push_back(samples[i]);
  for (std::size_t i : val) out.val.push_back(samples[i]);
  return out;
}

std::pair<bool, bool> StepFlips(const TrainConfig& config, int epoch, int step) {
  if (!config.augment_flips) return {false, false};
  Rng rng(DeriveSeed(DeriveSeed(config.seed, 0x666c6970ULL + static_cast<std::uint64_t>(epoch)),
                     static_cast<std::uint64_t>(step)));
  const bool h = rng.Bernoulli(0.5);
  const bool v = rng.Bernoulli(0.5);
  return {h, v};
}

double BatchLoss(const EncoderBundle& rgb, const EncoderBundle& agl,
                 const Temperature& temperature, std::span<const PairedSample> samples,
                 std::span<const int> batch, Negatives negatives, bool flip_h, bool flip_v) {
  EncoderBundle r = rgb, a = agl;
  const PairTensors t = StackPairs(samples, batch, flip_h, flip_v);
  return RunPretrainStep(r, a, temperature, t, negatives, false, [](const json& j) {
           Fail(ErrorKind::kNumerical, j.dump());
         }).loss.total;
}

std::pair<EmbeddingBatch, EmbeddingBatch> EmbedPairs(const EncoderBundle& rgb,
                                                     const EncoderBundle& agl,
                                                     std::span<const PairedSample> samples) {
  std::vector<const ImageF*> r, a;
  std::vector<std::string> ids;
  for (const auto& s : samples) {
    r.push_back(&s.rgb);
    a.push_back(&s.agl);
    ids.push_back(s.sample_id);
  }
  // Encode in slices to bound activation memory.
  constexpr std::size_t kSlice = 64;
  EmbeddingBatch er{Modality::kRgb, {}, ids}, ea{Modality::kAgl, {}, ids};
  std::vector<Eigen::MatrixXd> pr, pa;
  for (std::size_t b = 0; b < samples.size(); b += kSlice) {
    const std::size_t e = std::min(samples.size(), b + kSlice);
    pr.push_back(Encode(rgb, ToTensor(std::span(r).subspan(b, e - b))).vectors);
    pa.push_back(Encode(agl, ToTensor(std::span(a).subspan(b, e - b))).vectors);
  }
  const auto stack = [&](const std::vector<Eigen::MatrixXd>& parts, Eigen::MatrixXd& out) {
    if (parts.empty()) return;
    out.resize(static_cast<Eigen::Index>(samples.size()), parts[0].cols());
    Eigen::Index row = 0;
    for (const auto& p : parts) {
      out.middleRows(row, p.rows()) = p;
      row += p.rows();
    }
  };
  stack(pr, er.vectors);
  stack(pa, ea.vectors);
  return {std::move(er), std::move(ea)};
}

RetrievalEval EvaluateRetrieval(const EncoderBundle& rgb, const EncoderBundle& agl,
                                const Temperature& temperature,
                                std::span<const PairedSample> samples, int chunk,
                                Negatives negatives) {
  const int n = static_cast<int>(samples.size());
  if (n < 2) Fail(ErrorKind::kConfig, "retrieval evaluation needs at least 2 samples");
  const auto [er, ea] = EmbedPairs(rgb, agl, samples);
  const int c = std::min(chunk, n);
  const int chunks = n / c;
  RetrievalEval out;
  for (int k = 0; k < chunks; ++k) {
    EmbeddingBatch r{Modality::kRgb, er.vectors.middleRows(k * c, c), {}};
    EmbeddingBatch a{Modality::kAgl, ea.vectors.middleRows(k * c, c), {}};
    r.sample_ids.assign(er.sample_ids.begin() + k * c, er.sample_ids.begin() + (k + 1) * c);
    a.sample_ids = r.sample_ids;
    out.loss += NtXent(r, a, temperature, negatives).total;
    const RetrievalAccuracy acc = ComputeRetrievalAccuracy(r, a, 1);
    out.top1 += 0.5 * (acc.rgb_to_agl + acc.agl_to_rgb);
  }
  out.loss /= chunks;
  out.top1 /= chunks;
  return out;
}

PretrainResult Pretrain(EncoderBundle rgb, EncoderBundle agl, const PairedSplit& data,
                        const TrainConfig& config, Temperature temperature) {
  config.Validate();
  if (config.phase != Phase::kPretrain) Fail(ErrorKind::kConfig, "phase: expected pretrain");
  if (rgb.frozen || agl.frozen) Fail(ErrorKind::kContract, "pretraining needs unfrozen encoders");
  if (rgb.config.modality != Modality::kRgb || agl.config.modality != Modality::kAgl) {
    Fail(ErrorKind::kModality, "pretraining expects an rgb and an agl encoder");
  }
  const int n = static_cast<int>(data.train.size());
  if (n < config.batch_size) {
    Fail(ErrorKind::kConfig, "dataset too small for one batch: " + std::to_string(n) +
                                 " training pairs, batch_size " +
                                 std::to_string(config.batch_size));
  }
  if (data.val.size() < 2) Fail(ErrorKind::kConfig, "validation split needs at least 2 pairs");

  PretrainResult result;
  RunRecord& rec = result.record;
  rec.run_id = config.run_dir.empty() ? NewRunId(config.phase, config.seed)
                                      : config.run_dir.filename().string();
  rec.config = config.ToJson();
  for (const auto& s : data.train) rec.train_ids.push_back(s.sample_id);
  for (const auto& s : data.val) rec.val_ids.push_back(s.sample_id);
  RunWriter writer(config.run_dir);

  AdamWConfig oc{config.learning_rate, config.weight_decay};
  AdamW opt_rgb(oc), opt_agl(oc);
  double best_top1 = -1.0;

  for (int epoch = 1; epoch <= config.epochs; ++epoch) {
    const auto t0 = std::chrono::steady_clock::now();
    const std::vector<int> order = EpochOrder(n, config.seed, epoch);
    double loss_sum = 0.0;
    int steps = 0;
    for (int b = 0; b < n; b += config.batch_size) {
      const std::vector<int> batch(order.begin() + b,
                                   order.begin() + std::min(n, b + config.batch_size));
      const auto [fh, fv] = StepFlips(config, epoch, steps);
      const PairTensors t = StackPairs(data.train, batch, fh, fv);
      const auto on_nonfinite = [&](json snap) {
        snap["epoch"] = epoch;
        snap["step"] = steps;
        snap["batch_ids"] = t.ids;
        snap["tau"] = temperature.tau();
        snap["log_tau"] = temperature.log_tau;
        writer.Failure(snap);
        Fail(ErrorKind::kNumerical, "training diverged: " + snap.dump());
      };
      PretrainStep step =
          RunPretrainStep(rgb, agl, temperature, t, config.negatives, true, on_nonfinite);
      if (config.grad_clip_norm > 0.0) {
        const double norm =
            std::sqrt(SquaredNorm(step.rgb_grads) + SquaredNorm(step.agl_grads) +
                      step.grad.d_log_tau * step.grad.d_log_tau);
        if (norm > config.grad_clip_norm) {
          const double f = config.grad_clip_norm / norm;
          Scale(step.rgb_grads, f);
          Scale(step.agl_grads, f);
          step.grad.d_log_tau *= f;
        }
      }
      opt_rgb.Step(rgb.parameters, step.rgb_grads);
      opt_agl.Step(agl.parameters, step.agl_grads);
      opt_rgb.StepScalar("log_tau", temperature.log_tau, step.grad.d_log_tau);
      ClampLogTau(temperature);
      rec.steps.push_back({epoch, steps, batch, step.loss.total});
      loss_sum += step.loss.total;
      ++steps;
    }
    EpochLog log;
    log.epoch = epoch;
    log.train_loss = loss_sum / steps;
    const RetrievalEval ev =
        EvaluateRetrieval(rgb, agl, temperature, data.val, config.eval_chunk, config.negatives);
    log.val_loss = ev.loss;
    log.val_top1 = ev.top1;
    log.tau = temperature.tau();
    log.seconds = Seconds(t0);
    if (!std::isfinite(log.val_loss)) {
      writer.Failure({{"reason", "non-finite validation loss"}, {"epoch", epoch}});
      Fail(ErrorKind::kNumerical, "non-finite validation loss at epoch " + std::to_string(epoch));
    }
    rec.epochs.push_back(log);
    writer.Log(log);
    if (writer.enabled()) {
      const RunState state{epoch, config.seed};
      const Checkpoint ck = PretrainCheckpoint(rgb, agl, temperature, state);
      if (epoch % config.checkpoint_every == 0 || epoch == config.epochs) {
        const fs::path dir = writer.CheckpointDir("ckpt-" + std::to_string(epoch));
        SaveCheckpoint(ck, dir);
        if (epoch == config.epochs) rec.final_checkpoint = dir;
      }
      if (ev.top1 > best_top1) {
        best_top1 = ev.top1;
        rec.best_checkpoint = writer.CheckpointDir("ckpt-best");
        SaveCheckpoint(ck, rec.best_checkpoint);
      }
    }
  }
  writer.Record(rec);
  result.rgb = std::move(rgb);
  result.agl = std::move(agl);
  result.temperature = temperature;
  return result;
}

// ---- Fine-tuning -------------------------------------------------------------

std::vector<DenseSample> ToDenseSamples(std::span<const BitemporalSample> samples) {
  std::vector<DenseSample> out;
  for (const auto& s : samples) out.push_back({s.sample_id, s.pre, s.post, s.mask, s.split});
  return out;
}

std::vector<DenseSample> ToDenseSamples(std::span<const SegmentationSample> samples) {
  std::vector<DenseSample> out;
  for (const auto& s : samples) out.push_back({s.sample_id, s.image, std::nullopt, s.mask, s.split});
  return out;
}

DenseSplit SplitDense(std::vector<DenseSample> samples, double val_fraction, std::uint64_t seed) {
  DenseSplit out;
  const bool predefined = std::any_of(samples.begin(), samples.end(),
                                      [](const DenseSample& s) { return s.split.has_value(); });
  if (predefined) {
    std::vector<DenseSample> unassigned;
    for (auto& s : samples) {
      if (!s.split) {
        unassigned.push_back(std::move(s));
      } else if (*s.split == Split::kTrain) {
        out.train.push_back(std::move(s));
      } else if (*s.split == Split::kVal) {
        out.val.push_back(std::move(s));
      } else {
        out.test.push_back(std::move(s));
      }
    }
    if (!unassigned.empty()) {
      Fail(ErrorKind::kSchema, std::to_string(unassigned.size()) +
                                   " samples lack a split while others have one");
    }
    out.warnings.push_back("using predefined splits; val_fraction ignored");
    if (out.val.empty()) {
      out.warnings.push_back("no predefined val split; carving one from train");
      for (auto& s : out.train) s.split.reset();
      DenseSplit carved = SplitDense(std::move(out.train), val_fraction, seed);
      out.train = std::move(carved.train);
      out.val = std::move(carved.val);
      for (auto& s : out.train) s.split = Split::kTrain;
      for (auto& s : out.val) s.split = Split::kVal;
    }
    return out;
  }
  const int n_val = ValidationCount(samples.size(), val_fraction);
  if (n_val == 0) Fail(ErrorKind::kConfig, "validation empty: raise val_fraction or add samples");
  if (n_val >= static_cast<int>(samples.size())) Fail(ErrorKind::kConfig, "training split empty");
  const std::vector<std::size_t> perm = SplitPermutation(samples.size(), seed);
  std::vector<std::size_t> val(perm.begin(), perm.begin() + n_val);
  std::vector<std::size_t> train(perm.begin() + n_val, perm.end());
  std::sort(val.begin(), val.end());
  std::sort(train.begin(), train.end());
  for (std::size_t i : train) out.train.push_back(samples[i]);
  for (std::size_t i : val) out.val.push_back(samples[i]);
  return out;
}

namespace {

struct CachedSample {
  std::vector<Tensor> skips;  // each {1, C, h, w}
  std::vector<int> labels;    // H * W
};

std::vector<Tensor> SampleSkips(const DownstreamModel& model, const DenseSample& s) {
  const Tensor pre = ToTensor(s.pre);
  if (model.head.spec.architecture == Architecture::kFcSiamDiff) {
    if (!s.post) Fail(ErrorKind::kData, s.sample_id + ": change sample without post image");
    return FusedSkips(model, pre, ToTensor(*s.post));
  }
  return EncoderSkips(model, pre);
}

std::vector<CachedSample> CacheSamples(const DownstreamModel& model,
                                       std::span<const DenseSample> samples) {
  const int k = model.head.spec.num_classes;
  std::vector<CachedSample> out;
  out.reserve(samples.size());
  for (const auto& s : samples) {
    if (s.mask.height != s.pre.height || s.mask.width != s.pre.width) {
      Fail(ErrorKind::kData, s.sample_id + ": mask grid differs from image grid");
    }
    CachedSample c;
    c.skips = SampleSkips(model, s);
    c.labels.reserve(s.mask.data.size());
    for (std::uint8_t v : s.mask.data) {
      if (v >= k) {
        Fail(ErrorKind::kData, s.sample_id + ": label " + std::to_string(v) + " >= K=" +
                                   std::to_string(k));
      }
      c.labels.push_back(v);
    }
    out.push_back(std::move(c));
  }
  return out;
}

std::vector<Tensor> StackSkips(std::span<const CachedSample> cache, std::span<const int> batch) {
  std::vector<Tensor> out;
  const std::size_t stages = cache[static_cast<std::size_t>(batch[0])].skips.size();
  for (std::size_t s = 0; s < stages; ++s) {
    std::vector<Tensor> parts;
    for (int i : batch) parts.push_back(cache[static_cast<std::size_t>(i)].skips[s]);
    out.push_back(ConcatRows(parts));
  }
  return out;
}

void CheckKind(const HeadSpec& spec, std::span<const DenseSample> samples) {
  for (const auto& s : samples) {
    const bool change = s.post.has_value();
    if (change != (spec.architecture == Architecture::kFcSiamDiff)) {
      Fail(ErrorKind::kConfig, std::string("dataset kind mismatch: ") +
                                   ArchitectureName(spec.architecture) + " head given " +
                                   (change ? "bitemporal" : "single-image") + " samples");
    }
  }
}

ConfusionMatrix Score(const DownstreamModel& model, std::span<const CachedSample> cache,
                      int batch_size, std::vector<LabelMap>* predictions) {
  ConfusionMatrix cm(model.head.spec.num_classes);
  const int n = static_cast<int>(cache.size());
  for (int b = 0; b < n; b += batch_size) {
    std::vector<int> batch;
    for (int i = b; i < std::min(n, b + batch_size); ++i) batch.push_back(i);
    const std::vector<Tensor> skips = StackSkips(cache, batch);
    SegmentationOutput out = PredictFromSkips(model, skips);
    for (std::size_t j = 0; j < batch.size(); ++j) {
      const auto& labels = cache[static_cast<std::size_t>(batch[j])].labels;
      const auto& pred = out.predicted_mask[j].data;
      std::vector<int> p(pred.begin(), pred.end());
      cm.Accumulate(std::span<const int>(labels), std::span<const int>(p));
      if (predictions) predictions->push_back(std::move(out.predicted_mask[j]));
    }
  }
  return cm;
}

double ValLoss(const DownstreamModel& model, std::span<const CachedSample> cache, int batch_size) {
  const int n = static_cast<int>(cache.size());
  double sum = 0.0;
  std::int64_t pixels = 0;
  for (int b = 0; b < n; b += batch_size) {
    std::vector<int> batch;
    std::vector<int> labels;
    for (int i = b; i < std::min(n, b + batch_size); ++i) {
      batch.push_back(i);
      const auto& l = cache[static_cast<std::size_t>(i)].labels;
      labels.insert(labels.end(), l.begin(), l.end());
    }
    const std::vector<Tensor> skips = StackSkips(cache, batch);
    nn::Graph g(false);
    ParameterBinding p(g, model.head.parameters);
    std::vector<nn::Var> vars;
    for (const Tensor& t : skips) vars.push_back(g.Borrow(&t));
    nn::Var logits = ForwardDecoder(g, model.head.spec, model.encoder.config, p, vars);
    nn::Var loss = nn::SoftmaxCrossEntropy(g, logits, labels);
    sum += g.value(loss)[0] * static_cast<double>(labels.size());
    pixels += static_cast<std::int64_t>(labels.size());
  }
  return sum / static_cast<double>(pixels);
}

}  // namespace

DenseEvaluation EvaluateDense(const DownstreamModel& model, std::span<const DenseSample> samples,
                              int batch_size) {
  if (samples.empty()) Fail(ErrorKind::kConfig, "no samples to evaluate");
  CheckKind(model.head.spec, samples);
  const std::vector<CachedSample> cache = CacheSamples(model, samples);
  DenseEvaluation ev;
  const ConfusionMatrix cm = Score(model, cache, batch_size, &ev.predictions);
  ev.report = ComputeReport(cm);
  for (const auto& s : samples) ev.sample_ids.push_back(s.sample_id);
  return ev;
}

FinetuneResult Finetune(const EncoderBundle& encoder, const HeadSpec& head_spec,
                        const DenseSplit& data, const TrainConfig& config) {
  config.Validate();
  if (config.phase != Phase::kFinetune) Fail(ErrorKind::kConfig, "phase: expected finetune");
  if (!encoder.frozen) {
    Fail(ErrorKind::kContract, "fine-tuning requires a frozen encoder (frozen = false)");
  }
  if (data.train.empty()) Fail(ErrorKind::kConfig, "training split empty");
  if (data.val.empty()) Fail(ErrorKind::kConfig, "validation split empty");
  CheckKind(head_spec, data.train);
  CheckKind(head_spec, data.val);

  FinetuneResult result;
  RunRecord& rec = result.record;
  rec.run_id = config.run_dir.empty() ? NewRunId(config.phase, config.seed)
                                      : config.run_dir.filename().string();
  rec.config = config.ToJson();
  rec.config["head"] = head_spec.ToJson();
  for (const auto& s : data.train) rec.train_ids.push_back(s.sample_id);
  for (const auto& s : data.val) rec.val_ids.push_back(s.sample_id);
  rec.encoder_digest_before = DigestParameters(encoder.parameters);

  DownstreamModel model = head_spec.architecture == Architecture::kFcSiamDiff
                              ? BuildChangeModel(encoder, head_spec, config.seed)
                              : BuildSegmentationModel(encoder, head_spec, config.seed);
  const std::vector<CachedSample> train = CacheSamples(model, data.train);
  const std::vector<CachedSample> val = CacheSamples(model, data.val);
  RunWriter writer(config.run_dir);
  AdamW opt(AdamWConfig{config.learning_rate, config.weight_decay});
  double best = -1.0;
  const int n = static_cast<int>(train.size());

  for (int epoch = 1; epoch <= config.epochs; ++epoch) {
    const auto t0 = std::chrono::steady_clock::now();
    const std::vector<int> order = EpochOrder(n, config.seed, epoch);
    double loss_sum = 0.0;
    int steps = 0;
    for (int b = 0; b < n; b += config.batch_size) {
      const std::vector<int> batch(order.begin() + b,
                                   order.begin() + std::min(n, b + config.batch_size));
      const std::vector<Tensor> skips = StackSkips(train, batch);
      std::vector<int> labels;
      for (int i : batch) {
        const auto& l = train[static_cast<std::size_t>(i)].labels;
        labels.insert(labels.end(), l.begin(), l.end());
      }
      nn::Graph g(true);
      ParameterBinding p(g, model.head.parameters, true);
      std::vector<nn::Var> vars;
      for (const Tensor& t : skips) vars.push_back(g.Borrow(&t));
      nn::Var logits = ForwardDecoder(g, model.head.spec, model.encoder.config, p, vars);
      nn::Var loss = nn::SoftmaxCrossEntropy(g, logits, labels);
      const double lv = g.value(loss)[0];
      if (!std::isfinite(lv)) {
        json snap = {{"reason", "non-finite loss"}, {"epoch", epoch}, {"step", steps}};
        json ids = json::array();
        for (int i : batch) ids.push_back(data.train[static_cast<std::size_t>(i)].sample_id);
        snap["batch_ids"] = ids;
        writer.Failure(snap);
        Fail(ErrorKind::kNumerical, "training diverged: " + snap.dump());
      }
      g.Backward(loss);
      ParameterMap grads = p.Gradients();
      if (config.grad_clip_norm > 0.0) {
        const double norm = std::sqrt(SquaredNorm(grads));
        if (norm > config.grad_clip_norm) Scale(grads, config.grad_clip_norm / norm);
      }
      opt.Step(model.head.parameters, grads);
      rec.steps.push_back({epoch, steps, batch, lv});
      loss_sum += lv;
      ++steps;
    }
    EpochLog log;
    log.epoch = epoch;
    log.train_loss = loss_sum / steps;
    log.val_loss = ValLoss(model, val, config.batch_size);
    log.val = ComputeReport(Score(model, val, config.batch_size, nullptr));
    log.seconds = Seconds(t0);
    rec.epochs.push_back(log);
    writer.Log(log);
    if (writer.enabled()) {
      const Checkpoint ck = ModelCheckpoint(model, RunState{epoch, config.seed});
      if (epoch % config.checkpoint_every == 0 || epoch == config.epochs) {
        const fs::path dir = writer.CheckpointDir("ckpt-" + std::to_string(epoch));
        SaveCheckpoint(ck, dir);
        if (epoch == config.epochs) rec.final_checkpoint = dir;
      }
      if (log.val->miou > best) {
        best = log.val->miou;
        rec.best_checkpoint = writer.CheckpointDir("ckpt-best");
        SaveCheckpoint(ck, rec.best_checkpoint);
      }
    }
  }
  rec.encoder_digest_after = DigestParameters(model.encoder.parameters);
  if (rec.encoder_digest_after != rec.encoder_digest_before ||
      DigestParameters(encoder.parameters) != rec.encoder_digest_before) {
    Fail(ErrorKind::kContract, "encoder parameters changed during fine-tuning");
  }
  writer.Record(rec);
  result.model = std::move(model);
  return result;
}

}  // namespace csip
