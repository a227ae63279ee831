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

// End-to-end acceptance checks. Prints one PASS/FAIL line per criterion and
// exits nonzero if any fails.

#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <functional>
#include <sstream>
#include <string>
#include <vector>

#include "csip/checkpoint.hpp"
#include "csip/config.hpp"
#include "csip/contrastive.hpp"
#include "csip/downstream.hpp"
#include "csip/error.hpp"
#include "csip/metrics.hpp"
#include "csip/pipeline.hpp"
#include "csip/raster.hpp"
#include "csip/rng.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace csip;

namespace {

// Tolerances and thresholds.
constexpr double kLossOracleTol = 1e-6;
constexpr double kLossOracleSeconds = 10.0;
constexpr double kFdStep = 1e-5;
constexpr double kFdRelTol = 1e-4;
constexpr double kFdSeconds = 60.0;
constexpr double kZeroLossTol = 1e-9;
constexpr double kLogThreeTol = 1e-6;
constexpr double kMinTop1 = 0.3125;
constexpr double kPretrainSeconds = 20 * 60.0;
constexpr double kMinChangeIou = 0.5;
constexpr double kMinIouMargin = 0.05;
constexpr double kFinetuneSeconds = 30 * 60.0;
constexpr int kSeedsRequired = 2;
const std::vector<std::uint64_t> kSeeds = {1, 2, 3};

int failures = 0;

void Report(int id, bool pass, const std::string& what) {
  std::printf("%s criterion %d: %s\n", pass ? "PASS" : "FAIL", id, what.c_str());
  std::fflush(stdout);
  if (!pass) ++failures;
}

double Since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

std::string Fmt(const char* f, double a, double b = 0, double c = 0, double d = 0) {
  char buf[256];
  std::snprintf(buf, sizeof buf, f, a, b, c, d);
  return buf;
}

Eigen::MatrixXd UnitRows(Rng& rng, int n, int d) {
  Eigen::MatrixXd m(n, d);
  for (int r = 0; r < n; ++r) {
    for (int c = 0; c < d; ++c) m(r, c) = rng.Normal();
    m.row(r).normalize();
  }
  return m;
}

EmbeddingBatch Batch(Modality mod, const Eigen::MatrixXd& v) {
  EmbeddingBatch b;
  b.modality = mod;
  b.vectors = v;
  for (int i = 0; i < v.rows(); ++i) b.sample_ids.push_back(std::to_string(i));
  return b;
}

double DirectLoss(const Eigen::MatrixXd& zr, const Eigen::MatrixXd& za, double tau) {
  const int n = static_cast<int>(zr.rows());
  std::vector<Eigen::VectorXd> z;
  for (int i = 0; i < n; ++i) z.push_back(zr.row(i).transpose());
  for (int i = 0; i < n; ++i) z.push_back(za.row(i).transpose());
  const auto sim = [&](int a, int b) { return z[a].dot(z[b]) / (z[a].norm() * z[b].norm()); };
  double total = 0.0;
  for (int i = 0; i < 2 * n; ++i) {
    const int j = i < n ? i + n : i - n;
    double denom = 0.0;
    for (int k = 0; k < 2 * n; ++k) {
      if (k != i) denom += std::exp(sim(i, k) / tau);
    }
    total += -std::log(std::exp(sim(i, j) / tau) / denom);
  }
  return total / (2.0 * n);
}

void LossOracle() {
  const auto t0 = std::chrono::steady_clock::now();
  Rng rng(101);
  double worst = 0.0;
  int batches = 0;
  while (batches < 200) {
    for (int n : {1, 2, 4, 8}) {
      for (int d : {4, 8, 16}) {
        for (double tau : {0.05, 0.5}) {
          const auto zr = UnitRows(rng, n, d), za = UnitRows(rng, n, d);
          const double got = NtXent(Batch(Modality::kRgb, zr), Batch(Modality::kAgl, za),
                                    Temperature::FromTau(tau))
                                 .total;
          worst = std::max(worst, std::abs(got - DirectLoss(zr, za, tau)));
          ++batches;
        }
      }
    }
  }
  const double s = Since(t0);
  Report(1, worst <= kLossOracleTol && s < kLossOracleSeconds,
         Fmt("loss oracle on %.0f batches, max abs error %.2e, %.2f s", batches, worst, s));
}

double RawLoss(const Eigen::MatrixXd& a, const Eigen::MatrixXd& b, double tau) {
  Eigen::MatrixXd z(a.rows() * 2, a.cols());
  z << a, b;
  return NtXentFromSimilarity(z * z.transpose(), tau);
}

void GradientCheck() {
  const auto t0 = std::chrono::steady_clock::now();
  Rng rng(202);
  double worst = 0.0;
  const auto rel = [](double a, double b) {
    return std::abs(a - b) / std::max({std::abs(a), std::abs(b), 1e-8});
  };
  for (int rep = 0; rep < 50; ++rep) {
    const int n = 2 + rep % 4, d = 3 + rep % 4;
    const Temperature temp = Temperature::FromTau(rep % 2 ? 0.1 : 0.5);
    const auto zr = UnitRows(rng, n, d), za = UnitRows(rng, n, d);
    const auto [loss, grad] =
        NtXentWithGradient(Batch(Modality::kRgb, zr), Batch(Modality::kAgl, za), temp);
    for (int which = 0; which < 2; ++which) {
      for (int r = 0; r < n; ++r) {
        for (int c = 0; c < d; ++c) {
          Eigen::MatrixXd p = which ? za : zr, m = p;
          p(r, c) += kFdStep;
          m(r, c) -= kFdStep;
          const double fd = which ? (RawLoss(zr, p, temp.tau()) - RawLoss(zr, m, temp.tau()))
                                  : (RawLoss(p, za, temp.tau()) - RawLoss(m, za, temp.tau()));
          const double an = which ? grad.d_agl(r, c) : grad.d_rgb(r, c);
          if (std::abs(fd / (2 * kFdStep)) > 1e-7 || std::abs(an) > 1e-7) {
            worst = std::max(worst, rel(an, fd / (2 * kFdStep)));
          }
        }
      }
    }
    Temperature up = temp, down = temp;
    up.log_tau += kFdStep;
    down.log_tau -= kFdStep;
    const double fd = (RawLoss(zr, za, up.tau()) - RawLoss(zr, za, down.tau())) / (2 * kFdStep);
    worst = std::max(worst, rel(grad.d_log_tau, fd));
  }
  const double s = Since(t0);
  Report(2, worst < kFdRelTol && s < kFdSeconds,
         Fmt("finite differences on 50 batches, max rel error %.2e, %.2f s", worst, s));
}

void AnalyticValues() {
  Rng rng(303);
  const auto a = UnitRows(rng, 1, 8), b = UnitRows(rng, 1, 8);
  const double one = NtXent(Batch(Modality::kRgb, a), Batch(Modality::kAgl, b), Temperature{}).total;
  Eigen::MatrixXd z = Eigen::MatrixXd::Zero(2, 4);
  z.col(0).setOnes();
  const double same = NtXent(Batch(Modality::kRgb, z), Batch(Modality::kAgl, z), Temperature{}).total;
  Report(3, std::abs(one) <= kZeroLossTol && std::abs(same - std::log(3.0)) <= kLogThreeTol,
         Fmt("N=1 loss %.3e, identical N=2 loss %.9f (log 3 = %.9f)", one, same, std::log(3.0)));
}

void MetricsOracle() {
  Rng rng(404);
  bool exact = true;
  for (int rep = 0; rep < 1000 && exact; ++rep) {
    const int k = rng.UniformInt(2, 4);
    const int n = rng.UniformInt(1, 8) * rng.UniformInt(1, 8);
    std::vector<std::uint8_t> t(n), p(n);
    for (auto& v : t) v = static_cast<std::uint8_t>(rng.UniformInt(0, k - 1));
    for (auto& v : p) v = static_cast<std::uint8_t>(rng.UniformInt(0, k - 1));
    std::vector<double> ious, f1s, recalls;
    double f1_pos = std::nan("");
    for (int c = 0; c < k; ++c) {
      long inter = 0, uni = 0, truth = 0, pred = 0;
      for (int i = 0; i < n; ++i) {
        inter += t[i] == c && p[i] == c;
        uni += t[i] == c || p[i] == c;
        truth += t[i] == c;
        pred += p[i] == c;
      }
      if (uni) {
        ious.push_back(static_cast<double>(inter) / static_cast<double>(uni));
        f1s.push_back(2.0 * inter / static_cast<double>(truth + pred));
        if (c == 1) f1_pos = f1s.back();
      }
      if (truth) recalls.push_back(static_cast<double>(inter) / static_cast<double>(truth));
    }
    const auto mean = [](const std::vector<double>& v) {
      double s = 0;
      for (double x : v) s += x;
      return s / static_cast<double>(v.size());
    };
    const double f1 = k == 2 ? (std::isnan(f1_pos) ? 1.0 : f1_pos) : mean(f1s);
    ConfusionMatrix cm(k);
    cm.Accumulate(t, p);
    const MetricsReport r = ComputeReport(cm);
    exact = r.miou == mean(ious) && r.f1 == f1 && r.average_accuracy == mean(recalls);
  }
  const MetricsReport ex = ComputeReport(ConfusionMatrix::FromCounts({{1, 1}, {0, 2}}));
  const bool example = ex.f1 == 0.8 && ex.miou == (0.5 + 2.0 / 3.0) / 2.0;
  Report(7, exact && example,
         std::string("1000 random mask pairs ") + (exact ? "exact" : "mismatch") +
             Fmt("; [[1,1],[0,2]] F1 %.4f mIoU %.4f", ex.f1, ex.miou));
}

void SiamProperties(const json& config) {
  EncoderBundle enc = BuildEncoder(EncoderConfigFrom(config, Modality::kRgb), 9);
  enc.frozen = true;
  const DownstreamModel model = BuildChangeModel(enc, HeadSpecFrom(config), 10);
  Rng rng(505);
  bool zero = true, symmetric = true;
  for (int rep = 0; rep < 3; ++rep) {
    Tensor pre({2, 3, 64, 64}), post({2, 3, 64, 64});
    for (auto& v : pre.storage()) v = static_cast<float>(rng.Uniform());
    for (auto& v : post.storage()) v = static_cast<float>(rng.Uniform());
    for (const Tensor& s : FusedSkips(model, pre, pre)) {
      for (float v : s.storage()) zero = zero && v == 0.0f;
    }
    const Tensor a = Predict(model, pre, &post).logits;
    const Tensor b = Predict(model, post, &pre).logits;
    symmetric = symmetric && a.shape() == b.shape() &&
                std::memcmp(a.data(), b.data(), sizeof(float) * a.numel()) == 0;
  }
  Report(8, zero && symmetric,
         std::string("pre==post fused skips all zero: ") + (zero ? "yes" : "no") +
             "; swapped logits bit-identical: " + (symmetric ? "yes" : "no"));
}

std::string Slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

std::vector<json> LossLines(const fs::path& log) {
  std::vector<json> out;
  std::ifstream in(log);
  std::string line;
  while (std::getline(in, line)) {
    json j = json::parse(line);
    j.erase("seconds");
    out.push_back(j);
  }
  return out;
}

// Every encoder blob of `ck_dir` under `role` hashes to the given parameters.
bool BlobsMatch(const ParameterMap& params, const fs::path& ck_dir, const std::string& role) {
  const json m = ReadManifest(ck_dir).at("bundles").at(role).at("parameters");
  if (m.size() != params.size()) return false;
  for (const auto& [name, t] : params) {
    if (!m.contains(name)) return false;
    const std::string sha = Sha256Hex(t.data(), sizeof(float) * t.numel());
    if (m[name].at("sha256") != sha) return false;
    if (Sha256File(ck_dir / m[name].at("file").get<std::string>()) != sha) return false;
  }
  return true;
}

struct SeedRun {
  std::uint64_t seed = 0;
  double top1 = 0.0;
  double pretrain_seconds = 0.0;
  double iou_csip = 0.0;
  double iou_random = 0.0;
  double finetune_seconds = 0.0;
  bool frozen = true;
  fs::path pretrain_ckpt;
};

json SeedConfig(const fs::path& preset, std::uint64_t seed,
                std::vector<std::string> extra = {}) {
  std::vector<std::string> o = {"seed=" + std::to_string(seed), "runs_dir=runs",
                                "data.paired=data/paired", "data.change=data/change",
                                "data.finetune_kind=change"};
  o.insert(o.end(), extra.begin(), extra.end());
  return LoadConfig(preset, o);
}

double ChangeIou(const FinetuneResult& r) {
  return r.record.epochs.back().val->per_class_iou.at(1).value_or(0.0);
}

SeedRun RunSeed(const fs::path& preset, const fs::path& dir, std::uint64_t seed, bool baseline) {
  fs::remove_all(dir);
  fs::create_directories(dir);
  fs::current_path(dir);
  SeedRun out;
  out.seed = seed;
  const json config = SeedConfig(preset, seed);
  RunSynth(config, "paired", "data/paired", -1, true);
  RunSynth(config, "change", "data/change", -1, true);

  auto t0 = std::chrono::steady_clock::now();
  const PretrainResult pre = RunPretrain(config, "data/paired", "runs/pretrain");
  out.pretrain_seconds = Since(t0);
  out.top1 = pre.record.epochs.empty() ? 0.0 : pre.record.epochs.back().val_top1.value_or(0.0);
  out.pretrain_ckpt = dir / pre.record.final_checkpoint;

  t0 = std::chrono::steady_clock::now();
  const FinetuneResult ft =
      RunFinetune(config, "data/change", pre.record.final_checkpoint, "runs/finetune-csip");
  out.finetune_seconds += Since(t0);
  out.iou_csip = ChangeIou(ft);
  const EncoderBundle before =
      EncoderFromCheckpoint(LoadCheckpoint(pre.record.final_checkpoint), "rgb");
  out.frozen = BlobsMatch(before.parameters, pre.record.final_checkpoint, "rgb") &&
               BlobsMatch(before.parameters, ft.record.final_checkpoint, "encoder") &&
               ft.record.encoder_digest_before == ft.record.encoder_digest_after;
  RunEvaluate(config, ft.record.final_checkpoint, "data/change", "eval-csip");

  if (baseline) {
    const json rc = SeedConfig(preset, seed, {"finetune.weight_init=random"});
    t0 = std::chrono::steady_clock::now();
    const FinetuneResult rnd = RunFinetune(rc, "data/change", "", "runs/finetune-random");
    out.finetune_seconds += Since(t0);
    out.iou_random = ChangeIou(rnd);
    const EncoderBundle init =
        BuildEncoder(EncoderConfigFrom(rc, Modality::kRgb), DeriveSeed(seed, 1));
    out.frozen = out.frozen && BlobsMatch(init.parameters, rnd.record.final_checkpoint, "encoder") &&
                 rnd.record.encoder_digest_before == rnd.record.encoder_digest_after;
  }
  std::printf("  seed %llu: top1 %.4f (%.0f s), change IoU csip %.4f random %.4f (%.0f s)\n",
              static_cast<unsigned long long>(seed), out.top1, out.pretrain_seconds, out.iou_csip,
              out.iou_random, out.finetune_seconds);
  std::fflush(stdout);
  return out;
}

bool SameBlobs(const fs::path& a, const fs::path& b) {
  const json ma = StripMetadata(ReadManifest(a)), mb = StripMetadata(ReadManifest(b));
  if (ma != mb) return false;
  for (const auto& [role, bundle] : ma.at("bundles").items()) {
    for (const auto& [name, entry] : bundle.at("parameters").items()) {
      const std::string f = entry.at("file").get<std::string>();
      if (Slurp(a / f) != Slurp(b / f)) return false;
    }
  }
  return true;
}

void CheckpointRoundTrip(const fs::path& original, const fs::path& scratch) {
  const fs::path a = scratch / "roundtrip-a", b = scratch / "roundtrip-b";
  fs::remove_all(a);
  fs::remove_all(b);
  const Checkpoint first = LoadCheckpoint(original);
  SaveCheckpoint(first, a);
  const Checkpoint second = LoadCheckpoint(a);
  SaveCheckpoint(second, b);
  const auto bits = [](const Checkpoint& c) {
    std::uint64_t u = 0;
    std::memcpy(&u, &c.temperature->log_tau, sizeof u);
    return u;
  };
  const bool tau_ok = first.temperature && second.temperature && bits(first) == bits(second);
  const bool blobs_ok = SameBlobs(original, a) && SameBlobs(a, b);
  Report(10, tau_ok && blobs_ok,
         std::string("save/load/save of the pretraining checkpoint: blobs ") +
             (blobs_ok ? "identical" : "differ") + ", log_tau bits " +
             (tau_ok ? "identical" : "differ"));
}

}  // namespace

int main(int argc, char** argv) {
  const fs::path source = argc > 1 ? fs::path(argv[1]) : fs::path(CSIP_SOURCE_DIR);
  const fs::path preset = fs::absolute(source / "configs" / "desk.json");
  const fs::path scratch = fs::absolute(argc > 2 ? fs::path(argv[2])
                                                 : fs::temp_directory_path() / "csip_acceptance");
  const fs::path start = fs::current_path();
  try {
    const json desk = LoadConfig(preset, {});
    LossOracle();
    GradientCheck();
    AnalyticValues();
    MetricsOracle();
    SiamProperties(desk);

    std::vector<SeedRun> runs;
    for (std::uint64_t seed : kSeeds) {
      runs.push_back(RunSeed(preset, scratch / ("seed" + std::to_string(seed)), seed, true));
    }
    int top1_ok = 0, change_ok = 0;
    double pre_s = 0, ft_s = 0;
    bool frozen = true;
    std::string top1_txt, change_txt;
    for (const SeedRun& r : runs) {
      top1_ok += r.top1 >= kMinTop1;
      const double margin = r.iou_csip - r.iou_random;
      change_ok += r.iou_csip >= kMinChangeIou && margin >= kMinIouMargin;
      pre_s += r.pretrain_seconds;
      ft_s += r.finetune_seconds;
      frozen = frozen && r.frozen;
      top1_txt += Fmt(" %.4f", r.top1);
      change_txt += Fmt(" %.4f/%.4f (%+.4f)", r.iou_csip, r.iou_random, margin);
    }
    Report(4, top1_ok >= kSeedsRequired && pre_s <= kPretrainSeconds,
           "held-out top-1 per seed" + top1_txt + Fmt(", %.0f of 3 >= %.4f, %.0f s", top1_ok,
                                                       kMinTop1, pre_s));
    Report(5, change_ok >= kSeedsRequired && ft_s <= kFinetuneSeconds,
           "change IoU csip/random per seed" + change_txt +
               Fmt(", %.0f of 3 meet >= %.2f and margin >= %.2f, %.0f s", change_ok,
                   kMinChangeIou, kMinIouMargin, ft_s));
    Report(6, frozen, std::string("encoder blob hashes before/after all six fine-tuning runs ") +
                          (frozen ? "identical" : "differ"));

    const fs::path first = scratch / "seed1", again = scratch / "seed1-repeat";
    RunSeed(preset, again, 1, false);
    const bool logs = LossLines(first / "runs/pretrain/log.jsonl") ==
                          LossLines(again / "runs/pretrain/log.jsonl") &&
                      LossLines(first / "runs/finetune-csip/log.jsonl") ==
                          LossLines(again / "runs/finetune-csip/log.jsonl");
    const bool metrics =
        Slurp(first / "eval-csip/metrics.json") == Slurp(again / "eval-csip/metrics.json") &&
        !Slurp(first / "eval-csip/metrics.json").empty();
    Report(9, logs && metrics, std::string("repeated seed-1 pipeline: log.jsonl losses ") +
                                   (logs ? "identical" : "differ") + ", metrics.json " +
                                   (metrics ? "identical" : "differ"));

    CheckpointRoundTrip(runs[0].pretrain_ckpt, scratch);
  } catch (const std::exception& e) {
    std::printf("FAIL aborted: %s\n", e.what());
    ++failures;
  }
  fs::current_path(start);
  std::printf("%d criteria failed\n", failures);
  return failures == 0 ? 0 : 1;
}
