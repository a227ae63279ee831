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

#include "csip/pipeline.hpp"

#include <algorithm>
#include <cstdio>
#include <fstream>
#include <iostream>
#include <map>

#include "csip/checkpoint.hpp"
#include "csip/config.hpp"
#include "csip/error.hpp"
#include "csip/metrics.hpp"
#include "csip/plot.hpp"
#include "csip/rng.hpp"

namespace csip {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

std::string NumberedId(const char* prefix, int i) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%s_%05d", prefix, i);
  return buf;
}

void WriteJson(const fs::path& path, const json& j) {
  std::ofstream out(path, std::ios::trunc);
  out << j.dump(2) << "\n";
  if (!out) Fail(ErrorKind::kIo, "cannot write " + path.string());
}

json ReadJson(const fs::path& path) {
  std::ifstream in(path);
  if (!in) Fail(ErrorKind::kPath, "cannot open " + path.string());
  json j = json::parse(in, nullptr, false);
  if (j.is_discarded()) Fail(ErrorKind::kCorruption, path.string() + ": not valid JSON");
  return j;
}

void PrepareOutput(const fs::path& out, bool force) {
  if (fs::exists(out)) {
    if (!fs::is_directory(out)) Fail(ErrorKind::kPath, out.string() + " is not a directory");
    if (!fs::is_empty(out)) {
      if (!force) {
        Fail(ErrorKind::kConfig, "refusing to write into nonempty " + out.string() +
                                     " (pass --force to overwrite)");
      }
      fs::remove_all(out);
    }
  }
  std::error_code ec;
  fs::create_directories(out, ec);
  if (ec) Fail(ErrorKind::kPath, "cannot create " + out.string() + ": " + ec.message());
}

void PrepareRunDir(const fs::path& run_dir, const json& config) {
  std::error_code ec;
  fs::create_directories(run_dir, ec);
  if (ec) Fail(ErrorKind::kPath, "cannot create run dir " + run_dir.string());
  WriteJson(run_dir / "config.json", config);
}

std::uint64_t Seed(const json& config) { return config.at("seed").get<std::uint64_t>(); }

DatasetDescriptor RequireKind(const fs::path& data, std::initializer_list<DatasetKind> kinds,
                              const char* what) {
  DatasetDescriptor d = DatasetDescriptor::Load(data);
  if (std::find(kinds.begin(), kinds.end(), d.kind) == kinds.end()) {
    Fail(ErrorKind::kConfig, std::string("dataset kind mismatch: ") + what + " got a " +
                                 DatasetKindName(d.kind) + " dataset at " + data.string());
  }
  return d;
}

bool NeedsCrop(const PatchSpec& spec, int h, int w) {
  return spec.size < h || spec.size < w || spec.patches_per_image > 1;
}


}  // namespace

SynthReport RunSynth(const json& config, const std::string& kind_name, const fs::path& out, int n,
                     bool force) {
  const DatasetKind kind = ParseDatasetKind(kind_name);
  const SyntheticConfig sc = SyntheticConfigFrom(config);
  sc.Validate();
  const json& counts = config.at("synthetic");
  if (n < 0) {
    n = counts.at(kind == DatasetKind::kPairedAgl         ? "n_paired"
                  : kind == DatasetKind::kBitemporalChange ? "n_change"
                                                           : "n_segmentation")
            .get<int>();
  }
  if (n <= 0) Fail(ErrorKind::kConfig, "n: must be >= 1 (got " + std::to_string(n) + ")");
  PrepareOutput(out, force);
  const std::uint64_t seed = Seed(config);
  SynthReport report{out, kind, n};
  if (kind == DatasetKind::kPairedAgl) {
    std::vector<PairedSample> samples;
    for (int i = 0; i < n; ++i) {
      SyntheticScene s = GenerateSyntheticScene(DeriveSeed(seed, static_cast<std::uint64_t>(i)), sc);
      s.sample.sample_id = NumberedId("pair", i);
      samples.push_back(std::move(s.sample));
    }
    WritePairedDataset(out, samples, sc.h_max);
  } else if (kind == DatasetKind::kBitemporalChange) {
    std::vector<BitemporalSample> samples;
    const std::uint64_t base = DeriveSeed(seed, HashName("change"));
    for (int i = 0; i < n; ++i) {
      SyntheticChange c = GenerateSyntheticChange(
          DeriveSeed(base, static_cast<std::uint64_t>(2 * i)),
          DeriveSeed(base, static_cast<std::uint64_t>(2 * i + 1)), sc);
      c.sample.sample_id = NumberedId("change", i);
      samples.push_back(std::move(c.sample));
    }
    WriteBitemporalDataset(out, samples, 2, {"no_change", "change"});
  } else {
    std::vector<SegmentationSample> samples;
    const std::uint64_t base = DeriveSeed(seed, HashName("segmentation"));
    for (int i = 0; i < n; ++i) {
      SyntheticScene s = GenerateSyntheticScene(DeriveSeed(base, static_cast<std::uint64_t>(i)), sc);
      samples.push_back({NumberedId("seg", i), std::move(s.sample.rgb), std::move(s.classes),
                         std::nullopt});
    }
    WriteSegmentationDataset(out, samples, 3, {"ground", "building", "shadow"});
  }
  return report;
}

std::vector<PairedSample> LoadPairedSamples(const json& config, const fs::path& data) {
  const DatasetDescriptor d = RequireKind(data, {DatasetKind::kPairedAgl}, "pretraining");
  const SampleIndex index = IndexDataset(d);
  const PatchSpec spec = PatchSpecFrom(config);
  std::vector<PairedSample> out;
  for (const auto& r : index.records) {
    PairedSample s = LoadPair(r, d.h_max);
    if (!NeedsCrop(spec, s.rgb.height, s.rgb.width)) {
      out.push_back(std::move(s));
      continue;
    }
    for (auto& p : ExtractPatches(s, spec)) out.push_back(std::move(p));
  }
  return out;
}

std::vector<DenseSample> LoadDenseSamples(const json& config, const fs::path& data,
                                          DatasetDescriptor* descriptor) {
  const DatasetDescriptor d = RequireKind(
      data, {DatasetKind::kBitemporalChange, DatasetKind::kMonoSegmentation}, "fine-tuning");
  if (d.num_classes < 2) Fail(ErrorKind::kSchema, data.string() + ": num_classes must be >= 2");
  if (descriptor) *descriptor = d;
  const SampleIndex index = IndexDataset(d);
  const PatchSpec spec = PatchSpecFrom(config);
  std::vector<DenseSample> out;
  for (const auto& r : index.records) {
    if (d.kind == DatasetKind::kBitemporalChange) {
      BitemporalSample s = LoadBitemporal(r, d.num_classes);
      std::vector<BitemporalSample> parts;
      if (NeedsCrop(spec, s.pre.height, s.pre.width)) {
        parts = ExtractPatches(s, spec);
      } else {
        parts.push_back(std::move(s));
      }
      for (auto& p : ToDenseSamples(parts)) out.push_back(std::move(p));
    } else {
      SegmentationSample s = LoadSegmentation(r, d.num_classes);
      std::vector<SegmentationSample> parts;
      if (NeedsCrop(spec, s.image.height, s.image.width)) {
        parts = ExtractPatches(s, spec);
      } else {
        parts.push_back(std::move(s));
      }
      for (auto& p : ToDenseSamples(parts)) out.push_back(std::move(p));
    }
  }
  return out;
}

PretrainResult RunPretrain(const json& config, const fs::path& data, const fs::path& run_dir) {
  const std::vector<PairedSample> samples = LoadPairedSamples(config, data);
  const std::uint64_t seed = Seed(config);
  TrainConfig tc = TrainConfigFrom(config, Phase::kPretrain);
  tc.run_dir = run_dir;
  const PairedSplit split = SplitPairs(samples, tc.val_fraction, seed);
  EncoderBundle rgb = BuildEncoder(EncoderConfigFrom(config, Modality::kRgb), DeriveSeed(seed, 1));
  EncoderBundle agl = BuildEncoder(EncoderConfigFrom(config, Modality::kAgl), DeriveSeed(seed, 2));
  if (!run_dir.empty()) PrepareRunDir(run_dir, config);
  return Pretrain(std::move(rgb), std::move(agl), split, tc, TemperatureFrom(config));
}

FinetuneResult RunFinetune(const json& config, const fs::path& data, const fs::path& checkpoint,
                           const fs::path& run_dir) {
  DatasetDescriptor d;
  std::vector<DenseSample> samples = LoadDenseSamples(config, data, &d);
  const std::uint64_t seed = Seed(config);
  TrainConfig tc = TrainConfigFrom(config, Phase::kFinetune);
  tc.run_dir = run_dir;

  HeadSpec spec = HeadSpecFrom(config);
  const Architecture expected = d.kind == DatasetKind::kBitemporalChange ? Architecture::kFcSiamDiff
                                                                        : Architecture::kUnet;
  if (spec.architecture != expected) {
    Fail(ErrorKind::kConfig, std::string("dataset kind mismatch: head.architecture ") +
                                 ArchitectureName(spec.architecture) + " cannot train on a " +
                                 DatasetKindName(d.kind) + " dataset");
  }
  if (spec.num_classes == 0) spec.num_classes = d.num_classes;
  if (spec.num_classes != d.num_classes) {
    Fail(ErrorKind::kConfig, "head.num_classes " + std::to_string(spec.num_classes) +
                                 " differs from the dataset's " + std::to_string(d.num_classes));
  }

  EncoderBundle encoder;
  if (config.at("finetune").at("weight_init").get<std::string>() == "csip") {
    if (checkpoint.empty()) Fail(ErrorKind::kPath, "weight_init csip needs --checkpoint");
    encoder = EncoderFromCheckpoint(LoadCheckpoint(checkpoint), "rgb");
  } else {
    encoder = BuildEncoder(EncoderConfigFrom(config, Modality::kRgb), DeriveSeed(seed, 1));
  }
  encoder.frozen = true;
  const DenseSplit split = SplitDense(std::move(samples), tc.val_fraction, seed);
  for (const auto& w : split.warnings) std::cerr << "warning: " << w << "\n";
  if (!run_dir.empty()) PrepareRunDir(run_dir, config);
  return Finetune(encoder, spec, split, tc);
}

EvaluateReport RunEvaluate(const json& config, const fs::path& checkpoint, const fs::path& data,
                           const fs::path& out) {
  if (checkpoint.empty() || !fs::exists(checkpoint / kManifestName)) {
    Fail(ErrorKind::kPath, "checkpoint not found: " + checkpoint.string());
  }
  const DownstreamModel model = ModelFromCheckpoint(LoadCheckpoint(checkpoint));
  DatasetDescriptor d;
  std::vector<DenseSample> samples = LoadDenseSamples(config, data, &d);
  DenseSplit split = SplitDense(std::move(samples), config.at("finetune").at("val_fraction").get<double>(),
                                Seed(config));
  EvaluateReport report;
  report.warnings = split.warnings;
  std::string split_name = config.at("evaluate").at("split").get<std::string>();
  std::vector<DenseSample>* chosen = split_name == "test" ? &split.test : &split.val;
  if (chosen->empty() && split_name == "test") {
    report.warnings.push_back("dataset has no test split; evaluating the seeded val split");
    split_name = "val";
    chosen = &split.val;
  }
  if (chosen->empty()) Fail(ErrorKind::kConfig, "no samples in the " + split_name + " split");
  const DenseEvaluation ev =
      EvaluateDense(model, *chosen, config.at("evaluate").at("batch_size").get<int>());

  std::string weight_init = "unknown";
  std::string run_id = checkpoint.parent_path().filename().string();
  const fs::path run_config = checkpoint.parent_path() / "config.json";
  if (fs::exists(run_config)) {
    weight_init = ReadJson(run_config).at("finetune").value("weight_init", weight_init);
  }
  json ids = json::array();
  for (const auto& id : ev.sample_ids) ids.push_back(id);
  report.metrics = {{"run_id", run_id},
                    {"checkpoint", checkpoint.string()},
                    {"dataset", data.string()},
                    {"dataset_kind", DatasetKindName(d.kind)},
                    {"dataset_name", data.filename().string()},
                    {"split", split_name},
                    {"weight_init", weight_init},
                    {"architecture", ArchitectureName(model.head.spec.architecture)},
                    {"num_samples", ev.sample_ids.size()},
                    {"sample_ids", ids},
                    {"warnings", report.warnings},
                    {"metrics", ev.report.ToJson()}};
  const std::vector<TableRow> rows{{data.filename().string(), weight_init, ev.report}};
  report.table = RenderMetricsTable(rows, true);

  fs::create_directories(out / "predictions");
  WriteJson(out / "metrics.json", report.metrics);
  std::ofstream(out / "table.txt", std::ios::trunc) << report.table;
  for (std::size_t i = 0; i < ev.sample_ids.size(); ++i) {
    WritePng(out / "predictions" / (ev.sample_ids[i] + ".png"), ev.predictions[i]);
  }
  return report;
}

EmbedReport RunEmbed(const json& config, const fs::path& checkpoint, const fs::path& data,
                     const fs::path& out) {
  if (checkpoint.empty() || !fs::exists(checkpoint / kManifestName)) {
    Fail(ErrorKind::kPath, "checkpoint not found: " + checkpoint.string());
  }
  const Checkpoint ck = LoadCheckpoint(checkpoint);
  const EncoderBundle rgb = EncoderFromCheckpoint(ck, "rgb");
  const EncoderBundle agl = EncoderFromCheckpoint(ck, "agl");
  std::vector<PairedSample> samples = LoadPairedSamples(config, data);
  if (config.at("embed").at("split").get<std::string>() == "val") {
    samples = SplitPairs(samples, config.at("pretrain").at("val_fraction").get<double>(),
                         Seed(config))
                  .val;
  }
  const auto [er, ea] = EmbedPairs(rgb, agl, samples);
  fs::create_directories(out);
  EmbedReport report;
  report.archive = out / "embeddings.csv";
  std::ofstream csv(report.archive, std::ios::trunc);
  csv << "sample_id,modality";
  for (int c = 0; c < er.dim(); ++c) csv << ",z" << c;
  csv << "\n";
  char buf[32];
  for (const EmbeddingBatch* b : {&er, &ea}) {
    for (int r = 0; r < b->size(); ++r) {
      csv << b->sample_ids[static_cast<std::size_t>(r)] << "," << ModalityName(b->modality);
      for (int c = 0; c < b->dim(); ++c) {
        std::snprintf(buf, sizeof buf, ",%.9g", b->vectors(r, c));
        csv << buf;
      }
      csv << "\n";
      ++report.rows;
    }
  }
  if (!csv) Fail(ErrorKind::kIo, "cannot write " + report.archive.string());
  report.top1 = ComputeRetrievalAccuracy(er, ea, 1);
  if (er.size() > 5) report.top5 = ComputeRetrievalAccuracy(er, ea, 5);
  return report;
}

std::string RunReport(const std::vector<fs::path>& eval_dirs, const fs::path& out,
                      bool pixel_accuracy) {
  if (eval_dirs.empty()) Fail(ErrorKind::kConfig, "report needs at least one evaluation dir");
  std::vector<TableRow> rows;
  for (const auto& dir : eval_dirs) {
    const json m = ReadJson(dir / "metrics.json");
    TableRow row;
    row.dataset = m.at("dataset_name").get<std::string>();
    row.weight_init = m.at("weight_init").get<std::string>();
    const json& r = m.at("metrics");
    row.report.num_classes = r.at("num_classes").get<int>();
    row.report.miou = r.at("miou").get<double>();
    row.report.f1 = r.at("f1").get<double>();
    row.report.average_accuracy = r.at("average_accuracy").get<double>();
    row.report.pixel_accuracy = r.at("pixel_accuracy").get<double>();
    rows.push_back(std::move(row));
  }
  const std::string table = RenderMetricsTable(rows, pixel_accuracy);
  if (!out.empty()) {
    if (out.has_parent_path()) fs::create_directories(out.parent_path());
    std::ofstream(out, std::ios::trunc) << table;
  }
  return table;
}

std::vector<json> ReadRunLog(const fs::path& run_dir) {
  const fs::path path = run_dir / "log.jsonl";
  std::ifstream in(path);
  if (!in) Fail(ErrorKind::kPath, "no run log at " + path.string());
  std::vector<json> out;
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    json j = json::parse(line, nullptr, false);
    if (j.is_discarded()) Fail(ErrorKind::kCorruption, path.string() + ": malformed line");
    out.push_back(std::move(j));
  }
  return out;
}

std::vector<fs::path> RunPlot(const json& config, const fs::path& eval_dir, const fs::path& run_dir,
                              const fs::path& out) {
  if (!fs::exists(eval_dir / "metrics.json") || !fs::is_directory(eval_dir / "predictions")) {
    Fail(ErrorKind::kPath, "no evaluation outputs (metrics.json, predictions/) in " +
                               eval_dir.string());
  }
  const json m = ReadJson(eval_dir / "metrics.json");
  const std::string run_id = m.at("run_id").get<std::string>();
  const fs::path dir = out / run_id;
  fs::create_directories(dir);
  std::vector<fs::path> written;

  std::map<std::string, DenseSample> by_id;
  for (auto& s : LoadDenseSamples(config, m.at("dataset").get<std::string>())) {
    by_id.emplace(s.sample_id, std::move(s));
  }
  const int limit = config.at("evaluate").at("max_panels").get<int>();
  int drawn = 0;
  for (const auto& id_json : m.at("sample_ids")) {
    if (drawn >= limit) break;
    const std::string id = id_json.get<std::string>();
    const fs::path pred_path = eval_dir / "predictions" / (id + ".png");
    if (!fs::exists(pred_path)) Fail(ErrorKind::kPath, "missing prediction " + pred_path.string());
    auto it = by_id.find(id);
    if (it == by_id.end()) Fail(ErrorKind::kData, "sample " + id + " not in dataset");
    const DenseSample& s = it->second;
    std::vector<Image8> tiles{ToRgb8(s.pre)};
    if (s.post) tiles.push_back(ToRgb8(*s.post));
    tiles.push_back(ColorizeMask(s.mask));
    tiles.push_back(ColorizeMask(ReadPng(pred_path)));
    const fs::path p = dir / (id + ".png");
    WritePng(p, ComposePanel(tiles));
    written.push_back(p);
    ++drawn;
  }
  if (!run_dir.empty()) {
    const fs::path p = dir / "curves.png";
    WritePng(p, RenderRunCurves(ReadRunLog(run_dir)));
    written.push_back(p);
  }
  return written;
}

}  // namespace csip
