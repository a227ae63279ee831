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

#include "csip/data.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <set>
#include <sstream>

#include "csip/error.hpp"
#include "csip/rng.hpp"

namespace csip {

namespace fs = std::filesystem;

namespace {

std::vector<std::string> SplitCsvLine(std::string line) {
  if (!line.empty() && line.back() == '\r') line.pop_back();
  std::vector<std::string> out;
  std::string cur;
  for (char c : line) {
    if (c == ',') {
      out.push_back(cur);
      cur.clear();
    } else {
      cur.push_back(c);
    }
  }
  out.push_back(cur);
  for (std::string& s : out) {
    const auto b = s.find_first_not_of(" \t");
    const auto e = s.find_last_not_of(" \t");
    s = b == std::string::npos ? std::string() : s.substr(b, e - b + 1);
  }
  return out;
}

std::string Join(const std::vector<std::string>& v, const std::string& sep) {
  std::string out;
  for (std::size_t i = 0; i < v.size(); ++i) {
    if (i) out += sep;
    out += v[i];
  }
  return out;
}

ImageF ScaleRgb(const Image8& rgb8) {
  ImageF out(rgb8.height, rgb8.width, rgb8.channels);
  for (std::size_t i = 0; i < rgb8.data.size(); ++i) out.data[i] = rgb8.data[i] / 255.0f;
  return out;
}

ImageF LoadRgb(const fs::path& path) {
  Image8 img = ReadImage8(path);
  if (img.channels != 3) {
    Fail(ErrorKind::kIo, "'" + path.string() + "' has " + std::to_string(img.channels) +
                             " bands, expected 3");
  }
  return ScaleRgb(img);
}

LabelMap LoadMask(const fs::path& path, int num_classes) {
  LabelMap mask = ReadImage8(path);
  if (mask.channels != 1) {
    Fail(ErrorKind::kIo, "mask '" + path.string() + "' must be single-band");
  }
  for (std::uint8_t v : mask.data) {
    if (v >= num_classes) {
      Fail(ErrorKind::kData, "mask '" + path.string() + "' has label " + std::to_string(v) +
                                 " >= num_classes " + std::to_string(num_classes));
    }
  }
  return mask;
}

void WriteIndex(const fs::path& root, const std::vector<std::string>& header,
                const std::vector<std::vector<std::string>>& rows) {
  std::ofstream out(root / "index.csv", std::ios::binary);
  if (!out) Fail(ErrorKind::kIo, "cannot write '" + (root / "index.csv").string() + "'");
  out << Join(header, ",") << "\n";
  for (const auto& r : rows) out << Join(r, ",") << "\n";
}

void EnsureDir(const fs::path& p) {
  std::error_code ec;
  fs::create_directories(p, ec);
  if (ec) Fail(ErrorKind::kIo, "cannot create '" + p.string() + "': " + ec.message());
}

template <typename T>
Raster<T> FlipRaster(const Raster<T>& r, bool horizontal, bool vertical) {
  Raster<T> out(r.height, r.width, r.channels);
  for (int y = 0; y < r.height; ++y) {
    for (int x = 0; x < r.width; ++x) {
      const int sy = vertical ? r.height - 1 - y : y;
      const int sx = horizontal ? r.width - 1 - x : x;
      for (int c = 0; c < r.channels; ++c) out.at(y, x, c) = r.at(sy, sx, c);
    }
  }
  return out;
}

float Quantize8(double v) {
  const double c = std::clamp(v, 0.0, 1.0);
  return static_cast<float>(std::lround(c * 255.0)) / 255.0f;
}

bool Overlaps(const Building& a, const Building& b, int gap) {
  return a.x0 < b.x0 + b.width + gap && b.x0 < a.x0 + a.width + gap &&
         a.y0 < b.y0 + b.height + gap && b.y0 < a.y0 + a.height + gap;
}

bool TryPlace(Rng& rng, const SyntheticConfig& c, const std::vector<Building>& avoid,
              Building* out) {
  for (int attempt = 0; attempt < 64; ++attempt) {
    Building b;
    b.width = rng.UniformInt(c.min_side, c.max_side);
    b.height = rng.UniformInt(c.min_side, c.max_side);
    b.x0 = rng.UniformInt(0, c.size - b.width);
    b.y0 = rng.UniformInt(0, c.size - b.height);
    b.height_m = rng.Uniform(c.min_height, c.max_height);
    const double gray = rng.Uniform(0.5, 0.95);
    for (float& a : b.albedo) a = static_cast<float>(gray + rng.Uniform(-0.05, 0.05));
    const bool clash = std::any_of(avoid.begin(), avoid.end(),
                                   [&](const Building& o) { return Overlaps(b, o, 1); });
    if (!clash) {
      *out = b;
      return true;
    }
  }
  return false;
}

// Smooth value noise in [-1, 1] on a (cells+1)^2 lattice, bilinearly sampled.
std::vector<double> ValueNoise(Rng& rng, int size, int cells) {
  std::vector<double> lattice(static_cast<std::size_t>((cells + 1) * (cells + 1)));
  for (double& v : lattice) v = rng.Uniform(-1.0, 1.0);
  std::vector<double> out(static_cast<std::size_t>(size) * size);
  for (int y = 0; y < size; ++y) {
    const double fy = static_cast<double>(y) * cells / size;
    const int iy = std::min(static_cast<int>(fy), cells - 1);
    const double ty = fy - iy;
    for (int x = 0; x < size; ++x) {
      const double fx = static_cast<double>(x) * cells / size;
      const int ix = std::min(static_cast<int>(fx), cells - 1);
      const double tx = fx - ix;
      const auto l = [&](int a, int b) { return lattice[static_cast<std::size_t>(a * (cells + 1) + b)]; };
      const double top = l(iy, ix) * (1 - tx) + l(iy, ix + 1) * tx;
      const double bot = l(iy + 1, ix) * (1 - tx) + l(iy + 1, ix + 1) * tx;
      out[static_cast<std::size_t>(y) * size + x] = top * (1 - ty) + bot * ty;
    }
  }
  return out;
}

}  // namespace

const char* SplitName(Split s) {
  switch (s) {
    case Split::kTrain: return "train";
    case Split::kVal: return "val";
    case Split::kTest: return "test";
  }
  return "train";
}

Split ParseSplit(const std::string& s) {
  if (s == "train") return Split::kTrain;
  if (s == "val") return Split::kVal;
  if (s == "test") return Split::kTest;
  Fail(ErrorKind::kSchema, "unknown split '" + s + "'");
}

const char* DatasetKindName(DatasetKind k) {
  switch (k) {
    case DatasetKind::kPairedAgl: return "paired_agl";
    case DatasetKind::kBitemporalChange: return "bitemporal_change";
    case DatasetKind::kMonoSegmentation: return "mono_segmentation";
  }
  return "paired_agl";
}

DatasetKind ParseDatasetKind(const std::string& s) {
  if (s == "paired_agl" || s == "paired") return DatasetKind::kPairedAgl;
  if (s == "bitemporal_change" || s == "change") return DatasetKind::kBitemporalChange;
  if (s == "mono_segmentation" || s == "segmentation") return DatasetKind::kMonoSegmentation;
  Fail(ErrorKind::kConfig, "unknown dataset kind '" + s + "'");
}

std::vector<std::string> IndexColumns(DatasetKind kind) {
  switch (kind) {
    case DatasetKind::kPairedAgl: return {"sample_id", "rgb_path", "agl_path"};
    case DatasetKind::kBitemporalChange:
      return {"sample_id", "pre_path", "post_path", "mask_path"};
    case DatasetKind::kMonoSegmentation: return {"sample_id", "image_path", "mask_path"};
  }
  return {};
}

nlohmann::json DatasetDescriptor::ToJson() const {
  return {{"kind", DatasetKindName(kind)},
          {"num_classes", num_classes},
          {"class_names", class_names},
          {"h_max", h_max},
          {"predefined_splits", predefined_splits}};
}

void DatasetDescriptor::Save() const {
  std::ofstream out(root / "dataset.json", std::ios::binary);
  if (!out) Fail(ErrorKind::kIo, "cannot write '" + (root / "dataset.json").string() + "'");
  out << ToJson().dump(2) << "\n";
}

DatasetDescriptor DatasetDescriptor::Load(const fs::path& root) {
  if (!fs::is_directory(root)) {
    Fail(ErrorKind::kPath, "dataset root '" + root.string() + "' does not exist");
  }
  DatasetDescriptor d;
  d.root = root;
  const fs::path meta = root / "dataset.json";
  if (fs::exists(meta)) {
    try {
      std::ifstream in(meta);
      const nlohmann::json j = nlohmann::json::parse(in);
      d.kind = ParseDatasetKind(j.at("kind").get<std::string>());
      d.num_classes = j.value("num_classes", 0);
      d.class_names = j.value("class_names", std::vector<std::string>{});
      d.h_max = j.value("h_max", 200.0);
      d.predefined_splits = j.value("predefined_splits", false);
    } catch (const nlohmann::json::exception& e) {
      Fail(ErrorKind::kSchema, "'" + meta.string() + "': " + e.what());
    }
    return d;
  }
  std::ifstream in(root / "index.csv");
  std::string header;
  if (!in || !std::getline(in, header)) {
    Fail(ErrorKind::kIndexing, "missing index file '" + (root / "index.csv").string() + "'");
  }
  const std::vector<std::string> cols = SplitCsvLine(header);
  const auto has = [&](const char* c) { return std::find(cols.begin(), cols.end(), c) != cols.end(); };
  if (has("agl_path")) {
    d.kind = DatasetKind::kPairedAgl;
  } else if (has("pre_path")) {
    d.kind = DatasetKind::kBitemporalChange;
    d.num_classes = 2;
  } else if (has("image_path")) {
    d.kind = DatasetKind::kMonoSegmentation;
  } else {
    Fail(ErrorKind::kSchema, "cannot infer dataset kind from header '" + header + "'");
  }
  d.predefined_splits = has("split");
  return d;
}

SampleIndex IndexDataset(const DatasetDescriptor& descriptor) {
  const fs::path index_path = descriptor.root / "index.csv";
  std::ifstream in(index_path);
  if (!in) Fail(ErrorKind::kIndexing, "missing index file '" + index_path.string() + "'");
  std::string line;
  if (!std::getline(in, line)) Fail(ErrorKind::kIndexing, "no samples in '" + index_path.string() + "'");
  const std::vector<std::string> header = SplitCsvLine(line);
  std::vector<std::string> expected = IndexColumns(descriptor.kind);
  const bool with_split = header.size() == expected.size() + 1 && header.back() == "split";
  std::vector<std::string> got = header;
  if (with_split) got.pop_back();
  if (got != expected) {
    Fail(ErrorKind::kSchema, "index header '" + Join(header, ",") + "' does not match " +
                                 DatasetKindName(descriptor.kind) + " schema '" +
                                 Join(expected, ",") + "[,split]'");
  }
  if (descriptor.kind == DatasetKind::kPairedAgl && with_split) {
    Fail(ErrorKind::kSchema, "paired_agl index does not take a split column");
  }

  SampleIndex index;
  index.descriptor = descriptor;
  index.descriptor.predefined_splits = with_split;
  std::set<std::string> seen;
  std::vector<std::string> missing;
  int line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty() || line == "\r") continue;
    const std::vector<std::string> cells = SplitCsvLine(line);
    if (cells.size() != header.size()) {
      Fail(ErrorKind::kSchema, index_path.string() + ":" + std::to_string(line_no) + ": expected " +
                                   std::to_string(header.size()) + " fields, got " +
                                   std::to_string(cells.size()));
    }
    SampleRecord r;
    r.sample_id = cells[0];
    if (r.sample_id.empty()) {
      Fail(ErrorKind::kSchema, index_path.string() + ":" + std::to_string(line_no) + ": empty sample_id");
    }
    if (!seen.insert(r.sample_id).second) {
      Fail(ErrorKind::kSchema, "duplicate sample_id '" + r.sample_id + "'");
    }
    for (std::size_t c = 1; c < expected.size(); ++c) {
      fs::path p = cells[c];
      if (p.is_relative()) p = descriptor.root / p;
      if (!fs::is_regular_file(p)) missing.push_back(p.string());
      r.files[expected[c]] = p;
    }
    if (with_split) r.split = ParseSplit(cells.back());
    index.records.push_back(std::move(r));
  }
  if (!missing.empty()) {
    Fail(ErrorKind::kIndexing, "missing files: " + Join(missing, ", "));
  }
  if (index.records.empty()) Fail(ErrorKind::kIndexing, "no samples");
  std::sort(index.records.begin(), index.records.end(),
            [](const SampleRecord& a, const SampleRecord& b) { return a.sample_id < b.sample_id; });
  for (const SampleRecord& r : index.records) {
    ++index.counts[r.split ? SplitName(*r.split) : "unsplit"];
  }
  return index;
}

std::vector<std::size_t> SplitPermutation(std::size_t n, std::uint64_t seed) {
  std::vector<std::size_t> order(n);
  for (std::size_t i = 0; i < n; ++i) order[i] = i;
  Rng rng(DeriveSeed(seed, HashName("split")));
  rng.Shuffle(order);
  return order;
}

int ValidationCount(std::size_t n, double val_fraction) {
  return static_cast<int>(std::lround(val_fraction * static_cast<double>(n)));
}

SplitResult SplitDataset(const SampleIndex& index, double val_fraction, std::uint64_t seed) {
  SplitResult out;
  for (SampleIndex* part : {&out.train, &out.val, &out.test}) {
    part->descriptor = index.descriptor;
  }
  const auto add = [](SampleIndex& part, const SampleRecord& r) {
    part.records.push_back(r);
    ++part.counts[r.split ? SplitName(*r.split) : "unsplit"];
  };
  if (index.descriptor.predefined_splits) {
    out.warnings.push_back("dataset declares its own splits; val_fraction ignored");
    for (const SampleRecord& r : index.records) {
      const Split s = r.split.value_or(Split::kTrain);
      add(s == Split::kTrain ? out.train : s == Split::kVal ? out.val : out.test, r);
    }
    return out;
  }
  if (!(val_fraction > 0.0 && val_fraction < 1.0)) {
    Fail(ErrorKind::kConfig, "val_fraction must lie in (0, 1)");
  }
  if (index.records.empty()) Fail(ErrorKind::kConfig, "cannot split an empty index");
  const std::size_t n = index.records.size();
  const int n_val = ValidationCount(n, val_fraction);
  if (n_val == 0) Fail(ErrorKind::kConfig, "validation empty");
  if (static_cast<std::size_t>(n_val) >= n) Fail(ErrorKind::kConfig, "training split empty");
  const std::vector<std::size_t> order = SplitPermutation(n, seed);
  std::vector<bool> is_val(n, false);
  for (int i = 0; i < n_val; ++i) is_val[order[static_cast<std::size_t>(i)]] = true;
  for (std::size_t i = 0; i < n; ++i) add(is_val[i] ? out.val : out.train, index.records[i]);
  return out;
}

PairedSample MakePairedSample(std::string sample_id, const Image8& rgb8,
                              const ImageF& agl_meters, double h_max) {
  if (!agl_meters.SameGrid(rgb8.height, rgb8.width)) {
    Fail(ErrorKind::kData, "co-registration error: rgb " + std::to_string(rgb8.height) + "x" +
                               std::to_string(rgb8.width) + " vs agl " +
                               std::to_string(agl_meters.height) + "x" +
                               std::to_string(agl_meters.width) + " for '" + sample_id + "'");
  }
  if (agl_meters.channels != 1) Fail(ErrorKind::kIo, "AGL raster must be single-band");
  PairedSample s;
  s.sample_id = std::move(sample_id);
  s.rgb = ScaleRgb(rgb8);
  s.agl = ImageF(agl_meters.height, agl_meters.width, 1);
  s.agl_meters = ImageF(agl_meters.height, agl_meters.width, 1);
  s.validity_mask.assign(agl_meters.data.size(), 1);
  for (std::size_t i = 0; i < agl_meters.data.size(); ++i) {
    const float v = agl_meters.data[i];
    if (v == kAglNodata || !std::isfinite(v)) {
      s.validity_mask[i] = 0;
      s.agl_meters.data[i] = 0.0f;
      s.agl.data[i] = 0.0f;
      continue;
    }
    const float meters = std::max(v, 0.0f);
    s.agl_meters.data[i] = meters;
    s.agl.data[i] = static_cast<float>(std::min<double>(meters, h_max) / h_max);
  }
  return s;
}

PairedSample LoadPair(const SampleRecord& record, double h_max) {
  const Image8 rgb = ReadImage8(record.files.at("rgb_path"));
  if (rgb.channels != 3) {
    Fail(ErrorKind::kIo, "'" + record.files.at("rgb_path").string() + "' is not 3-band");
  }
  const ImageF agl = ReadTiff(record.files.at("agl_path"));
  return MakePairedSample(record.sample_id, rgb, agl, h_max);
}

BitemporalSample LoadBitemporal(const SampleRecord& record, int num_classes) {
  BitemporalSample s;
  s.sample_id = record.sample_id;
  s.pre = LoadRgb(record.files.at("pre_path"));
  s.post = LoadRgb(record.files.at("post_path"));
  s.mask = LoadMask(record.files.at("mask_path"), num_classes);
  s.split = record.split;
  if (!s.post.SameGrid(s.pre.height, s.pre.width) ||
      !s.mask.SameGrid(s.pre.height, s.pre.width)) {
    Fail(ErrorKind::kData, "co-registration error: pre/post/mask grids differ for '" +
                               record.sample_id + "'");
  }
  return s;
}

SegmentationSample LoadSegmentation(const SampleRecord& record, int num_classes) {
  SegmentationSample s;
  s.sample_id = record.sample_id;
  s.image = LoadRgb(record.files.at("image_path"));
  s.mask = LoadMask(record.files.at("mask_path"), num_classes);
  s.split = record.split;
  if (!s.mask.SameGrid(s.image.height, s.image.width)) {
    Fail(ErrorKind::kData, "co-registration error: image/mask grids differ for '" +
                               record.sample_id + "'");
  }
  return s;
}

PatchStrategy ParsePatchStrategy(const std::string& s) {
  if (s == "random_crop") return PatchStrategy::kRandomCrop;
  if (s == "grid") return PatchStrategy::kGrid;
  Fail(ErrorKind::kConfig, "patch strategy: unknown value '" + s + "'");
}

std::vector<Window> PatchWindows(int height, int width, const PatchSpec& spec,
                                 const std::string& sample_id) {
  if (spec.size < 1 || spec.size > height || spec.size > width) {
    Fail(ErrorKind::kConfig, "patch size " + std::to_string(spec.size) +
                                 " does not fit image " + std::to_string(height) + "x" +
                                 std::to_string(width));
  }
  std::vector<Window> out;
  if (spec.strategy == PatchStrategy::kGrid) {
    for (int y = 0; y + spec.size <= height; y += spec.size) {
      for (int x = 0; x + spec.size <= width; x += spec.size) out.push_back({y, x, spec.size});
    }
    return out;
  }
  if (spec.patches_per_image < 1) Fail(ErrorKind::kConfig, "patches_per_image must be >= 1");
  Rng rng(DeriveSeed(spec.seed, HashName(sample_id)));
  for (int i = 0; i < spec.patches_per_image; ++i) {
    const int y = rng.UniformInt(0, height - spec.size);
    const int x = rng.UniformInt(0, width - spec.size);
    out.push_back({y, x, spec.size});
  }
  return out;
}

template <typename T>
Raster<T> Crop(const Raster<T>& r, const Window& w) {
  Raster<T> out(w.size, w.size, r.channels);
  for (int y = 0; y < w.size; ++y) {
    const auto* src = &r.at(w.y + y, w.x, 0);
    std::copy(src, src + static_cast<std::size_t>(w.size) * r.channels, &out.at(y, 0, 0));
  }
  return out;
}

template Raster<float> Crop(const Raster<float>&, const Window&);
template Raster<std::uint8_t> Crop(const Raster<std::uint8_t>&, const Window&);

namespace {

std::string PatchId(const std::string& id, std::size_t i, std::size_t n) {
  return n == 1 ? id : id + "_p" + std::to_string(i);
}

}  // namespace

std::vector<PairedSample> ExtractPatches(const PairedSample& s, const PatchSpec& spec) {
  const std::vector<Window> windows = PatchWindows(s.rgb.height, s.rgb.width, spec, s.sample_id);
  std::vector<PairedSample> out;
  for (std::size_t i = 0; i < windows.size(); ++i) {
    const Window& w = windows[i];
    PairedSample p;
    p.sample_id = PatchId(s.sample_id, i, windows.size());
    p.rgb = Crop(s.rgb, w);
    p.agl = Crop(s.agl, w);
    p.agl_meters = Crop(s.agl_meters, w);
    p.validity_mask.resize(static_cast<std::size_t>(w.size) * w.size);
    for (int y = 0; y < w.size; ++y) {
      for (int x = 0; x < w.size; ++x) {
        p.validity_mask[static_cast<std::size_t>(y) * w.size + x] =
            s.validity_mask[static_cast<std::size_t>(w.y + y) * s.rgb.width + w.x + x];
      }
    }
    out.push_back(std::move(p));
  }
  return out;
}

std::vector<BitemporalSample> ExtractPatches(const BitemporalSample& s, const PatchSpec& spec) {
  const std::vector<Window> windows = PatchWindows(s.pre.height, s.pre.width, spec, s.sample_id);
  std::vector<BitemporalSample> out;
  for (std::size_t i = 0; i < windows.size(); ++i) {
    BitemporalSample p;
    p.sample_id = PatchId(s.sample_id, i, windows.size());
    p.pre = Crop(s.pre, windows[i]);
    p.post = Crop(s.post, windows[i]);
    p.mask = Crop(s.mask, windows[i]);
    p.split = s.split;
    out.push_back(std::move(p));
  }
  return out;
}

std::vector<SegmentationSample> ExtractPatches(const SegmentationSample& s,
                                               const PatchSpec& spec) {
  const std::vector<Window> windows =
      PatchWindows(s.image.height, s.image.width, spec, s.sample_id);
  std::vector<SegmentationSample> out;
  for (std::size_t i = 0; i < windows.size(); ++i) {
    SegmentationSample p;
    p.sample_id = PatchId(s.sample_id, i, windows.size());
    p.image = Crop(s.image, windows[i]);
    p.mask = Crop(s.mask, windows[i]);
    p.split = s.split;
    out.push_back(std::move(p));
  }
  return out;
}

PairedSample Flip(const PairedSample& s, bool horizontal, bool vertical) {
  PairedSample out;
  out.sample_id = s.sample_id;
  out.rgb = FlipRaster(s.rgb, horizontal, vertical);
  out.agl = FlipRaster(s.agl, horizontal, vertical);
  out.agl_meters = FlipRaster(s.agl_meters, horizontal, vertical);
  Raster<std::uint8_t> valid(s.rgb.height, s.rgb.width, 1);
  valid.data = s.validity_mask;
  out.validity_mask = FlipRaster(valid, horizontal, vertical).data;
  return out;
}

Tensor ToTensor(std::span<const ImageF* const> images) {
  if (images.empty()) Fail(ErrorKind::kShape, "no images to stack");
  const int h = images[0]->height, w = images[0]->width, c = images[0]->channels;
  const int n = static_cast<int>(images.size());
  Tensor t({n, c, h, w});
  for (int i = 0; i < n; ++i) {
    const ImageF& img = *images[static_cast<std::size_t>(i)];
    if (img.height != h || img.width != w || img.channels != c) {
      Fail(ErrorKind::kShape, "images in a batch must share shape");
    }
    for (int y = 0; y < h; ++y) {
      for (int x = 0; x < w; ++x) {
        for (int ch = 0; ch < c; ++ch) t.at(i, ch, y, x) = img.at(y, x, ch);
      }
    }
  }
  return t;
}

Tensor ToTensor(const ImageF& image) {
  const ImageF* p[] = {&image};
  return ToTensor(p);
}

void SyntheticConfig::Validate() const {
  if (size < 1) Fail(ErrorKind::kConfig, "synthetic size must be positive");
  if (min_buildings < 0 || max_buildings < min_buildings) {
    Fail(ErrorKind::kConfig, "synthetic building count range is invalid");
  }
  if (min_side < 1 || max_side < min_side || max_side > size) {
    Fail(ErrorKind::kConfig, "synthetic building side range is invalid");
  }
  if (!(min_height > 0.0) || max_height < min_height) {
    Fail(ErrorKind::kConfig, "synthetic height range is invalid");
  }
  if (!(h_max > 0.0)) Fail(ErrorKind::kConfig, "h_max must be positive");
  if (min_added < 0 || max_added < min_added) {
    Fail(ErrorKind::kConfig, "synthetic added-building range is invalid");
  }
  if (removal_probability < 0.0 || removal_probability > 1.0) {
    Fail(ErrorKind::kConfig, "removal_probability must lie in [0, 1]");
  }
}

nlohmann::json SyntheticConfig::ToJson() const {
  return {{"size", size},
          {"min_buildings", min_buildings},
          {"max_buildings", max_buildings},
          {"min_side", min_side},
          {"max_side", max_side},
          {"min_height", min_height},
          {"max_height", max_height},
          {"ground_texture_amplitude", ground_texture_amplitude},
          {"shadow_px_per_meter", shadow_px_per_meter},
          {"shadow_direction_deg", shadow_direction_deg},
          {"shadow_darkening", shadow_darkening},
          {"h_max", h_max},
          {"removal_probability", removal_probability},
          {"min_added", min_added},
          {"max_added", max_added}};
}

SyntheticConfig SyntheticConfig::FromJson(const nlohmann::json& j) {
  SyntheticConfig c;
  c.size = j.value("size", c.size);
  c.min_buildings = j.value("min_buildings", c.min_buildings);
  c.max_buildings = j.value("max_buildings", c.max_buildings);
  c.min_side = j.value("min_side", c.min_side);
  c.max_side = j.value("max_side", c.max_side);
  c.min_height = j.value("min_height", c.min_height);
  c.max_height = j.value("max_height", c.max_height);
  c.ground_texture_amplitude = j.value("ground_texture_amplitude", c.ground_texture_amplitude);
  c.shadow_px_per_meter = j.value("shadow_px_per_meter", c.shadow_px_per_meter);
  c.shadow_direction_deg = j.value("shadow_direction_deg", c.shadow_direction_deg);
  c.shadow_darkening = j.value("shadow_darkening", c.shadow_darkening);
  c.h_max = j.value("h_max", c.h_max);
  c.removal_probability = j.value("removal_probability", c.removal_probability);
  c.min_added = j.value("min_added", c.min_added);
  c.max_added = j.value("max_added", c.max_added);
  return c;
}

SceneLayout PlaceBuildings(std::uint64_t scene_seed, const SyntheticConfig& config) {
  config.Validate();
  Rng rng(DeriveSeed(scene_seed, HashName("layout")));
  const int count = rng.UniformInt(config.min_buildings, config.max_buildings);
  SceneLayout layout;
  for (int i = 0; i < count; ++i) {
    Building b;
    if (TryPlace(rng, config, layout.buildings, &b)) layout.buildings.push_back(b);
  }
  return layout;
}

SyntheticScene RenderScene(std::uint64_t scene_seed, const SceneLayout& layout,
                           const SyntheticConfig& config, std::string sample_id) {
  config.Validate();
  const int n = config.size;
  Rng rng(DeriveSeed(scene_seed, HashName("ground")));
  const std::vector<double> coarse = ValueNoise(rng, n, 4);
  const std::vector<double> fine = ValueNoise(rng, n, std::max(1, n / 4));
  const double base[3] = {0.36, 0.42, 0.27};
  const double tint[3] = {rng.Uniform(0.6, 1.2), rng.Uniform(0.6, 1.2), rng.Uniform(0.6, 1.2)};

  Raster<int> owner(n, n, 1, -1);
  ImageF agl_m(n, n, 1, 0.0f);
  for (std::size_t b = 0; b < layout.buildings.size(); ++b) {
    const Building& bd = layout.buildings[b];
    for (int y = bd.y0; y < bd.y0 + bd.height; ++y) {
      for (int x = bd.x0; x < bd.x0 + bd.width; ++x) {
        owner.at(y, x) = static_cast<int>(b);
        agl_m.at(y, x) = static_cast<float>(bd.height_m);
      }
    }
  }
  Raster<std::uint8_t> shadow(n, n, 1, 0);
  const double theta = config.shadow_direction_deg * M_PI / 180.0;
  const double dx = std::cos(theta), dy = std::sin(theta);
  for (const Building& bd : layout.buildings) {
    const int length = static_cast<int>(std::lround(bd.height_m * config.shadow_px_per_meter));
    for (int s = 1; s <= length; ++s) {
      const int ox = static_cast<int>(std::lround(s * dx));
      const int oy = static_cast<int>(std::lround(s * dy));
      for (int y = bd.y0; y < bd.y0 + bd.height; ++y) {
        for (int x = bd.x0; x < bd.x0 + bd.width; ++x) {
          const int sy = y + oy, sx = x + ox;
          if (sy < 0 || sy >= n || sx < 0 || sx >= n) continue;
          if (owner.at(sy, sx) < 0) shadow.at(sy, sx) = 1;
        }
      }
    }
  }

  SyntheticScene scene;
  scene.layout = layout;
  scene.classes = LabelMap(n, n, 1, 0);
  Image8 rgb8(n, n, 3);
  ImageF rgb(n, n, 3);
  const double amp = config.ground_texture_amplitude;
  for (int y = 0; y < n; ++y) {
    for (int x = 0; x < n; ++x) {
      const std::size_t i = static_cast<std::size_t>(y) * n + x;
      const int o = owner.at(y, x);
      for (int c = 0; c < 3; ++c) {
        double v;
        if (o >= 0) {
          v = layout.buildings[static_cast<std::size_t>(o)].albedo[c];
        } else {
          v = base[c] + amp * (coarse[i] * tint[c] + 0.5 * fine[i]);
          if (shadow.at(y, x)) v *= config.shadow_darkening;
        }
        const float q = Quantize8(v);
        rgb.at(y, x, c) = q;
        rgb8.at(y, x, c) = static_cast<std::uint8_t>(std::lround(q * 255.0f));
      }
      scene.classes.at(y, x) = o >= 0 ? 1 : (shadow.at(y, x) ? 2 : 0);
    }
  }
  scene.sample = MakePairedSample(std::move(sample_id), rgb8, agl_m, config.h_max);
  return scene;
}

SyntheticScene GenerateSyntheticScene(std::uint64_t scene_seed, const SyntheticConfig& config) {
  return RenderScene(scene_seed, PlaceBuildings(scene_seed, config), config,
                     "scene" + std::to_string(scene_seed));
}

SyntheticChange GenerateSyntheticChange(std::uint64_t scene_seed, std::uint64_t change_seed,
                                        const SyntheticConfig& config) {
  config.Validate();
  SyntheticChange out;
  out.pre_layout = PlaceBuildings(scene_seed, config);
  Rng rng(DeriveSeed(change_seed, MixSeed(scene_seed) ^ HashName("change")));
  for (const Building& b : out.pre_layout.buildings) {
    if (rng.Bernoulli(config.removal_probability)) {
      out.removed.push_back(b);
    } else {
      out.post_layout.buildings.push_back(b);
    }
  }
  const int n_add = rng.UniformInt(config.min_added, config.max_added);
  std::vector<Building> avoid = out.pre_layout.buildings;
  for (int i = 0; i < n_add; ++i) {
    Building b;
    if (TryPlace(rng, config, avoid, &b)) {
      avoid.push_back(b);
      out.added.push_back(b);
      out.post_layout.buildings.push_back(b);
    }
  }
  const std::string id = "change" + std::to_string(scene_seed) + "_" + std::to_string(change_seed);
  SyntheticScene pre = RenderScene(scene_seed, out.pre_layout, config, id);
  SyntheticScene post = RenderScene(scene_seed, out.post_layout, config, id);
  out.sample.sample_id = id;
  out.sample.pre = std::move(pre.sample.rgb);
  out.sample.post = std::move(post.sample.rgb);
  out.sample.mask = LabelMap(config.size, config.size, 1, 0);
  for (int y = 0; y < config.size; ++y) {
    for (int x = 0; x < config.size; ++x) {
      const bool before = pre.classes.at(y, x) == 1;
      const bool after = post.classes.at(y, x) == 1;
      out.sample.mask.at(y, x) = before != after ? 1 : 0;
    }
  }
  return out;
}

Image8 ToImage8(const ImageF& image) {
  Image8 out(image.height, image.width, image.channels);
  for (std::size_t i = 0; i < image.data.size(); ++i) {
    out.data[i] = static_cast<std::uint8_t>(
        std::lround(std::clamp(image.data[i], 0.0f, 1.0f) * 255.0f));
  }
  return out;
}

void WritePairedDataset(const fs::path& root, std::span<const PairedSample> samples,
                        double h_max) {
  EnsureDir(root / "rgb");
  EnsureDir(root / "agl");
  std::vector<std::vector<std::string>> rows;
  for (const PairedSample& s : samples) {
    const std::string rgb = "rgb/" + s.sample_id + ".png";
    const std::string agl = "agl/" + s.sample_id + ".tif";
    WritePng(root / rgb, ToImage8(s.rgb));
    ImageF meters = s.agl_meters;
    for (std::size_t i = 0; i < meters.data.size(); ++i) {
      if (!s.validity_mask.empty() && !s.validity_mask[i]) meters.data[i] = kAglNodata;
    }
    WriteTiffFloat(root / agl, meters);
    rows.push_back({s.sample_id, rgb, agl});
  }
  WriteIndex(root, IndexColumns(DatasetKind::kPairedAgl), rows);
  DatasetDescriptor d;
  d.kind = DatasetKind::kPairedAgl;
  d.root = root;
  d.h_max = h_max;
  d.Save();
}

void WriteBitemporalDataset(const fs::path& root, std::span<const BitemporalSample> samples,
                            int num_classes, const std::vector<std::string>& class_names) {
  EnsureDir(root / "pre");
  EnsureDir(root / "post");
  EnsureDir(root / "mask");
  const bool with_split = !samples.empty() && samples[0].split.has_value();
  std::vector<std::vector<std::string>> rows;
  for (const BitemporalSample& s : samples) {
    const std::string pre = "pre/" + s.sample_id + ".png";
    const std::string post = "post/" + s.sample_id + ".png";
    const std::string mask = "mask/" + s.sample_id + ".png";
    WritePng(root / pre, ToImage8(s.pre));
    WritePng(root / post, ToImage8(s.post));
    WritePng(root / mask, s.mask);
    std::vector<std::string> row = {s.sample_id, pre, post, mask};
    if (with_split) row.push_back(SplitName(s.split.value_or(Split::kTrain)));
    rows.push_back(std::move(row));
  }
  std::vector<std::string> header = IndexColumns(DatasetKind::kBitemporalChange);
  if (with_split) header.push_back("split");
  WriteIndex(root, header, rows);
  DatasetDescriptor d;
  d.kind = DatasetKind::kBitemporalChange;
  d.root = root;
  d.num_classes = num_classes;
  d.class_names = class_names;
  d.predefined_splits = with_split;
  d.Save();
}

void WriteSegmentationDataset(const fs::path& root, std::span<const SegmentationSample> samples,
                              int num_classes, const std::vector<std::string>& class_names) {
  EnsureDir(root / "image");
  EnsureDir(root / "mask");
  const bool with_split = !samples.empty() && samples[0].split.has_value();
  std::vector<std::vector<std::string>> rows;
  for (const SegmentationSample& s : samples) {
    const std::string image = "image/" + s.sample_id + ".png";
    const std::string mask = "mask/" + s.sample_id + ".png";
    WritePng(root / image, ToImage8(s.image));
    WritePng(root / mask, s.mask);
    std::vector<std::string> row = {s.sample_id, image, mask};
    if (with_split) row.push_back(SplitName(s.split.value_or(Split::kTrain)));
    rows.push_back(std::move(row));
  }
  std::vector<std::string> header = IndexColumns(DatasetKind::kMonoSegmentation);
  if (with_split) header.push_back("split");
  WriteIndex(root, header, rows);
  DatasetDescriptor d;
  d.kind = DatasetKind::kMonoSegmentation;
  d.root = root;
  d.num_classes = num_classes;
  d.class_names = class_names;
  d.predefined_splits = with_split;
  d.Save();
}

}  // namespace csip
