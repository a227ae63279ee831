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

#ifndef CSIP_DATA_HPP_
#define CSIP_DATA_HPP_

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "csip/raster.hpp"
#include "csip/tensor.hpp"
#include "json.hpp"

namespace csip {

using LabelMap = Image8;  // single channel, values are class indices

inline constexpr float kAglNodata = -9999.0f;

enum class Split { kTrain, kVal, kTest };
const char* SplitName(Split s);
Split ParseSplit(const std::string& s);

// Co-registered RGB/AGL pair. `agl` is the model input in [0, 1]; `agl_meters`
// keeps the cleaned heights for reporting.
struct PairedSample {
  std::string sample_id;
  ImageF rgb;         // H x W x 3, [0, 1]
  ImageF agl;         // H x W x 1, [0, 1]
  ImageF agl_meters;  // H x W x 1, nodata mapped to 0
  std::vector<std::uint8_t> validity_mask;  // H x W, 0 where AGL was nodata
};

struct BitemporalSample {
  std::string sample_id;
  ImageF pre;      // H x W x 3, [0, 1]
  ImageF post;     // H x W x 3, [0, 1]
  LabelMap mask;   // H x W, labels < K
  std::optional<Split> split;
};

struct SegmentationSample {
  std::string sample_id;
  ImageF image;
  LabelMap mask;
  std::optional<Split> split;
};

enum class DatasetKind { kPairedAgl, kBitemporalChange, kMonoSegmentation };
const char* DatasetKindName(DatasetKind k);
DatasetKind ParseDatasetKind(const std::string& s);

struct DatasetDescriptor {
  DatasetKind kind = DatasetKind::kPairedAgl;
  std::filesystem::path root;
  int num_classes = 0;
  std::vector<std::string> class_names;
  double h_max = 200.0;
  bool predefined_splits = false;

  // Reads `root/dataset.json` when present, otherwise infers the kind from
  // the index header.
  static DatasetDescriptor Load(const std::filesystem::path& root);
  void Save() const;
  nlohmann::json ToJson() const;
};

// Index file columns per dataset kind, excluding the optional split column.
std::vector<std::string> IndexColumns(DatasetKind kind);

struct SampleRecord {
  std::string sample_id;
  std::map<std::string, std::filesystem::path> files;  // column -> resolved path
  std::optional<Split> split;
};

struct SampleIndex {
  DatasetDescriptor descriptor;
  std::vector<SampleRecord> records;  // sorted by sample_id
  std::map<std::string, int> counts;  // per split name; "unsplit" otherwise

  int size() const { return static_cast<int>(records.size()); }
};

SampleIndex IndexDataset(const DatasetDescriptor& descriptor);

struct SplitResult {
  SampleIndex train;
  SampleIndex val;
  SampleIndex test;
  std::vector<std::string> warnings;
};

// Seeded disjoint partition with |val| = round(val_fraction * N). Datasets
// with predefined splits pass through unchanged, with a warning.
SplitResult SplitDataset(const SampleIndex& index, double val_fraction, std::uint64_t seed);

// Validation ids of a seeded split over plain ids; shares the permutation
// used by SplitDataset.
std::vector<std::size_t> SplitPermutation(std::size_t n, std::uint64_t seed);
int ValidationCount(std::size_t n, double val_fraction);

PairedSample LoadPair(const SampleRecord& record, double h_max);
BitemporalSample LoadBitemporal(const SampleRecord& record, int num_classes);
SegmentationSample LoadSegmentation(const SampleRecord& record, int num_classes);

// Builds a paired sample from stored values: 8-bit RGB and AGL meters with the
// nodata sentinel.
PairedSample MakePairedSample(std::string sample_id, const Image8& rgb8,
                              const ImageF& agl_meters, double h_max);

enum class PatchStrategy { kRandomCrop, kGrid };
PatchStrategy ParsePatchStrategy(const std::string& s);

struct PatchSpec {
  int size = 512;
  PatchStrategy strategy = PatchStrategy::kRandomCrop;
  int patches_per_image = 1;
  std::uint64_t seed = 0;
};

struct Window {
  int y = 0;
  int x = 0;
  int size = 0;
  friend bool operator==(const Window&, const Window&) = default;
};

// random_crop offsets depend on (spec.seed, sample_id) only.
std::vector<Window> PatchWindows(int height, int width, const PatchSpec& spec,
                                 const std::string& sample_id);

template <typename T>
Raster<T> Crop(const Raster<T>& r, const Window& w);

std::vector<PairedSample> ExtractPatches(const PairedSample& s, const PatchSpec& spec);
std::vector<BitemporalSample> ExtractPatches(const BitemporalSample& s, const PatchSpec& spec);
std::vector<SegmentationSample> ExtractPatches(const SegmentationSample& s,
                                               const PatchSpec& spec);

// Mirrors every modality of a sample identically.
PairedSample Flip(const PairedSample& s, bool horizontal, bool vertical);

// Stacks H x W x C rasters into an NCHW tensor.
Tensor ToTensor(std::span<const ImageF* const> images);
Tensor ToTensor(const ImageF& image);

// ---- Synthetic scenes ------------------------------------------------------

struct SyntheticConfig {
  int size = 64;
  int min_buildings = 2;
  int max_buildings = 6;
  int min_side = 6;
  int max_side = 16;
  double min_height = 2.0;
  double max_height = 60.0;
  double ground_texture_amplitude = 0.08;
  double shadow_px_per_meter = 0.15;
  // Image-plane direction of cast shadows, degrees from +x towards +y.
  double shadow_direction_deg = 45.0;
  double shadow_darkening = 0.45;
  double h_max = 200.0;
  // Change generation.
  double removal_probability = 0.3;
  int min_added = 0;
  int max_added = 2;

  void Validate() const;
  nlohmann::json ToJson() const;
  static SyntheticConfig FromJson(const nlohmann::json& j);
};

struct Building {
  int x0 = 0;
  int y0 = 0;
  int width = 0;
  int height = 0;
  double height_m = 0.0;
  float albedo[3] = {0, 0, 0};

  bool Contains(int y, int x) const {
    return x >= x0 && x < x0 + width && y >= y0 && y < y0 + height;
  }
};

struct SceneLayout {
  std::vector<Building> buildings;
};

struct SyntheticScene {
  PairedSample sample;
  SceneLayout layout;
  LabelMap classes;  // 0 ground, 1 building, 2 shadow
};

struct SyntheticChange {
  BitemporalSample sample;
  SceneLayout pre_layout;
  SceneLayout post_layout;
  std::vector<Building> added;
  std::vector<Building> removed;
};

SceneLayout PlaceBuildings(std::uint64_t scene_seed, const SyntheticConfig& config);
SyntheticScene RenderScene(std::uint64_t scene_seed, const SceneLayout& layout,
                           const SyntheticConfig& config, std::string sample_id = "");
SyntheticScene GenerateSyntheticScene(std::uint64_t scene_seed, const SyntheticConfig& config);
SyntheticChange GenerateSyntheticChange(std::uint64_t scene_seed, std::uint64_t change_seed,
                                        const SyntheticConfig& config);

// ---- Dataset writers -------------------------------------------------------
// Emit the on-disk layout read by IndexDataset.

void WritePairedDataset(const std::filesystem::path& root,
                        std::span<const PairedSample> samples, double h_max);
void WriteBitemporalDataset(const std::filesystem::path& root,
                            std::span<const BitemporalSample> samples, int num_classes,
                            const std::vector<std::string>& class_names);
void WriteSegmentationDataset(const std::filesystem::path& root,
                              std::span<const SegmentationSample> samples, int num_classes,
                              const std::vector<std::string>& class_names);

Image8 ToImage8(const ImageF& image);

}  // namespace csip

#endif  // CSIP_DATA_HPP_
