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

#ifndef CSIP_CHECKPOINT_HPP_
#define CSIP_CHECKPOINT_HPP_

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>

#include "csip/contrastive.hpp"
#include "csip/downstream.hpp"
#include "csip/embedding.hpp"
#include "json.hpp"

namespace csip {

inline constexpr const char* kManifestName = "manifest.json";
inline constexpr const char* kBlobDtype = "float32_le";

struct RunState {
  int epoch = 0;
  std::uint64_t seed = 0;
};

// Everything a checkpoint directory holds. Encoders are keyed by role
// ("rgb", "agl" after pretraining; "encoder" for a downstream model).
struct Checkpoint {
  std::map<std::string, EncoderBundle> encoders;
  std::optional<HeadBundle> head;
  std::string head_encoder = "encoder";
  std::optional<Temperature> temperature;
  RunState run_state;
  nlohmann::json metadata = nlohmann::json::object();
};

// Writes blobs then manifest.json; returns the manifest.
nlohmann::json SaveCheckpoint(const Checkpoint& checkpoint, const std::filesystem::path& dir);
Checkpoint LoadCheckpoint(const std::filesystem::path& dir);
nlohmann::json ReadManifest(const std::filesystem::path& dir);

// Manifest without the metadata block, for comparisons.
nlohmann::json StripMetadata(nlohmann::json manifest);

std::string BlobFileName(const std::string& parameter_name);

// Shape check of a parameter map against the expected index: missing,
// extra or mismatched entries raise a shape error naming the parameter.
void CheckParameterShapes(const ParameterMap& params,
                          const std::map<std::string, Shape>& expected);

std::string DigestParameters(const ParameterMap& params);

// Convenience wrappers.
Checkpoint PretrainCheckpoint(const EncoderBundle& rgb, const EncoderBundle& agl,
                              const Temperature& temperature, RunState state);
Checkpoint ModelCheckpoint(const DownstreamModel& model, RunState state);
DownstreamModel ModelFromCheckpoint(const Checkpoint& checkpoint);
EncoderBundle EncoderFromCheckpoint(const Checkpoint& checkpoint, const std::string& role);

}  // namespace csip

#endif  // CSIP_CHECKPOINT_HPP_
