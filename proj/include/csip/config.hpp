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

#ifndef CSIP_CONFIG_HPP_
#define CSIP_CONFIG_HPP_

#include <filesystem>
#include <string>
#include <vector>

#include "csip/contrastive.hpp"
#include "csip/data.hpp"
#include "csip/downstream.hpp"
#include "csip/embedding.hpp"
#include "csip/harness.hpp"
#include "json.hpp"

namespace csip {

// Full default tree. Every accepted key appears here; files and overrides
// may only replace values.
nlohmann::json DefaultConfig();

// defaults < file < overrides ("a.b.c=value"; the value is parsed as JSON
// and falls back to a plain string). All violations are reported together
// in one validation error.
nlohmann::json ResolveConfig(const nlohmann::json& file_config,
                             const std::vector<std::string>& overrides);
nlohmann::json LoadConfig(const std::filesystem::path& path,
                          const std::vector<std::string>& overrides);

// Semantic checks of a resolved tree; empty when valid.
std::vector<std::string> ConfigViolations(const nlohmann::json& config);

TrainConfig TrainConfigFrom(const nlohmann::json& config, Phase phase);
EncoderConfig EncoderConfigFrom(const nlohmann::json& config, Modality modality);
SyntheticConfig SyntheticConfigFrom(const nlohmann::json& config);
PatchSpec PatchSpecFrom(const nlohmann::json& config);
HeadSpec HeadSpecFrom(const nlohmann::json& config);
Temperature TemperatureFrom(const nlohmann::json& config);

}  // namespace csip

#endif  // CSIP_CONFIG_HPP_
