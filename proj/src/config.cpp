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

#include "csip/config.hpp"

#include <cmath>
#include <fstream>

#include "csip/error.hpp"

namespace csip {

using nlohmann::json;

namespace {

json TrainDefaults(Phase phase) {
  json j = TrainConfig::Defaults(phase).ToJson();
  j.erase("phase");
  j.erase("seed");
  if (phase == Phase::kFinetune) {
    j.erase("negatives");
    j.erase("eval_chunk");
    j["weight_init"] = "csip";
  }
  return j;
}

bool SameType(const json& a, const json& b) {
  if (a.is_number() && b.is_number()) {
    return !a.is_number_integer() || b.is_number_integer();
  }
  return a.type() == b.type();
}

const char* TypeName(const json& j) {
  if (j.is_number_integer()) return "integer";
  if (j.is_number()) return "number";
  return j.type_name();
}

void Merge(json& base, const json& patch, const std::string& prefix,
           std::vector<std::string>& violations) {
  if (!patch.is_object()) {
    violations.push_back((prefix.empty() ? "<root>" : prefix) + ": expected an object");
    return;
  }
  for (const auto& [key, value] : patch.items()) {
    const std::string path = prefix.empty() ? key : prefix + "." + key;
    if (!base.contains(key)) {
      violations.push_back(path + ": unknown key");
      continue;
    }
    json& slot = base[key];
    if (slot.is_object()) {
      Merge(slot, value, path, violations);
    } else if (!SameType(slot, value)) {
      violations.push_back(path + ": expected " + TypeName(slot) + ", got " + TypeName(value));
    } else {
      slot = slot.is_number_float() && value.is_number_integer() ? json(value.get<double>())
                                                                  : value;
    }
  }
}

void ApplyOverride(json& tree, const std::string& item, std::vector<std::string>& violations) {
  const auto eq = item.find('=');
  if (eq == std::string::npos || eq == 0) {
    violations.push_back("override '" + item + "': expected key=value");
    return;
  }
  const std::string key = item.substr(0, eq);
  const std::string text = item.substr(eq + 1);
  json value = json::parse(text, nullptr, false);
  if (value.is_discarded()) value = text;
  json patch = value;
  std::vector<std::string> parts;
  std::size_t start = 0;
  while (true) {
    const auto dot = key.find('.', start);
    parts.push_back(key.substr(start, dot - start));
    if (dot == std::string::npos) break;
    start = dot + 1;
  }
  const json* node = &tree;
  for (const auto& p : parts) {
    if (!node->is_object() || !node->contains(p)) {
      violations.push_back(key + ": unknown key");
      return;
    }
    node = &(*node)[p];
  }
  if (node->is_string() && !value.is_string()) patch = text;
  for (auto it = parts.rbegin(); it != parts.rend(); ++it) patch = json{{*it, patch}};
  Merge(tree, patch, "", violations);
}

void Require(bool ok, const std::string& message, std::vector<std::string>& out) {
  if (!ok) out.push_back(message);
}

template <typename F>
void Catching(std::vector<std::string>& out, const std::string& prefix, F&& f) {
  try {
    f();
  } catch (const Error& e) {
    out.push_back(prefix + ": " + e.what());
  }
}

}  // namespace

json DefaultConfig() {
  const EncoderConfig enc = EncoderConfig::Make(Modality::kRgb, 1.0);
  const PatchSpec patch;
  return {
      {"seed", 0},
      {"runs_dir", "runs"},
      {"data",
       {{"paired", "data/paired"},
        {"change", "data/change"},
        {"segmentation", "data/segmentation"},
        {"finetune_kind", "change"}}},
      {"synthetic",
       {{"n_paired", 512}, {"n_change", 256}, {"n_segmentation", 256},
        {"scene", SyntheticConfig().ToJson()}}},
      {"patch",
       {{"size", patch.size},
        {"strategy", "random_crop"},
        {"patches_per_image", patch.patches_per_image}}},
      {"encoder",
       {{"backbone", "resnet18"},
        {"width_multiplier", 1.0},
        {"projection_hidden_dim", enc.projection_hidden_dim},
        {"projection_dim", enc.projection_dim}}},
      {"temperature", {{"init", 0.07}, {"min", 0.01}, {"max", 1.0}}},
      {"pretrain", TrainDefaults(Phase::kPretrain)},
      {"finetune", TrainDefaults(Phase::kFinetune)},
      {"head",
       {{"architecture", "fc_siam_diff"},
        {"num_classes", 0},
        {"decoder_widths", json::array()},
        {"fusion", "abs_diff"}}},
      {"evaluate", {{"split", "test"}, {"batch_size", 16}, {"max_panels", 8}}},
      {"embed", {{"split", "all"}}},
  };
}

std::vector<std::string> ConfigViolations(const json& c) {
  std::vector<std::string> v;
  Catching(v, "encoder", [&] {
    EncoderConfigFrom(c, Modality::kRgb).Validate();
    EncoderConfigFrom(c, Modality::kAgl).Validate();
  });
  Catching(v, "synthetic.scene", [&] { SyntheticConfigFrom(c).Validate(); });
  Catching(v, "patch", [&] {
    const PatchSpec p = PatchSpecFrom(c);
    if (p.size < 32) Fail(ErrorKind::kConfig, "size: must be >= 32");
    if (p.patches_per_image < 1) Fail(ErrorKind::kConfig, "patches_per_image: must be >= 1");
  });
  for (const Phase phase : {Phase::kPretrain, Phase::kFinetune}) {
    Catching(v, PhaseName(phase), [&] {
      for (const auto& s : TrainConfigFrom(c, phase).Violations()) {
        v.push_back(std::string(PhaseName(phase)) + "." + s);
      }
    });
  }
  Catching(v, "head", [&] { HeadSpecFrom(c); });
  Catching(v, "temperature", [&] {
    const Temperature t = TemperatureFrom(c);
    if (!(t.tau_min > 0.0 && t.tau_min <= t.tau_max)) {
      Fail(ErrorKind::kConfig, "min/max: need 0 < min <= max");
    }
  });
  const double init = c["temperature"]["init"].get<double>();
  Require(init >= c["temperature"]["min"].get<double>() &&
              init <= c["temperature"]["max"].get<double>(),
          "temperature.init: must lie within [min, max]", v);
  const std::string wi = c["finetune"]["weight_init"].get<std::string>();
  Require(wi == "csip" || wi == "random", "finetune.weight_init: expected 'csip' or 'random'", v);
  const std::string fk = c["data"]["finetune_kind"].get<std::string>();
  Require(fk == "change" || fk == "segmentation",
          "data.finetune_kind: expected 'change' or 'segmentation'", v);
  Require(c["head"]["num_classes"].get<int>() >= 0, "head.num_classes: must be >= 0", v);
  for (const char* k : {"n_paired", "n_change", "n_segmentation"}) {
    Require(c["synthetic"][k].get<int>() >= 0, std::string("synthetic.") + k + ": must be >= 0",
            v);
  }
  const std::string split = c["evaluate"]["split"].get<std::string>();
  Require(split == "test" || split == "val", "evaluate.split: expected 'test' or 'val'", v);
  Require(c["evaluate"]["batch_size"].get<int>() >= 1, "evaluate.batch_size: must be >= 1", v);
  Require(c["evaluate"]["max_panels"].get<int>() >= 0, "evaluate.max_panels: must be >= 0", v);
  const std::string es = c["embed"]["split"].get<std::string>();
  Require(es == "all" || es == "val", "embed.split: expected 'all' or 'val'", v);
  return v;
}

json ResolveConfig(const json& file_config, const std::vector<std::string>& overrides) {
  json tree = DefaultConfig();
  std::vector<std::string> violations;
  Merge(tree, file_config, "", violations);
  for (const auto& o : overrides) ApplyOverride(tree, o, violations);
  if (violations.empty()) {
    for (auto& s : ConfigViolations(tree)) violations.push_back(std::move(s));
  }
  if (!violations.empty()) {
    std::string msg = std::to_string(violations.size()) + " config violation(s):";
    for (const auto& s : violations) msg += "\n  " + s;
    Fail(ErrorKind::kValidation, msg);
  }
  return tree;
}

json LoadConfig(const std::filesystem::path& path, const std::vector<std::string>& overrides) {
  json file = json::object();
  if (!path.empty()) {
    std::ifstream in(path);
    if (!in) Fail(ErrorKind::kPath, "cannot open config " + path.string());
    file = json::parse(in, nullptr, false);
    if (file.is_discarded()) Fail(ErrorKind::kValidation, path.string() + ": not valid JSON");
  }
  return ResolveConfig(file, overrides);
}

TrainConfig TrainConfigFrom(const json& config, Phase phase) {
  const json& j = config.at(PhaseName(phase));
  TrainConfig t = TrainConfig::Defaults(phase);
  t.seed = config.at("seed").get<std::uint64_t>();
  t.batch_size = j.at("batch_size").get<int>();
  t.epochs = j.at("epochs").get<int>();
  t.learning_rate = j.at("learning_rate").get<double>();
  t.weight_decay = j.at("weight_decay").get<double>();
  t.optimizer = j.at("optimizer").get<std::string>();
  t.val_fraction = j.at("val_fraction").get<double>();
  t.checkpoint_every = j.at("checkpoint_every").get<int>();
  t.grad_clip_norm = j.at("grad_clip_norm").get<double>();
  t.augment_flips = j.at("augment_flips").get<bool>();
  if (phase == Phase::kPretrain) {
    t.negatives = ParseNegatives(j.at("negatives").get<std::string>());
    t.eval_chunk = j.at("eval_chunk").get<int>();
  }
  return t;
}

EncoderConfig EncoderConfigFrom(const json& config, Modality modality) {
  const json& j = config.at("encoder");
  EncoderConfig e = EncoderConfig::Make(modality, j.at("width_multiplier").get<double>(),
                                        BackbonePlan::ByName(j.at("backbone").get<std::string>()));
  e.projection_hidden_dim = j.at("projection_hidden_dim").get<int>();
  e.projection_dim = j.at("projection_dim").get<int>();
  return e;
}

SyntheticConfig SyntheticConfigFrom(const json& config) {
  return SyntheticConfig::FromJson(config.at("synthetic").at("scene"));
}

PatchSpec PatchSpecFrom(const json& config) {
  const json& j = config.at("patch");
  PatchSpec p;
  p.size = j.at("size").get<int>();
  p.strategy = ParsePatchStrategy(j.at("strategy").get<std::string>());
  p.patches_per_image = j.at("patches_per_image").get<int>();
  p.seed = config.at("seed").get<std::uint64_t>();
  return p;
}

HeadSpec HeadSpecFrom(const json& config) {
  HeadSpec h = HeadSpec::FromJson(config.at("head"));
  return h;
}

Temperature TemperatureFrom(const json& config) {
  const json& j = config.at("temperature");
  return Temperature::FromTau(j.at("init").get<double>(), j.at("min").get<double>(),
                              j.at("max").get<double>());
}

}  // namespace csip
