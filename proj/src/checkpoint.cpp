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

#include "csip/checkpoint.hpp"

#include <bit>
#include <chrono>
#include <cstring>
#include <ctime>
#include <fstream>
#include <sstream>

#include "csip/error.hpp"
#include "csip/raster.hpp"

namespace csip {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

static_assert(std::endian::native == std::endian::little, "blobs are written in host order");

std::string HexBits(double v) {
  std::ostringstream os;
  os << std::hex << std::bit_cast<std::uint64_t>(v);
  return os.str();
}

double FromHexBits(const std::string& s) {
  return std::bit_cast<double>(static_cast<std::uint64_t>(std::stoull(s, nullptr, 16)));
}

std::string NowIso() {
  const std::time_t t = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  std::tm tm{};
  gmtime_r(&t, &tm);
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

json WriteParameters(const ParameterMap& params, const fs::path& dir, const std::string& role) {
  fs::create_directories(dir / role);
  json index = json::object();
  for (const auto& [name, t] : params) {
    const std::string rel = role + "/" + BlobFileName(name);
    const std::size_t bytes = static_cast<std::size_t>(t.numel()) * sizeof(float);
    std::ofstream out(dir / rel, std::ios::binary | std::ios::trunc);
    out.write(reinterpret_cast<const char*>(t.data()), static_cast<std::streamsize>(bytes));
    if (!out) Fail(ErrorKind::kIo, "cannot write " + (dir / rel).string());
    index[name] = {{"shape", t.shape()},
                   {"dtype", kBlobDtype},
                   {"file", rel},
                   {"sha256", Sha256Hex(t.data(), bytes)}};
  }
  return index;
}

ParameterMap ReadParameters(const json& index, const fs::path& dir) {
  ParameterMap params;
  for (const auto& [name, entry] : index.items()) {
    const Shape shape = entry.at("shape").get<Shape>();
    const std::string rel = entry.at("file").get<std::string>();
    if (entry.at("dtype").get<std::string>() != kBlobDtype) {
      Fail(ErrorKind::kCorruption, rel + ": unsupported dtype " + entry.at("dtype").dump());
    }
    const fs::path path = dir / rel;
    if (!fs::exists(path)) Fail(ErrorKind::kCorruption, rel + ": blob missing");
    const std::vector<std::uint8_t> bytes = ReadFileBytes(path);
    const std::size_t expected = static_cast<std::size_t>(ShapeNumel(shape)) * sizeof(float);
    if (bytes.size() != expected) {
      Fail(ErrorKind::kCorruption, rel + ": truncated or oversized blob (" +
                                       std::to_string(bytes.size()) + " bytes, expected " +
                                       std::to_string(expected) + ")");
    }
    if (Sha256Hex(bytes.data(), bytes.size()) != entry.at("sha256").get<std::string>()) {
      Fail(ErrorKind::kCorruption, rel + ": content hash mismatch");
    }
    Tensor t(shape);
    if (expected > 0) std::memcpy(t.data(), bytes.data(), expected);
    params.emplace(name, std::move(t));
  }
  return params;
}

void CheckIndex(const json& index, const std::map<std::string, Shape>& expected) {
  for (const auto& [name, shape] : expected) {
    if (!index.contains(name)) Fail(ErrorKind::kShape, "parameter " + name + " missing");
    const Shape got = index.at(name).at("shape").get<Shape>();
    if (got != shape) {
      Fail(ErrorKind::kShape, "parameter " + name + ": stored " + ShapeString(got) +
                                  ", config expects " + ShapeString(shape));
    }
  }
  for (const auto& [name, entry] : index.items()) {
    if (!expected.count(name)) Fail(ErrorKind::kShape, "unexpected parameter " + name);
  }
}

}  // namespace

std::string BlobFileName(const std::string& parameter_name) {
  std::string out;
  for (char c : parameter_name) {
    if (c == '/') {
      out += "__";
    } else {
      out += c;
    }
  }
  return out;
}

void CheckParameterShapes(const ParameterMap& params,
                          const std::map<std::string, Shape>& expected) {
  for (const auto& [name, shape] : expected) {
    auto it = params.find(name);
    if (it == params.end()) Fail(ErrorKind::kShape, "parameter " + name + " missing");
    if (it->second.shape() != shape) {
      Fail(ErrorKind::kShape, "parameter " + name + ": got " + ShapeString(it->second.shape()) +
                                  ", expected " + ShapeString(shape));
    }
  }
  for (const auto& [name, t] : params) {
    if (!expected.count(name)) Fail(ErrorKind::kShape, "unexpected parameter " + name);
  }
}

std::string DigestParameters(const ParameterMap& params) {
  std::string acc;
  for (const auto& [name, t] : params) {
    acc += name;
    acc += ':';
    acc += Sha256Hex(t.data(), static_cast<std::size_t>(t.numel()) * sizeof(float));
    acc += ';';
  }
  return Sha256Hex(acc.data(), acc.size());
}

json SaveCheckpoint(const Checkpoint& ck, const fs::path& dir) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) Fail(ErrorKind::kPath, "cannot create " + dir.string() + ": " + ec.message());
  json m;
  m["format"] = "csip-checkpoint";
  m["version"] = 1;
  json bundles = json::object();
  for (const auto& [role, enc] : ck.encoders) {
    CheckParameterShapes(enc.parameters, EncoderParameterShapes(enc.config));
    bundles[role] = {{"kind", "encoder"},
                     {"modality", ModalityName(enc.config.modality)},
                     {"frozen", enc.frozen},
                     {"config", enc.config.ToJson()},
                     {"parameters", WriteParameters(enc.parameters, dir, role)}};
  }
  if (ck.head) {
    auto it = ck.encoders.find(ck.head_encoder);
    if (it == ck.encoders.end()) {
      Fail(ErrorKind::kContract, "head checkpoint needs encoder '" + ck.head_encoder + "'");
    }
    CheckParameterShapes(ck.head->parameters,
                         HeadParameterShapes(ck.head->spec, it->second.config));
    bundles["head"] = {{"kind", "head"},
                       {"architecture", ArchitectureName(ck.head->spec.architecture)},
                       {"encoder", ck.head_encoder},
                       {"spec", ck.head->spec.ToJson()},
                       {"parameters", WriteParameters(ck.head->parameters, dir, "head")}};
  }
  m["bundles"] = bundles;
  if (ck.temperature) {
    m["temperature"] = {{"log_tau", ck.temperature->log_tau},
                        {"log_tau_bits", HexBits(ck.temperature->log_tau)},
                        {"tau_min", ck.temperature->tau_min},
                        {"tau_max", ck.temperature->tau_max}};
  } else {
    m["temperature"] = nullptr;
  }
  m["run_state"] = {{"epoch", ck.run_state.epoch}, {"seed", ck.run_state.seed}};
  json meta = ck.metadata.is_object() ? ck.metadata : json::object();
  if (!meta.contains("created")) meta["created"] = NowIso();
  m["metadata"] = meta;
  std::ofstream out(dir / kManifestName, std::ios::trunc);
  out << m.dump(2) << "\n";
  if (!out) Fail(ErrorKind::kIo, "cannot write " + (dir / kManifestName).string());
  return m;
}

json ReadManifest(const fs::path& dir) {
  const fs::path path = dir / kManifestName;
  if (!fs::exists(path)) Fail(ErrorKind::kPath, "no checkpoint manifest at " + path.string());
  std::ifstream in(path);
  try {
    return json::parse(in);
  } catch (const json::exception& e) {
    Fail(ErrorKind::kCorruption, path.string() + ": " + e.what());
  }
}

json StripMetadata(json manifest) {
  manifest.erase("metadata");
  return manifest;
}

Checkpoint LoadCheckpoint(const fs::path& dir) {
  const json m = ReadManifest(dir);
  Checkpoint ck;
  try {
    const json& bundles = m.at("bundles");
    for (const auto& [role, b] : bundles.items()) {
      if (b.at("kind") != "encoder") continue;
      EncoderBundle enc;
      enc.config = EncoderConfig::FromJson(b.at("config"));
      enc.frozen = b.at("frozen").get<bool>();
      const json& index = b.at("parameters");
      CheckIndex(index, EncoderParameterShapes(enc.config));
      enc.parameters = ReadParameters(index, dir);
      ck.encoders.emplace(role, std::move(enc));
    }
    if (bundles.contains("head")) {
      const json& b = bundles.at("head");
      HeadBundle head;
      head.spec = HeadSpec::FromJson(b.at("spec"));
      ck.head_encoder = b.at("encoder").get<std::string>();
      auto it = ck.encoders.find(ck.head_encoder);
      if (it == ck.encoders.end()) {
        Fail(ErrorKind::kCorruption, "head references missing encoder " + ck.head_encoder);
      }
      const json& index = b.at("parameters");
      CheckIndex(index, HeadParameterShapes(head.spec, it->second.config));
      head.parameters = ReadParameters(index, dir);
      ck.head = std::move(head);
    }
    if (!m.at("temperature").is_null()) {
      const json& t = m.at("temperature");
      Temperature temp;
      temp.log_tau = FromHexBits(t.at("log_tau_bits").get<std::string>());
      temp.tau_min = t.at("tau_min").get<double>();
      temp.tau_max = t.at("tau_max").get<double>();
      ck.temperature = temp;
    }
    ck.run_state.epoch = m.at("run_state").at("epoch").get<int>();
    ck.run_state.seed = m.at("run_state").at("seed").get<std::uint64_t>();
    ck.metadata = m.value("metadata", json::object());
  } catch (const json::exception& e) {
    Fail(ErrorKind::kCorruption, (dir / kManifestName).string() + ": " + e.what());
  }
  return ck;
}

Checkpoint PretrainCheckpoint(const EncoderBundle& rgb, const EncoderBundle& agl,
                              const Temperature& temperature, RunState state) {
  Checkpoint ck;
  ck.encoders.emplace("rgb", rgb);
  ck.encoders.emplace("agl", agl);
  ck.temperature = temperature;
  ck.run_state = state;
  return ck;
}

Checkpoint ModelCheckpoint(const DownstreamModel& model, RunState state) {
  Checkpoint ck;
  ck.encoders.emplace("encoder", model.encoder);
  ck.head = model.head;
  ck.head_encoder = "encoder";
  ck.run_state = state;
  return ck;
}

DownstreamModel ModelFromCheckpoint(const Checkpoint& ck) {
  if (!ck.head) Fail(ErrorKind::kContract, "checkpoint has no head");
  DownstreamModel m;
  m.encoder = EncoderFromCheckpoint(ck, ck.head_encoder);
  m.head = *ck.head;
  return m;
}

EncoderBundle EncoderFromCheckpoint(const Checkpoint& ck, const std::string& role) {
  auto it = ck.encoders.find(role);
  if (it == ck.encoders.end()) {
    std::string have;
    for (const auto& [r, e] : ck.encoders) have += (have.empty() ? "" : ", ") + r;
    Fail(ErrorKind::kContract, "checkpoint has no encoder '" + role + "' (has: " + have + ")");
  }
  return it->second;
}

}  // namespace csip
