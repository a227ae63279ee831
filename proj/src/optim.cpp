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

#include "csip/optim.hpp"

#include <cmath>

#include "csip/error.hpp"

namespace csip {

bool DecaysByDefault(const std::string& name) {
  const auto slash = name.rfind('/');
  const std::string leaf = slash == std::string::npos ? name : name.substr(slash + 1);
  return leaf == "weight";
}

AdamW::AdamW(AdamWConfig config, DecayPredicate decay)
    : config_(config), decay_(decay ? std::move(decay) : DecayPredicate(DecaysByDefault)) {
  if (!(config_.learning_rate > 0.0)) Fail(ErrorKind::kConfig, "learning_rate: must be > 0");
  if (config_.weight_decay < 0.0) Fail(ErrorKind::kConfig, "weight_decay: must be >= 0");
}

void AdamW::Step(ParameterMap& params, const ParameterMap& grads) {
  ++steps_;
  const double lr = config_.learning_rate;
  const double b1 = config_.beta1, b2 = config_.beta2;
  const double c1 = 1.0 - std::pow(b1, static_cast<double>(steps_));
  const double c2 = 1.0 - std::pow(b2, static_cast<double>(steps_));
  for (const auto& [name, g] : grads) {
    auto it = params.find(name);
    if (it == params.end()) Fail(ErrorKind::kContract, "gradient for unknown parameter " + name);
    Tensor& p = it->second;
    if (p.shape() != g.shape()) {
      Fail(ErrorKind::kShape, name + ": gradient " + ShapeString(g.shape()) + " vs parameter " +
                                  ShapeString(p.shape()));
    }
    Moments& s = state_[name];
    if (s.m.empty()) {
      s.m.assign(static_cast<std::size_t>(p.numel()), 0.0);
      s.v.assign(static_cast<std::size_t>(p.numel()), 0.0);
    }
    const double shrink = decay_(name) ? 1.0 - lr * config_.weight_decay : 1.0;
    for (std::int64_t i = 0; i < p.numel(); ++i) {
      const auto k = static_cast<std::size_t>(i);
      const double gi = g[i];
      s.m[k] = b1 * s.m[k] + (1.0 - b1) * gi;
      s.v[k] = b2 * s.v[k] + (1.0 - b2) * gi * gi;
      const double mh = s.m[k] / c1, vh = s.v[k] / c2;
      double w = static_cast<double>(p[i]) * shrink;
      w -= lr * mh / (std::sqrt(vh) + config_.epsilon);
      p[i] = static_cast<float>(w);
    }
  }
}

void AdamW::StepScalar(const std::string& name, double& value, double grad, bool decay) {
  const long t = ++scalar_steps_[name];
  auto& [m, v] = scalar_state_[name];
  const double lr = config_.learning_rate;
  m = config_.beta1 * m + (1.0 - config_.beta1) * grad;
  v = config_.beta2 * v + (1.0 - config_.beta2) * grad * grad;
  const double mh = m / (1.0 - std::pow(config_.beta1, static_cast<double>(t)));
  const double vh = v / (1.0 - std::pow(config_.beta2, static_cast<double>(t)));
  if (decay) value *= 1.0 - lr * config_.weight_decay;
  value -= lr * mh / (std::sqrt(vh) + config_.epsilon);
}

}  // namespace csip
