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

#ifndef CSIP_OPTIM_HPP_
#define CSIP_OPTIM_HPP_

#include <functional>
#include <map>
#include <string>

#include "csip/tensor.hpp"

namespace csip {

struct AdamWConfig {
  double learning_rate = 1e-3;
  double weight_decay = 0.01;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
};

// Decoupled weight decay followed by an Adam step. Parameters for which
// `decay` returns false skip the decay term.
class AdamW {
 public:
  using DecayPredicate = std::function<bool(const std::string&)>;

  explicit AdamW(AdamWConfig config, DecayPredicate decay = nullptr);

  // Updates every parameter present in `grads`; others are left untouched.
  void Step(ParameterMap& params, const ParameterMap& grads);
  // Scalar parameter with its own moments, keyed by `name`.
  void StepScalar(const std::string& name, double& value, double grad, bool decay = false);

  long steps() const { return steps_; }
  const AdamWConfig& config() const { return config_; }

 private:
  struct Moments {
    std::vector<double> m, v;
  };

  AdamWConfig config_;
  DecayPredicate decay_;
  std::map<std::string, Moments> state_;
  std::map<std::string, std::pair<double, double>> scalar_state_;
  std::map<std::string, long> scalar_steps_;
  long steps_ = 0;
};

// Conv and linear weights decay; normalisation parameters and biases do not.
bool DecaysByDefault(const std::string& name);

}  // namespace csip

#endif  // CSIP_OPTIM_HPP_
