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

#include <cmath>

#include <gtest/gtest.h>

#include "csip/error.hpp"
#include "csip/optim.hpp"

namespace csip {
namespace {

TEST(AdamW, ZeroGradientDecaysGeometrically) {
  AdamW opt({.learning_rate = 0.1, .weight_decay = 0.5});
  ParameterMap params{{"conv/weight", Tensor({2}, 1.0f)}, {"conv/bias", Tensor({2}, 1.0f)}};
  ParameterMap grads{{"conv/weight", Tensor({2}, 0.0f)}, {"conv/bias", Tensor({2}, 0.0f)}};
  for (int t = 1; t <= 10; ++t) {
    opt.Step(params, grads);
    EXPECT_NEAR(params["conv/weight"][0], std::pow(0.95, t), 1e-6);
    EXPECT_EQ(params["conv/bias"][0], 1.0f);
  }
}

TEST(AdamW, FirstStepMovesByLearningRate) {
  AdamW opt({.learning_rate = 1e-3, .weight_decay = 0.0});
  ParameterMap params{{"w", Tensor({3}, 0.0f)}};
  Tensor g({3});
  g[0] = 5.0f;
  g[1] = -0.01f;
  g[2] = 0.0f;
  opt.Step(params, {{"w", g}});
  EXPECT_NEAR(params["w"][0], -1e-3, 1e-7);
  EXPECT_NEAR(params["w"][1], 1e-3, 1e-7);
  EXPECT_EQ(params["w"][2], 0.0f);
  EXPECT_EQ(opt.steps(), 1);
}

TEST(AdamW, MatchesReferenceRecurrence) {
  const AdamWConfig c{.learning_rate = 0.01, .weight_decay = 0.1};
  AdamW opt(c);
  ParameterMap params{{"fc/weight", Tensor({1}, 0.7f)}};
  double p = 0.7, m = 0, v = 0;
  for (int t = 1; t <= 20; ++t) {
    const double g = std::sin(t) + 0.3 * p;
    opt.Step(params, {{"fc/weight", Tensor({1}, static_cast<float>(g))}});
    p *= 1 - c.learning_rate * c.weight_decay;
    m = c.beta1 * m + (1 - c.beta1) * g;
    v = c.beta2 * v + (1 - c.beta2) * g * g;
    const double mh = m / (1 - std::pow(c.beta1, t)), vh = v / (1 - std::pow(c.beta2, t));
    p -= c.learning_rate * mh / (std::sqrt(vh) + c.epsilon);
    EXPECT_NEAR(params["fc/weight"][0], p, 1e-5) << t;
  }
}

TEST(AdamW, ScalarSkipsDecayByDefault) {
  AdamW opt({.learning_rate = 0.1, .weight_decay = 0.5});
  double x = 2.0;
  opt.StepScalar("log_tau", x, 0.0);
  EXPECT_EQ(x, 2.0);
  opt.StepScalar("log_tau", x, 1.0);
  EXPECT_LT(x, 2.0);
}

TEST(AdamW, UntouchedParametersAndBadConfig) {
  AdamW opt({});
  ParameterMap params{{"a/weight", Tensor({1}, 1.0f)}, {"b/weight", Tensor({1}, 1.0f)}};
  opt.Step(params, {{"a/weight", Tensor({1}, 1.0f)}});
  EXPECT_EQ(params["b/weight"][0], 1.0f);
  EXPECT_THROW(AdamW({.learning_rate = 0.0}), Error);
  EXPECT_THROW(AdamW({.weight_decay = -1.0}), Error);
}

TEST(AdamW, DecayPredicate) {
  EXPECT_TRUE(DecaysByDefault("layer1/0/conv1/weight"));
  EXPECT_FALSE(DecaysByDefault("layer1/0/bn1/gamma"));
  EXPECT_FALSE(DecaysByDefault("projection/fc1/bias"));
}

}  // namespace
}  // namespace csip
