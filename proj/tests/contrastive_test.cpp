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
#include <vector>

#include <gtest/gtest.h>

#include "csip/contrastive.hpp"
#include "csip/error.hpp"
#include "csip/rng.hpp"

namespace csip {
namespace {

// Direct transcription of the loss: 2N concatenation, pairs (k, k + N), no
// numerical safeguards.
double OracleLoss(const Eigen::MatrixXd& zr, const Eigen::MatrixXd& za, double tau,
                  bool cross_modal_only = false) {
  const int n = static_cast<int>(zr.rows());
  Eigen::MatrixXd z(2 * n, zr.cols());
  z << zr, za;
  const auto sim = [&](int a, int b) {
    return z.row(a).dot(z.row(b)) / (z.row(a).norm() * z.row(b).norm());
  };
  const auto ell = [&](int i, int j) {
    double denom = 0.0;
    for (int k = 0; k < 2 * n; ++k) {
      if (k == i) continue;
      if (cross_modal_only && (k < n) == (i < n)) continue;
      denom += std::exp(sim(i, k) / tau);
    }
    return -std::log(std::exp(sim(i, j) / tau) / denom);
  };
  double total = 0.0;
  for (int k = 0; k < n; ++k) total += ell(k, k + n) + ell(k + n, k);
  return total / (2.0 * n);
}

Eigen::MatrixXd RandomUnitRows(Rng& rng, int n, int d) {
  Eigen::MatrixXd m(n, d);
  for (int r = 0; r < n; ++r) {
    for (int c = 0; c < d; ++c) m(r, c) = rng.Normal();
    m.row(r).normalize();
  }
  return m;
}

EmbeddingBatch Batch(Modality m, Eigen::MatrixXd v) {
  EmbeddingBatch b;
  b.modality = m;
  b.vectors = std::move(v);
  for (int i = 0; i < b.vectors.rows(); ++i) b.sample_ids.push_back("s" + std::to_string(i));
  return b;
}

TEST(NtXent, MatchesOracleOnRandomBatches) {
  Rng rng(11);
  int checked = 0;
  for (int rep = 0; rep < 9; ++rep) {
    for (int n : {1, 2, 4, 8}) {
      for (int d : {4, 8, 16}) {
        for (double tau : {0.05, 0.5}) {
          const auto zr = RandomUnitRows(rng, n, d);
          const auto za = RandomUnitRows(rng, n, d);
          const double got =
              NtXent(Batch(Modality::kRgb, zr), Batch(Modality::kAgl, za), Temperature::FromTau(tau))
                  .total;
          EXPECT_NEAR(got, OracleLoss(zr, za, tau), 1e-6) << "n=" << n << " d=" << d;
          ++checked;
        }
      }
    }
  }
  EXPECT_GE(checked, 200);
}

TEST(NtXent, CrossModalNegativesMatchOracle) {
  Rng rng(12);
  for (int rep = 0; rep < 20; ++rep) {
    const auto zr = RandomUnitRows(rng, 5, 6);
    const auto za = RandomUnitRows(rng, 5, 6);
    const double got = NtXent(Batch(Modality::kRgb, zr), Batch(Modality::kAgl, za),
                              Temperature::FromTau(0.2), Negatives::kCrossModalOnly)
                           .total;
    EXPECT_NEAR(got, OracleLoss(zr, za, 0.2, true), 1e-9);
  }
}

TEST(NtXent, SinglePairIsZero) {
  Rng rng(3);
  const auto zr = RandomUnitRows(rng, 1, 8);
  const auto za = RandomUnitRows(rng, 1, 8);
  const auto loss = NtXent(Batch(Modality::kRgb, zr), Batch(Modality::kAgl, za), Temperature{});
  EXPECT_NEAR(loss.total, 0.0, 1e-9);
  EXPECT_GE(loss.total, 0.0);
}

TEST(NtXent, IdenticalEmbeddingsGiveLogThree) {
  Eigen::MatrixXd z = Eigen::MatrixXd::Zero(2, 4);
  z.col(0).setOnes();
  const auto loss = NtXent(Batch(Modality::kRgb, z), Batch(Modality::kAgl, z), Temperature::FromTau(0.3));
  EXPECT_NEAR(loss.total, std::log(3.0), 1e-6);
}

TEST(NtXent, PerfectAlignmentApproachesZero) {
  Eigen::MatrixXd z = Eigen::MatrixXd::Identity(4, 4);
  const auto loss = NtXent(Batch(Modality::kRgb, z), Batch(Modality::kAgl, z), Temperature::FromTau(0.01));
  EXPECT_LT(loss.total, 1e-12 + 3.0 * std::exp(-100.0));
}

TEST(NtXent, NonNegativeAndPerPairShape) {
  Rng rng(5);
  for (int rep = 0; rep < 30; ++rep) {
    const auto zr = RandomUnitRows(rng, 6, 4);
    const auto za = RandomUnitRows(rng, 6, 4);
    const auto loss = NtXent(Batch(Modality::kRgb, zr), Batch(Modality::kAgl, za), Temperature{});
    EXPECT_GE(loss.total, 0.0);
    ASSERT_EQ(loss.per_pair.size(), 6u);
    double mean = 0.0;
    for (double v : loss.per_pair) mean += v / 6.0;
    EXPECT_NEAR(mean, loss.total, 1e-12);
    EXPECT_EQ(loss.similarity.rows(), 12);
    EXPECT_TRUE(loss.similarity.isApprox(loss.similarity.transpose(), 0.0));
  }
}

TEST(NtXent, GradientMatchesFiniteDifferences) {
  Rng rng(21);
  const double h = 1e-5;
  for (int rep = 0; rep < 50; ++rep) {
    const int n = 1 + rep % 4;
    const int d = 3 + rep % 3;
    const double tau = rep % 2 ? 0.1 : 0.5;
    const auto zr = RandomUnitRows(rng, n, d);
    const auto za = RandomUnitRows(rng, n, d);
    const Temperature temp = Temperature::FromTau(tau);
    const auto [loss, grad] =
        NtXentWithGradient(Batch(Modality::kRgb, zr), Batch(Modality::kAgl, za), temp);
    // Finite differences through raw dot products of the perturbed rows.
    const auto raw = [&](const Eigen::MatrixXd& a, const Eigen::MatrixXd& b, double t) {
      const int m = static_cast<int>(a.rows());
      Eigen::MatrixXd z(2 * m, a.cols());
      z << a, b;
      const Eigen::MatrixXd s = z * z.transpose();
      return NtXentFromSimilarity(s, t);
    };
    const auto rel = [](double a, double b) {
      return std::abs(a - b) / std::max({std::abs(a), std::abs(b), 1e-8});
    };
    for (int r = 0; r < n; ++r) {
      for (int c = 0; c < d; ++c) {
        for (int which = 0; which < 2; ++which) {
          Eigen::MatrixXd p = which == 0 ? zr : za, m = p;
          p(r, c) += h;
          m(r, c) -= h;
          const double fd = which == 0 ? (raw(p, za, tau) - raw(m, za, tau)) / (2 * h)
                                       : (raw(zr, p, tau) - raw(zr, m, tau)) / (2 * h);
          const double an = which == 0 ? grad.d_rgb(r, c) : grad.d_agl(r, c);
          if (std::abs(fd) > 1e-7 || std::abs(an) > 1e-7) {
            EXPECT_LT(rel(an, fd), 1e-4) << "rep " << rep << " r " << r << " c " << c;
          }
        }
      }
    }
    Temperature up = temp, down = temp;
    up.log_tau += h;
    down.log_tau -= h;
    const double fd_tau = (raw(zr, za, up.tau()) - raw(zr, za, down.tau())) / (2 * h);
    if (n > 1) EXPECT_LT(rel(grad.d_log_tau, fd_tau), 1e-4) << "rep " << rep;
  }
}

TEST(NtXent, ClampedTemperatureHasNoGradient) {
  Rng rng(8);
  const auto zr = RandomUnitRows(rng, 4, 4);
  const auto za = RandomUnitRows(rng, 4, 4);
  Temperature t;
  t.log_tau = std::log(0.001);
  EXPECT_DOUBLE_EQ(t.tau(), 0.01);
  const auto [loss, grad] = NtXentWithGradient(Batch(Modality::kRgb, zr), Batch(Modality::kAgl, za), t);
  EXPECT_EQ(grad.d_log_tau, 0.0);
  EXPECT_DOUBLE_EQ(loss.tau_used, 0.01);
}

TEST(NtXent, RejectsNonUnitRows) {
  Eigen::MatrixXd bad = Eigen::MatrixXd::Identity(2, 3);
  bad(1, 1) = 2.0;
  try {
    NtXent(Batch(Modality::kRgb, bad), Batch(Modality::kAgl, Eigen::MatrixXd::Identity(2, 3)),
           Temperature{});
    FAIL() << "expected a contract error";
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::kContract);
    EXPECT_NE(std::string(e.what()).find("row 1"), std::string::npos) << e.what();
  }
}

TEST(NtXent, RejectsMismatchedPairs) {
  const Eigen::MatrixXd z = Eigen::MatrixXd::Identity(2, 3);
  EmbeddingBatch a = Batch(Modality::kRgb, z), b = Batch(Modality::kAgl, z);
  b.sample_ids[1] = "other";
  try {
    NtXent(a, b, Temperature{});
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::kPairing);
  }
  EmbeddingBatch c = Batch(Modality::kAgl, Eigen::MatrixXd::Identity(3, 3));
  try {
    NtXent(a, c, Temperature{});
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::kShape);
  }
}

TEST(Retrieval, IdentityIsPerfect) {
  const Eigen::MatrixXd z = Eigen::MatrixXd::Identity(5, 5);
  const auto acc = ComputeRetrievalAccuracy(Batch(Modality::kRgb, z), Batch(Modality::kAgl, z), 1);
  EXPECT_EQ(acc.rgb_to_agl, 1.0);
  EXPECT_EQ(acc.agl_to_rgb, 1.0);
}

TEST(Retrieval, TiesRankLowerIndexFirst) {
  Eigen::MatrixXd z = Eigen::MatrixXd::Zero(3, 2);
  z.col(0).setOnes();
  // Every candidate ties, so only row 0 finds its partner at top-1.
  const auto acc = ComputeRetrievalAccuracy(Batch(Modality::kRgb, z), Batch(Modality::kAgl, z), 1);
  EXPECT_DOUBLE_EQ(acc.rgb_to_agl, 1.0 / 3.0);
  EXPECT_DOUBLE_EQ(acc.agl_to_rgb, 1.0 / 3.0);
  const auto acc2 = ComputeRetrievalAccuracy(Batch(Modality::kRgb, z), Batch(Modality::kAgl, z), 2);
  EXPECT_DOUBLE_EQ(acc2.rgb_to_agl, 2.0 / 3.0);
}

TEST(Retrieval, RejectsBadK) {
  const Eigen::MatrixXd z = Eigen::MatrixXd::Identity(3, 3);
  for (int k : {0, 3, 4}) {
    try {
      ComputeRetrievalAccuracy(Batch(Modality::kRgb, z), Batch(Modality::kAgl, z), k);
      FAIL() << k;
    } catch (const Error& e) {
      EXPECT_EQ(e.kind(), ErrorKind::kParameter);
    }
  }
}

TEST(Retrieval, RandomEmbeddingsSitAtChance) {
  // 256 pairs; the top-1 hit count is close to Binomial(256, 1/256).
  Rng rng(99);
  const int n = 256, trials = 40;
  double hits = 0.0;
  for (int t = 0; t < trials; ++t) {
    const auto acc = ComputeRetrievalAccuracy(Batch(Modality::kRgb, RandomUnitRows(rng, n, 16)),
                                              Batch(Modality::kAgl, RandomUnitRows(rng, n, 16)), 1);
    hits += acc.rgb_to_agl * n;
  }
  const double mean = hits / trials;
  const double sigma = std::sqrt(n * (1.0 / n) * (1.0 - 1.0 / n) / trials);
  EXPECT_NEAR(mean, 1.0, 3.0 * sigma);
}

TEST(Temperature, InitAndClamp) {
  Temperature t;
  EXPECT_NEAR(t.tau(), 0.07, 1e-12);
  EXPECT_NEAR(Temperature::FromTau(5.0).tau(), 1.0, 1e-12);
  EXPECT_EQ(Temperature::FromTau(5.0).dtau_dlog(), 0.0);
  EXPECT_NEAR(t.dtau_dlog(), 0.07, 1e-12);
}

}  // namespace
}  // namespace csip
