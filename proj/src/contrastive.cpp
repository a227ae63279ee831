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

#include "csip/contrastive.hpp"

#include <algorithm>
#include <cmath>

#include "csip/error.hpp"

namespace csip {

namespace {

void CheckPairing(const EmbeddingBatch& rgb, const EmbeddingBatch& agl) {
  if (rgb.size() != agl.size()) {
    Fail(ErrorKind::kShape, "batch sizes differ: " + std::to_string(rgb.size()) +
                                " rgb vs " + std::to_string(agl.size()) + " agl");
  }
  if (rgb.size() < 1) Fail(ErrorKind::kShape, "empty embedding batch");
  if (rgb.dim() != agl.dim()) {
    Fail(ErrorKind::kShape, "embedding dims differ: " + std::to_string(rgb.dim()) +
                                " vs " + std::to_string(agl.dim()));
  }
  if (!rgb.sample_ids.empty() || !agl.sample_ids.empty()) {
    if (rgb.sample_ids.size() != agl.sample_ids.size()) {
      Fail(ErrorKind::kPairing, "sample id lists differ in length");
    }
    for (std::size_t i = 0; i < rgb.sample_ids.size(); ++i) {
      if (rgb.sample_ids[i] != agl.sample_ids[i]) {
        Fail(ErrorKind::kPairing, "row " + std::to_string(i) + " pairs '" +
                                      rgb.sample_ids[i] + "' with '" +
                                      agl.sample_ids[i] + "'");
      }
    }
  }
}

Eigen::MatrixXd Stack(const EmbeddingBatch& rgb, const EmbeddingBatch& agl) {
  Eigen::MatrixXd z(2 * rgb.size(), rgb.dim());
  z.topRows(rgb.size()) = rgb.vectors;
  z.bottomRows(agl.size()) = agl.vectors;
  return z;
}

bool Allowed(int anchor, int k, int n, Negatives negatives) {
  if (k == anchor) return false;
  if (negatives == Negatives::kAll) return true;
  return (anchor < n) != (k < n);
}

// Softmax over allowed entries of one similarity row, scaled by 1/tau, with
// the row maximum subtracted before exponentiation.
// Returns the log-sum-exp and fills `probs`.
double RowSoftmax(const Eigen::MatrixXd& s, int anchor, double tau, int n,
                  Negatives negatives, Eigen::VectorXd& probs) {
  const int m = static_cast<int>(s.rows());
  probs.setZero(m);
  double mx = -INFINITY;
  for (int k = 0; k < m; ++k) {
    if (Allowed(anchor, k, n, negatives)) mx = std::max(mx, s(anchor, k) / tau);
  }
  double sum = 0.0;
  for (int k = 0; k < m; ++k) {
    if (!Allowed(anchor, k, n, negatives)) continue;
    probs(k) = std::exp(s(anchor, k) / tau - mx);
    sum += probs(k);
  }
  probs /= sum;
  return mx + std::log(sum);
}

}  // namespace

Temperature Temperature::FromTau(double tau, double tau_min, double tau_max) {
  Temperature t;
  t.log_tau = std::log(tau);
  t.tau_min = tau_min;
  t.tau_max = tau_max;
  return t;
}

double Temperature::tau() const {
  return std::clamp(std::exp(log_tau), tau_min, tau_max);
}

double Temperature::dtau_dlog() const {
  const double raw = std::exp(log_tau);
  return (raw > tau_min && raw < tau_max) ? raw : 0.0;
}

Negatives ParseNegatives(const std::string& s) {
  if (s == "all") return Negatives::kAll;
  if (s == "cross_modal_only") return Negatives::kCrossModalOnly;
  Fail(ErrorKind::kConfig, "negatives: unknown value '" + s + "'");
}

const char* NegativesName(Negatives n) {
  return n == Negatives::kAll ? "all" : "cross_modal_only";
}

nlohmann::json LossBreakdown::ToJson() const {
  return {{"total", total}, {"per_pair", per_pair}, {"tau_used", tau_used}};
}

Eigen::MatrixXd CosineSimilarityMatrix(const Eigen::MatrixXd& z) {
  for (int i = 0; i < z.rows(); ++i) {
    const double norm = z.row(i).norm();
    if (!(std::fabs(norm - 1.0) <= 1e-4)) {
      Fail(ErrorKind::kContract, "row " + std::to_string(i) +
                                     " is not unit-normalized (norm " +
                                     std::to_string(norm) + ")");
    }
  }
  Eigen::MatrixXd s = z * z.transpose();
  // Exact symmetry regardless of GEMM blocking.
  for (int i = 0; i < s.rows(); ++i) {
    for (int j = i + 1; j < s.cols(); ++j) s(j, i) = s(i, j);
  }
  return s;
}

double NtXentFromSimilarity(const Eigen::MatrixXd& s, double tau, Negatives negatives,
                            std::vector<double>* per_pair) {
  const int m = static_cast<int>(s.rows());
  const int n = m / 2;
  Eigen::VectorXd probs;
  std::vector<double> terms(m);
  for (int a = 0; a < m; ++a) {
    const int positive = a < n ? a + n : a - n;
    const double lse = RowSoftmax(s, a, tau, n, negatives, probs);
    terms[a] = std::max(0.0, lse - s(a, positive) / tau);
  }
  double total = 0.0;
  if (per_pair) per_pair->assign(n, 0.0);
  for (int i = 0; i < n; ++i) {
    const double pair = 0.5 * (terms[i] + terms[i + n]);
    if (per_pair) (*per_pair)[i] = pair;
    total += pair;
  }
  return total / n;
}

LossBreakdown NtXent(const EmbeddingBatch& rgb, const EmbeddingBatch& agl,
                     const Temperature& temperature, Negatives negatives) {
  CheckPairing(rgb, agl);
  LossBreakdown out;
  out.similarity = CosineSimilarityMatrix(Stack(rgb, agl));
  out.tau_used = temperature.tau();
  out.total = NtXentFromSimilarity(out.similarity, out.tau_used, negatives, &out.per_pair);
  return out;
}

std::pair<LossBreakdown, LossGradient> NtXentWithGradient(
    const EmbeddingBatch& rgb, const EmbeddingBatch& agl,
    const Temperature& temperature, Negatives negatives) {
  CheckPairing(rgb, agl);
  const int n = rgb.size();
  const int m = 2 * n;
  const Eigen::MatrixXd z = Stack(rgb, agl);
  LossBreakdown out;
  out.similarity = CosineSimilarityMatrix(z);
  const double tau = temperature.tau();
  out.tau_used = tau;

  // total = 1/(2N) sum_a l_a, l_a = -s_ap/tau + LSE_k(s_ak/tau).
  // dl_a/ds_ak = (P_ak - [k = p]) / tau; dl_a/dtau = (s_ap - sum_k P_ak s_ak) / tau^2.
  Eigen::MatrixXd ds = Eigen::MatrixXd::Zero(m, m);
  double dtau = 0.0;
  std::vector<double> terms(m);
  Eigen::VectorXd probs;
  const double w = 1.0 / m;
  for (int a = 0; a < m; ++a) {
    const int p = a < n ? a + n : a - n;
    const double lse = RowSoftmax(out.similarity, a, tau, n, negatives, probs);
    terms[a] = std::max(0.0, lse - out.similarity(a, p) / tau);
    double expected = 0.0;
    for (int k = 0; k < m; ++k) {
      if (probs(k) == 0.0) continue;
      ds(a, k) += w * probs(k) / tau;
      expected += probs(k) * out.similarity(a, k);
    }
    ds(a, p) -= w / tau;
    dtau += w * (out.similarity(a, p) - expected) / (tau * tau);
  }
  out.per_pair.assign(n, 0.0);
  for (int i = 0; i < n; ++i) {
    out.per_pair[i] = 0.5 * (terms[i] + terms[i + n]);
    out.total += out.per_pair[i];
  }
  out.total /= n;

  // s = z z^T, so dz = (ds + ds^T) z.
  const Eigen::MatrixXd dz = (ds + ds.transpose()) * z;
  LossGradient grad;
  grad.d_rgb = dz.topRows(n);
  grad.d_agl = dz.bottomRows(n);
  grad.d_log_tau = dtau * temperature.dtau_dlog();
  return {std::move(out), std::move(grad)};
}

RetrievalAccuracy ComputeRetrievalAccuracy(const EmbeddingBatch& rgb,
                                           const EmbeddingBatch& agl, int k) {
  CheckPairing(rgb, agl);
  const int n = rgb.size();
  if (n < 2) Fail(ErrorKind::kParameter, "retrieval needs at least 2 pairs");
  if (k < 1 || k >= n) {
    Fail(ErrorKind::kParameter, "k=" + std::to_string(k) + " must lie in [1, " +
                                    std::to_string(n - 1) + "]");
  }
  const Eigen::MatrixXd cross = rgb.vectors * agl.vectors.transpose();
  const auto hits = [&](auto sim) {
    int count = 0;
    for (int i = 0; i < n; ++i) {
      const double target = sim(i, i);
      int better = 0;
      for (int j = 0; j < n; ++j) {
        if (j == i) continue;
        const double v = sim(i, j);
        if (v > target || (v == target && j < i)) ++better;
      }
      if (better < k) ++count;
    }
    return static_cast<double>(count) / n;
  };
  RetrievalAccuracy acc;
  acc.rgb_to_agl = hits([&](int r, int c) { return cross(r, c); });
  acc.agl_to_rgb = hits([&](int r, int c) { return cross(c, r); });
  return acc;
}

}  // namespace csip
