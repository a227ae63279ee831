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

#ifndef CSIP_CONTRASTIVE_HPP_
#define CSIP_CONTRASTIVE_HPP_

#include <Eigen/Core>
#include <utility>
#include <vector>

#include "csip/embedding.hpp"
#include "json.hpp"

namespace csip {

// Learned temperature, parameterized in log space and clamped.
struct Temperature {
  double log_tau = -2.659260036932778;  // log(0.07)
  double tau_min = 0.01;
  double tau_max = 1.0;

  static Temperature FromTau(double tau, double tau_min = 0.01, double tau_max = 1.0);

  double tau() const;
  // d tau / d log_tau: tau inside the clamp range, zero when clamped.
  double dtau_dlog() const;
};

// Which embeddings enter the softmax denominator of each anchor.
enum class Negatives {
  kAll,            // every other embedding in the 2N concatenation
  kCrossModalOnly  // only embeddings of the other modality
};

Negatives ParseNegatives(const std::string& s);
const char* NegativesName(Negatives n);

struct LossBreakdown {
  double total = 0.0;
  std::vector<double> per_pair;  // mean of both directional terms per pair
  double tau_used = 0.0;
  Eigen::MatrixXd similarity;    // 2N x 2N

  nlohmann::json ToJson() const;
};

struct LossGradient {
  Eigen::MatrixXd d_rgb;  // N x D
  Eigen::MatrixXd d_agl;  // N x D
  double d_log_tau = 0.0;
};

// Dot products of unit rows. Rows off the unit sphere by more than 1e-4 are a
// contract error naming the row.
Eigen::MatrixXd CosineSimilarityMatrix(const Eigen::MatrixXd& z);

// Pairs row i of `rgb` with row i of `agl`; RGB rows occupy 0..N-1 and AGL
// rows N..2N-1 of the concatenation.
LossBreakdown NtXent(const EmbeddingBatch& rgb, const EmbeddingBatch& agl,
                     const Temperature& temperature,
                     Negatives negatives = Negatives::kAll);

std::pair<LossBreakdown, LossGradient> NtXentWithGradient(
    const EmbeddingBatch& rgb, const EmbeddingBatch& agl,
    const Temperature& temperature, Negatives negatives = Negatives::kAll);

// Loss from a precomputed 2N x 2N similarity matrix.
double NtXentFromSimilarity(const Eigen::MatrixXd& similarity, double tau,
                            Negatives negatives = Negatives::kAll,
                            std::vector<double>* per_pair = nullptr);

struct RetrievalAccuracy {
  double rgb_to_agl = 0.0;
  double agl_to_rgb = 0.0;
};

// Top-k cross-modal retrieval. Ties rank the lower index first.
RetrievalAccuracy ComputeRetrievalAccuracy(const EmbeddingBatch& rgb,
                                           const EmbeddingBatch& agl, int k);

}  // namespace csip

#endif  // CSIP_CONTRASTIVE_HPP_
