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

#include "csip/metrics.hpp"

#include <cstdio>
#include <numeric>

#include "csip/error.hpp"

namespace csip {

namespace {

nlohmann::json OptionalList(const std::vector<std::optional<double>>& v) {
  nlohmann::json out = nlohmann::json::array();
  for (const auto& x : v) out.push_back(x ? nlohmann::json(*x) : nlohmann::json(nullptr));
  return out;
}

double MeanPresent(const std::vector<std::optional<double>>& v) {
  double s = 0.0;
  int n = 0;
  for (const auto& x : v) {
    if (x) {
      s += *x;
      ++n;
    }
  }
  return n ? s / n : 0.0;
}

}  // namespace

ConfusionMatrix::ConfusionMatrix(int num_classes) : k_(num_classes) {
  if (num_classes < 1) Fail(ErrorKind::kParameter, "num_classes must be >= 1");
  counts_.assign(static_cast<std::size_t>(k_) * k_, 0);
}

std::int64_t ConfusionMatrix::total() const {
  return std::accumulate(counts_.begin(), counts_.end(), std::int64_t{0});
}

template <typename L>
void ConfusionMatrix::AccumulateImpl(std::span<const L> truth, std::span<const L> pred) {
  if (truth.size() != pred.size()) {
    Fail(ErrorKind::kShape, "truth has " + std::to_string(truth.size()) +
                                " pixels, prediction " + std::to_string(pred.size()));
  }
  for (std::size_t i = 0; i < truth.size(); ++i) {
    const int t = static_cast<int>(truth[i]);
    const int p = static_cast<int>(pred[i]);
    if (t < 0 || t >= k_ || p < 0 || p >= k_) {
      Fail(ErrorKind::kData, "label " + std::to_string(t < 0 || t >= k_ ? t : p) +
                                 " outside [0, " + std::to_string(k_ - 1) + "]");
    }
    ++counts_[static_cast<std::size_t>(t * k_ + p)];
  }
}

void ConfusionMatrix::Accumulate(std::span<const std::uint8_t> truth,
                                 std::span<const std::uint8_t> pred) {
  AccumulateImpl(truth, pred);
}

void ConfusionMatrix::Accumulate(std::span<const int> truth, std::span<const int> pred) {
  AccumulateImpl(truth, pred);
}

ConfusionMatrix& ConfusionMatrix::operator+=(const ConfusionMatrix& other) {
  if (other.k_ != k_) Fail(ErrorKind::kShape, "confusion matrices differ in K");
  for (std::size_t i = 0; i < counts_.size(); ++i) counts_[i] += other.counts_[i];
  return *this;
}

ConfusionMatrix ConfusionMatrix::FromCounts(const std::vector<std::vector<std::int64_t>>& rows) {
  ConfusionMatrix cm(static_cast<int>(rows.size()));
  for (int t = 0; t < cm.k_; ++t) {
    if (static_cast<int>(rows[static_cast<std::size_t>(t)].size()) != cm.k_) {
      Fail(ErrorKind::kShape, "confusion matrix must be square");
    }
    for (int p = 0; p < cm.k_; ++p) {
      const std::int64_t v = rows[static_cast<std::size_t>(t)][static_cast<std::size_t>(p)];
      if (v < 0) Fail(ErrorKind::kData, "negative confusion count");
      cm.count(t, p) = v;
    }
  }
  return cm;
}

std::vector<std::vector<std::int64_t>> ConfusionMatrix::Rows() const {
  std::vector<std::vector<std::int64_t>> rows(static_cast<std::size_t>(k_));
  for (int t = 0; t < k_; ++t) {
    for (int p = 0; p < k_; ++p) rows[static_cast<std::size_t>(t)].push_back(count(t, p));
  }
  return rows;
}

ConfusionMatrix Accumulate(ConfusionMatrix cm, std::span<const std::uint8_t> truth,
                           std::span<const std::uint8_t> pred) {
  cm.Accumulate(truth, pred);
  return cm;
}

MetricsReport ComputeReport(const ConfusionMatrix& cm) {
  const std::int64_t total = cm.total();
  if (total <= 0) Fail(ErrorKind::kContract, "cannot score an empty confusion matrix");
  const int k = cm.num_classes();
  MetricsReport r;
  r.num_classes = k;
  r.confusion_matrix = cm.Rows();
  std::int64_t correct = 0;
  for (int c = 0; c < k; ++c) {
    const std::int64_t tp = cm.count(c, c);
    std::int64_t fp = 0, fn = 0;
    for (int o = 0; o < k; ++o) {
      if (o == c) continue;
      fp += cm.count(o, c);
      fn += cm.count(c, o);
    }
    correct += tp;
    r.pixel_counts.push_back(tp + fn);
    const std::int64_t uni = tp + fp + fn;
    r.per_class_iou.push_back(uni > 0 ? std::optional<double>(static_cast<double>(tp) / uni)
                                      : std::nullopt);
    r.per_class_f1.push_back(uni > 0 ? std::optional<double>(2.0 * tp / (2.0 * tp + fp + fn))
                                     : std::nullopt);
    r.per_class_recall.push_back(tp + fn > 0
                                     ? std::optional<double>(static_cast<double>(tp) / (tp + fn))
                                     : std::nullopt);
  }
  r.miou = MeanPresent(r.per_class_iou);
  r.average_accuracy = MeanPresent(r.per_class_recall);
  r.pixel_accuracy = static_cast<double>(correct) / static_cast<double>(total);
  if (k == 2) {
    // No support and no predictions for the positive class: nothing to miss.
    r.f1 = r.per_class_f1[1].value_or(1.0);
  } else {
    r.f1 = MeanPresent(r.per_class_f1);
  }
  return r;
}

nlohmann::json MetricsReport::ToJson() const {
  return {{"num_classes", num_classes},
          {"per_class_iou", OptionalList(per_class_iou)},
          {"per_class_f1", OptionalList(per_class_f1)},
          {"per_class_recall", OptionalList(per_class_recall)},
          {"miou", miou},
          {"f1", f1},
          {"average_accuracy", average_accuracy},
          {"pixel_accuracy", pixel_accuracy},
          {"pixel_counts", pixel_counts},
          {"confusion_matrix", confusion_matrix}};
}

std::string RenderMetricsTable(std::span<const TableRow> rows, bool pixel_accuracy) {
  std::string out;
  char line[160];
  if (pixel_accuracy) {
    std::snprintf(line, sizeof line, "%-14s %-14s %7s %7s %7s %9s\n", "Dataset", "Weight Init.",
                  "mIoU", "F1", "Acc.", "PixAcc.");
  } else {
    std::snprintf(line, sizeof line, "%-14s %-14s %7s %7s %7s\n", "Dataset", "Weight Init.",
                  "mIoU", "F1", "Acc.");
  }
  out += line;
  out += std::string(pixel_accuracy ? 63 : 53, '-') + "\n";
  for (const TableRow& r : rows) {
    if (pixel_accuracy) {
      std::snprintf(line, sizeof line, "%-14s %-14s %7.3f %7.3f %7.3f %9.3f\n",
                    r.dataset.c_str(), r.weight_init.c_str(), r.report.miou, r.report.f1,
                    r.report.average_accuracy, r.report.pixel_accuracy);
    } else {
      std::snprintf(line, sizeof line, "%-14s %-14s %7.3f %7.3f %7.3f\n", r.dataset.c_str(),
                    r.weight_init.c_str(), r.report.miou, r.report.f1,
                    r.report.average_accuracy);
    }
    out += line;
  }
  return out;
}

}  // namespace csip
