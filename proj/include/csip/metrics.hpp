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

#ifndef CSIP_METRICS_HPP_
#define CSIP_METRICS_HPP_

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "json.hpp"

namespace csip {

// Rows are true classes, columns predicted classes.
class ConfusionMatrix {
 public:
  explicit ConfusionMatrix(int num_classes);

  int num_classes() const { return k_; }
  std::int64_t count(int truth, int pred) const {
    return counts_[static_cast<std::size_t>(truth * k_ + pred)];
  }
  std::int64_t& count(int truth, int pred) {
    return counts_[static_cast<std::size_t>(truth * k_ + pred)];
  }
  std::int64_t total() const;

  // Labels must be < K; any other value is a data error naming it.
  void Accumulate(std::span<const std::uint8_t> truth, std::span<const std::uint8_t> pred);
  void Accumulate(std::span<const int> truth, std::span<const int> pred);
  ConfusionMatrix& operator+=(const ConfusionMatrix& other);

  static ConfusionMatrix FromCounts(const std::vector<std::vector<std::int64_t>>& rows);
  std::vector<std::vector<std::int64_t>> Rows() const;

  friend bool operator==(const ConfusionMatrix&, const ConfusionMatrix&) = default;

 private:
  template <typename L>
  void AccumulateImpl(std::span<const L> truth, std::span<const L> pred);

  int k_;
  std::vector<std::int64_t> counts_;
};

ConfusionMatrix Accumulate(ConfusionMatrix cm, std::span<const std::uint8_t> truth,
                           std::span<const std::uint8_t> pred);

// Classes absent from both truth and prediction carry no IoU; classes absent
// from truth carry no recall. Means skip absent entries.
struct MetricsReport {
  int num_classes = 0;
  std::vector<std::optional<double>> per_class_iou;
  std::vector<std::optional<double>> per_class_f1;
  std::vector<std::optional<double>> per_class_recall;
  double miou = 0.0;
  double f1 = 0.0;
  double average_accuracy = 0.0;
  double pixel_accuracy = 0.0;
  std::vector<std::int64_t> pixel_counts;  // true pixels per class
  std::vector<std::vector<std::int64_t>> confusion_matrix;

  nlohmann::json ToJson() const;
};

// Binary (K = 2) F1 is that of class 1; otherwise the macro mean over present
// classes. An empty matrix is a contract error.
MetricsReport ComputeReport(const ConfusionMatrix& cm);

struct TableRow {
  std::string dataset;
  std::string weight_init;
  MetricsReport report;
};

// Fixed-width table with mIoU, F1 and Acc. columns. `pixel_accuracy` adds a
// pixel-accuracy column next to the balanced one.
std::string RenderMetricsTable(std::span<const TableRow> rows, bool pixel_accuracy = true);

}  // namespace csip

#endif  // CSIP_METRICS_HPP_
