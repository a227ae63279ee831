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

#ifndef CSIP_TENSOR_HPP_
#define CSIP_TENSOR_HPP_

#include <cstdint>
#include <map>
#include <span>
#include <string>
#include <vector>

namespace csip {

using Shape = std::vector<int>;

std::string ShapeString(const Shape& shape);
std::int64_t ShapeNumel(const Shape& shape);

// Dense row-major float32 tensor. Activations use NCHW order.
class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(Shape shape, float fill = 0.0f);
  Tensor(Shape shape, std::vector<float> values);

  const Shape& shape() const { return shape_; }
  int rank() const { return static_cast<int>(shape_.size()); }
  int dim(int i) const { return shape_[static_cast<std::size_t>(i)]; }
  std::int64_t numel() const { return static_cast<std::int64_t>(data_.size()); }
  bool empty() const { return data_.empty(); }

  float* data() { return data_.data(); }
  const float* data() const { return data_.data(); }
  std::span<float> values() { return data_; }
  std::span<const float> values() const { return data_; }
  std::vector<float>& storage() { return data_; }
  const std::vector<float>& storage() const { return data_; }

  float& operator[](std::int64_t i) { return data_[static_cast<std::size_t>(i)]; }
  float operator[](std::int64_t i) const { return data_[static_cast<std::size_t>(i)]; }

  // NCHW element access; requires rank 4.
  float& at(int n, int c, int h, int w) {
    return data_[Offset4(n, c, h, w)];
  }
  float at(int n, int c, int h, int w) const {
    return data_[Offset4(n, c, h, w)];
  }

  void Fill(float v);
  Tensor Reshaped(Shape shape) const;

  // Slice [begin, end) along the leading dimension.
  Tensor Rows(int begin, int end) const;

  bool AllFinite() const;

  friend bool operator==(const Tensor& a, const Tensor& b) {
    return a.shape_ == b.shape_ && a.data_ == b.data_;
  }

 private:
  std::size_t Offset4(int n, int c, int h, int w) const {
    return ((static_cast<std::size_t>(n) * shape_[1] + c) * shape_[2] + h) *
               shape_[3] + w;
  }

  Shape shape_;
  std::vector<float> data_;
};

// Stacks equally shaped tensors along a new (or existing leading) dimension:
// each part must have leading dimension 1 or share the trailing shape.
Tensor ConcatRows(std::span<const Tensor> parts);

// Named parameters of a model, ordered by name.
using ParameterMap = std::map<std::string, Tensor>;

std::int64_t ParameterCount(const ParameterMap& params);

}  // namespace csip

#endif  // CSIP_TENSOR_HPP_
