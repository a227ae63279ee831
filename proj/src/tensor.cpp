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

#include "csip/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

#include "csip/error.hpp"

namespace csip {

std::string ShapeString(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) os << ',';
    os << shape[i];
  }
  os << ']';
  return os.str();
}

std::int64_t ShapeNumel(const Shape& shape) {
  std::int64_t n = 1;
  for (int d : shape) n *= d;
  return n;
}

Tensor::Tensor(Shape shape, float fill)
    : shape_(std::move(shape)),
      data_(static_cast<std::size_t>(ShapeNumel(shape_)), fill) {}

Tensor::Tensor(Shape shape, std::vector<float> values)
    : shape_(std::move(shape)), data_(std::move(values)) {
  if (static_cast<std::int64_t>(data_.size()) != ShapeNumel(shape_)) {
    Fail(ErrorKind::kShape, "value count " + std::to_string(data_.size()) +
                                " does not match shape " +
                                ShapeString(shape_));
  }
}

void Tensor::Fill(float v) { std::fill(data_.begin(), data_.end(), v); }

Tensor Tensor::Reshaped(Shape shape) const {
  if (ShapeNumel(shape) != numel()) {
    Fail(ErrorKind::kShape, "cannot reshape " + ShapeString(shape_) + " to " +
                                ShapeString(shape));
  }
  return Tensor(std::move(shape), data_);
}

Tensor Tensor::Rows(int begin, int end) const {
  Shape s = shape_;
  s[0] = end - begin;
  const std::int64_t stride = numel() / shape_[0];
  std::vector<float> v(data_.begin() + begin * stride,
                       data_.begin() + end * stride);
  return Tensor(std::move(s), std::move(v));
}

bool Tensor::AllFinite() const {
  return std::all_of(data_.begin(), data_.end(),
                     [](float v) { return std::isfinite(v); });
}

Tensor ConcatRows(std::span<const Tensor> parts) {
  if (parts.empty()) Fail(ErrorKind::kShape, "nothing to concatenate");
  Shape s = parts[0].shape();
  int rows = 0;
  for (const Tensor& t : parts) {
    if (t.rank() != static_cast<int>(s.size()) ||
        !std::equal(t.shape().begin() + 1, t.shape().end(), s.begin() + 1)) {
      Fail(ErrorKind::kShape, "cannot concatenate " + ShapeString(t.shape()) +
                                  " with " + ShapeString(s));
    }
    rows += t.dim(0);
  }
  s[0] = rows;
  std::vector<float> v;
  v.reserve(static_cast<std::size_t>(ShapeNumel(s)));
  for (const Tensor& t : parts) {
    v.insert(v.end(), t.storage().begin(), t.storage().end());
  }
  return Tensor(std::move(s), std::move(v));
}

std::int64_t ParameterCount(const ParameterMap& params) {
  std::int64_t n = 0;
  for (const auto& [name, t] : params) n += t.numel();
  return n;
}

}  // namespace csip
