// Copyright 2026 The sprefix Authors
// SPDX-License-Identifier: Apache-2.0
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     https://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#pragma once

#include <cstddef>
#include <functional>
#include <numeric>
#include <stdexcept>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

namespace sprefix {

using Shape = std::vector<std::size_t>;

inline std::size_t shape_numel(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1},
                         std::multiplies<>());
}

inline std::string shape_str(const Shape& shape) {
  std::string out = "[";
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) out += ", ";
    out += std::to_string(shape[i]);
  }
  return out + "]";
}

class ShapeError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

inline ShapeError shape_mismatch(std::string_view op, const Shape& a,
                                 const Shape& b) {
  return ShapeError(std::string(op) + ": shape mismatch " + shape_str(a) +
                    " vs " + shape_str(b));
}

// Dense row-major array of doubles. Scalars have shape {1}.
struct Tensor {
  Shape shape;
  std::vector<double> data;
  bool requires_grad = false;

  Tensor() = default;

  explicit Tensor(Shape s, double fill = 0.0) : shape(std::move(s)) {
    check_shape(shape);
    data.assign(shape_numel(shape), fill);
  }

  Tensor(Shape s, std::vector<double> values)
      : shape(std::move(s)), data(std::move(values)) {
    check_shape(shape);
    if (data.size() != shape_numel(shape)) {
      throw ShapeError("tensor: " + std::to_string(data.size()) +
                       " values do not fill shape " + shape_str(shape));
    }
  }

  static Tensor scalar(double v) { return Tensor({1}, std::vector<double>{v}); }

  bool empty() const { return shape.empty(); }
  std::size_t size() const { return data.size(); }
  std::size_t rank() const { return shape.size(); }
  std::size_t dim(std::size_t axis) const { return shape.at(axis); }

  double item() const {
    if (data.size() != 1) {
      throw ShapeError("item: tensor of shape " + shape_str(shape) +
                       " is not a scalar");
    }
    return data[0];
  }

  double& operator()(std::size_t i, std::size_t j) {
    return data[i * shape[1] + j];
  }
  double operator()(std::size_t i, std::size_t j) const {
    return data[i * shape[1] + j];
  }
  double& operator()(std::size_t i, std::size_t j, std::size_t k) {
    return data[(i * shape[1] + j) * shape[2] + k];
  }
  double operator()(std::size_t i, std::size_t j, std::size_t k) const {
    return data[(i * shape[1] + j) * shape[2] + k];
  }

  double* row(std::size_t i) { return data.data() + i * shape.back(); }
  const double* row(std::size_t i) const {
    return data.data() + i * shape.back();
  }

  friend bool operator==(const Tensor& a, const Tensor& b) {
    return a.shape == b.shape && a.data == b.data;
  }

 private:
  static void check_shape(const Shape& s) {
    if (s.empty()) throw ShapeError("tensor: shape must have rank >= 1");
    for (std::size_t d : s) {
      if (d == 0) {
        throw ShapeError("tensor: zero-sized dimension in " + shape_str(s));
      }
    }
  }
};

}  // namespace sprefix
