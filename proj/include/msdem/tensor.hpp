/* Copyright 2026 The msdem Authors. All Rights Reserved.

Licensed under the Apache License, Version 2.0 (the "License");
you may not use this file except in compliance with the License.
You may obtain a copy of the License at

    http://www.apache.org/licenses/LICENSE-2.0

Unless required by applicable law or agreed to in writing, software
distributed under the License is distributed on an "AS IS" BASIS,
WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
See the License for the specific language governing permissions and
limitations under the License. */

#pragma once

#include <cstddef>
#include <initializer_list>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace msdem {

using Shape = std::vector<std::size_t>;

std::string shape_to_string(const Shape& shape);
std::size_t shape_numel(const Shape& shape);

// Dense row-major array of doubles. Shapes have positive extents and the
// element count always matches the shape.
class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(Shape shape, double fill = 0.0);
  Tensor(Shape shape, std::vector<double> data);

  static Tensor vector(std::vector<double> values);
  static Tensor matrix(std::initializer_list<std::initializer_list<double>> rows);
  static Tensor scalar(double v) { return Tensor({1}, std::vector<double>{v}); }

  const Shape& shape() const noexcept { return shape_; }
  std::size_t rank() const noexcept { return shape_.size(); }
  std::size_t size() const noexcept { return data_.size(); }
  bool empty() const noexcept { return data_.empty(); }

  // Matrix view: rank-1 tensors are treated as a single row.
  std::size_t rows() const;
  std::size_t cols() const;

  std::span<double> data() noexcept { return data_; }
  std::span<const double> data() const noexcept { return data_; }
  const std::vector<double>& values() const noexcept { return data_; }

  double& operator[](std::size_t i) { return data_[i]; }
  double operator[](std::size_t i) const { return data_[i]; }
  double& at(std::size_t r, std::size_t c) { return data_[r * cols() + c]; }
  double at(std::size_t r, std::size_t c) const { return data_[r * cols() + c]; }
  double item() const;

  Tensor reshaped(Shape shape) const;
  void fill(double v);

  bool all_finite() const noexcept;
  // Throws NumericError naming `where` if any entry is NaN or infinite.
  void check_finite(std::string_view where) const;

  std::string shape_string() const { return shape_to_string(shape_); }

 private:
  Shape shape_;
  std::vector<double> data_;
};

// Exact bitwise comparison of shape and contents.
bool bit_equal(const Tensor& a, const Tensor& b);
double max_abs_diff(const Tensor& a, const Tensor& b);

// Values are held in doubles but rounded to the nearest 32-bit float after
// initialization and after every optimizer update, so checkpoints can store
// them as float32 without loss.
inline double to_storage(double x) { return static_cast<double>(static_cast<float>(x)); }
void round_to_storage(Tensor& t);

struct Parameter {
  std::string name;
  Tensor value;
  std::optional<Tensor> grad;
  bool frozen = false;

  Parameter() = default;
  Parameter(std::string n, Tensor v) : name(std::move(n)), value(std::move(v)) {}

  std::size_t size() const noexcept { return value.size(); }
  void clear_grad() { grad.reset(); }
};

// Plain (non-differentiable) kernels.
Tensor matmul(const Tensor& a, const Tensor& b);
Tensor transpose(const Tensor& a);
Tensor softmax(const Tensor& x, std::size_t axis);
Tensor log_softmax_last(const Tensor& x);

// Index of the single 1 in a one-hot vector; ValidationError otherwise.
std::size_t one_hot_class(const Tensor& one_hot);
// -log softmax(logits)[c] for the class marked in `one_hot`.
double cross_entropy(const Tensor& logits, const Tensor& one_hot);

// Lowest index among maximal entries.
std::size_t argmax(std::span<const double> v);

}  // namespace msdem
