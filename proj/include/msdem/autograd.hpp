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
#include <functional>
#include <span>
#include <vector>

#include "msdem/tensor.hpp"

namespace msdem {

class Graph;

// Handle to a node recorded on a Graph. Cheap to copy; only valid while the
// owning Graph is alive.
class Var {
 public:
  Var() = default;
  Var(Graph* g, std::size_t id) : graph_(g), id_(id) {}

  Graph* graph() const noexcept { return graph_; }
  std::size_t id() const noexcept { return id_; }
  const Tensor& value() const;
  const Shape& shape() const { return value().shape(); }
  bool requires_grad() const;
  explicit operator bool() const noexcept { return graph_ != nullptr; }

 private:
  Graph* graph_ = nullptr;
  std::size_t id_ = 0;
};

// Reverse-mode tape. Frozen parameters enter the tape as constants, so no
// gradient is ever computed for them.
class Graph {
 public:
  using Backward = std::function<void(Graph&, std::size_t self)>;

  explicit Graph(bool grad_enabled = true) : grad_enabled_(grad_enabled) {}
  Graph(const Graph&) = delete;
  Graph& operator=(const Graph&) = delete;

  bool grad_enabled() const noexcept { return grad_enabled_; }

  Var constant(Tensor value);
  // Trainable leaf bound to `p`, or a constant when `p` is frozen or the
  // graph has gradients disabled.
  Var param(Parameter& p);

  // Records an op result. `inputs` decide whether the result needs a
  // gradient; `fn` is dropped when none of them do.
  Var record(Tensor value, std::initializer_list<Var> inputs, Backward fn);
  Var record(Tensor value, std::span<const Var> inputs, Backward fn);

  const Tensor& value(std::size_t id) const { return nodes_[id].value; }
  bool requires_grad(std::size_t id) const { return nodes_[id].requires_grad; }
  const Tensor& grad(std::size_t id) const { return nodes_[id].grad; }
  // Gradient buffer of an input, zero-allocated on first use.
  Tensor& grad_buffer(std::size_t id);

  // Populates Parameter::grad (accumulating) for every trainable leaf
  // reachable from `loss`. The loss must hold exactly one element.
  void backward(Var loss);

  std::size_t size() const noexcept { return nodes_.size(); }

 private:
  struct Node {
    Tensor value;
    Tensor grad;
    bool requires_grad = false;
    Parameter* param = nullptr;
    Backward backward;
  };
  std::vector<Node> nodes_;
  bool grad_enabled_;
};

// Differentiable ops. Matrices are rank-2 row-major; rank-1 inputs are
// accepted where noted.
Var matmul(Var a, Var b);
Var add(Var a, Var b);
Var sub(Var a, Var b);
Var mul(Var a, Var b);
Var scale(Var a, double s);
// x [m x n] + bias [n] broadcast over rows.
Var add_bias(Var x, Var bias);
Var add_const(Var x, const Tensor& c);
Var clamp_min(Var x, double lo);
Var log(Var x);
Var exp(Var x);
// Exact Gaussian-error activation x * Phi(x).
Var gelu(Var x);
Var softmax_rows(Var x);
Var sum(Var x);
Var reshape(Var x, Shape shape);
// Columns [offset, offset + len) of a matrix.
Var slice_cols(Var x, std::size_t offset, std::size_t len);
// parts[j] is [B x d]; result row b * parts.size() + j equals parts[j] row b.
Var interleave_rows(std::span<const Var> parts);
// Row i of x scaled by s[i]; s holds one value per row of x.
Var scale_rows(Var x, Var s);
// x is [B*g x d]; mean / sum over each consecutive group of g rows.
Var group_mean(Var x, std::size_t group);
Var group_sum(Var x, std::size_t group);
// v [n] repeated as m rows.
Var tile_rows(Var v, std::size_t m);

// Mean over rows of -log softmax(logits)[target].
Var cross_entropy_mean(Var logits, std::span<const std::size_t> targets);
// Single example with an explicit one-hot label.
Var cross_entropy(Var logits, const Tensor& one_hot);

// Multi-head scaled dot-product self-attention applied independently to each
// sample. q/k/v are [B*n x heads*d]; rows of a sample are consecutive. Each
// head attends with softmax(q k^T * scale) v. When `weights` is non-null it
// receives the post-softmax attention maps as [B*heads*n x n], ordered by
// sample, then head, then query token.
Var attention(Var q, Var k, Var v, std::size_t n_tokens, std::size_t heads, double scale,
              Tensor* weights = nullptr);

}  // namespace msdem
