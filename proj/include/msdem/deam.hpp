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

#include <cstdint>
#include <span>
#include <vector>

#include "msdem/autograd.hpp"

namespace msdem {

// One token per backbone: token j is backbone j's slice of the fused vector.
// All dims must be equal. Returns [n_backbones x dim].
Tensor tokenize(std::span<const double> fused, std::span<const std::uint32_t> dims);

// Per-task multi-head self-attention over backbone tokens. When a backbone's
// dim differs from token_dim the block owns a [dim x token_dim] projection
// for it, applied before attention.
class AttentionBlock {
 public:
  AttentionBlock(std::size_t task_id, std::vector<std::uint32_t> backbone_dims, std::size_t token_dim,
                 std::size_t heads, std::uint64_t seed);

  std::size_t task_id() const noexcept { return task_id_; }
  std::size_t heads() const noexcept { return heads_; }
  std::size_t head_dim() const noexcept { return token_dim_ / heads_; }
  std::size_t token_dim() const noexcept { return token_dim_; }
  std::size_t n_tokens() const noexcept { return dims_.size(); }
  std::size_t input_dim() const noexcept;
  std::size_t output_dim() const noexcept { return n_tokens() * token_dim_; }
  bool projected() const noexcept { return !projections_.empty(); }

  Parameter& wq() noexcept { return wq_; }
  Parameter& wk() noexcept { return wk_; }
  Parameter& wv() noexcept { return wv_; }
  const Parameter& wq() const noexcept { return wq_; }
  const Parameter& wk() const noexcept { return wk_; }
  const Parameter& wv() const noexcept { return wv_; }

  std::vector<Parameter*> parameters();
  std::vector<const Parameter*> parameters() const;
  bool frozen() const noexcept { return wq_.frozen; }
  void freeze();

  struct Bound {
    Var wq, wk, wv;
    std::vector<Var> projections;
  };
  // Trainable binding (constants when frozen) and read-only binding.
  Bound bind(Graph& g);
  Bound bind(Graph& g) const;

  // fused [B x sum(dims)] -> tokens [B*n x token_dim].
  Var tokens(const Bound& b, Var fused) const;
  // fused [B x sum(dims)] -> attention output [B*n x token_dim]. `weights`
  // receives the attention maps when non-null (see msdem::attention).
  Var apply(const Bound& b, Var fused, Tensor* weights = nullptr) const;

 private:
  std::size_t task_id_;
  std::vector<std::uint32_t> dims_;
  std::size_t token_dim_;
  std::size_t heads_;
  Parameter wq_, wk_, wv_;
  std::vector<Parameter> projections_;
};

}  // namespace msdem
