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

#include "msdem/deam.hpp"

#include <cmath>
#include <numeric>

#include "msdem/error.hpp"
#include "param_init.hpp"

namespace msdem {

Tensor tokenize(std::span<const double> fused, std::span<const std::uint32_t> dims) {
  if (dims.empty()) throw DimensionError("tokenize needs at least one backbone");
  const std::size_t total = std::accumulate(dims.begin(), dims.end(), std::size_t{0});
  if (total != fused.size())
    throw DimensionError("fused vector has length " + std::to_string(fused.size()) + ", backbone dims sum to " +
                         std::to_string(total));
  for (auto d : dims) {
    if (d != dims[0]) throw DimensionError("tokenize without projection needs equal backbone dims");
  }
  return Tensor({dims.size(), dims[0]}, std::vector<double>(fused.begin(), fused.end()));
}

AttentionBlock::AttentionBlock(std::size_t task_id, std::vector<std::uint32_t> backbone_dims, std::size_t token_dim,
                               std::size_t heads, std::uint64_t seed)
    : task_id_(task_id), dims_(std::move(backbone_dims)), token_dim_(token_dim), heads_(heads) {
  if (dims_.empty()) throw DimensionError("attention block needs at least one backbone");
  if (token_dim_ == 0) throw DimensionError("attention token width must be positive");
  if (heads_ == 0 || token_dim_ % heads_ != 0)
    throw DimensionError("attention token width " + std::to_string(token_dim_) + " is not divisible by " +
                         std::to_string(heads_) + " heads");
  const std::string prefix = detail::task_prefix(task_id) + "deam.";
  wq_ = detail::uniform_parameter(prefix + "wq", {token_dim_, token_dim_}, derive_seed(seed, {1}));
  wk_ = detail::uniform_parameter(prefix + "wk", {token_dim_, token_dim_}, derive_seed(seed, {2}));
  wv_ = detail::uniform_parameter(prefix + "wv", {token_dim_, token_dim_}, derive_seed(seed, {3}));
  bool need_projection = false;
  for (auto d : dims_) need_projection |= d != token_dim_;
  if (need_projection) {
    for (std::size_t j = 0; j < dims_.size(); ++j) {
      projections_.push_back(detail::uniform_parameter(prefix + "proj" + std::to_string(j), {dims_[j], token_dim_},
                                                       derive_seed(seed, {4, j})));
    }
  }
}

std::size_t AttentionBlock::input_dim() const noexcept {
  return std::accumulate(dims_.begin(), dims_.end(), std::size_t{0});
}

std::vector<Parameter*> AttentionBlock::parameters() {
  std::vector<Parameter*> out{&wq_, &wk_, &wv_};
  for (auto& p : projections_) out.push_back(&p);
  return out;
}

std::vector<const Parameter*> AttentionBlock::parameters() const {
  std::vector<const Parameter*> out{&wq_, &wk_, &wv_};
  for (const auto& p : projections_) out.push_back(&p);
  return out;
}

void AttentionBlock::freeze() {
  for (Parameter* p : parameters()) {
    p->frozen = true;
    p->clear_grad();
  }
}

AttentionBlock::Bound AttentionBlock::bind(Graph& g) {
  Bound b{g.param(wq_), g.param(wk_), g.param(wv_), {}};
  for (auto& p : projections_) b.projections.push_back(g.param(p));
  return b;
}

AttentionBlock::Bound AttentionBlock::bind(Graph& g) const {
  Bound b{g.constant(wq_.value), g.constant(wk_.value), g.constant(wv_.value), {}};
  for (const auto& p : projections_) b.projections.push_back(g.constant(p.value));
  return b;
}

Var AttentionBlock::tokens(const Bound& b, Var fused) const {
  const Tensor& x = fused.value();
  if (x.rank() != 2 || x.cols() != input_dim())
    throw DimensionError("attention block of task " + std::to_string(task_id_) + " expects fused width " +
                         std::to_string(input_dim()) + ", got " + x.shape_string());
  const std::size_t batch = x.rows();
  if (!projected()) return reshape(fused, {batch * dims_.size(), token_dim_});
  std::vector<Var> parts;
  std::size_t offset = 0;
  for (std::size_t j = 0; j < dims_.size(); ++j) {
    parts.push_back(matmul(slice_cols(fused, offset, dims_[j]), b.projections[j]));
    offset += dims_[j];
  }
  return interleave_rows(parts);
}

Var AttentionBlock::apply(const Bound& b, Var fused, Tensor* weights) const {
  Var tok = tokens(b, fused);
  const double scale = 1.0 / std::sqrt(static_cast<double>(head_dim()));
  return attention(matmul(tok, b.wq), matmul(tok, b.wk), matmul(tok, b.wv), dims_.size(), heads_, scale, weights);
}

}  // namespace msdem
