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

#include "msdem/router.hpp"

#include <cmath>
#include <limits>

#include "msdem/error.hpp"
#include "param_init.hpp"

namespace msdem {

void RelationMatrix::expand() {
  for (auto& r : rows_) {
    r.frozen = true;
    r.clear_grad();
  }
  const std::size_t t = rows_.size() + 1;
  rows_.emplace_back("router.row" + std::to_string(t), Tensor({t}, 1.0));
}

Parameter& RelationMatrix::row(std::size_t task_id) {
  if (task_id == 0 || task_id > rows_.size())
    throw ValidationError("relation matrix has no row " + std::to_string(task_id));
  return rows_[task_id - 1];
}

const Parameter& RelationMatrix::row(std::size_t task_id) const {
  if (task_id == 0 || task_id > rows_.size())
    throw ValidationError("relation matrix has no row " + std::to_string(task_id));
  return rows_[task_id - 1];
}

Tensor RelationMatrix::dense() const {
  const std::size_t t = rows_.size();
  Tensor out({t == 0 ? 1 : t, t == 0 ? 1 : t}, -std::numeric_limits<double>::infinity());
  for (std::size_t i = 0; i < t; ++i)
    for (std::size_t j = 0; j <= i; ++j) out.at(i, j) = rows_[i].value[j];
  return out;
}

RouterNoise sample_router_noise(std::size_t batch, std::size_t t, double sigma, Rng& rng) {
  if (!(sigma >= 0.0) || !std::isfinite(sigma)) throw ValidationError("router noise sigma must be >= 0");
  RouterNoise noise{Tensor({batch, t}), Tensor({batch, t})};
  NormalSampler normal;
  for (std::size_t i = 0; i < batch * t; ++i) {
    noise.normal[i] = sigma * normal(rng);
    noise.gumbel[i] = -std::log(-std::log(uniform_open(rng)));
  }
  return noise;
}

Var router_weights(Var m_row, std::size_t batch, double tau, const RouterNoise* noise) {
  if (!(tau > 0.0) || !std::isfinite(tau)) throw ValidationError("router temperature must be > 0");
  const Tensor& m = m_row.value();
  if (m.rank() != 1) throw DimensionError("router row must be a vector, got " + m.shape_string());
  m.check_finite("router row");
  const std::size_t t = m.size();
  Var x = tile_rows(m_row, batch);
  if (noise) {
    if (noise->normal.shape() != Shape{batch, t} || noise->gumbel.shape() != Shape{batch, t})
      throw DimensionError("router noise shape does not match [" + std::to_string(batch) + "x" + std::to_string(t) +
                           "]");
    x = add_const(x, noise->normal);
  }
  x = log(clamp_min(x, kRouterClampMin));
  if (noise) x = add_const(x, noise->gumbel);
  return softmax_rows(scale(x, 1.0 / tau));
}

RouterSample gumbel_softmax_weights(std::span<const double> m_row, double tau, double sigma, std::uint64_t seed,
                                    bool deterministic) {
  if (m_row.empty()) throw DimensionError("router row must not be empty");
  Graph g(false);
  Var m = g.constant(Tensor({m_row.size()}, std::vector<double>(m_row.begin(), m_row.end())));
  RouterSample s;
  s.tau = tau;
  s.sigma = sigma;
  s.seed = seed;
  s.deterministic = deterministic;
  Var w;
  if (deterministic) {
    w = router_weights(m, 1, tau, nullptr);
  } else {
    Rng rng(seed);
    const RouterNoise noise = sample_router_noise(1, m_row.size(), sigma, rng);
    w = router_weights(m, 1, tau, &noise);
  }
  s.weights = w.value().values();
  return s;
}

CombinedTokens combine_expert_tokens(std::span<const Var> reps, Var weights) {
  const Tensor& w = weights.value();
  if (reps.empty()) throw DimensionError("combine_expert_tokens needs at least one expert");
  if (w.rank() != 2 || w.cols() != reps.size())
    throw DimensionError("router weights " + w.shape_string() + " do not match " + std::to_string(reps.size()) +
                         " experts");
  const std::size_t batch = w.rows();
  for (const Var& r : reps) {
    if (r.value().rank() != 2 || r.value().rows() != batch)
      throw DimensionError("expert representation " + r.value().shape_string() + " does not match batch " +
                           std::to_string(batch));
  }
  Var tokens = scale_rows(interleave_rows(reps), reshape(weights, {batch * reps.size()}));
  return {tokens, group_sum(tokens, reps.size())};
}

GraphAttentionBlock::GraphAttentionBlock(std::size_t task_id, std::size_t d_e, std::size_t heads, std::uint64_t seed)
    : task_id_(task_id), heads_(heads) {
  if (d_e == 0) throw DimensionError("graph attention width must be positive");
  if (heads == 0 || d_e % heads != 0)
    throw DimensionError("graph attention width " + std::to_string(d_e) + " is not divisible by " +
                         std::to_string(heads) + " heads");
  const std::string prefix = detail::task_prefix(task_id) + "graph.";
  wq_ = detail::uniform_parameter(prefix + "wq", {d_e, d_e}, derive_seed(seed, {1}));
  wk_ = detail::uniform_parameter(prefix + "wk", {d_e, d_e}, derive_seed(seed, {2}));
  wv_ = detail::uniform_parameter(prefix + "wv", {d_e, d_e}, derive_seed(seed, {3}));
}

std::vector<Parameter*> GraphAttentionBlock::parameters() { return {&wq_, &wk_, &wv_}; }

std::vector<const Parameter*> GraphAttentionBlock::parameters() const { return {&wq_, &wk_, &wv_}; }

void GraphAttentionBlock::freeze() {
  for (Parameter* p : parameters()) {
    p->frozen = true;
    p->clear_grad();
  }
}

GraphAttentionBlock::Bound GraphAttentionBlock::bind(Graph& g) { return {g.param(wq_), g.param(wk_), g.param(wv_)}; }

GraphAttentionBlock::Bound GraphAttentionBlock::bind(Graph& g) const {
  return {g.constant(wq_.value), g.constant(wk_.value), g.constant(wv_.value)};
}

Var GraphAttentionBlock::attend_tokens(const Bound& b, Var tokens, std::size_t n_tokens, Tensor* weights) const {
  const Tensor& x = tokens.value();
  if (x.rank() != 2 || x.cols() != width())
    throw DimensionError("graph attention of task " + std::to_string(task_id_) + " expects token width " +
                         std::to_string(width()) + ", got " + x.shape_string());
  // The scale uses the full representation width rather than the head width.
  const double s = 1.0 / std::sqrt(static_cast<double>(width()));
  return attention(matmul(tokens, b.wq), matmul(tokens, b.wk), matmul(tokens, b.wv), n_tokens, heads_, s, weights);
}

Var GraphAttentionBlock::attend(const Bound& b, Var tokens, std::size_t n_tokens, Tensor* weights) const {
  return group_mean(attend_tokens(b, tokens, n_tokens, weights), n_tokens);
}

}  // namespace msdem
