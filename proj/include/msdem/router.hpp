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
#include <deque>
#include <span>
#include <vector>

#include "msdem/autograd.hpp"
#include "msdem/rng.hpp"

namespace msdem {

inline constexpr double kRouterClampMin = 1e-6;

// Growing t x t relation matrix. Row i holds the router logits M^i over
// experts 1..i; entries j > i are masked (never part of row i's support).
// Rows before the newest are frozen.
class RelationMatrix {
 public:
  std::size_t size() const noexcept { return rows_.size(); }
  // Appends row t+1 initialised to ones and freezes every earlier row.
  void expand();
  Parameter& row(std::size_t task_id);
  const Parameter& row(std::size_t task_id) const;
  bool masked(std::size_t i, std::size_t j) const noexcept { return j > i; }
  // Dense t x t view with masked entries reported as -inf.
  Tensor dense() const;

 private:
  std::deque<Parameter> rows_;  // stable addresses across expansion
};

// Per-sample router noise for one batch: eps_n ~ N(0, sigma^2) and Gumbel
// eps_u = -log(-log U), each [B x t].
struct RouterNoise {
  Tensor normal;
  Tensor gumbel;
};
RouterNoise sample_router_noise(std::size_t batch, std::size_t t, double sigma, Rng& rng);

// softmax((log(clamp(M + eps_n, 1e-6)) + eps_u) / tau) per sample, as
// [B x t]. With `noise` null the noises are zero (deterministic mode).
Var router_weights(Var m_row, std::size_t batch, double tau, const RouterNoise* noise);

struct RouterSample {
  std::vector<double> weights;
  double tau = 1.0;
  double sigma = 0.0;
  std::uint64_t seed = 0;
  bool deterministic = true;
};

// Single draw of the router weights for one relation row.
RouterSample gumbel_softmax_weights(std::span<const double> m_row, double tau, double sigma, std::uint64_t seed,
                                    bool deterministic);

// reps[j] is [B x d_e] for expert j; weights [B x t]. Returns the weighted
// token matrix [B*t x d_e] (sample-major) and the pooled sum [B x d_e].
struct CombinedTokens {
  Var tokens;
  Var pooled;
};
CombinedTokens combine_expert_tokens(std::span<const Var> reps, Var weights);

// Per-task attention over expert tokens, scaled by 1/sqrt(d_e).
class GraphAttentionBlock {
 public:
  GraphAttentionBlock(std::size_t task_id, std::size_t d_e, std::size_t heads, std::uint64_t seed);

  std::size_t task_id() const noexcept { return task_id_; }
  std::size_t width() const noexcept { return wq_.value.rows(); }
  std::size_t heads() const noexcept { return heads_; }
  std::size_t head_dim() const noexcept { return width() / heads_; }

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
  };
  Bound bind(Graph& g);
  Bound bind(Graph& g) const;

  // tokens [B*n x d_e] -> per-token outputs [B*n x d_e].
  Var attend_tokens(const Bound& b, Var tokens, std::size_t n_tokens, Tensor* weights = nullptr) const;
  // Per-token outputs mean-pooled over each sample's n tokens -> [B x d_e].
  Var attend(const Bound& b, Var tokens, std::size_t n_tokens, Tensor* weights = nullptr) const;

 private:
  std::size_t task_id_;
  std::size_t heads_;
  Parameter wq_, wk_, wv_;
};

}  // namespace msdem
