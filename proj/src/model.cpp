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

#include "msdem/model.hpp"

#include <algorithm>
#include <cmath>

#include "msdem/error.hpp"

namespace msdem {

std::size_t ModelConfig::resolved_token_dim(std::span<const BackboneSpec> backbones) const {
  if (token_dim != 0) return token_dim;
  std::size_t d = 0;
  for (const auto& b : backbones) d = d == 0 ? b.dim : std::min<std::size_t>(d, b.dim);
  return d;
}

void ModelConfig::validate(std::span<const BackboneSpec> backbones) const {
  std::vector<std::string> problems;
  if (backbones.empty()) problems.push_back("at least one backbone is required");
  for (const auto& b : backbones) {
    if (b.dim == 0) problems.push_back("backbone '" + b.name + "' has dim 0");
  }
  const std::size_t w = resolved_token_dim(backbones);
  if (d_e == 0) problems.push_back("d_e must be positive");
  if (deam_heads == 0) problems.push_back("deam_heads must be positive");
  if (graph_heads == 0) problems.push_back("graph_heads must be positive");
  if (deam_heads != 0 && w != 0 && w % deam_heads != 0)
    problems.push_back("token width " + std::to_string(w) + " is not divisible by deam_heads " +
                       std::to_string(deam_heads));
  if (graph_heads != 0 && d_e != 0 && d_e % graph_heads != 0)
    problems.push_back("d_e " + std::to_string(d_e) + " is not divisible by graph_heads " +
                       std::to_string(graph_heads));
  if (!(tau > 0.0) || !std::isfinite(tau)) problems.push_back("tau must be a positive finite number");
  if (!(sigma >= 0.0) || !std::isfinite(sigma)) problems.push_back("sigma must be a non-negative finite number");
  if (problems.empty()) return;
  std::string msg = "invalid model config:";
  for (const auto& p : problems) msg += "\n  - " + p;
  throw ValidationError(msg);
}

MsdemModel::MsdemModel(std::vector<BackboneSpec> backbones, ModelConfig config)
    : backbones_(std::move(backbones)), config_(config) {
  config_.validate(backbones_);
  token_dim_ = config_.resolved_token_dim(backbones_);
}

void MsdemModel::begin_task(const TaskSpec& task) {
  const std::size_t t = current_task() + 1;
  if (task.task_id != t)
    throw StateError("begin_task expects task " + std::to_string(t) + ", got task " + std::to_string(task.task_id));
  if (task.class_ids.empty()) throw ValidationError("task " + std::to_string(t) + " has no classes");

  std::vector<std::uint32_t> dims;
  for (const auto& b : backbones_) dims.push_back(b.dim);
  auto block = std::make_unique<AttentionBlock>(t, dims, token_dim_, config_.deam_heads,
                                                derive_seed(config_.seed, {t, 1}));
  auto expert = std::make_unique<Expert>(t, block->output_dim(), config_.d_e, task.class_ids,
                                         derive_seed(config_.seed, {t, 2}));
  auto graph = std::make_unique<GraphAttentionBlock>(t, config_.d_e, config_.graph_heads,
                                                     derive_seed(config_.seed, {t, 3}));

  for (auto& b : deam_) b->freeze();
  for (auto& e : experts_) e->freeze();
  for (auto& g : graphs_) g->freeze();
  relation_.expand();

  deam_.push_back(std::move(block));
  experts_.push_back(std::move(expert));
  graphs_.push_back(std::move(graph));
  tasks_.push_back(task);
}

void MsdemModel::check_task(std::size_t task_id) const {
  if (task_id == 0 || task_id > current_task())
    throw ValidationError("unknown task " + std::to_string(task_id) + "; model has " +
                          std::to_string(current_task()) + " tasks");
}

const TaskSpec& MsdemModel::task(std::size_t task_id) const {
  check_task(task_id);
  return tasks_[task_id - 1];
}

AttentionBlock& MsdemModel::deam(std::size_t task_id) {
  check_task(task_id);
  return *deam_[task_id - 1];
}
const AttentionBlock& MsdemModel::deam(std::size_t task_id) const {
  check_task(task_id);
  return *deam_[task_id - 1];
}
Expert& MsdemModel::expert(std::size_t task_id) {
  check_task(task_id);
  return *experts_[task_id - 1];
}
const Expert& MsdemModel::expert(std::size_t task_id) const {
  check_task(task_id);
  return *experts_[task_id - 1];
}
GraphAttentionBlock& MsdemModel::graph(std::size_t task_id) {
  check_task(task_id);
  return *graphs_[task_id - 1];
}
const GraphAttentionBlock& MsdemModel::graph(std::size_t task_id) const {
  check_task(task_id);
  return *graphs_[task_id - 1];
}

std::vector<Parameter*> MsdemModel::task_parameters(std::size_t task_id) {
  std::vector<Parameter*> out;
  for (Parameter* p : deam(task_id).parameters()) out.push_back(p);
  for (Parameter* p : expert(task_id).parameters()) out.push_back(p);
  for (Parameter* p : graph(task_id).parameters()) out.push_back(p);
  out.push_back(&relation_.row(task_id));
  return out;
}

std::vector<Parameter*> MsdemModel::parameters() {
  std::vector<Parameter*> out;
  for (std::size_t t = 1; t <= current_task(); ++t) {
    for (Parameter* p : deam(t).parameters()) out.push_back(p);
    for (Parameter* p : expert(t).parameters()) out.push_back(p);
    for (Parameter* p : graph(t).parameters()) out.push_back(p);
  }
  for (std::size_t t = 1; t <= current_task(); ++t) out.push_back(&relation_.row(t));
  return out;
}

std::vector<const Parameter*> MsdemModel::parameters() const {
  std::vector<const Parameter*> out;
  for (std::size_t t = 1; t <= current_task(); ++t) {
    for (const Parameter* p : deam(t).parameters()) out.push_back(p);
    for (const Parameter* p : expert(t).parameters()) out.push_back(p);
    for (const Parameter* p : graph(t).parameters()) out.push_back(p);
  }
  for (std::size_t t = 1; t <= current_task(); ++t) out.push_back(&relation_.row(t));
  return out;
}

std::vector<Parameter*> MsdemModel::trainable_parameters() {
  std::vector<Parameter*> out;
  for (Parameter* p : parameters()) {
    if (!p->frozen) out.push_back(p);
  }
  return out;
}

Parameter* MsdemModel::find_parameter(const std::string& name) {
  for (Parameter* p : parameters()) {
    if (p->name == name) return p;
  }
  return nullptr;
}

template <typename Self>
ForwardResult MsdemModel::forward_impl(Self& self, Graph& g, const Tensor& fused, std::size_t task_id,
                                       const RouterNoise* noise) {
  self.check_task(task_id);
  const std::size_t width = fused_dim(self.backbones_);
  if (fused.rank() != 2 || fused.cols() != width)
    throw DimensionError("fused batch must be [B x " + std::to_string(width) + "], got " + fused.shape_string());
  const std::size_t batch = fused.rows();

  ForwardResult r;
  r.fused = g.constant(fused);
  for (std::size_t j = 1; j <= task_id; ++j) {
    auto& block = self.deam(j);
    auto& expert = self.expert(j);
    const auto bound_block = block.bind(g);
    Var att = block.apply(bound_block, r.fused);
    r.attention.push_back(att);
    const auto bound_expert = expert.bind(g);
    r.reps.push_back(expert.adapt(bound_expert, reshape(att, {batch, block.output_dim()})));
  }

  auto& row = self.relation_.row(task_id);
  Var m = [&] {
    if constexpr (std::is_const_v<Self>) {
      return g.constant(row.value);
    } else {
      return g.param(row);
    }
  }();
  r.router = msdem::router_weights(m, batch, self.config_.tau, noise);
  const CombinedTokens combined = combine_expert_tokens(r.reps, r.router);
  r.tokens = combined.tokens;
  r.pooled = combined.pooled;

  auto& graph = self.graph(task_id);
  const auto bound_graph = graph.bind(g);
  if (self.config_.graph_input == GraphInput::Tokens) {
    r.graph_out = graph.attend(bound_graph, r.tokens, task_id);
  } else {
    r.graph_out = graph.attend(bound_graph, r.pooled, 1);
  }
  auto& head = self.expert(task_id);
  r.logits = head.classify(head.bind(g), r.graph_out);
  r.logits.value().check_finite("logits");
  return r;
}

ForwardResult MsdemModel::forward(Graph& g, const Tensor& fused, std::size_t task_id, Mode mode,
                                  std::uint64_t seed) {
  if (mode == Mode::Eval) return static_cast<const MsdemModel&>(*this).forward(g, fused, task_id);
  check_task(task_id);
  Rng rng(seed);
  const RouterNoise noise = sample_router_noise(fused.rank() == 2 ? fused.rows() : 1, task_id, config_.sigma, rng);
  return forward_impl(*this, g, fused, task_id, &noise);
}

ForwardResult MsdemModel::forward(Graph& g, const Tensor& fused, std::size_t task_id) const {
  return forward_impl(*this, g, fused, task_id, nullptr);
}

Tensor MsdemModel::logits(const Tensor& fused, std::size_t task_id) const {
  Graph g(false);
  return forward(g, fused, task_id).logits.value();
}

std::vector<std::uint32_t> MsdemModel::predict(const Tensor& fused, std::size_t task_id) const {
  const Tensor l = logits(fused, task_id);
  const Expert& e = expert(task_id);
  std::vector<std::uint32_t> out(l.rows());
  for (std::size_t b = 0; b < l.rows(); ++b) out[b] = e.predict(l.data().subspan(b * l.cols(), l.cols()));
  return out;
}

std::vector<double> MsdemModel::router_weights(std::size_t task_id) const {
  const Parameter& row = relation_.row(task_id);
  return gumbel_softmax_weights(row.value.values(), config_.tau, 0.0, 0, true).weights;
}

}  // namespace msdem
