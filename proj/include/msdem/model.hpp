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
#include <map>
#include <memory>
#include <string>
#include <vector>

#include "msdem/autograd.hpp"
#include "msdem/deam.hpp"
#include "msdem/expert.hpp"
#include "msdem/router.hpp"
#include "msdem/stream.hpp"

namespace msdem {

enum class GraphInput {
  Tokens,  // attend over the per-expert weighted tokens (default)
  Pooled,  // attend over the single pooled vector
};

struct ModelConfig {
  std::size_t d_e = 512;
  std::size_t deam_heads = 32;
  std::size_t graph_heads = 32;
  // Common token width; 0 means the smallest backbone dim.
  std::size_t token_dim = 0;
  double tau = 1.0;
  double sigma = 0.1;
  GraphInput graph_input = GraphInput::Tokens;
  std::uint64_t seed = 0;

  // Throws ValidationError listing every problem.
  void validate(std::span<const BackboneSpec> backbones) const;
  std::size_t resolved_token_dim(std::span<const BackboneSpec> backbones) const;
};

enum class Mode { Train, Eval };

struct ForwardResult {
  Var fused;                   // [B x sum(dims)]
  std::vector<Var> attention;  // per expert j: [B*n x w] from DEAM block j
  std::vector<Var> reps;       // per expert j: [B x d_e]
  Var router;                  // [B x t]
  Var tokens;                  // [B*t x d_e] weighted expert tokens
  Var pooled;                  // [B x d_e]
  Var graph_out;               // [B x d_e] classifier input
  Var logits;                  // [B x K_t]
};

class MsdemModel {
 public:
  MsdemModel(std::vector<BackboneSpec> backbones, ModelConfig config);

  const std::vector<BackboneSpec>& backbones() const noexcept { return backbones_; }
  const ModelConfig& config() const noexcept { return config_; }
  ModelConfig& mutable_config() noexcept { return config_; }
  std::size_t current_task() const noexcept { return tasks_.size(); }
  std::size_t token_dim() const noexcept { return token_dim_; }

  // Creates task t's DEAM block, expert and graph block, expands the
  // relation matrix and freezes everything from earlier tasks.
  void begin_task(const TaskSpec& task);

  const TaskSpec& task(std::size_t task_id) const;
  AttentionBlock& deam(std::size_t task_id);
  const AttentionBlock& deam(std::size_t task_id) const;
  Expert& expert(std::size_t task_id);
  const Expert& expert(std::size_t task_id) const;
  GraphAttentionBlock& graph(std::size_t task_id);
  const GraphAttentionBlock& graph(std::size_t task_id) const;
  RelationMatrix& relation() noexcept { return relation_; }
  const RelationMatrix& relation() const noexcept { return relation_; }

  // Every parameter in a fixed order: per task (deam, expert, graph), then
  // the relation rows.
  std::vector<Parameter*> parameters();
  std::vector<const Parameter*> parameters() const;
  // The parameters of task t's components plus relation row t.
  std::vector<Parameter*> task_parameters(std::size_t task_id);
  std::vector<Parameter*> trainable_parameters();
  Parameter* find_parameter(const std::string& name);

  // Train mode draws per-sample router noise from `seed` and binds the
  // current task's parameters as trainable; eval mode is noise-free.
  ForwardResult forward(Graph& g, const Tensor& fused, std::size_t task_id, Mode mode, std::uint64_t seed = 0);
  // Read-only, always deterministic.
  ForwardResult forward(Graph& g, const Tensor& fused, std::size_t task_id) const;

  Tensor logits(const Tensor& fused, std::size_t task_id) const;
  std::vector<std::uint32_t> predict(const Tensor& fused, std::size_t task_id) const;
  // Deterministic router weights of relation row t.
  std::vector<double> router_weights(std::size_t task_id) const;

 private:
  template <typename Self>
  static ForwardResult forward_impl(Self& self, Graph& g, const Tensor& fused, std::size_t task_id,
                                    const RouterNoise* noise);
  void check_task(std::size_t task_id) const;

  std::vector<BackboneSpec> backbones_;
  ModelConfig config_;
  std::size_t token_dim_ = 0;
  std::vector<TaskSpec> tasks_;
  std::vector<std::unique_ptr<AttentionBlock>> deam_;
  std::vector<std::unique_ptr<Expert>> experts_;
  std::vector<std::unique_ptr<GraphAttentionBlock>> graphs_;
  RelationMatrix relation_;
};

}  // namespace msdem
