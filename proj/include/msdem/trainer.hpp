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
#include <functional>
#include <map>
#include <string>
#include <vector>

#include "msdem/evaluation.hpp"
#include "msdem/model.hpp"
#include "msdem/optim.hpp"
#include "msdem/stream.hpp"

namespace msdem {

struct TrainConfig {
  std::size_t epochs_per_task = 1;
  std::size_t batch_size = 64;
  double lr_expert = 1e-3;     // adaptive map and classifier
  double lr_router = 1e-2;     // relation row
  double lr_attention = 1e-3;  // DEAM and graph attention
  double tau = 1.0;
  double sigma = 0.1;
  std::uint64_t seed = 0;
  // Step decay: multiply every rate by lr_decay_factor after each
  // lr_decay_epochs epochs. 0 disables it.
  std::size_t lr_decay_epochs = 0;
  double lr_decay_factor = 0.1;

  // Throws ValidationError listing every problem.
  void validate() const;
};

struct TrainLog {
  std::size_t task_id = 0;
  std::vector<double> losses;      // one per step
  std::vector<double> grad_norms;  // L2 norm over all trainable gradients
  std::vector<std::size_t> epochs; // epoch index of each step
  double wall_seconds = 0.0;

  std::size_t steps() const noexcept { return losses.size(); }
};

// "step,epoch,loss,grad_norm" rows. Wall time is left out so the file is
// reproducible.
std::string trainlog_csv(const TrainLog& log);

// Mutable training state carried across tasks and persisted in checkpoints.
struct TrainState {
  std::uint64_t completed_steps = 0;
  // Adam moments of the most recent task, keyed by parameter name.
  std::map<std::string, AdamState> adam;
  MetricsReport report;
};

// Optimizer groups of the current task: A = adaptive map + classifier,
// B = relation row, C = DEAM and graph attention projections. Throws
// StateError unless they partition the model's trainable set.
struct OptimizerGroups {
  AdamGroup expert;
  AdamGroup router;
  AdamGroup attention;
};
OptimizerGroups make_optimizer_groups(MsdemModel& model, const TrainConfig& config);
void audit_optimizer_groups(MsdemModel& model, const OptimizerGroups& groups);

// Optimizes the current task on `data`. begin_task must already have been
// called for `task`. Lr zero is accepted here (parameters stay unchanged).
TrainLog train_task(MsdemModel& model, const TaskSpec& task, const LabeledSet& data, const TrainConfig& config,
                    TrainState& state);

struct StreamOptions {
  // Stop after this many tasks in total (0 = the whole stream).
  std::size_t max_tasks = 0;
  // Called after each task is trained and evaluated.
  std::function<void(const MsdemModel&, const TrainState&, const TrainLog&)> after_task;
};

// Trains every remaining task of `stream`, starting after the model's
// current task (resume), evaluating all seen tasks after each one.
std::vector<TrainLog> train_stream(MsdemModel& model, TaskStream& stream, const TrainConfig& config,
                                   TrainState& state, const StreamOptions& options = {});

}  // namespace msdem
