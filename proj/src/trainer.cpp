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

#include "msdem/trainer.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <numeric>
#include <set>
#include <sstream>

#include "msdem/error.hpp"
#include "msdem/rng.hpp"

namespace msdem {

void TrainConfig::validate() const {
  std::vector<std::string> problems;
  if (epochs_per_task == 0) problems.push_back("epochs_per_task must be positive");
  if (batch_size == 0) problems.push_back("batch_size must be positive");
  auto rate = [&](double v, const char* name) {
    if (!(v > 0.0) || !std::isfinite(v)) problems.push_back(std::string(name) + " must be a positive finite number");
  };
  rate(lr_expert, "lr_expert");
  rate(lr_router, "lr_router");
  rate(lr_attention, "lr_attention");
  if (!(tau > 0.0) || !std::isfinite(tau)) problems.push_back("tau must be a positive finite number");
  if (!(sigma >= 0.0) || !std::isfinite(sigma)) problems.push_back("sigma must be a non-negative finite number");
  if (lr_decay_epochs != 0 && !(lr_decay_factor > 0.0 && lr_decay_factor <= 1.0))
    problems.push_back("lr_decay_factor must lie in (0, 1]");
  if (problems.empty()) return;
  std::string msg = "invalid train config:";
  for (const auto& p : problems) msg += "\n  - " + p;
  throw ValidationError(msg);
}

std::string trainlog_csv(const TrainLog& log) {
  std::ostringstream os;
  os.precision(17);
  os << "step,epoch,loss,grad_norm\n";
  for (std::size_t i = 0; i < log.steps(); ++i)
    os << i + 1 << ',' << log.epochs[i] + 1 << ',' << log.losses[i] << ',' << log.grad_norms[i] << '\n';
  return os.str();
}

void audit_optimizer_groups(MsdemModel& model, const OptimizerGroups& groups) {
  std::set<const Parameter*> grouped;
  for (const AdamGroup* g : {&groups.expert, &groups.router, &groups.attention}) {
    for (const Parameter* p : g->parameters()) {
      if (!grouped.insert(p).second) throw StateError("parameter '" + p->name + "' is in two optimizer groups");
    }
  }
  std::set<const Parameter*> trainable;
  for (const Parameter* p : model.trainable_parameters()) trainable.insert(p);
  for (const Parameter* p : trainable) {
    if (!grouped.count(p)) throw StateError("trainable parameter '" + p->name + "' has no optimizer group");
  }
  for (const Parameter* p : grouped) {
    if (!trainable.count(p)) throw StateError("optimizer group holds non-trainable parameter '" + p->name + "'");
  }
}

OptimizerGroups make_optimizer_groups(MsdemModel& model, const TrainConfig& config) {
  const std::size_t t = model.current_task();
  if (t == 0) throw StateError("no task has been started");
  OptimizerGroups groups{AdamGroup("expert", config.lr_expert), AdamGroup("router", config.lr_router),
                         AdamGroup("attention", config.lr_attention)};
  for (Parameter* p : model.expert(t).parameters()) groups.expert.add(*p);
  groups.router.add(model.relation().row(t));
  for (Parameter* p : model.deam(t).parameters()) groups.attention.add(*p);
  for (Parameter* p : model.graph(t).parameters()) groups.attention.add(*p);

  audit_optimizer_groups(model, groups);
  return groups;
}

namespace {

Tensor gather_rows(const Tensor& x, std::span<const std::size_t> rows) {
  const std::size_t d = x.cols();
  Tensor out({rows.size(), d});
  for (std::size_t i = 0; i < rows.size(); ++i) {
    const auto src = x.data().subspan(rows[i] * d, d);
    std::copy(src.begin(), src.end(), out.data().begin() + static_cast<std::ptrdiff_t>(i * d));
  }
  return out;
}

double grad_norm(const std::vector<Parameter*>& params) {
  double s = 0.0;
  for (const Parameter* p : params) {
    if (!p->grad) continue;
    for (double g : p->grad->values()) s += g * g;
  }
  return std::sqrt(s);
}

}  // namespace

TrainLog train_task(MsdemModel& model, const TaskSpec& task, const LabeledSet& data, const TrainConfig& config,
                    TrainState& state) {
  if (model.current_task() != task.task_id)
    throw StateError("train_task for task " + std::to_string(task.task_id) + " but the model is at task " +
                     std::to_string(model.current_task()));
  if (model.task(task.task_id).class_ids != task.class_ids)
    throw StateError("task " + std::to_string(task.task_id) + " classes differ from the model's");
  if (config.epochs_per_task == 0 || config.batch_size == 0)
    throw ValidationError("epochs_per_task and batch_size must be positive");
  if (data.size() == 0) throw ValidationError("task " + std::to_string(task.task_id) + " has no training records");
  if (data.features.rank() != 2 || data.features.rows() != data.size() ||
      data.features.cols() != fused_dim(model.backbones()))
    throw DimensionError("training features " + data.features.shape_string() + " do not match " +
                         std::to_string(data.size()) + " records of width " +
                         std::to_string(fused_dim(model.backbones())));

  std::vector<std::size_t> targets(data.size());
  for (std::size_t i = 0; i < data.size(); ++i) targets[i] = task.local_index(data.labels[i]);

  model.mutable_config().tau = config.tau;
  model.mutable_config().sigma = config.sigma;

  OptimizerGroups groups = make_optimizer_groups(model, config);
  const std::vector<Parameter*> trainable = model.trainable_parameters();
  for (Parameter* p : trainable) p->clear_grad();

  const auto start = std::chrono::steady_clock::now();
  TrainLog log;
  log.task_id = task.task_id;
  const std::size_t n = data.size();
  const std::size_t t = task.task_id;
  std::vector<std::size_t> order(n);
  std::vector<std::size_t> batch_targets;
  double lr_scale = 1.0;

  for (std::size_t epoch = 0; epoch < config.epochs_per_task; ++epoch) {
    if (config.lr_decay_epochs != 0 && epoch != 0 && epoch % config.lr_decay_epochs == 0)
      lr_scale *= config.lr_decay_factor;
    groups.expert.set_learning_rate(config.lr_expert * lr_scale);
    groups.router.set_learning_rate(config.lr_router * lr_scale);
    groups.attention.set_learning_rate(config.lr_attention * lr_scale);

    std::iota(order.begin(), order.end(), std::size_t{0});
    Rng shuffle_rng(derive_seed(config.seed, {t, epoch, 0}));
    shuffle_indices(order, shuffle_rng);

    for (std::size_t begin = 0, step = 0; begin < n; begin += config.batch_size, ++step) {
      const std::size_t end = std::min(n, begin + config.batch_size);
      const std::span<const std::size_t> rows(order.data() + begin, end - begin);
      const Tensor x = gather_rows(data.features, rows);
      batch_targets.clear();
      for (std::size_t r : rows) batch_targets.push_back(targets[r]);

      Graph g;
      const ForwardResult fr =
          model.forward(g, x, t, Mode::Train, derive_seed(config.seed, {t, epoch, step, 1}));
      Var loss = cross_entropy_mean(fr.logits, batch_targets);
      const double lv = loss.value().item();
      if (!std::isfinite(lv)) {
        throw NumericError("non-finite loss " + std::to_string(lv) + " at task " + std::to_string(t) + ", epoch " +
                           std::to_string(epoch + 1) + ", step " + std::to_string(step + 1) +
                           " (lr_expert=" + std::to_string(config.lr_expert) +
                           ", lr_router=" + std::to_string(config.lr_router) +
                           ", lr_attention=" + std::to_string(config.lr_attention) + ")");
      }
      g.backward(loss);
      log.losses.push_back(lv);
      log.grad_norms.push_back(grad_norm(trainable));
      log.epochs.push_back(epoch);

      audit_optimizer_groups(model, groups);
      groups.expert.step();
      groups.router.step();
      groups.attention.step();
      state.completed_steps += 1;
    }
  }
  log.wall_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();

  state.adam.clear();
  for (const AdamGroup* grp : {&groups.expert, &groups.router, &groups.attention}) {
    for (const auto& [name, st] : grp->states()) state.adam.emplace(name, st);
  }
  return log;
}

std::vector<TrainLog> train_stream(MsdemModel& model, TaskStream& stream, const TrainConfig& config,
                                   TrainState& state, const StreamOptions& options) {
  config.validate();
  if (stream.size() == 0) throw ValidationError("the task stream is empty");
  if (model.backbones().size() != stream.backbones().size())
    throw ValidationError("model has " + std::to_string(model.backbones().size()) + " backbones, stream has " +
                          std::to_string(stream.backbones().size()));
  for (std::size_t i = 0; i < stream.backbones().size(); ++i) {
    if (model.backbones()[i].dim != stream.backbones()[i].dim)
      throw ValidationError("backbone '" + stream.backbones()[i].name + "' has dim " +
                            std::to_string(stream.backbones()[i].dim) + " in the stream but " +
                            std::to_string(model.backbones()[i].dim) + " in the model");
  }
  const std::size_t done = model.current_task();
  if (done > stream.size())
    throw ValidationError("model has " + std::to_string(done) + " tasks but the stream only " +
                          std::to_string(stream.size()));
  if (state.report.tasks() != done)
    throw StateError("training state holds " + std::to_string(state.report.tasks()) +
                     " accuracy rows for a model with " + std::to_string(done) + " tasks");
  for (std::size_t t = 1; t <= done; ++t) {
    if (model.task(t).class_ids != stream.task(t).class_ids)
      throw ValidationError("task " + std::to_string(t) + " of the model does not match the stream");
  }

  const std::size_t last = options.max_tasks == 0 ? stream.size() : std::min(stream.size(), options.max_tasks);
  const std::size_t threads = eval_threads_from_env();
  std::vector<TrainLog> logs;
  for (std::size_t t = done + 1; t <= last; ++t) {
    const TaskSpec& task = stream.task(t);
    model.begin_task(task);
    stream.activate(t);
    logs.push_back(train_task(model, task, stream.train_set(t), config, state));

    std::vector<double> row;
    for (std::size_t j = 1; j <= t; ++j) row.push_back(evaluate_task(model, j, stream.test_set(j), threads));
    state.report.accuracy.push_back(std::move(row));
    state.report.completed_steps.push_back(state.completed_steps);
    state.report.router_dependency = router_dependency(model);
    state.report.router_dependency_normalized = normalize_dependency(state.report.router_dependency);
    finalize_metrics(state.report);
    if (options.after_task) options.after_task(model, state, logs.back());
  }
  return logs;
}

}  // namespace msdem
