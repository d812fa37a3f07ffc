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

#include "msdem/optim.hpp"

#include <cmath>

#include "msdem/error.hpp"

namespace msdem {

AdamState::AdamState(const Shape& shape, double lr)
    : first_moment(shape), second_moment(shape), learning_rate(lr) {}

void adam_step(Parameter& param, AdamState& state) {
  if (param.frozen) throw FrozenError("adam_step on frozen parameter '" + param.name + "'");
  if (!(state.learning_rate >= 0.0)) {
    throw ValidationError("learning rate must be non-negative for '" + param.name + "'");
  }
  if (state.first_moment.shape() != param.value.shape() ||
      state.second_moment.shape() != param.value.shape()) {
    throw DimensionError("Adam state shape " + state.first_moment.shape_string() +
                         " does not match parameter '" + param.name + "' " +
                         param.value.shape_string());
  }
  if (param.grad && param.grad->shape() != param.value.shape()) {
    throw DimensionError("gradient shape mismatch for '" + param.name + "'");
  }
  state.step_count += 1;
  const double t = static_cast<double>(state.step_count);
  const double bc1 = 1.0 - std::pow(state.beta1, t);
  const double bc2 = 1.0 - std::pow(state.beta2, t);
  auto& m = state.first_moment;
  auto& v = state.second_moment;
  auto& w = param.value;
  for (std::size_t i = 0; i < w.size(); ++i) {
    const double g = param.grad ? (*param.grad)[i] : 0.0;
    m[i] = to_storage(state.beta1 * m[i] + (1.0 - state.beta1) * g);
    v[i] = to_storage(state.beta2 * v[i] + (1.0 - state.beta2) * g * g);
    const double m_hat = m[i] / bc1;
    const double v_hat = v[i] / bc2;
    w[i] = to_storage(w[i] - state.learning_rate * m_hat / (std::sqrt(v_hat) + state.epsilon));
  }
  w.check_finite("adam_step(" + param.name + ")");
  param.clear_grad();
}

void AdamGroup::set_learning_rate(double lr) {
  lr_ = lr;
  for (auto& [name, st] : states_) st.learning_rate = lr;
}

void AdamGroup::add(Parameter& p) {
  if (p.frozen) throw FrozenError("cannot register frozen parameter '" + p.name + "'");
  if (contains(p.name)) throw StateError("parameter '" + p.name + "' already in group " + name_);
  params_.push_back(&p);
  states_.try_emplace(p.name, p.value.shape(), lr_);
}

bool AdamGroup::contains(const std::string& param_name) const {
  for (const Parameter* p : params_)
    if (p->name == param_name) return true;
  return false;
}

void AdamGroup::step() {
  for (Parameter* p : params_) {
    auto& st = states_.at(p->name);
    st.learning_rate = lr_;
    adam_step(*p, st);
  }
}

void AdamGroup::zero_grad() {
  for (Parameter* p : params_) p->clear_grad();
}

}  // namespace msdem
