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
#include <span>
#include <string>
#include <vector>

#include "msdem/tensor.hpp"

namespace msdem {

struct AdamState {
  Tensor first_moment;
  Tensor second_moment;
  std::uint64_t step_count = 0;
  double learning_rate = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;

  AdamState() = default;
  AdamState(const Shape& shape, double lr);
};

// One bias-corrected Adam update. Throws FrozenError for frozen parameters;
// the gradient is cleared afterwards. Missing gradients count as zero.
void adam_step(Parameter& param, AdamState& state);

// A named group of parameters sharing one learning rate, with per-parameter
// moment buffers keyed by parameter name.
class AdamGroup {
 public:
  AdamGroup() = default;
  AdamGroup(std::string name, double lr) : name_(std::move(name)), lr_(lr) {}

  const std::string& name() const noexcept { return name_; }
  double learning_rate() const noexcept { return lr_; }
  void set_learning_rate(double lr);

  void add(Parameter& p);
  bool contains(const std::string& param_name) const;
  const std::vector<Parameter*>& parameters() const noexcept { return params_; }

  void step();
  void zero_grad();

  std::map<std::string, AdamState>& states() noexcept { return states_; }
  const std::map<std::string, AdamState>& states() const noexcept { return states_; }

 private:
  std::string name_;
  double lr_ = 1e-3;
  std::vector<Parameter*> params_;
  std::map<std::string, AdamState> states_;
};

}  // namespace msdem
