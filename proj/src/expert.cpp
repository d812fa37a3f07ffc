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

#include "msdem/expert.hpp"

#include "msdem/error.hpp"
#include "param_init.hpp"

namespace msdem {

Expert::Expert(std::size_t task_id, std::size_t input_dim, std::size_t d_e, std::vector<std::uint32_t> class_ids,
               std::uint64_t seed)
    : task_id_(task_id), class_ids_(std::move(class_ids)) {
  if (class_ids_.empty()) throw ValidationError("expert needs at least one class");
  if (input_dim == 0 || d_e == 0) throw DimensionError("expert dimensions must be positive");
  const std::string prefix = detail::task_prefix(task_id) + "expert.";
  adapt_w_ = detail::uniform_parameter(prefix + "adapt_w", {input_dim, d_e}, derive_seed(seed, {1}));
  adapt_b_ = Parameter(prefix + "adapt_b", Tensor({d_e}));
  cls_w_ = detail::uniform_parameter(prefix + "cls_w", {d_e, class_ids_.size()}, derive_seed(seed, {2}));
  cls_b_ = Parameter(prefix + "cls_b", Tensor({class_ids_.size()}));
}

std::vector<Parameter*> Expert::parameters() { return {&adapt_w_, &adapt_b_, &cls_w_, &cls_b_}; }

std::vector<const Parameter*> Expert::parameters() const { return {&adapt_w_, &adapt_b_, &cls_w_, &cls_b_}; }

void Expert::freeze() {
  for (Parameter* p : parameters()) {
    p->frozen = true;
    p->clear_grad();
  }
}

Expert::Bound Expert::bind(Graph& g) {
  return {g.param(adapt_w_), g.param(adapt_b_), g.param(cls_w_), g.param(cls_b_)};
}

Expert::Bound Expert::bind(Graph& g) const {
  return {g.constant(adapt_w_.value), g.constant(adapt_b_.value), g.constant(cls_w_.value),
          g.constant(cls_b_.value)};
}

Var Expert::pre_activation(const Bound& b, Var att) const {
  const Tensor& x = att.value();
  if (x.rank() != 2 || x.cols() != input_dim())
    throw DimensionError("expert " + std::to_string(task_id_) + " expects input dim " + std::to_string(input_dim()) +
                         ", got attention output of dim " + std::to_string(x.rank() == 2 ? x.cols() : x.size()));
  return add_bias(matmul(att, b.adapt_w), b.adapt_b);
}

Var Expert::adapt(const Bound& b, Var att) const {
  Var z = gelu(pre_activation(b, att));
  z.value().check_finite("expert representation");
  return z;
}

Var Expert::classify(const Bound& b, Var representation) const {
  const Tensor& z = representation.value();
  if (z.rank() != 2 || z.cols() != d_e())
    throw DimensionError("classifier of expert " + std::to_string(task_id_) + " expects width " +
                         std::to_string(d_e()) + ", got " + z.shape_string());
  return add_bias(matmul(representation, b.cls_w), b.cls_b);
}

std::uint32_t Expert::predict(std::span<const double> logits) const {
  if (logits.size() != class_ids_.size())
    throw DimensionError("expert " + std::to_string(task_id_) + " has " + std::to_string(class_ids_.size()) +
                         " classes, got " + std::to_string(logits.size()) + " logits");
  return class_ids_[argmax(logits)];
}

}  // namespace msdem
