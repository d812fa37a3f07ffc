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
#include <vector>

#include "msdem/autograd.hpp"

namespace msdem {

// Per-task expert: z = gelu(flatten(att) A + b), logits = z W + c, where
// the classifier covers only this task's classes.
class Expert {
 public:
  Expert(std::size_t task_id, std::size_t input_dim, std::size_t d_e, std::vector<std::uint32_t> class_ids,
         std::uint64_t seed);

  std::size_t task_id() const noexcept { return task_id_; }
  std::size_t input_dim() const noexcept { return adapt_w_.value.rows(); }
  std::size_t d_e() const noexcept { return adapt_w_.value.cols(); }
  std::size_t n_classes() const noexcept { return class_ids_.size(); }
  const std::vector<std::uint32_t>& class_ids() const noexcept { return class_ids_; }

  Parameter& adapt_w() noexcept { return adapt_w_; }
  Parameter& adapt_b() noexcept { return adapt_b_; }
  Parameter& cls_w() noexcept { return cls_w_; }
  Parameter& cls_b() noexcept { return cls_b_; }
  const Parameter& adapt_w() const noexcept { return adapt_w_; }
  const Parameter& adapt_b() const noexcept { return adapt_b_; }
  const Parameter& cls_w() const noexcept { return cls_w_; }
  const Parameter& cls_b() const noexcept { return cls_b_; }

  std::vector<Parameter*> parameters();
  std::vector<const Parameter*> parameters() const;
  bool frozen() const noexcept { return adapt_w_.frozen; }
  void freeze();

  struct Bound {
    Var adapt_w, adapt_b, cls_w, cls_b;
  };
  Bound bind(Graph& g);
  Bound bind(Graph& g) const;

  // Flattened attention output [B x input_dim] -> [B x d_e].
  Var pre_activation(const Bound& b, Var att) const;
  Var adapt(const Bound& b, Var att) const;
  // representation [B x d_e] -> logits [B x K].
  Var classify(const Bound& b, Var representation) const;

  // Global class id of the arg-max logit; ties go to the lowest index.
  std::uint32_t predict(std::span<const double> logits) const;

 private:
  std::size_t task_id_;
  std::vector<std::uint32_t> class_ids_;
  Parameter adapt_w_, adapt_b_, cls_w_, cls_b_;
};

}  // namespace msdem
