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

#include <functional>
#include <span>

#include "msdem/autograd.hpp"

namespace msdem {

// Builds a scalar loss on the given graph. Must bind parameters through
// Graph::param and be deterministic (any noise must come from a fixed seed).
using LossFn = std::function<Var(Graph&)>;

struct GradCheckResult {
  double max_relative_error = 0.0;
  std::size_t components = 0;
};

// Compares analytic gradients with central differences (fourth-order
// stencil at +-h, +-2h) for every component of every parameter. Relative
// error is |a - c| / max(|a|, |c|, 1e-8).
// Throws StateError if `fn` is not reproducible at the base point.
GradCheckResult finite_diff_check(const LossFn& fn, std::span<Parameter* const> params,
                                  double h = 1e-5);

}  // namespace msdem
