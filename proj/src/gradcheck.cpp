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

#include "msdem/gradcheck.hpp"

#include <algorithm>
#include <cmath>
#include <vector>

#include "msdem/error.hpp"

namespace msdem {

namespace {

double evaluate(const LossFn& fn) {
  Graph g(false);
  return fn(g).value().item();
}

}  // namespace

GradCheckResult finite_diff_check(const LossFn& fn, std::span<Parameter* const> params,
                                  double h) {
  if (!(h > 0.0)) throw ValidationError("finite_diff_check needs h > 0");
  for (Parameter* p : params) {
    if (p->frozen) throw FrozenError("finite_diff_check on frozen parameter '" + p->name + "'");
    p->clear_grad();
  }

  Graph g;
  Var loss = fn(g);
  const double base = loss.value().item();
  g.backward(loss);
  if (evaluate(fn) != base) {
    throw StateError("loss function is not deterministic; fix its noise seed");
  }

  GradCheckResult result;
  for (Parameter* p : params) {
    const Tensor analytic = p->grad ? *p->grad : Tensor(p->value.shape());
    for (std::size_t i = 0; i < p->value.size(); ++i) {
      const double orig = p->value[i];
      auto at = [&](double delta) {
        p->value[i] = orig + delta;
        return evaluate(fn);
      };
      // Fourth-order central stencil.
      const double near = at(h) - at(-h);
      const double far = at(2.0 * h) - at(-2.0 * h);
      const double central = (8.0 * near - far) / (12.0 * h);
      p->value[i] = orig;
      const double a = analytic[i];
      const double denom = std::max({std::abs(a), std::abs(central), 1e-8});
      result.max_relative_error =
          std::max(result.max_relative_error, std::abs(a - central) / denom);
      ++result.components;
    }
    p->clear_grad();
  }
  return result;
}

}  // namespace msdem
