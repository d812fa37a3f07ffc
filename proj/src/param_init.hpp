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

#include <cmath>
#include <string>

#include "msdem/rng.hpp"
#include "msdem/tensor.hpp"

namespace msdem::detail {

// U(-1/sqrt(fan_in), 1/sqrt(fan_in)) with fan_in = shape[0].
inline Parameter uniform_parameter(std::string name, Shape shape, std::uint64_t seed) {
  const double bound = 1.0 / std::sqrt(static_cast<double>(shape[0]));
  const std::size_t n = shape_numel(shape);
  return Parameter(std::move(name), Tensor(std::move(shape), uniform_init(n, bound, seed)));
}

inline std::string task_prefix(std::size_t task_id) { return "t" + std::to_string(task_id) + "."; }

}  // namespace msdem::detail
