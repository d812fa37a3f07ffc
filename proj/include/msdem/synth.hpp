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
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "msdem/feature_io.hpp"
#include "msdem/tensor.hpp"

namespace msdem {

struct SynthSpec {
  std::uint64_t seed = 0;
  std::uint32_t n_classes = 0;
  std::uint32_t samples_per_class = 0;
  double separation = 5.0;
  double noise = 0.5;
  // When non-empty, class means are those of the named domain plus
  // N(0, perturbation^2) offsets. Resolved by the manifest loader.
  std::string related_to;
  double perturbation = 0.0;
};

// Per class: round(0.8 * samples_per_class) train samples, the rest test,
// keeping at least one of each.
std::uint32_t synth_train_per_class(std::uint32_t samples_per_class);

struct SynthDomain {
  // Per backbone, [n_classes x dim] class means (float-representable).
  std::vector<Tensor> means;
  // Per backbone, class-major records with domain-local labels.
  std::vector<std::vector<FeatureRow>> train;
  std::vector<std::vector<FeatureRow>> test;
};

// Class means drawn from N(0, separation^2 I), one block per backbone.
std::vector<Tensor> synth_means(std::uint64_t seed, std::uint32_t n_classes, std::span<const std::uint32_t> dims,
                                double separation);

// Generates one domain. `base_means` (from synth_means of another domain)
// is required iff spec.related_to is set.
SynthDomain synth_domain(const SynthSpec& spec, std::span<const std::uint32_t> dims,
                         const std::vector<Tensor>* base_means = nullptr);

// Writes `<dir>/<domain>.<backbone>.<split>.msfv` for every backbone and
// split; returns the paths in (backbone, split) order.
struct SynthFiles {
  std::vector<std::filesystem::path> train;
  std::vector<std::filesystem::path> test;
};
SynthFiles write_synth_domain(const SynthDomain& domain, std::uint32_t n_classes,
                              const std::filesystem::path& dir, const std::string& domain_name,
                              std::span<const std::string> backbone_names);

}  // namespace msdem
