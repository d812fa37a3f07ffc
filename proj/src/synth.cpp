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

#include "msdem/synth.hpp"

#include <cmath>

#include "msdem/error.hpp"
#include "msdem/rng.hpp"

namespace msdem {

namespace {

constexpr std::uint64_t kMeanStream = 1;
constexpr std::uint64_t kSampleStream = 2;
constexpr std::uint64_t kPerturbStream = 3;

}  // namespace

std::uint32_t synth_train_per_class(std::uint32_t samples_per_class) {
  std::uint32_t train = static_cast<std::uint32_t>((4ULL * samples_per_class + 2) / 5);
  if (train >= samples_per_class) train = samples_per_class - 1;
  if (train == 0) train = 1;
  return train;
}

std::vector<Tensor> synth_means(std::uint64_t seed, std::uint32_t n_classes, std::span<const std::uint32_t> dims,
                                double separation) {
  if (n_classes < 2) throw ValidationError("synthetic domain needs n_classes >= 2");
  if (!(separation > 0.0) || !std::isfinite(separation))
    throw ValidationError("synthetic separation must be a positive finite number");
  std::vector<Tensor> means;
  for (std::size_t j = 0; j < dims.size(); ++j) {
    if (dims[j] == 0) throw ValidationError("backbone dimension must be positive");
    Tensor m({n_classes, dims[j]});
    for (std::uint32_t c = 0; c < n_classes; ++c) {
      Rng rng(derive_seed(seed, {kMeanStream, j, c}));
      NormalSampler normal;
      for (std::uint32_t k = 0; k < dims[j]; ++k) m.at(c, k) = to_storage(separation * normal(rng));
    }
    means.push_back(std::move(m));
  }
  return means;
}

SynthDomain synth_domain(const SynthSpec& spec, std::span<const std::uint32_t> dims,
                         const std::vector<Tensor>* base_means) {
  if (dims.empty()) throw ValidationError("synthetic domain needs at least one backbone");
  if (spec.samples_per_class < 2) throw ValidationError("synthetic domain needs samples_per_class >= 2");
  if (!(spec.noise >= 0.0) || !std::isfinite(spec.noise))
    throw ValidationError("synthetic noise must be a non-negative finite number");

  SynthDomain out;
  if (spec.related_to.empty()) {
    out.means = synth_means(spec.seed, spec.n_classes, dims, spec.separation);
  } else {
    if (base_means == nullptr) throw ValidationError("related synthetic domain needs the base domain's means");
    if (!(spec.perturbation >= 0.0) || !std::isfinite(spec.perturbation))
      throw ValidationError("synthetic perturbation must be a non-negative finite number");
    if (spec.n_classes < 2) throw ValidationError("synthetic domain needs n_classes >= 2");
    if (base_means->size() != dims.size()) throw DimensionError("base means do not match the backbone count");
    for (std::size_t j = 0; j < dims.size(); ++j) {
      const Tensor& base = (*base_means)[j];
      if (base.rows() != spec.n_classes || base.cols() != dims[j])
        throw DimensionError("base domain means have shape " + base.shape_string() + ", expected [" +
                             std::to_string(spec.n_classes) + "x" + std::to_string(dims[j]) + "]");
      Tensor m = base;
      for (std::uint32_t c = 0; c < spec.n_classes; ++c) {
        Rng rng(derive_seed(spec.seed, {kPerturbStream, j, c}));
        NormalSampler normal;
        for (std::uint32_t k = 0; k < dims[j]; ++k)
          m.at(c, k) = to_storage(m.at(c, k) + spec.perturbation * normal(rng));
      }
      out.means.push_back(std::move(m));
    }
  }

  const std::uint32_t n_train = synth_train_per_class(spec.samples_per_class);
  out.train.resize(dims.size());
  out.test.resize(dims.size());
  for (std::size_t j = 0; j < dims.size(); ++j) {
    const Tensor& m = out.means[j];
    for (std::uint32_t c = 0; c < spec.n_classes; ++c) {
      Rng rng(derive_seed(spec.seed, {kSampleStream, j, c}));
      NormalSampler normal;
      for (std::uint32_t s = 0; s < spec.samples_per_class; ++s) {
        FeatureRow row;
        row.label = c;
        row.values.resize(dims[j]);
        for (std::uint32_t k = 0; k < dims[j]; ++k)
          row.values[k] = static_cast<float>(m.at(c, k) + spec.noise * normal(rng));
        (s < n_train ? out.train[j] : out.test[j]).push_back(std::move(row));
      }
    }
  }
  return out;
}

SynthFiles write_synth_domain(const SynthDomain& domain, std::uint32_t n_classes, const std::filesystem::path& dir,
                              const std::string& domain_name, std::span<const std::string> backbone_names) {
  if (backbone_names.size() != domain.means.size())
    throw DimensionError("backbone name count does not match the synthetic domain");
  std::filesystem::create_directories(dir);
  SynthFiles files;
  for (std::size_t j = 0; j < backbone_names.size(); ++j) {
    const auto dim = static_cast<std::uint32_t>(domain.means[j].cols());
    auto train = dir / (domain_name + "." + backbone_names[j] + ".train.msfv");
    auto test = dir / (domain_name + "." + backbone_names[j] + ".test.msfv");
    write_feature_file(train, dim, n_classes, domain.train[j]);
    write_feature_file(test, dim, n_classes, domain.test[j]);
    files.train.push_back(std::move(train));
    files.test.push_back(std::move(test));
  }
  return files;
}

}  // namespace msdem
