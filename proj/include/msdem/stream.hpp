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
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "msdem/synth.hpp"
#include "msdem/tensor.hpp"

namespace msdem {

enum class Split { Train, Test };

struct BackboneSpec {
  std::string name;
  std::uint32_t dim = 0;
};

std::size_t fused_dim(std::span<const BackboneSpec> backbones);

struct FeatureRecord {
  std::vector<std::vector<float>> per_backbone;
  std::uint32_t label = 0;
  std::uint32_t domain_id = 0;
  Split split = Split::Train;
};

// Concatenates the per-backbone vectors in declaration order.
std::vector<double> fuse_features(const FeatureRecord& record, std::span<const BackboneSpec> backbones);

struct TaskSpec {
  std::size_t task_id = 0;  // 1-based
  std::uint32_t domain_id = 0;  // index into the manifest's domain list
  std::string domain_name;
  std::vector<std::uint32_t> class_ids;  // global labels, declared order
  std::size_t train_count = 0;
  std::size_t test_count = 0;

  // Position of a global label inside class_ids; throws if absent.
  std::size_t local_index(std::uint32_t global_label) const;
};

// Fused features [n x sum(dims)] with global labels.
struct LabeledSet {
  Tensor features;
  std::vector<std::uint32_t> labels;
  std::size_t size() const noexcept { return labels.size(); }
};

// --- manifest ---

struct DomainFiles {
  std::string backbone;
  std::filesystem::path train;
  std::filesystem::path test;
};

struct DomainSpec {
  std::string name;
  std::uint32_t label_offset = 0;
  std::vector<DomainFiles> files;  // one per backbone, or empty when synthetic
  std::optional<SynthSpec> synthetic;
};

struct TaskDecl {
  std::string domain;
  std::vector<std::uint32_t> classes;
};

struct Manifest {
  int version = 1;
  std::uint64_t seed = 0;
  std::vector<BackboneSpec> backbones;
  std::vector<DomainSpec> domains;
  std::vector<TaskDecl> tasks;  // stream order
  // Relative file paths resolve against this directory.
  std::filesystem::path base_dir;
};

Manifest parse_manifest(const std::string& text, const std::filesystem::path& base_dir);
Manifest load_manifest(const std::filesystem::path& path);
std::string manifest_to_text(const Manifest& manifest);
void save_manifest(const Manifest& manifest, const std::filesystem::path& path);

// Structural checks that do not touch the file system: unique names,
// backbone coverage, disjoint class sets, known domains.
void validate_manifest(const Manifest& manifest);

// --- stream ---

class TaskStream {
 public:
  TaskStream() = default;
  TaskStream(std::vector<BackboneSpec> backbones, std::vector<TaskSpec> tasks, std::uint32_t label_cardinality,
             std::vector<LabeledSet> train, std::vector<LabeledSet> test);

  const std::vector<BackboneSpec>& backbones() const noexcept { return backbones_; }
  const std::vector<TaskSpec>& tasks() const noexcept { return tasks_; }
  std::size_t size() const noexcept { return tasks_.size(); }
  const TaskSpec& task(std::size_t task_id) const;
  std::uint32_t label_cardinality() const noexcept { return label_cardinality_; }
  std::size_t fused_dim() const noexcept;

  // Training records are handed out only for the active task.
  void activate(std::size_t task_id);
  std::size_t active_task() const noexcept { return active_; }
  const LabeledSet& train_set(std::size_t task_id) const;
  const LabeledSet& test_set(std::size_t task_id) const;

 private:
  std::vector<BackboneSpec> backbones_;
  std::vector<TaskSpec> tasks_;
  std::uint32_t label_cardinality_ = 0;
  std::vector<LabeledSet> train_;
  std::vector<LabeledSet> test_;
  std::size_t active_ = 0;
};

TaskStream build_stream(const Manifest& manifest);

// Synthetic stream generator used by `gen-synth`.
struct SynthStreamConfig {
  std::uint64_t seed = 0;
  std::vector<BackboneSpec> backbones{{"vit_a", 64}, {"vit_b", 64}};
  std::uint32_t n_domains = 4;
  std::uint32_t tasks_per_domain = 3;
  std::uint32_t classes_per_task = 20;
  std::uint32_t samples_per_class = 125;
  double separation = 5.0;
  double noise = 0.5;
};

// Writes feature files plus `manifest.json` to `out_dir` and returns the
// manifest. Domains are named d1..dN with contiguous global labels.
Manifest generate_synth_stream(const SynthStreamConfig& config, const std::filesystem::path& out_dir);

// The same layout with in-memory synthetic domains instead of files.
Manifest synth_stream_manifest(const SynthStreamConfig& config);

}  // namespace msdem
