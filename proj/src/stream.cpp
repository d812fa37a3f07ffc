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

#include "msdem/stream.hpp"

#include <algorithm>
#include <fstream>
#include <functional>
#include <map>
#include <set>
#include <sstream>

#include "json.hpp"
#include "msdem/error.hpp"
#include "msdem/feature_io.hpp"
#include "msdem/rng.hpp"

namespace msdem {

using nlohmann::json;

std::size_t fused_dim(std::span<const BackboneSpec> backbones) {
  std::size_t d = 0;
  for (const auto& b : backbones) d += b.dim;
  return d;
}

std::vector<double> fuse_features(const FeatureRecord& record, std::span<const BackboneSpec> backbones) {
  if (record.per_backbone.size() != backbones.size())
    throw DimensionError("record has " + std::to_string(record.per_backbone.size()) + " backbone vectors, stream has " +
                         std::to_string(backbones.size()) + " backbones");
  std::vector<double> z;
  z.reserve(fused_dim(backbones));
  for (std::size_t j = 0; j < backbones.size(); ++j) {
    const auto& v = record.per_backbone[j];
    if (v.size() != backbones[j].dim)
      throw DimensionError("backbone '" + backbones[j].name + "' vector has length " + std::to_string(v.size()) +
                           ", expected " + std::to_string(backbones[j].dim));
    z.insert(z.end(), v.begin(), v.end());
  }
  return z;
}

std::size_t TaskSpec::local_index(std::uint32_t global_label) const {
  auto it = std::find(class_ids.begin(), class_ids.end(), global_label);
  if (it == class_ids.end())
    throw ValidationError("label " + std::to_string(global_label) + " is not a class of task " +
                          std::to_string(task_id));
  return static_cast<std::size_t>(it - class_ids.begin());
}

// --- manifest ---

namespace {

template <typename T>
T get_field(const json& j, const char* key, const std::string& where) {
  if (!j.is_object() || !j.contains(key)) throw ValidationError(where + ": missing key '" + key + "'");
  try {
    return j.at(key).get<T>();
  } catch (const json::exception& e) {
    throw ValidationError(where + ": key '" + key + "' has the wrong type");
  }
}

template <typename T>
T get_field_or(const json& j, const char* key, T fallback, const std::string& where) {
  if (!j.contains(key)) return fallback;
  return get_field<T>(j, key, where);
}

SynthSpec parse_synth(const json& j, const std::string& where) {
  SynthSpec s;
  s.seed = get_field<std::uint64_t>(j, "seed", where);
  s.n_classes = get_field<std::uint32_t>(j, "n_classes", where);
  s.samples_per_class = get_field<std::uint32_t>(j, "samples_per_class", where);
  s.separation = get_field<double>(j, "separation", where);
  s.noise = get_field<double>(j, "noise", where);
  s.related_to = get_field_or<std::string>(j, "related_to", "", where);
  s.perturbation = get_field_or<double>(j, "perturbation", 0.0, where);
  return s;
}

json synth_to_json(const SynthSpec& s) {
  json j = {{"seed", s.seed},
            {"n_classes", s.n_classes},
            {"samples_per_class", s.samples_per_class},
            {"separation", s.separation},
            {"noise", s.noise}};
  if (!s.related_to.empty()) {
    j["related_to"] = s.related_to;
    j["perturbation"] = s.perturbation;
  }
  return j;
}

}  // namespace

Manifest parse_manifest(const std::string& text, const std::filesystem::path& base_dir) {
  json root;
  try {
    root = json::parse(text);
  } catch (const json::parse_error& e) {
    throw ParseError(std::string("manifest is not valid JSON: ") + e.what(), e.byte);
  }
  if (!root.is_object()) throw ValidationError("manifest must be a JSON object");

  Manifest m;
  m.base_dir = base_dir;
  m.version = get_field<int>(root, "version", "manifest");
  m.seed = get_field_or<std::uint64_t>(root, "seed", 0, "manifest");

  const json backbones = get_field<json>(root, "backbones", "manifest");
  if (!backbones.is_array()) throw ValidationError("manifest: 'backbones' must be an array");
  for (std::size_t i = 0; i < backbones.size(); ++i) {
    const std::string where = "backbones[" + std::to_string(i) + "]";
    m.backbones.push_back({get_field<std::string>(backbones[i], "name", where),
                           get_field<std::uint32_t>(backbones[i], "dim", where)});
  }

  const json domains = get_field<json>(root, "domains", "manifest");
  if (!domains.is_array()) throw ValidationError("manifest: 'domains' must be an array");
  for (std::size_t i = 0; i < domains.size(); ++i) {
    const std::string where = "domains[" + std::to_string(i) + "]";
    const json& d = domains[i];
    DomainSpec spec;
    spec.name = get_field<std::string>(d, "name", where);
    spec.label_offset = get_field_or<std::uint32_t>(d, "label_offset", 0, where);
    const bool has_files = d.contains("files");
    const bool has_synth = d.contains("synthetic");
    if (has_files == has_synth)
      throw ValidationError(where + ": exactly one of 'files' or 'synthetic' is required");
    if (has_files) {
      const json& files = d.at("files");
      if (!files.is_object()) throw ValidationError(where + ": 'files' must map backbone names to splits");
      for (const auto& [backbone, splits] : files.items()) {
        const std::string w = where + ".files." + backbone;
        spec.files.push_back({backbone, get_field<std::string>(splits, "train", w),
                              get_field<std::string>(splits, "test", w)});
      }
    } else {
      spec.synthetic = parse_synth(d.at("synthetic"), where + ".synthetic");
    }
    m.domains.push_back(std::move(spec));
  }

  const json tasks = get_field<json>(root, "tasks", "manifest");
  if (!tasks.is_array()) throw ValidationError("manifest: 'tasks' must be an array");
  for (std::size_t i = 0; i < tasks.size(); ++i) {
    const std::string where = "tasks[" + std::to_string(i) + "]";
    m.tasks.push_back({get_field<std::string>(tasks[i], "domain", where),
                       get_field<std::vector<std::uint32_t>>(tasks[i], "classes", where)});
  }
  validate_manifest(m);
  return m;
}

Manifest load_manifest(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open manifest " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_manifest(ss.str(), path.parent_path());
}

std::string manifest_to_text(const Manifest& m) {
  json root;
  root["version"] = m.version;
  root["seed"] = m.seed;
  root["backbones"] = json::array();
  for (const auto& b : m.backbones) root["backbones"].push_back({{"name", b.name}, {"dim", b.dim}});
  root["domains"] = json::array();
  for (const auto& d : m.domains) {
    json jd = {{"name", d.name}, {"label_offset", d.label_offset}};
    if (d.synthetic) {
      jd["synthetic"] = synth_to_json(*d.synthetic);
    } else {
      json files = json::object();
      for (const auto& f : d.files)
        files[f.backbone] = {{"train", f.train.generic_string()}, {"test", f.test.generic_string()}};
      jd["files"] = files;
    }
    root["domains"].push_back(jd);
  }
  root["tasks"] = json::array();
  for (const auto& t : m.tasks) root["tasks"].push_back({{"domain", t.domain}, {"classes", t.classes}});
  return root.dump(2) + "\n";
}

void save_manifest(const Manifest& manifest, const std::filesystem::path& path) {
  auto tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::trunc);
    if (!out) throw IoError("cannot write manifest " + tmp.string());
    out << manifest_to_text(manifest);
    if (!out) throw IoError("failed writing manifest " + tmp.string());
  }
  std::filesystem::rename(tmp, path);
}

void validate_manifest(const Manifest& m) {
  if (m.version != 1) throw ValidationError("unsupported manifest version " + std::to_string(m.version));
  if (m.backbones.empty()) throw ValidationError("manifest declares no backbones");
  std::set<std::string> backbone_names;
  for (const auto& b : m.backbones) {
    if (b.name.empty()) throw ValidationError("backbone name must be non-empty");
    if (b.dim == 0) throw ValidationError("backbone '" + b.name + "' must have a positive dim");
    if (!backbone_names.insert(b.name).second) throw ValidationError("duplicate backbone '" + b.name + "'");
  }

  std::map<std::string, std::size_t> domain_index;
  for (std::size_t i = 0; i < m.domains.size(); ++i) {
    const auto& d = m.domains[i];
    if (d.name.empty()) throw ValidationError("domain name must be non-empty");
    if (d.synthetic) {
      const auto& s = *d.synthetic;
      if (!s.related_to.empty()) {
        auto it = domain_index.find(s.related_to);
        if (it == domain_index.end())
          throw ValidationError("domain '" + d.name + "' is related_to '" + s.related_to +
                                "', which is not an earlier domain");
        const auto& base = m.domains[it->second];
        if (!base.synthetic) throw ValidationError("domain '" + d.name + "' can only relate to a synthetic domain");
        if (base.synthetic->n_classes != s.n_classes)
          throw ValidationError("domain '" + d.name + "' must have as many classes as '" + base.name + "'");
      }
    } else {
      if (d.files.size() != m.backbones.size())
        throw ValidationError("domain '" + d.name + "' must list files for all " +
                              std::to_string(m.backbones.size()) + " backbones");
      std::set<std::string> seen;
      for (const auto& f : d.files) {
        if (!backbone_names.count(f.backbone))
          throw ValidationError("domain '" + d.name + "' lists files for unknown backbone '" + f.backbone + "'");
        if (!seen.insert(f.backbone).second)
          throw ValidationError("domain '" + d.name + "' lists backbone '" + f.backbone + "' twice");
      }
    }
    if (!domain_index.emplace(d.name, i).second) throw ValidationError("duplicate domain '" + d.name + "'");
  }

  if (m.tasks.empty()) throw ValidationError("manifest declares no tasks");
  std::map<std::uint32_t, std::size_t> owner;
  for (std::size_t t = 0; t < m.tasks.size(); ++t) {
    const auto& task = m.tasks[t];
    auto it = domain_index.find(task.domain);
    if (it == domain_index.end())
      throw ValidationError("task " + std::to_string(t + 1) + " refers to unknown domain '" + task.domain + "'");
    const auto& d = m.domains[it->second];
    if (task.classes.size() < 2)
      throw ValidationError("task " + std::to_string(t + 1) + " needs at least 2 classes");
    for (auto c : task.classes) {
      auto [pos, fresh] = owner.emplace(c, t + 1);
      if (!fresh) {
        throw ValidationError("class " + std::to_string(c) + " appears in task " + std::to_string(pos->second) +
                              " and task " + std::to_string(t + 1) + "; class sets must be disjoint");
      }
      if (c < d.label_offset)
        throw ValidationError("class " + std::to_string(c) + " is below the label_offset of domain '" + d.name + "'");
      if (d.synthetic && c >= d.label_offset + d.synthetic->n_classes)
        throw ValidationError("class " + std::to_string(c) + " is outside synthetic domain '" + d.name + "'");
    }
  }
}

// --- stream ---

TaskStream::TaskStream(std::vector<BackboneSpec> backbones, std::vector<TaskSpec> tasks,
                       std::uint32_t label_cardinality, std::vector<LabeledSet> train, std::vector<LabeledSet> test)
    : backbones_(std::move(backbones)),
      tasks_(std::move(tasks)),
      label_cardinality_(label_cardinality),
      train_(std::move(train)),
      test_(std::move(test)) {
  if (train_.size() != tasks_.size() || test_.size() != tasks_.size())
    throw DimensionError("task stream needs one train and one test set per task");
  for (std::size_t i = 0; i < tasks_.size(); ++i) {
    if (tasks_[i].task_id != i + 1) throw ValidationError("task ids must run 1..N in order");
  }
}

std::size_t TaskStream::fused_dim() const noexcept { return msdem::fused_dim(backbones_); }

const TaskSpec& TaskStream::task(std::size_t task_id) const {
  if (task_id == 0 || task_id > tasks_.size())
    throw ValidationError("task id " + std::to_string(task_id) + " outside 1.." + std::to_string(tasks_.size()));
  return tasks_[task_id - 1];
}

void TaskStream::activate(std::size_t task_id) {
  task(task_id);
  active_ = task_id;
}

const LabeledSet& TaskStream::train_set(std::size_t task_id) const {
  task(task_id);
  if (task_id != active_)
    throw StateError("training records of task " + std::to_string(task_id) + " requested while task " +
                     std::to_string(active_) + " is active");
  return train_[task_id - 1];
}

const LabeledSet& TaskStream::test_set(std::size_t task_id) const {
  task(task_id);
  return test_[task_id - 1];
}

namespace {

using RowVisitor = std::function<void(const FeatureRow&)>;
// Yields the rows of one (backbone, split) source and returns its cardinality.
using RowSource = std::function<std::uint32_t(const RowVisitor&)>;

std::filesystem::path resolve(const Manifest& m, const std::filesystem::path& p) {
  return p.is_absolute() ? p : m.base_dir / p;
}

struct DomainTasks {
  std::vector<std::size_t> task_indices;  // into the stream's tasks
  std::map<std::uint32_t, std::size_t> class_to_task;
};

// Fills train/test sets of the tasks belonging to one domain. `sources[j]`
// yields backbone j's records; every backbone must agree on count and labels.
void load_domain_split(const Manifest& m, const DomainSpec& d, const DomainTasks& dt, std::span<const RowSource> sources,
                       std::vector<LabeledSet>& sets, std::uint32_t& cardinality, const std::string& split_name) {
  std::vector<std::uint32_t> labels;
  const std::uint32_t card0 = sources[0]([&](const FeatureRow& r) { labels.push_back(r.label); });
  if (cardinality == 0) cardinality = card0;
  if (card0 != cardinality)
    throw ValidationError("domain '" + d.name + "' " + split_name + " files disagree on label cardinality");
  for (const auto& [c, t] : dt.class_to_task) {
    if (c >= d.label_offset + cardinality)
      throw ValidationError("class " + std::to_string(c) + " of task " + std::to_string(t + 1) +
                            " is outside domain '" + d.name + "' (cardinality " + std::to_string(cardinality) +
                            ", label_offset " + std::to_string(d.label_offset) + ")");
  }

  // Slot of every record: (task index, row) or skipped.
  constexpr std::size_t kSkip = static_cast<std::size_t>(-1);
  std::vector<std::pair<std::size_t, std::size_t>> slot(labels.size(), {kSkip, 0});
  std::map<std::size_t, std::size_t> counts;
  for (std::size_t i = 0; i < labels.size(); ++i) {
    auto it = dt.class_to_task.find(labels[i] + d.label_offset);
    if (it == dt.class_to_task.end()) continue;
    slot[i] = {it->second, counts[it->second]++};
  }
  const std::size_t width = fused_dim(m.backbones);
  for (std::size_t t : dt.task_indices) {
    if (counts[t] == 0)
      throw ValidationError("task " + std::to_string(t + 1) + " has no " + split_name + " records in domain '" +
                            d.name + "'");
    sets[t].features = Tensor({counts[t], width});
    sets[t].labels.assign(counts[t], 0);
  }
  for (std::size_t i = 0; i < labels.size(); ++i) {
    if (slot[i].first != kSkip) sets[slot[i].first].labels[slot[i].second] = labels[i] + d.label_offset;
  }

  std::size_t offset = 0;
  for (std::size_t j = 0; j < m.backbones.size(); ++j) {
    const std::uint32_t dim = m.backbones[j].dim;
    std::size_t i = 0;
    const std::uint32_t card = sources[j]([&](const FeatureRow& r) {
      if (i >= labels.size())
        throw ValidationError("domain '" + d.name + "' backbone '" + m.backbones[j].name + "' " + split_name +
                              " has more records than backbone '" + m.backbones[0].name + "'");
      if (r.label != labels[i])
        throw ValidationError("domain '" + d.name + "' record " + std::to_string(i) + " (" + split_name +
                              ") has label " + std::to_string(r.label) + " for backbone '" + m.backbones[j].name +
                              "' but " + std::to_string(labels[i]) + " for '" + m.backbones[0].name + "'");
      if (r.values.size() != dim)
        throw DimensionError("domain '" + d.name + "' backbone '" + m.backbones[j].name + "' has dimension " +
                             std::to_string(r.values.size()) + ", manifest declares " + std::to_string(dim));
      if (slot[i].first != kSkip) {
        Tensor& f = sets[slot[i].first].features;
        for (std::uint32_t k = 0; k < dim; ++k) f.at(slot[i].second, offset + k) = r.values[k];
      }
      ++i;
    });
    if (i != labels.size())
      throw ValidationError("domain '" + d.name + "' backbone '" + m.backbones[j].name + "' " + split_name +
                            " has " + std::to_string(i) + " records, expected " + std::to_string(labels.size()));
    if (card != cardinality)
      throw ValidationError("domain '" + d.name + "' " + split_name + " files disagree on label cardinality");
    offset += dim;
  }
}

}  // namespace

TaskStream build_stream(const Manifest& m) {
  validate_manifest(m);
  std::vector<std::uint32_t> dims;
  for (const auto& b : m.backbones) dims.push_back(b.dim);

  std::vector<TaskSpec> tasks(m.tasks.size());
  std::map<std::string, DomainTasks> by_domain;
  std::map<std::string, std::uint32_t> domain_id;
  for (std::size_t i = 0; i < m.domains.size(); ++i) domain_id[m.domains[i].name] = static_cast<std::uint32_t>(i);
  for (std::size_t t = 0; t < m.tasks.size(); ++t) {
    tasks[t].task_id = t + 1;
    tasks[t].domain_name = m.tasks[t].domain;
    tasks[t].domain_id = domain_id.at(m.tasks[t].domain);
    tasks[t].class_ids = m.tasks[t].classes;
    auto& dt = by_domain[m.tasks[t].domain];
    dt.task_indices.push_back(t);
    for (auto c : m.tasks[t].classes) dt.class_to_task[c] = t;
  }

  std::vector<LabeledSet> train(tasks.size()), test(tasks.size());
  std::map<std::string, std::vector<Tensor>> means_cache;
  std::function<const std::vector<Tensor>&(const DomainSpec&)> means_of = [&](const DomainSpec& d)
      -> const std::vector<Tensor>& {
    auto it = means_cache.find(d.name);
    if (it != means_cache.end()) return it->second;
    const SynthSpec& s = *d.synthetic;
    std::vector<Tensor> means;
    if (s.related_to.empty()) {
      means = synth_means(s.seed, s.n_classes, dims, s.separation);
    } else {
      const auto& base = *std::find_if(m.domains.begin(), m.domains.end(),
                                       [&](const DomainSpec& o) { return o.name == s.related_to; });
      means = synth_domain(s, dims, &means_of(base)).means;
    }
    return means_cache.emplace(d.name, std::move(means)).first->second;
  };

  std::uint32_t label_cardinality = 0;
  for (const auto& d : m.domains) {
    auto found = by_domain.find(d.name);
    if (found == by_domain.end()) continue;  // declared but unused
    const DomainTasks& dt = found->second;
    std::uint32_t cardinality = 0;
    if (d.synthetic) {
      const SynthSpec& s = *d.synthetic;
      const std::vector<Tensor>* base = nullptr;
      if (!s.related_to.empty()) {
        base = &means_of(*std::find_if(m.domains.begin(), m.domains.end(),
                                       [&](const DomainSpec& o) { return o.name == s.related_to; }));
      }
      const SynthDomain gen = synth_domain(s, dims, base);
      for (int split = 0; split < 2; ++split) {
        const auto& rows = split == 0 ? gen.train : gen.test;
        std::vector<RowSource> sources;
        for (std::size_t j = 0; j < dims.size(); ++j) {
          sources.push_back([&rows, j, &s](const RowVisitor& visit) {
            for (const auto& r : rows[j]) visit(r);
            return s.n_classes;
          });
        }
        load_domain_split(m, d, dt, sources, split == 0 ? train : test, cardinality, split == 0 ? "train" : "test");
      }
    } else {
      for (int split = 0; split < 2; ++split) {
        std::vector<RowSource> sources;
        for (const auto& b : m.backbones) {
          const auto& f = *std::find_if(d.files.begin(), d.files.end(),
                                        [&](const DomainFiles& x) { return x.backbone == b.name; });
          const auto path = resolve(m, split == 0 ? f.train : f.test);
          if (!std::filesystem::exists(path))
            throw IoError("feature file " + path.string() + " (domain '" + d.name + "') does not exist");
          sources.push_back([path](const RowVisitor& visit) {
            return for_each_feature_record(path, visit).cardinality;
          });
        }
        load_domain_split(m, d, dt, sources, split == 0 ? train : test, cardinality, split == 0 ? "train" : "test");
      }
    }
    for (std::size_t t : dt.task_indices) {
      tasks[t].train_count = train[t].size();
      tasks[t].test_count = test[t].size();
    }
    label_cardinality = std::max(label_cardinality, d.label_offset + cardinality);
  }
  return TaskStream(m.backbones, std::move(tasks), label_cardinality, std::move(train), std::move(test));
}

// --- synthetic stream ---

namespace {

Manifest synth_layout(const SynthStreamConfig& c) {
  if (c.n_domains == 0 || c.tasks_per_domain == 0) throw ValidationError("synthetic stream needs domains and tasks");
  if (c.classes_per_task < 2) throw ValidationError("synthetic stream needs classes_per_task >= 2");
  Manifest m;
  m.seed = c.seed;
  m.backbones = c.backbones;
  const std::uint32_t per_domain = c.tasks_per_domain * c.classes_per_task;
  for (std::uint32_t d = 0; d < c.n_domains; ++d) {
    DomainSpec spec;
    spec.name = "d" + std::to_string(d + 1);
    spec.label_offset = d * per_domain;
    SynthSpec s;
    s.seed = derive_seed(c.seed, {d});
    s.n_classes = per_domain;
    s.samples_per_class = c.samples_per_class;
    s.separation = c.separation;
    s.noise = c.noise;
    spec.synthetic = s;
    m.domains.push_back(spec);
    for (std::uint32_t t = 0; t < c.tasks_per_domain; ++t) {
      TaskDecl task{spec.name, {}};
      for (std::uint32_t k = 0; k < c.classes_per_task; ++k)
        task.classes.push_back(spec.label_offset + t * c.classes_per_task + k);
      m.tasks.push_back(std::move(task));
    }
  }
  return m;
}

}  // namespace

Manifest synth_stream_manifest(const SynthStreamConfig& config) {
  Manifest m = synth_layout(config);
  validate_manifest(m);
  return m;
}

Manifest generate_synth_stream(const SynthStreamConfig& config, const std::filesystem::path& out_dir) {
  Manifest m = synth_layout(config);
  validate_manifest(m);
  std::filesystem::create_directories(out_dir);
  std::vector<std::uint32_t> dims;
  std::vector<std::string> names;
  for (const auto& b : m.backbones) {
    dims.push_back(b.dim);
    names.push_back(b.name);
  }
  for (auto& d : m.domains) {
    const SynthSpec s = *d.synthetic;
    const SynthDomain gen = synth_domain(s, dims);
    const SynthFiles files = write_synth_domain(gen, s.n_classes, out_dir, d.name, names);
    d.synthetic.reset();
    for (std::size_t j = 0; j < names.size(); ++j)
      d.files.push_back({names[j], files.train[j].filename(), files.test[j].filename()});
  }
  m.base_dir = out_dir;
  save_manifest(m, out_dir / "manifest.json");
  return m;
}

}  // namespace msdem
