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

#include "msdem/config.hpp"

#include <fstream>
#include <functional>
#include <set>
#include <sstream>

#include "json.hpp"
#include "msdem/error.hpp"

namespace msdem {

using json = nlohmann::ordered_json;

namespace {

// Reads typed fields out of one JSON object, remembering every problem
// instead of stopping at the first.
class FieldReader {
 public:
  FieldReader(const json& obj, std::string where, std::vector<std::string>& problems)
      : obj_(obj), where_(std::move(where)), problems_(problems) {
    if (!obj_.is_object()) problems_.push_back(where_ + " must be an object");
  }

  void count(const char* key, std::size_t& out) {
    const json* v = find(key);
    if (v == nullptr) return;
    if (!v->is_number_unsigned()) {
      problems_.push_back(where_ + "." + key + " must be a non-negative integer");
      return;
    }
    out = v->get<std::size_t>();
  }
  void count32(const char* key, std::uint32_t& out) {
    std::size_t tmp = out;
    count(key, tmp);
    if (tmp > 0xffffffffULL) {
      problems_.push_back(where_ + "." + key + " is too large");
      return;
    }
    out = static_cast<std::uint32_t>(tmp);
  }
  void u64(const char* key, std::uint64_t& out) {
    const json* v = find(key);
    if (v == nullptr) return;
    if (!v->is_number_unsigned()) {
      problems_.push_back(where_ + "." + key + " must be a non-negative integer");
      return;
    }
    out = v->get<std::uint64_t>();
  }
  void real(const char* key, double& out) {
    const json* v = find(key);
    if (v == nullptr) return;
    if (!v->is_number()) {
      problems_.push_back(where_ + "." + key + " must be a number");
      return;
    }
    out = v->get<double>();
  }
  void text(const char* key, std::string& out) {
    const json* v = find(key);
    if (v == nullptr) return;
    if (!v->is_string()) {
      problems_.push_back(where_ + "." + key + " must be a string");
      return;
    }
    out = v->get<std::string>();
  }
  const json* raw(const char* key) { return find(key); }

  void check_unknown() const {
    if (!obj_.is_object()) return;
    for (const auto& [k, v] : obj_.items()) {
      if (!seen_.count(k)) problems_.push_back(where_ + ": unknown key '" + k + "'");
    }
  }

 private:
  const json* find(const char* key) {
    seen_.insert(key);
    if (!obj_.is_object()) return nullptr;
    auto it = obj_.find(key);
    return it == obj_.end() ? nullptr : &*it;
  }

  const json& obj_;
  std::string where_;
  std::vector<std::string>& problems_;
  std::set<std::string> seen_;
};

json parse_json(const std::string& text, const char* what) {
  try {
    return json::parse(text);
  } catch (const json::parse_error& e) {
    throw ParseError(std::string(what) + " is not valid JSON", e.byte);
  }
}

[[noreturn]] void fail(const char* what, const std::vector<std::string>& problems) {
  std::string msg = std::string("invalid ") + what + ":";
  for (const auto& p : problems) msg += "\n  - " + p;
  throw ValidationError(msg);
}

std::string read_text(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void collect(std::vector<std::string>& problems, const std::function<void()>& check) {
  try {
    check();
  } catch (const ValidationError& e) {
    std::istringstream lines(e.what());
    std::string line;
    std::getline(lines, line);
    while (std::getline(lines, line)) problems.push_back(line.substr(line.find("- ") + 2));
  }
}

}  // namespace

RunConfig parse_run_config(const std::string& text) {
  const json root = parse_json(text, "run config");
  std::vector<std::string> problems;
  RunConfig cfg;
  FieldReader top(root, "config", problems);
  if (const json* m = top.raw("model")) {
    FieldReader r(*m, "model", problems);
    r.count("d_e", cfg.model.d_e);
    r.count("deam_heads", cfg.model.deam_heads);
    r.count("graph_heads", cfg.model.graph_heads);
    r.count("token_dim", cfg.model.token_dim);
    std::string gi = cfg.model.graph_input == GraphInput::Tokens ? "tokens" : "pooled";
    r.text("graph_input", gi);
    if (gi == "tokens") {
      cfg.model.graph_input = GraphInput::Tokens;
    } else if (gi == "pooled") {
      cfg.model.graph_input = GraphInput::Pooled;
    } else {
      problems.push_back("model.graph_input must be 'tokens' or 'pooled'");
    }
    r.u64("seed", cfg.model.seed);
    r.check_unknown();
  }
  if (const json* t = top.raw("train")) {
    FieldReader r(*t, "train", problems);
    r.count("epochs_per_task", cfg.train.epochs_per_task);
    r.count("batch_size", cfg.train.batch_size);
    r.real("lr_expert", cfg.train.lr_expert);
    r.real("lr_router", cfg.train.lr_router);
    r.real("lr_attention", cfg.train.lr_attention);
    r.real("tau", cfg.train.tau);
    r.real("sigma", cfg.train.sigma);
    r.u64("seed", cfg.train.seed);
    r.count("lr_decay_epochs", cfg.train.lr_decay_epochs);
    r.real("lr_decay_factor", cfg.train.lr_decay_factor);
    r.check_unknown();
  }
  top.check_unknown();
  collect(problems, [&] { cfg.train.validate(); });
  if (cfg.model.d_e == 0) problems.push_back("d_e must be positive");
  if (cfg.model.deam_heads == 0) problems.push_back("deam_heads must be positive");
  if (cfg.model.graph_heads == 0) problems.push_back("graph_heads must be positive");
  if (cfg.model.d_e != 0 && cfg.model.graph_heads != 0 && cfg.model.d_e % cfg.model.graph_heads != 0)
    problems.push_back("d_e " + std::to_string(cfg.model.d_e) + " is not divisible by graph_heads " +
                       std::to_string(cfg.model.graph_heads));
  if (!problems.empty()) fail("run config", problems);
  cfg.model.tau = cfg.train.tau;
  cfg.model.sigma = cfg.train.sigma;
  return cfg;
}

RunConfig load_run_config(const std::filesystem::path& path) { return parse_run_config(read_text(path)); }

void validate_run_config(const RunConfig& config, std::span<const BackboneSpec> backbones) {
  std::vector<std::string> problems;
  collect(problems, [&] { config.train.validate(); });
  collect(problems, [&] { config.model.validate(backbones); });
  if (!problems.empty()) fail("run config", problems);
}

std::string run_config_to_text(const RunConfig& config) {
  json j;
  j["model"] = {{"d_e", config.model.d_e},
                {"deam_heads", config.model.deam_heads},
                {"graph_heads", config.model.graph_heads},
                {"token_dim", config.model.token_dim},
                {"graph_input", config.model.graph_input == GraphInput::Tokens ? "tokens" : "pooled"},
                {"seed", config.model.seed}};
  j["train"] = {{"epochs_per_task", config.train.epochs_per_task},
                {"batch_size", config.train.batch_size},
                {"lr_expert", config.train.lr_expert},
                {"lr_router", config.train.lr_router},
                {"lr_attention", config.train.lr_attention},
                {"tau", config.train.tau},
                {"sigma", config.train.sigma},
                {"seed", config.train.seed},
                {"lr_decay_epochs", config.train.lr_decay_epochs},
                {"lr_decay_factor", config.train.lr_decay_factor}};
  return j.dump(2) + "\n";
}

SynthStreamConfig parse_synth_config(const std::string& text) {
  const json root = parse_json(text, "synth config");
  std::vector<std::string> problems;
  SynthStreamConfig cfg;
  FieldReader r(root, "synth", problems);
  r.u64("seed", cfg.seed);
  if (const json* b = r.raw("backbones")) {
    cfg.backbones.clear();
    if (!b->is_array()) {
      problems.push_back("synth.backbones must be an array");
    } else {
      for (std::size_t i = 0; i < b->size(); ++i) {
        FieldReader br((*b)[i], "synth.backbones[" + std::to_string(i) + "]", problems);
        BackboneSpec spec;
        br.text("name", spec.name);
        br.count32("dim", spec.dim);
        br.check_unknown();
        cfg.backbones.push_back(spec);
      }
    }
  }
  r.count32("n_domains", cfg.n_domains);
  r.count32("tasks_per_domain", cfg.tasks_per_domain);
  r.count32("classes_per_task", cfg.classes_per_task);
  r.count32("samples_per_class", cfg.samples_per_class);
  r.real("separation", cfg.separation);
  r.real("noise", cfg.noise);
  r.check_unknown();

  if (cfg.backbones.empty()) problems.push_back("at least one backbone is required");
  std::set<std::string> names;
  for (const auto& b : cfg.backbones) {
    if (b.name.empty()) problems.push_back("backbone names must be non-empty");
    if (!names.insert(b.name).second) problems.push_back("duplicate backbone '" + b.name + "'");
    if (b.dim == 0) problems.push_back("backbone '" + b.name + "' has dim 0");
  }
  if (cfg.n_domains == 0) problems.push_back("n_domains must be positive");
  if (cfg.tasks_per_domain == 0) problems.push_back("tasks_per_domain must be positive");
  if (cfg.classes_per_task < 2)
    problems.push_back("classes_per_task must be at least 2, got " + std::to_string(cfg.classes_per_task));
  if (cfg.samples_per_class < 2) problems.push_back("samples_per_class must be at least 2");
  if (!(cfg.separation > 0.0)) problems.push_back("separation must be positive");
  if (!(cfg.noise >= 0.0)) problems.push_back("noise must be non-negative");
  if (!problems.empty()) fail("synth config", problems);
  return cfg;
}

std::string synth_config_to_text(const SynthStreamConfig& config) {
  json j;
  j["seed"] = config.seed;
  j["backbones"] = json::array();
  for (const auto& b : config.backbones) j["backbones"].push_back({{"name", b.name}, {"dim", b.dim}});
  j["n_domains"] = config.n_domains;
  j["tasks_per_domain"] = config.tasks_per_domain;
  j["classes_per_task"] = config.classes_per_task;
  j["samples_per_class"] = config.samples_per_class;
  j["separation"] = config.separation;
  j["noise"] = config.noise;
  return j.dump(2) + "\n";
}

}  // namespace msdem
