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

#include "msdem/checkpoint.hpp"

#include <bit>
#include <fstream>
#include <sstream>

#include "json.hpp"
#include "msdem/error.hpp"
#include "msdem/rng.hpp"

namespace msdem {

using json = nlohmann::ordered_json;

namespace {

constexpr char kMagic[4] = {'M', 'S', 'C', 'K'};

class Writer {
 public:
  template <typename T>
  void le(T v) {
    using U = std::make_unsigned_t<T>;
    U u = static_cast<U>(v);
    for (std::size_t i = 0; i < sizeof(T); ++i) out_.push_back(static_cast<char>(u >> (8 * i)));
  }
  void f32(double v) { le(std::bit_cast<std::uint32_t>(static_cast<float>(v))); }
  void f64(double v) { le(std::bit_cast<std::uint64_t>(v)); }
  void bytes(std::string_view s) { out_.append(s); }
  void name(const std::string& s) {
    le(static_cast<std::uint32_t>(s.size()));
    bytes(s);
  }
  void floats(const Tensor& t) {
    for (double v : t.values()) f32(v);
  }
  std::string& str() { return out_; }

 private:
  std::string out_;
};

class Reader {
 public:
  explicit Reader(std::string_view in) : in_(in) {}

  std::size_t offset() const noexcept { return pos_; }

  template <typename T>
  T le(const char* what) {
    need(sizeof(T), what);
    T v = 0;
    for (std::size_t i = 0; i < sizeof(T); ++i)
      v |= static_cast<T>(static_cast<unsigned char>(in_[pos_ + i])) << (8 * i);
    pos_ += sizeof(T);
    return v;
  }
  double f32(const char* what) { return static_cast<double>(std::bit_cast<float>(le<std::uint32_t>(what))); }
  double f64(const char* what) { return std::bit_cast<double>(le<std::uint64_t>(what)); }
  std::string_view bytes(std::size_t n, const char* what) {
    need(n, what);
    auto s = in_.substr(pos_, n);
    pos_ += n;
    return s;
  }
  std::string name(const char* what) {
    const auto n = le<std::uint32_t>(what);
    return std::string(bytes(n, what));
  }
  [[noreturn]] void fail(const std::string& what, std::size_t at) const { throw ParseError("checkpoint: " + what, at); }

 private:
  void need(std::size_t n, const char* what) const {
    if (in_.size() - pos_ < n) fail(std::string("truncated while reading ") + what, in_.size());
  }
  std::string_view in_;
  std::size_t pos_ = 0;
};

json model_config_json(const ModelConfig& c) {
  return {{"d_e", c.d_e},
          {"deam_heads", c.deam_heads},
          {"graph_heads", c.graph_heads},
          {"token_dim", c.token_dim},
          {"tau", c.tau},
          {"sigma", c.sigma},
          {"graph_input", c.graph_input == GraphInput::Tokens ? "tokens" : "pooled"},
          {"seed", c.seed}};
}

json train_config_json(const TrainConfig& c) {
  return {{"epochs_per_task", c.epochs_per_task},
          {"batch_size", c.batch_size},
          {"lr_expert", c.lr_expert},
          {"lr_router", c.lr_router},
          {"lr_attention", c.lr_attention},
          {"tau", c.tau},
          {"sigma", c.sigma},
          {"seed", c.seed},
          {"lr_decay_epochs", c.lr_decay_epochs},
          {"lr_decay_factor", c.lr_decay_factor}};
}

}  // namespace

std::string serialize_checkpoint(const MsdemModel& model, const TrainConfig& train, const TrainState& state) {
  json meta;
  meta["model"] = model_config_json(model.config());
  meta["backbones"] = json::array();
  for (const auto& b : model.backbones()) meta["backbones"].push_back({{"name", b.name}, {"dim", b.dim}});
  meta["tasks"] = json::array();
  for (std::size_t t = 1; t <= model.current_task(); ++t) {
    const TaskSpec& s = model.task(t);
    meta["tasks"].push_back({{"task_id", s.task_id},
                             {"domain_id", s.domain_id},
                             {"domain_name", s.domain_name},
                             {"class_ids", s.class_ids},
                             {"train_count", s.train_count},
                             {"test_count", s.test_count}});
  }
  meta["train"] = train_config_json(train);
  meta["completed_steps"] = state.completed_steps;
  meta["accuracy"] = state.report.accuracy;
  meta["row_steps"] = state.report.completed_steps;
  const std::string meta_text = meta.dump();

  Writer w;
  w.bytes(std::string_view(kMagic, 4));
  w.le(kCheckpointVersion);
  w.le(static_cast<std::uint64_t>(meta_text.size()));
  w.bytes(meta_text);

  const auto params = model.parameters();
  w.le(static_cast<std::uint32_t>(params.size()));
  for (const Parameter* p : params) {
    w.name(p->name);
    w.le(static_cast<std::uint8_t>(p->frozen ? 1 : 0));
    w.le(static_cast<std::uint32_t>(p->value.rank()));
    for (std::size_t d : p->value.shape()) w.le(static_cast<std::uint64_t>(d));
    w.floats(p->value);
  }

  const RelationMatrix& rel = model.relation();
  const std::size_t t = rel.size();
  w.le(static_cast<std::uint32_t>(t));
  for (std::size_t i = 1; i <= t; ++i) {
    for (std::size_t j = 1; j <= t; ++j) {
      const bool masked = rel.masked(i, j);
      w.le(static_cast<std::uint8_t>(masked ? 1 : 0));
      w.f32(masked ? 0.0 : rel.row(i).value[j - 1]);
    }
  }

  w.le(static_cast<std::uint32_t>(state.adam.size()));
  for (const auto& [name, st] : state.adam) {
    w.name(name);
    w.le(st.step_count);
    w.f64(st.learning_rate);
    w.f64(st.beta1);
    w.f64(st.beta2);
    w.f64(st.epsilon);
    w.le(static_cast<std::uint64_t>(st.first_moment.size()));
    w.floats(st.first_moment);
    w.floats(st.second_moment);
  }

  const auto& body = w.str();
  const std::uint64_t sum =
      fnv1a64(std::span(reinterpret_cast<const unsigned char*>(body.data()), body.size()));
  w.le(sum);
  return std::move(w.str());
}

void save_checkpoint(const MsdemModel& model, const TrainConfig& train, const TrainState& state,
                     const std::filesystem::path& path) {
  const std::string bytes = serialize_checkpoint(model, train, state);
  const auto tmp = std::filesystem::path(path.string() + ".tmp");
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot write " + tmp.string());
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw IoError("write failed for " + tmp.string());
  }
  std::error_code ec;
  std::filesystem::rename(tmp, path, ec);
  if (ec) {
    std::filesystem::remove(tmp);
    throw IoError("cannot rename " + tmp.string() + " to " + path.string() + ": " + ec.message());
  }
}

LoadedCheckpoint parse_checkpoint(std::string_view bytes) {
  Reader r(bytes);
  if (r.bytes(4, "magic") != std::string_view(kMagic, 4)) r.fail("bad magic", 0);
  LoadedCheckpoint out;
  out.version = r.le<std::uint32_t>("version");
  if (out.version == 0) r.fail("bad format version 0", 4);
  if (out.version > kCheckpointVersion)
    throw Error("version", "checkpoint format version " + std::to_string(out.version) +
                               " is newer than the supported version " + std::to_string(kCheckpointVersion));
  if (bytes.size() < 8 + 8) r.fail("truncated while reading checksum", bytes.size());
  const std::size_t body_end = bytes.size() - 8;
  {
    Reader tail(bytes.substr(body_end));
    const auto stored = tail.le<std::uint64_t>("checksum");
    const auto actual =
        fnv1a64(std::span(reinterpret_cast<const unsigned char*>(bytes.data()), body_end));
    if (stored != actual) r.fail("checksum mismatch", body_end);
  }
  Reader body(bytes.substr(0, body_end));
  body.bytes(8, "header");

  const std::size_t meta_at = body.offset();
  const auto meta_len = body.le<std::uint64_t>("metadata length");
  const auto meta_text = body.bytes(meta_len, "metadata");
  json meta;
  ModelConfig mc;
  std::vector<BackboneSpec> backbones;
  std::vector<TaskSpec> tasks;
  try {
    meta = json::parse(meta_text);
    const auto& m = meta.at("model");
    mc.d_e = m.at("d_e").get<std::size_t>();
    mc.deam_heads = m.at("deam_heads").get<std::size_t>();
    mc.graph_heads = m.at("graph_heads").get<std::size_t>();
    mc.token_dim = m.at("token_dim").get<std::size_t>();
    mc.tau = m.at("tau").get<double>();
    mc.sigma = m.at("sigma").get<double>();
    mc.graph_input = m.at("graph_input").get<std::string>() == "pooled" ? GraphInput::Pooled : GraphInput::Tokens;
    mc.seed = m.at("seed").get<std::uint64_t>();
    for (const auto& b : meta.at("backbones"))
      backbones.push_back({b.at("name").get<std::string>(), b.at("dim").get<std::uint32_t>()});
    for (const auto& t : meta.at("tasks")) {
      TaskSpec s;
      s.task_id = t.at("task_id").get<std::size_t>();
      s.domain_id = t.at("domain_id").get<std::uint32_t>();
      s.domain_name = t.at("domain_name").get<std::string>();
      s.class_ids = t.at("class_ids").get<std::vector<std::uint32_t>>();
      s.train_count = t.at("train_count").get<std::size_t>();
      s.test_count = t.at("test_count").get<std::size_t>();
      tasks.push_back(std::move(s));
    }
    const auto& tc = meta.at("train");
    out.train.epochs_per_task = tc.at("epochs_per_task").get<std::size_t>();
    out.train.batch_size = tc.at("batch_size").get<std::size_t>();
    out.train.lr_expert = tc.at("lr_expert").get<double>();
    out.train.lr_router = tc.at("lr_router").get<double>();
    out.train.lr_attention = tc.at("lr_attention").get<double>();
    out.train.tau = tc.at("tau").get<double>();
    out.train.sigma = tc.at("sigma").get<double>();
    out.train.seed = tc.at("seed").get<std::uint64_t>();
    out.train.lr_decay_epochs = tc.at("lr_decay_epochs").get<std::size_t>();
    out.train.lr_decay_factor = tc.at("lr_decay_factor").get<double>();
    out.state.completed_steps = meta.at("completed_steps").get<std::uint64_t>();
    out.state.report.accuracy = meta.at("accuracy").get<std::vector<std::vector<double>>>();
    out.state.report.completed_steps = meta.at("row_steps").get<std::vector<std::uint64_t>>();
  } catch (const json::exception& e) {
    r.fail(std::string("bad metadata: ") + e.what(), meta_at);
  }

  try {
    out.model = std::make_unique<MsdemModel>(backbones, mc);
    for (const TaskSpec& s : tasks) out.model->begin_task(s);
  } catch (const Error& e) {
    r.fail(std::string("metadata does not describe a valid model: ") + e.what(), meta_at);
  }

  const auto params = out.model->parameters();
  const std::size_t count_at = body.offset();
  const auto count = body.le<std::uint32_t>("parameter count");
  if (count != params.size())
    r.fail("expected " + std::to_string(params.size()) + " parameters, found " + std::to_string(count), count_at);
  for (Parameter* p : params) {
    const std::size_t at = body.offset();
    const std::string name = body.name("parameter name");
    if (name != p->name) r.fail("expected parameter '" + p->name + "', found '" + name + "'", at);
    const auto frozen = body.le<std::uint8_t>("frozen flag");
    if (frozen > 1) r.fail("bad frozen flag for '" + name + "'", body.offset() - 1);
    const std::size_t shape_at = body.offset();
    const auto rank = body.le<std::uint32_t>("rank");
    Shape shape;
    for (std::uint32_t i = 0; i < rank; ++i) shape.push_back(static_cast<std::size_t>(body.le<std::uint64_t>("dim")));
    if (shape != p->value.shape()) r.fail("shape mismatch for '" + name + "'", shape_at);
    for (std::size_t i = 0; i < p->value.size(); ++i) p->value[i] = body.f32("parameter values");
    p->frozen = frozen == 1;
  }

  RelationMatrix& rel = out.model->relation();
  const std::size_t rel_at = body.offset();
  const auto t = body.le<std::uint32_t>("relation size");
  if (t != rel.size()) r.fail("relation matrix size " + std::to_string(t) + " does not match the task count", rel_at);
  for (std::size_t i = 1; i <= t; ++i) {
    for (std::size_t j = 1; j <= t; ++j) {
      const std::size_t at = body.offset();
      const auto masked = body.le<std::uint8_t>("mask flag");
      const double v = body.f32("relation value");
      if ((masked == 1) != rel.masked(i, j)) r.fail("mask flag disagrees with the relation structure", at);
      if (masked == 0 && std::bit_cast<std::uint64_t>(v) != std::bit_cast<std::uint64_t>(rel.row(i).value[j - 1]))
        r.fail("relation entry disagrees with router row " + std::to_string(i), at);
    }
  }

  const auto n_states = body.le<std::uint32_t>("optimizer state count");
  for (std::uint32_t k = 0; k < n_states; ++k) {
    const std::size_t at = body.offset();
    const std::string name = body.name("optimizer state name");
    AdamState st;
    st.step_count = body.le<std::uint64_t>("step count");
    st.learning_rate = body.f64("learning rate");
    st.beta1 = body.f64("beta1");
    st.beta2 = body.f64("beta2");
    st.epsilon = body.f64("epsilon");
    const auto n = body.le<std::uint64_t>("moment size");
    Parameter* p = out.model->find_parameter(name);
    if (p == nullptr) r.fail("optimizer state for unknown parameter '" + name + "'", at);
    if (n != p->value.size()) r.fail("optimizer state size mismatch for '" + name + "'", at);
    st.first_moment = Tensor(p->value.shape());
    st.second_moment = Tensor(p->value.shape());
    for (std::size_t i = 0; i < n; ++i) st.first_moment[i] = body.f32("first moment");
    for (std::size_t i = 0; i < n; ++i) st.second_moment[i] = body.f32("second moment");
    out.state.adam.emplace(name, std::move(st));
  }
  if (body.offset() != body_end) r.fail("unexpected trailing bytes", body.offset());

  out.model->mutable_config().tau = mc.tau;
  if (out.state.report.accuracy.size() != out.state.report.completed_steps.size())
    r.fail("accuracy history and step stamps differ in length", meta_at);
  out.state.report.router_dependency = router_dependency(*out.model);
  out.state.report.router_dependency_normalized = normalize_dependency(out.state.report.router_dependency);
  finalize_metrics(out.state.report);
  return out;
}

LoadedCheckpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open checkpoint " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return parse_checkpoint(ss.str());
}

}  // namespace msdem
