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

#include "msdem/cli.hpp"

#include <filesystem>
#include <fstream>
#include <iomanip>
#include <optional>
#include <ostream>
#include <regex>
#include <sstream>

#include "CLI11.hpp"
#include "msdem/checkpoint.hpp"
#include "msdem/config.hpp"
#include "msdem/error.hpp"
#include "msdem/evaluation.hpp"
#include "msdem/trainer.hpp"

namespace msdem {

namespace fs = std::filesystem;

namespace {

std::string read_text(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write_text(const fs::path& path, const std::string& text) {
  const fs::path tmp = path.string() + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot write " + tmp.string());
    out << text;
    if (!out) throw IoError("write failed for " + tmp.string());
  }
  std::error_code ec;
  fs::rename(tmp, path, ec);
  if (ec) throw IoError("cannot rename " + tmp.string() + ": " + ec.message());
}

void make_dir(const fs::path& dir) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec || !fs::is_directory(dir)) throw IoError("cannot create directory " + dir.string() + ": " + ec.message());
  const fs::path probe = dir / ".msdem_probe";
  std::ofstream out(probe);
  if (!out) throw IoError("directory " + dir.string() + " is not writable");
  out.close();
  fs::remove(probe, ec);
}

fs::path task_checkpoint(const fs::path& dir, std::size_t t) { return dir / ("task_" + std::to_string(t) + ".msck"); }

std::optional<std::pair<std::size_t, fs::path>> latest_checkpoint(const fs::path& dir) {
  std::optional<std::pair<std::size_t, fs::path>> best;
  if (!fs::is_directory(dir)) return best;
  static const std::regex pattern(R"(task_([0-9]+)\.msck)");
  for (const auto& entry : fs::directory_iterator(dir)) {
    std::smatch m;
    const std::string name = entry.path().filename().string();
    if (!std::regex_match(name, m, pattern)) continue;
    const std::size_t t = std::stoul(m[1].str());
    if (!best || t > best->first) best = std::make_pair(t, entry.path());
  }
  return best;
}

void write_report(const fs::path& dir, const MetricsReport& report) {
  write_text(dir / "metrics.json", metrics_to_json(report));
  write_text(dir / "accuracy.csv", accuracy_csv(report));
  write_text(dir / "forgetting.csv", forgetting_csv(report));
  write_text(dir / "router_dependency.csv", dependency_csv(report.router_dependency));
  write_text(dir / "router_dependency_normalized.csv", dependency_csv(report.router_dependency_normalized));
}

// Checks that the model's tasks are a prefix of the stream.
void check_compatible(const MsdemModel& model, const TaskStream& stream) {
  const auto& mb = model.backbones();
  const auto& sb = stream.backbones();
  if (mb.size() != sb.size())
    throw ValidationError("checkpoint has " + std::to_string(mb.size()) + " backbones, manifest has " +
                          std::to_string(sb.size()));
  for (std::size_t j = 0; j < mb.size(); ++j) {
    if (mb[j].dim != sb[j].dim || mb[j].name != sb[j].name)
      throw ValidationError("backbone " + std::to_string(j + 1) + " is '" + mb[j].name + "' (dim " +
                            std::to_string(mb[j].dim) + ") in the checkpoint but '" + sb[j].name + "' (dim " +
                            std::to_string(sb[j].dim) + ") in the manifest");
  }
  if (model.current_task() > stream.size())
    throw ValidationError("checkpoint has " + std::to_string(model.current_task()) + " tasks, manifest has " +
                          std::to_string(stream.size()));
  for (std::size_t t = 1; t <= model.current_task(); ++t) {
    if (model.task(t).class_ids != stream.task(t).class_ids)
      throw ValidationError("task " + std::to_string(t) + " classes differ between checkpoint and manifest");
  }
}

struct TrainArgs {
  std::string manifest, config, out;
  std::optional<std::uint64_t> seed;
  std::optional<std::size_t> epochs, max_tasks;
  std::optional<double> tau, sigma;
  bool resume = false;
  bool print_config = false;
};

RunConfig resolve_run_config(const TrainArgs& a) {
  RunConfig cfg = a.config.empty() ? parse_run_config("{}") : load_run_config(a.config);
  if (a.seed) cfg.model.seed = cfg.train.seed = *a.seed;
  if (a.epochs) cfg.train.epochs_per_task = *a.epochs;
  if (a.tau) cfg.train.tau = *a.tau;
  if (a.sigma) cfg.train.sigma = *a.sigma;
  cfg.model.tau = cfg.train.tau;
  cfg.model.sigma = cfg.train.sigma;
  return cfg;
}

int cmd_train(const TrainArgs& a, std::ostream& out) {
  RunConfig cfg = resolve_run_config(a);
  if (a.print_config) {
    out << run_config_to_text(cfg);
    return 0;
  }
  if (a.manifest.empty()) throw ValidationError("train requires --manifest");
  if (a.out.empty()) throw ValidationError("train requires --out");
  TaskStream stream = build_stream(load_manifest(a.manifest));
  validate_run_config(cfg, stream.backbones());
  const fs::path dir(a.out);
  make_dir(dir);

  std::unique_ptr<MsdemModel> model;
  TrainState state;
  if (a.resume) {
    if (auto latest = latest_checkpoint(dir)) {
      LoadedCheckpoint ck = load_checkpoint(latest->second);
      RunConfig stored{ck.model->config(), ck.train};
      if (run_config_to_text(stored) != run_config_to_text(cfg))
        throw ValidationError("--resume: configuration differs from the one stored in " + latest->second.string());
      check_compatible(*ck.model, stream);
      model = std::move(ck.model);
      state = std::move(ck.state);
      out << "resuming after task " << model->current_task() << " from " << latest->second.string() << "\n";
    }
  }
  if (!model) model = std::make_unique<MsdemModel>(stream.backbones(), cfg.model);

  write_text(dir / "config.json", run_config_to_text(cfg));
  StreamOptions opts;
  opts.max_tasks = a.max_tasks.value_or(0);
  opts.after_task = [&](const MsdemModel& m, const TrainState& s, const TrainLog& log) {
    const std::size_t t = log.task_id;
    save_checkpoint(m, cfg.train, s, task_checkpoint(dir, t));
    write_text(dir / ("trainlog_task" + std::to_string(t) + ".csv"), trainlog_csv(log));
    std::ostringstream timing;
    timing << "task,steps,wall_seconds\n" << t << ',' << log.steps() << ',' << log.wall_seconds << '\n';
    write_text(dir / ("timing_task" + std::to_string(t) + ".csv"), timing.str());
    std::ostringstream line;
    line << std::fixed << std::setprecision(4);
    line << "task " << t << "/" << stream.size() << ": steps " << log.steps() << ", final loss "
         << log.losses.back() << ", accuracy row";
    for (double v : s.report.accuracy.back()) line << ' ' << v;
    out << line.str() << "\n" << std::flush;
  };
  train_stream(*model, stream, cfg.train, state, opts);
  write_report(dir, state.report);
  out << std::fixed << std::setprecision(4) << "average " << state.report.average << ", last " << state.report.last
      << " over " << state.report.tasks() << " tasks\n";
  return 0;
}

int cmd_eval(const std::string& checkpoint, const std::string& manifest, const std::string& out_dir,
             std::ostream& out) {
  LoadedCheckpoint ck = load_checkpoint(checkpoint);
  TaskStream stream = build_stream(load_manifest(manifest));
  check_compatible(*ck.model, stream);
  const std::size_t n = ck.model->current_task();
  if (n == 0) throw ValidationError("checkpoint holds no trained task");
  MetricsReport report = ck.state.report;
  if (report.tasks() != n)
    throw ValidationError("checkpoint holds " + std::to_string(report.tasks()) + " accuracy rows for " +
                          std::to_string(n) + " tasks");
  const std::size_t threads = eval_threads_from_env();
  std::vector<double> row;
  for (std::size_t j = 1; j <= n; ++j) row.push_back(evaluate_task(*ck.model, j, stream.test_set(j), threads));
  report.accuracy.back() = row;
  report.router_dependency = router_dependency(*ck.model);
  report.router_dependency_normalized = normalize_dependency(report.router_dependency);
  finalize_metrics(report);
  const fs::path dir(out_dir);
  make_dir(dir);
  write_report(dir, report);
  out << std::fixed << std::setprecision(4) << "average " << report.average << ", last " << report.last << " over "
      << n << " tasks\n";
  return 0;
}

int cmd_inspect(const std::string& checkpoint, std::ostream& out) {
  LoadedCheckpoint ck = load_checkpoint(checkpoint);
  MsdemModel& m = *ck.model;
  std::size_t total = 0, trainable = 0, frozen = 0;
  for (const Parameter* p : m.parameters()) {
    total += p->size();
    (p->frozen ? frozen : trainable) += p->size();
  }
  out << "format version " << ck.version << "\n";
  out << "backbones:";
  for (const auto& b : m.backbones()) out << ' ' << b.name << '(' << b.dim << ')';
  out << "\n";
  out << "tasks " << m.current_task() << ", token width " << m.token_dim() << ", d_e " << m.config().d_e
      << ", tau " << m.config().tau << ", sigma " << m.config().sigma << "\n";
  out << "parameters total " << total << ", trainable " << trainable << ", frozen " << frozen << "\n";
  for (std::size_t t = 1; t <= m.current_task(); ++t) {
    std::size_t count = 0;
    bool all_frozen = true;
    for (const Parameter* p : m.task_parameters(t)) {
      count += p->size();
      all_frozen = all_frozen && p->frozen;
    }
    out << "task " << t << " (" << m.task(t).domain_name << ", " << m.task(t).class_ids.size()
        << " classes): " << count << " parameters, " << (all_frozen ? "frozen" : "trainable") << "\n";
  }
  out << "router weights:\n";
  out << std::fixed << std::setprecision(4);
  for (std::size_t t = 1; t <= m.current_task(); ++t) {
    const auto w = m.router_weights(t);
    out << "  " << t << ":";
    for (double v : w) out << ' ' << v;
    out << "\n";
  }
  out << "optimizer steps " << ck.state.completed_steps << "\n";
  return 0;
}

int cmd_gen_synth(const std::string& config, const std::string& out_dir, std::optional<std::uint64_t> seed,
                  bool print_config, std::ostream& out) {
  SynthStreamConfig cfg = parse_synth_config(config.empty() ? std::string("{}") : read_text(config));
  if (seed) cfg.seed = *seed;
  if (print_config) {
    out << synth_config_to_text(cfg);
    return 0;
  }
  if (out_dir.empty()) throw ValidationError("gen-synth requires --out");
  make_dir(out_dir);
  const Manifest m = generate_synth_stream(cfg, out_dir);
  const std::uint32_t spc = cfg.samples_per_class;
  const std::uint32_t train = synth_train_per_class(spc);
  for (const auto& d : m.domains) {
    std::size_t tasks = 0, classes = 0;
    for (const auto& t : m.tasks) {
      if (t.domain != d.name) continue;
      ++tasks;
      classes += t.classes.size();
    }
    out << "domain " << d.name << ": " << tasks << " tasks, " << classes << " classes, " << classes * train
        << " train / " << classes * (spc - train) << " test records, " << d.files.size() * 2 << " files\n";
  }
  out << "manifest " << (fs::path(out_dir) / "manifest.json").string() << "\n";
  return 0;
}

void report_error(std::ostream& err, const std::string& category, const std::string& what) {
  err << "error: " << category << ": " << what << "\n";
}

}  // namespace

int run_cli(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
  CLI::App app{"Multi-source dynamic expansion continual learner over precomputed features", "msdem"};
  app.require_subcommand(1);

  std::string synth_config, synth_out;
  std::optional<std::uint64_t> synth_seed;
  bool synth_print = false;
  auto* gen = app.add_subcommand("gen-synth", "Write a synthetic multi-domain feature stream and its manifest");
  gen->add_option("--config", synth_config, "Synthetic stream config (JSON)");
  gen->add_option("--out", synth_out, "Output directory");
  gen->add_option("--seed", synth_seed, "Override the seed");
  gen->add_flag("--print-config", synth_print, "Print the resolved config and exit");

  TrainArgs ta;
  auto* train = app.add_subcommand("train", "Train over every task of a stream");
  train->add_option("--manifest", ta.manifest, "Stream manifest (JSON)");
  train->add_option("--config", ta.config, "Run config (JSON)");
  train->add_option("--out", ta.out, "Output directory");
  train->add_option("--seed", ta.seed, "Override model and trainer seeds");
  train->add_option("--epochs", ta.epochs, "Override epochs per task");
  train->add_option("--tau", ta.tau, "Override the router temperature");
  train->add_option("--sigma", ta.sigma, "Override the router noise scale");
  train->add_option("--max-tasks", ta.max_tasks, "Stop after this many tasks");
  train->add_flag("--resume", ta.resume, "Continue from the latest task checkpoint in --out");
  train->add_flag("--print-config", ta.print_config, "Print the resolved config and exit");

  std::string eval_ckpt, eval_manifest, eval_out;
  auto* eval = app.add_subcommand("eval", "Evaluate a checkpoint on every trained task");
  eval->add_option("--checkpoint", eval_ckpt, "Checkpoint file")->required();
  eval->add_option("--manifest", eval_manifest, "Stream manifest (JSON)")->required();
  eval->add_option("--out", eval_out, "Output directory")->required();

  std::string inspect_ckpt;
  auto* inspect = app.add_subcommand("inspect", "Summarize a checkpoint");
  inspect->add_option("checkpoint", inspect_ckpt, "Checkpoint file")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e, out, err);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e, out, err);
  } catch (const CLI::ParseError& e) {
    report_error(err, "usage", e.what());
    return 2;
  }

  try {
    if (*gen) return cmd_gen_synth(synth_config, synth_out, synth_seed, synth_print, out);
    if (*train) return cmd_train(ta, out);
    if (*eval) return cmd_eval(eval_ckpt, eval_manifest, eval_out, out);
    if (*inspect) return cmd_inspect(inspect_ckpt, out);
  } catch (const Error& e) {
    report_error(err, e.category(), e.what());
    return 1;
  } catch (const fs::filesystem_error& e) {
    report_error(err, "io", e.what());
    return 1;
  } catch (const std::exception& e) {
    report_error(err, "internal", e.what());
    return 1;
  }
  return 2;
}

}  // namespace msdem
