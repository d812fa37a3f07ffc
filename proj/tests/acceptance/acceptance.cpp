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

// Acceptance gate for the engine. Prints one PASS/FAIL line per criterion
// and exits non-zero if any criterion fails.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <functional>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "msdem/checkpoint.hpp"
#include "msdem/cli.hpp"
#include "msdem/config.hpp"
#include "msdem/evaluation.hpp"
#include "msdem/gradcheck.hpp"
#include "msdem/model.hpp"
#include "msdem/trainer.hpp"
#include "test_util.hpp"

using namespace msdem;
namespace fs = std::filesystem;
using msdem::testing::random_extent;
using msdem::testing::random_tensor;

namespace {

struct Outcome {
  bool pass = false;
  std::string detail;
};

std::string fmt(const char* f, double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, f, v);
  return buf;
}

double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

TaskSpec make_task(std::size_t id, std::vector<std::uint32_t> classes) {
  TaskSpec t;
  t.task_id = id;
  t.class_ids = std::move(classes);
  return t;
}

// ---------------------------------------------------------------- gradient

Outcome gradient_correctness() {
  const auto t0 = std::chrono::steady_clock::now();
  ModelConfig mc;
  mc.d_e = 8;
  mc.deam_heads = 2;
  mc.graph_heads = 2;
  mc.seed = 17;
  MsdemModel m({{"a", 16}, {"b", 16}}, mc);
  m.begin_task(make_task(1, {0, 1, 2}));
  m.begin_task(make_task(2, {3, 4, 5}));
  m.relation().row(2).value = Tensor::vector({0.8, 1.4});
  for (double& b : m.expert(2).cls_b().value.data()) b = 0.1;
  std::mt19937_64 rng(5);
  const Tensor x = random_tensor({4, 32}, rng);
  const std::vector<std::size_t> targets{0, 2, 1, 1};
  auto loss = [&](Graph& g) { return cross_entropy_mean(m.forward(g, x, 2, Mode::Train, 11).logits, targets); };
  std::vector<Parameter*> params = m.trainable_parameters();
  const GradCheckResult r = finite_diff_check(loss, params, 1e-3);
  const double secs = seconds_since(t0);
  return {r.max_relative_error < 1e-4 && secs < 10.0,
          "max relative error " + fmt("%.3g", r.max_relative_error) + " over " + std::to_string(r.components) +
              " components, " + fmt("%.2f", secs) + " s"};
}

// ---------------------------------------------------------------- 12-task stream

struct StreamRun {
  MetricsReport report;
  // logits[j][i]: test logits of task j+1 after training task i+1.
  std::vector<std::vector<Tensor>> logits;
  double seconds = 0.0;
  std::vector<double> oracle;
};

StreamRun run_default_stream() {
  StreamRun run;
  const auto t0 = std::chrono::steady_clock::now();
  TaskStream stream = build_stream(synth_stream_manifest(SynthStreamConfig{}));
  MsdemModel model(stream.backbones(), ModelConfig{});
  TrainState state;
  StreamOptions opts;
  run.logits.resize(stream.size());
  opts.after_task = [&](const MsdemModel& m, const TrainState&, const TrainLog&) {
    for (std::size_t j = 1; j <= m.current_task(); ++j) {
      Graph g(false);
      run.logits[j - 1].push_back(m.forward(g, stream.test_set(j).features, j).logits.value());
    }
  };
  train_stream(model, stream, TrainConfig{}, state, opts);
  run.seconds = seconds_since(t0);
  run.report = state.report;

  // Independent per-task oracle on the same fused features.
  for (std::size_t t = 1; t <= stream.size(); ++t) {
    stream.activate(t);
    const TaskSpec& spec = stream.task(t);
    auto rows = [&](const LabeledSet& s, std::vector<std::vector<double>>& x, std::vector<std::size_t>& y) {
      for (std::size_t r = 0; r < s.size(); ++r) {
        const auto row = s.features.data().subspan(r * s.features.cols(), s.features.cols());
        x.emplace_back(row.begin(), row.end());
        y.push_back(spec.local_index(s.labels[r]));
      }
    };
    std::vector<std::vector<double>> trx, tex;
    std::vector<std::size_t> try_, tey;
    rows(stream.train_set(t), trx, try_);
    rows(stream.test_set(t), tex, tey);
    run.oracle.push_back(
        msdem::testing::logistic_regression_accuracy(trx, try_, tex, tey, spec.class_ids.size()));
  }
  return run;
}

Outcome zero_forgetting(const StreamRun& run) {
  const auto& a = run.report.accuracy;
  bool ok = a.size() == 12;
  std::size_t compared = 0;
  for (std::size_t j = 0; j < a.size(); ++j) {
    for (std::size_t i = j; i < a.size(); ++i) {
      ok = ok && std::memcmp(&a[i][j], &a[j][j], sizeof(double)) == 0;
      ok = ok && bit_equal(run.logits[j][i - j], run.logits[j][0]);
      ++compared;
    }
  }
  for (const auto& curve : forgetting_curve(run.report))
    for (double v : curve) ok = ok && std::memcmp(&v, &curve.front(), sizeof(double)) == 0;
  ok = ok && run.seconds < 300.0;
  return {ok, std::to_string(compared) + " accuracy cells and logit matrices bit-identical to their first measurement, " +
                  fmt("%.1f", run.seconds) + " s"};
}

Outcome learning(const StreamRun& run) {
  const double worst_oracle = *std::min_element(run.oracle.begin(), run.oracle.end());
  const bool ok = run.report.average >= 0.95 && run.report.last >= 0.95 && worst_oracle >= 0.98;
  return {ok, "Average " + fmt("%.4f", run.report.average) + ", Last " + fmt("%.4f", run.report.last) +
                  ", weakest logistic-regression oracle " + fmt("%.4f", worst_oracle)};
}

// ---------------------------------------------------------------- Gumbel

Outcome gumbel_statistics() {
  const auto t0 = std::chrono::steady_clock::now();
  const std::vector<double> m{1, 2, 3};
  std::vector<double> freq(3, 0.0);
  const int n = 100000;
  for (int i = 0; i < n; ++i) {
    const auto s = gumbel_softmax_weights(m, 1.0, 0.0, derive_seed(77, {static_cast<std::uint64_t>(i)}), false);
    freq[argmax(s.weights)] += 1.0 / n;
  }
  double freq_err = 0.0;
  for (std::size_t k = 0; k < 3; ++k) freq_err = std::max(freq_err, std::abs(freq[k] - (k + 1) / 6.0));

  // Temperature regimes are judged on the median draw; individual draws
  // near a tie in the perturbed logits can split their weight.
  std::vector<double> sharp_max, flat_dev;
  for (int i = 0; i < n; ++i) {
    const auto seed = static_cast<std::uint64_t>(i);
    const auto sharp = gumbel_softmax_weights(m, 0.05, 0.1, derive_seed(78, {seed}), false).weights;
    sharp_max.push_back(*std::max_element(sharp.begin(), sharp.end()));
    double dev = 0.0;
    for (double w : gumbel_softmax_weights(m, 50.0, 0.1, derive_seed(79, {seed}), false).weights)
      dev = std::max(dev, std::abs(w - 1.0 / 3.0));
    flat_dev.push_back(dev);
  }
  const double sharp_share =
      static_cast<double>(std::count_if(sharp_max.begin(), sharp_max.end(), [](double v) { return v > 0.99; })) / n;
  const double flat_share =
      static_cast<double>(std::count_if(flat_dev.begin(), flat_dev.end(), [](double v) { return v <= 0.02; })) / n;
  std::nth_element(sharp_max.begin(), sharp_max.begin() + n / 2, sharp_max.end());
  std::nth_element(flat_dev.begin(), flat_dev.begin() + n / 2, flat_dev.end());
  const double sharp_median = sharp_max[n / 2], flat_median = flat_dev[n / 2];
  const double secs = seconds_since(t0);
  const bool ok = freq_err <= 0.01 && sharp_median > 0.99 && flat_median <= 0.02 && secs < 30.0;
  return {ok, "argmax frequency error " + fmt("%.4f", freq_err) + ", tau 0.05 median max weight " +
                  fmt("%.4f", sharp_median) + " (" + fmt("%.1f", 100 * sharp_share) +
                  "% of draws above 0.99), tau 50 median deviation from uniform " + fmt("%.4f", flat_median) + " (" +
                  fmt("%.1f", 100 * flat_share) + "% of draws within 0.02), " + fmt("%.1f", secs) + " s"};
}

// ---------------------------------------------------------------- router asymmetry

Outcome router_asymmetry() {
  const auto t0 = std::chrono::steady_clock::now();
  int literal = 0, neutral = 0;
  std::string per_seed;
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    Manifest m;
    m.seed = seed;
    m.backbones = {{"vit_a", 64}, {"vit_b", 64}};
    const char* names[3] = {"A", "B", "C"};
    for (std::uint32_t d = 0; d < 3; ++d) {
      DomainSpec ds;
      ds.name = names[d];
      ds.label_offset = 20 * d;
      SynthSpec s;
      s.seed = derive_seed(seed, {d + 100u});
      s.n_classes = 20;
      s.samples_per_class = 125;
      if (d == 1) {
        s.related_to = "A";
        s.perturbation = 0.5;
      }
      ds.synthetic = s;
      m.domains.push_back(ds);
      TaskDecl td;
      td.domain = names[d];
      for (std::uint32_t c = 0; c < 20; ++c) td.classes.push_back(20 * d + c);
      m.tasks.push_back(td);
    }
    TaskStream stream = build_stream(m);
    ModelConfig mc;
    mc.seed = seed;
    MsdemModel model(stream.backbones(), mc);
    TrainConfig tc;
    tc.seed = seed;
    TrainState state;
    train_stream(model, stream, tc, state);
    const auto& d = state.report.router_dependency;
    const double b_on_a = d[1][0], c_on_a = d[2][0];
    literal += b_on_a > c_on_a;
    // A uniform row of length t puts 1/t on each expert.
    neutral += 2.0 * b_on_a > 3.0 * c_on_a;
    per_seed += (seed ? "; " : "") + fmt("%.3f", b_on_a) + " vs " + fmt("%.3f", c_on_a);
  }
  const double secs = seconds_since(t0);
  const bool ok = literal >= 4 && neutral >= 4 && secs < 300.0;
  return {ok, "B-on-A above C-on-A in " + std::to_string(literal) + "/5 seeds, above after row-length scaling in " +
                  std::to_string(neutral) + "/5 (" + per_seed + "), " + fmt("%.1f", secs) + " s"};
}

// ---------------------------------------------------------------- determinism and persistence

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

int cli(std::vector<std::string> args) {
  args.insert(args.begin(), "msdem");
  std::vector<const char*> argv;
  for (const auto& a : args) argv.push_back(a.c_str());
  std::ostringstream out, err;
  const int code = run_cli(static_cast<int>(argv.size()), argv.data(), out, err);
  if (code != 0) std::fprintf(stderr, "%s", err.str().c_str());
  return code;
}

Outcome determinism_and_persistence() {
  const fs::path dir = msdem::testing::scratch_dir("acceptance_persistence");
  SynthStreamConfig sc;
  sc.seed = 11;
  sc.n_domains = 2;
  sc.tasks_per_domain = 2;
  const std::string run_text = R"({"model": {"d_e": 64, "deam_heads": 4, "graph_heads": 4, "seed": 5},
                                   "train": {"seed": 5, "epochs_per_task": 2}})";
  std::ofstream(dir / "synth.json") << synth_config_to_text(sc);
  std::ofstream(dir / "run.json") << run_text;
  if (cli({"gen-synth", "--config", (dir / "synth.json").string(), "--out", (dir / "data").string()}) != 0)
    return {false, "gen-synth failed"};
  const std::string manifest = (dir / "data" / "manifest.json").string(), cfg = (dir / "run.json").string();
  const std::vector<std::string> outputs{"task_1.msck", "task_2.msck", "task_3.msck", "task_4.msck",
                                         "metrics.json", "accuracy.csv", "forgetting.csv",
                                         "router_dependency.csv", "trainlog_task4.csv"};

  bool ok = true;
  std::string detail;
  auto check = [&](bool cond, const std::string& what) {
    if (!cond) detail += (detail.empty() ? "" : "; ") + what;
    ok = ok && cond;
  };

  // Two fixed-seed runs plus one interrupted after two tasks and resumed.
  check(cli({"train", "--manifest", manifest, "--config", cfg, "--out", (dir / "a").string()}) == 0, "run a failed");
  check(cli({"train", "--manifest", manifest, "--config", cfg, "--out", (dir / "b").string()}) == 0, "run b failed");
  check(cli({"train", "--manifest", manifest, "--config", cfg, "--out", (dir / "c").string(), "--max-tasks", "2"}) ==
            0,
        "interrupted run failed");
  check(cli({"train", "--manifest", manifest, "--config", cfg, "--out", (dir / "c").string(), "--resume"}) == 0,
        "resume failed");
  for (const auto& f : outputs) {
    const std::string a = slurp(dir / "a" / f);
    check(!a.empty(), f + " missing");
    check(a == slurp(dir / "b" / f), f + " differs between runs");
    check(a == slurp(dir / "c" / f), f + " differs after resume");
  }

  // The same run in process must serialize to the CLI's bytes, and the
  // checkpoint must reproduce every forward output of the live model.
  const RunConfig rc = parse_run_config(run_text);
  TaskStream stream = build_stream(load_manifest(manifest));
  MsdemModel live(stream.backbones(), rc.model);
  TrainState state;
  train_stream(live, stream, rc.train, state);
  check(serialize_checkpoint(live, rc.train, state) == slurp(dir / "a" / "task_4.msck"),
        "in-process checkpoint differs from the CLI file");
  const LoadedCheckpoint loaded = load_checkpoint(dir / "a" / "task_4.msck");
  std::size_t tensors = 0;
  for (std::size_t t = 1; t <= 4; ++t) {
    Graph g1(false), g2(false);
    const Tensor& x = stream.test_set(t).features;
    const ForwardResult p = std::as_const(live).forward(g1, x, t);
    const ForwardResult q = std::as_const(*loaded.model).forward(g2, x, t);
    std::vector<std::pair<Tensor, Tensor>> pairs{{p.router.value(), q.router.value()},
                                                 {p.tokens.value(), q.tokens.value()},
                                                 {p.graph_out.value(), q.graph_out.value()},
                                                 {p.logits.value(), q.logits.value()}};
    for (std::size_t j = 0; j < t; ++j) {
      pairs.emplace_back(p.attention[j].value(), q.attention[j].value());
      pairs.emplace_back(p.reps[j].value(), q.reps[j].value());
    }
    for (const auto& [u, v] : pairs) {
      check(bit_equal(u, v), "forward output differs after reload at task " + std::to_string(t));
      ++tensors;
    }
  }
  if (ok)
    detail = std::to_string(outputs.size()) + " output files byte-identical across two runs and a resume, " +
             std::to_string(tensors) + " forward tensors bit-exact after reload";
  return {ok, detail};
}

// ---------------------------------------------------------------- numerics

Outcome numerics_oracles() {
  std::mt19937_64 rng(9001);
  const int cases = 200;
  double mm = 0.0, sm = 0.0, at = 0.0;
  for (int trial = 0; trial < cases; ++trial) {
    const auto m = random_extent(rng, 1, 12), k = random_extent(rng, 1, 12), n = random_extent(rng, 1, 12);
    const Tensor a = random_tensor({m, k}, rng), b = random_tensor({k, n}, rng);
    mm = std::max(mm, max_abs_diff(matmul(a, b), msdem::testing::naive_matmul(a, b)));

    const Tensor x = random_tensor({m, n}, rng, -30.0, 30.0);
    const Tensor y = softmax(x, 1);
    for (std::size_t r = 0; r < m; ++r) {
      const auto row = x.data().subspan(r * n, n);
      const auto ref = msdem::testing::naive_softmax(std::vector<double>(row.begin(), row.end()));
      for (std::size_t c = 0; c < n; ++c) sm = std::max(sm, std::abs(y.at(r, c) - ref[c]));
    }

    const std::size_t heads = random_extent(rng, 1, 4), w = heads * random_extent(rng, 1, 4);
    const std::size_t tokens = random_extent(rng, 1, 5), batch = random_extent(rng, 1, 3);
    const std::vector<std::uint32_t> dims(tokens, static_cast<std::uint32_t>(w));
    AttentionBlock block(1, dims, w, heads, static_cast<std::uint64_t>(trial));
    const Tensor input = random_tensor({batch, tokens * w}, rng);
    Graph g(false);
    const Tensor out = block.apply(std::as_const(block).bind(g), g.constant(input)).value();
    const double scale = 1.0 / std::sqrt(static_cast<double>(w / heads));
    for (std::size_t s = 0; s < batch; ++s) {
      const Tensor tok = tokenize(input.data().subspan(s * tokens * w, tokens * w), dims);
      const Tensor ref =
          msdem::testing::naive_self_attention(tok, block.wq().value, block.wk().value, block.wv().value, heads, scale);
      for (std::size_t i = 0; i < tokens; ++i)
        for (std::size_t c = 0; c < w; ++c) at = std::max(at, std::abs(out.at(s * tokens + i, c) - ref.at(i, c)));
    }
  }
  const bool ok = mm < 1e-10 && sm < 1e-10 && at < 1e-10;
  return {ok, std::to_string(cases) + " cases each; max error matmul " + fmt("%.2g", mm) + ", softmax " +
                  fmt("%.2g", sm) + ", attention " + fmt("%.2g", at)};
}

}  // namespace

int main() {
  int failures = 0;
  auto report = [&](const char* name, const std::function<Outcome()>& fn) {
    Outcome o;
    try {
      o = fn();
    } catch (const std::exception& e) {
      o = {false, std::string("exception: ") + e.what()};
    }
    failures += !o.pass;
    std::printf("%s %s: %s\n", o.pass ? "PASS" : "FAIL", name, o.detail.c_str());
    std::fflush(stdout);
  };

  report("gradient correctness", gradient_correctness);
  StreamRun run;
  std::string stream_error;
  try {
    run = run_default_stream();
  } catch (const std::exception& e) {
    stream_error = e.what();
  }
  report("zero forgetting", [&] {
    if (!stream_error.empty()) throw std::runtime_error(stream_error);
    return zero_forgetting(run);
  });
  report("learning capability", [&] {
    if (!stream_error.empty()) throw std::runtime_error(stream_error);
    return learning(run);
  });
  report("gumbel-softmax statistics", gumbel_statistics);
  report("router asymmetry", router_asymmetry);
  report("determinism and persistence", determinism_and_persistence);
  report("numerics oracles", numerics_oracles);
  std::printf("%d of 7 criteria failed\n", failures);
  return failures == 0 ? 0 : 1;
}
