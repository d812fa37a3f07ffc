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

#include "msdem/evaluation.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdlib>
#include <thread>

#include "json.hpp"
#include "msdem/error.hpp"
#include "msdem/rng.hpp"

namespace msdem {

std::size_t eval_threads_from_env() {
  const char* v = std::getenv("MSDEM_THREADS");
  if (v == nullptr || *v == '\0') return 1;
  char* end = nullptr;
  const long n = std::strtol(v, &end, 10);
  if (*end != '\0' || n < 1) return 1;
  return static_cast<std::size_t>(n);
}

std::vector<std::uint32_t> predict_all(const MsdemModel& model, std::size_t task_id, const LabeledSet& data,
                                       std::size_t threads) {
  const std::size_t n = data.size();
  std::vector<std::uint32_t> out(n);
  if (n == 0) return out;
  const std::size_t d = data.features.cols();
  if (data.features.rank() != 2 || data.features.rows() != n)
    throw DimensionError("features " + data.features.shape_string() + " do not match " + std::to_string(n) +
                         " labels");
  const std::size_t chunks = (n + kEvalChunk - 1) / kEvalChunk;

  auto run_chunk = [&](std::size_t c) {
    const std::size_t begin = c * kEvalChunk;
    const std::size_t end = std::min(n, begin + kEvalChunk);
    const auto src = data.features.data().subspan(begin * d, (end - begin) * d);
    Tensor x({end - begin, d}, std::vector<double>(src.begin(), src.end()));
    const auto pred = model.predict(x, task_id);
    std::copy(pred.begin(), pred.end(), out.begin() + static_cast<std::ptrdiff_t>(begin));
  };

  threads = std::max<std::size_t>(1, std::min(threads, chunks));
  if (threads == 1) {
    for (std::size_t c = 0; c < chunks; ++c) run_chunk(c);
    return out;
  }
  std::vector<std::exception_ptr> errors(threads);
  std::vector<std::thread> pool;
  for (std::size_t w = 0; w < threads; ++w) {
    pool.emplace_back([&, w] {
      try {
        for (std::size_t c = w; c < chunks; c += threads) run_chunk(c);
      } catch (...) {
        errors[w] = std::current_exception();
      }
    });
  }
  for (auto& th : pool) th.join();
  for (auto& e : errors)
    if (e) std::rethrow_exception(e);
  return out;
}

double evaluate_task(const MsdemModel& model, std::size_t task_id, const LabeledSet& test, std::size_t threads) {
  if (test.size() == 0) throw ValidationError("task " + std::to_string(task_id) + " has an empty test set");
  const auto pred = predict_all(model, task_id, test, threads);
  std::size_t correct = 0;
  for (std::size_t i = 0; i < pred.size(); ++i) correct += pred[i] == test.labels[i] ? 1 : 0;
  return static_cast<double>(correct) / static_cast<double>(pred.size());
}

void finalize_metrics(MetricsReport& report) {
  report.average = report.last = report.average_all = 0.0;
  if (report.accuracy.empty()) return;
  const auto& final_row = report.accuracy.back();
  double s = 0.0;
  for (double a : final_row) s += a;
  report.average = s / static_cast<double>(final_row.size());
  report.last = final_row.back();
  double all = 0.0;
  std::size_t count = 0;
  for (const auto& row : report.accuracy) {
    for (double a : row) {
      all += a;
      ++count;
    }
  }
  report.average_all = all / static_cast<double>(count);
}

std::vector<std::vector<double>> forgetting_curve(const MetricsReport& report) {
  const std::size_t n = report.tasks();
  std::vector<std::vector<double>> curves(n);
  for (std::size_t j = 0; j < n; ++j) {
    for (std::size_t i = j; i < n; ++i) {
      if (report.accuracy[i].size() <= j)
        throw ValidationError("accuracy row " + std::to_string(i + 1) + " is missing task " + std::to_string(j + 1));
      curves[j].push_back(report.accuracy[i][j]);
    }
  }
  return curves;
}

std::vector<std::vector<double>> router_dependency(const MsdemModel& model) {
  std::vector<std::vector<double>> d;
  for (std::size_t i = 1; i <= model.current_task(); ++i) d.push_back(model.router_weights(i));
  return d;
}

std::vector<std::vector<double>> normalize_dependency(const std::vector<std::vector<double>>& raw) {
  auto out = raw;
  for (std::size_t i = 0; i < out.size(); ++i) {
    if (out[i].size() <= i) throw ValidationError("dependency row " + std::to_string(i + 1) + " is too short");
    const double self = raw[i][i];
    for (double& v : out[i]) v /= self;
  }
  return out;
}

namespace {

double dot(const std::vector<double>& a, const std::vector<double>& b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}

void normalize(std::vector<double>& v) {
  const double n = std::sqrt(dot(v, v));
  for (double& x : v) x /= n;
}

}  // namespace

PcaResult pca_project(const std::vector<std::vector<double>>& vectors, std::size_t k) {
  const std::size_t n = vectors.size();
  if (n < 2) throw ValidationError("pca needs at least 2 vectors, got " + std::to_string(n));
  const std::size_t dim = vectors[0].size();
  for (const auto& v : vectors) {
    if (v.size() != dim) throw DimensionError("pca vectors have different lengths");
  }
  if (k == 0 || k > dim)
    throw ValidationError("pca k=" + std::to_string(k) + " must lie in [1, " + std::to_string(dim) + "]");

  std::vector<double> mean(dim, 0.0);
  for (const auto& v : vectors)
    for (std::size_t i = 0; i < dim; ++i) mean[i] += v[i];
  for (double& m : mean) m /= static_cast<double>(n);
  std::vector<std::vector<double>> centered(n, std::vector<double>(dim));
  for (std::size_t r = 0; r < n; ++r)
    for (std::size_t i = 0; i < dim; ++i) centered[r][i] = vectors[r][i] - mean[i];

  std::vector<std::vector<double>> cov(dim, std::vector<double>(dim, 0.0));
  for (const auto& v : centered)
    for (std::size_t i = 0; i < dim; ++i)
      for (std::size_t j = 0; j < dim; ++j) cov[i][j] += v[i] * v[j];
  PcaResult res;
  for (std::size_t i = 0; i < dim; ++i) {
    for (std::size_t j = 0; j < dim; ++j) cov[i][j] /= static_cast<double>(n - 1);
    res.total_variance += cov[i][i];
  }

  auto apply = [&](const std::vector<double>& v) {
    std::vector<double> out(dim, 0.0);
    for (std::size_t i = 0; i < dim; ++i) out[i] = dot(cov[i], v);
    return out;
  };
  auto orthogonalize = [&](std::vector<double>& v) {
    for (const auto& c : res.components) {
      const double p = dot(v, c);
      for (std::size_t i = 0; i < dim; ++i) v[i] -= p * c[i];
    }
  };

  for (std::size_t comp = 0; comp < k; ++comp) {
    Rng rng(derive_seed(0x9ca, {comp}));
    std::vector<double> v(dim);
    for (double& x : v) x = uniform_open(rng) - 0.5;
    orthogonalize(v);
    normalize(v);
    double lambda = 0.0;
    for (int it = 0; it < 1000; ++it) {
      std::vector<double> w = apply(v);
      orthogonalize(w);
      const double norm = std::sqrt(dot(w, w));
      if (norm < 1e-300) {
        lambda = 0.0;
        break;
      }
      for (double& x : w) x /= norm;
      double diff = 0.0;
      for (std::size_t i = 0; i < dim; ++i) diff = std::max(diff, std::abs(w[i] - v[i]));
      v = std::move(w);
      lambda = norm;
      if (diff < 1e-8) break;
    }
    const auto cv = apply(v);
    lambda = dot(v, cv);
    // Fix the sign so the largest-magnitude entry is positive.
    std::size_t big = 0;
    for (std::size_t i = 1; i < dim; ++i)
      if (std::abs(v[i]) > std::abs(v[big])) big = i;
    if (v[big] < 0)
      for (double& x : v) x = -x;
    for (std::size_t i = 0; i < dim; ++i)
      for (std::size_t j = 0; j < dim; ++j) cov[i][j] -= lambda * v[i] * v[j];
    res.components.push_back(std::move(v));
    res.variances.push_back(lambda);
  }

  res.projected.assign(n, std::vector<double>(k, 0.0));
  for (std::size_t r = 0; r < n; ++r)
    for (std::size_t c = 0; c < k; ++c) res.projected[r][c] = dot(centered[r], res.components[c]);
  return res;
}

namespace {

std::string num(double v) {
  char buf[64];
  const auto r = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, r.ptr);
}

std::string matrix_csv(const std::vector<std::vector<double>>& m, const std::string& row_key,
                       const std::string& col_prefix, std::size_t cols) {
  std::string out = row_key;
  for (std::size_t j = 0; j < cols; ++j) out += "," + col_prefix + std::to_string(j + 1);
  out += '\n';
  for (std::size_t i = 0; i < m.size(); ++i) {
    out += std::to_string(i + 1);
    for (std::size_t j = 0; j < cols; ++j) {
      out += ',';
      if (j < m[i].size()) out += num(m[i][j]);
    }
    out += '\n';
  }
  return out;
}

}  // namespace

std::string metrics_to_json(const MetricsReport& report) {
  nlohmann::ordered_json j;
  j["tasks"] = report.tasks();
  j["average"] = report.average;
  j["last"] = report.last;
  j["average_all"] = report.average_all;
  j["accuracy"] = report.accuracy;
  j["completed_steps"] = report.completed_steps;
  j["forgetting"] = forgetting_curve(report);
  j["router_dependency"] = report.router_dependency;
  j["router_dependency_normalized"] = report.router_dependency_normalized;
  return j.dump(2) + "\n";
}

std::string accuracy_csv(const MetricsReport& report) {
  return matrix_csv(report.accuracy, "after_task", "task_", report.tasks());
}

std::string forgetting_csv(const MetricsReport& report) {
  // One row per task j, column i holds A[j+i][j].
  return matrix_csv(forgetting_curve(report), "task", "offset_", report.tasks());
}

std::string dependency_csv(const std::vector<std::vector<double>>& d) {
  return matrix_csv(d, "task", "expert_", d.size());
}

}  // namespace msdem
