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
#include <string>
#include <vector>

#include "msdem/model.hpp"
#include "msdem/stream.hpp"

namespace msdem {

// Records per evaluation chunk. Fixed so that results do not depend on the
// number of worker threads.
inline constexpr std::size_t kEvalChunk = 256;

// Worker count from MSDEM_THREADS (default 1, minimum 1).
std::size_t eval_threads_from_env();

// Fraction of records whose prediction equals the label. Deterministic and
// independent of `threads`.
double evaluate_task(const MsdemModel& model, std::size_t task_id, const LabeledSet& test, std::size_t threads = 1);

// Predictions for every record, in order.
std::vector<std::uint32_t> predict_all(const MsdemModel& model, std::size_t task_id, const LabeledSet& data,
                                       std::size_t threads = 1);

struct MetricsReport {
  // accuracy[i][j]: task j+1 measured after training task i+1 (j <= i).
  std::vector<std::vector<double>> accuracy;
  // Logical timestamp of each row: optimizer steps completed when measured.
  std::vector<std::uint64_t> completed_steps;
  double average = 0.0;      // mean of the last row
  double last = 0.0;         // last entry of the last row
  double average_all = 0.0;  // mean over every measured entry
  std::vector<std::vector<double>> router_dependency;
  std::vector<std::vector<double>> router_dependency_normalized;

  std::size_t tasks() const noexcept { return accuracy.size(); }
};

// Recomputes average, last and average_all from `accuracy`.
void finalize_metrics(MetricsReport& report);

// Sequence A[j][j], A[j+1][j], ..., A[N][j] for every task j.
std::vector<std::vector<double>> forgetting_curve(const MetricsReport& report);

// D[i][j] = deterministic router weight of task i+1 on expert j+1.
std::vector<std::vector<double>> router_dependency(const MsdemModel& model);
// D[i][j] / D[i][i].
std::vector<std::vector<double>> normalize_dependency(const std::vector<std::vector<double>>& raw);

struct PcaResult {
  std::vector<std::vector<double>> components;  // k unit vectors of length dim
  std::vector<double> variances;                // eigenvalues of the covariance
  double total_variance = 0.0;
  std::vector<std::vector<double>> projected;   // n x k, centred
};

// Top-k principal directions by deflated power iteration
// (tolerance 1e-8, at most 1000 iterations per component).
PcaResult pca_project(const std::vector<std::vector<double>>& vectors, std::size_t k = 2);

// --- serialization ---

std::string metrics_to_json(const MetricsReport& report);
// Delimiter-separated tables; lower-triangular cells beyond j > i are empty.
std::string accuracy_csv(const MetricsReport& report);
std::string forgetting_csv(const MetricsReport& report);
std::string dependency_csv(const std::vector<std::vector<double>>& d);

}  // namespace msdem
