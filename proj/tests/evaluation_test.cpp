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

#include <gtest/gtest.h>

#include <Eigen/Dense>
#include <cmath>
#include <map>

#include "msdem/error.hpp"
#include "msdem/evaluation.hpp"
#include "msdem/trainer.hpp"
#include "naive_baseline.hpp"
#include "test_util.hpp"

using namespace msdem;

namespace {

SynthStreamConfig small_stream(std::uint32_t domains = 2) {
  SynthStreamConfig c;
  c.seed = 8;
  c.backbones = {{"a", 16}, {"b", 16}};
  c.n_domains = domains;
  c.tasks_per_domain = 1;
  c.classes_per_task = 5;
  c.samples_per_class = 40;
  return c;
}

ModelConfig small_model() {
  ModelConfig c;
  c.d_e = 16;
  c.deam_heads = 2;
  c.graph_heads = 2;
  c.seed = 4;
  return c;
}

TrainConfig small_train() {
  TrainConfig c;
  c.batch_size = 16;
  c.seed = 2;
  return c;
}

struct Trained {
  TaskStream stream;
  std::unique_ptr<MsdemModel> model;
  TrainState state;
};

Trained train_small(const SynthStreamConfig& sc, std::size_t epochs = 1) {
  Trained t;
  t.stream = build_stream(synth_stream_manifest(sc));
  t.model = std::make_unique<MsdemModel>(t.stream.backbones(), small_model());
  TrainConfig tc = small_train();
  tc.epochs_per_task = epochs;
  train_stream(*t.model, t.stream, tc, t.state);
  return t;
}

}  // namespace

// ---------------------------------------------------------------- evaluate_task

TEST(EvaluateTask, NoiseFreeTaskIsPerfect) {
  SynthStreamConfig sc = small_stream(1);
  sc.noise = 0.0;
  Trained t = train_small(sc, 10);
  EXPECT_EQ(evaluate_task(*t.model, 1, t.stream.test_set(1)), 1.0);
}

TEST(EvaluateTask, ZeroedClassifierPredictsTheFirstClass) {
  Trained t = train_small(small_stream(2));
  Expert& e = t.model->expert(2);
  e.cls_w().value.fill(0.0);
  e.cls_b().value.fill(0.0);
  const LabeledSet& test = t.stream.test_set(2);
  std::size_t first = 0;
  for (auto l : test.labels) first += l == t.stream.task(2).class_ids[0];
  EXPECT_EQ(evaluate_task(*t.model, 2, test), static_cast<double>(first) / static_cast<double>(test.size()));
}

TEST(EvaluateTask, MatchesConfusionMatrixTally) {
  Trained t = train_small(small_stream(2));
  for (std::size_t task = 1; task <= 2; ++task) {
    const LabeledSet& test = t.stream.test_set(task);
    const Tensor logits = t.model->logits(test.features, task);
    const auto& classes = t.stream.task(task).class_ids;
    std::map<std::pair<std::uint32_t, std::uint32_t>, std::size_t> confusion;
    for (std::size_t r = 0; r < test.size(); ++r) {
      std::size_t best = 0;
      for (std::size_t c = 1; c < logits.cols(); ++c)
        if (logits.at(r, c) > logits.at(r, best)) best = c;
      ++confusion[{test.labels[r], classes[best]}];
    }
    std::size_t diag = 0, total = 0;
    for (const auto& [key, n] : confusion) {
      total += n;
      if (key.first == key.second) diag += n;
    }
    EXPECT_EQ(evaluate_task(*t.model, task, test), static_cast<double>(diag) / static_cast<double>(total));
  }
}

TEST(EvaluateTask, IdempotentAndThreadIndependent) {
  SynthStreamConfig sc = small_stream(1);
  sc.samples_per_class = 700;  // several 256-record chunks
  Trained t = train_small(sc);
  const LabeledSet& test = t.stream.test_set(1);
  ASSERT_GT(test.size(), 2 * kEvalChunk);
  const auto one = predict_all(*t.model, 1, test, 1);
  EXPECT_EQ(predict_all(*t.model, 1, test, 3), one);
  EXPECT_EQ(predict_all(*t.model, 1, test, 64), one);
  const double a = evaluate_task(*t.model, 1, test, 1);
  EXPECT_EQ(evaluate_task(*t.model, 1, test, 1), a);
  EXPECT_EQ(evaluate_task(*t.model, 1, test, 4), a);
}

TEST(EvaluateTask, EmptyTestSetIsAnError) {
  Trained t = train_small(small_stream(1));
  LabeledSet empty;
  empty.features = Tensor({1, 32});
  EXPECT_THROW(evaluate_task(*t.model, 1, empty), ValidationError);
}

// ---------------------------------------------------------------- report

TEST(Metrics, AverageAndLastFollowTheMatrix) {
  MetricsReport r;
  r.accuracy = {{0.9}, {0.8, 0.7}, {0.6, 0.5, 0.4}};
  finalize_metrics(r);
  EXPECT_EQ(r.average, (0.6 + 0.5 + 0.4) / 3.0);
  EXPECT_EQ(r.last, 0.4);
  EXPECT_EQ(r.average_all, (0.9 + 0.8 + 0.7 + 0.6 + 0.5 + 0.4) / 6.0);
  const auto curves = forgetting_curve(r);
  EXPECT_EQ(curves, (std::vector<std::vector<double>>{{0.9, 0.8, 0.6}, {0.7, 0.5}, {0.4}}));
}

TEST(Metrics, SingleTaskCurveIsOnePoint) {
  MetricsReport r;
  r.accuracy = {{0.75}};
  finalize_metrics(r);
  EXPECT_EQ(forgetting_curve(r), (std::vector<std::vector<double>>{{0.75}}));
  EXPECT_EQ(r.average, 0.75);
  EXPECT_EQ(r.last, 0.75);
}

TEST(Metrics, TrainedStreamReportIsConsistentAndFlat) {
  Trained t = train_small(small_stream(3));
  const MetricsReport& r = t.state.report;
  ASSERT_EQ(r.tasks(), 3u);
  MetricsReport copy = r;
  finalize_metrics(copy);
  EXPECT_EQ(copy.average, r.average);
  EXPECT_EQ(copy.last, r.last);
  for (const auto& row : r.accuracy)
    for (double a : row) {
      EXPECT_GE(a, 0.0);
      EXPECT_LE(a, 1.0);
    }
  for (const auto& curve : forgetting_curve(r))
    for (double a : curve) EXPECT_EQ(a, curve.front());
}

TEST(Metrics, TablesAndJson) {
  MetricsReport r;
  r.accuracy = {{1.0}, {0.5, 0.25}};
  r.completed_steps = {3, 6};
  r.router_dependency = {{1.0}, {0.25, 0.75}};
  r.router_dependency_normalized = normalize_dependency(r.router_dependency);
  finalize_metrics(r);
  EXPECT_EQ(accuracy_csv(r), "after_task,task_1,task_2\n1,1,\n2,0.5,0.25\n");
  EXPECT_EQ(forgetting_csv(r), "task,offset_1,offset_2\n1,1,0.5\n2,0.25,\n");
  EXPECT_EQ(dependency_csv(r.router_dependency_normalized), "task,expert_1,expert_2\n1,1,\n2,0.3333333333333333,1\n");
  const std::string json = metrics_to_json(r);
  EXPECT_NE(json.find("\"average\": 0.375"), std::string::npos);
  EXPECT_NE(json.find("\"last\": 0.25"), std::string::npos);
}

// ---------------------------------------------------------------- baseline

TEST(Forgetting, SharedExpertForgetsOnConflictingLabels) {
  const std::vector<std::uint32_t> dims{16, 16};
  SynthSpec a;
  a.seed = 31;
  a.n_classes = 5;
  a.samples_per_class = 50;
  const SynthDomain da = synth_domain(a, dims);
  SynthSpec b = a;
  b.seed = 32;
  b.related_to = "A";
  b.perturbation = 0.1;
  const SynthDomain db = synth_domain(b, dims, &da.means);
  const std::vector<std::uint32_t> same{0, 1, 2, 3, 4}, shifted{1, 2, 3, 4, 0};
  const LabeledSet train_a = msdem::testing::fuse_split(da.train, same);
  const LabeledSet test_a = msdem::testing::fuse_split(da.test, same);
  const LabeledSet train_b = msdem::testing::fuse_split(db.train, shifted);

  msdem::testing::NaiveSharedExpert naive(32, 16, 5, 7);
  naive.train(train_a, 3, 16, 1);
  const double after_first = naive.accuracy(test_a);
  naive.train(train_b, 3, 16, 2);
  const double after_second = naive.accuracy(test_a);
  EXPECT_GE(after_first, 0.9);
  EXPECT_LT(after_second, after_first);
  EXPECT_LT(after_second, 0.5);
}

// ---------------------------------------------------------------- router dependency

TEST(RouterDependency, SingleTaskIsOne) {
  MsdemModel model({{"a", 16}}, small_model());
  TaskSpec t;
  t.task_id = 1;
  t.class_ids = {0, 1};
  model.begin_task(t);
  EXPECT_EQ(router_dependency(model), (std::vector<std::vector<double>>{{1.0}}));
}

TEST(RouterDependency, RowsSumToOneAndNormalizeToSelf) {
  Trained t = train_small(small_stream(3));
  const auto raw = router_dependency(*t.model);
  const auto norm = normalize_dependency(raw);
  ASSERT_EQ(raw.size(), 3u);
  for (std::size_t i = 0; i < raw.size(); ++i) {
    ASSERT_EQ(raw[i].size(), i + 1);
    double s = 0.0;
    for (double v : raw[i]) s += v;
    EXPECT_NEAR(s, 1.0, 1e-6);
    EXPECT_EQ(norm[i][i], 1.0);
    for (std::size_t j = 0; j <= i; ++j) EXPECT_EQ(norm[i][j], raw[i][j] / raw[i][i]);
  }
  EXPECT_EQ(raw, t.state.report.router_dependency);
}

// ---------------------------------------------------------------- PCA

TEST(Pca, PointsOnALineHaveOneComponent) {
  std::vector<std::vector<double>> pts;
  for (int i = 0; i < 20; ++i) {
    const double s = 0.3 * i - 2.0;
    pts.push_back({1.0 + 2.0 * s, -1.0 + s, 0.5 - 0.5 * s});
  }
  const PcaResult r = pca_project(pts, 2);
  EXPECT_GT(r.variances[0] / r.total_variance, 0.999);
}

TEST(Pca, PreservesDistancesInsideTheSubspace) {
  std::mt19937_64 rng(3);
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  // Orthonormal pair in 4-D.
  const std::vector<double> e1{0.5, 0.5, 0.5, 0.5}, e2{0.5, -0.5, 0.5, -0.5};
  std::vector<std::vector<double>> pts;
  for (int i = 0; i < 30; ++i) {
    const double a = 3.0 * u(rng), b = u(rng);
    std::vector<double> p(4);
    for (int k = 0; k < 4; ++k) p[k] = 7.0 + a * e1[k] + b * e2[k];
    pts.push_back(p);
  }
  const PcaResult r = pca_project(pts, 2);
  for (std::size_t i = 0; i < pts.size(); ++i) {
    for (std::size_t j = 0; j < pts.size(); ++j) {
      double d_orig = 0.0, d_proj = 0.0;
      for (int k = 0; k < 4; ++k) d_orig += (pts[i][k] - pts[j][k]) * (pts[i][k] - pts[j][k]);
      for (int k = 0; k < 2; ++k)
        d_proj += (r.projected[i][k] - r.projected[j][k]) * (r.projected[i][k] - r.projected[j][k]);
      EXPECT_NEAR(std::sqrt(d_orig), std::sqrt(d_proj), 1e-6);
    }
  }
  // Output is centred.
  for (int k = 0; k < 2; ++k) {
    double s = 0.0;
    for (const auto& p : r.projected) s += p[k];
    EXPECT_NEAR(s, 0.0, 1e-9);
  }
}

TEST(Pca, AgreesWithDirectEigensolver) {
  std::mt19937_64 rng(11);
  std::normal_distribution<double> n01(0.0, 1.0);
  const std::vector<double> scales{5.0, 3.0, 2.0, 1.0, 0.5};
  for (int trial = 0; trial < 10; ++trial) {
    // Random rotation of axis-aligned data with distinct spreads.
    Eigen::MatrixXd rot = Eigen::HouseholderQR<Eigen::MatrixXd>(Eigen::MatrixXd::NullaryExpr(5, 5, [&] {
                            return n01(rng);
                          })).householderQ();
    std::vector<std::vector<double>> pts;
    Eigen::MatrixXd data(200, 5);
    for (int i = 0; i < 200; ++i) {
      Eigen::VectorXd z(5);
      for (int k = 0; k < 5; ++k) z[k] = scales[k] * n01(rng);
      const Eigen::VectorXd x = rot * z;
      data.row(i) = x.transpose();
      pts.emplace_back(x.data(), x.data() + 5);
    }
    const Eigen::MatrixXd centered = data.rowwise() - data.colwise().mean();
    const Eigen::MatrixXd cov = centered.transpose() * centered / 199.0;
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(cov);
    const PcaResult r = pca_project(pts, 3);
    for (int c = 0; c < 3; ++c) {
      const Eigen::VectorXd ref = es.eigenvectors().col(4 - c);
      const double sign = ref.dot(Eigen::Map<const Eigen::VectorXd>(r.components[c].data(), 5)) < 0 ? -1.0 : 1.0;
      for (int k = 0; k < 5; ++k) EXPECT_NEAR(sign * r.components[c][k], ref[k], 1e-6) << "trial " << trial;
      EXPECT_NEAR(r.variances[c], es.eigenvalues()[4 - c], 1e-6 * es.eigenvalues()[4]);
    }
  }
}

TEST(Pca, RejectsBadArguments) {
  const std::vector<std::vector<double>> two{{1, 2}, {3, 4}};
  EXPECT_THROW(pca_project(two, 3), ValidationError);
  EXPECT_THROW(pca_project(two, 0), ValidationError);
  EXPECT_THROW(pca_project({{1, 2}}, 1), ValidationError);
  EXPECT_THROW(pca_project({{1, 2}, {1, 2, 3}}, 1), DimensionError);
}
