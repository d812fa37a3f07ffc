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

#include <fstream>
#include <iterator>

#include "msdem/error.hpp"
#include "msdem/feature_io.hpp"
#include "msdem/rng.hpp"
#include "msdem/stream.hpp"
#include "msdem/synth.hpp"
#include "test_util.hpp"

using namespace msdem;
using msdem::testing::scratch_dir;

namespace {

std::vector<unsigned char> read_bytes(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

void write_bytes(const std::filesystem::path& p, const std::vector<unsigned char>& bytes) {
  std::ofstream out(p, std::ios::binary | std::ios::trunc);
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
}

std::vector<FeatureRow> two_rows() {
  return {{0, {1, 2, 3, 4}}, {1, {5, 6, 7, 8}}};
}

}  // namespace

TEST(FeatureFile, TwoRecordRoundTrip) {
  const auto dir = scratch_dir("ff_roundtrip");
  const auto path = dir / "a.msfv";
  write_feature_file(path, 4, 2, two_rows());
  const FeatureFile f = load_feature_file(path);
  EXPECT_EQ(f.header.dim, 4u);
  EXPECT_EQ(f.header.count, 2u);
  EXPECT_EQ(f.header.cardinality, 2u);
  ASSERT_EQ(f.rows.size(), 2u);
  EXPECT_EQ(f.rows[0].label, 0u);
  EXPECT_EQ(f.rows[0].values, (std::vector<float>{1, 2, 3, 4}));
  EXPECT_EQ(f.rows[1].label, 1u);
  EXPECT_EQ(f.rows[1].values, (std::vector<float>{5, 6, 7, 8}));
  EXPECT_FALSE(std::filesystem::exists(dir / "a.msfv.tmp"));
}

TEST(FeatureFile, HeaderBytesAreLittleEndian) {
  const auto dir = scratch_dir("ff_bytes");
  write_feature_file(dir / "a.msfv", 4, 2, two_rows());
  const auto bytes = read_bytes(dir / "a.msfv");
  ASSERT_EQ(bytes.size(), 21u + 2 * 20);
  const std::vector<unsigned char> header = {'M', 'S', 'F', 'V', 1,  4, 0, 0, 0, 2, 0,
                                             0,   0,   0,   0,   0, 0, 2, 0, 0, 0};
  EXPECT_TRUE(std::equal(header.begin(), header.end(), bytes.begin()));
  // Second record: label 1 then 5.0f = 0x40a00000.
  const std::vector<unsigned char> rec = {1, 0, 0, 0, 0x00, 0x00, 0xa0, 0x40};
  EXPECT_TRUE(std::equal(rec.begin(), rec.end(), bytes.begin() + 41));
}

TEST(FeatureFile, TruncatedMidRecordReportsOffset) {
  const auto dir = scratch_dir("ff_trunc");
  const auto path = dir / "a.msfv";
  write_feature_file(path, 4, 2, two_rows());
  auto bytes = read_bytes(path);
  bytes.resize(21 + 20 + 7);
  write_bytes(path, bytes);
  try {
    load_feature_file(path);
    FAIL() << "expected ParseError";
  } catch (const ParseError& e) {
    EXPECT_EQ(e.offset(), 48u);
    EXPECT_NE(std::string(e.what()).find("truncated"), std::string::npos);
  }
}

TEST(FeatureFile, MalformedInputsAreRejected) {
  const auto dir = scratch_dir("ff_bad");
  const auto path = dir / "a.msfv";
  write_feature_file(path, 4, 2, two_rows());
  const auto good = read_bytes(path);

  auto bad_magic = good;
  bad_magic[0] = 'X';
  write_bytes(path, bad_magic);
  try {
    load_feature_file(path);
    FAIL();
  } catch (const ParseError& e) {
    EXPECT_EQ(e.offset(), 0u);
  }

  auto bad_label = good;
  bad_label[41] = 2;  // label of record 2 == cardinality
  write_bytes(path, bad_label);
  try {
    load_feature_file(path);
    FAIL();
  } catch (const ParseError& e) {
    EXPECT_EQ(e.offset(), 41u);
  }

  auto trailing = good;
  trailing.push_back(0);
  write_bytes(path, trailing);
  try {
    load_feature_file(path);
    FAIL();
  } catch (const ParseError& e) {
    EXPECT_EQ(e.offset(), 61u);
  }

  auto short_header = good;
  short_header.resize(10);
  write_bytes(path, short_header);
  EXPECT_THROW(load_feature_file(path), ParseError);

  auto bad_version = good;
  bad_version[4] = 2;
  write_bytes(path, bad_version);
  EXPECT_THROW(load_feature_file(path), ParseError);
}

TEST(FeatureFile, WriterRejectsBadRecords) {
  const auto dir = scratch_dir("ff_writer");
  FeatureWriter w(dir / "a.msfv", 3, 2);
  const std::vector<float> ok{1, 2, 3};
  const std::vector<float> wrong{1, 2};
  EXPECT_THROW(w.write(0, wrong), DimensionError);
  EXPECT_THROW(w.write(2, ok), ValidationError);
  w.write(1, ok);
  w.finish();
  EXPECT_EQ(read_feature_header(dir / "a.msfv").count, 1u);
}

TEST(FeatureFile, AbandonedWriterLeavesNoFile) {
  const auto dir = scratch_dir("ff_abandon");
  {
    FeatureWriter w(dir / "a.msfv", 2, 2);
    const std::vector<float> v{1, 2};
    w.write(0, v);
  }
  EXPECT_FALSE(std::filesystem::exists(dir / "a.msfv"));
  EXPECT_FALSE(std::filesystem::exists(dir / "a.msfv.tmp"));
}

TEST(FeatureFile, TenThousandRecordChecksumRoundTrip) {
  const auto dir = scratch_dir("ff_10k");
  const auto path = dir / "big.msfv";
  Rng rng(99);
  NormalSampler normal;
  {
    FeatureWriter w(path, 16, 37);
    std::vector<float> v(16);
    for (int i = 0; i < 10000; ++i) {
      for (auto& x : v) x = static_cast<float>(normal(rng));
      w.write(static_cast<std::uint32_t>(rng() % 37), v);
    }
    w.finish();
  }
  const auto original = read_bytes(path);
  // Stream with a small buffer so refills cross record boundaries often.
  FeatureReader reader(path, 7);
  std::vector<FeatureRow> rows;
  FeatureRow row;
  while (reader.next(row)) rows.push_back(row);
  EXPECT_EQ(rows.size(), 10000u);
  const auto again = serialize_feature_file(reader.header(), rows);
  EXPECT_EQ(fnv1a64(again), fnv1a64(original));
  EXPECT_EQ(again, original);
}

TEST(FeatureFile, MemoryBudgetRejectsLargeLoads) {
  const auto dir = scratch_dir("ff_budget");
  write_feature_file(dir / "a.msfv", 4, 2, two_rows());
  EXPECT_THROW(load_feature_file(dir / "a.msfv", 16), IoError);
  std::size_t n = 0;
  for_each_feature_record(dir / "a.msfv", [&](const FeatureRow&) { ++n; });
  EXPECT_EQ(n, 2u);
}

TEST(Fuse, Examples) {
  const std::vector<BackboneSpec> two{{"a", 2}, {"b", 1}};
  FeatureRecord r{{{1, 2}, {3}}, 0, 0, Split::Train};
  EXPECT_EQ(fuse_features(r, two), (std::vector<double>{1, 2, 3}));

  const std::vector<BackboneSpec> one{{"a", 3}};
  FeatureRecord s{{{4, 5, 6}}, 0, 0, Split::Test};
  EXPECT_EQ(fuse_features(s, one), (std::vector<double>{4, 5, 6}));

  const std::vector<BackboneSpec> vit{{"a", 768}, {"b", 768}};
  FeatureRecord big{{std::vector<float>(768, 1.0f), std::vector<float>(768, 2.0f)}, 0, 0, Split::Train};
  EXPECT_EQ(fuse_features(big, vit).size(), 1536u);

  FeatureRecord wrong{{{1, 2}, {3, 4}}, 0, 0, Split::Train};
  EXPECT_THROW(fuse_features(wrong, two), DimensionError);
  FeatureRecord missing{{{1, 2}}, 0, 0, Split::Train};
  EXPECT_THROW(fuse_features(missing, two), DimensionError);
}

TEST(Fuse, BlocksAreExactSlicesProperty) {
  std::mt19937_64 rng(5);
  for (int trial = 0; trial < 50; ++trial) {
    const std::size_t n = msdem::testing::random_extent(rng, 1, 4);
    std::vector<BackboneSpec> backbones;
    FeatureRecord r;
    for (std::size_t j = 0; j < n; ++j) {
      const auto d = static_cast<std::uint32_t>(msdem::testing::random_extent(rng, 1, 9));
      backbones.push_back({"b" + std::to_string(j), d});
      std::vector<float> v(d);
      for (auto& x : v) x = std::uniform_real_distribution<float>(-10, 10)(rng);
      r.per_backbone.push_back(v);
    }
    const auto z = fuse_features(r, backbones);
    ASSERT_EQ(z.size(), fused_dim(backbones));
    std::size_t off = 0;
    for (std::size_t j = 0; j < n; ++j) {
      for (std::size_t k = 0; k < backbones[j].dim; ++k) ASSERT_EQ(z[off + k], r.per_backbone[j][k]);
      off += backbones[j].dim;
    }
  }
}

TEST(Synth, RejectsBadParameters) {
  const std::vector<std::uint32_t> dims{4};
  SynthSpec s{1, 1, 10, 5.0, 0.5, "", 0.0};
  EXPECT_THROW(synth_domain(s, dims), ValidationError);
  s.n_classes = 3;
  s.separation = 0.0;
  EXPECT_THROW(synth_domain(s, dims), ValidationError);
  s.separation = 1.0;
  s.related_to = "other";
  EXPECT_THROW(synth_domain(s, dims), ValidationError);
}

TEST(Synth, SplitIsEightyTwenty) {
  EXPECT_EQ(synth_train_per_class(125), 100u);
  EXPECT_EQ(synth_train_per_class(10), 8u);
  EXPECT_EQ(synth_train_per_class(2), 1u);
  const std::vector<std::uint32_t> dims{3, 5};
  const SynthDomain d = synth_domain({7, 4, 10, 5.0, 0.5, "", 0.0}, dims);
  ASSERT_EQ(d.train.size(), 2u);
  EXPECT_EQ(d.train[0].size(), 32u);
  EXPECT_EQ(d.test[1].size(), 8u);
  EXPECT_EQ(d.train[1][0].values.size(), 5u);
}

TEST(Synth, SameSeedGivesIdenticalFiles) {
  const std::vector<std::uint32_t> dims{8, 4};
  const std::vector<std::string> names{"x", "y"};
  const SynthSpec spec{42, 5, 20, 5.0, 0.5, "", 0.0};
  const auto a = write_synth_domain(synth_domain(spec, dims), 5, scratch_dir("synth_a"), "d", names);
  const auto b = write_synth_domain(synth_domain(spec, dims), 5, scratch_dir("synth_b"), "d", names);
  for (std::size_t j = 0; j < 2; ++j) {
    EXPECT_EQ(read_bytes(a.train[j]), read_bytes(b.train[j]));
    EXPECT_EQ(read_bytes(a.test[j]), read_bytes(b.test[j]));
  }
  SynthSpec other = spec;
  other.seed = 43;
  const auto c = write_synth_domain(synth_domain(other, dims), 5, scratch_dir("synth_c"), "d", names);
  EXPECT_NE(read_bytes(a.train[0]), read_bytes(c.train[0]));
}

TEST(Synth, ZeroNoiseSamplesEqualMeans) {
  const std::vector<std::uint32_t> dims{6, 3};
  const SynthDomain d = synth_domain({3, 8, 10, 5.0, 0.0, "", 0.0}, dims);
  std::size_t correct = 0, total = 0;
  for (int split = 0; split < 2; ++split) {
    const auto& rows = split == 0 ? d.train : d.test;
    for (std::size_t i = 0; i < rows[0].size(); ++i) {
      // Nearest mean on the fused vector.
      std::size_t best = 0;
      double best_dist = 1e300;
      for (std::uint32_t c = 0; c < 8; ++c) {
        double dist = 0;
        for (std::size_t j = 0; j < dims.size(); ++j) {
          for (std::uint32_t k = 0; k < dims[j]; ++k) {
            EXPECT_EQ(rows[j][i].label, rows[0][i].label);
            const double diff = rows[j][i].values[k] - d.means[j].at(c, k);
            dist += diff * diff;
          }
        }
        if (dist < best_dist) best_dist = dist, best = c;
      }
      EXPECT_EQ(best_dist, 0.0);
      correct += best == rows[0][i].label;
      ++total;
    }
  }
  EXPECT_EQ(correct, total);
}

TEST(Synth, LinearClassifierOracleSeparates) {
  const std::vector<std::uint32_t> dims{64};
  const SynthDomain d = synth_domain({11, 20, 100, 5.0, 0.5, "", 0.0}, dims);
  std::vector<std::vector<double>> tx, vx;
  std::vector<std::size_t> ty, vy;
  for (const auto& r : d.train[0]) tx.emplace_back(r.values.begin(), r.values.end()), ty.push_back(r.label);
  for (const auto& r : d.test[0]) vx.emplace_back(r.values.begin(), r.values.end()), vy.push_back(r.label);
  EXPECT_GE(msdem::testing::logistic_regression_accuracy(tx, ty, vx, vy, 20), 0.98);
}

TEST(Synth, RelatedDomainStaysNearBase) {
  const std::vector<std::uint32_t> dims{16};
  const SynthSpec base{1, 4, 10, 5.0, 0.5, "", 0.0};
  const auto base_means = synth_means(base.seed, base.n_classes, dims, base.separation);
  const SynthDomain near = synth_domain({2, 4, 10, 5.0, 0.5, "base", 0.1}, dims, &base_means);
  const SynthDomain far = synth_domain({3, 4, 10, 5.0, 0.5, "", 0.0}, dims);
  EXPECT_LT(max_abs_diff(near.means[0], base_means[0]), 1.0);
  EXPECT_GT(max_abs_diff(far.means[0], base_means[0]), 1.0);
}

namespace {

const char* kTwoByTwo = R"({
  "version": 1, "seed": 3,
  "backbones": [{"name": "a", "dim": 4}, {"name": "b", "dim": 2}],
  "domains": [
    {"name": "first", "label_offset": 0,
     "synthetic": {"seed": 1, "n_classes": 4, "samples_per_class": 10, "separation": 5, "noise": 0.5}},
    {"name": "second", "label_offset": 4,
     "synthetic": {"seed": 2, "n_classes": 4, "samples_per_class": 10, "separation": 5, "noise": 0.5}}
  ],
  "tasks": [
    {"domain": "first", "classes": [0, 1]},
    {"domain": "first", "classes": [2, 3]},
    {"domain": "second", "classes": [4, 5]},
    {"domain": "second", "classes": [6, 7]}
  ]
})";

}  // namespace

TEST(Manifest, TwoDomainsTwoTasksEach) {
  const Manifest m = parse_manifest(kTwoByTwo, ".");
  const TaskStream s = build_stream(m);
  ASSERT_EQ(s.size(), 4u);
  for (std::size_t i = 0; i < 4; ++i) EXPECT_EQ(s.tasks()[i].task_id, i + 1);
  EXPECT_EQ(s.tasks()[0].domain_id, 0u);
  EXPECT_EQ(s.tasks()[2].domain_id, 1u);
  EXPECT_EQ(s.label_cardinality(), 8u);
  EXPECT_EQ(s.fused_dim(), 6u);
  EXPECT_EQ(s.task(3).train_count, 16u);
  EXPECT_EQ(s.task(3).test_count, 4u);
}

TEST(Manifest, OverlappingClassesRejected) {
  std::string text = kTwoByTwo;
  text.replace(text.find("[2, 3]"), 6, "[1, 3]");
  try {
    parse_manifest(text, ".");
    FAIL();
  } catch (const ValidationError& e) {
    EXPECT_NE(std::string(e.what()).find("disjoint"), std::string::npos);
  }
}

TEST(Manifest, StructuralErrors) {
  EXPECT_THROW(parse_manifest("{\"version\": 1, ", "."), ParseError);
  EXPECT_THROW(parse_manifest("[]", "."), ValidationError);
  std::string unknown = kTwoByTwo;
  unknown.replace(unknown.find("\"domain\": \"second\""), 18, "\"domain\": \"third\"");
  EXPECT_THROW(parse_manifest(unknown, "."), ValidationError);
  std::string out_of_range = kTwoByTwo;
  out_of_range.replace(out_of_range.find("[6, 7]"), 6, "[6, 9]");
  EXPECT_THROW(parse_manifest(out_of_range, "."), ValidationError);
  std::string bad_dim = kTwoByTwo;
  bad_dim.replace(bad_dim.find("\"dim\": 2"), 8, "\"dim\": 0");
  EXPECT_THROW(parse_manifest(bad_dim, "."), ValidationError);
}

TEST(Manifest, MissingFileRejected) {
  const auto dir = scratch_dir("manifest_missing");
  SynthStreamConfig c;
  c.n_domains = 1;
  c.tasks_per_domain = 1;
  c.classes_per_task = 2;
  c.samples_per_class = 5;
  generate_synth_stream(c, dir);
  std::filesystem::remove(dir / "d1.vit_b.test.msfv");
  EXPECT_THROW(build_stream(load_manifest(dir / "manifest.json")), IoError);
}

TEST(Manifest, TextRoundTrip) {
  const Manifest m = parse_manifest(kTwoByTwo, ".");
  const Manifest again = parse_manifest(manifest_to_text(m), ".");
  EXPECT_EQ(manifest_to_text(again), manifest_to_text(m));
}

TEST(Stream, FourDomainSyntheticCounts) {
  SynthStreamConfig c;
  c.backbones = {{"a", 8}, {"b", 4}};
  c.classes_per_task = 5;
  c.samples_per_class = 10;
  const TaskStream s = build_stream(synth_stream_manifest(c));
  ASSERT_EQ(s.size(), 12u);
  const std::size_t train_per_class = synth_train_per_class(c.samples_per_class);
  for (std::size_t t = 1; t <= 12; ++t) {
    EXPECT_EQ(s.task(t).domain_id, (t - 1) / 3);
    EXPECT_EQ(s.task(t).train_count, c.classes_per_task * train_per_class);
    EXPECT_EQ(s.task(t).test_count, c.classes_per_task * (c.samples_per_class - train_per_class));
  }
  EXPECT_EQ(s.label_cardinality(), 60u);
}

TEST(Stream, FilesMatchInMemoryGeneration) {
  SynthStreamConfig c;
  c.backbones = {{"a", 8}, {"b", 4}};
  c.n_domains = 2;
  c.tasks_per_domain = 2;
  c.classes_per_task = 3;
  c.samples_per_class = 10;
  const auto dir = scratch_dir("stream_files");
  const Manifest on_disk = generate_synth_stream(c, dir);
  EXPECT_EQ(std::distance(std::filesystem::directory_iterator(dir), std::filesystem::directory_iterator()),
            2 * 2 * 2 + 1);
  TaskStream a = build_stream(load_manifest(dir / "manifest.json"));
  TaskStream b = build_stream(synth_stream_manifest(c));
  ASSERT_EQ(a.size(), b.size());
  for (std::size_t t = 1; t <= a.size(); ++t) {
    a.activate(t);
    b.activate(t);
    EXPECT_TRUE(bit_equal(a.train_set(t).features, b.train_set(t).features));
    EXPECT_EQ(a.train_set(t).labels, b.train_set(t).labels);
    EXPECT_TRUE(bit_equal(a.test_set(t).features, b.test_set(t).features));
  }
}

TEST(Stream, LabelsBelongToTaskAndRebuildIsDeterministic) {
  const Manifest m = parse_manifest(kTwoByTwo, ".");
  TaskStream a = build_stream(m);
  TaskStream b = build_stream(m);
  for (std::size_t t = 1; t <= a.size(); ++t) {
    a.activate(t);
    b.activate(t);
    const auto& spec = a.task(t);
    for (auto l : a.train_set(t).labels) EXPECT_NO_THROW(spec.local_index(l));
    for (auto l : a.test_set(t).labels) EXPECT_NO_THROW(spec.local_index(l));
    EXPECT_TRUE(bit_equal(a.train_set(t).features, b.train_set(t).features));
  }
}

TEST(Stream, TrainingRecordsGuardedByActiveTask) {
  TaskStream s = build_stream(parse_manifest(kTwoByTwo, "."));
  EXPECT_THROW(s.train_set(1), StateError);
  s.activate(2);
  EXPECT_NO_THROW(s.train_set(2));
  EXPECT_THROW(s.train_set(1), StateError);
  EXPECT_THROW(s.train_set(3), StateError);
  EXPECT_NO_THROW(s.test_set(1));
  EXPECT_THROW(s.activate(5), ValidationError);
}

TEST(Stream, MismatchedBackboneFilesRejected) {
  const auto dir = scratch_dir("stream_mismatch");
  SynthStreamConfig c;
  c.backbones = {{"a", 3}, {"b", 2}};
  c.n_domains = 1;
  c.tasks_per_domain = 1;
  c.classes_per_task = 2;
  c.samples_per_class = 5;
  generate_synth_stream(c, dir);
  // Backbone b's train file loses its last record.
  auto f = load_feature_file(dir / "d1.b.train.msfv");
  f.rows.pop_back();
  write_feature_file(dir / "d1.b.train.msfv", 2, 2, f.rows);
  EXPECT_THROW(build_stream(load_manifest(dir / "manifest.json")), ValidationError);
  // Wrong declared dimension.
  write_feature_file(dir / "d1.b.train.msfv", 3, 2, load_feature_file(dir / "d1.a.train.msfv").rows);
  EXPECT_THROW(build_stream(load_manifest(dir / "manifest.json")), DimensionError);
}
