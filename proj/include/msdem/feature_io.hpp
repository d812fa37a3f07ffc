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

// MSFV feature files, little-endian:
//   0..3   "MSFV"
//   4      version (1)
//   5..8   u32 feature dimension
//   9..16  u64 record count
//   17..20 u32 label cardinality
//   then per record: u32 label, dim x float32.

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <functional>
#include <span>
#include <vector>

namespace msdem {

inline constexpr std::uint8_t kFeatureFileVersion = 1;
inline constexpr std::size_t kFeatureHeaderBytes = 21;

struct FeatureHeader {
  std::uint8_t version = kFeatureFileVersion;
  std::uint32_t dim = 0;
  std::uint64_t count = 0;
  std::uint32_t cardinality = 0;

  std::uint64_t record_bytes() const { return 4 + 4ULL * dim; }
};

struct FeatureRow {
  std::uint32_t label = 0;
  std::vector<float> values;
};

// Writes to "<path>.tmp" and renames over `path` on finish(), so readers
// never observe a partial file. The record count is patched at finish().
class FeatureWriter {
 public:
  FeatureWriter(std::filesystem::path path, std::uint32_t dim, std::uint32_t cardinality);
  ~FeatureWriter();
  FeatureWriter(const FeatureWriter&) = delete;
  FeatureWriter& operator=(const FeatureWriter&) = delete;

  void write(std::uint32_t label, std::span<const float> values);
  void finish();
  std::uint64_t count() const noexcept { return count_; }

 private:
  std::filesystem::path path_;
  std::filesystem::path tmp_;
  std::ofstream out_;
  std::uint32_t dim_;
  std::uint32_t cardinality_;
  std::uint64_t count_ = 0;
  bool finished_ = false;
};

// Sequential reader holding at most `buffer_records` records in memory.
class FeatureReader {
 public:
  explicit FeatureReader(const std::filesystem::path& path, std::size_t buffer_records = 4096);

  const FeatureHeader& header() const noexcept { return header_; }
  // Next record, or false after the last one. Validates labels, truncation
  // and trailing bytes; failures throw ParseError with the byte offset.
  bool next(FeatureRow& row);
  std::uint64_t records_read() const noexcept { return read_; }

 private:
  void refill();

  std::ifstream in_;
  FeatureHeader header_;
  std::uint64_t file_size_ = 0;
  std::uint64_t offset_ = 0;
  std::uint64_t read_ = 0;
  std::size_t buffer_records_;
  std::vector<unsigned char> buffer_;
  std::size_t buffer_pos_ = 0;
};

struct FeatureFile {
  FeatureHeader header;
  std::vector<FeatureRow> rows;
};

FeatureHeader read_feature_header(const std::filesystem::path& path);

// Loads every record. Files larger than `memory_budget_bytes` are rejected;
// use for_each_feature_record to stream them instead.
FeatureFile load_feature_file(const std::filesystem::path& path,
                              std::uint64_t memory_budget_bytes = 1ULL << 30);

// Streams records through `fn` without materialising the file.
FeatureHeader for_each_feature_record(const std::filesystem::path& path,
                                      const std::function<void(const FeatureRow&)>& fn);

void write_feature_file(const std::filesystem::path& path, std::uint32_t dim,
                        std::uint32_t cardinality, std::span<const FeatureRow> rows);

// Serialized bytes of a file's contents (header + records).
std::vector<unsigned char> serialize_feature_file(const FeatureHeader& header,
                                                  std::span<const FeatureRow> rows);

}  // namespace msdem
