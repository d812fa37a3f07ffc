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

#include "msdem/feature_io.hpp"

#include <bit>
#include <cstring>
#include <system_error>

#include "msdem/error.hpp"

namespace msdem {

namespace {

constexpr char kMagic[4] = {'M', 'S', 'F', 'V'};

template <typename T>
void put_le(std::vector<unsigned char>& out, T v) {
  using U = std::make_unsigned_t<T>;
  U u = static_cast<U>(v);
  for (std::size_t i = 0; i < sizeof(T); ++i) out.push_back(static_cast<unsigned char>(u >> (8 * i)));
}

template <typename T>
T get_le(const unsigned char* p) {
  T v = 0;
  for (std::size_t i = 0; i < sizeof(T); ++i) v |= static_cast<T>(p[i]) << (8 * i);
  return v;
}

void put_float(std::vector<unsigned char>& out, float f) { put_le(out, std::bit_cast<std::uint32_t>(f)); }

float get_float(const unsigned char* p) { return std::bit_cast<float>(get_le<std::uint32_t>(p)); }

std::vector<unsigned char> encode_header(const FeatureHeader& h) {
  std::vector<unsigned char> out(kMagic, kMagic + 4);
  out.push_back(h.version);
  put_le(out, h.dim);
  put_le(out, h.count);
  put_le(out, h.cardinality);
  return out;
}

void encode_record(std::vector<unsigned char>& out, std::uint32_t label, std::span<const float> values) {
  put_le(out, label);
  for (float f : values) put_float(out, f);
}

FeatureHeader decode_header(const unsigned char* p, std::uint64_t available) {
  if (available < 4 || std::memcmp(p, kMagic, 4) != 0) {
    if (available < 4) throw ParseError("feature file shorter than its magic", available);
    throw ParseError("bad magic, expected \"MSFV\"", 0);
  }
  if (available < kFeatureHeaderBytes) throw ParseError("feature file header truncated", available);
  FeatureHeader h;
  h.version = p[4];
  if (h.version != kFeatureFileVersion)
    throw ParseError("unsupported feature file version " + std::to_string(h.version), 4);
  h.dim = get_le<std::uint32_t>(p + 5);
  h.count = get_le<std::uint64_t>(p + 9);
  h.cardinality = get_le<std::uint32_t>(p + 17);
  if (h.dim == 0) throw ParseError("feature dimension must be positive", 5);
  if (h.cardinality == 0) throw ParseError("label cardinality must be positive", 17);
  return h;
}

}  // namespace

FeatureWriter::FeatureWriter(std::filesystem::path path, std::uint32_t dim, std::uint32_t cardinality)
    : path_(std::move(path)), dim_(dim), cardinality_(cardinality) {
  if (dim == 0) throw ValidationError("feature dimension must be positive");
  if (cardinality == 0) throw ValidationError("label cardinality must be positive");
  tmp_ = path_;
  tmp_ += ".tmp";
  out_.open(tmp_, std::ios::binary | std::ios::trunc);
  if (!out_) throw IoError("cannot open " + tmp_.string() + " for writing");
  FeatureHeader h{kFeatureFileVersion, dim_, 0, cardinality_};
  const auto bytes = encode_header(h);
  out_.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
}

FeatureWriter::~FeatureWriter() {
  if (!finished_) {
    out_.close();
    std::error_code ec;
    std::filesystem::remove(tmp_, ec);
  }
}

void FeatureWriter::write(std::uint32_t label, std::span<const float> values) {
  if (finished_) throw StateError("feature writer already finished");
  if (values.size() != dim_)
    throw DimensionError("feature vector has length " + std::to_string(values.size()) + ", file dimension is " +
                         std::to_string(dim_));
  if (label >= cardinality_)
    throw ValidationError("label " + std::to_string(label) + " >= cardinality " + std::to_string(cardinality_));
  std::vector<unsigned char> bytes;
  bytes.reserve(4 + 4 * values.size());
  encode_record(bytes, label, values);
  out_.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  ++count_;
}

void FeatureWriter::finish() {
  if (finished_) return;
  std::vector<unsigned char> count_bytes;
  put_le(count_bytes, count_);
  out_.seekp(9);
  out_.write(reinterpret_cast<const char*>(count_bytes.data()), 8);
  out_.close();
  if (!out_) throw IoError("failed writing " + tmp_.string());
  std::error_code ec;
  std::filesystem::rename(tmp_, path_, ec);
  if (ec) throw IoError("cannot rename " + tmp_.string() + " to " + path_.string() + ": " + ec.message());
  finished_ = true;
}

FeatureReader::FeatureReader(const std::filesystem::path& path, std::size_t buffer_records)
    : buffer_records_(buffer_records == 0 ? 1 : buffer_records) {
  std::error_code ec;
  file_size_ = std::filesystem::file_size(path, ec);
  if (ec) throw IoError("cannot stat feature file " + path.string() + ": " + ec.message());
  in_.open(path, std::ios::binary);
  if (!in_) throw IoError("cannot open feature file " + path.string());
  unsigned char head[kFeatureHeaderBytes];
  const auto got = static_cast<std::uint64_t>(
      in_.read(reinterpret_cast<char*>(head), kFeatureHeaderBytes).gcount());
  header_ = decode_header(head, got);
  offset_ = kFeatureHeaderBytes;
}

void FeatureReader::refill() {
  const std::uint64_t rb = header_.record_bytes();
  const std::uint64_t remaining_records = header_.count - read_;
  const std::uint64_t want = std::min<std::uint64_t>(remaining_records, buffer_records_) * rb;
  buffer_.resize(want);
  in_.read(reinterpret_cast<char*>(buffer_.data()), static_cast<std::streamsize>(want));
  const auto got = static_cast<std::uint64_t>(in_.gcount());
  if (got < want) {
    // Report the offset of the first incomplete record.
    const std::uint64_t complete = got / rb;
    throw ParseError("feature file truncated: declared " + std::to_string(header_.count) + " records, " +
                         std::to_string(read_ + complete) + " complete",
                     offset_ + got);
  }
  buffer_pos_ = 0;
}

bool FeatureReader::next(FeatureRow& row) {
  if (read_ == header_.count) {
    if (file_size_ != offset_) {
      throw ParseError("trailing bytes after " + std::to_string(header_.count) + " declared records", offset_);
    }
    return false;
  }
  if (buffer_pos_ >= buffer_.size()) refill();
  const unsigned char* p = buffer_.data() + buffer_pos_;
  row.label = get_le<std::uint32_t>(p);
  if (row.label >= header_.cardinality) {
    throw ParseError("label " + std::to_string(row.label) + " >= declared cardinality " +
                         std::to_string(header_.cardinality),
                     offset_);
  }
  row.values.resize(header_.dim);
  for (std::uint32_t i = 0; i < header_.dim; ++i) row.values[i] = get_float(p + 4 + 4 * i);
  const std::uint64_t rb = header_.record_bytes();
  buffer_pos_ += rb;
  offset_ += rb;
  ++read_;
  return true;
}

FeatureHeader read_feature_header(const std::filesystem::path& path) {
  FeatureReader reader(path, 1);
  return reader.header();
}

FeatureFile load_feature_file(const std::filesystem::path& path, std::uint64_t memory_budget_bytes) {
  FeatureReader reader(path);
  const FeatureHeader& h = reader.header();
  const std::uint64_t need = h.count * (sizeof(FeatureRow) + 4ULL * h.dim);
  if (need > memory_budget_bytes) {
    throw IoError("feature file " + path.string() + " needs ~" + std::to_string(need) +
                  " bytes, above the memory budget of " + std::to_string(memory_budget_bytes) +
                  "; stream it instead");
  }
  FeatureFile file;
  file.header = h;
  file.rows.reserve(h.count);
  FeatureRow row;
  while (reader.next(row)) file.rows.push_back(row);
  return file;
}

FeatureHeader for_each_feature_record(const std::filesystem::path& path,
                                      const std::function<void(const FeatureRow&)>& fn) {
  FeatureReader reader(path);
  FeatureRow row;
  while (reader.next(row)) fn(row);
  return reader.header();
}

void write_feature_file(const std::filesystem::path& path, std::uint32_t dim, std::uint32_t cardinality,
                        std::span<const FeatureRow> rows) {
  FeatureWriter writer(path, dim, cardinality);
  for (const auto& r : rows) writer.write(r.label, r.values);
  writer.finish();
}

std::vector<unsigned char> serialize_feature_file(const FeatureHeader& header, std::span<const FeatureRow> rows) {
  FeatureHeader h = header;
  h.count = rows.size();
  auto out = encode_header(h);
  out.reserve(kFeatureHeaderBytes + rows.size() * h.record_bytes());
  for (const auto& r : rows) {
    if (r.values.size() != h.dim) throw DimensionError("feature vector length does not match header dimension");
    encode_record(out, r.label, r.values);
  }
  return out;
}

}  // namespace msdem
