// Copyright 2026 The xmadapter Authors.
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#include "xmadapter/archive.hpp"

#include <algorithm>
#include <bit>
#include <fstream>
#include <iterator>
#include <limits>
#include <set>

namespace xma {

namespace {

constexpr char kMagic[4] = {'X', 'M', 'A', 'T'};
constexpr std::size_t kMaxRank = 255;

using Kind = ArchiveError::Kind;

class Writer {
 public:
  void bytes(const void* p, std::size_t n) {
    const auto* b = static_cast<const std::uint8_t*>(p);
    out_.insert(out_.end(), b, b + n);
  }
  template <typename U>
  void uint(U v) {
    for (std::size_t i = 0; i < sizeof(U); ++i) out_.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
  }
  std::vector<std::uint8_t> take() { return std::move(out_); }
  void reserve(std::size_t n) { out_.reserve(n); }

 private:
  std::vector<std::uint8_t> out_;
};

class Reader {
 public:
  explicit Reader(std::span<const std::uint8_t> in) : in_(in) {}

  std::size_t remaining() const { return in_.size() - pos_; }
  bool has(std::size_t n) const { return remaining() >= n; }

  template <typename U>
  U uint() {
    U v = 0;
    for (std::size_t i = 0; i < sizeof(U); ++i) v |= static_cast<U>(static_cast<U>(in_[pos_ + i]) << (8 * i));
    pos_ += sizeof(U);
    return v;
  }
  std::span<const std::uint8_t> take(std::size_t n) {
    auto s = in_.subspan(pos_, n);
    pos_ += n;
    return s;
  }

 private:
  std::span<const std::uint8_t> in_;
  std::size_t pos_ = 0;
};

void check_entry(const ArchiveEntry& e) {
  if (e.name.empty() || e.name.size() > std::numeric_limits<std::uint16_t>::max()) {
    throw ArchiveError(Kind::invalid_name, "entry name must be 1..65535 bytes");
  }
  if (e.dtype != DType::f32 && e.dtype != DType::f64) {
    throw ArchiveError(Kind::unknown_dtype, "entry " + e.name + " has an unknown dtype");
  }
  if (e.value.empty() || e.value.rank() > kMaxRank) {
    throw ArchiveError(Kind::invalid_shape, "entry " + e.name + " has no storable shape");
  }
  for (std::size_t d : e.value.shape()) {
    if (d > std::numeric_limits<std::uint32_t>::max()) {
      throw ArchiveError(Kind::invalid_shape, "entry " + e.name + " has an extent beyond u32");
    }
  }
}

}  // namespace

std::size_t dtype_size(DType dtype) {
  switch (dtype) {
    case DType::f32:
      return 4;
    case DType::f64:
      return 8;
  }
  throw ArchiveError(Kind::unknown_dtype, "unknown dtype tag " + std::to_string(static_cast<int>(dtype)));
}

const char* archive_error_name(ArchiveError::Kind kind) {
  switch (kind) {
    case Kind::not_an_archive:
      return "not_an_archive";
    case Kind::unsupported_version:
      return "unsupported_version";
    case Kind::unknown_dtype:
      return "unknown_dtype";
    case Kind::invalid_shape:
      return "invalid_shape";
    case Kind::invalid_name:
      return "invalid_name";
    case Kind::truncated:
      return "truncated";
    case Kind::duplicate_name:
      return "duplicate_name";
    case Kind::trailing_data:
      return "trailing_data";
    case Kind::io:
      return "io";
  }
  return "unknown";
}

std::size_t archive_header_bytes(std::span<const ArchiveEntry> entries) {
  std::size_t n = sizeof kMagic + 4 + 4;
  for (const auto& e : entries) n += 2 + e.name.size() + 1 + 1 + 4 * e.value.rank();
  return n;
}

std::vector<std::uint8_t> encode_archive(std::span<const ArchiveEntry> entries) {
  if (entries.size() > std::numeric_limits<std::uint32_t>::max()) {
    throw ArchiveError(Kind::invalid_shape, "too many archive entries");
  }
  std::set<std::string> seen;
  std::size_t total = archive_header_bytes(entries);
  for (const auto& e : entries) {
    check_entry(e);
    if (!seen.insert(e.name).second) throw ArchiveError(Kind::duplicate_name, "duplicate entry name " + e.name);
    total += e.value.numel() * dtype_size(e.dtype);
  }

  Writer w;
  w.reserve(total);
  w.bytes(kMagic, sizeof kMagic);
  w.uint<std::uint32_t>(kArchiveVersion);
  w.uint<std::uint32_t>(static_cast<std::uint32_t>(entries.size()));
  for (const auto& e : entries) {
    w.uint<std::uint16_t>(static_cast<std::uint16_t>(e.name.size()));
    w.bytes(e.name.data(), e.name.size());
    w.uint<std::uint8_t>(static_cast<std::uint8_t>(e.dtype));
    w.uint<std::uint8_t>(static_cast<std::uint8_t>(e.value.rank()));
    for (std::size_t d : e.value.shape()) w.uint<std::uint32_t>(static_cast<std::uint32_t>(d));
    for (double v : e.value.values()) {
      if (e.dtype == DType::f32) {
        w.uint<std::uint32_t>(std::bit_cast<std::uint32_t>(static_cast<float>(v)));
      } else {
        w.uint<std::uint64_t>(std::bit_cast<std::uint64_t>(v));
      }
    }
  }
  return w.take();
}

std::vector<ArchiveEntry> decode_archive(std::span<const std::uint8_t> bytes) {
  Reader r(bytes);
  if (!r.has(sizeof kMagic) || !std::equal(std::begin(kMagic), std::end(kMagic), bytes.begin())) {
    throw ArchiveError(Kind::not_an_archive, "not a tensor archive");
  }
  r.take(sizeof kMagic);
  if (!r.has(8)) throw ArchiveError(Kind::truncated, "truncated archive header");
  const auto version = r.uint<std::uint32_t>();
  if (version != kArchiveVersion) {
    throw ArchiveError(Kind::unsupported_version, "unsupported archive version " + std::to_string(version));
  }
  const auto count = r.uint<std::uint32_t>();

  std::vector<ArchiveEntry> entries;
  std::set<std::string> seen;
  for (std::uint32_t k = 0; k < count; ++k) {
    const std::string label = "#" + std::to_string(k);
    if (!r.has(2)) throw ArchiveError(Kind::truncated, "truncated entry " + label);
    const auto name_len = r.uint<std::uint16_t>();
    if (name_len == 0) throw ArchiveError(Kind::invalid_name, "entry " + label + " has an empty name");
    if (!r.has(name_len)) throw ArchiveError(Kind::truncated, "truncated entry " + label);
    const auto raw = r.take(name_len);
    std::string name(raw.begin(), raw.end());
    if (!seen.insert(name).second) throw ArchiveError(Kind::duplicate_name, "duplicate entry name " + name);

    if (!r.has(2)) throw ArchiveError(Kind::truncated, "truncated entry " + name);
    const auto tag = r.uint<std::uint8_t>();
    if (tag > static_cast<std::uint8_t>(DType::f64)) {
      throw ArchiveError(Kind::unknown_dtype, "entry " + name + " has unknown dtype tag " + std::to_string(tag));
    }
    const auto dtype = static_cast<DType>(tag);
    const auto ndim = r.uint<std::uint8_t>();
    if (ndim == 0) throw ArchiveError(Kind::invalid_shape, "entry " + name + " has rank 0");
    if (!r.has(4u * ndim)) throw ArchiveError(Kind::truncated, "truncated entry " + name);

    Shape shape(ndim);
    std::size_t numel = 1;
    bool overflow = false;
    for (auto& d : shape) {
      d = r.uint<std::uint32_t>();
      if (d == 0) throw ArchiveError(Kind::invalid_shape, "entry " + name + " has a zero extent");
      if (numel > std::numeric_limits<std::size_t>::max() / d) overflow = true;
      numel = overflow ? numel : numel * d;
    }
    const std::size_t width = dtype_size(dtype);
    if (overflow || numel > r.remaining() / width) throw ArchiveError(Kind::truncated, "truncated entry " + name);

    std::vector<double> values(numel);
    const auto payload = r.take(numel * width);
    for (std::size_t i = 0; i < numel; ++i) {
      std::uint64_t bits = 0;
      for (std::size_t b = 0; b < width; ++b) bits |= static_cast<std::uint64_t>(payload[i * width + b]) << (8 * b);
      values[i] = dtype == DType::f32 ? static_cast<double>(std::bit_cast<float>(static_cast<std::uint32_t>(bits)))
                                      : std::bit_cast<double>(bits);
    }
    entries.push_back({std::move(name), Tensor(std::move(shape), std::move(values)), dtype});
  }
  if (r.remaining() != 0) {
    throw ArchiveError(Kind::trailing_data, std::to_string(r.remaining()) + " trailing bytes after the last entry");
  }
  return entries;
}

void write_archive(const std::filesystem::path& path, std::span<const ArchiveEntry> entries) {
  const auto bytes = encode_archive(entries);
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw ArchiveError(Kind::io, "cannot open " + path.string() + " for writing");
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw ArchiveError(Kind::io, "write to " + path.string() + " failed");
}

std::vector<ArchiveEntry> read_archive(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ArchiveError(Kind::io, "cannot open " + path.string());
  std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return decode_archive(bytes);
}

const ArchiveEntry& find_entry(std::span<const ArchiveEntry> entries, const std::string& name) {
  for (const auto& e : entries)
    if (e.name == name) return e;
  throw std::out_of_range("archive has no entry named " + name);
}

}  // namespace xma
