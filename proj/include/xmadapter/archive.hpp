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

#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "xmadapter/tensor.hpp"

// TensorArchive: a flat list of named tensors.
//
//   "XMAT" | version u32 | count u32 |
//   count x { name_len u16 | name | dtype u8 | ndim u8 | dims u32[ndim] | payload }
//
// All integers and payloads are little-endian. dtype 0 is f32, 1 is f64.
namespace xma {

inline constexpr std::uint32_t kArchiveVersion = 1;

enum class DType : std::uint8_t { f32 = 0, f64 = 1 };

std::size_t dtype_size(DType dtype);

struct ArchiveEntry {
  std::string name;
  Tensor value;
  DType dtype = DType::f64;
};

class ArchiveError : public std::runtime_error {
 public:
  enum class Kind {
    not_an_archive,
    unsupported_version,
    unknown_dtype,
    invalid_shape,
    invalid_name,
    truncated,
    duplicate_name,
    trailing_data,
    io,
  };

  ArchiveError(Kind kind, const std::string& message) : std::runtime_error(message), kind_(kind) {}
  Kind kind() const noexcept { return kind_; }

 private:
  Kind kind_;
};

const char* archive_error_name(ArchiveError::Kind kind);

// Bytes of everything except payloads, for a given list of entries.
std::size_t archive_header_bytes(std::span<const ArchiveEntry> entries);

std::vector<std::uint8_t> encode_archive(std::span<const ArchiveEntry> entries);
std::vector<ArchiveEntry> decode_archive(std::span<const std::uint8_t> bytes);

void write_archive(const std::filesystem::path& path, std::span<const ArchiveEntry> entries);
std::vector<ArchiveEntry> read_archive(const std::filesystem::path& path);

// Name lookup; throws std::out_of_range naming the entry when absent.
const ArchiveEntry& find_entry(std::span<const ArchiveEntry> entries, const std::string& name);

}  // namespace xma
