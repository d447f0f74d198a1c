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
#include <vector>

#include "xmadapter/archive.hpp"
#include "xmadapter/encoder.hpp"

namespace xma {

/// Paired text/video data built from atomic concepts. Each pair owns a
/// distinct set of `concepts_per_pair` concepts; its latent vector is the
/// scaled sum of their prototype patch grids. Frames are that latent plus
/// noise, except `distractor_frames` frames built from other concepts. The
/// caption lists the pair's concept tokens in ascending order.
struct SyntheticSpec {
  std::size_t n_pairs = 64;
  std::size_t n_concepts = 16;
  std::size_t concepts_per_pair = 2;
  std::size_t frames_per_video = 8;
  std::size_t distractor_frames = 2;
  double noise_std = 0.1;
  double val_fraction = 0.2;
  std::uint64_t seed = 7;

  // Geometry; must agree with the encoders that consume the data.
  std::size_t patches = 16;
  std::size_t patch_dim = 48;
  std::size_t text_len = 16;

  static constexpr std::int32_t kFirstConceptToken = 3;

  std::size_t val_pairs() const;
  std::size_t train_pairs() const { return n_pairs - val_pairs(); }
  // Throws std::invalid_argument naming the offending field.
  void validate(std::size_t vocab_size) const;
};

struct Dataset {
  FrameBatch frames;
  TokenBatch tokens;
  std::vector<std::vector<std::size_t>> concepts;  // per pair, ascending

  std::size_t size() const { return tokens.texts(); }
  Dataset select(std::span<const std::size_t> indices) const;
};

struct SyntheticData {
  Tensor prototypes;  // [n_concepts x patches x patch_dim]
  Dataset train;
  Dataset val;
};

SyntheticData generate(const SyntheticSpec& spec, std::size_t vocab_size = 256);

// Drop-last batches over a seeded permutation of [0, n). Each (seed, epoch)
// gives its own order.
std::vector<std::vector<std::size_t>> make_batches(std::size_t n, std::size_t batch_size, std::uint64_t seed,
                                                   std::size_t epoch);

std::vector<ArchiveEntry> dataset_entries(const Dataset& data);
Dataset dataset_from_entries(std::span<const ArchiveEntry> entries);

}  // namespace xma
