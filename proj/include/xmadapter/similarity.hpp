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
#include <iosfwd>
#include <span>
#include <vector>

#include "xmadapter/autodiff.hpp"

namespace xma {

inline constexpr double kDefaultTau = 5.0;
inline constexpr double kDefaultLogitScale = 100.0;

struct SimilarityConfig {
  double tau = kDefaultTau;
  double logit_scale = kDefaultLogitScale;

  void validate() const;
};

/// Per-frame features of a batch of videos, [videos x frames x D_t], and a
/// validity flag per frame. Invalid frames get aggregation weight exactly 0.
struct FrameFeatures {
  Var f;
  std::vector<std::uint8_t> mask;

  std::size_t videos() const { return f.dim(0); }
  std::size_t frames() const { return f.dim(1); }
  std::size_t width() const { return f.dim(2); }
  void validate() const;
};

// All-valid mask for `videos` x `frames`.
std::vector<std::uint8_t> full_mask(std::size_t videos, std::size_t frames);

// alpha_j = <t, frames_j>, t [D], frames [F x D] -> [F].
Tensor frame_scores(const Tensor& t, const Tensor& frames);
// softmax(alpha / tau) over valid entries; an empty `valid` means all valid.
Tensor aggregation_weights(const Tensor& alpha, double tau, std::span<const std::uint8_t> valid = {});
// sum_j w_j frames_j with w = aggregation_weights(alpha, tau, valid) -> [D].
Tensor aggregate(const Tensor& alpha, const Tensor& frames, double tau, std::span<const std::uint8_t> valid = {});

/// s[i][j] = cosine(v_{i|j}, t_j), where v_{i|j} aggregates video i's frames
/// with text j as the query.
struct SimilarityMap {
  Var s;            // [videos x texts]
  Tensor weights;   // [texts x videos x frames]
  double tau = kDefaultTau;
  double logit_scale = kDefaultLogitScale;

  std::size_t videos() const { return s.dim(0); }
  std::size_t texts() const { return s.dim(1); }
  const Tensor& scores() const { return s.value(); }
};

// Differentiable batched form. texts [n_t x D], videos.f [n_v x F x D].
SimilarityMap similarity_matrix(const Var& texts, const FrameFeatures& videos, const SimilarityConfig& cfg);

// Graph-free form for evaluation, parallel over texts. Returns [n_v x n_t].
Tensor similarity_scores(const Tensor& texts, const Tensor& frames, std::span<const std::uint8_t> mask, double tau,
                         unsigned threads = 1);

struct ContrastiveTerms {
  Var t2v;    // softmax over videos for each text (columns)
  Var v2t;    // softmax over texts for each video (rows)
  Var total;  // (t2v + v2t) / 2
};

// Symmetric InfoNCE on logits g * s with diagonal positives. s must be square.
ContrastiveTerms contrastive_terms(const Var& s, double logit_scale);
Var contrastive_loss(const SimilarityMap& map);

// Rows are videos, columns texts; 6 significant digits, '.' decimal.
void write_similarity_csv(std::ostream& out, const Tensor& scores);
Tensor read_similarity_csv(std::istream& in);

}  // namespace xma
