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
#include <span>
#include <vector>

#include "xmadapter/autodiff.hpp"
#include "xmadapter/rng.hpp"

// Differentiable operations. Unless stated otherwise, "last axis" ops treat the
// input as a stack of rows along the final dimension.
namespace xma::ops {

inline constexpr double kLayerNormEps = 1e-5;

// Elementwise; `b` may also be shaped like a trailing suffix of `a`'s shape
// (e.g. a bias [n] against [.., n]) and is then broadcast over leading axes.
Var add(const Var& a, const Var& b);
Var sub(const Var& a, const Var& b);
Var mul(const Var& a, const Var& b);
Var scale(const Var& a, double factor);

// [m x k] . [k x n]
Var matmul(const Var& a, const Var& b);
// [.. x k] . [k x n] (+ bias [n]); leading axes are flattened into rows.
Var linear(const Var& x, const Var& weight);
Var linear(const Var& x, const Var& weight, const Var& bias);
// Batched [B x m x k] . [B x k x n]; with transpose_b the right side is [B x n x k].
Var bmm(const Var& a, const Var& b, bool transpose_b = false);

Var reshape(const Var& x, Shape shape);
Var permute(const Var& x, std::span<const std::size_t> axes);
Var transpose(const Var& x);  // rank-2 only
Var concat_last(const Var& a, const Var& b);

Var layernorm(const Var& x, const Var& gamma, const Var& beta, double eps = kLayerNormEps);
// tanh approximation: 0.5 x (1 + tanh(sqrt(2/pi) (x + 0.044715 x^3))).
Var gelu(const Var& x);
Var softmax(const Var& x);
// Entries with valid[i] == 0 get probability exactly 0. Each row needs a valid entry.
Var masked_softmax(const Var& x, std::span<const std::uint8_t> valid);
Var log_softmax(const Var& x);
// x / max(||x||, 1e-12) along the last axis.
Var l2_normalize(const Var& x);
Var dropout(const Var& x, double p, Rng& rng, bool training);

// [N x S x d] -> [N x d], row rows[n] of sequence n.
Var take_rows(const Var& x, std::span<const std::size_t> rows);
// [N x M x d], row [d] -> [N x (M+1) x d] with `row` in front of every sequence.
Var prepend_row(const Var& x, const Var& row);
// First `count` rows of a rank-2 tensor.
Var leading_rows(const Var& x, std::size_t count);
// table [V x d], ids (N*S of them) -> [N x S x d].
Var embedding(const Var& table, std::span<const std::int32_t> ids, std::size_t batch,
              std::size_t seq_len);

Var sum_last(const Var& x);
Var diagonal(const Var& x);
Var sum(const Var& x);
Var mean(const Var& x);

}  // namespace xma::ops

namespace xma::testing {

// Deliberately corrupts the gelu backward pass while alive. Only the
// gradient-check harness uses this, to prove it can detect a broken op.
class ScopedBrokenGeluBackward {
 public:
  ScopedBrokenGeluBackward();
  ~ScopedBrokenGeluBackward();
  ScopedBrokenGeluBackward(const ScopedBrokenGeluBackward&) = delete;
  ScopedBrokenGeluBackward& operator=(const ScopedBrokenGeluBackward&) = delete;
};

}  // namespace xma::testing
