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
#include <functional>
#include <string>
#include <vector>

#include "xmadapter/autodiff.hpp"
#include "xmadapter/parameter.hpp"

namespace xma {

struct GradLeaf {
  std::string name;
  Var var;
};

std::vector<GradLeaf> grad_leaves(const std::vector<ParameterPtr>& params);

struct GradcheckOptions {
  double step = 1e-4;
  // Denominator floor: error is |a - n| / max(|a|, |n|, abs_floor). Central
  // differences at step 1e-4 carry about 1e-10 of rounding noise on O(10)
  // objectives, so gradients below 1e-6 cannot be resolved to 1e-4 relative.
  double abs_floor = 1e-6;
  // 0 checks every entry; otherwise a seeded sample of this many entries per leaf.
  std::size_t max_entries_per_leaf = 0;
  std::uint64_t sample_seed = 0;
};

struct GradcheckResult {
  double max_rel_error = 0.0;
  std::size_t entries_checked = 0;
  std::string worst_leaf;
  std::size_t worst_index = 0;
  double worst_analytic = 0.0;
  double worst_numeric = 0.0;
};

/// Compares the reverse-mode gradient of a scalar objective against central
/// differences (f(x+h) - f(x-h)) / 2h for each checked leaf entry.
///
/// `objective` must rebuild its graph on every call and be deterministic
/// (reseed any dropout inside it). Leaves are restored bit-exactly afterwards.
/// Throws NonFiniteError if the objective is not finite.
GradcheckResult gradcheck(const std::function<Var()>& objective, const std::vector<GradLeaf>& leaves,
                          const GradcheckOptions& options = {});

}  // namespace xma
