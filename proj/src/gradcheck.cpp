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

#include "xmadapter/gradcheck.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "xmadapter/rng.hpp"

namespace xma {

std::vector<GradLeaf> grad_leaves(const std::vector<ParameterPtr>& params) {
  std::vector<GradLeaf> leaves;
  leaves.reserve(params.size());
  for (const auto& p : params) leaves.push_back({p->name(), p->var()});
  return leaves;
}

namespace {

double evaluate(const std::function<Var()>& objective) {
  const Var y = objective();
  if (y.value().numel() != 1) throw DimensionError("gradcheck: objective must be scalar, got " + shape_str(y.shape()));
  const double v = y.value()[0];
  if (!std::isfinite(v)) throw NonFiniteError("gradcheck: non-finite objective");
  return v;
}

}  // namespace

GradcheckResult gradcheck(const std::function<Var()>& objective, const std::vector<GradLeaf>& leaves,
                          const GradcheckOptions& options) {
  std::vector<bool> saved_flags;
  for (const GradLeaf& leaf : leaves) {
    saved_flags.push_back(leaf.var.requires_grad());
    leaf.var.node()->requires_grad = true;
    leaf.var.node()->grad = Tensor();
  }

  const Var y = objective();
  if (y.value().numel() != 1) throw DimensionError("gradcheck: objective must be scalar, got " + shape_str(y.shape()));
  if (!std::isfinite(y.value()[0])) throw NonFiniteError("gradcheck: non-finite objective");
  backward(y);

  std::vector<Tensor> analytic;
  for (const GradLeaf& leaf : leaves) {
    analytic.push_back(leaf.var.has_grad() ? leaf.var.grad() : Tensor(leaf.var.shape(), 0.0));
    leaf.var.node()->grad = Tensor();
    leaf.var.node()->requires_grad = false;  // finite-difference passes need no graph
  }

  GradcheckResult result;
  Rng sampler(options.sample_seed);
  const double h = options.step;
  for (std::size_t li = 0; li < leaves.size(); ++li) {
    Tensor& value = leaves[li].var.node()->value;
    std::vector<std::size_t> entries(value.numel());
    std::iota(entries.begin(), entries.end(), std::size_t{0});
    if (options.max_entries_per_leaf && entries.size() > options.max_entries_per_leaf) {
      sampler.shuffle(std::span<std::size_t>(entries));
      entries.resize(options.max_entries_per_leaf);
      std::sort(entries.begin(), entries.end());
    }
    for (std::size_t idx : entries) {
      const double original = value[idx];
      value[idx] = original + h;
      const double up = evaluate(objective);
      value[idx] = original - h;
      const double down = evaluate(objective);
      value[idx] = original;

      const double numeric = (up - down) / (2.0 * h);
      const double a = analytic[li][idx];
      const double denom = std::max({std::abs(a), std::abs(numeric), options.abs_floor});
      const double err = std::abs(a - numeric) / denom;
      ++result.entries_checked;
      if (err > result.max_rel_error || result.worst_leaf.empty()) {
        if (err >= result.max_rel_error) {
          result.max_rel_error = err;
          result.worst_leaf = leaves[li].name;
          result.worst_index = idx;
          result.worst_analytic = a;
          result.worst_numeric = numeric;
        }
      }
    }
  }

  for (std::size_t li = 0; li < leaves.size(); ++li) leaves[li].var.node()->requires_grad = saved_flags[li];
  return result;
}

}  // namespace xma
