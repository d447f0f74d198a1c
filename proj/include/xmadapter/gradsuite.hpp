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

#include <string>
#include <vector>

#include "xmadapter/gradcheck.hpp"
#include "xmadapter/model.hpp"
#include "xmadapter/similarity.hpp"

namespace xma {

struct GradSuiteOptions {
  std::size_t seeds = 10;
  double tolerance = 1e-4;
  // Entries sampled per leaf in the composite checks; op-level checks cover every entry.
  std::size_t composite_entries_per_leaf = 4;
  // Runs with a corrupted gelu backward, to exercise the FAIL path.
  bool inject_fault = false;
  GradcheckOptions check;  // step and floor; sampling is set per component
};

struct GradSuiteRow {
  std::string component;
  std::size_t seeds = 0;
  std::size_t entries = 0;
  double max_rel_error = 0.0;
  std::string worst;  // leaf[index] of the worst entry
  double worst_analytic = 0.0;
  double worst_numeric = 0.0;
  bool pass = false;
};

// Op-level checks, one adapter, one transformer layer, the similarity/loss
// head, and the composite loss through both encoders w.r.t. every adapter
// parameter at the dims of `model` (adapter weights are redrawn at a larger
// scale so no path is near zero; dropout is off).
std::vector<GradSuiteRow> run_gradcheck_suite(const ModelConfig& model, const SimilarityConfig& sim,
                                              const GradSuiteOptions& options = {});

}  // namespace xma
