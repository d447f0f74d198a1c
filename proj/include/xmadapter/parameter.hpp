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
#include <map>
#include <memory>
#include <string>
#include <vector>

#include "xmadapter/autodiff.hpp"
#include "xmadapter/rng.hpp"

namespace xma {

/// Named leaf of the computation graph. Frozen parameters never record gradients.
class Parameter {
 public:
  Parameter(std::string name, Tensor value, bool trainable);

  const std::string& name() const noexcept { return name_; }
  bool trainable() const noexcept { return leaf_.requires_grad(); }
  void set_trainable(bool trainable) { leaf_.node()->requires_grad = trainable; }

  const Tensor& value() const { return leaf_.value(); }
  // Replaces the value; the shape must not change.
  void assign(Tensor value);
  Tensor& mutable_value() { return leaf_.node()->value; }

  bool has_grad() const { return leaf_.has_grad(); }
  const Tensor& grad() const { return leaf_.grad(); }
  void zero_grad() { leaf_.zero_grad(); }

  const Var& var() const noexcept { return leaf_; }

 private:
  std::string name_;
  Var leaf_;
};

using ParameterPtr = std::shared_ptr<Parameter>;

/// Declarative description of a parameter: enough to count it without allocating it.
struct ParamSpec {
  enum class Init { normal, zeros, ones };

  std::string name;
  Shape shape;
  Init init = Init::zeros;
  double stddev = 0.0;
  bool trainable = false;

  std::size_t numel() const { return shape_numel(shape); }
};

ParameterPtr materialize(const ParamSpec& spec, Rng& rng);

/// Name-ordered parameter table built from a spec list.
class ParameterTable {
 public:
  ParameterTable() = default;
  ParameterTable(const std::vector<ParamSpec>& specs, Rng& rng);

  const ParameterPtr& at(const std::string& name) const;
  const std::vector<ParameterPtr>& all() const noexcept { return ordered_; }

 private:
  std::vector<ParameterPtr> ordered_;
  std::map<std::string, std::size_t> index_;
};

}  // namespace xma
