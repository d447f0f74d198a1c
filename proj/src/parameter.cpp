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

#include "xmadapter/parameter.hpp"

#include <stdexcept>

namespace xma {

Parameter::Parameter(std::string name, Tensor value, bool trainable)
    : name_(std::move(name)), leaf_(std::move(value), trainable) {}

void Parameter::assign(Tensor value) {
  if (value.shape() != leaf_.shape()) {
    throw DimensionError(name_ + ": cannot assign " + shape_str(value.shape()) + " to parameter of shape " +
                         shape_str(leaf_.shape()));
  }
  leaf_.node()->value = std::move(value);
}

ParameterPtr materialize(const ParamSpec& spec, Rng& rng) {
  Tensor value;
  switch (spec.init) {
    case ParamSpec::Init::normal:
      value = rng.normal_tensor(spec.shape, spec.stddev);
      break;
    case ParamSpec::Init::zeros:
      value = Tensor(spec.shape, 0.0);
      break;
    case ParamSpec::Init::ones:
      value = Tensor(spec.shape, 1.0);
      break;
  }
  return std::make_shared<Parameter>(spec.name, std::move(value), spec.trainable);
}

ParameterTable::ParameterTable(const std::vector<ParamSpec>& specs, Rng& rng) {
  ordered_.reserve(specs.size());
  for (const ParamSpec& spec : specs) {
    if (!index_.emplace(spec.name, ordered_.size()).second) {
      throw std::invalid_argument("duplicate parameter name " + spec.name);
    }
    ordered_.push_back(materialize(spec, rng));
  }
}

const ParameterPtr& ParameterTable::at(const std::string& name) const {
  auto it = index_.find(name);
  if (it == index_.end()) throw std::out_of_range("no parameter named " + name);
  return ordered_[it->second];
}

}  // namespace xma
