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

#include <string_view>

#include "xmadapter/rng.hpp"

namespace xma {

enum class Modality { video, text };

constexpr std::string_view modality_name(Modality m) { return m == Modality::video ? "video" : "text"; }

// Per-call forward state. Dropout draws from rng only when training is true.
struct ForwardContext {
  Rng* rng = nullptr;
  bool training = false;
};

}  // namespace xma
