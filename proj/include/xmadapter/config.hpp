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

#include <filesystem>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>

#include "json.hpp"

#include "xmadapter/model.hpp"
#include "xmadapter/similarity.hpp"
#include "xmadapter/synthetic.hpp"
#include "xmadapter/training.hpp"

namespace xma {

class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

enum class Preset { toy, clip };

/// Everything a run needs. Sections: encoder, adapter, similarity, train, data.
struct RunConfig {
  Preset preset = Preset::toy;
  ModelConfig model;  // adapter_seed mirrors train.seed
  SimilarityConfig similarity;
  TrainConfig train;
  SyntheticSpec data;

  static RunConfig defaults(Preset preset);
  // Unknown keys and ill-typed values raise ConfigError naming the key.
  static RunConfig from_json(const nlohmann::json& doc);
  nlohmann::json to_json() const;
  // Cross-field checks; ConfigError names the offending key.
  void validate() const;
};

// Applies "a.b.c=value" to doc. The value is parsed as JSON when possible and
// taken as a string otherwise.
void apply_override(nlohmann::json& doc, std::string_view assignment);

// Reads the file (or starts from {}), applies overrides in order, parses and validates.
RunConfig load_run_config(const std::optional<std::filesystem::path>& path, std::span<const std::string> overrides);

void write_json(const std::filesystem::path& path, const nlohmann::json& doc);
nlohmann::json read_json(const std::filesystem::path& path);

}  // namespace xma
