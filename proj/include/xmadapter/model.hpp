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
#include <memory>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "xmadapter/adapter.hpp"
#include "xmadapter/encoder.hpp"

namespace xma {

struct ModelConfig {
  EncoderConfig video = EncoderConfig::toy_video();
  EncoderConfig text = EncoderConfig::toy_text();
  std::optional<AdapterConfig> adapter = AdapterConfig{};
  std::uint64_t backbone_seed = 1234;
  std::uint64_t adapter_seed = 42;

  void validate() const;
};

struct ParameterCensus {
  std::uint64_t total = 0;
  std::uint64_t trainable = 0;

  std::uint64_t frozen() const { return total - trainable; }
  double trainable_percent() const { return total ? 100.0 * static_cast<double>(trainable) / static_cast<double>(total) : 0.0; }
};

/// Frozen video and text encoders plus (optionally) cross-modal adapters.
/// Only adapter parameters are trainable.
class DualEncoderModel {
 public:
  explicit DualEncoderModel(ModelConfig config);
  DualEncoderModel(const DualEncoderModel&) = delete;
  DualEncoderModel& operator=(const DualEncoderModel&) = delete;

  // Every parameter the model would own, without allocating any of them.
  static std::vector<ParamSpec> parameter_specs(const ModelConfig& config);
  static ParameterCensus census(const ModelConfig& config);

  const ModelConfig& config() const noexcept { return config_; }
  const VideoEncoder& video() const noexcept { return video_; }
  const TextEncoder& text() const noexcept { return text_; }
  const AdapterLayout* adapters() const noexcept { return adapters_.get(); }
  AdapterLayout* adapters() noexcept { return adapters_.get(); }

  // [videos x frames x D_t]
  Var encode_videos(const FrameBatch& batch, ForwardContext ctx) const;
  // [texts x D_t]
  Var encode_texts(const TokenBatch& batch, ForwardContext ctx) const;

  std::vector<ParameterPtr> parameters() const;
  std::vector<ParameterPtr> trainable_parameters() const;
  std::vector<std::string> trainable_set() const;
  ParameterPtr find(std::string_view name) const;
  void zero_grad() const;

 private:
  ModelConfig config_;
  VideoEncoder video_;
  TextEncoder text_;
  std::unique_ptr<AdapterLayout> adapters_;
  std::vector<LayerAdapters> video_hooks_;
  std::vector<LayerAdapters> text_hooks_;
};

}  // namespace xma
