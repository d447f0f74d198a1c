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
#include <string>
#include <vector>

#include "xmadapter/module.hpp"
#include "xmadapter/parameter.hpp"

namespace xma {

/// Bottleneck adapter hyper-parameters.
///
/// `share_width` columns of every up-projection are one matrix owned jointly
/// by the video-side and text-side adapter at the same insertion point. A
/// share width of 0 gives two independent (vanilla) adapters.
struct AdapterConfig {
  std::size_t bottleneck = 8;    // r
  std::size_t share_width = 16;  // d_s
  double dropout_p = 0.1;
  double init_std = 0.01;
  bool use_bias = true;

  // Throws std::invalid_argument when r == 0, dropout_p is outside [0, 1),
  // init_std < 0, or d_s exceeds min(d_video, d_text).
  void validate(std::size_t d_video, std::size_t d_text) const;
};

/// The modality-shared slice of the up-projection, W_up,share [r x d_s].
struct SharedUp {
  ParameterPtr weight;
};

/// One adapter on one modality at one insertion point.
///
/// out = x + concat[z W_up_unique, z W_up_share] + b_up, with
/// z = dropout(gelu(x W_down + b_down)). The unique slice comes first.
struct AdapterWeights {
  std::size_t width = 0;
  double dropout_p = 0.0;
  ParameterPtr w_down;       // [d x r]
  ParameterPtr b_down;       // [r], null without biases
  ParameterPtr w_up_unique;  // [r x (d - d_s)], null when d_s == d
  ParameterPtr b_up;         // [d], null without biases
  std::shared_ptr<const SharedUp> share;  // null when d_s == 0

  std::size_t share_width() const;
};

// Throws DimensionError when the last axis of x is not the adapter width, or
// when the unique and shared slices do not add up to it (e.g. missing share).
Var adapter_forward(const Var& x, const AdapterWeights& weights, ForwardContext ctx);

enum class InsertionPoint { attn, mlp };

struct CrossModalAdapterPair {
  AdapterWeights video;
  AdapterWeights text;
  std::shared_ptr<SharedUp> shared;  // same object as video.share and text.share
};

/// Adapters after the attention and MLP sub-layers of every layer, paired
/// positionally across the two encoders (video layer l with text layer l).
class AdapterLayout {
 public:
  // Weights start at zero; call init_adapters() to draw them.
  AdapterLayout(std::size_t layers, std::size_t d_video, std::size_t d_text, AdapterConfig config);

  static std::vector<ParamSpec> parameter_specs(std::size_t layers, std::size_t d_video, std::size_t d_text,
                                                const AdapterConfig& config);

  const AdapterConfig& config() const noexcept { return config_; }
  std::size_t layers() const noexcept { return layers_; }
  // layer is 1-based.
  const CrossModalAdapterPair& pair(std::size_t layer, InsertionPoint point) const;
  const AdapterWeights& weights(Modality modality, std::size_t layer, InsertionPoint point) const;

  // Every adapter parameter exactly once (shared matrices included once).
  const std::vector<ParameterPtr>& parameters() const noexcept { return table_.all(); }

 private:
  std::size_t layers_;
  AdapterConfig config_;
  ParameterTable table_;
  std::vector<CrossModalAdapterPair> pairs_;
};

std::string adapter_param_name(Modality modality, std::size_t layer, InsertionPoint point, std::string_view leaf);
std::string shared_param_name(std::size_t layer, InsertionPoint point);

// Weight matrices ~ N(0, init_std^2) in parameter order, biases zero.
void init_adapters(AdapterLayout& layout, const AdapterConfig& config, Rng& rng);

/// Closed-form trained-parameter count; shared matrices count once per pair:
/// 2L * ([d_v r + r + r (d_v - d_s) + d_v] + [d_t r + r + r (d_t - d_s) + d_t] + r d_s),
/// with the bias terms dropped when use_bias is false.
std::uint64_t count_trained_params(std::size_t d_video, std::size_t d_text, std::size_t layers,
                                   const AdapterConfig& config);

// Millions rounded half up to two decimals: 519,552 -> "0.52M", 1,008,384 -> "1.01M".
std::string format_millions(std::uint64_t count);

}  // namespace xma
