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
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "xmadapter/adapter.hpp"
#include "xmadapter/module.hpp"
#include "xmadapter/parameter.hpp"

namespace xma {

/// Shape of one pre-LN transformer encoder.
struct EncoderConfig {
  Modality modality = Modality::video;
  std::size_t layers = 4;
  std::size_t hidden = 64;
  std::size_t heads = 4;
  // Video: patches + 1 (CLS). Text: caption length.
  std::size_t seq_len = 17;
  std::size_t mlp_ratio = 4;
  // Embedding tables and CLS use init_std. Weight matrices use 1/sqrt(fan_in)
  // when fan_in_init is set, init_std otherwise.
  double init_std = 0.02;
  bool fan_in_init = true;

  // video only
  std::size_t patch_size = 4;
  std::size_t channels = 3;
  std::optional<std::size_t> proj_out = 32;

  // text only
  std::size_t vocab_size = 256;
  bool causal = true;

  std::size_t patches() const { return seq_len - 1; }
  std::size_t patch_dim() const { return patch_size * patch_size * channels; }
  std::size_t output_width() const { return proj_out.value_or(hidden); }
  double weight_std(std::size_t fan_in) const;

  void validate() const;

  static EncoderConfig toy_video();
  static EncoderConfig toy_text();
  // Full-size shapes (ViT-B/32 video tower, 512-wide text tower), for counting only.
  static EncoderConfig clip_video();
  static EncoderConfig clip_text();
};

/// Patch vectors for a batch of videos, [videos x frames x patches x patch_dim],
/// with a per-frame validity flag.
struct FrameBatch {
  Tensor values;
  std::vector<std::uint8_t> mask;  // videos * frames

  std::size_t videos() const { return values.dim(0); }
  std::size_t frames() const { return values.dim(1); }
  FrameBatch select(std::span<const std::size_t> indices) const;
};

/// Token ids for a batch of captions. Position 0 holds [CLS]; sep_pos[i] holds [SEP].
struct TokenBatch {
  static constexpr std::int32_t kPad = 0;
  static constexpr std::int32_t kCls = 1;
  static constexpr std::int32_t kSep = 2;

  std::size_t seq_len = 0;
  std::vector<std::int32_t> ids;    // texts * seq_len
  std::vector<std::size_t> sep_pos;  // per text

  std::size_t texts() const { return sep_pos.size(); }
  TokenBatch select(std::span<const std::size_t> indices) const;
  void validate(std::size_t vocab_size) const;
};

struct TransformerLayerWeights {
  ParameterPtr ln1_gamma, ln1_beta;
  ParameterPtr wq, bq, wk, bk, wv, bv, wo, bo;
  ParameterPtr ln2_gamma, ln2_beta;
  ParameterPtr fc1_w, fc1_b, fc2_w, fc2_b;

  static std::vector<ParamSpec> specs(const std::string& prefix, const EncoderConfig& config);
  static TransformerLayerWeights bind(const ParameterTable& table, const std::string& prefix);
};

// Adapters attached to one layer; null means the sub-layer output passes through unchanged.
struct LayerAdapters {
  const AdapterWeights* attn = nullptr;
  const AdapterWeights* mlp = nullptr;
};

// Standard multi-head softmax attention over x [N x S x d].
Var multi_head_attention(const Var& x, const TransformerLayerWeights& w, std::size_t heads, bool causal);

/// One pre-LN layer with optional adapters inside the residual branches:
///   h   = x + A_attn(MSA(LN(x)))
///   out = h + A_mlp(MLP(LN(h)))
Var transformer_layer(const Var& x, const TransformerLayerWeights& w, const EncoderConfig& cfg,
                      LayerAdapters adapters, ForwardContext ctx);

class VideoEncoder {
 public:
  VideoEncoder(EncoderConfig config, Rng& rng);

  static std::vector<ParamSpec> parameter_specs(const EncoderConfig& config);

  const EncoderConfig& config() const noexcept { return config_; }
  const ParameterTable& parameters() const noexcept { return table_; }
  const TransformerLayerWeights& layer(std::size_t i) const { return layers_.at(i); }

  // [N x M x patch_dim] -> [N x (M+1) x d]: patch projection, CLS in front, positions added.
  Var embed_frames(const Var& patches) const;
  // [N x M x patch_dim] -> [N x D_t], each frame encoded on its own.
  Var encode_frames(const Var& patches, std::span<const LayerAdapters> adapters, ForwardContext ctx) const;
  // -> [videos x frames x D_t]
  Var encode(const FrameBatch& batch, std::span<const LayerAdapters> adapters, ForwardContext ctx) const;

 private:
  EncoderConfig config_;
  ParameterTable table_;
  std::vector<TransformerLayerWeights> layers_;
};

class TextEncoder {
 public:
  TextEncoder(EncoderConfig config, Rng& rng);

  static std::vector<ParamSpec> parameter_specs(const EncoderConfig& config);

  const EncoderConfig& config() const noexcept { return config_; }
  const ParameterTable& parameters() const noexcept { return table_; }
  const TransformerLayerWeights& layer(std::size_t i) const { return layers_.at(i); }

  // -> [texts x S x d]
  Var embed_tokens(const TokenBatch& batch) const;
  // -> [texts x d], the final-LN feature of each [SEP] position.
  Var encode(const TokenBatch& batch, std::span<const LayerAdapters> adapters, ForwardContext ctx) const;

 private:
  EncoderConfig config_;
  ParameterTable table_;
  std::vector<TransformerLayerWeights> layers_;
};

}  // namespace xma
