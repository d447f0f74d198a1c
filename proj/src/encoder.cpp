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

#include "xmadapter/encoder.hpp"

#include <cmath>
#include <stdexcept>

#include "xmadapter/ops.hpp"

namespace xma {

double EncoderConfig::weight_std(std::size_t fan_in) const {
  return fan_in_init ? 1.0 / std::sqrt(static_cast<double>(fan_in)) : init_std;
}

void EncoderConfig::validate() const {
  const std::string who(modality_name(modality));
  if (layers == 0) throw std::invalid_argument(who + " encoder needs at least one layer");
  if (hidden == 0 || heads == 0 || hidden % heads != 0) {
    throw std::invalid_argument(who + " encoder hidden width " + std::to_string(hidden) +
                                " is not divisible by heads " + std::to_string(heads));
  }
  if (seq_len < 2) throw std::invalid_argument(who + " encoder seq_len must be at least 2");
  if (mlp_ratio == 0) throw std::invalid_argument(who + " encoder mlp_ratio must be positive");
  if (!(init_std >= 0.0)) throw std::invalid_argument(who + " encoder init_std must be non-negative");
  if (modality == Modality::video) {
    if (!proj_out || *proj_out == 0) throw std::invalid_argument("video encoder needs proj_out");
    if (patch_size == 0 || channels == 0) throw std::invalid_argument("video encoder needs a positive patch size");
  } else {
    if (proj_out) throw std::invalid_argument("text encoder must not set proj_out");
    if (vocab_size < 4) throw std::invalid_argument("text encoder vocab_size must be at least 4");
  }
}

EncoderConfig EncoderConfig::toy_video() {
  EncoderConfig c;
  c.modality = Modality::video;
  c.layers = 4;
  c.hidden = 64;
  c.heads = 4;
  c.seq_len = 17;
  c.patch_size = 4;
  c.channels = 3;
  c.proj_out = 32;
  c.causal = false;
  return c;
}

EncoderConfig EncoderConfig::toy_text() {
  EncoderConfig c;
  c.modality = Modality::text;
  c.layers = 4;
  c.hidden = 32;
  c.heads = 4;
  c.seq_len = 16;
  c.vocab_size = 256;
  c.causal = true;
  c.proj_out.reset();
  return c;
}

EncoderConfig EncoderConfig::clip_video() {
  EncoderConfig c = toy_video();
  c.layers = 12;
  c.hidden = 768;
  c.heads = 12;
  c.seq_len = 50;
  c.patch_size = 32;
  c.proj_out = 512;
  c.fan_in_init = false;
  return c;
}

EncoderConfig EncoderConfig::clip_text() {
  EncoderConfig c = toy_text();
  c.layers = 12;
  c.hidden = 512;
  c.heads = 8;
  c.seq_len = 77;
  c.vocab_size = 49408;
  c.fan_in_init = false;
  return c;
}

FrameBatch FrameBatch::select(std::span<const std::size_t> indices) const {
  const std::size_t per_video = values.numel() / videos();
  const std::size_t f = frames();
  Shape shape = values.shape();
  shape[0] = indices.size();
  std::vector<double> out;
  out.reserve(indices.size() * per_video);
  FrameBatch sel;
  for (std::size_t i : indices) {
    if (i >= videos()) throw std::out_of_range("FrameBatch::select index " + std::to_string(i));
    out.insert(out.end(), values.data() + i * per_video, values.data() + (i + 1) * per_video);
    sel.mask.insert(sel.mask.end(), mask.begin() + static_cast<std::ptrdiff_t>(i * f),
                    mask.begin() + static_cast<std::ptrdiff_t>((i + 1) * f));
  }
  sel.values = Tensor(std::move(shape), std::move(out));
  return sel;
}

TokenBatch TokenBatch::select(std::span<const std::size_t> indices) const {
  TokenBatch sel;
  sel.seq_len = seq_len;
  for (std::size_t i : indices) {
    if (i >= texts()) throw std::out_of_range("TokenBatch::select index " + std::to_string(i));
    sel.ids.insert(sel.ids.end(), ids.begin() + static_cast<std::ptrdiff_t>(i * seq_len),
                   ids.begin() + static_cast<std::ptrdiff_t>((i + 1) * seq_len));
    sel.sep_pos.push_back(sep_pos[i]);
  }
  return sel;
}

void TokenBatch::validate(std::size_t vocab_size) const {
  if (ids.size() != texts() * seq_len) throw DimensionError("token batch holds a ragged id matrix");
  for (std::int32_t id : ids) {
    if (id < 0 || static_cast<std::size_t>(id) >= vocab_size) {
      throw std::out_of_range("token id " + std::to_string(id) + " outside vocabulary of " + std::to_string(vocab_size));
    }
  }
  for (std::size_t p : sep_pos) {
    if (p >= seq_len) throw std::out_of_range("sep_pos " + std::to_string(p) + " outside caption of " + std::to_string(seq_len));
  }
}

std::vector<ParamSpec> TransformerLayerWeights::specs(const std::string& prefix, const EncoderConfig& cfg) {
  using Init = ParamSpec::Init;
  const std::size_t d = cfg.hidden;
  const std::size_t inner = d * cfg.mlp_ratio;
  const double std_d = cfg.weight_std(d);
  const double std_inner = cfg.weight_std(inner);
  return {
      {prefix + ".ln1.gamma", {d}, Init::ones, 0.0, false},
      {prefix + ".ln1.beta", {d}, Init::zeros, 0.0, false},
      {prefix + ".attn.wq", {d, d}, Init::normal, std_d, false},
      {prefix + ".attn.bq", {d}, Init::zeros, 0.0, false},
      {prefix + ".attn.wk", {d, d}, Init::normal, std_d, false},
      {prefix + ".attn.bk", {d}, Init::zeros, 0.0, false},
      {prefix + ".attn.wv", {d, d}, Init::normal, std_d, false},
      {prefix + ".attn.bv", {d}, Init::zeros, 0.0, false},
      {prefix + ".attn.wo", {d, d}, Init::normal, std_d, false},
      {prefix + ".attn.bo", {d}, Init::zeros, 0.0, false},
      {prefix + ".ln2.gamma", {d}, Init::ones, 0.0, false},
      {prefix + ".ln2.beta", {d}, Init::zeros, 0.0, false},
      {prefix + ".mlp.fc1.w", {d, inner}, Init::normal, std_d, false},
      {prefix + ".mlp.fc1.b", {inner}, Init::zeros, 0.0, false},
      {prefix + ".mlp.fc2.w", {inner, d}, Init::normal, std_inner, false},
      {prefix + ".mlp.fc2.b", {d}, Init::zeros, 0.0, false},
  };
}

TransformerLayerWeights TransformerLayerWeights::bind(const ParameterTable& t, const std::string& prefix) {
  TransformerLayerWeights w;
  w.ln1_gamma = t.at(prefix + ".ln1.gamma");
  w.ln1_beta = t.at(prefix + ".ln1.beta");
  w.wq = t.at(prefix + ".attn.wq");
  w.bq = t.at(prefix + ".attn.bq");
  w.wk = t.at(prefix + ".attn.wk");
  w.bk = t.at(prefix + ".attn.bk");
  w.wv = t.at(prefix + ".attn.wv");
  w.bv = t.at(prefix + ".attn.bv");
  w.wo = t.at(prefix + ".attn.wo");
  w.bo = t.at(prefix + ".attn.bo");
  w.ln2_gamma = t.at(prefix + ".ln2.gamma");
  w.ln2_beta = t.at(prefix + ".ln2.beta");
  w.fc1_w = t.at(prefix + ".mlp.fc1.w");
  w.fc1_b = t.at(prefix + ".mlp.fc1.b");
  w.fc2_w = t.at(prefix + ".mlp.fc2.w");
  w.fc2_b = t.at(prefix + ".mlp.fc2.b");
  return w;
}

namespace {

// [N x S x d] -> [N*H x S x d/H]
Var split_heads(const Var& x, std::size_t heads) {
  const std::size_t n = x.dim(0), s = x.dim(1), d = x.dim(2), dh = d / heads;
  static constexpr std::size_t kSwap[] = {0, 2, 1, 3};
  return ops::reshape(ops::permute(ops::reshape(x, {n, s, heads, dh}), kSwap), {n * heads, s, dh});
}

// [N*H x S x dh] -> [N x S x H*dh]
Var merge_heads(const Var& x, std::size_t batch, std::size_t heads) {
  const std::size_t s = x.dim(1), dh = x.dim(2);
  static constexpr std::size_t kSwap[] = {0, 2, 1, 3};
  return ops::reshape(ops::permute(ops::reshape(x, {batch, heads, s, dh}), kSwap), {batch, s, heads * dh});
}

std::vector<std::uint8_t> causal_mask(std::size_t groups, std::size_t s) {
  std::vector<std::uint8_t> mask(groups * s * s, 0);
  for (std::size_t g = 0; g < groups; ++g)
    for (std::size_t i = 0; i < s; ++i)
      for (std::size_t j = 0; j <= i; ++j) mask[(g * s + i) * s + j] = 1;
  return mask;
}

std::string layer_prefix(Modality m, std::size_t layer) {
  return std::string(modality_name(m)) + ".layer" + std::to_string(layer);
}

Var run_layers(Var x, const std::vector<TransformerLayerWeights>& layers, const EncoderConfig& cfg,
               std::span<const LayerAdapters> adapters, ForwardContext ctx) {
  if (!adapters.empty() && adapters.size() != layers.size()) {
    throw DimensionError(std::string(modality_name(cfg.modality)) + " encoder has " + std::to_string(layers.size()) +
                         " layers but " + std::to_string(adapters.size()) + " adapter slots were given");
  }
  for (std::size_t i = 0; i < layers.size(); ++i) {
    x = transformer_layer(x, layers[i], cfg, adapters.empty() ? LayerAdapters{} : adapters[i], ctx);
  }
  return x;
}

void check_adapter_width(const AdapterWeights* a, std::size_t d) {
  if (a && a->width != d) {
    throw DimensionError("adapter of width " + std::to_string(a->width) + " attached to a layer of width " +
                         std::to_string(d));
  }
}

}  // namespace

Var multi_head_attention(const Var& x, const TransformerLayerWeights& w, std::size_t heads, bool causal) {
  const std::size_t n = x.dim(0), s = x.dim(1), d = x.dim(2);
  const Var q = split_heads(ops::linear(x, w.wq->var(), w.bq->var()), heads);
  const Var k = split_heads(ops::linear(x, w.wk->var(), w.bk->var()), heads);
  const Var v = split_heads(ops::linear(x, w.wv->var(), w.bv->var()), heads);
  const Var scores = ops::scale(ops::bmm(q, k, true), 1.0 / std::sqrt(static_cast<double>(d / heads)));
  const Var probs = causal ? ops::masked_softmax(scores, causal_mask(n * heads, s)) : ops::softmax(scores);
  const Var context = merge_heads(ops::bmm(probs, v), n, heads);
  return ops::linear(context, w.wo->var(), w.bo->var());
}

Var transformer_layer(const Var& x, const TransformerLayerWeights& w, const EncoderConfig& cfg,
                      LayerAdapters adapters, ForwardContext ctx) {
  if (x.rank() != 3 || x.dim(2) != cfg.hidden) {
    throw DimensionError("transformer layer of width " + std::to_string(cfg.hidden) + " given " + shape_str(x.shape()));
  }
  if (x.dim(1) > cfg.seq_len) {
    throw DimensionError("sequence of " + std::to_string(x.dim(1)) + " exceeds seq_len " + std::to_string(cfg.seq_len));
  }
  check_adapter_width(adapters.attn, cfg.hidden);
  check_adapter_width(adapters.mlp, cfg.hidden);

  Var attn = multi_head_attention(ops::layernorm(x, w.ln1_gamma->var(), w.ln1_beta->var()), w, cfg.heads, cfg.causal);
  if (adapters.attn) attn = adapter_forward(attn, *adapters.attn, ctx);
  const Var h = ops::add(x, attn);

  Var mlp = ops::layernorm(h, w.ln2_gamma->var(), w.ln2_beta->var());
  mlp = ops::linear(ops::gelu(ops::linear(mlp, w.fc1_w->var(), w.fc1_b->var())), w.fc2_w->var(), w.fc2_b->var());
  if (adapters.mlp) mlp = adapter_forward(mlp, *adapters.mlp, ctx);
  return ops::add(h, mlp);
}

std::vector<ParamSpec> VideoEncoder::parameter_specs(const EncoderConfig& cfg) {
  cfg.validate();
  using Init = ParamSpec::Init;
  const std::size_t d = cfg.hidden;
  std::vector<ParamSpec> specs{
      {"video.patch_embed.w", {cfg.patch_dim(), d}, Init::normal, cfg.weight_std(cfg.patch_dim()), false},
      {"video.cls", {d}, Init::normal, cfg.init_std, false},
      {"video.pos", {cfg.seq_len, d}, Init::normal, cfg.init_std, false},
  };
  for (std::size_t l = 1; l <= cfg.layers; ++l) {
    auto layer = TransformerLayerWeights::specs(layer_prefix(Modality::video, l), cfg);
    specs.insert(specs.end(), layer.begin(), layer.end());
  }
  specs.push_back({"video.ln_post.gamma", {d}, Init::ones, 0.0, false});
  specs.push_back({"video.ln_post.beta", {d}, Init::zeros, 0.0, false});
  specs.push_back({"video.proj.w", {d, *cfg.proj_out}, Init::normal, cfg.weight_std(d), false});
  specs.push_back({"video.proj.b", {*cfg.proj_out}, Init::zeros, 0.0, false});
  return specs;
}

VideoEncoder::VideoEncoder(EncoderConfig config, Rng& rng)
    : config_(std::move(config)), table_(parameter_specs(config_), rng) {
  if (config_.modality != Modality::video) throw std::invalid_argument("VideoEncoder needs a video config");
  for (std::size_t l = 1; l <= config_.layers; ++l) {
    layers_.push_back(TransformerLayerWeights::bind(table_, layer_prefix(Modality::video, l)));
  }
}

Var VideoEncoder::embed_frames(const Var& patches) const {
  if (patches.rank() != 3 || patches.dim(2) != config_.patch_dim()) {
    throw DimensionError("video encoder expects [N x M x " + std::to_string(config_.patch_dim()) + "] patches, got " +
                         shape_str(patches.shape()));
  }
  const std::size_t m = patches.dim(1);
  if (m + 1 > config_.seq_len) {
    throw DimensionError(std::to_string(m) + " patches plus CLS exceed seq_len " + std::to_string(config_.seq_len));
  }
  Var x = ops::linear(patches, table_.at("video.patch_embed.w")->var());
  x = ops::prepend_row(x, table_.at("video.cls")->var());
  return ops::add(x, ops::leading_rows(table_.at("video.pos")->var(), m + 1));
}

Var VideoEncoder::encode_frames(const Var& patches, std::span<const LayerAdapters> adapters, ForwardContext ctx) const {
  Var x = run_layers(embed_frames(patches), layers_, config_, adapters, ctx);
  const std::vector<std::size_t> cls_rows(x.dim(0), 0);
  x = ops::take_rows(x, cls_rows);
  x = ops::layernorm(x, table_.at("video.ln_post.gamma")->var(), table_.at("video.ln_post.beta")->var());
  return ops::linear(x, table_.at("video.proj.w")->var(), table_.at("video.proj.b")->var());
}

Var VideoEncoder::encode(const FrameBatch& batch, std::span<const LayerAdapters> adapters, ForwardContext ctx) const {
  const Tensor& v = batch.values;
  if (v.rank() != 4) throw DimensionError("frame batch must be [videos x frames x M x patch_dim], got " + shape_str(v.shape()));
  if (batch.mask.size() != v.dim(0) * v.dim(1)) throw DimensionError("frame mask does not match frame batch");
  const std::size_t n = v.dim(0), f = v.dim(1);
  const Var patches(v.reshaped({n * f, v.dim(2), v.dim(3)}));
  return ops::reshape(encode_frames(patches, adapters, ctx), {n, f, config_.output_width()});
}

std::vector<ParamSpec> TextEncoder::parameter_specs(const EncoderConfig& cfg) {
  cfg.validate();
  using Init = ParamSpec::Init;
  const std::size_t d = cfg.hidden;
  std::vector<ParamSpec> specs{
      {"text.token_embed", {cfg.vocab_size, d}, Init::normal, cfg.init_std, false},
      {"text.pos", {cfg.seq_len, d}, Init::normal, cfg.init_std, false},
  };
  for (std::size_t l = 1; l <= cfg.layers; ++l) {
    auto layer = TransformerLayerWeights::specs(layer_prefix(Modality::text, l), cfg);
    specs.insert(specs.end(), layer.begin(), layer.end());
  }
  specs.push_back({"text.ln_final.gamma", {d}, Init::ones, 0.0, false});
  specs.push_back({"text.ln_final.beta", {d}, Init::zeros, 0.0, false});
  return specs;
}

TextEncoder::TextEncoder(EncoderConfig config, Rng& rng)
    : config_(std::move(config)), table_(parameter_specs(config_), rng) {
  if (config_.modality != Modality::text) throw std::invalid_argument("TextEncoder needs a text config");
  for (std::size_t l = 1; l <= config_.layers; ++l) {
    layers_.push_back(TransformerLayerWeights::bind(table_, layer_prefix(Modality::text, l)));
  }
}

Var TextEncoder::embed_tokens(const TokenBatch& batch) const {
  batch.validate(config_.vocab_size);
  if (batch.seq_len > config_.seq_len) {
    throw DimensionError("caption length " + std::to_string(batch.seq_len) + " exceeds seq_len " +
                         std::to_string(config_.seq_len));
  }
  const Var x = ops::embedding(table_.at("text.token_embed")->var(), batch.ids, batch.texts(), batch.seq_len);
  return ops::add(x, ops::leading_rows(table_.at("text.pos")->var(), batch.seq_len));
}

Var TextEncoder::encode(const TokenBatch& batch, std::span<const LayerAdapters> adapters, ForwardContext ctx) const {
  Var x = run_layers(embed_tokens(batch), layers_, config_, adapters, ctx);
  x = ops::take_rows(x, batch.sep_pos);
  return ops::layernorm(x, table_.at("text.ln_final.gamma")->var(), table_.at("text.ln_final.beta")->var());
}

}  // namespace xma
