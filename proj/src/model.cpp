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

#include "xmadapter/model.hpp"

#include <stdexcept>

namespace xma {

namespace {

constexpr std::uint64_t kVideoStream = 1;
constexpr std::uint64_t kTextStream = 2;

Rng stream(std::uint64_t seed, std::uint64_t id) { return Rng(seed).fork(id); }

// Lets a temporary generator bind to an Rng& for the duration of one full expression.
Rng& lvalue(Rng&& rng) { return rng; }

}  // namespace

void ModelConfig::validate() const {
  video.validate();
  text.validate();
  if (video.modality != Modality::video || text.modality != Modality::text) {
    throw std::invalid_argument("model config needs one video and one text encoder");
  }
  if (video.output_width() != text.hidden) {
    throw std::invalid_argument("video projection width " + std::to_string(video.output_width()) +
                                " must equal text width " + std::to_string(text.hidden));
  }
  if (adapter) {
    if (video.layers != text.layers) {
      throw std::invalid_argument("cross-modal adapters pair layers positionally; encoders have " +
                                  std::to_string(video.layers) + " and " + std::to_string(text.layers) + " layers");
    }
    adapter->validate(video.hidden, text.hidden);
  }
}

std::vector<ParamSpec> DualEncoderModel::parameter_specs(const ModelConfig& config) {
  config.validate();
  std::vector<ParamSpec> specs = VideoEncoder::parameter_specs(config.video);
  auto text = TextEncoder::parameter_specs(config.text);
  specs.insert(specs.end(), text.begin(), text.end());
  if (config.adapter) {
    auto adapters = AdapterLayout::parameter_specs(config.video.layers, config.video.hidden, config.text.hidden,
                                                   *config.adapter);
    specs.insert(specs.end(), adapters.begin(), adapters.end());
  }
  return specs;
}

ParameterCensus DualEncoderModel::census(const ModelConfig& config) {
  ParameterCensus c;
  for (const ParamSpec& s : parameter_specs(config)) {
    c.total += s.numel();
    if (s.trainable) c.trainable += s.numel();
  }
  return c;
}

DualEncoderModel::DualEncoderModel(ModelConfig config)
    : config_((config.validate(), std::move(config))),
      video_(config_.video, lvalue(stream(config_.backbone_seed, kVideoStream))),
      text_(config_.text, lvalue(stream(config_.backbone_seed, kTextStream))) {
  if (config_.adapter) {
    adapters_ = std::make_unique<AdapterLayout>(config_.video.layers, config_.video.hidden, config_.text.hidden,
                                                *config_.adapter);
    Rng rng(config_.adapter_seed);
    init_adapters(*adapters_, *config_.adapter, rng);
    for (std::size_t l = 1; l <= config_.video.layers; ++l) {
      video_hooks_.push_back({&adapters_->weights(Modality::video, l, InsertionPoint::attn),
                              &adapters_->weights(Modality::video, l, InsertionPoint::mlp)});
      text_hooks_.push_back({&adapters_->weights(Modality::text, l, InsertionPoint::attn),
                             &adapters_->weights(Modality::text, l, InsertionPoint::mlp)});
    }
  }
}

Var DualEncoderModel::encode_videos(const FrameBatch& batch, ForwardContext ctx) const {
  return video_.encode(batch, video_hooks_, ctx);
}

Var DualEncoderModel::encode_texts(const TokenBatch& batch, ForwardContext ctx) const {
  return text_.encode(batch, text_hooks_, ctx);
}

std::vector<ParameterPtr> DualEncoderModel::parameters() const {
  std::vector<ParameterPtr> all = video_.parameters().all();
  const auto& text = text_.parameters().all();
  all.insert(all.end(), text.begin(), text.end());
  if (adapters_) all.insert(all.end(), adapters_->parameters().begin(), adapters_->parameters().end());
  return all;
}

std::vector<ParameterPtr> DualEncoderModel::trainable_parameters() const {
  std::vector<ParameterPtr> out;
  for (const auto& p : parameters())
    if (p->trainable()) out.push_back(p);
  return out;
}

std::vector<std::string> DualEncoderModel::trainable_set() const {
  std::vector<std::string> names;
  for (const auto& p : trainable_parameters()) names.push_back(p->name());
  return names;
}

ParameterPtr DualEncoderModel::find(std::string_view name) const {
  for (const auto& p : parameters())
    if (p->name() == name) return p;
  return nullptr;
}

void DualEncoderModel::zero_grad() const {
  for (const auto& p : parameters()) p->zero_grad();
}

}  // namespace xma
