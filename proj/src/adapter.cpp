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

#include "xmadapter/adapter.hpp"

#include <cstdio>

#include <algorithm>
#include <stdexcept>

#include "xmadapter/ops.hpp"

namespace xma {

void AdapterConfig::validate(std::size_t d_video, std::size_t d_text) const {
  if (bottleneck == 0) throw std::invalid_argument("adapter.r must be at least 1");
  if (share_width > std::min(d_video, d_text)) {
    throw std::invalid_argument("adapter.d_s = " + std::to_string(share_width) + " exceeds min(d_v, d_t) = " +
                                std::to_string(std::min(d_video, d_text)));
  }
  if (!(dropout_p >= 0.0 && dropout_p < 1.0)) throw std::invalid_argument("adapter.dropout_p must lie in [0, 1)");
  if (!(init_std >= 0.0)) throw std::invalid_argument("adapter.init_std must be non-negative");
}

std::size_t AdapterWeights::share_width() const { return share ? share->weight->value().dim(1) : 0; }

Var adapter_forward(const Var& x, const AdapterWeights& w, ForwardContext ctx) {
  if (x.shape().back() != w.width) {
    throw DimensionError("adapter expects last axis " + std::to_string(w.width) + ", got input " +
                         shape_str(x.shape()));
  }
  const std::size_t unique = w.w_up_unique ? w.w_up_unique->value().dim(1) : 0;
  if (unique + w.share_width() != w.width) {
    throw DimensionError("adapter up-projection covers " + std::to_string(unique + w.share_width()) +
                         " columns of width " + std::to_string(w.width) + " (missing shared slice?)");
  }
  if (ctx.training && w.dropout_p > 0.0 && !ctx.rng) {
    throw std::invalid_argument("adapter dropout in training mode needs an rng");
  }

  Var z = w.b_down ? ops::linear(x, w.w_down->var(), w.b_down->var()) : ops::linear(x, w.w_down->var());
  z = ops::gelu(z);
  if (ctx.training && w.dropout_p > 0.0) z = ops::dropout(z, w.dropout_p, *ctx.rng, true);

  Var up;
  if (w.w_up_unique && w.share) {
    up = ops::concat_last(ops::linear(z, w.w_up_unique->var()), ops::linear(z, w.share->weight->var()));
  } else if (w.w_up_unique) {
    up = ops::linear(z, w.w_up_unique->var());
  } else {
    up = ops::linear(z, w.share->weight->var());
  }
  if (w.b_up) up = ops::add(up, w.b_up->var());
  return ops::add(x, up);
}

namespace {

constexpr std::string_view point_name(InsertionPoint p) { return p == InsertionPoint::attn ? "attn" : "mlp"; }

constexpr InsertionPoint kPoints[] = {InsertionPoint::attn, InsertionPoint::mlp};

std::size_t pair_index(std::size_t layer, InsertionPoint p) {
  return (layer - 1) * 2 + (p == InsertionPoint::attn ? 0 : 1);
}

void add_modality_specs(std::vector<ParamSpec>& specs, Modality m, std::size_t layer, InsertionPoint p,
                        std::size_t d, const AdapterConfig& cfg) {
  const std::size_t r = cfg.bottleneck;
  using Init = ParamSpec::Init;
  specs.push_back({adapter_param_name(m, layer, p, "w_down"), {d, r}, Init::normal, cfg.init_std, true});
  if (cfg.use_bias) specs.push_back({adapter_param_name(m, layer, p, "b_down"), {r}, Init::zeros, 0.0, true});
  if (d > cfg.share_width) {
    specs.push_back(
        {adapter_param_name(m, layer, p, "w_up_unique"), {r, d - cfg.share_width}, Init::normal, cfg.init_std, true});
  }
  if (cfg.use_bias) specs.push_back({adapter_param_name(m, layer, p, "b_up"), {d}, Init::zeros, 0.0, true});
}

AdapterWeights bind_weights(const ParameterTable& table, Modality m, std::size_t layer, InsertionPoint p, std::size_t d,
                    const AdapterConfig& cfg, std::shared_ptr<SharedUp> share) {
  AdapterWeights w;
  w.width = d;
  w.dropout_p = cfg.dropout_p;
  w.w_down = table.at(adapter_param_name(m, layer, p, "w_down"));
  if (cfg.use_bias) {
    w.b_down = table.at(adapter_param_name(m, layer, p, "b_down"));
    w.b_up = table.at(adapter_param_name(m, layer, p, "b_up"));
  }
  if (d > cfg.share_width) w.w_up_unique = table.at(adapter_param_name(m, layer, p, "w_up_unique"));
  w.share = std::move(share);
  return w;
}

}  // namespace

std::string adapter_param_name(Modality modality, std::size_t layer, InsertionPoint point, std::string_view leaf) {
  return std::string(modality_name(modality)) + ".layer" + std::to_string(layer) + "." +
         std::string(point_name(point)) + "_adapter." + std::string(leaf);
}

std::string shared_param_name(std::size_t layer, InsertionPoint point) {
  return "shared.layer" + std::to_string(layer) + "." + std::string(point_name(point)) + ".w_up_share";
}

std::vector<ParamSpec> AdapterLayout::parameter_specs(std::size_t layers, std::size_t d_video, std::size_t d_text,
                                                      const AdapterConfig& cfg) {
  cfg.validate(d_video, d_text);
  std::vector<ParamSpec> specs;
  for (std::size_t layer = 1; layer <= layers; ++layer) {
    for (InsertionPoint p : kPoints) {
      add_modality_specs(specs, Modality::video, layer, p, d_video, cfg);
      add_modality_specs(specs, Modality::text, layer, p, d_text, cfg);
      if (cfg.share_width > 0) {
        specs.push_back({shared_param_name(layer, p), {cfg.bottleneck, cfg.share_width}, ParamSpec::Init::normal,
                         cfg.init_std, true});
      }
    }
  }
  return specs;
}

AdapterLayout::AdapterLayout(std::size_t layers, std::size_t d_video, std::size_t d_text, AdapterConfig config)
    : layers_(layers), config_(config) {
  if (layers == 0) throw std::invalid_argument("adapter layout needs at least one layer");
  std::vector<ParamSpec> specs = parameter_specs(layers, d_video, d_text, config_);
  for (ParamSpec& s : specs) s.init = ParamSpec::Init::zeros;
  Rng unused(0);
  table_ = ParameterTable(specs, unused);

  pairs_.reserve(2 * layers);
  for (std::size_t layer = 1; layer <= layers; ++layer) {
    for (InsertionPoint p : kPoints) {
      CrossModalAdapterPair pair;
      if (config_.share_width > 0) {
        pair.shared = std::make_shared<SharedUp>(SharedUp{table_.at(shared_param_name(layer, p))});
      }
      pair.video = bind_weights(table_, Modality::video, layer, p, d_video, config_, pair.shared);
      pair.text = bind_weights(table_, Modality::text, layer, p, d_text, config_, pair.shared);
      pairs_.push_back(std::move(pair));
    }
  }
}

const CrossModalAdapterPair& AdapterLayout::pair(std::size_t layer, InsertionPoint point) const {
  if (layer == 0 || layer > layers_) throw std::out_of_range("adapter layer " + std::to_string(layer) + " out of range");
  return pairs_[pair_index(layer, point)];
}

const AdapterWeights& AdapterLayout::weights(Modality modality, std::size_t layer, InsertionPoint point) const {
  const CrossModalAdapterPair& p = pair(layer, point);
  return modality == Modality::video ? p.video : p.text;
}

void init_adapters(AdapterLayout& layout, const AdapterConfig& config, Rng& rng) {
  for (const ParameterPtr& p : layout.parameters()) {
    Tensor& v = p->mutable_value();
    if (v.rank() >= 2) {
      for (double& x : v.values()) x = config.init_std * rng.normal();
    } else {
      v.fill(0.0);
    }
  }
}

std::uint64_t count_trained_params(std::size_t d_video, std::size_t d_text, std::size_t layers,
                                   const AdapterConfig& config) {
  config.validate(d_video, d_text);
  const std::uint64_t r = config.bottleneck;
  const std::uint64_t ds = config.share_width;
  const std::uint64_t bias = config.use_bias ? 1 : 0;
  auto side = [&](std::uint64_t d) { return d * r + bias * r + r * (d - ds) + bias * d; };
  const std::uint64_t per_point = side(d_video) + side(d_text) + r * ds;
  return 2 * static_cast<std::uint64_t>(layers) * per_point;
}

std::string format_millions(std::uint64_t count) {
  const std::uint64_t hundredths = (count + 5000) / 10000;
  char buf[32];
  std::snprintf(buf, sizeof buf, "%llu.%02lluM", static_cast<unsigned long long>(hundredths / 100),
                static_cast<unsigned long long>(hundredths % 100));
  return buf;
}

}  // namespace xma
