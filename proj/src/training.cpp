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

#include "xmadapter/training.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <numbers>
#include <numeric>
#include <ostream>
#include <set>

#include "xmadapter/ops.hpp"

namespace xma {

namespace {

constexpr std::uint64_t kDropoutStream = 0xD0;
constexpr std::size_t kVideoChunk = 16;
constexpr std::size_t kTextChunk = 64;

std::vector<std::size_t> range(std::size_t begin, std::size_t end) {
  std::vector<std::size_t> out(end - begin);
  std::iota(out.begin(), out.end(), begin);
  return out;
}

ArchiveEntry meta(const std::string& key, double value) { return {"meta." + key, Tensor::scalar(value), DType::f64}; }

std::vector<ArchiveEntry> meta_entries(const DualEncoderModel& model) {
  const auto& cfg = model.config();
  std::vector<ArchiveEntry> out = {
      meta("layers", static_cast<double>(cfg.video.layers)),
      meta("video_width", static_cast<double>(cfg.video.hidden)),
      meta("text_width", static_cast<double>(cfg.text.hidden)),
  };
  if (cfg.adapter) {
    out.push_back(meta("bottleneck", static_cast<double>(cfg.adapter->bottleneck)));
    out.push_back(meta("share_width", static_cast<double>(cfg.adapter->share_width)));
    out.push_back(meta("use_bias", cfg.adapter->use_bias ? 1.0 : 0.0));
  }
  return out;
}

}  // namespace

void TrainConfig::validate() const {
  if (!(lr >= 0.0) || !std::isfinite(lr)) throw std::invalid_argument("lr must be a finite value >= 0");
  if (batch_size < 2) throw std::invalid_argument("batch_size must be at least 2");
  if (!(warmup_frac >= 0.0 && warmup_frac < 1.0)) throw std::invalid_argument("warmup_frac must be in [0, 1)");
  if (!(weight_decay >= 0.0) || !std::isfinite(weight_decay)) {
    throw std::invalid_argument("weight_decay must be a finite value >= 0");
  }
  if (!(beta1 >= 0.0 && beta1 < 1.0) || !(beta2 >= 0.0 && beta2 < 1.0)) {
    throw std::invalid_argument("adam betas must be in [0, 1)");
  }
  if (!(eps > 0.0)) throw std::invalid_argument("eps must be positive");
}

std::size_t warmup_steps(std::size_t total_steps, const TrainConfig& cfg) {
  return static_cast<std::size_t>(std::ceil(cfg.warmup_frac * static_cast<double>(total_steps)));
}

double lr_at(std::size_t step, std::size_t total_steps, const TrainConfig& cfg) {
  if (step > total_steps) {
    throw std::out_of_range("step " + std::to_string(step) + " beyond " + std::to_string(total_steps) + " steps");
  }
  const std::size_t warm = warmup_steps(total_steps, cfg);
  if (step < warm) return cfg.lr * static_cast<double>(step) / static_cast<double>(warm);
  if (total_steps == warm) return cfg.lr;
  const double progress = static_cast<double>(step - warm) / static_cast<double>(total_steps - warm);
  return std::max(0.0, cfg.lr * 0.5 * (1.0 + std::cos(std::numbers::pi * progress)));
}

AdamW::AdamW(const TrainConfig& cfg)
    : beta1_(cfg.beta1), beta2_(cfg.beta2), eps_(cfg.eps), weight_decay_(cfg.weight_decay) {}

void AdamW::step(std::span<const ParameterPtr> params, double lr) {
  for (const auto& p : params) {
    if (!p->trainable() || !p->has_grad()) continue;
    auto [it, fresh] = slots_.try_emplace(p->name());
    Slot& s = it->second;
    if (fresh) {
      s.m = Tensor(p->value().shape());
      s.v = Tensor(p->value().shape());
    }
    ++s.steps;
    const double c1 = 1.0 - std::pow(beta1_, static_cast<double>(s.steps));
    const double c2 = 1.0 - std::pow(beta2_, static_cast<double>(s.steps));
    const bool decay = p->value().rank() >= 2 && weight_decay_ > 0.0;
    const Tensor& g = p->grad();
    Tensor& w = p->mutable_value();
    for (std::size_t i = 0; i < w.numel(); ++i) {
      s.m[i] = beta1_ * s.m[i] + (1.0 - beta1_) * g[i];
      s.v[i] = beta2_ * s.v[i] + (1.0 - beta2_) * g[i] * g[i];
      if (decay) w[i] -= lr * weight_decay_ * w[i];
      w[i] -= lr * (s.m[i] / c1) / (std::sqrt(s.v[i] / c2) + eps_);
    }
    if (const std::size_t bad = w.first_non_finite(); bad != w.numel()) {
      throw NonFiniteError("parameter " + p->name() + " became non-finite at index " + std::to_string(bad));
    }
  }
}

const AdamW::Slot* AdamW::slot(const std::string& name) const {
  auto it = slots_.find(name);
  return it == slots_.end() ? nullptr : &it->second;
}

double train_step(const DualEncoderModel& model, const Batch& batch, AdamW& opt, const SimilarityConfig& sim,
                  double lr, Rng& dropout_rng) {
  const ForwardContext ctx{&dropout_rng, true};
  Var frames = model.encode_videos(batch.frames, ctx);
  Var texts = model.encode_texts(batch.tokens, ctx);
  const SimilarityMap map = similarity_matrix(texts, FrameFeatures{frames, batch.frames.mask}, sim);
  Var loss = contrastive_loss(map);
  const double value = loss.value().item();
  backward(loss);
  const auto params = model.trainable_parameters();
  opt.step(params, lr);
  model.zero_grad();
  return value;
}

Tensor score_dataset(const DualEncoderModel& model, const Dataset& data, const SimilarityConfig& sim,
                     unsigned threads, std::size_t max_texts) {
  sim.validate();
  const std::size_t nv = data.frames.videos();
  const std::size_t nt = max_texts ? std::min(max_texts, data.size()) : data.size();
  if (nv == 0 || nt == 0) throw std::invalid_argument("cannot score an empty dataset");
  const NoGradGuard no_grad;
  const ForwardContext ctx{nullptr, false};

  std::vector<double> frames;
  for (std::size_t b = 0; b < nv; b += kVideoChunk) {
    const auto idx = range(b, std::min(nv, b + kVideoChunk));
    const Var f = model.encode_videos(data.frames.select(idx), ctx);
    frames.insert(frames.end(), f.value().values().begin(), f.value().values().end());
  }
  std::vector<double> texts;
  for (std::size_t b = 0; b < nt; b += kTextChunk) {
    const auto idx = range(b, std::min(nt, b + kTextChunk));
    const Var t = model.encode_texts(data.tokens.select(idx), ctx);
    texts.insert(texts.end(), t.value().values().begin(), t.value().values().end());
  }
  const std::size_t F = data.frames.frames();
  const std::size_t D = frames.size() / (nv * F);
  const Tensor f({nv, F, D}, std::move(frames));
  const Tensor t({nt, D}, std::move(texts));
  return similarity_scores(t, f, data.frames.mask, sim.tau, threads);
}

Snapshot snapshot(const DualEncoderModel& model) {
  Snapshot out;
  for (const auto& p : model.trainable_parameters()) out.emplace_back(p->name(), p->value());
  return out;
}

void restore(const DualEncoderModel& model, const Snapshot& snap) {
  for (const auto& [name, value] : snap) {
    const auto p = model.find(name);
    if (!p) throw CheckpointError("model has no parameter named " + name);
    p->assign(value);
  }
}

FitResult fit(const DualEncoderModel& model, const Dataset& train, const Dataset& val, const TrainConfig& cfg,
              const SimilarityConfig& sim, const std::function<void(const EpochLog&)>& on_epoch) {
  cfg.validate();
  sim.validate();
  if (train.size() == 0) throw std::invalid_argument("training set is empty");
  const Dataset& held_out = val.size() ? val : train;

  FitResult result;
  result.best = snapshot(model);
  result.best_r1 = evaluate(score_dataset(model, held_out, sim, cfg.eval_threads), Direction::t2v).recall(1);
  if (cfg.epochs == 0) return result;

  const std::size_t per_epoch = make_batches(train.size(), cfg.batch_size, cfg.seed, 0).size();
  const std::size_t total = per_epoch * cfg.epochs;
  AdamW opt(cfg);
  Rng dropout_rng = Rng(cfg.seed).fork(kDropoutStream);
  std::size_t step = 0;
  for (std::size_t epoch = 1; epoch <= cfg.epochs; ++epoch) {
    EpochLog entry;
    entry.epoch = epoch;
    double loss_sum = 0.0;
    const auto batches = make_batches(train.size(), cfg.batch_size, cfg.seed, epoch);
    for (const auto& idx : batches) {
      entry.lr = lr_at(step, total, cfg);
      const Batch batch{train.frames.select(idx), train.tokens.select(idx)};
      loss_sum += train_step(model, batch, opt, sim, entry.lr, dropout_rng);
      ++step;
    }
    entry.loss = loss_sum / static_cast<double>(batches.size());
    const Tensor scores = score_dataset(model, held_out, sim, cfg.eval_threads);
    entry.r1_t2v = evaluate(scores, Direction::t2v).recall(1);
    entry.r1_v2t = evaluate(scores, Direction::v2t).recall(1);
    result.log.push_back(entry);
    if (entry.r1_t2v >= result.best_r1) {
      result.best_r1 = entry.r1_t2v;
      result.best_epoch = epoch;
      result.best = snapshot(model);
    }
    if (on_epoch) on_epoch(entry);
  }
  return result;
}

void write_log_csv(std::ostream& out, std::span<const EpochLog> log) {
  out << "epoch,loss,r1_t2v,r1_v2t,lr\n";
  char buf[160];
  for (const auto& e : log) {
    std::snprintf(buf, sizeof buf, "%zu,%.9g,%.6g,%.6g,%.9g\n", e.epoch, e.loss, e.r1_t2v, e.r1_v2t, e.lr);
    out << buf;
  }
}

std::uint64_t frozen_parameter_hash(const DualEncoderModel& model) {
  std::uint64_t h = 1469598103934665603ull;
  for (const auto& p : model.parameters()) {
    if (p->trainable()) continue;
    h ^= value_hash(p->value());
    h *= 1099511628211ull;
  }
  return h;
}

std::vector<ArchiveEntry> checkpoint_entries(const DualEncoderModel& model, const Snapshot& values) {
  std::vector<ArchiveEntry> out;
  for (const auto& [name, value] : values) out.push_back({name, value, DType::f64});
  auto m = meta_entries(model);
  out.insert(out.end(), m.begin(), m.end());
  return out;
}

std::vector<ArchiveEntry> checkpoint_entries(const DualEncoderModel& model) {
  return checkpoint_entries(model, snapshot(model));
}

void apply_checkpoint(const DualEncoderModel& model, std::span<const ArchiveEntry> entries) {
  std::map<std::string, const ArchiveEntry*> by_name;
  for (const auto& e : entries) by_name[e.name] = &e;

  const auto params = model.trainable_parameters();
  std::set<std::string> expected;
  for (const auto& p : params) {
    expected.insert(p->name());
    auto it = by_name.find(p->name());
    if (it == by_name.end()) throw CheckpointError("checkpoint is missing tensor " + p->name());
    if (it->second->value.shape() != p->value().shape()) {
      throw CheckpointError("checkpoint tensor " + p->name() + " has shape " + shape_str(it->second->value.shape()) +
                            ", model expects " + shape_str(p->value().shape()));
    }
  }
  for (const auto& m : meta_entries(model)) {
    expected.insert(m.name);
    auto it = by_name.find(m.name);
    if (it == by_name.end()) throw CheckpointError("checkpoint is missing tensor " + m.name);
    if (it->second->value.numel() != 1 || it->second->value[0] != m.value[0]) {
      throw CheckpointError("checkpoint tensor " + m.name + " does not match the model configuration");
    }
  }
  for (const auto& e : entries) {
    if (!expected.count(e.name)) throw CheckpointError("checkpoint has unexpected tensor " + e.name);
  }
  for (const auto& p : params) p->assign(by_name.at(p->name())->value);
}

void save_checkpoint(const std::filesystem::path& path, const DualEncoderModel& model, const Snapshot& values) {
  write_archive(path, checkpoint_entries(model, values));
}

void save_checkpoint(const std::filesystem::path& path, const DualEncoderModel& model) {
  write_archive(path, checkpoint_entries(model));
}

void load_checkpoint(const std::filesystem::path& path, const DualEncoderModel& model) {
  apply_checkpoint(model, read_archive(path));
}

}  // namespace xma
