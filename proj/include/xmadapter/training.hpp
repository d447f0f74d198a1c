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
#include <filesystem>
#include <functional>
#include <map>
#include <span>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "xmadapter/archive.hpp"
#include "xmadapter/metrics.hpp"
#include "xmadapter/model.hpp"
#include "xmadapter/similarity.hpp"
#include "xmadapter/synthetic.hpp"

namespace xma {

struct TrainConfig {
  double lr = 1e-3;
  std::size_t epochs = 100;
  std::size_t batch_size = 16;
  double warmup_frac = 0.1;
  double weight_decay = 0.2;
  std::uint64_t seed = 42;
  double beta1 = 0.9;
  double beta2 = 0.98;
  double eps = 1e-8;
  unsigned eval_threads = 1;

  void validate() const;
};

std::size_t warmup_steps(std::size_t total_steps, const TrainConfig& cfg);
// Linear warmup to cfg.lr, then cosine decay to 0 at total_steps.
double lr_at(std::size_t step, std::size_t total_steps, const TrainConfig& cfg);

/// Adam with decoupled weight decay on weight matrices (rank >= 2) only.
/// Moment slots are created on first use, for trainable parameters only.
class AdamW {
 public:
  struct Slot {
    Tensor m;
    Tensor v;
    std::size_t steps = 0;
  };

  explicit AdamW(const TrainConfig& cfg);

  void step(std::span<const ParameterPtr> params, double lr);
  const Slot* slot(const std::string& name) const;
  std::size_t slots() const noexcept { return slots_.size(); }

 private:
  double beta1_, beta2_, eps_, weight_decay_;
  std::map<std::string, Slot> slots_;
};

struct Batch {
  FrameBatch frames;
  TokenBatch tokens;
};

// One optimization step on a batch; returns the pre-update loss.
double train_step(const DualEncoderModel& model, const Batch& batch, AdamW& opt, const SimilarityConfig& sim,
                  double lr, Rng& dropout_rng);

// Graph-free encoding and scoring of a whole dataset, [videos x texts].
// max_texts > 0 keeps only the first max_texts captions.
Tensor score_dataset(const DualEncoderModel& model, const Dataset& data, const SimilarityConfig& sim,
                     unsigned threads = 1, std::size_t max_texts = 0);

struct EpochLog {
  std::size_t epoch = 0;
  double loss = 0.0;
  double r1_t2v = 0.0;
  double r1_v2t = 0.0;
  double lr = 0.0;
};

using Snapshot = std::vector<std::pair<std::string, Tensor>>;

// Values of the trainable parameters, in model order.
Snapshot snapshot(const DualEncoderModel& model);
void restore(const DualEncoderModel& model, const Snapshot& snap);

struct FitResult {
  std::vector<EpochLog> log;
  Snapshot best;
  std::size_t best_epoch = 0;  // 0: the initialization
  double best_r1 = 0.0;
};

// Epoch loop with per-epoch validation; `best` holds the parameters with the
// highest validation t2v R@1 (later epochs win ties). The model is left at
// the last epoch's parameters.
FitResult fit(const DualEncoderModel& model, const Dataset& train, const Dataset& val, const TrainConfig& cfg,
              const SimilarityConfig& sim, const std::function<void(const EpochLog&)>& on_epoch = {});

void write_log_csv(std::ostream& out, std::span<const EpochLog> log);

// Hash over every frozen parameter value, in model order.
std::uint64_t frozen_parameter_hash(const DualEncoderModel& model);

class CheckpointError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Trainable parameters plus meta.* shape descriptors.
std::vector<ArchiveEntry> checkpoint_entries(const DualEncoderModel& model, const Snapshot& values);
std::vector<ArchiveEntry> checkpoint_entries(const DualEncoderModel& model);
// Verifies every name and shape before touching the model.
void apply_checkpoint(const DualEncoderModel& model, std::span<const ArchiveEntry> entries);

void save_checkpoint(const std::filesystem::path& path, const DualEncoderModel& model, const Snapshot& values);
void save_checkpoint(const std::filesystem::path& path, const DualEncoderModel& model);
void load_checkpoint(const std::filesystem::path& path, const DualEncoderModel& model);

}  // namespace xma
