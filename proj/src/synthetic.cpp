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

#include "xmadapter/synthetic.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <set>
#include <stdexcept>
#include <string>

#include "xmadapter/rng.hpp"

namespace xma {

namespace {

constexpr std::uint64_t kPrototypeStream = 1;
constexpr std::uint64_t kComboStream = 2;
constexpr std::uint64_t kFrameStream = 3;

void require(bool ok, const std::string& message) {
  if (!ok) throw std::invalid_argument(message);
}

// Number of k-subsets of n, saturating at `cap`.
std::size_t choose_capped(std::size_t n, std::size_t k, std::size_t cap) {
  if (k > n) return 0;
  double c = 1.0;
  for (std::size_t i = 0; i < k; ++i) {
    c = c * static_cast<double>(n - i) / static_cast<double>(i + 1);
    if (c >= static_cast<double>(cap)) return cap;
  }
  return static_cast<std::size_t>(std::llround(c));
}

// k distinct concepts from `pool`, ascending.
std::vector<std::size_t> draw(std::vector<std::size_t> pool, std::size_t k, Rng& rng) {
  for (std::size_t i = 0; i < k; ++i) std::swap(pool[i], pool[i + rng.index(pool.size() - i)]);
  pool.resize(k);
  std::sort(pool.begin(), pool.end());
  return pool;
}

std::size_t as_index(double v, const std::string& what) {
  if (!(v >= 0.0) || v != std::floor(v) || v > 1e15) throw std::invalid_argument("dataset entry " + what + " holds a non-index value");
  return static_cast<std::size_t>(v);
}

}  // namespace

std::size_t SyntheticSpec::val_pairs() const {
  return static_cast<std::size_t>(std::llround(static_cast<double>(n_pairs) * val_fraction));
}

void SyntheticSpec::validate(std::size_t vocab_size) const {
  require(n_pairs >= 2, "n_pairs must be at least 2");
  require(n_concepts >= 1, "n_concepts must be at least 1");
  require(kFirstConceptToken + n_concepts <= vocab_size,
          "n_concepts exceeds the vocabulary capacity of " + std::to_string(vocab_size - kFirstConceptToken));
  require(concepts_per_pair >= 1 && concepts_per_pair <= n_concepts, "concepts_per_pair must be in [1, n_concepts]");
  require(choose_capped(n_concepts, concepts_per_pair, n_pairs) >= n_pairs,
          "n_concepts too small for n_pairs distinct concept sets");
  require(frames_per_video >= 1, "frames_per_video must be at least 1");
  require(distractor_frames < frames_per_video, "distractor_frames must be below frames_per_video");
  require(distractor_frames == 0 || 2 * concepts_per_pair <= n_concepts,
          "distractor_frames needs at least 2 * concepts_per_pair concepts");
  require(std::isfinite(noise_std) && noise_std >= 0.0, "noise_std must be a finite value >= 0");
  require(val_fraction >= 0.0 && val_fraction < 1.0, "val_fraction must be in [0, 1)");
  require(train_pairs() >= 1, "val_fraction leaves no training pairs");
  require(patches >= 1 && patch_dim >= 1, "patches and patch_dim must be positive");
  require(text_len >= concepts_per_pair + 2, "text_len too short for [CLS] + concepts + [SEP]");
}

Dataset Dataset::select(std::span<const std::size_t> indices) const {
  Dataset out;
  out.frames = frames.select(indices);
  out.tokens = tokens.select(indices);
  for (std::size_t i : indices) out.concepts.push_back(concepts.at(i));
  return out;
}

SyntheticData generate(const SyntheticSpec& spec, std::size_t vocab_size) {
  spec.validate(vocab_size);
  const Rng root(spec.seed);
  const std::size_t grid = spec.patches * spec.patch_dim;
  const std::size_t k = spec.concepts_per_pair;

  SyntheticData out;
  Rng proto_rng = root.fork(kPrototypeStream);
  out.prototypes = proto_rng.normal_tensor({spec.n_concepts, spec.patches, spec.patch_dim}, 1.0);

  std::vector<std::size_t> all(spec.n_concepts);
  std::iota(all.begin(), all.end(), 0);
  Rng combo_rng = root.fork(kComboStream);
  std::set<std::vector<std::size_t>> used;
  std::vector<std::vector<std::size_t>> combos;
  while (combos.size() < spec.n_pairs) {
    auto c = draw(all, k, combo_rng);
    if (used.insert(c).second) combos.push_back(std::move(c));
  }

  const std::size_t F = spec.frames_per_video;
  Dataset full;
  std::vector<double> frames(spec.n_pairs * F * grid, 0.0);
  Rng frame_rng = root.fork(kFrameStream);
  std::vector<std::size_t> order(F);
  for (std::size_t i = 0; i < spec.n_pairs; ++i) {
    std::iota(order.begin(), order.end(), 0);
    frame_rng.shuffle(std::span<std::size_t>(order));
    std::vector<bool> distract(F, false);
    for (std::size_t d = 0; d < spec.distractor_frames; ++d) distract[order[d]] = true;

    std::vector<std::size_t> others;
    for (std::size_t c = 0; c < spec.n_concepts; ++c)
      if (!std::binary_search(combos[i].begin(), combos[i].end(), c)) others.push_back(c);

    for (std::size_t f = 0; f < F; ++f) {
      const auto concepts = distract[f] ? draw(others, k, frame_rng) : combos[i];
      double* dst = frames.data() + (i * F + f) * grid;
      for (std::size_t m = 0; m < spec.patches; ++m) {
        const std::size_t c = concepts[m % k];
        const double* src = out.prototypes.data() + c * grid + m * spec.patch_dim;
        for (std::size_t e = 0; e < spec.patch_dim; ++e) dst[m * spec.patch_dim + e] = src[e];
      }
      for (std::size_t e = 0; e < grid; ++e) dst[e] += spec.noise_std * frame_rng.normal();
    }

    for (std::size_t t = 0; t < spec.text_len; ++t) {
      std::int32_t id = TokenBatch::kPad;
      if (t == 0) id = TokenBatch::kCls;
      else if (t <= k) id = SyntheticSpec::kFirstConceptToken + static_cast<std::int32_t>(combos[i][t - 1]);
      else if (t == k + 1) id = TokenBatch::kSep;
      full.tokens.ids.push_back(id);
    }
    full.tokens.sep_pos.push_back(k + 1);
  }
  full.tokens.seq_len = spec.text_len;
  full.frames.values = Tensor({spec.n_pairs, F, spec.patches, spec.patch_dim}, std::move(frames));
  full.frames.mask.assign(spec.n_pairs * F, 1);
  full.concepts = combos;

  std::vector<std::size_t> train(spec.train_pairs()), val(spec.val_pairs());
  std::iota(train.begin(), train.end(), 0);
  std::iota(val.begin(), val.end(), train.size());
  out.train = full.select(train);
  if (!val.empty()) out.val = full.select(val);
  return out;
}

std::vector<std::vector<std::size_t>> make_batches(std::size_t n, std::size_t batch_size, std::uint64_t seed,
                                                   std::size_t epoch) {
  if (batch_size < 2) throw std::invalid_argument("batch_size must be at least 2");
  if (n < batch_size) {
    throw std::invalid_argument("dataset of " + std::to_string(n) + " samples is smaller than batch_size " +
                                std::to_string(batch_size));
  }
  std::vector<std::size_t> perm(n);
  std::iota(perm.begin(), perm.end(), 0);
  Rng rng = Rng(seed).fork(epoch);
  rng.shuffle(std::span<std::size_t>(perm));
  std::vector<std::vector<std::size_t>> out;
  for (std::size_t b = 0; b + batch_size <= n; b += batch_size) {
    out.emplace_back(perm.begin() + static_cast<std::ptrdiff_t>(b),
                     perm.begin() + static_cast<std::ptrdiff_t>(b + batch_size));
  }
  return out;
}

std::vector<ArchiveEntry> dataset_entries(const Dataset& data) {
  const std::size_t n = data.size();
  std::vector<double> mask(data.frames.mask.begin(), data.frames.mask.end());
  std::vector<double> ids(data.tokens.ids.begin(), data.tokens.ids.end());
  std::vector<double> sep(data.tokens.sep_pos.begin(), data.tokens.sep_pos.end());
  std::vector<ArchiveEntry> out = {
      {"frames", data.frames.values, DType::f64},
      {"mask", Tensor({n, data.frames.frames()}, std::move(mask)), DType::f64},
      {"tokens", Tensor({n, data.tokens.seq_len}, std::move(ids)), DType::f64},
      {"sep_pos", Tensor({n}, std::move(sep)), DType::f64},
  };
  if (!data.concepts.empty() && !data.concepts.front().empty()) {
    std::vector<double> c;
    for (const auto& row : data.concepts) c.insert(c.end(), row.begin(), row.end());
    out.push_back({"concepts", Tensor({n, data.concepts.front().size()}, std::move(c)), DType::f64});
  }
  return out;
}

Dataset dataset_from_entries(std::span<const ArchiveEntry> entries) {
  const Tensor& frames = find_entry(entries, "frames").value;
  const Tensor& mask = find_entry(entries, "mask").value;
  const Tensor& tokens = find_entry(entries, "tokens").value;
  const Tensor& sep = find_entry(entries, "sep_pos").value;
  if (frames.rank() != 4 || mask.rank() != 2 || tokens.rank() != 2 || sep.rank() != 1) {
    throw DimensionError("dataset entries have unexpected ranks");
  }
  if (mask.dim(0) != frames.dim(0) || mask.dim(1) != frames.dim(1) || sep.dim(0) != tokens.dim(0)) {
    throw DimensionError("dataset entries disagree on pair or frame counts");
  }
  Dataset d;
  d.frames.values = frames;
  for (double v : mask.values()) d.frames.mask.push_back(as_index(v, "mask") != 0 ? 1 : 0);
  d.tokens.seq_len = tokens.dim(1);
  for (double v : tokens.values()) {
    const std::size_t id = as_index(v, "tokens");
    if (id > static_cast<std::size_t>(std::numeric_limits<std::int32_t>::max())) {
      throw std::invalid_argument("dataset entry tokens holds an id beyond int32");
    }
    d.tokens.ids.push_back(static_cast<std::int32_t>(id));
  }
  for (double v : sep.values()) d.tokens.sep_pos.push_back(as_index(v, "sep_pos"));
  for (const auto& e : entries) {
    if (e.name != "concepts") continue;
    if (e.value.rank() != 2 || e.value.dim(0) != sep.dim(0)) throw DimensionError("dataset entry concepts misshaped");
    for (std::size_t i = 0; i < e.value.dim(0); ++i) {
      std::vector<std::size_t> row;
      for (std::size_t c = 0; c < e.value.dim(1); ++c) row.push_back(as_index(e.value.at(i, c), "concepts"));
      d.concepts.push_back(std::move(row));
    }
  }
  return d;
}

}  // namespace xma
