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

#include "xmadapter/similarity.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <exception>
#include <istream>
#include <limits>
#include <ostream>
#include <sstream>
#include <stdexcept>
#include <string>
#include <thread>

#include "xmadapter/ops.hpp"

namespace xma {

namespace {

constexpr double kMinNorm = 1e-12;

void check_tau(double tau) {
  if (!(tau > 0.0) || !std::isfinite(tau)) {
    throw std::invalid_argument("tau must be a positive finite number, got " + std::to_string(tau));
  }
}

double dot(const double* a, const double* b, std::size_t n) {
  double acc = 0.0;
  for (std::size_t k = 0; k < n; ++k) acc += a[k] * b[k];
  return acc;
}

// Softmax of alpha/tau over valid entries, written to w. Returns false if none is valid.
bool softmax_valid(const double* alpha, const std::uint8_t* valid, std::size_t n, double tau, double* w) {
  double max = -std::numeric_limits<double>::infinity();
  bool any = false;
  for (std::size_t f = 0; f < n; ++f) {
    if (valid && !valid[f]) continue;
    max = std::max(max, alpha[f] / tau);
    any = true;
  }
  if (!any) return false;
  double total = 0.0;
  for (std::size_t f = 0; f < n; ++f) {
    w[f] = (valid && !valid[f]) ? 0.0 : std::exp(alpha[f] / tau - max);
    total += w[f];
  }
  for (std::size_t f = 0; f < n; ++f) w[f] /= total;
  return true;
}

}  // namespace

void SimilarityConfig::validate() const {
  check_tau(tau);
  if (!(logit_scale > 0.0) || !std::isfinite(logit_scale)) {
    throw std::invalid_argument("logit_scale must be a positive finite number");
  }
}

void FrameFeatures::validate() const {
  if (!f || f.rank() != 3) throw DimensionError("frame features must be [videos x frames x width]");
  if (mask.size() != videos() * frames()) {
    throw DimensionError("frame mask has " + std::to_string(mask.size()) + " entries, expected " +
                         std::to_string(videos() * frames()));
  }
  for (std::size_t i = 0; i < videos(); ++i) {
    if (std::none_of(mask.begin() + static_cast<std::ptrdiff_t>(i * frames()),
                     mask.begin() + static_cast<std::ptrdiff_t>((i + 1) * frames()), [](auto v) { return v != 0; })) {
      throw std::invalid_argument("video " + std::to_string(i) + " has no valid frame");
    }
  }
}

std::vector<std::uint8_t> full_mask(std::size_t videos, std::size_t frames) {
  return std::vector<std::uint8_t>(videos * frames, 1);
}

Tensor frame_scores(const Tensor& t, const Tensor& frames) {
  if (t.rank() != 1 || frames.rank() != 2 || frames.dim(1) != t.dim(0)) {
    throw DimensionError("frame_scores: text " + shape_str(t.shape()) + " vs frames " + shape_str(frames.shape()));
  }
  const std::size_t F = frames.dim(0), D = t.dim(0);
  Tensor out({F});
  for (std::size_t f = 0; f < F; ++f) out[f] = dot(t.data(), frames.data() + f * D, D);
  return out;
}

Tensor aggregation_weights(const Tensor& alpha, double tau, std::span<const std::uint8_t> valid) {
  check_tau(tau);
  if (alpha.rank() != 1) throw DimensionError("aggregation scores must be a vector");
  if (!valid.empty() && valid.size() != alpha.numel()) throw DimensionError("aggregation mask size mismatch");
  Tensor w({alpha.numel()});
  if (!softmax_valid(alpha.data(), valid.empty() ? nullptr : valid.data(), alpha.numel(), tau, w.data())) {
    throw std::invalid_argument("aggregate needs at least one valid frame");
  }
  return w;
}

Tensor aggregate(const Tensor& alpha, const Tensor& frames, double tau, std::span<const std::uint8_t> valid) {
  if (frames.rank() != 2 || frames.dim(0) != alpha.numel()) {
    throw DimensionError("aggregate: scores " + shape_str(alpha.shape()) + " vs frames " + shape_str(frames.shape()));
  }
  const Tensor w = aggregation_weights(alpha, tau, valid);
  const std::size_t F = frames.dim(0), D = frames.dim(1);
  Tensor out({D});
  for (std::size_t f = 0; f < F; ++f) {
    if (w[f] == 0.0) continue;
    for (std::size_t d = 0; d < D; ++d) out[d] += w[f] * frames.data()[f * D + d];
  }
  return out;
}

SimilarityMap similarity_matrix(const Var& texts, const FrameFeatures& videos, const SimilarityConfig& cfg) {
  cfg.validate();
  videos.validate();
  if (texts.rank() != 2) throw DimensionError("texts must be [n x width], got " + shape_str(texts.shape()));
  const std::size_t nt = texts.dim(0), nv = videos.videos(), F = videos.frames(), D = videos.width();
  if (texts.dim(1) != D) {
    throw DimensionError("text width " + std::to_string(texts.dim(1)) + " vs frame width " + std::to_string(D));
  }

  Var flat = ops::reshape(videos.f, {nv * F, D});
  Var alpha = ops::scale(ops::matmul(texts, ops::transpose(flat)), 1.0 / cfg.tau);
  alpha = ops::reshape(alpha, {nt, nv, F});
  std::vector<std::uint8_t> valid(nt * nv * F);
  for (std::size_t j = 0; j < nt; ++j) std::copy(videos.mask.begin(), videos.mask.end(), valid.begin() + j * nv * F);
  Var w = ops::masked_softmax(alpha, valid);  // [nt x nv x F]

  const std::size_t to_video_major[] = {1, 0, 2};
  Var vhat = ops::bmm(ops::permute(w, to_video_major), videos.f);  // [nv x nt x D]
  Var s = ops::sum_last(ops::mul(ops::l2_normalize(vhat), ops::l2_normalize(texts)));

  SimilarityMap map;
  map.s = s;
  map.weights = w.value();
  map.tau = cfg.tau;
  map.logit_scale = cfg.logit_scale;
  return map;
}

Tensor similarity_scores(const Tensor& texts, const Tensor& frames, std::span<const std::uint8_t> mask, double tau,
                         unsigned threads) {
  check_tau(tau);
  if (texts.rank() != 2 || frames.rank() != 3 || texts.dim(1) != frames.dim(2)) {
    throw DimensionError("similarity_scores: texts " + shape_str(texts.shape()) + " vs frames " +
                         shape_str(frames.shape()));
  }
  const std::size_t nt = texts.dim(0), nv = frames.dim(0), F = frames.dim(1), D = frames.dim(2);
  if (mask.size() != nv * F) throw DimensionError("frame mask size mismatch");
  Tensor out({nv, nt});

  auto work = [&](std::size_t begin, std::size_t end) {
    std::vector<double> alpha(F), w(F), v(D);
    for (std::size_t j = begin; j < end; ++j) {
      const double* t = texts.data() + j * D;
      const double t_norm = std::max(std::sqrt(dot(t, t, D)), kMinNorm);
      for (std::size_t i = 0; i < nv; ++i) {
        const double* fi = frames.data() + i * F * D;
        for (std::size_t f = 0; f < F; ++f) alpha[f] = dot(t, fi + f * D, D);
        if (!softmax_valid(alpha.data(), mask.data() + i * F, F, tau, w.data())) {
          throw std::invalid_argument("video " + std::to_string(i) + " has no valid frame");
        }
        std::fill(v.begin(), v.end(), 0.0);
        for (std::size_t f = 0; f < F; ++f) {
          if (w[f] == 0.0) continue;
          for (std::size_t d = 0; d < D; ++d) v[d] += w[f] * fi[f * D + d];
        }
        const double v_norm = std::max(std::sqrt(dot(v.data(), v.data(), D)), kMinNorm);
        out.data()[i * nt + j] = dot(v.data(), t, D) / (v_norm * t_norm);
      }
    }
  };

  threads = std::max(1u, std::min<unsigned>(threads, static_cast<unsigned>(nt)));
  if (threads == 1) {
    work(0, nt);
    return out;
  }
  std::vector<std::thread> pool;
  std::vector<std::exception_ptr> errors(threads);
  const std::size_t chunk = (nt + threads - 1) / threads;
  for (unsigned k = 0; k < threads; ++k) {
    const std::size_t begin = std::min(nt, k * chunk), end = std::min(nt, begin + chunk);
    pool.emplace_back([&, k, begin, end] {
      try {
        work(begin, end);
      } catch (...) {
        errors[k] = std::current_exception();
      }
    });
  }
  for (auto& t : pool) t.join();
  for (auto& e : errors)
    if (e) std::rethrow_exception(e);
  return out;
}

ContrastiveTerms contrastive_terms(const Var& s, double logit_scale) {
  if (s.rank() != 2 || s.dim(0) != s.dim(1)) {
    throw DimensionError("contrastive loss needs a square similarity map, got " + shape_str(s.shape()));
  }
  const double inv_n = 1.0 / static_cast<double>(s.dim(0));
  Var logits = ops::scale(s, logit_scale);
  ContrastiveTerms terms;
  terms.v2t = ops::scale(ops::sum(ops::diagonal(ops::log_softmax(logits))), -inv_n);
  terms.t2v = ops::scale(ops::sum(ops::diagonal(ops::log_softmax(ops::transpose(logits)))), -inv_n);
  terms.total = ops::scale(ops::add(terms.t2v, terms.v2t), 0.5);
  return terms;
}

Var contrastive_loss(const SimilarityMap& map) { return contrastive_terms(map.s, map.logit_scale).total; }

void write_similarity_csv(std::ostream& out, const Tensor& scores) {
  if (scores.rank() != 2) throw DimensionError("similarity CSV needs a rank-2 map");
  char buf[32];
  for (std::size_t i = 0; i < scores.dim(0); ++i) {
    for (std::size_t j = 0; j < scores.dim(1); ++j) {
      std::snprintf(buf, sizeof buf, "%.6g", scores.at(i, j));
      if (j) out << ',';
      out << buf;
    }
    out << '\n';
  }
}

Tensor read_similarity_csv(std::istream& in) {
  std::vector<double> values;
  std::size_t rows = 0, cols = 0;
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::stringstream row(line);
    std::string cell;
    std::size_t n = 0;
    while (std::getline(row, cell, ',')) {
      std::size_t used = 0;
      values.push_back(std::stod(cell, &used));
      if (used != cell.size()) throw std::invalid_argument("bad similarity CSV cell '" + cell + "'");
      ++n;
    }
    if (rows && n != cols) throw std::invalid_argument("ragged similarity CSV at row " + std::to_string(rows + 1));
    cols = n;
    ++rows;
  }
  if (!rows || !cols) throw std::invalid_argument("empty similarity CSV");
  return Tensor({rows, cols}, std::move(values));
}

}  // namespace xma
