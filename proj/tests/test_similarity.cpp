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

#include <cmath>
#include <sstream>

#include "catch_amalgamated.hpp"

#include "xmadapter/gradcheck.hpp"
#include "xmadapter/ops.hpp"
#include "xmadapter/rng.hpp"
#include "xmadapter/similarity.hpp"

using Catch::Approx;
using namespace xma;

namespace {

// Brute-force query-aware similarity for one (video, text) pair.
double pair_similarity(const Tensor& texts, std::size_t j, const Tensor& frames, std::size_t i,
                       const std::vector<std::uint8_t>& mask, double tau) {
  const std::size_t F = frames.dim(1), D = frames.dim(2);
  std::vector<double> alpha(F), w(F, 0.0);
  double top = -INFINITY;
  for (std::size_t f = 0; f < F; ++f) {
    double a = 0.0;
    for (std::size_t k = 0; k < D; ++k) a += texts[j * D + k] * frames[(i * F + f) * D + k];
    alpha[f] = a / tau;
    if (mask[i * F + f]) top = std::max(top, alpha[f]);
  }
  double z = 0.0;
  for (std::size_t f = 0; f < F; ++f) {
    if (!mask[i * F + f]) continue;
    w[f] = std::exp(alpha[f] - top);
    z += w[f];
  }
  std::vector<double> v(D, 0.0);
  for (std::size_t f = 0; f < F; ++f) {
    for (std::size_t k = 0; k < D; ++k) v[k] += w[f] / z * frames[(i * F + f) * D + k];
  }
  double dot = 0.0, nv = 0.0, nt = 0.0;
  for (std::size_t k = 0; k < D; ++k) {
    dot += v[k] * texts[j * D + k];
    nv += v[k] * v[k];
    nt += texts[j * D + k] * texts[j * D + k];
  }
  return dot / (std::sqrt(nv) * std::sqrt(nt));
}

// Symmetric InfoNCE written with explicit loops.
double loss_ref(const Tensor& s, double g) {
  const std::size_t n = s.dim(0);
  double t2v = 0.0, v2t = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    double row = 0.0, col = 0.0;
    for (std::size_t k = 0; k < n; ++k) {
      row += std::exp(g * (s.at(i, k) - s.at(i, i)));
      col += std::exp(g * (s.at(k, i) - s.at(i, i)));
    }
    v2t += std::log(row);
    t2v += std::log(col);
  }
  return 0.5 * (t2v + v2t) / static_cast<double>(n);
}

Tensor transpose(const Tensor& s) {
  Tensor t({s.dim(1), s.dim(0)});
  for (std::size_t i = 0; i < s.dim(0); ++i)
    for (std::size_t j = 0; j < s.dim(1); ++j) t.at(j, i) = s.at(i, j);
  return t;
}

}  // namespace

TEST_CASE("frame scores", "[similarity]") {
  const Tensor frames = Tensor::matrix({{1, 0}, {0, 1}});
  const Tensor a = frame_scores(Tensor::vector({1, 0}), frames);
  CHECK(a[0] == 1.0);
  CHECK(a[1] == 0.0);
  const Tensor z = frame_scores(Tensor::vector({0, 0}), frames);
  CHECK(z[0] == 0.0);
  CHECK(z[1] == 0.0);

  Rng rng(2);
  const Tensor t = rng.normal_tensor({7}, 1.0);
  const Tensor f = rng.normal_tensor({5, 7}, 1.0);
  const Tensor s = frame_scores(t, f);
  for (std::size_t j = 0; j < 5; ++j) {
    double dot = 0.0;
    for (std::size_t k = 0; k < 7; ++k) dot += t[k] * f.at(j, k);
    CHECK(s[j] == Approx(dot).margin(1e-12));
  }
}

TEST_CASE("aggregation", "[similarity]") {
  const Tensor one = Tensor::matrix({{0.3, -2.0, 5.0}});
  for (double tau : {1e-6, 1.0, 5.0, 1e6}) {
    const Tensor v = aggregate(Tensor::vector({0.7}), one, tau);
    CHECK(bitwise_equal(v, Tensor::vector({0.3, -2.0, 5.0})));
  }

  const Tensor v = aggregate(Tensor::vector({1, 0}), Tensor::matrix({{1, 0}, {0, 1}}), 1.0);
  const double e = std::exp(1.0);
  CHECK(v[0] == Approx(0.73106).margin(1e-5));
  CHECK(v[1] == Approx(0.26894).margin(1e-5));
  CHECK(v[0] == Approx(e / (e + 1)).margin(1e-15));

  Rng rng(4);
  const Tensor frames = rng.normal_tensor({6, 5}, 1.0);
  const Tensor alpha = Tensor::vector({0.3, -1.2, 2.5, 0.9, -0.4, 1.1});
  const Tensor hot = aggregate(alpha, frames, 1e6);
  const Tensor cold = aggregate(alpha, frames, 1e-6);
  for (std::size_t k = 0; k < 5; ++k) {
    double mean = 0.0;
    for (std::size_t f = 0; f < 6; ++f) mean += frames.at(f, k) / 6.0;
    CHECK(std::abs(hot[k] - mean) <= 1e-6);
    CHECK(std::abs(cold[k] - frames.at(2, k)) <= 1e-6);
  }

  const std::vector<std::uint8_t> valid = {1, 1, 0, 1, 1, 1};
  const Tensor w = aggregation_weights(alpha, 1e-6, valid);
  CHECK(w[2] == 0.0);
  CHECK(w[5] == 1.0);
}

TEST_CASE("similarity matrix", "[similarity]") {
  SimilarityConfig cfg;

  SECTION("single identical pair") {
    const Var t(Tensor::matrix({{0.6, -0.8, 0.0}}));
    const Var f(Tensor({1, 1, 3}, {0.6, -0.8, 0.0}));
    const SimilarityMap m = similarity_matrix(t, FrameFeatures{f, full_mask(1, 1)}, cfg);
    CHECK(m.scores()[0] == Approx(1.0).margin(1e-15));
  }

  SECTION("identical frames make tau irrelevant") {
    Rng rng(5);
    const Tensor texts = rng.normal_tensor({3, 4}, 1.0);
    Tensor frames({3, 4, 4});
    for (std::size_t i = 0; i < 3; ++i) {
      const Tensor row = rng.normal_tensor({4}, 1.0);
      for (std::size_t f = 0; f < 4; ++f)
        for (std::size_t k = 0; k < 4; ++k) frames[(i * 4 + f) * 4 + k] = row[k];
    }
    SimilarityConfig a = cfg, b = cfg;
    a.tau = 0.01;
    b.tau = 100.0;
    const Tensor sa = similarity_matrix(Var(texts), FrameFeatures{Var(frames), full_mask(3, 4)}, a).scores();
    const Tensor sb = similarity_matrix(Var(texts), FrameFeatures{Var(frames), full_mask(3, 4)}, b).scores();
    CHECK(max_abs_diff(sa, sb) <= 1e-14);
  }

  SECTION("random case against a brute-force oracle") {
    Rng rng(6);
    const Tensor texts = rng.normal_tensor({3, 5}, 1.0);
    const Tensor frames = rng.normal_tensor({3, 4, 5}, 1.0);
    std::vector<std::uint8_t> mask = full_mask(3, 4);
    mask[1 * 4 + 3] = 0;
    mask[2 * 4 + 0] = 0;
    const SimilarityMap m = similarity_matrix(Var(texts), FrameFeatures{Var(frames), mask}, cfg);
    const Tensor fast = similarity_scores(texts, frames, mask, cfg.tau, 2);
    for (std::size_t i = 0; i < 3; ++i) {
      for (std::size_t j = 0; j < 3; ++j) {
        const double ref = pair_similarity(texts, j, frames, i, mask, cfg.tau);
        CHECK(m.scores().at(i, j) == Approx(ref).margin(1e-12));
        CHECK(fast.at(i, j) == Approx(ref).margin(1e-12));
      }
    }
    CHECK(m.weights[(0 * 3 + 1) * 4 + 3] == 0.0);
  }

  SECTION("rectangular gallery") {
    Rng rng(7);
    const Tensor texts = rng.normal_tensor({2, 5}, 1.0);
    const Tensor frames = rng.normal_tensor({4, 3, 5}, 1.0);
    const SimilarityMap m = similarity_matrix(Var(texts), FrameFeatures{Var(frames), full_mask(4, 3)}, cfg);
    CHECK(m.videos() == 4);
    CHECK(m.texts() == 2);
    CHECK_THROWS_AS(contrastive_loss(m), DimensionError);
  }

  SECTION("a video with no valid frame is rejected") {
    const Var t(Tensor::matrix({{1, 0}}));
    const Var f(Tensor({1, 2, 2}, 1.0));
    CHECK_THROWS(similarity_matrix(t, FrameFeatures{f, {0, 0}}, cfg));
  }
}

TEST_CASE("contrastive loss", "[similarity][loss]") {
  CHECK(contrastive_terms(Var(Tensor::matrix({{0.3}})), 100.0).total.value()[0] == 0.0);

  const double uniform = contrastive_terms(Var(Tensor({2, 2}, 0.4)), 100.0).total.value()[0];
  CHECK(uniform == Approx(0.69315).margin(1e-5));
  CHECK(std::abs(contrastive_terms(Var(Tensor({7, 7}, -0.2)), 100.0).total.value()[0] - std::log(7.0)) <= 1e-12);

  Tensor sep({4, 4}, -1.0);
  for (std::size_t i = 0; i < 4; ++i) sep.at(i, i) = 1.0;
  CHECK(contrastive_terms(Var(sep), 100.0).total.value()[0] <= 1e-8);

  Rng rng(8);
  for (int trial = 0; trial < 20; ++trial) {
    Tensor s = rng.normal_tensor({6, 6}, 0.3);
    const ContrastiveTerms a = contrastive_terms(Var(s), 100.0);
    const ContrastiveTerms b = contrastive_terms(Var(transpose(s)), 100.0);
    CHECK(std::abs(a.v2t.value()[0] - b.t2v.value()[0]) <= 1e-12);
    CHECK(std::abs(a.total.value()[0] - loss_ref(s, 100.0)) <= 1e-9);
  }
}

TEST_CASE("similarity and loss gradients", "[similarity][gradcheck]") {
  SimilarityConfig cfg;
  Rng rng(10);
  for (int trial = 0; trial < 3; ++trial) {
    const Var texts(rng.normal_tensor({4, 6}, 1.0), true);
    const Var frames(rng.normal_tensor({4, 3, 6}, 1.0), true);
    std::vector<std::uint8_t> mask = full_mask(4, 3);
    mask[5] = 0;
    const auto res = gradcheck(
        [&] { return contrastive_loss(similarity_matrix(texts, FrameFeatures{frames, mask}, cfg)); },
        {{"texts", texts}, {"frames", frames}});
    CHECK(res.max_rel_error <= 1e-4);
  }
}

TEST_CASE("similarity csv", "[similarity]") {
  const Tensor s = Tensor::matrix({{0.123456789, -1.0}, {1e-7, 0.5}});
  std::stringstream io;
  write_similarity_csv(io, s);
  const Tensor back = read_similarity_csv(io);
  CHECK(back.shape() == s.shape());
  CHECK(back.at(0, 0) == 0.123457);
  CHECK(back.at(1, 0) == 1e-7);
}
