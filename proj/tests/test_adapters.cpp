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
#include <set>

#include "catch_amalgamated.hpp"

#include "xmadapter/adapter.hpp"
#include "xmadapter/gradcheck.hpp"
#include "xmadapter/model.hpp"
#include "xmadapter/ops.hpp"
#include "xmadapter/rng.hpp"

using Catch::Approx;
using namespace xma;

namespace {

const ForwardContext kEval{nullptr, false};

double gelu_ref(double x) {
  const double c = std::sqrt(2.0 / std::acos(-1.0));
  return 0.5 * x * (1.0 + std::tanh(c * (x + 0.044715 * x * x * x)));
}

AdapterConfig adapter(std::size_t r, std::size_t ds, bool bias = true) {
  AdapterConfig c;
  c.bottleneck = r;
  c.share_width = ds;
  c.use_bias = bias;
  c.dropout_p = 0.0;
  return c;
}

// Allocates the layout and sums the sizes of the tensors it actually holds.
std::uint64_t allocated_params(std::size_t dv, std::size_t dt, std::size_t layers, const AdapterConfig& c) {
  const AdapterLayout layout(layers, dv, dt, c);
  std::uint64_t n = 0;
  for (const auto& p : layout.parameters()) n += p->value().numel();
  return n;
}

double norm(const Tensor& t) {
  double s = 0.0;
  for (double v : t.values()) s += v * v;
  return std::sqrt(s);
}

}  // namespace

TEST_CASE("adapter forward examples", "[adapters]") {
  SECTION("zero weights give the identity") {
    AdapterLayout layout(1, 6, 4, adapter(3, 2));
    Rng rng(1);
    const Var x(rng.normal_tensor({5, 6}, 1.0));
    const auto& w = layout.weights(Modality::video, 1, InsertionPoint::attn);
    CHECK(bitwise_equal(adapter_forward(x, w, kEval).value(), x.value()));
  }

  SECTION("hand-computed d=2, r=1, d_s=1") {
    AdapterLayout layout(1, 2, 2, adapter(1, 1));
    const auto& w = layout.weights(Modality::video, 1, InsertionPoint::attn);
    w.w_down->assign(Tensor::matrix({{1}, {1}}));
    w.w_up_unique->assign(Tensor::matrix({{1}}));
    w.share->weight->assign(Tensor::matrix({{2}}));
    const Tensor out = adapter_forward(Var(Tensor::vector({1, 2})), w, kEval).value();
    CHECK(out[0] == Approx(3.99636).margin(1e-4));
    CHECK(out[1] == Approx(7.99271).margin(1e-4));
    CHECK(out[0] == Approx(1.0 + gelu_ref(3.0)).margin(1e-14));
    CHECK(out[1] == Approx(2.0 + 2.0 * gelu_ref(3.0)).margin(1e-14));
  }

  SECTION("the shared slice is one matrix for both modalities") {
    AdapterLayout layout(2, 6, 4, adapter(3, 2));
    for (std::size_t l = 1; l <= 2; ++l) {
      for (auto point : {InsertionPoint::attn, InsertionPoint::mlp}) {
        const auto& pair = layout.pair(l, point);
        CHECK(pair.video.share == pair.text.share);
        CHECK(pair.video.share->weight->value().shape() == Shape{3, 2});
        CHECK(pair.video.w_up_unique->value().shape() == Shape{3, 4});
        CHECK(pair.text.w_up_unique->value().shape() == Shape{3, 2});
      }
    }
    CHECK(layout.pair(1, InsertionPoint::attn).shared != layout.pair(1, InsertionPoint::mlp).shared);
  }

  SECTION("width mismatch") {
    AdapterLayout layout(1, 6, 4, adapter(3, 2));
    const auto& w = layout.weights(Modality::text, 1, InsertionPoint::mlp);
    CHECK_THROWS_AS(adapter_forward(Var(Tensor({2, 6})), w, kEval), DimensionError);
  }
}

TEST_CASE("share width 0 is a vanilla adapter", "[adapters]") {
  AdapterConfig c = adapter(4, 0);
  c.init_std = 0.3;
  AdapterLayout layout(1, 6, 5, c);
  Rng rng(3);
  init_adapters(layout, c, rng);
  const auto& w = layout.weights(Modality::video, 1, InsertionPoint::mlp);
  REQUIRE_FALSE(w.share);
  for (const auto& p : {w.b_down, w.b_up}) {
    Tensor& b = p->mutable_value();
    for (double& v : b.values()) v = rng.normal();
  }
  const Var x(rng.normal_tensor({3, 6}, 1.0));
  const Tensor out = adapter_forward(x, w, kEval).value();

  const Var vanilla = ops::add(
      x, ops::add(ops::linear(ops::gelu(ops::linear(x, w.w_down->var(), w.b_down->var())), w.w_up_unique->var()),
                  w.b_up->var()));
  CHECK(bitwise_equal(out, vanilla.value()));

  const Tensor& wd = w.w_down->value();
  const Tensor& wu = w.w_up_unique->value();
  for (std::size_t n = 0; n < 3; ++n) {
    for (std::size_t i = 0; i < 6; ++i) {
      double acc = x.value()[n * 6 + i] + w.b_up->value()[i];
      for (std::size_t k = 0; k < 4; ++k) {
        double z = w.b_down->value()[k];
        for (std::size_t j = 0; j < 6; ++j) z += x.value()[n * 6 + j] * wd.at(j, k);
        acc += gelu_ref(z) * wu.at(k, i);
      }
      CHECK(out[n * 6 + i] == Approx(acc).margin(1e-12));
    }
  }
}

TEST_CASE("adapter initialization", "[adapters]") {
  const std::size_t dv = 64, dt = 32;
  SECTION("init_std 0 gives exact identity adapters") {
    AdapterConfig c = adapter(8, 16);
    c.init_std = 0.0;
    AdapterLayout layout(4, dv, dt, c);
    Rng rng(1);
    init_adapters(layout, c, rng);
    const Var x(rng.normal_tensor({2, dv}, 1.0));
    CHECK(bitwise_equal(adapter_forward(x, layout.weights(Modality::video, 3, InsertionPoint::attn), kEval).value(),
                        x.value()));
  }

  SECTION("init_std 0.01 perturbs unit inputs by at most 2%") {
    AdapterConfig c = adapter(8, 16);
    c.init_std = 0.01;
    double worst = 0.0;
    for (std::uint64_t seed = 1; seed <= 100; ++seed) {
      AdapterLayout layout(1, dv, dt, c);
      Rng rng(seed);
      init_adapters(layout, c, rng);
      for (auto [m, d] : {std::pair{Modality::video, dv}, std::pair{Modality::text, dt}}) {
        Tensor x = rng.normal_tensor({d}, 1.0);
        const double nx = norm(x);
        for (double& v : x.values()) v /= nx;
        const Tensor out = adapter_forward(Var(x), layout.weights(m, 1, InsertionPoint::mlp), kEval).value();
        Tensor diff = out;
        for (std::size_t i = 0; i < d; ++i) diff[i] -= x[i];
        worst = std::max(worst, norm(diff) / norm(x));
      }
    }
    CHECK(worst <= 0.02);
  }

  SECTION("same seed gives identical weights") {
    const AdapterConfig c = adapter(8, 16);
    AdapterLayout a(2, dv, dt, c), b(2, dv, dt, c);
    Rng ra(9), rb(9);
    init_adapters(a, c, ra);
    init_adapters(b, c, rb);
    for (std::size_t i = 0; i < a.parameters().size(); ++i) {
      CHECK(bitwise_equal(a.parameters()[i]->value(), b.parameters()[i]->value()));
    }
  }
}

TEST_CASE("trained parameter counts", "[adapters][params]") {
  struct Row {
    std::size_t r, ds;
    std::uint64_t expected;
  };
  for (const Row& row : {Row{8, 16, 519552}, Row{8, 8, 521088}, Row{16, 16, 1008384}, Row{16, 64, 989952},
                         Row{16, 512, 817920}}) {
    const AdapterConfig c = adapter(row.r, row.ds);
    CAPTURE(row.r, row.ds);
    CHECK(count_trained_params(768, 512, 12, c) == row.expected);
    CHECK(allocated_params(768, 512, 12, c) == row.expected);
  }

  SECTION("d_s = d_t leaves the text side without a unique slice") {
    AdapterLayout layout(1, 768, 512, adapter(16, 512));
    CHECK_FALSE(layout.weights(Modality::text, 1, InsertionPoint::attn).w_up_unique);
    CHECK(layout.weights(Modality::video, 1, InsertionPoint::attn).w_up_unique->value().dim(1) == 256);
  }

  SECTION("sharing reduces the count") {
    CHECK(count_trained_params(768, 512, 12, adapter(8, 0)) > count_trained_params(768, 512, 12, adapter(8, 16)));
  }

  SECTION("without biases") {
    const AdapterConfig c = adapter(8, 16, false);
    CHECK(count_trained_params(64, 32, 4, c) == allocated_params(64, 32, 4, c));
  }

  SECTION("invalid configs") {
    CHECK_THROWS(count_trained_params(768, 512, 12, adapter(0, 16)));
    CHECK_THROWS(count_trained_params(768, 512, 12, adapter(8, 513)));
  }
}

TEST_CASE("trainable set", "[adapters][params]") {
  ModelConfig cfg;
  const DualEncoderModel model(cfg);
  const auto names = model.trainable_set();
  std::uint64_t n = 0;
  for (const auto& p : model.trainable_parameters()) n += p->value().numel();
  CHECK(n == count_trained_params(cfg.video.hidden, cfg.text.hidden, cfg.video.layers, *cfg.adapter));
  CHECK(std::set<std::string>(names.begin(), names.end()).size() == names.size());

  ModelConfig plain = cfg;
  plain.adapter.reset();
  const DualEncoderModel bare(plain);
  CHECK(bare.trainable_set().empty());
  CHECK(DualEncoderModel::census(plain).trainable == 0);

  const ParameterCensus census = DualEncoderModel::census(cfg);
  CHECK(census.trainable == n);
  std::uint64_t total = 0;
  for (const auto& p : model.parameters()) total += p->value().numel();
  CHECK(census.total == total);
}

TEST_CASE("clip-shape census", "[adapters][params]") {
  ModelConfig cfg;
  cfg.video = EncoderConfig::clip_video();
  cfg.text = EncoderConfig::clip_text();
  const ParameterCensus c = DualEncoderModel::census(cfg);
  CHECK(c.trainable == 519552);
  CHECK(std::abs(c.trainable_percent() - 0.34) <= 0.05);
}
