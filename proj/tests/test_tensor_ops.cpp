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
#include <limits>
#include <numeric>

#include "catch_amalgamated.hpp"

#include "xmadapter/autodiff.hpp"
#include "xmadapter/gradcheck.hpp"
#include "xmadapter/ops.hpp"
#include "xmadapter/rng.hpp"

using Catch::Approx;
using namespace xma;

namespace {

Var leaf(Tensor t) { return Var(std::move(t), true); }

// Scalar tanh-GELU written out independently of the library.
double gelu_ref(double x) {
  const double c = std::sqrt(2.0 / std::acos(-1.0));
  return 0.5 * x * (1.0 + std::tanh(c * (x + 0.044715 * x * x * x)));
}

}  // namespace

TEST_CASE("tensor basics", "[tensor]") {
  const Tensor m = Tensor::matrix({{1, 2, 3}, {4, 5, 6}});
  CHECK(m.shape() == Shape{2, 3});
  CHECK(m.at(1, 2) == 6.0);
  CHECK(m.reshaped({3, 2}).at(2, 1) == 6.0);
  CHECK_THROWS_AS(m.reshaped({4, 2}), DimensionError);
  CHECK_THROWS_AS(Tensor({2, 0}), DimensionError);
  CHECK(value_hash(m) == value_hash(Tensor::matrix({{1, 2, 3}, {4, 5, 6}})));
  CHECK(value_hash(m) != value_hash(m.reshaped({3, 2})));
  Tensor n = m;
  n[0] = std::numeric_limits<double>::quiet_NaN();
  CHECK_FALSE(n.all_finite());
  CHECK(n.first_non_finite() == 0);
}

TEST_CASE("matmul examples", "[tensor][matmul]") {
  const Var eye(Tensor::matrix({{1, 0}, {0, 1}}));
  const Var a(Tensor::matrix({{1, 2}, {3, 4}}));
  CHECK(bitwise_equal(ops::matmul(eye, a).value(), a.value()));

  const Var row(Tensor::matrix({{1, 2}}));
  const Var col(Tensor::matrix({{3}, {4}}));
  const Tensor r = ops::matmul(row, col).value();
  CHECK(r.shape() == Shape{1, 1});
  CHECK(r[0] == 11.0);

  CHECK_THROWS_AS(ops::matmul(a, Var(Tensor({3, 2}))), DimensionError);
}

TEST_CASE("matmul gradient matches finite differences", "[tensor][matmul][gradcheck]") {
  Rng rng(3);
  const Var a = leaf(rng.normal_tensor({3, 4}, 1.0));
  const Var b = leaf(rng.normal_tensor({4, 2}, 1.0));
  const Tensor w = rng.normal_tensor({3, 2}, 1.0);
  const auto res =
      gradcheck([&] { return ops::sum(ops::mul(ops::matmul(a, b), Var(w))); }, {{"a", a}, {"b", b}});
  CHECK(res.entries_checked == 20);
  CHECK(res.max_rel_error <= 1e-6);
}

TEST_CASE("layernorm examples", "[tensor][layernorm]") {
  const Var ones(Tensor({3}, 1.0));
  const Var zeros(Tensor({3}, 0.0));
  const Tensor flat = ops::layernorm(Var(Tensor::vector({1, 1, 1})), ones, zeros).value();
  for (double v : flat.values()) CHECK(v == 0.0);

  const Tensor y = ops::layernorm(Var(Tensor::vector({1, 2, 3})), ones, zeros).value();
  const double mean = (y[0] + y[1] + y[2]) / 3.0;
  double var = 0.0;
  for (double v : y.values()) var += (v - mean) * (v - mean);
  var /= 3.0;
  CHECK(std::abs(mean) <= 1e-12);
  const double raw = 2.0 / 3.0;
  CHECK(std::abs(var - raw / (raw + 1e-5)) <= 1e-12);

  Rng rng(5);
  const Var x = leaf(rng.normal_tensor({4, 6}, 1.0));
  const Var g = leaf(rng.normal_tensor({6}, 1.0));
  const Var b = leaf(rng.normal_tensor({6}, 1.0));
  const Tensor w = rng.normal_tensor({4, 6}, 1.0);
  const auto res = gradcheck([&] { return ops::sum(ops::mul(ops::layernorm(x, g, b), Var(w))); },
                             {{"x", x}, {"gamma", g}, {"beta", b}});
  CHECK(res.max_rel_error <= 1e-5);
}

TEST_CASE("gelu examples", "[tensor][gelu]") {
  CHECK(ops::gelu(Var(Tensor::scalar(0.0))).value()[0] == 0.0);
  CHECK(ops::gelu(Var(Tensor::scalar(3.0))).value()[0] == Approx(2.99636).margin(1e-4));
  CHECK(ops::gelu(Var(Tensor::scalar(3.0))).value()[0] == Approx(gelu_ref(3.0)).margin(1e-14));

  std::vector<double> grid;
  for (int i = 0; i <= 60; ++i) grid.push_back(-3.0 + 0.1 * i);
  const Var x = leaf(Tensor({grid.size()}, grid));
  GradcheckOptions opts;
  opts.abs_floor = 1e-8;
  const auto res = gradcheck([&] { return ops::sum(ops::gelu(x)); }, {{"x", x}}, opts);
  CHECK(res.entries_checked == grid.size());
  CHECK(res.max_rel_error <= 1e-6);
}

TEST_CASE("softmax examples", "[tensor][softmax]") {
  const Tensor half = ops::softmax(Var(Tensor::vector({0, 0}))).value();
  CHECK(half[0] == 0.5);
  CHECK(half[1] == 0.5);

  const Tensor p = ops::softmax(Var(Tensor::vector({1, 0}))).value();
  const double e = std::exp(1.0);
  CHECK(p[0] == Approx(0.73106).margin(1e-5));
  CHECK(p[1] == Approx(0.26894).margin(1e-5));
  CHECK(p[0] == Approx(e / (e + 1.0)).margin(1e-15));

  const Tensor big = ops::softmax(Var(Tensor::vector({1000, 0}))).value();
  CHECK(big[0] == 1.0);
  CHECK(big[1] == 0.0);

  const std::vector<std::uint8_t> valid = {1, 0, 1};
  const Tensor m = ops::masked_softmax(Var(Tensor::vector({0, 50, 0})), valid).value();
  CHECK(m[0] == 0.5);
  CHECK(m[1] == 0.0);
  CHECK(m[2] == 0.5);

  const Tensor lsm = ops::log_softmax(Var(Tensor::vector({1, 0}))).value();
  CHECK(lsm[0] == Approx(std::log(e / (e + 1.0))).margin(1e-14));
}

TEST_CASE("dropout", "[tensor][dropout]") {
  Rng rng(11);
  const Var x(rng.normal_tensor({4, 5}, 1.0));
  CHECK(bitwise_equal(ops::dropout(x, 0.0, rng, true).value(), x.value()));
  CHECK(bitwise_equal(ops::dropout(x, 0.7, rng, false).value(), x.value()));
  CHECK_THROWS(ops::dropout(x, 1.0, rng, true));

  const std::size_t n = 100000;
  const Var ones(Tensor({n}, 1.0));
  Rng drop(2024);
  const Tensor y = ops::dropout(ones, 0.5, drop, true).value();
  std::size_t kept = 0;
  for (double v : y.values()) kept += v != 0.0;
  const double mean = std::accumulate(y.values().begin(), y.values().end(), 0.0) / static_cast<double>(n);
  CHECK(std::abs(static_cast<double>(kept) / n - 0.5) <= 0.01);
  CHECK(std::abs(mean - 1.0) <= 0.02);
}

TEST_CASE("broadcast add and reductions", "[tensor]") {
  const Var a(Tensor::matrix({{1, 2}, {3, 4}}));
  const Var b(Tensor::vector({10, 20}));
  const Tensor s = ops::add(a, b).value();
  CHECK(s.at(1, 1) == 24.0);
  CHECK(ops::sum(a).value()[0] == 10.0);
  CHECK(ops::mean(a).value()[0] == 2.5);
  CHECK(ops::sum_last(a).value()[1] == 7.0);
  CHECK(ops::diagonal(a).value()[1] == 4.0);
  CHECK_THROWS_AS(ops::add(a, Var(Tensor::vector({1, 2, 3}))), DimensionError);
}

TEST_CASE("gradcheck harness", "[gradcheck]") {
  Rng rng(9);
  const Var x = leaf(rng.normal_tensor({5}, 1.0));

  SECTION("constant objective") {
    const Var c(Tensor::scalar(2.5));
    const auto res = gradcheck([&] { return ops::add(ops::scale(ops::sum(x), 0.0), c); }, {{"x", x}});
    x.node()->requires_grad = true;
    const Var y = ops::add(ops::scale(ops::sum(x), 0.0), c);
    backward(y);
    for (double g : x.grad().values()) CHECK(g == 0.0);
    CHECK(res.max_rel_error == 0.0);
    x.node()->grad = Tensor();
  }

  SECTION("sum of gelu") {
    const auto res = gradcheck([&] { return ops::sum(ops::gelu(x)); }, {{"x", x}});
    CHECK(res.max_rel_error <= 1e-6);
  }

  SECTION("broken backward is caught") {
    const testing::ScopedBrokenGeluBackward broken;
    const auto res = gradcheck([&] { return ops::sum(ops::gelu(x)); }, {{"x", x}});
    CHECK(res.max_rel_error > 1e-2);
  }

  SECTION("leaves are restored bit-exactly") {
    const Tensor before = x.value();
    gradcheck([&] { return ops::sum(ops::mul(x, x)); }, {{"x", x}});
    CHECK(bitwise_equal(before, x.value()));
  }
}

TEST_CASE("autodiff graph control", "[autodiff]") {
  const Var x = leaf(Tensor::vector({1, 2, 3}));
  {
    const NoGradGuard guard;
    CHECK_FALSE(grad_enabled());
    const Var y = ops::sum(ops::mul(x, x));
    CHECK_FALSE(y.requires_grad());
  }
  CHECK(grad_enabled());
  const Var y = ops::sum(ops::mul(x, x));
  backward(y);
  CHECK(x.grad()[2] == 6.0);

  // Gradients accumulate until cleared.
  backward(ops::sum(x));
  CHECK(x.grad()[2] == 7.0);

  const Var z = leaf(Tensor::vector({-1.0}));
  CHECK_THROWS_AS(ops::log_softmax(ops::scale(z, std::numeric_limits<double>::infinity())), NonFiniteError);
}
