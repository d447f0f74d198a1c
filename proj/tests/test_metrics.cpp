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

#include <algorithm>
#include <numeric>
#include <vector>

#include "catch_amalgamated.hpp"

#include "xmadapter/metrics.hpp"
#include "xmadapter/rng.hpp"

using namespace xma;

namespace {

struct Oracle {
  double r1, r5, r10, mnr;
};

// Sorts every query's candidates by descending score and reads off the truth position.
Oracle sort_oracle(const Tensor& s, Direction d) {
  const std::size_t n = s.dim(0);
  std::size_t hits1 = 0, hits5 = 0, hits10 = 0, rank_sum = 0;
  for (std::size_t q = 0; q < n; ++q) {
    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), 0);
    auto score = [&](std::size_t c) { return d == Direction::t2v ? s.at(c, q) : s.at(q, c); };
    std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return score(a) > score(b); });
    const std::size_t rank = static_cast<std::size_t>(std::find(order.begin(), order.end(), q) - order.begin()) + 1;
    hits1 += rank <= 1;
    hits5 += rank <= 5;
    hits10 += rank <= 10;
    rank_sum += rank;
  }
  const double dn = static_cast<double>(n);
  return {hits1 / dn, hits5 / dn, hits10 / dn, static_cast<double>(rank_sum) / dn};
}

}  // namespace

TEST_CASE("rank of truth", "[metrics]") {
  const std::vector<double> top = {0.1, 0.9, 0.3};
  CHECK(rank_of_truth(top, 1) == 1);
  const std::vector<double> five = {0.5, 0.4, 0.3, 0.2, 0.1};
  CHECK(rank_of_truth(five, 4) == 5);
  const std::vector<double> flat = {0.2, 0.2, 0.2, 0.2};
  for (std::size_t i = 0; i < 4; ++i) CHECK(rank_of_truth(flat, i) == 1);
  CHECK_THROWS_AS(rank_of_truth(flat, 4), std::out_of_range);
}

TEST_CASE("retrieval examples", "[metrics]") {
  Tensor eye({4, 4}, 0.0);
  for (std::size_t i = 0; i < 4; ++i) eye.at(i, i) = 1.0;
  for (Direction d : {Direction::t2v, Direction::v2t}) {
    const RetrievalReport r = evaluate(eye, d);
    CHECK(r.recall(1) == 1.0);
    CHECK(r.mnr == 1.0);
  }

  // The truth is always the lowest of ten distinct scores.
  Tensor rev({10, 10});
  for (std::size_t i = 0; i < 10; ++i)
    for (std::size_t j = 0; j < 10; ++j) rev.at(i, j) = i == j ? -1.0 : static_cast<double>(i + j);
  for (Direction d : {Direction::t2v, Direction::v2t}) {
    const RetrievalReport r = evaluate(rev, d);
    CHECK(r.recall(1) == 0.0);
    CHECK(r.recall(10) == 1.0);
    CHECK(r.mnr == 10.0);
  }

  const Tensor rect({5, 3}, 0.0);
  CHECK(evaluate(rect, Direction::t2v).n == 3);
  CHECK_THROWS_AS(evaluate(rect, Direction::v2t), DimensionError);
  CHECK_THROWS_AS(evaluate(Tensor({2, 3}), Direction::t2v), DimensionError);
}

TEST_CASE("metrics match a sort-based oracle", "[metrics]") {
  Rng rng(2026);
  for (int trial = 0; trial < 100; ++trial) {
    Tensor s = rng.normal_tensor({32, 32}, 1.0);
    for (std::size_t i = 0; i < 32; ++i) s.at(i, i) += 1.5;
    for (Direction d : {Direction::t2v, Direction::v2t}) {
      const RetrievalReport r = evaluate(s, d);
      const Oracle o = sort_oracle(s, d);
      CHECK(r.recall(1) == o.r1);
      CHECK(r.recall(5) == o.r5);
      CHECK(r.recall(10) == o.r10);
      CHECK(r.mnr == o.mnr);
    }
  }
}

TEST_CASE("report rendering", "[metrics]") {
  Tensor eye({3, 3}, 0.0);
  for (std::size_t i = 0; i < 3; ++i) eye.at(i, i) = 1.0;
  const std::vector<RetrievalReport> reports = {evaluate(eye, Direction::t2v), evaluate(eye, Direction::v2t)};
  const auto j = report_json(reports);
  CHECK(j.dump().find("\"t2v\"") != std::string::npos);
  CHECK(report_json(reports[0])["mnr"] == 1.0);
  const std::string md = report_markdown(reports);
  CHECK(md.find("| Direction | R@1 | R@5 | R@10 | MnR |") != std::string::npos);
  CHECK(md.find("| v2t |") != std::string::npos);
}
