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

#include "xmadapter/metrics.hpp"

#include <cstdio>
#include <sstream>
#include <stdexcept>

namespace xma {

namespace {

constexpr const char* kTieRule = "strict-greater competition ranking (ties share the best rank)";

}  // namespace

const char* direction_name(Direction d) { return d == Direction::t2v ? "t2v" : "v2t"; }

std::size_t rank_of_truth(std::span<const double> scores, std::size_t truth_index) {
  if (truth_index >= scores.size()) {
    throw std::out_of_range("truth index " + std::to_string(truth_index) + " out of range for " +
                            std::to_string(scores.size()) + " candidates");
  }
  const double truth = scores[truth_index];
  std::size_t rank = 1;
  for (double s : scores)
    if (s > truth) ++rank;
  return rank;
}

double RetrievalReport::recall(std::size_t k) const {
  for (std::size_t i = 0; i < kRecallKs.size(); ++i)
    if (kRecallKs[i] == k) return r_at[i];
  throw std::invalid_argument("recall is reported at K = 1, 5, 10 only");
}

RetrievalReport evaluate(const Tensor& scores, Direction direction) {
  if (scores.rank() != 2) throw DimensionError("evaluate needs a rank-2 score map");
  const std::size_t nv = scores.dim(0), nt = scores.dim(1);
  RetrievalReport report;
  report.direction = direction;
  std::vector<double> candidates;
  if (direction == Direction::t2v) {
    if (nv < nt) {
      throw DimensionError("text-to-video evaluation needs at least as many videos as texts, got " +
                           std::to_string(nv) + " x " + std::to_string(nt));
    }
    candidates.resize(nv);
    for (std::size_t j = 0; j < nt; ++j) {
      for (std::size_t i = 0; i < nv; ++i) candidates[i] = scores.at(i, j);
      report.ranks.push_back(rank_of_truth(candidates, j));
    }
  } else {
    if (nv != nt) {
      throw DimensionError("video-to-text evaluation needs a square map, got " + std::to_string(nv) + " x " +
                           std::to_string(nt));
    }
    for (std::size_t i = 0; i < nv; ++i) {
      std::span<const double> row(scores.data() + i * nt, nt);
      report.ranks.push_back(rank_of_truth(row, i));
    }
  }
  report.n = report.ranks.size();
  double total = 0.0;
  for (std::size_t r : report.ranks) {
    total += static_cast<double>(r);
    for (std::size_t k = 0; k < kRecallKs.size(); ++k)
      if (r <= kRecallKs[k]) report.r_at[k] += 1.0;
  }
  const double n = static_cast<double>(report.n);
  for (double& r : report.r_at) r /= n;
  report.mnr = total / n;
  return report;
}

nlohmann::json report_json(const RetrievalReport& report) {
  return {{"direction", direction_name(report.direction)},
          {"n", report.n},
          {"r1", report.r_at[0]},
          {"r5", report.r_at[1]},
          {"r10", report.r_at[2]},
          {"mnr", report.mnr},
          {"tie_rule", kTieRule}};
}

nlohmann::json report_json(std::span<const RetrievalReport> reports) {
  nlohmann::json out = nlohmann::json::object();
  for (const auto& r : reports) out[direction_name(r.direction)] = report_json(r);
  return out;
}

std::string report_markdown(std::span<const RetrievalReport> reports) {
  std::ostringstream out;
  out << "| Direction | R@1 | R@5 | R@10 | MnR |\n|---|---|---|---|---|\n";
  char buf[128];
  for (const auto& r : reports) {
    std::snprintf(buf, sizeof buf, "| %s | %.1f | %.1f | %.1f | %.2f |\n", direction_name(r.direction),
                  100.0 * r.r_at[0], 100.0 * r.r_at[1], 100.0 * r.r_at[2], r.mnr);
    out << buf;
  }
  out << "\nRecall in percent over n = " << (reports.empty() ? 0 : reports.front().n)
      << " queries; ties: " << kTieRule << ".\n";
  return out.str();
}

}  // namespace xma
