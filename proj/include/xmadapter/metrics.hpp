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

#include <array>
#include <span>
#include <string>
#include <vector>

#include "json.hpp"

#include "xmadapter/tensor.hpp"

namespace xma {

enum class Direction { t2v, v2t };

const char* direction_name(Direction d);

inline constexpr std::array<std::size_t, 3> kRecallKs = {1, 5, 10};

// 1 + number of candidates scoring strictly above the truth; ties never push
// the truth down.
std::size_t rank_of_truth(std::span<const double> scores, std::size_t truth_index);

struct RetrievalReport {
  Direction direction = Direction::t2v;
  std::array<double, 3> r_at{};  // aligned with kRecallKs
  double mnr = 0.0;
  std::size_t n = 0;
  std::vector<std::size_t> ranks;

  double recall(std::size_t k) const;
};

/// Ranks the paired item of every query in a [videos x texts] score map,
/// where text j is paired with video j. Text-to-video retrieval accepts a
/// gallery with more videos than texts; video-to-text needs a square map.
RetrievalReport evaluate(const Tensor& scores, Direction direction);

nlohmann::json report_json(const RetrievalReport& report);
nlohmann::json report_json(std::span<const RetrievalReport> reports);
// One markdown row per report: | Direction | R@1 | R@5 | R@10 | MnR |
std::string report_markdown(std::span<const RetrievalReport> reports);

}  // namespace xma
