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

// End-to-end acceptance checks. Prints one PASS/FAIL line per criterion and
// exits non-zero if any criterion fails.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <functional>
#include <numeric>
#include <set>
#include <string>
#include <vector>

#include "CLI11.hpp"

#include "xmadapter/archive.hpp"
#include "xmadapter/config.hpp"
#include "xmadapter/gradsuite.hpp"
#include "xmadapter/metrics.hpp"
#include "xmadapter/model.hpp"
#include "xmadapter/ops.hpp"
#include "xmadapter/similarity.hpp"
#include "xmadapter/synthetic.hpp"
#include "xmadapter/training.hpp"

using namespace xma;

namespace {

using Clock = std::chrono::steady_clock;

struct Outcome {
  bool pass = true;
  std::string detail;

  void require(bool ok, const std::string& what) {
    if (!ok) {
      pass = false;
      detail += (detail.empty() ? "" : "; ") + what;
    }
  }
  void note(const std::string& what) { detail += (detail.empty() ? "" : "; ") + what; }
};

std::string fmt(const char* f, double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, f, v);
  return buf;
}

double seconds_since(Clock::time_point t0) { return std::chrono::duration<double>(Clock::now() - t0).count(); }

// ---- 1. parameter budgets -------------------------------------------------

Outcome parameter_budgets() {
  Outcome o;
  const auto t0 = Clock::now();
  struct Row {
    std::size_t r, ds;
    std::uint64_t expected;
    const char* published;
  };
  for (const Row& row : {Row{8, 16, 519552, "0.52M"}, Row{8, 8, 521088, "0.52M"}, Row{16, 16, 1008384, "1.00M"},
                         Row{16, 64, 989952, "0.99M"}, Row{16, 512, 817920, "0.81M"}}) {
    AdapterConfig a;
    a.bottleneck = row.r;
    a.share_width = row.ds;
    const std::uint64_t closed = count_trained_params(768, 512, 12, a);
    std::uint64_t allocated = 0;
    const AdapterLayout layout(12, 768, 512, a);
    for (const auto& p : layout.parameters()) allocated += p->value().numel();
    const std::string tag = "(r=" + std::to_string(row.r) + ",d_s=" + std::to_string(row.ds) + ")";
    o.require(closed == row.expected, tag + " closed form " + std::to_string(closed));
    o.require(allocated == row.expected, tag + " allocated " + std::to_string(allocated));
    const double published = std::stod(row.published);
    o.require(std::abs(static_cast<double>(closed) / 1e6 - published) < 0.01,
              tag + " " + format_millions(closed) + " is more than 0.01M from " + row.published);
    o.note(tag + " " + std::to_string(closed) + " (" + format_millions(closed) + ", published " + row.published + ")");
  }
  const double s = seconds_since(t0);
  o.require(s < 1.0, "runtime " + fmt("%.2f s", s));
  return o;
}

// ---- 2. trained share of the full-size model -------------------------------

Outcome percentage() {
  Outcome o;
  const auto t0 = Clock::now();
  const RunConfig cfg = RunConfig::defaults(Preset::clip);
  const ParameterCensus c = DualEncoderModel::census(cfg.model);
  const double pct = c.trainable_percent();
  o.require(c.trainable == 519552, "trained " + std::to_string(c.trainable));
  o.require(std::abs(pct - 0.34) <= 0.05, "percent " + fmt("%.4f", pct));
  o.note("trained " + std::to_string(c.trainable) + " of " + std::to_string(c.total) + " = " + fmt("%.4f%%", pct));
  const double s = seconds_since(t0);
  o.require(s < 5.0, "runtime " + fmt("%.2f s", s));
  return o;
}

// ---- 3. gradient suite ----------------------------------------------------

Outcome gradient_suite() {
  Outcome o;
  const auto t0 = Clock::now();
  const RunConfig cfg = RunConfig::defaults(Preset::toy);
  GradSuiteOptions opts;
  opts.seeds = 10;
  const auto rows = run_gradcheck_suite(cfg.model, cfg.similarity, opts);
  double worst = 0.0;
  bool composite = false;
  for (const auto& r : rows) {
    o.require(r.pass, r.component + " max rel err " + fmt("%.3e", r.max_rel_error) + " at " + r.worst);
    worst = std::max(worst, r.max_rel_error);
    composite = composite || r.component.rfind("full pipeline", 0) == 0;
  }
  o.require(composite, "composite check missing");
  o.note(std::to_string(rows.size()) + " components x 10 seeds, worst rel err " + fmt("%.2e", worst));
  const double s = seconds_since(t0);
  o.require(s < 120.0, "runtime " + fmt("%.1f s", s));
  o.note(fmt("%.1f s", s));
  return o;
}

// ---- 4. mechanism limits --------------------------------------------------

Outcome mechanism_limits() {
  Outcome o;
  Rng rng(404);
  double hot_err = 0.0, cold_err = 0.0;
  for (int trial = 0; trial < 100; ++trial) {
    const std::size_t F = 8, D = 16;
    // Unit-range inputs: the deviation at large tau is first order in |alpha| |frame| / tau.
    Tensor frames({F, D}), alpha({F});
    for (double& v : frames.values()) v = 2.0 * rng.uniform() - 1.0;
    for (double& v : alpha.values()) v = 2.0 * rng.uniform() - 1.0;
    const std::size_t top = static_cast<std::size_t>(
        std::max_element(alpha.values().begin(), alpha.values().end()) - alpha.values().begin());
    const Tensor hot = aggregate(alpha, frames, 1e6);
    const Tensor cold = aggregate(alpha, frames, 1e-6);
    for (std::size_t k = 0; k < D; ++k) {
      double mean = 0.0;
      for (std::size_t f = 0; f < F; ++f) mean += frames.at(f, k);
      mean /= static_cast<double>(F);
      hot_err = std::max(hot_err, std::abs(hot[k] - mean));
      cold_err = std::max(cold_err, std::abs(cold[k] - frames.at(top, k)));
    }
  }
  o.require(hot_err <= 1e-6, "tau=1e6 off the mean by " + fmt("%.2e", hot_err));
  o.require(cold_err <= 1e-6, "tau=1e-6 off the argmax frame by " + fmt("%.2e", cold_err));

  // Zero-weight adapters against the adapter-free model on the same backbone.
  const RunConfig cfg = RunConfig::defaults(Preset::toy);
  ModelConfig with = cfg.model;
  with.adapter->init_std = 0.0;
  ModelConfig without = cfg.model;
  without.adapter.reset();
  const DualEncoderModel a(with), b(without);
  SyntheticSpec small = cfg.data;
  small.n_pairs = 8;
  small.val_fraction = 0.0;
  const Dataset d = generate(small, cfg.model.text.vocab_size).train;
  const ForwardContext ctx{nullptr, false};
  const bool videos_same = bitwise_equal(a.encode_videos(d.frames, ctx).value(), b.encode_videos(d.frames, ctx).value());
  const bool texts_same = bitwise_equal(a.encode_texts(d.tokens, ctx).value(), b.encode_texts(d.tokens, ctx).value());
  o.require(videos_same && texts_same, "zero-weight adapters changed the model output");

  // Share width 0 against the plain bottleneck formula, every adapter of a randomized layout.
  AdapterConfig v = *cfg.model.adapter;
  v.share_width = 0;
  v.init_std = 0.3;
  AdapterLayout layout(cfg.model.video.layers, cfg.model.video.hidden, cfg.model.text.hidden, v);
  Rng init(5);
  init_adapters(layout, v, init);
  for (const auto& p : layout.parameters())
    if (p->value().rank() == 1)
      for (double& x : p->mutable_value().values()) x = init.normal();
  bool vanilla = true;
  for (std::size_t l = 1; l <= layout.layers(); ++l) {
    for (auto point : {InsertionPoint::attn, InsertionPoint::mlp}) {
      for (auto m : {Modality::video, Modality::text}) {
        const AdapterWeights& w = layout.weights(m, l, point);
        const Var x(rng.normal_tensor({5, w.width}, 1.0));
        const Var ref = ops::add(
            x, ops::add(ops::linear(ops::gelu(ops::linear(x, w.w_down->var(), w.b_down->var())), w.w_up_unique->var()),
                        w.b_up->var()));
        vanilla = vanilla && !w.share && bitwise_equal(adapter_forward(x, w, ctx).value(), ref.value());
      }
    }
  }
  o.require(vanilla, "d_s=0 adapter differs from the vanilla adapter");
  o.note("tau limits err " + fmt("%.1e", std::max(hot_err, cold_err)) + ", identity and d_s=0 bit-exact");
  return o;
}

// ---- 5/6. training runs ---------------------------------------------------

struct RunStats {
  double untrained_train = 0.0, untrained_val = 0.0;
  double train_r1 = 0.0, val_r1 = 0.0;
  bool frozen_ok = false;
  double seconds = 0.0;
};

RunStats train_run(RunConfig cfg, const SyntheticData& data) {
  const auto t0 = Clock::now();
  RunStats s;
  const DualEncoderModel model(cfg.model);
  const auto r1 = [&](const Dataset& d) {
    return evaluate(score_dataset(model, d, cfg.similarity), Direction::t2v).recall(1);
  };
  s.untrained_train = r1(data.train);
  s.untrained_val = r1(data.val);
  const std::uint64_t before = frozen_parameter_hash(model);
  fit(model, data.train, data.val, cfg.train, cfg.similarity);
  s.frozen_ok = frozen_parameter_hash(model) == before;
  s.train_r1 = r1(data.train);
  s.val_r1 = r1(data.val);
  s.seconds = seconds_since(t0);
  return s;
}

RunConfig with_seed(RunConfig cfg, std::uint64_t seed, std::size_t share_width) {
  cfg.train.seed = seed;
  cfg.model.adapter_seed = seed;
  cfg.model.adapter->share_width = share_width;
  cfg.validate();
  return cfg;
}

Outcome learnability() {
  Outcome o;
  const RunConfig cfg = RunConfig::defaults(Preset::toy);
  const SyntheticData data = generate(cfg.data, cfg.model.text.vocab_size);
  o.require(cfg.data.n_pairs == 64 && cfg.data.frames_per_video == 8 && cfg.data.distractor_frames == 2,
            "dataset shape differs from the criterion");
  o.require(cfg.model.adapter->bottleneck == 8 && cfg.model.adapter->share_width == 16 && cfg.train.batch_size == 16 &&
                cfg.train.epochs <= 200,
            "training setup differs from the criterion");
  const RunStats s = train_run(cfg, data);
  o.require(s.untrained_train <= 0.10, "untrained train R@1 " + fmt("%.3f", s.untrained_train));
  o.require(s.untrained_val <= 0.10, "untrained val R@1 " + fmt("%.3f", s.untrained_val));
  o.require(s.train_r1 >= 0.90, "train R@1 " + fmt("%.3f", s.train_r1));
  o.require(s.val_r1 >= 0.60, "val R@1 " + fmt("%.3f", s.val_r1));
  o.require(s.frozen_ok, "frozen parameters changed");
  o.require(s.seconds < 300.0, "runtime " + fmt("%.0f s", s.seconds));
  o.note("untrained " + fmt("%.3f", s.untrained_train) + "/" + fmt("%.3f", s.untrained_val) + ", final train " +
         fmt("%.3f", s.train_r1) + ", val " + fmt("%.3f", s.val_r1) + ", " + fmt("%.0f s", s.seconds));
  return o;
}

Outcome sharing_effect() {
  Outcome o;
  const RunConfig base = RunConfig::defaults(Preset::toy);
  const SyntheticData data = generate(base.data, base.model.text.vocab_size);
  double shared = 0.0, plain = 0.0;
  std::string per_seed;
  for (std::uint64_t seed = 1; seed <= 5; ++seed) {
    const RunStats a = train_run(with_seed(base, seed, 16), data);
    const RunStats b = train_run(with_seed(base, seed, 0), data);
    shared += a.val_r1 / 5.0;
    plain += b.val_r1 / 5.0;
    per_seed += (seed > 1 ? " " : "") + fmt("%.3f", a.val_r1) + "/" + fmt("%.3f", b.val_r1);
  }
  o.require(shared >= plain - 0.05, "d_s=16 mean val R@1 " + fmt("%.3f", shared) + " < d_s=0 " + fmt("%.3f", plain) +
                                        " - 0.05");
  o.note("mean val R@1 d_s=16 " + fmt("%.3f", shared) + " vs d_s=0 " + fmt("%.3f", plain) + " (per seed " +
         per_seed + ")");
  return o;
}

// ---- 7. metric oracle -----------------------------------------------------

Outcome metric_oracle() {
  Outcome o;
  Rng rng(77);
  std::size_t mismatches = 0;
  for (int trial = 0; trial < 100; ++trial) {
    Tensor s = rng.normal_tensor({32, 32}, 1.0);
    for (std::size_t i = 0; i < 32; ++i) s.at(i, i) += 1.0;
    for (Direction d : {Direction::t2v, Direction::v2t}) {
      std::size_t hits[3] = {0, 0, 0}, rank_sum = 0;
      for (std::size_t q = 0; q < 32; ++q) {
        std::vector<std::size_t> order(32);
        std::iota(order.begin(), order.end(), 0);
        auto score = [&](std::size_t c) { return d == Direction::t2v ? s.at(c, q) : s.at(q, c); };
        std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return score(a) > score(b); });
        const std::size_t rank = static_cast<std::size_t>(std::find(order.begin(), order.end(), q) - order.begin()) + 1;
        for (std::size_t k = 0; k < 3; ++k) hits[k] += rank <= kRecallKs[k];
        rank_sum += rank;
      }
      const RetrievalReport r = evaluate(s, d);
      for (std::size_t k = 0; k < 3; ++k) mismatches += r.r_at[k] != static_cast<double>(hits[k]) / 32.0;
      mismatches += r.mnr != static_cast<double>(rank_sum) / 32.0;
    }
  }
  o.require(mismatches == 0, std::to_string(mismatches) + " metric mismatches");

  double sym = 0.0, uniform = 0.0;
  for (int trial = 0; trial < 100; ++trial) {
    const std::size_t n = 2 + rng.index(31);
    Tensor s = rng.normal_tensor({n, n}, 0.3);
    Tensor t({n, n});
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = 0; j < n; ++j) t.at(j, i) = s.at(i, j);
    const double v2t = contrastive_terms(Var(s), kDefaultLogitScale).v2t.value()[0];
    const double t2v = contrastive_terms(Var(t), kDefaultLogitScale).t2v.value()[0];
    sym = std::max(sym, std::abs(v2t - t2v));
    const double c = rng.uniform() * 2.0 - 1.0;
    const double u = contrastive_terms(Var(Tensor({n, n}, c)), kDefaultLogitScale).total.value()[0];
    uniform = std::max(uniform, std::abs(u - std::log(static_cast<double>(n))));
  }
  o.require(sym <= 1e-12, "loss symmetry off by " + fmt("%.2e", sym));
  o.require(uniform <= 1e-6, "uniform loss off ln n by " + fmt("%.2e", uniform));
  o.note("200 maps exact, symmetry " + fmt("%.1e", sym) + ", uniform " + fmt("%.1e", uniform));
  return o;
}

// ---- 8. archive format ----------------------------------------------------

Outcome format_fidelity() {
  Outcome o;
  Rng rng(8);
  std::vector<ArchiveEntry> entries;
  for (std::size_t i = 0; i < 6; ++i) {
    Shape shape;
    for (std::size_t r = 0; r < 1 + i % 3; ++r) shape.push_back(1 + rng.index(5));
    Tensor t = rng.normal_tensor(shape, 1e3);
    t[0] = i == 0 ? -0.0 : i == 1 ? 5e-324 : i == 2 ? 1.7976931348623157e308 : t[0];
    entries.push_back({"tensor." + std::to_string(i), t, DType::f64});
  }
  const auto bytes = encode_archive(entries);
  const auto back = decode_archive(bytes);
  bool same = back.size() == entries.size();
  for (std::size_t i = 0; same && i < back.size(); ++i) {
    same = back[i].name == entries[i].name && bitwise_equal(back[i].value, entries[i].value);
  }
  o.require(same, "roundtrip is not bit-exact");
  o.require(encode_archive(back) == bytes, "re-encoding changed the bytes");

  const std::size_t header = archive_header_bytes(entries);
  std::size_t rejected = 0, accepted = 0, foreign = 0;
  std::set<std::string> kinds;
  Rng fuzz(1000);
  for (int i = 0; i < 1000; ++i) {
    auto mutated = bytes;
    switch (i % 4) {
      case 0:  // random byte overwrites inside the headers
        for (std::size_t k = 0, n = 1 + fuzz.index(6); k < n; ++k)
          mutated[fuzz.index(header)] = static_cast<std::uint8_t>(fuzz.index(256));
        break;
      case 1:  // truncation
        mutated.resize(fuzz.index(bytes.size()));
        break;
      case 2:  // appended garbage
        for (std::size_t k = 0, n = 1 + fuzz.index(16); k < n; ++k)
          mutated.push_back(static_cast<std::uint8_t>(fuzz.index(256)));
        break;
      default:  // huge counts and extents
        for (std::size_t k = 0; k < 4; ++k) mutated[8 + k] = 0xFF;
        if (fuzz.uniform() < 0.5) mutated[8] = static_cast<std::uint8_t>(fuzz.index(256));
        break;
    }
    try {
      decode_archive(mutated);
      ++accepted;
    } catch (const ArchiveError& e) {
      ++rejected;
      kinds.insert(archive_error_name(e.kind()));
    } catch (...) {
      ++foreign;
    }
  }
  o.require(foreign == 0, std::to_string(foreign) + " fuzz cases escaped the error taxonomy");
  std::string k;
  for (const auto& name : kinds) k += (k.empty() ? "" : ",") + name;
  o.note("roundtrip bit-exact; fuzz " + std::to_string(rejected) + " rejected, " + std::to_string(accepted) +
         " accepted, kinds {" + k + "}");
  return o;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Acceptance criteria"};
  std::vector<int> only;
  app.add_option("--only", only, "Run only these criteria (1-8)");
  CLI11_PARSE(app, argc, argv);

  const std::vector<std::pair<const char*, std::function<Outcome()>>> criteria = {
      {"parameter budgets", parameter_budgets}, {"trained percentage", percentage},
      {"gradient suite", gradient_suite},       {"mechanism limits", mechanism_limits},
      {"learnability", learnability},           {"sharing effect", sharing_effect},
      {"metric oracle", metric_oracle},         {"format fidelity", format_fidelity},
  };
  bool all = true;
  for (std::size_t i = 0; i < criteria.size(); ++i) {
    const int id = static_cast<int>(i + 1);
    if (!only.empty() && std::find(only.begin(), only.end(), id) == only.end()) continue;
    Outcome o;
    try {
      o = criteria[i].second();
    } catch (const std::exception& e) {
      o.pass = false;
      o.detail = std::string("exception: ") + e.what();
    }
    all = all && o.pass;
    std::printf("%s %d %s: %s\n", o.pass ? "PASS" : "FAIL", id, criteria[i].first, o.detail.c_str());
    std::fflush(stdout);
  }
  return all ? 0 : 1;
}
