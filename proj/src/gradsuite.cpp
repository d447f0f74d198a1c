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

#include "xmadapter/gradsuite.hpp"

#include <algorithm>
#include <functional>
#include <memory>
#include <optional>

#include "xmadapter/encoder.hpp"
#include "xmadapter/ops.hpp"

namespace xma {

namespace {

constexpr double kCompositeAdapterStd = 0.1;

struct Case {
  std::vector<GradLeaf> leaves;
  std::function<Var()> objective;
  std::size_t max_entries = 0;
  std::shared_ptr<void> keep_alive;

  Case() = default;
  Case(std::vector<GradLeaf> l, std::function<Var()> f) : leaves(std::move(l)), objective(std::move(f)) {}
};

using Builder = std::function<Case(Rng&)>;

Var input(Rng& rng, Shape shape, double stddev = 1.0) { return Var(rng.normal_tensor(std::move(shape), stddev), true); }

// sum(y * R) for a fixed random R, so every output entry matters with its own weight.
std::function<Var(const Var&)> make_probe(Rng& rng) {
  auto seed = rng.next_u64();
  return [seed](const Var& y) {
    Rng r(seed);
    return ops::sum(ops::mul(y, Var(r.normal_tensor(y.shape(), 1.0))));
  };
}

std::vector<GradLeaf> named(std::initializer_list<std::pair<const char*, Var>> vars) {
  std::vector<GradLeaf> out;
  for (const auto& [n, v] : vars) out.push_back({n, v});
  return out;
}

Case unary(Rng& rng, Shape shape, std::function<Var(const Var&)> op, double stddev = 1.0) {
  Var x = input(rng, std::move(shape), stddev);
  auto probe = make_probe(rng);
  return {named({{"x", x}}), [=] { return probe(op(x)); }};
}

Case binary(Rng& rng, Shape sa, Shape sb, std::function<Var(const Var&, const Var&)> op) {
  Var a = input(rng, std::move(sa));
  Var b = input(rng, std::move(sb));
  auto probe = make_probe(rng);
  return {named({{"a", a}, {"b", b}}), [=] { return probe(op(a, b)); }};
}

std::vector<std::uint8_t> random_mask(Rng& rng, std::size_t rows, std::size_t cols) {
  std::vector<std::uint8_t> m(rows * cols);
  for (std::size_t r = 0; r < rows; ++r) {
    for (std::size_t c = 0; c < cols; ++c) m[r * cols + c] = rng.uniform() < 0.7 ? 1 : 0;
    m[r * cols + rng.index(cols)] = 1;
  }
  return m;
}

EncoderConfig small_layer_config() {
  EncoderConfig c = EncoderConfig::toy_text();
  c.layers = 1;
  c.hidden = 8;
  c.heads = 2;
  c.seq_len = 5;
  c.causal = true;
  return c;
}

struct LayerFixture {
  EncoderConfig cfg = small_layer_config();
  ParameterTable table;
  TransformerLayerWeights w;
  std::unique_ptr<AdapterLayout> adapters;

  explicit LayerFixture(Rng& rng) : table(TransformerLayerWeights::specs("layer", cfg), rng) {
    w = TransformerLayerWeights::bind(table, "layer");
    for (const auto& p : table.all()) {
      p->assign(rng.normal_tensor(p->value().shape(), 0.5));
      p->set_trainable(true);
    }
    AdapterConfig a;
    a.bottleneck = 3;
    a.share_width = 3;
    a.dropout_p = 0.0;
    adapters = std::make_unique<AdapterLayout>(1, cfg.hidden, 6, a);
    for (const auto& p : adapters->parameters()) p->assign(rng.normal_tensor(p->value().shape(), 0.3));
  }

  std::vector<GradLeaf> leaves(std::vector<GradLeaf> extra) const {
    auto out = grad_leaves(table.all());
    auto ad = grad_leaves(adapters->parameters());
    out.insert(out.end(), ad.begin(), ad.end());
    extra.insert(extra.end(), out.begin(), out.end());
    return extra;
  }
};

struct CompositeFixture {
  std::unique_ptr<DualEncoderModel> model;
  FrameBatch frames;
  TokenBatch tokens;
};

Case composite(Rng& rng, const ModelConfig& base, const SimilarityConfig& sim, std::size_t entries) {
  ModelConfig cfg = base;
  if (!cfg.adapter) cfg.adapter = AdapterConfig{};
  cfg.adapter->dropout_p = 0.0;
  cfg.backbone_seed = rng.next_u64();
  cfg.adapter_seed = rng.next_u64();
  auto fx = std::make_shared<CompositeFixture>();
  fx->model = std::make_unique<DualEncoderModel>(cfg);
  for (const auto& p : fx->model->trainable_parameters()) {
    p->assign(rng.normal_tensor(p->value().shape(), kCompositeAdapterStd));
  }

  const std::size_t n = 3, F = 3;
  const auto& v = cfg.video;
  fx->frames.values = rng.normal_tensor({n, F, v.patches(), v.patch_dim()}, 1.0);
  fx->frames.mask = full_mask(n, F);
  fx->frames.mask[1 * F + 2] = 0;
  const auto& t = cfg.text;
  fx->tokens.seq_len = t.seq_len;
  for (std::size_t i = 0; i < n; ++i) {
    const std::size_t sep = 2 + rng.index(t.seq_len - 2);
    for (std::size_t s = 0; s < t.seq_len; ++s) {
      std::int32_t id = TokenBatch::kPad;
      if (s == 0) id = TokenBatch::kCls;
      else if (s < sep) id = static_cast<std::int32_t>(3 + rng.index(t.vocab_size - 3));
      else if (s == sep) id = TokenBatch::kSep;
      fx->tokens.ids.push_back(id);
    }
    fx->tokens.sep_pos.push_back(sep);
  }

  Case c;
  c.leaves = grad_leaves(fx->model->trainable_parameters());
  c.max_entries = entries;
  c.keep_alive = fx;
  const CompositeFixture* f = fx.get();
  c.objective = [f, sim] {
    const ForwardContext ctx{nullptr, false};
    Var videos = f->model->encode_videos(f->frames, ctx);
    Var texts = f->model->encode_texts(f->tokens, ctx);
    return contrastive_loss(similarity_matrix(texts, FrameFeatures{videos, f->frames.mask}, sim));
  };
  return c;
}

std::vector<std::pair<std::string, Builder>> builders(const ModelConfig& model, const SimilarityConfig& sim,
                                                      const GradSuiteOptions& opts) {
  std::vector<std::pair<std::string, Builder>> b;
  b.emplace_back("add (broadcast)", [](Rng& r) { return binary(r, {3, 4, 5}, {5}, ops::add); });
  b.emplace_back("sub", [](Rng& r) { return binary(r, {3, 4}, {3, 4}, ops::sub); });
  b.emplace_back("mul (broadcast)", [](Rng& r) { return binary(r, {3, 4}, {4}, ops::mul); });
  b.emplace_back("scale", [](Rng& r) { return unary(r, {3, 4}, [](const Var& x) { return ops::scale(x, -1.7); }); });
  b.emplace_back("matmul", [](Rng& r) { return binary(r, {3, 4}, {4, 5}, ops::matmul); });
  b.emplace_back("linear", [](Rng& r) {
    Var x = input(r, {2, 3, 4}), w = input(r, {4, 5}), bias = input(r, {5});
    auto probe = make_probe(r);
    return Case{named({{"x", x}, {"w", w}, {"b", bias}}), [=] { return probe(ops::linear(x, w, bias)); }};
  });
  b.emplace_back("bmm", [](Rng& r) {
    return binary(r, {2, 3, 4}, {2, 4, 5}, [](const Var& a, const Var& c) { return ops::bmm(a, c); });
  });
  b.emplace_back("bmm (transposed)", [](Rng& r) {
    return binary(r, {2, 3, 4}, {2, 5, 4}, [](const Var& a, const Var& c) { return ops::bmm(a, c, true); });
  });
  b.emplace_back("permute + reshape", [](Rng& r) {
    return unary(r, {2, 3, 4}, [](const Var& x) {
      const std::size_t axes[] = {2, 0, 1};
      return ops::reshape(ops::permute(x, axes), {4, 6});
    });
  });
  b.emplace_back("transpose", [](Rng& r) { return unary(r, {3, 5}, ops::transpose); });
  b.emplace_back("concat_last", [](Rng& r) { return binary(r, {3, 2}, {3, 4}, ops::concat_last); });
  b.emplace_back("layernorm", [](Rng& r) {
    Var x = input(r, {4, 6}), g = input(r, {6}), beta = input(r, {6});
    auto probe = make_probe(r);
    return Case{named({{"x", x}, {"gamma", g}, {"beta", beta}}), [=] { return probe(ops::layernorm(x, g, beta)); }};
  });
  b.emplace_back("gelu", [](Rng& r) { return unary(r, {5, 7}, ops::gelu, 2.0); });
  b.emplace_back("softmax", [](Rng& r) { return unary(r, {4, 5}, ops::softmax); });
  b.emplace_back("masked_softmax", [](Rng& r) {
    auto mask = random_mask(r, 4, 5);
    return unary(r, {4, 5}, [mask](const Var& x) { return ops::masked_softmax(x, mask); });
  });
  b.emplace_back("log_softmax", [](Rng& r) { return unary(r, {4, 5}, ops::log_softmax); });
  b.emplace_back("l2_normalize", [](Rng& r) { return unary(r, {4, 6}, ops::l2_normalize); });
  b.emplace_back("dropout (fixed mask)", [](Rng& r) {
    const auto seed = r.next_u64();
    return unary(r, {4, 6}, [seed](const Var& x) {
      Rng local(seed);
      return ops::dropout(x, 0.3, local, true);
    });
  });
  b.emplace_back("row indexing", [](Rng& r) {
    Var x = input(r, {2, 3, 4}), row = input(r, {4}), table = input(r, {5, 4});
    auto probe = make_probe(r);
    auto probe2 = make_probe(r);
    return Case{named({{"x", x}, {"row", row}, {"table", table}}), [=] {
                  const std::size_t rows[] = {0, 2};
                  return ops::add(probe(ops::take_rows(ops::prepend_row(x, row), rows)),
                                  probe2(ops::leading_rows(table, 3)));
                }};
  });
  b.emplace_back("embedding", [](Rng& r) {
    std::vector<std::int32_t> ids(6);
    for (auto& id : ids) id = static_cast<std::int32_t>(r.index(5));
    return unary(r, {5, 4}, [ids](const Var& t) { return ops::embedding(t, ids, 2, 3); });
  });
  b.emplace_back("reductions", [](Rng& r) {
    Var x = input(r, {3, 4}), y = input(r, {4, 4}), z = input(r, {2, 3});
    auto probe = make_probe(r);
    auto probe2 = make_probe(r);
    return Case{named({{"x", x}, {"y", y}, {"z", z}}), [=] {
                  return ops::add(ops::add(probe(ops::sum_last(x)), probe2(ops::diagonal(y))), ops::mean(z));
                }};
  });
  b.emplace_back("multi-head attention", [](Rng& r) {
    auto fx = std::make_shared<LayerFixture>(r);
    Var x = input(r, {2, fx->cfg.seq_len, fx->cfg.hidden});
    auto probe = make_probe(r);
    const LayerFixture* f = fx.get();
    std::vector<GradLeaf> leaves = named({{"x", x}});
    for (const auto& leaf : grad_leaves(fx->table.all())) {
      if (leaf.name.find(".attn.") != std::string::npos) leaves.push_back(leaf);
    }
    Case c{std::move(leaves), [=] { return probe(multi_head_attention(x, f->w, f->cfg.heads, true)); }};
    c.keep_alive = fx;
    return c;
  });
  b.emplace_back("cross-modal adapter pair", [](Rng& r) {
    auto fx = std::make_shared<LayerFixture>(r);
    Var xv = input(r, {2, 3, fx->cfg.hidden}), xt = input(r, {2, 6});
    auto probe = make_probe(r);
    auto probe2 = make_probe(r);
    const LayerFixture* f = fx.get();
    Case c{grad_leaves(fx->adapters->parameters()), [=] {
             const ForwardContext ctx{nullptr, false};
             const auto& v = f->adapters->weights(Modality::video, 1, InsertionPoint::attn);
             const auto& t = f->adapters->weights(Modality::text, 1, InsertionPoint::attn);
             return ops::add(probe(adapter_forward(xv, v, ctx)), probe2(adapter_forward(xt, t, ctx)));
           }};
    c.leaves.push_back({"xv", xv});
    c.leaves.push_back({"xt", xt});
    c.keep_alive = fx;
    return c;
  });
  b.emplace_back("transformer layer + adapters", [](Rng& r) {
    auto fx = std::make_shared<LayerFixture>(r);
    Var x = input(r, {2, fx->cfg.seq_len, fx->cfg.hidden});
    auto probe = make_probe(r);
    const LayerFixture* f = fx.get();
    Case c{fx->leaves(named({{"x", x}})), [=] {
             const LayerAdapters hooks{&f->adapters->weights(Modality::video, 1, InsertionPoint::attn),
                                       &f->adapters->weights(Modality::video, 1, InsertionPoint::mlp)};
             return probe(transformer_layer(x, f->w, f->cfg, hooks, ForwardContext{nullptr, false}));
           }};
    c.keep_alive = fx;
    return c;
  });
  b.emplace_back("similarity + contrastive loss", [sim](Rng& r) {
    Var texts = input(r, {4, 6}), frames = input(r, {4, 3, 6});
    auto mask = random_mask(r, 4, 3);
    return Case{named({{"texts", texts}, {"frames", frames}}),
                [=] { return contrastive_loss(similarity_matrix(texts, FrameFeatures{frames, mask}, sim)); }};
  });
  b.emplace_back("full pipeline (both encoders, all adapters)", [model, sim, opts](Rng& r) {
    return composite(r, model, sim, opts.composite_entries_per_leaf);
  });
  return b;
}

}  // namespace

std::vector<GradSuiteRow> run_gradcheck_suite(const ModelConfig& model, const SimilarityConfig& sim,
                                              const GradSuiteOptions& options) {
  std::optional<testing::ScopedBrokenGeluBackward> fault;
  if (options.inject_fault) fault.emplace();
  std::vector<GradSuiteRow> rows;
  std::uint64_t row_id = 0;
  for (const auto& [name, build] : builders(model, sim, options)) {
    GradSuiteRow row;
    row.component = name;
    row.seeds = options.seeds;
    ++row_id;
    for (std::size_t s = 0; s < options.seeds; ++s) {
      Rng rng = Rng(s + 1).fork(row_id);
      Case c = build(rng);
      GradcheckOptions go = options.check;
      go.max_entries_per_leaf = c.max_entries;
      go.sample_seed = s + 1;
      const GradcheckResult res = gradcheck(c.objective, c.leaves, go);
      row.entries += res.entries_checked;
      if (res.max_rel_error >= row.max_rel_error) {
        row.max_rel_error = res.max_rel_error;
        row.worst = res.worst_leaf + "[" + std::to_string(res.worst_index) + "]";
        row.worst_analytic = res.worst_analytic;
        row.worst_numeric = res.worst_numeric;
      }
    }
    row.pass = row.max_rel_error <= options.tolerance;
    rows.push_back(std::move(row));
  }
  return rows;
}

}  // namespace xma
