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

#include "xmadapter/config.hpp"

#include <cmath>
#include <fstream>
#include <limits>
#include <set>

namespace xma {

namespace {

using nlohmann::json;

// Reads one JSON object against a fixed key set.
class Section {
 public:
  Section(const json& doc, std::string path) : path_(std::move(path)) {
    if (doc.is_null()) return;
    if (!doc.is_object()) throw ConfigError("config key '" + path_ + "' must be an object");
    doc_ = &doc;
  }

  ~Section() noexcept(false) {
    if (!doc_ || std::uncaught_exceptions()) return;
    for (const auto& [key, value] : doc_->items()) {
      if (!seen_.count(key)) throw ConfigError("unknown config key '" + key_path(key) + "'");
    }
  }

  const json* child(const std::string& key) {
    seen_.insert(key);
    if (!doc_) return nullptr;
    auto it = doc_->find(key);
    return it == doc_->end() ? nullptr : &*it;
  }

  // The nested object, or null when absent.
  const json& sub(const std::string& key) {
    static const json kAbsent;
    const json* v = child(key);
    return v ? *v : kAbsent;
  }

  std::string key_path(const std::string& key) const { return path_.empty() ? key : path_ + "." + key; }

  void number(const std::string& key, double& out) {
    if (const json* v = child(key)) {
      if (!v->is_number()) throw ConfigError("config key '" + key_path(key) + "' must be a number");
      out = v->get<double>();
    }
  }

  template <typename U>
  void count(const std::string& key, U& out) {
    if (const json* v = child(key)) {
      if (!v->is_number_integer() || (v->is_number_integer() && !v->is_number_unsigned() && v->get<long long>() < 0)) {
        throw ConfigError("config key '" + key_path(key) + "' must be a non-negative integer");
      }
      const auto raw = v->get<unsigned long long>();
      if (raw > std::numeric_limits<U>::max()) throw ConfigError("config key '" + key_path(key) + "' is too large");
      out = static_cast<U>(raw);
    }
  }

  void boolean(const std::string& key, bool& out) {
    if (const json* v = child(key)) {
      if (!v->is_boolean()) throw ConfigError("config key '" + key_path(key) + "' must be true or false");
      out = v->get<bool>();
    }
  }

  void string(const std::string& key, std::string& out) {
    if (const json* v = child(key)) {
      if (!v->is_string()) throw ConfigError("config key '" + key_path(key) + "' must be a string");
      out = v->get<std::string>();
    }
  }

 private:
  const json* doc_ = nullptr;
  std::string path_;
  std::set<std::string> seen_;
};

void read_encoder(Section& s, EncoderConfig& e) {
  s.count("layers", e.layers);
  s.count("hidden", e.hidden);
  s.count("heads", e.heads);
  s.count("mlp_ratio", e.mlp_ratio);
  s.number("init_std", e.init_std);
  s.boolean("fan_in_init", e.fan_in_init);
  if (e.modality == Modality::video) {
    std::size_t patches = e.patches();
    s.count("patches", patches);
    e.seq_len = patches + 1;
    s.count("patch_size", e.patch_size);
    s.count("channels", e.channels);
    std::size_t proj = e.output_width();
    s.count("proj_out", proj);
    e.proj_out = proj;
  } else {
    s.count("seq_len", e.seq_len);
    s.count("vocab_size", e.vocab_size);
    s.boolean("causal", e.causal);
  }
}

json encoder_json(const EncoderConfig& e) {
  json j = {{"layers", e.layers},   {"hidden", e.hidden},     {"heads", e.heads},
            {"mlp_ratio", e.mlp_ratio}, {"init_std", e.init_std}, {"fan_in_init", e.fan_in_init}};
  if (e.modality == Modality::video) {
    j["patches"] = e.patches();
    j["patch_size"] = e.patch_size;
    j["channels"] = e.channels;
    j["proj_out"] = e.output_width();
  } else {
    j["seq_len"] = e.seq_len;
    j["vocab_size"] = e.vocab_size;
    j["causal"] = e.causal;
  }
  return j;
}

const char* preset_name(Preset p) { return p == Preset::toy ? "toy" : "clip"; }

void check(bool ok, const std::string& key, const std::string& rule) {
  if (!ok) throw ConfigError("config key '" + key + "' " + rule);
}

// Module validators phrase errors without the section prefix; attach it.
template <typename F>
void wrap(const std::string& section, F&& f) {
  try {
    f();
  } catch (const ConfigError&) {
    throw;
  } catch (const std::exception& e) {
    throw ConfigError(section + ": " + e.what());
  }
}

}  // namespace

RunConfig RunConfig::defaults(Preset preset) {
  RunConfig c;
  c.preset = preset;
  if (preset == Preset::clip) {
    c.model.video = EncoderConfig::clip_video();
    c.model.text = EncoderConfig::clip_text();
    c.train.lr = 1e-5;
    c.train.epochs = 5;
    c.train.batch_size = 128;
  } else {
    c.train.lr = 1e-2;
    c.train.epochs = 80;
    c.train.batch_size = 16;
    c.data.n_concepts = 10;
    c.data.concepts_per_pair = 3;
  }
  c.model.adapter_seed = c.train.seed;
  return c;
}

RunConfig RunConfig::from_json(const json& doc) {
  if (!doc.is_object()) throw ConfigError("run config must be a JSON object");
  Preset preset = Preset::toy;
  if (auto enc = doc.find("encoder"); enc != doc.end() && enc->is_object()) {
    if (auto p = enc->find("preset"); p != enc->end()) {
      if (!p->is_string() || (*p != "toy" && *p != "clip")) {
        throw ConfigError("config key 'encoder.preset' must be \"toy\" or \"clip\"");
      }
      preset = *p == "clip" ? Preset::clip : Preset::toy;
    }
  }
  RunConfig c = defaults(preset);

  Section root(doc, "");
  {
    Section enc(root.sub("encoder"), "encoder");
    std::string name = preset_name(preset);
    enc.string("preset", name);
    enc.count("backbone_seed", c.model.backbone_seed);
    {
      Section v(enc.sub("video"), "encoder.video");
      read_encoder(v, c.model.video);
    }
    {
      Section t(enc.sub("text"), "encoder.text");
      read_encoder(t, c.model.text);
    }
  }
  {
    Section a(root.sub("adapter"), "adapter");
    bool enabled = true;
    a.boolean("enabled", enabled);
    AdapterConfig cfg = c.model.adapter.value_or(AdapterConfig{});
    a.count("r", cfg.bottleneck);
    a.count("d_s", cfg.share_width);
    a.number("dropout_p", cfg.dropout_p);
    a.number("init_std", cfg.init_std);
    a.boolean("use_bias", cfg.use_bias);
    c.model.adapter = enabled ? std::optional<AdapterConfig>(cfg) : std::nullopt;
  }
  {
    Section s(root.sub("similarity"), "similarity");
    s.number("tau", c.similarity.tau);
    s.number("logit_scale", c.similarity.logit_scale);
  }
  {
    Section t(root.sub("train"), "train");
    t.number("lr", c.train.lr);
    t.count("epochs", c.train.epochs);
    t.count("batch_size", c.train.batch_size);
    t.number("warmup_frac", c.train.warmup_frac);
    t.number("weight_decay", c.train.weight_decay);
    t.count("seed", c.train.seed);
    t.number("beta1", c.train.beta1);
    t.number("beta2", c.train.beta2);
    t.number("eps", c.train.eps);
    c.model.adapter_seed = c.train.seed;
  }
  {
    Section d(root.sub("data"), "data");
    d.count("n_pairs", c.data.n_pairs);
    d.count("n_concepts", c.data.n_concepts);
    d.count("concepts_per_pair", c.data.concepts_per_pair);
    d.count("frames_per_video", c.data.frames_per_video);
    d.count("distractor_frames", c.data.distractor_frames);
    d.number("noise_std", c.data.noise_std);
    d.number("val_fraction", c.data.val_fraction);
    d.count("seed", c.data.seed);
  }
  c.data.patches = c.model.video.patches();
  c.data.patch_dim = c.model.video.patch_dim();
  c.data.text_len = c.model.text.seq_len;
  return c;
}

json RunConfig::to_json() const {
  json adapter = {{"enabled", model.adapter.has_value()}};
  const AdapterConfig a = model.adapter.value_or(AdapterConfig{});
  adapter["r"] = a.bottleneck;
  adapter["d_s"] = a.share_width;
  adapter["dropout_p"] = a.dropout_p;
  adapter["init_std"] = a.init_std;
  adapter["use_bias"] = a.use_bias;
  return {
      {"encoder",
       {{"preset", preset_name(preset)},
        {"backbone_seed", model.backbone_seed},
        {"video", encoder_json(model.video)},
        {"text", encoder_json(model.text)}}},
      {"adapter", adapter},
      {"similarity", {{"tau", similarity.tau}, {"logit_scale", similarity.logit_scale}}},
      {"train",
       {{"lr", train.lr},
        {"epochs", train.epochs},
        {"batch_size", train.batch_size},
        {"warmup_frac", train.warmup_frac},
        {"weight_decay", train.weight_decay},
        {"seed", train.seed},
        {"beta1", train.beta1},
        {"beta2", train.beta2},
        {"eps", train.eps}}},
      {"data",
       {{"n_pairs", data.n_pairs},
        {"n_concepts", data.n_concepts},
        {"concepts_per_pair", data.concepts_per_pair},
        {"frames_per_video", data.frames_per_video},
        {"distractor_frames", data.distractor_frames},
        {"noise_std", data.noise_std},
        {"val_fraction", data.val_fraction},
        {"seed", data.seed}}},
  };
}

void RunConfig::validate() const {
  check(std::isfinite(similarity.tau) && similarity.tau > 0.0, "similarity.tau", "must be a positive number");
  check(std::isfinite(similarity.logit_scale) && similarity.logit_scale > 0.0, "similarity.logit_scale",
        "must be a positive number");
  check(std::isfinite(train.lr) && train.lr >= 0.0, "train.lr", "must be >= 0");
  check(train.batch_size >= 2, "train.batch_size", "must be at least 2");
  check(train.warmup_frac >= 0.0 && train.warmup_frac < 1.0, "train.warmup_frac", "must be in [0, 1)");
  check(std::isfinite(train.weight_decay) && train.weight_decay >= 0.0, "train.weight_decay", "must be >= 0");
  check(train.beta1 >= 0.0 && train.beta1 < 1.0, "train.beta1", "must be in [0, 1)");
  check(train.beta2 >= 0.0 && train.beta2 < 1.0, "train.beta2", "must be in [0, 1)");
  check(train.eps > 0.0, "train.eps", "must be positive");
  check(std::isfinite(data.noise_std) && data.noise_std >= 0.0, "data.noise_std", "must be >= 0");
  check(data.val_fraction >= 0.0 && data.val_fraction < 1.0, "data.val_fraction", "must be in [0, 1)");
  check(data.n_pairs >= 2, "data.n_pairs", "must be at least 2");
  check(data.frames_per_video >= 1, "data.frames_per_video", "must be at least 1");
  check(data.distractor_frames < data.frames_per_video, "data.distractor_frames", "must be below frames_per_video");
  if (model.adapter) {
    const auto& a = *model.adapter;
    check(a.bottleneck >= 1, "adapter.r", "must be at least 1");
    check(a.dropout_p >= 0.0 && a.dropout_p < 1.0, "adapter.dropout_p", "must be in [0, 1)");
    check(a.share_width <= std::min(model.video.hidden, model.text.hidden), "adapter.d_s",
          "must not exceed min(video hidden, text hidden)");
  }
  wrap("encoder", [&] { model.validate(); });
  wrap("data", [&] { data.validate(model.text.vocab_size); });
}

void apply_override(json& doc, std::string_view assignment) {
  const auto eq = assignment.find('=');
  if (eq == std::string_view::npos || eq == 0) {
    throw ConfigError("override '" + std::string(assignment) + "' must look like section.key=value");
  }
  const std::string path(assignment.substr(0, eq));
  const std::string raw(assignment.substr(eq + 1));
  json value;
  try {
    value = json::parse(raw);
  } catch (const json::parse_error&) {
    value = raw;
  }
  if (!doc.is_object()) doc = json::object();
  json* node = &doc;
  std::size_t start = 0;
  while (true) {
    const auto dot = path.find('.', start);
    const std::string key = path.substr(start, dot - start);
    if (key.empty()) throw ConfigError("override key '" + path + "' has an empty component");
    if (dot == std::string::npos) {
      (*node)[key] = value;
      return;
    }
    json& next = (*node)[key];
    if (next.is_null()) next = json::object();
    if (!next.is_object()) throw ConfigError("override key '" + path + "' descends into a non-object");
    node = &next;
    start = dot + 1;
  }
}

RunConfig load_run_config(const std::optional<std::filesystem::path>& path, std::span<const std::string> overrides) {
  json doc = json::object();
  if (path) doc = read_json(*path);
  for (const auto& o : overrides) apply_override(doc, o);
  RunConfig c = RunConfig::from_json(doc);
  c.validate();
  return c;
}

void write_json(const std::filesystem::path& path, const json& doc) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << doc.dump(2) << '\n';
}

json read_json(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot read config file " + path.string());
  try {
    return json::parse(in);
  } catch (const json::parse_error& e) {
    throw ConfigError("config file " + path.string() + " is not valid JSON: " + e.what());
  }
}

}  // namespace xma
