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

#include "xmadapter/cli.hpp"

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "json.hpp"

#include "xmadapter/archive.hpp"
#include "xmadapter/config.hpp"
#include "xmadapter/gradsuite.hpp"
#include "xmadapter/metrics.hpp"
#include "xmadapter/model.hpp"
#include "xmadapter/synthetic.hpp"
#include "xmadapter/training.hpp"

namespace xma::cli {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

// Input problems that map to the usage exit code.
class UsageError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct Common {
  std::optional<fs::path> config;
  std::vector<std::string> overrides;
  std::optional<fs::path> out;
  unsigned threads = 1;
};

void add_config_flags(CLI::App* cmd, Common& c) {
  cmd->add_option("--config", c.config, "Run config JSON");
  cmd->add_option("--set", c.overrides, "Override a config key, e.g. train.epochs=10 (repeatable, last wins)");
}

RunConfig resolve(const Common& c) { return load_run_config(c.config, c.overrides); }

fs::path prepare_out(const fs::path& dir) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw UsageError("cannot create output directory " + dir.string() + ": " + ec.message());
  return dir;
}

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream f(path, std::ios::binary);
  f << text;
  if (!f) throw std::runtime_error("cannot write " + path.string());
}

std::string hex64(std::uint64_t v) {
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(v));
  return buf;
}

Dataset load_split(const fs::path& dir, const std::string& split, const ModelConfig& model) {
  const fs::path path = dir / (split + ".xmat");
  if (!fs::is_regular_file(path)) throw UsageError("missing dataset file " + path.string());
  Dataset d;
  try {
    const auto entries = read_archive(path);
    d = dataset_from_entries(entries);
  } catch (const ArchiveError& e) {
    throw UsageError(path.string() + ": " + e.what());
  }
  if (d.size() == 0) return d;
  const auto& v = model.video;
  if (d.frames.values.dim(2) != v.patches() || d.frames.values.dim(3) != v.patch_dim()) {
    throw UsageError(path.string() + ": frame geometry does not match encoder.video (patches " +
                     std::to_string(v.patches()) + ", patch dim " + std::to_string(v.patch_dim()) + ")");
  }
  if (d.tokens.seq_len != model.text.seq_len) {
    throw UsageError(path.string() + ": caption length does not match encoder.text.seq_len (" +
                     std::to_string(model.text.seq_len) + ")");
  }
  d.tokens.validate(model.text.vocab_size);
  return d;
}

struct SplitResult {
  Tensor scores;
  std::vector<RetrievalReport> reports;
  std::string note;
};

SplitResult evaluate_split(const DualEncoderModel& model, const Dataset& data, const SimilarityConfig& sim,
                           unsigned threads, std::size_t max_texts = 0) {
  SplitResult r;
  r.scores = score_dataset(model, data, sim, threads, max_texts);
  r.reports.push_back(evaluate(r.scores, Direction::t2v));
  if (r.scores.dim(0) == r.scores.dim(1)) {
    r.reports.push_back(evaluate(r.scores, Direction::v2t));
  } else {
    r.note = "v2t not computed: gallery has " + std::to_string(r.scores.dim(0)) + " videos for " +
             std::to_string(r.scores.dim(1)) + " texts; video-to-text retrieval needs one caption per video";
  }
  return r;
}

json split_json(const SplitResult& r) {
  json j = {{"videos", r.scores.dim(0)}, {"texts", r.scores.dim(1)}, {"reports", report_json(r.reports)}};
  if (!r.note.empty()) j["note"] = r.note;
  return j;
}

int cmd_synth(const Common& c, std::ostream& out) {
  if (!c.out) throw UsageError("--out is required");
  const RunConfig cfg = resolve(c);
  const SyntheticData data = generate(cfg.data, cfg.model.text.vocab_size);
  const fs::path dir = prepare_out(*c.out);
  write_archive(dir / "train.xmat", dataset_entries(data.train));
  write_archive(dir / "val.xmat", dataset_entries(data.val));
  const json manifest = {
      {"seed", cfg.data.seed},
      {"n_pairs", cfg.data.n_pairs},
      {"train_pairs", data.train.size()},
      {"val_pairs", data.val.size()},
      {"frames_per_video", cfg.data.frames_per_video},
      {"distractor_frames", cfg.data.distractor_frames},
      {"n_concepts", cfg.data.n_concepts},
      {"concepts_per_pair", cfg.data.concepts_per_pair},
      {"noise_std", cfg.data.noise_std},
      {"files", {{"train", "train.xmat"}, {"val", "val.xmat"}}},
  };
  write_json(dir / "manifest.json", manifest);
  write_json(dir / "config.json", cfg.to_json());
  out << "wrote " << data.train.size() << " train and " << data.val.size() << " val pairs to " << dir.string()
      << "\n";
  return kExitOk;
}

int cmd_train(const Common& c, const fs::path& data_dir, std::ostream& out, std::ostream& err) {
  if (!c.out) throw UsageError("--out is required");
  RunConfig cfg = resolve(c);
  cfg.train.eval_threads = c.threads;
  if (!fs::is_directory(data_dir)) throw UsageError("data directory not found: " + data_dir.string());
  const Dataset train = load_split(data_dir, "train", cfg.model);
  const Dataset val = load_split(data_dir, "val", cfg.model);
  if (train.size() == 0) throw UsageError("training split is empty");

  const fs::path dir = prepare_out(*c.out);
  write_json(dir / "config.json", cfg.to_json());
  const DualEncoderModel model(cfg.model);
  const std::uint64_t hash_before = frozen_parameter_hash(model);

  const FitResult fr = fit(model, train, val, cfg.train, cfg.similarity, [&](const EpochLog& e) {
    char line[160];
    std::snprintf(line, sizeof line, "epoch %zu loss %.4f val r1 t2v %.3f v2t %.3f lr %.3g\n", e.epoch, e.loss,
                  e.r1_t2v, e.r1_v2t, e.lr);
    out << line << std::flush;
  });
  const std::uint64_t hash_after = frozen_parameter_hash(model);

  {
    std::ofstream log(dir / "log.csv");
    write_log_csv(log, fr.log);
  }
  save_checkpoint(dir / "final.xmat", model);
  const Dataset& held_out = val.size() ? val : train;
  const SplitResult final_val = evaluate_split(model, held_out, cfg.similarity, c.threads);
  const SplitResult final_train = evaluate_split(model, train, cfg.similarity, c.threads);

  restore(model, fr.best);
  save_checkpoint(dir / "checkpoint.xmat", model, fr.best);
  const SplitResult best_val = evaluate_split(model, held_out, cfg.similarity, c.threads);
  const SplitResult best_train = evaluate_split(model, train, cfg.similarity, c.threads);

  const bool frozen_ok = hash_before == hash_after;
  const json report = {
      {"epochs", cfg.train.epochs},
      {"best_epoch", fr.best_epoch},
      {"held_out_split", val.size() ? "val" : "train"},
      {"checkpoint", {{"file", "checkpoint.xmat"}, {"val", split_json(best_val)}, {"train", split_json(best_train)}}},
      {"final", {{"file", "final.xmat"}, {"val", split_json(final_val)}, {"train", split_json(final_train)}}},
      {"frozen_hash", {{"before", hex64(hash_before)}, {"after", hex64(hash_after)}, {"unchanged", frozen_ok}}},
  };
  write_json(dir / "report.json", report);
  std::string md = "## Checkpoint (epoch " + std::to_string(fr.best_epoch) + "), held-out split\n\n" +
                   report_markdown(best_val.reports) + "\n## Final epoch, held-out split\n\n" +
                   report_markdown(final_val.reports) + "\n## Final epoch, training split\n\n" +
                   report_markdown(final_train.reports);
  write_text(dir / "report.md", md);
  out << md;
  if (!frozen_ok) {
    err << "frozen parameters changed during training\n";
    return kExitFailure;
  }
  return kExitOk;
}

struct EvalArgs {
  fs::path checkpoint;
  fs::path data;
  std::string split = "val";
  bool dump_similarity = false;
  std::size_t max_texts = 0;
};

int cmd_eval(const Common& c, const EvalArgs& a, std::ostream& out, std::ostream& err) {
  if (a.dump_similarity && !c.out) throw UsageError("--dump-similarity needs --out");
  if (!fs::is_regular_file(a.checkpoint)) throw UsageError("checkpoint not found: " + a.checkpoint.string());
  Common cc = c;
  if (!cc.config) {
    const fs::path sidecar = a.checkpoint.parent_path() / "config.json";
    if (!fs::is_regular_file(sidecar)) throw UsageError("no --config given and no config.json next to the checkpoint");
    cc.config = sidecar;
  }
  const RunConfig cfg = resolve(cc);
  const Dataset data = load_split(a.data, a.split, cfg.model);
  if (data.size() == 0) throw UsageError("split '" + a.split + "' is empty");
  const DualEncoderModel model(cfg.model);
  try {
    load_checkpoint(a.checkpoint, model);
  } catch (const CheckpointError& e) {
    throw UsageError(e.what());
  } catch (const ArchiveError& e) {
    throw UsageError(a.checkpoint.string() + ": " + e.what());
  }
  const SplitResult r = evaluate_split(model, data, cfg.similarity, c.threads, a.max_texts);
  if (!r.note.empty()) err << r.note << "\n";
  const std::string md = report_markdown(r.reports);
  out << md;
  if (c.out) {
    const fs::path dir = prepare_out(*c.out);
    json j = split_json(r);
    j["checkpoint"] = a.checkpoint.string();
    j["split"] = a.split;
    write_json(dir / "report.json", j);
    write_text(dir / "report.md", md);
    write_json(dir / "config.json", cfg.to_json());
    if (a.dump_similarity) {
      std::ofstream csv(dir / "similarity.csv");
      write_similarity_csv(csv, r.scores);
    }
  }
  return kExitOk;
}

int cmd_gradcheck(const Common& c, std::size_t seeds, bool inject_fault, std::ostream& out) {
  const RunConfig cfg = resolve(c);
  GradSuiteOptions opts;
  opts.seeds = seeds;
  opts.inject_fault = inject_fault;
  const auto rows = run_gradcheck_suite(cfg.model, cfg.similarity, opts);
  bool ok = true;
  json j = json::array();
  char line[256];
  std::snprintf(line, sizeof line, "%-46s %6s %8s %12s  %s\n", "component", "seeds", "entries", "max rel err",
                "result");
  out << line;
  for (const auto& r : rows) {
    ok = ok && r.pass;
    std::snprintf(line, sizeof line, "%-46s %6zu %8zu %12.3e  %s\n", r.component.c_str(), r.seeds, r.entries,
                  r.max_rel_error, r.pass ? "PASS" : "FAIL");
    out << line;
    j.push_back({{"component", r.component},
                 {"seeds", r.seeds},
                 {"entries", r.entries},
                 {"max_rel_error", r.max_rel_error},
                 {"worst", r.worst},
                 {"pass", r.pass}});
  }
  out << (ok ? "all components PASS" : "gradient check FAILED") << " (tolerance " << opts.tolerance << ")\n";
  if (c.out) {
    const fs::path dir = prepare_out(*c.out);
    write_json(dir / "gradcheck.json", {{"tolerance", opts.tolerance}, {"rows", j}});
    write_json(dir / "config.json", cfg.to_json());
  }
  return ok ? kExitOk : kExitFailure;
}

int cmd_params(const Common& c, std::ostream& out) {
  const RunConfig cfg = resolve(c);
  const ParameterCensus census = DualEncoderModel::census(cfg.model);
  char pct[32];
  std::snprintf(pct, sizeof pct, "%.4f%%", census.trainable_percent());
  char line[160];
  const auto row = [&](const char* name, std::uint64_t n) {
    std::snprintf(line, sizeof line, "%-10s %14llu  (%s)\n", name, static_cast<unsigned long long>(n),
                  format_millions(n).c_str());
    out << line;
  };
  row("trained", census.trainable);
  row("frozen", census.frozen());
  row("total", census.total);
  out << "percent    " << pct << "\n";
  if (c.out) {
    const fs::path dir = prepare_out(*c.out);
    write_json(dir / "params.json", {{"trained", census.trainable},
                                     {"frozen", census.frozen()},
                                     {"total", census.total},
                                     {"trained_millions", format_millions(census.trainable)},
                                     {"percent", census.trainable_percent()}});
    write_json(dir / "config.json", cfg.to_json());
  }
  return kExitOk;
}

}  // namespace

int run(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
  CLI::App app{"Cross-modal adapter training and evaluation toolkit", "xmadapter"};
  app.require_subcommand(1);

  Common synth_c, train_c, eval_c, grad_c, params_c;
  auto* synth = app.add_subcommand("synth", "Generate a synthetic video-caption dataset");
  add_config_flags(synth, synth_c);
  synth->add_option("--out", synth_c.out, "Output directory")->required();

  fs::path data_dir;
  auto* train = app.add_subcommand("train", "Train the adapters of a frozen dual encoder");
  add_config_flags(train, train_c);
  train->add_option("--data", data_dir, "Dataset directory written by synth")->required();
  train->add_option("--out", train_c.out, "Run directory")->required();
  train->add_option("--threads", train_c.threads, "Evaluation threads")->check(CLI::Range(1u, 256u));

  EvalArgs ea;
  auto* eval = app.add_subcommand("eval", "Evaluate a checkpoint on a dataset split");
  add_config_flags(eval, eval_c);
  eval->add_option("--checkpoint", ea.checkpoint, "Checkpoint archive")->required();
  eval->add_option("--data", ea.data, "Dataset directory")->required();
  eval->add_option("--split", ea.split, "Split to evaluate")->check(CLI::IsMember({"train", "val"}));
  eval->add_option("--out", eval_c.out, "Output directory");
  eval->add_flag("--dump-similarity", ea.dump_similarity, "Write the similarity matrix as similarity.csv");
  eval->add_option("--max-texts", ea.max_texts, "Score only the first N captions against every video");
  eval->add_option("--threads", eval_c.threads, "Scoring threads")->check(CLI::Range(1u, 256u));

  std::size_t seeds = 10;
  bool inject_fault = false;
  auto* grad = app.add_subcommand("gradcheck", "Finite-difference check of every differentiable component");
  add_config_flags(grad, grad_c);
  grad->add_option("--seeds", seeds, "Random instances per component")->check(CLI::Range(1, 1000));
  grad->add_option("--out", grad_c.out, "Output directory");
  grad->add_flag("--inject-fault", inject_fault, "Add a component with a broken backward")->group("");

  auto* params = app.add_subcommand("params", "Count trained and frozen parameters");
  add_config_flags(params, params_c);
  params->add_option("--out", params_c.out, "Output directory");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e, out, err) == 0 ? kExitOk : kExitUsage;
  }

  try {
    if (*synth) return cmd_synth(synth_c, out);
    if (*train) return cmd_train(train_c, data_dir, out, err);
    if (*eval) return cmd_eval(eval_c, ea, out, err);
    if (*grad) return cmd_gradcheck(grad_c, seeds, inject_fault, out);
    if (*params) return cmd_params(params_c, out);
  } catch (const ConfigError& e) {
    err << "config error: " << e.what() << "\n";
    return kExitUsage;
  } catch (const UsageError& e) {
    err << "error: " << e.what() << "\n";
    return kExitUsage;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return kExitFailure;
  }
  return kExitUsage;
}

}  // namespace xma::cli
