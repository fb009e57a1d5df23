/*
   Copyright 2026 The SGA Authors

   Licensed under the Apache License, Version 2.0 (the "License");
   you may not use this file except in compliance with the License.
   You may obtain a copy of the License at

       http://www.apache.org/licenses/LICENSE-2.0

   Unless required by applicable law or agreed to in writing, software
   distributed under the License is distributed on an "AS IS" BASIS,
   WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
   See the License for the specific language governing permissions and
   limitations under the License.
*/

#pragma once

#include <cstdio>
#include <functional>
#include <iomanip>

#include "sga/backbone/pretrain.hpp"
#include "sga/core/sga.hpp"
#include "sga/harness/checkpoint.hpp"
#include "sga/harness/config.hpp"
#include "sga/harness/metrics.hpp"
#include "sga/tasks/toy.hpp"

namespace sga {

/// Called every `log_every` steps with (step, loss values).
using ProgressFn = std::function<void(std::size_t, const std::vector<double>&)>;

struct PretrainResult {
  std::vector<double> losses;
};

/// MLM pretraining on a monolingual corpus. Leaves the backbone unfrozen.
inline PretrainResult pretrain(BackboneParams& params, const std::vector<TokenSeq>& corpus, const PretrainConfig& cfg,
                               const ProgressFn& progress = {}, std::size_t log_every = 100) {
  cfg.validate();
  if (corpus.empty()) throw EmptyInputError("pretraining corpus is empty");
  std::mt19937_64 rng(cfg.seed);
  Adam opt(params.parameters(), {cfg.lr, 0.9, 0.98, 1e-9, cfg.warmup, 1.0});
  std::uniform_int_distribution<std::size_t> pick(0, corpus.size() - 1);
  PretrainResult r;
  std::vector<TokenSeq> batch(cfg.batch);
  for (std::size_t s = 0; s < cfg.steps; ++s) {
    for (auto& b : batch) b = corpus[pick(rng)];
    r.losses.push_back(mlm_pretrain_step(params, opt, batch, cfg.mask_rate, rng));
    if (progress && (s + 1) % log_every == 0) progress(s + 1, {r.losses.back()});
  }
  return r;
}

struct TrainResult {
  io::PromptBundle bundle;
  std::vector<StepLosses> curve;
};

/// Trains a fresh prompt set (or continues `init`) on `pairs`. The backbone must be frozen.
inline TrainResult train_sga(const BackboneParams& backbone, const std::vector<tasks::ParallelPair>& pairs,
                             const TrainConfig& cfg, const PromptSet* init = nullptr, const ProgressFn& progress = {},
                             std::size_t log_every = 100) {
  cfg.validate();
  if (!backbone.frozen) throw FrozenViolation("train_sga requires a frozen backbone");
  if (pairs.empty()) throw EmptyInputError("training set is empty");
  TrainResult r;
  io::PromptBundle& b = r.bundle;
  b.config = backbone.config;
  b.mode = cfg.mode;
  b.prompts = init ? *init : PromptSet::init(backbone.config, cfg.prompt_lengths, cfg.seed, cfg.prompt_init_std);
  b.lengths = mp::LengthTable::estimate(pairs);
  std::set<TokenId> tags;
  for (const auto& p : pairs)
    if (!p.x.empty()) tags.insert(p.x.ids.front());
  b.language_tags.assign(tags.begin(), tags.end());

  AdamConfig ac{cfg.lr, 0.9, 0.98, 1e-9, cfg.warmup, cfg.clip_norm};
  if (cfg.lr_decay) ac.decay_until = cfg.steps;
  Adam opt(b.prompts.parameters(), ac);
  std::mt19937_64 rng(cfg.seed ^ 0x9e3779b97f4a7c15ull);
  std::mt19937_64 noise_rng(cfg.noise.seed);
  SgaLossOptions lo{cfg.mode, cfg.noise, cfg.live_outputs};

  std::vector<std::size_t> order(pairs.size());
  std::iota(order.begin(), order.end(), 0);
  std::size_t cursor = order.size();
  std::vector<const tasks::ParallelPair*> batch;
  bool align_active = true;
  for (std::size_t s = 0; s < cfg.steps; ++s) {
    if (cfg.align_steps && s == cfg.align_steps && align_active) {
      b.prompts.task.align.for_each([&](Parameter& p) { opt.set_active(&p, false); });
      align_active = false;
    }
    batch.clear();
    for (std::size_t i = 0; i < cfg.batch; ++i) {
      if (cursor == order.size()) {
        std::shuffle(order.begin(), order.end(), rng);
        cursor = 0;
      }
      batch.push_back(&pairs[order[cursor++]]);
    }
    r.curve.push_back(sga_train_step(backbone, b.prompts, opt, batch, lo, noise_rng, align_active));
    if (progress && (s + 1) % log_every == 0) progress(s + 1, {r.curve.back().l1, r.curve.back().l2});
  }
  io::snap_to_float32(b.prompts);
  return r;
}

struct EvalOptions {
  std::size_t max_loops = 4;
  std::size_t mp_iterations = 4;
  bool early_stop = true;
  /// Accept any valid target of a multi-target language as an exact match.
  const tasks::ToyWorld* world = nullptr;
};

/// Corpus-level quality and speed of generate() at batch size 1.
struct EvalReport {
  std::size_t sentences = 0;
  double bleu = 0.0;
  double exact_match = 0.0;     // fraction in [0,1]
  double token_accuracy = 0.0;  // fraction in [0,1]
  double mean_iterations = 0.0;
  double mean_forward_passes = 0.0;
  double sentences_per_second = 0.0;
  std::size_t degenerate = 0;
  std::size_t converged = 0;
  std::size_t length_capped = 0;

  /// Quality fields only; timing differs run to run.
  bool same_quality(const EvalReport& o) const {
    return sentences == o.sentences && bleu == o.bleu && exact_match == o.exact_match &&
           token_accuracy == o.token_accuracy && mean_iterations == o.mean_iterations &&
           mean_forward_passes == o.mean_forward_passes && degenerate == o.degenerate && converged == o.converged &&
           length_capped == o.length_capped;
  }
};

struct EvalOutput {
  EvalReport report;
  std::vector<GenerationTrace> traces;
};

inline GenerateOptions generate_options(const io::PromptBundle& b, const TokenSeq& x, const EvalOptions& opt) {
  GenerateOptions g;
  g.mode = b.mode;
  g.max_loops = opt.max_loops;
  g.mp_iterations = opt.mp_iterations;
  g.early_stop = opt.early_stop;
  if (b.mode == AlignMode::kMaskPredict) g.target_len = b.lengths.predict(x.size());
  return g;
}

inline bool is_match(const tasks::ParallelPair& p, const std::vector<TokenId>& hyp, const tasks::ToyWorld* world) {
  if (world && !p.x.empty())
    if (const tasks::ToyLanguageSpec* l = world->by_tag(p.x.ids.front()); l && l != &world->target) {
      const auto c = tasks::content(p.x);
      return tasks::is_valid_target(*l, world->target, c, hyp);
    }
  return hyp == p.y.ids;
}

inline EvalOutput evaluate(const BackboneParams& backbone, const io::PromptBundle& b,
                           const std::vector<tasks::ParallelPair>& pairs, const EvalOptions& opt = {},
                           bool keep_traces = false) {
  if (pairs.empty()) throw EmptyInputError("evaluation set is empty");
  io::require_same_config(backbone.config, b.config, "evaluate");
  EvalOutput out;
  std::vector<std::vector<TokenId>> hyps, refs;
  double seconds = 0.0, iters = 0.0, passes = 0.0;
  std::size_t exact = 0;
  for (const auto& p : pairs) {
    const auto t0 = std::chrono::steady_clock::now();
    GenerationTrace tr = generate(backbone, b.prompts, p.x, generate_options(b, p.x, opt));
    seconds += std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    iters += static_cast<double>(tr.iterations_used);
    passes += static_cast<double>(tr.forward_passes);
    out.report.degenerate += tr.degenerate;
    out.report.converged += tr.converged;
    out.report.length_capped += tr.length_capped;
    exact += is_match(p, tr.output().ids, opt.world);
    hyps.push_back(tr.output().ids);
    refs.push_back(p.y.ids);
    if (keep_traces) out.traces.push_back(std::move(tr));
  }
  EvalReport& r = out.report;
  const double n = static_cast<double>(pairs.size());
  r.sentences = pairs.size();
  r.bleu = metrics::corpus_bleu(hyps, refs);
  r.exact_match = static_cast<double>(exact) / n;
  r.token_accuracy = metrics::token_accuracy(hyps, refs);
  r.mean_iterations = iters / n;
  r.mean_forward_passes = passes / n;
  r.sentences_per_second = seconds > 0.0 ? n / seconds : 0.0;
  return out;
}

struct BenchRow {
  std::size_t max_loops = 0;
  EvalReport report;
};

/// evaluate() at each loop budget. With `fixed_budget` every sentence runs exactly
/// max_loops denoise passes; outputs equal the early-stopped ones.
inline std::vector<BenchRow> bench_latency(const BackboneParams& backbone, const io::PromptBundle& b,
                                           const std::vector<tasks::ParallelPair>& pairs,
                                           std::vector<std::size_t> loops = {0, 2, 4, 8}, bool fixed_budget = true,
                                           const tasks::ToyWorld* world = nullptr, std::size_t mp_iterations = 4) {
  std::vector<BenchRow> rows;
  for (std::size_t l : loops) {
    EvalOptions o;
    o.max_loops = l;
    o.early_stop = !fixed_budget;
    o.world = world;
    o.mp_iterations = mp_iterations;
    rows.push_back({l, evaluate(backbone, b, pairs, o).report});
  }
  return rows;
}

// ---- reports: human table + key=value file ----

inline void to_kv(KeyValues& kv, const EvalReport& r, const std::string& pre = "") {
  kv.set(pre + "sentences", static_cast<std::uint64_t>(r.sentences));
  kv.set(pre + "bleu", r.bleu);
  kv.set(pre + "exact_match", r.exact_match);
  kv.set(pre + "token_accuracy", r.token_accuracy);
  kv.set(pre + "mean_iterations", r.mean_iterations);
  kv.set(pre + "mean_forward_passes", r.mean_forward_passes);
  kv.set(pre + "sentences_per_second", r.sentences_per_second);
  kv.set(pre + "degenerate", static_cast<std::uint64_t>(r.degenerate));
  kv.set(pre + "converged", static_cast<std::uint64_t>(r.converged));
  kv.set(pre + "length_capped", static_cast<std::uint64_t>(r.length_capped));
}

inline std::string format_report(const EvalReport& r) {
  std::ostringstream os;
  os << std::fixed << std::setprecision(2);
  os << "sentences        " << r.sentences << '\n'
     << "BLEU             " << r.bleu << '\n'
     << "exact match      " << 100.0 * r.exact_match << " %\n"
     << "token accuracy   " << 100.0 * r.token_accuracy << " %\n"
     << "mean iterations  " << r.mean_iterations << '\n'
     << "forward passes   " << r.mean_forward_passes << '\n'
     << "sentences/s      " << r.sentences_per_second << '\n'
     << "degenerate       " << r.degenerate << '\n'
     << "length capped    " << r.length_capped << '\n';
  return os.str();
}

inline std::string format_bench(const std::vector<BenchRow>& rows) {
  std::ostringstream os;
  os << std::fixed << std::setprecision(2);
  os << "max_loops  sent/s    passes  iters   BLEU    exact%  tok-acc%\n";
  for (const auto& row : rows) {
    const EvalReport& r = row.report;
    os << std::setw(9) << row.max_loops << "  " << std::setw(8) << r.sentences_per_second << "  " << std::setw(6)
       << r.mean_forward_passes << "  " << std::setw(5) << r.mean_iterations << "  " << std::setw(6) << r.bleu << "  "
       << std::setw(6) << 100.0 * r.exact_match << "  " << std::setw(8) << 100.0 * r.token_accuracy << '\n';
  }
  return os.str();
}

inline KeyValues bench_kv(const std::vector<BenchRow>& rows) {
  KeyValues kv;
  for (const auto& row : rows) to_kv(kv, row.report, "loops" + std::to_string(row.max_loops) + ".");
  return kv;
}

/// Mean of `v` over consecutive windows of `w` (last partial window dropped).
inline std::vector<double> window_means(const std::vector<double>& v, std::size_t w) {
  std::vector<double> out;
  for (std::size_t i = 0; w && i + w <= v.size(); i += w)
    out.push_back(std::accumulate(v.begin() + static_cast<std::ptrdiff_t>(i),
                                  v.begin() + static_cast<std::ptrdiff_t>(i + w), 0.0) /
                  static_cast<double>(w));
  return out;
}

}  // namespace sga
