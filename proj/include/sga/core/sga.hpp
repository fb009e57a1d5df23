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

#include <chrono>

#include "sga/backbone/backbone.hpp"
#include "sga/ctc/ctc.hpp"
#include "sga/maskpredict/maskpredict.hpp"
#include "sga/numerics/adam.hpp"
#include "sga/tasks/toy.hpp"

namespace sga {

enum class AlignMode { kCtc, kMaskPredict };

inline std::string to_string(AlignMode m) { return m == AlignMode::kCtc ? "ctc" : "mask-predict"; }
inline AlignMode align_mode_from_string(const std::string& s) {
  if (s == "ctc") return AlignMode::kCtc;
  if (s == "mask-predict") return AlignMode::kMaskPredict;
  throw std::invalid_argument("mode must be ctc or mask-predict, got '" + s + "'");
}

/// Source prompt plus the projections that turn source hidden states into prompt memory.
struct SemanticPromptSet {
  PrefixKV source;
  Parameter w_k;  // [d x d], shared by all layers
  Parameter w_v;  // [d x d]
};

struct TaskPromptSet {
  PrefixKV align;
  PrefixKV denoise;
};

/// The complete trainable set. Nothing else changes during prompt training.
struct PromptSet {
  SemanticPromptSet sem;
  TaskPromptSet task;

  template <class F>
  void for_each(F&& f) {
    sem.source.for_each(f);
    f(sem.w_k);
    f(sem.w_v);
    task.align.for_each(f);
    task.denoise.for_each(f);
  }
  template <class F>
  void for_each(F&& f) const {
    const_cast<PromptSet*>(this)->for_each([&](Parameter& p) { f(static_cast<const Parameter&>(p)); });
  }
  std::vector<Parameter*> parameters() {
    std::vector<Parameter*> out;
    for_each([&](Parameter& p) { out.push_back(&p); });
    return out;
  }
  std::size_t num_parameters() const {
    std::size_t n = 0;
    for_each([&](const Parameter& p) { n += p.value.size(); });
    return n;
  }

  struct Lengths {
    std::size_t source = 16, align = 16, denoise = 16;
  };

  static PromptSet init(const ModelConfig& cfg, Lengths m, std::uint64_t seed, double prefix_std = 0.1) {
    if (m.source == 0 || m.align == 0 || m.denoise == 0)
      throw std::invalid_argument("prompt lengths must be positive");
    std::mt19937_64 rng(seed);
    const std::size_t d = cfg.d_model;
    PromptSet p;
    p.sem.source = PrefixKV::init("source", cfg.num_layers, m.source, d, prefix_std, rng);
    const double pstd = 1.0 / std::sqrt(static_cast<double>(d));
    p.sem.w_k = {"w_k", Tensor::randn({d, d}, pstd, rng)};
    p.sem.w_v = {"w_v", Tensor::randn({d, d}, pstd, rng)};
    p.task.align = PrefixKV::init("align", cfg.num_layers, m.align, d, prefix_std, rng);
    p.task.denoise = PrefixKV::init("denoise", cfg.num_layers, m.denoise, d, prefix_std, rng);
    return p;
  }
};

/// Layer-wise source states and their key/value projections.
struct SemanticStates {
  std::vector<Tensor> hidden, keys, values;

  SemanticStates zeroed() const {
    SemanticStates z = *this;
    for (auto* v : {&z.hidden, &z.keys, &z.values})
      for (auto& t : *v) t.fill(0.0);
    return z;
  }
};

struct SemanticStatesVar {
  std::vector<Var> hidden, keys, values;
};

/// Per-token deletion/repetition noise.
struct NoiseSpec {
  double p_delete = 0.1;
  double p_repeat = 0.1;
  std::uint64_t seed = 0;

  void validate() const {
    if (p_delete < 0.0 || p_delete > 1.0 || p_repeat < 0.0 || p_repeat > 1.0 || p_delete + p_repeat > 1.0 + 1e-12)
      throw std::invalid_argument("noise probabilities must lie in [0,1] and sum to at most 1");
  }
};

// ---------------------------------------------------------------------------
// Tape-level building blocks (shared by training and inference)
// ---------------------------------------------------------------------------

/// h^{1:L} = f_LM(source prompt, X); K^l = h^l W_K, V^l = h^l W_V.
inline SemanticStatesVar encode_source(const BoundBackbone& bb, const PromptVars& source_prompt, Var w_k, Var w_v,
                                       std::span<const TokenId> x) {
  if (x.empty()) throw EmptyInputError("encode_source on an empty source sentence");
  LayerStatesVar st = forward_lm(bb, &source_prompt, x);
  SemanticStatesVar s;
  for (Var h : st.hidden) {
    s.hidden.push_back(h);
    s.keys.push_back(matmul(h, w_k));
    s.values.push_back(matmul(h, w_v));
  }
  return s;
}

/// Per layer: keys [K_S ; K_task], values [V_S ; V_task].
inline PromptVars build_prompt(const SemanticStatesVar& sem, const PromptVars& task) {
  if (sem.keys.size() != task.size())
    throw DimensionError("semantic states have " + std::to_string(sem.keys.size()) + " layers, task prompt has " +
                         std::to_string(task.size()));
  PromptVars out;
  for (std::size_t l = 0; l < task.size(); ++l)
    out.push_back({concat_rows(sem.keys[l], task[l].key), concat_rows(sem.values[l], task[l].value)});
  return out;
}

/// Snapshot of recorded prompt values as a plain prefix.
inline PrefixKV to_prefix(const PromptVars& pv) {
  PrefixKV out;
  for (const auto& l : pv) out.layers.push_back({{"effective.key", l.key.value()}, {"effective.value", l.value.value()}});
  return out;
}

inline SemanticStatesVar bind_states(Tape& tape, const SemanticStates& s) {
  SemanticStatesVar v;
  for (std::size_t l = 0; l < s.keys.size(); ++l) {
    v.hidden.push_back(tape.constant_ref(s.hidden[l]));
    v.keys.push_back(tape.constant_ref(s.keys[l]));
    v.values.push_back(tape.constant_ref(s.values[l]));
  }
  return v;
}

inline std::size_t ctc_align_length(std::size_t source_len, const ModelConfig& cfg) {
  return std::min(2 * source_len, cfg.max_positions);
}

// ---------------------------------------------------------------------------
// Inference API
// ---------------------------------------------------------------------------

inline SemanticStates encode_source(const BackboneParams& backbone, const SemanticPromptSet& sem, const TokenSeq& x) {
  Tape tape;
  BoundBackbone bb(tape, backbone);
  const PromptVars sp = bind_prefix(tape, sem.source);
  const SemanticStatesVar v =
      encode_source(bb, sp, tape.constant_ref(sem.w_k.value), tape.constant_ref(sem.w_v.value), x.span());
  SemanticStates s;
  for (std::size_t l = 0; l < v.keys.size(); ++l) {
    s.hidden.push_back(v.hidden[l].value());
    s.keys.push_back(v.keys[l].value());
    s.values.push_back(v.values[l].value());
  }
  return s;
}

/// Effective prompt [K_S ; K_task], [V_S ; V_task] as plain tensors.
inline PrefixKV build_alignment_prompt(const SemanticStates& sem, const PrefixKV& task) {
  if (sem.keys.size() != task.num_layers())
    throw DimensionError("semantic states have " + std::to_string(sem.keys.size()) + " layers, task prompt has " +
                         std::to_string(task.num_layers()));
  Tape tape;
  return to_prefix(build_prompt(bind_states(tape, sem), bind_prefix(tape, task)));
}

struct AlignResult {
  Tensor log_probs;  // [target_len x V]; empty in mask-predict mode
  TokenSeq tokens;   // T_0
  bool degenerate = false;
  std::size_t forward_passes = 0;
};

/// Parallel generation from a <mask> sequence.
///
/// CTC mode: one forward pass, best-path decoding. Mask-predict mode:
/// `mp_iterations` passes of mp::mp_decode.
inline AlignResult align(const BackboneParams& backbone, const PrefixKV& effective_prompt, std::size_t target_len,
                         AlignMode mode = AlignMode::kCtc, std::size_t mp_iterations = 4) {
  if (target_len == 0) throw std::invalid_argument("alignment target length must be positive");
  if (target_len > backbone.config.max_positions)
    throw LengthError("alignment length " + std::to_string(target_len) + " exceeds max_positions");
  AlignResult r;
  if (mode == AlignMode::kCtc) {
    const std::vector<TokenId> blank(target_len, kMask);
    r.log_probs = log_softmax_rows(forward_lm(backbone, &effective_prompt, blank).logits);
    auto g = ctc::greedy_decode_nonempty(r.log_probs);
    r.tokens.ids = std::move(g.tokens);
    r.degenerate = g.degenerate;
    r.forward_passes = 1;
  } else {
    r.tokens.ids = mp::mp_decode(backbone, effective_prompt, target_len, mp_iterations);
    r.forward_passes = mp_iterations;
  }
  return r;
}

/// T~ = T + noise: each token is deleted with p_delete, doubled with p_repeat,
/// otherwise kept. If every token is deleted one uniformly chosen token survives.
template <class Rng>
TokenSeq corrupt(const TokenSeq& t, const NoiseSpec& spec, Rng& rng) {
  spec.validate();
  if (t.empty()) throw EmptyInputError("corrupt on an empty sequence");
  std::uniform_real_distribution<double> u(0.0, 1.0);
  TokenSeq out;
  out.lang = t.lang;
  for (TokenId tok : t.ids) {
    const double r = u(rng);
    if (r < spec.p_delete) continue;
    out.ids.push_back(tok);
    if (r < spec.p_delete + spec.p_repeat) out.ids.push_back(tok);
  }
  if (out.ids.empty()) {
    std::uniform_int_distribution<std::size_t> pick(0, t.size() - 1);
    out.ids.push_back(t.ids[pick(rng)]);
  }
  return out;
}

inline TokenSeq corrupt(const TokenSeq& t, const NoiseSpec& spec) {
  std::mt19937_64 rng(spec.seed);
  return corrupt(t, spec, rng);
}

struct DenoiseResult {
  TokenSeq tokens;
  Tensor log_probs;
  bool degenerate = false;
};

/// One refinement pass: CTC best-path decode of f_LM([K_S;K_D],[V_S;V_D], upsample2x(T_in)).
inline DenoiseResult denoise_step(const BackboneParams& backbone, const SemanticStates& sem, const PrefixKV& denoise,
                                  const TokenSeq& t_in) {
  if (t_in.empty()) throw EmptyInputError("denoise_step on an empty sequence");
  const auto input = ctc::upsample2x(t_in.span(), backbone.config.max_positions);
  const PrefixKV prompt = build_alignment_prompt(sem, denoise);
  DenoiseResult r;
  r.log_probs = log_softmax_rows(forward_lm(backbone, &prompt, input).logits);
  auto g = ctc::greedy_decode_nonempty(r.log_probs);
  r.tokens.ids = std::move(g.tokens);
  r.tokens.lang = t_in.lang;
  r.degenerate = g.degenerate;
  return r;
}

/// The intermediate outputs T_0, T_1, ..., T_n of one generation.
struct GenerationTrace {
  TokenSeq t0;
  std::vector<TokenSeq> steps;  // T_1..T_n
  std::size_t iterations_used = 0;
  bool converged = false;
  std::size_t forward_passes = 0;
  std::size_t degenerate = 0;
  /// Refinement stopped because the current output cannot be upsampled within max_positions.
  bool length_capped = false;
  double encode_seconds = 0.0;
  double align_seconds = 0.0;
  std::vector<double> step_seconds;

  const TokenSeq& output() const { return steps.empty() ? t0 : steps.back(); }
  double total_seconds() const {
    double s = encode_seconds + align_seconds;
    for (double v : step_seconds) s += v;
    return s;
  }
};

struct GenerateOptions {
  AlignMode mode = AlignMode::kCtc;
  std::size_t max_loops = 4;
  std::size_t mp_iterations = 4;
  /// Mask-predict target length; 0 falls back to the source content length.
  std::size_t target_len = 0;
  /// Stop as soon as a denoise pass leaves its input unchanged. When false,
  /// exactly max_loops passes run (the output is the same, since a fixed point stays fixed).
  bool early_stop = true;
};

/// encode -> align -> denoise until T_i == T_{i-1} or max_loops passes.
inline GenerationTrace generate(const BackboneParams& backbone, const PromptSet& prompts, const TokenSeq& x,
                                const GenerateOptions& opt = {}) {
  using clock = std::chrono::steady_clock;
  auto secs = [](clock::time_point a, clock::time_point b) { return std::chrono::duration<double>(b - a).count(); };
  GenerationTrace tr;
  auto t0 = clock::now();
  const SemanticStates sem = encode_source(backbone, prompts.sem, x);
  ++tr.forward_passes;
  auto t1 = clock::now();
  tr.encode_seconds = secs(t0, t1);

  const PrefixKV align_prompt = build_alignment_prompt(sem, prompts.task.align);
  const std::size_t len = opt.mode == AlignMode::kCtc
                              ? ctc_align_length(x.size(), backbone.config)
                              : (opt.target_len ? opt.target_len : std::max<std::size_t>(1, x.size() - 1));
  AlignResult a = align(backbone, align_prompt, len, opt.mode, opt.mp_iterations);
  tr.t0 = std::move(a.tokens);
  tr.forward_passes += a.forward_passes;
  tr.degenerate += a.degenerate;
  auto t2 = clock::now();
  tr.align_seconds = secs(t1, t2);

  const TokenSeq* prev = &tr.t0;
  tr.steps.reserve(opt.max_loops);
  for (std::size_t i = 1; i <= opt.max_loops; ++i) {
    if (2 * prev->size() > backbone.config.max_positions) {
      tr.length_capped = true;
      break;
    }
    auto s0 = clock::now();
    DenoiseResult d = denoise_step(backbone, sem, prompts.task.denoise, *prev);
    ++tr.forward_passes;
    tr.degenerate += d.degenerate;
    tr.steps.push_back(std::move(d.tokens));
    tr.step_seconds.push_back(secs(s0, clock::now()));
    tr.iterations_used = i;
    if (tr.steps.back() == *prev) {
      tr.converged = true;
      if (opt.early_stop) break;
    } else {
      tr.converged = false;
    }
    prev = &tr.steps.back();
  }
  return tr;
}

// ---------------------------------------------------------------------------
// Training
// ---------------------------------------------------------------------------

struct SgaLosses {
  Var l1;  // alignment loss
  Var l2;  // denoising loss
  bool l1_ok = true;
  bool l2_ok = true;
};

struct SgaLossOptions {
  AlignMode mode = AlignMode::kCtc;
  NoiseSpec noise;
  /// Feed the denoiser the model's own (corrupted) alignment output instead of the corrupted gold target.
  bool denoise_on_model_output = false;
};

/// Records L1 and L2 for one pair on `tape`, binding the prompt set as trainable leaves.
template <class Rng>
SgaLosses sga_losses(Tape& tape, const BackboneParams& backbone, PromptSet& prompts, const tasks::ParallelPair& pair,
                     const SgaLossOptions& opt, Rng& rng) {
  if (!backbone.frozen) throw FrozenViolation("prompt training requires a frozen backbone");
  if (pair.y.empty()) throw EmptyInputError("empty target sentence");
  const ModelConfig& cfg = backbone.config;
  BoundBackbone bb(tape, backbone);
  const PromptVars src = bind_prefix(tape, prompts.sem.source, true);
  const SemanticStatesVar sem =
      encode_source(bb, src, tape.param(prompts.sem.w_k), tape.param(prompts.sem.w_v), pair.x.span());

  SgaLosses out;
  const PromptVars align_prompt = build_prompt(sem, bind_prefix(tape, prompts.task.align, true));
  std::vector<TokenId> t0;
  if (opt.mode == AlignMode::kCtc) {
    const std::vector<TokenId> blank(ctc_align_length(pair.x.size(), cfg), kMask);
    Var lp = log_softmax_rows(forward_lm(bb, &align_prompt, blank).logits);
    ctc::CtcLoss c = ctc::ctc_loss(lp, pair.y.span());
    out.l1 = c.loss;
    out.l1_ok = c.feasible;
    if (opt.denoise_on_model_output) t0 = ctc::greedy_decode_nonempty(lp.value()).tokens;
  } else {
    mp::CmlmMasking m = mp::cmlm_train_masking(pair.y.span(), rng);
    Var logits = forward_lm(bb, &align_prompt, m.input).logits;
    // Summed over masked positions so that L1 is a sequence-level NLL on the same scale as the CTC terms.
    const auto n_masked = static_cast<double>(std::count(m.mask.begin(), m.mask.end(), true));
    out.l1 = scale(cross_entropy_masked(logits, pair.y.span(), m.mask), n_masked);
    if (opt.denoise_on_model_output) t0 = mp::mp_decode(backbone, to_prefix(align_prompt), pair.y.size(), 1);
  }

  TokenSeq noisy;
  if (opt.denoise_on_model_output) {
    TokenSeq live;
    live.ids = std::move(t0);
    live.lang = pair.y.lang;
    noisy = corrupt(live, opt.noise, rng);
  } else {
    noisy = corrupt(pair.y, opt.noise, rng);
  }
  if (2 * noisy.size() > cfg.max_positions) {
    out.l2 = tape.constant(Tensor::scalar(std::numeric_limits<double>::infinity()));
    out.l2_ok = false;
    return out;
  }
  const PromptVars den_prompt = build_prompt(sem, bind_prefix(tape, prompts.task.denoise, true));
  const auto input = ctc::upsample2x(noisy.span(), cfg.max_positions);
  Var lp2 = log_softmax_rows(forward_lm(bb, &den_prompt, input).logits);
  ctc::CtcLoss c2 = ctc::ctc_loss(lp2, pair.y.span());
  out.l2 = c2.loss;
  out.l2_ok = c2.feasible;
  return out;
}

struct StepLosses {
  double l1 = 0.0;
  double l2 = 0.0;
  std::size_t skipped_l1 = 0;
  std::size_t skipped_l2 = 0;
};

/// One optimiser step of L = L1 + L2 over a batch; only the prompt set moves.
template <class Rng>
StepLosses sga_train_step(const BackboneParams& backbone, PromptSet& prompts, Adam& opt,
                          const std::vector<const tasks::ParallelPair*>& batch, const SgaLossOptions& lo, Rng& rng,
                          bool train_alignment = true) {
  if (!backbone.frozen) throw FrozenViolation("sga_train_step requires a frozen backbone");
  StepLosses res;
  std::size_t n1 = 0, n2 = 0;
  for (const tasks::ParallelPair* p : batch) {
    Tape tape;
    SgaLosses l = sga_losses(tape, backbone, prompts, *p, lo, rng);
    std::vector<Var> terms;
    if (l.l1_ok && train_alignment) {
      terms.push_back(l.l1);
      res.l1 += l.l1.value().item();
      ++n1;
    } else if (!l.l1_ok) {
      ++res.skipped_l1;
    }
    if (l.l2_ok) {
      terms.push_back(l.l2);
      res.l2 += l.l2.value().item();
      ++n2;
    } else {
      ++res.skipped_l2;
    }
    if (terms.empty()) continue;
    Var total = terms.size() == 2 ? add(terms[0], terms[1]) : terms[0];
    tape.backward(total);
  }
  opt.step(batch.empty() ? 1.0 : 1.0 / static_cast<double>(batch.size()));
  if (n1) res.l1 /= static_cast<double>(n1);
  if (n2) res.l2 /= static_cast<double>(n2);
  return res;
}

}  // namespace sga
