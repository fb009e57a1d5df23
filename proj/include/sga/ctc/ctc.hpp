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

#include <cmath>
#include <limits>

#include "sga/numerics/ops.hpp"
#include "sga/vocab.hpp"

namespace sga::ctc {

inline constexpr double kNegInf = -std::numeric_limits<double>::infinity();

inline double log_add(double a, double b) {
  if (a == kNegInf) return b;
  if (b == kNegInf) return a;
  const double m = std::max(a, b);
  return m + std::log1p(std::exp(-std::abs(a - b)));
}

/// Merges adjacent repeats, then drops blanks.
inline std::vector<TokenId> collapse(std::span<const TokenId> seq, TokenId blank = kBlank) {
  std::vector<TokenId> out;
  TokenId prev = -1;
  for (TokenId t : seq) {
    if (t != prev && t != blank) out.push_back(t);
    prev = t;
  }
  return out;
}

/// Minimum number of frames needed to emit `target`: one per symbol plus a
/// forced blank between each pair of equal neighbours.
inline std::size_t min_frames(std::span<const TokenId> target) {
  std::size_t n = target.size();
  for (std::size_t i = 1; i < target.size(); ++i)
    if (target[i] == target[i - 1]) ++n;
  return n;
}

inline bool feasible(std::size_t frames, std::span<const TokenId> target) {
  return min_frames(target) <= frames;
}

struct CtcLoss {
  Var loss;  // +inf (and no gradient) when infeasible
  bool feasible = true;
};

/// Negative log marginal likelihood of `target` under per-frame log-probabilities.
///
/// `log_probs` is [T x V] and should already be log-normalised per row. The
/// forward (alpha) and backward (beta) recursions run over the blank-extended
/// target 〈b, y1, b, y2, ..., b〉 entirely in log space.
inline CtcLoss ctc_loss(Var log_probs, std::span<const TokenId> target, TokenId blank = kBlank) {
  const Tensor& lp = log_probs.value();
  const std::size_t T = lp.rows(), V = lp.cols();
  for (TokenId y : target) {
    if (y == blank) throw std::invalid_argument("ctc target contains the blank symbol");
    if (y < 0 || static_cast<std::size_t>(y) >= V) throw std::out_of_range("ctc target id outside vocabulary");
  }
  if (blank < 0 || static_cast<std::size_t>(blank) >= V) throw std::out_of_range("ctc blank id outside vocabulary");
  if (!feasible(T, target))
    return {log_probs.tape().constant(Tensor::scalar(std::numeric_limits<double>::infinity())), false};
  if (T == 0) return {log_probs.tape().constant(Tensor::scalar(0.0)), true};

  const std::size_t S = 2 * target.size() + 1;
  std::vector<TokenId> ext(S, blank);
  for (std::size_t u = 0; u < target.size(); ++u) ext[2 * u + 1] = target[u];
  auto can_skip = [&](std::size_t s) { return s >= 2 && ext[s] != blank && ext[s] != ext[s - 2]; };
  auto emit = [&](std::size_t t, std::size_t s) { return lp(t, static_cast<std::size_t>(ext[s])); };

  auto alpha = std::make_shared<Tensor>(Shape{T, S}, kNegInf);
  Tensor beta(Shape{T, S}, kNegInf);
  (*alpha)(0, 0) = emit(0, 0);
  if (S > 1) (*alpha)(0, 1) = emit(0, 1);
  for (std::size_t t = 1; t < T; ++t)
    for (std::size_t s = 0; s < S; ++s) {
      double a = (*alpha)(t - 1, s);
      if (s >= 1) a = log_add(a, (*alpha)(t - 1, s - 1));
      if (can_skip(s)) a = log_add(a, (*alpha)(t - 1, s - 2));
      (*alpha)(t, s) = a == kNegInf ? kNegInf : a + emit(t, s);
    }
  beta(T - 1, S - 1) = emit(T - 1, S - 1);
  if (S > 1) beta(T - 1, S - 2) = emit(T - 1, S - 2);
  for (std::size_t t = T - 1; t-- > 0;)
    for (std::size_t s = 0; s < S; ++s) {
      double b = beta(t + 1, s);
      if (s + 1 < S) b = log_add(b, beta(t + 1, s + 1));
      if (s + 2 < S && can_skip(s + 2)) b = log_add(b, beta(t + 1, s + 2));
      beta(t, s) = b == kNegInf ? kNegInf : b + emit(t, s);
    }
  double log_p = (*alpha)(T - 1, S - 1);
  if (S > 1) log_p = log_add(log_p, (*alpha)(T - 1, S - 2));
  if (log_p == kNegInf)
    return {log_probs.tape().constant(Tensor::scalar(std::numeric_limits<double>::infinity())), false};

  // d(-log P)/d lp(t,k) = -sum_{s: ext[s]=k} exp(alpha + beta - lp(t,k) - log P)
  auto dlp = std::make_shared<Tensor>(Shape{T, V});
  for (std::size_t t = 0; t < T; ++t) {
    std::vector<double> acc(V, kNegInf);
    for (std::size_t s = 0; s < S; ++s) {
      const double ab = (*alpha)(t, s) + beta(t, s);
      if (ab == kNegInf) continue;
      auto k = static_cast<std::size_t>(ext[s]);
      acc[k] = log_add(acc[k], ab - emit(t, s));
    }
    for (std::size_t k = 0; k < V; ++k)
      if (acc[k] != kNegInf) (*dlp)(t, k) = -std::exp(acc[k] - log_p);
  }
  const std::size_t il = log_probs.id();
  Var loss = log_probs.tape().record(Tensor::scalar(-log_p), log_probs.requires_grad(),
                                     [il, dlp](Tape& tp, std::size_t self) {
                                       const double g = tp.grad(self)[0];
                                       Tensor& gl = tp.grad_buffer(il);
                                       for (std::size_t i = 0; i < gl.size(); ++i) gl[i] += g * (*dlp)[i];
                                     });
  return {loss, true};
}

/// Plain-tensor convenience; returns +inf for infeasible targets.
inline double ctc_loss_value(const Tensor& log_probs, std::span<const TokenId> target, TokenId blank = kBlank) {
  Tape tape;
  return ctc_loss(tape.constant_ref(log_probs), target, blank).loss.value().item();
}

/// Per-row argmax (lowest id on ties), then collapse.
inline std::vector<TokenId> greedy_decode(const Tensor& log_probs, TokenId blank = kBlank) {
  std::vector<TokenId> best(log_probs.rows());
  for (std::size_t t = 0; t < log_probs.rows(); ++t) {
    const auto row = log_probs.row(t);
    std::size_t arg = 0;
    for (std::size_t k = 1; k < row.size(); ++k)
      if (row[k] > row[arg]) arg = k;
    best[t] = static_cast<TokenId>(arg);
  }
  return collapse(best, blank);
}

struct GreedyResult {
  std::vector<TokenId> tokens;
  bool degenerate = false;  // empty decode replaced by the fallback token
};

/// greedy_decode, substituting a single fallback token for an empty result.
inline GreedyResult greedy_decode_nonempty(const Tensor& log_probs, TokenId blank = kBlank,
                                           TokenId fallback = kUnk) {
  GreedyResult r{greedy_decode(log_probs, blank), false};
  if (r.tokens.empty()) {
    r.tokens.push_back(fallback);
    r.degenerate = true;
  }
  return r;
}

/// Duplicates each token in place: [a,b] -> [a,a,b,b].
inline std::vector<TokenId> upsample2x(std::span<const TokenId> seq, std::size_t max_positions) {
  if (2 * seq.size() > max_positions)
    throw LengthError("upsampled length " + std::to_string(2 * seq.size()) + " exceeds max_positions " +
                      std::to_string(max_positions));
  std::vector<TokenId> out;
  out.reserve(2 * seq.size());
  for (TokenId t : seq) {
    out.push_back(t);
    out.push_back(t);
  }
  return out;
}

}  // namespace sga::ctc
