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
#include <map>

#include "sga/backbone/backbone.hpp"

namespace sga::mp {

/// Number of positions re-masked before iteration t (1 <= t < total):
/// ceil(n * (total - t) / total).
inline std::size_t remask_count(std::size_t n, std::size_t t, std::size_t total) {
  if (total == 0) throw std::invalid_argument("iteration count must be positive");
  if (t >= total) return 0;
  return (n * (total - t) + total - 1) / total;
}

/// Decoder state between iterations. Masked positions carry confidence 0.
struct MpState {
  std::vector<TokenId> tokens;
  std::vector<double> confidences;
  std::size_t iteration = 0;
  std::size_t total_iterations = 1;
};

struct MpDecodeTrace {
  std::vector<MpState> states;        // state after each iteration
  std::vector<std::size_t> remasked;  // counts for iterations 1..total-1
};

namespace detail {

// Argmax over non-special tokens and its probability.
inline std::pair<TokenId, double> best_token(std::span<const double> logits) {
  std::size_t arg = kNumSpecials;
  for (std::size_t k = kNumSpecials + 1; k < logits.size(); ++k)
    if (logits[k] > logits[arg]) arg = k;
  double z = 0.0;
  for (double v : logits) z += std::exp(v - logits[arg]);
  return {static_cast<TokenId>(arg), 1.0 / z};
}

}  // namespace detail

/// Mask-Predict decoding of `target_len` tokens under a (semantic + task) prompt.
///
/// Iteration 0 predicts every position from an all-<mask> input. Iteration t
/// re-masks the remask_count() lowest-confidence positions (ties: lowest index)
/// and re-predicts only those, keeping the rest fixed.
inline std::vector<TokenId> mp_decode(const BackboneParams& backbone, const PrefixKV& prompt, std::size_t target_len,
                                      std::size_t iterations, MpDecodeTrace* trace = nullptr) {
  if (target_len == 0) throw std::invalid_argument("mp_decode target length must be positive");
  if (iterations == 0) throw std::invalid_argument("mp_decode needs at least one iteration");
  MpState st;
  st.tokens.assign(target_len, kMask);
  st.confidences.assign(target_len, 0.0);
  st.total_iterations = iterations;
  std::vector<bool> masked(target_len, true);
  for (std::size_t t = 0; t < iterations; ++t) {
    if (t > 0) {
      const std::size_t k = remask_count(target_len, t, iterations);
      std::vector<std::size_t> order(target_len);
      std::iota(order.begin(), order.end(), 0);
      std::stable_sort(order.begin(), order.end(),
                       [&](std::size_t a, std::size_t b) { return st.confidences[a] < st.confidences[b]; });
      std::fill(masked.begin(), masked.end(), false);
      for (std::size_t i = 0; i < k; ++i) {
        masked[order[i]] = true;
        st.tokens[order[i]] = kMask;
        st.confidences[order[i]] = 0.0;
      }
      if (trace) trace->remasked.push_back(k);
      if (k == 0) break;
    }
    const LayerStates out = forward_lm(backbone, &prompt, st.tokens);
    std::vector<TokenId> next = st.tokens;
    for (std::size_t i = 0; i < target_len; ++i) {
      if (!masked[i]) continue;
      auto [tok, p] = detail::best_token(out.logits.row(i));
      next[i] = tok;
      st.confidences[i] = p;
    }
    st.tokens = std::move(next);
    st.iteration = t;
    if (trace) trace->states.push_back(st);
  }
  return st.tokens;
}

struct CmlmMasking {
  std::vector<TokenId> input;
  std::vector<bool> mask;
};

/// Conditional-MLM training corruption: masks round(u * n) positions (at least
/// one) chosen uniformly, with u ~ Uniform(0, 1].
template <class Rng>
CmlmMasking cmlm_train_masking(std::span<const TokenId> y, Rng& rng) {
  if (y.empty()) throw EmptyInputError("cmlm_train_masking on an empty target");
  const std::size_t n = y.size();
  std::uniform_real_distribution<double> ud(0.0, 1.0);
  const double u = 1.0 - ud(rng);  // (0, 1]
  std::size_t k = static_cast<std::size_t>(std::llround(u * static_cast<double>(n)));
  k = std::clamp<std::size_t>(k, 1, n);
  std::vector<std::size_t> idx(n);
  std::iota(idx.begin(), idx.end(), 0);
  std::shuffle(idx.begin(), idx.end(), rng);
  CmlmMasking m{{y.begin(), y.end()}, std::vector<bool>(n, false)};
  for (std::size_t i = 0; i < k; ++i) {
    m.mask[idx[i]] = true;
    m.input[idx[i]] = kMask;
  }
  return m;
}

/// Target length lookup for free generation, estimated on a training split.
///
/// For every observed source length the most frequent target length is kept
/// (ties: the shorter); unseen source lengths use the mean length ratio.
class LengthTable {
 public:
  LengthTable() = default;

  template <class Pairs>
  static LengthTable estimate(const Pairs& pairs) {
    std::map<std::size_t, std::map<std::size_t, std::size_t>> counts;
    double src_total = 0.0, tgt_total = 0.0;
    for (const auto& p : pairs) {
      ++counts[p.x.size()][p.y.size()];
      src_total += static_cast<double>(p.x.size());
      tgt_total += static_cast<double>(p.y.size());
    }
    LengthTable t;
    t.ratio_ = src_total > 0.0 ? tgt_total / src_total : 1.0;
    for (const auto& [s, m] : counts) {
      std::size_t best = 0, best_n = 0;
      for (const auto& [len, n] : m)
        if (n > best_n) best = len, best_n = n;
      t.table_[s] = best;
    }
    return t;
  }

  std::size_t predict(std::size_t src_len) const {
    if (auto it = table_.find(src_len); it != table_.end()) return it->second;
    return std::max<std::size_t>(1, static_cast<std::size_t>(std::llround(ratio_ * static_cast<double>(src_len))));
  }

  double ratio() const { return ratio_; }
  const std::map<std::size_t, std::size_t>& entries() const { return table_; }
  void set(std::size_t src, std::size_t tgt) { table_[src] = tgt; }
  void set_ratio(double r) { ratio_ = r; }

 private:
  std::map<std::size_t, std::size_t> table_;
  double ratio_ = 1.0;
};

}  // namespace sga::mp
