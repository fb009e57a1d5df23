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
#include <stdexcept>
#include <vector>

#include "sga/vocab.hpp"

namespace sga::metrics {

struct BleuStats {
  std::vector<std::size_t> correct, total;
  std::size_t sys_len = 0, ref_len = 0;
};

/// Clipped n-gram match counts accumulated over the corpus.
inline BleuStats bleu_stats(const std::vector<std::vector<TokenId>>& hyps, const std::vector<std::vector<TokenId>>& refs,
                            std::size_t max_n = 4) {
  if (refs.empty()) throw std::invalid_argument("corpus_bleu: empty reference set");
  if (hyps.size() != refs.size())
    throw std::invalid_argument("corpus_bleu: " + std::to_string(hyps.size()) + " hypotheses vs " +
                                std::to_string(refs.size()) + " references");
  BleuStats s;
  s.correct.assign(max_n, 0);
  s.total.assign(max_n, 0);
  for (std::size_t i = 0; i < hyps.size(); ++i) {
    const auto& h = hyps[i];
    const auto& r = refs[i];
    s.sys_len += h.size();
    s.ref_len += r.size();
    for (std::size_t n = 1; n <= max_n; ++n) {
      if (h.size() < n) break;
      std::map<std::vector<TokenId>, std::size_t> ref_counts, hyp_counts;
      for (std::size_t k = 0; k + n <= r.size(); ++k) ++ref_counts[{r.begin() + k, r.begin() + k + n}];
      for (std::size_t k = 0; k + n <= h.size(); ++k) ++hyp_counts[{h.begin() + k, h.begin() + k + n}];
      s.total[n - 1] += h.size() - n + 1;
      for (const auto& [g, c] : hyp_counts)
        if (auto it = ref_counts.find(g); it != ref_counts.end()) s.correct[n - 1] += std::min(c, it->second);
    }
  }
  return s;
}

/// Corpus BLEU in [0, 100] with exponential smoothing of zero-match orders.
///
/// The k-th order with no match gets precision 1 / (2^k * total). An order
/// with no candidate n-grams at all contributes precision 0.
inline double bleu_from_stats(const BleuStats& s) {
  const std::size_t max_n = s.correct.size();
  double bp = 1.0;
  if (s.sys_len < s.ref_len)
    bp = s.sys_len > 0 ? std::exp(1.0 - static_cast<double>(s.ref_len) / static_cast<double>(s.sys_len)) : 0.0;
  double log_sum = 0.0;
  double smooth = 1.0;
  for (std::size_t n = 0; n < max_n; ++n) {
    if (s.total[n] == 0) return 0.0;
    double p;
    if (s.correct[n] == 0) {
      smooth *= 2.0;
      p = 100.0 / (smooth * static_cast<double>(s.total[n]));
    } else {
      p = 100.0 * static_cast<double>(s.correct[n]) / static_cast<double>(s.total[n]);
    }
    log_sum += std::log(p);
  }
  return bp * std::exp(log_sum / static_cast<double>(max_n));
}

inline double corpus_bleu(const std::vector<std::vector<TokenId>>& hyps, const std::vector<std::vector<TokenId>>& refs,
                          std::size_t max_n = 4) {
  return bleu_from_stats(bleu_stats(hyps, refs, max_n));
}

/// Fraction of hypotheses identical to their reference.
inline double exact_match(const std::vector<std::vector<TokenId>>& hyps, const std::vector<std::vector<TokenId>>& refs) {
  if (hyps.size() != refs.size()) throw std::invalid_argument("exact_match: size mismatch");
  if (refs.empty()) return 0.0;
  std::size_t hit = 0;
  for (std::size_t i = 0; i < refs.size(); ++i) hit += hyps[i] == refs[i];
  return static_cast<double>(hit) / static_cast<double>(refs.size());
}

/// Position-wise matches over max(|hyp|, |ref|), pooled over the corpus.
inline double token_accuracy(const std::vector<std::vector<TokenId>>& hyps,
                             const std::vector<std::vector<TokenId>>& refs) {
  if (hyps.size() != refs.size()) throw std::invalid_argument("token_accuracy: size mismatch");
  std::size_t hit = 0, total = 0;
  for (std::size_t i = 0; i < refs.size(); ++i) {
    const auto& h = hyps[i];
    const auto& r = refs[i];
    const std::size_t n = std::min(h.size(), r.size());
    for (std::size_t k = 0; k < n; ++k) hit += h[k] == r[k];
    total += std::max(h.size(), r.size());
  }
  return total ? static_cast<double>(hit) / static_cast<double>(total) : 0.0;
}

}  // namespace sga::metrics
