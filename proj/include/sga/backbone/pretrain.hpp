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

#include "sga/backbone/backbone.hpp"
#include "sga/numerics/adam.hpp"

namespace sga {

struct MaskedInput {
  std::vector<TokenId> input;
  std::vector<bool> mask;  // positions scored by the loss
};

/// BERT-style corruption: each position past `skip_prefix` is selected with
/// probability `rate`; selected positions become <mask> 80% of the time, a
/// random non-special token 10%, and stay unchanged 10%.
template <class Rng>
MaskedInput mlm_mask(std::span<const TokenId> seq, double rate, std::size_t vocab_size, Rng& rng,
                     std::size_t skip_prefix = 1) {
  MaskedInput m{{seq.begin(), seq.end()}, std::vector<bool>(seq.size(), false)};
  if (rate <= 0.0) return m;
  std::uniform_real_distribution<double> u(0.0, 1.0);
  std::uniform_int_distribution<TokenId> rand_tok(kNumSpecials, static_cast<TokenId>(vocab_size) - 1);
  for (std::size_t i = skip_prefix; i < seq.size(); ++i) {
    if (u(rng) >= rate) continue;
    m.mask[i] = true;
    const double r = u(rng);
    if (r < 0.8) m.input[i] = kMask;
    else if (r < 0.9) m.input[i] = rand_tok(rng);
  }
  return m;
}

/// One MLM optimisation step over `batch`; returns the mean masked cross-entropy.
///
/// Each sentence contributes its own masked-position mean; sentences with no
/// selected position contribute nothing. With rate 0 the loss is 0 and no
/// parameter moves.
template <class Rng>
double mlm_pretrain_step(BackboneParams& params, Adam& opt, const std::vector<TokenSeq>& batch, double mask_rate,
                         Rng& rng) {
  if (params.frozen) throw FrozenViolation("mlm_pretrain_step on frozen backbone parameters");
  double total = 0.0;
  std::size_t used = 0;
  for (const TokenSeq& s : batch) {
    MaskedInput m = mlm_mask(s.span(), mask_rate, params.config.vocab_size, rng);
    if (std::none_of(m.mask.begin(), m.mask.end(), [](bool b) { return b; })) continue;
    Tape tape;
    BoundBackbone bb(tape, params, true);
    LayerStatesVar st = forward_lm(bb, nullptr, m.input);
    Var loss = cross_entropy_masked(st.logits, s.span(), m.mask);
    total += loss.value().item();
    ++used;
    tape.backward(loss);
  }
  if (used == 0) {
    for (Parameter* p : opt.params()) p->zero_grad();
    return 0.0;
  }
  opt.step(1.0 / static_cast<double>(used));
  return total / static_cast<double>(used);
}

/// Fraction of <mask>-replaced positions whose argmax prediction is the original token.
template <class Rng>
double mlm_accuracy(const BackboneParams& params, const std::vector<TokenSeq>& sentences, double mask_rate, Rng& rng) {
  std::size_t hit = 0, total = 0;
  std::uniform_real_distribution<double> u(0.0, 1.0);
  for (const TokenSeq& s : sentences) {
    std::vector<TokenId> in = s.ids;
    std::vector<std::size_t> pos;
    for (std::size_t i = 1; i < in.size(); ++i)
      if (u(rng) < mask_rate) {
        in[i] = kMask;
        pos.push_back(i);
      }
    if (pos.empty()) continue;
    const LayerStates st = forward_lm(params, nullptr, in);
    for (std::size_t i : pos) {
      const auto row = st.logits.row(i);
      const auto arg = static_cast<TokenId>(std::max_element(row.begin(), row.end()) - row.begin());
      hit += arg == s.ids[i];
      ++total;
    }
  }
  return total ? static_cast<double>(hit) / static_cast<double>(total) : 0.0;
}

}  // namespace sga
