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

#include <algorithm>
#include <fstream>
#include <map>
#include <numeric>
#include <random>
#include <set>
#include <sstream>
#include <string>

#include "sga/numerics/tensor.hpp"
#include "sga/vocab.hpp"

namespace sga::tasks {

enum class Reorder {
  kIdentity,     // keep source order
  kSwapPairs,    // swap positions (0,1), (2,3), ...
  kRandomPairs,  // each pair swapped independently with probability 1/2 (several valid targets)
};

inline std::string to_string(Reorder r) {
  switch (r) {
    case Reorder::kIdentity: return "identity";
    case Reorder::kSwapPairs: return "swap-pairs";
    case Reorder::kRandomPairs: return "random-pairs";
  }
  return "?";
}

inline Reorder reorder_from_string(const std::string& s) {
  if (s == "identity") return Reorder::kIdentity;
  if (s == "swap-pairs") return Reorder::kSwapPairs;
  if (s == "random-pairs") return Reorder::kRandomPairs;
  throw std::invalid_argument("unknown reorder rule '" + s + "'");
}

/// A toy source language: its tag, its content-token slice and the mapping
/// that turns its sentences into target-language sentences.
struct ToyLanguageSpec {
  std::string name;
  int index = 0;
  TokenId tag = 0;
  TokenId slice_begin = 0;
  std::size_t slice_size = 24;
  std::vector<int> cipher;  // concept -> target concept, a bijection
  Reorder reorder = Reorder::kIdentity;
  bool transfer = false;  // only seen during MLM pretraining

  bool owns(TokenId t) const {
    return t >= slice_begin && t < slice_begin + static_cast<TokenId>(slice_size);
  }
  TokenId token(int c) const { return slice_begin + c; }
};

/// The full family of toy languages plus the shared target language.
struct ToyWorld {
  std::size_t concepts = 24;
  std::vector<ToyLanguageSpec> sources;  // supervised first, then transfer
  ToyLanguageSpec target;
  std::vector<int> successor;  // concept-level successor used by the MLM grammar
  double jump_prob = 0.05;

  std::size_t num_languages() const { return sources.size() + 1; }
  std::size_t vocab_size() const { return static_cast<std::size_t>(target.slice_begin) + concepts; }

  std::vector<const ToyLanguageSpec*> all_languages() const {
    std::vector<const ToyLanguageSpec*> out;
    for (const auto& s : sources) out.push_back(&s);
    out.push_back(&target);
    return out;
  }
  std::vector<const ToyLanguageSpec*> supervised() const {
    std::vector<const ToyLanguageSpec*> out;
    for (const auto& s : sources)
      if (!s.transfer) out.push_back(&s);
    return out;
  }
  std::vector<const ToyLanguageSpec*> transfer() const {
    std::vector<const ToyLanguageSpec*> out;
    for (const auto& s : sources)
      if (s.transfer) out.push_back(&s);
    return out;
  }
  /// Language whose tag is `tag`, or nullptr.
  const ToyLanguageSpec* by_tag(TokenId tag) const {
    for (const auto* l : all_languages())
      if (l->tag == tag) return l;
    return nullptr;
  }

  /// Builds `n_supervised + n_transfer` source languages with disjoint slices.
  static ToyWorld make(std::uint64_t seed, std::size_t n_supervised = 8, std::size_t n_transfer = 2,
                       std::size_t concepts = 24, Reorder reorder = Reorder::kIdentity) {
    if (concepts < 2) throw std::invalid_argument("need at least two concepts");
    std::mt19937_64 rng(seed);
    ToyWorld w;
    w.concepts = concepts;
    std::vector<int> cipher(concepts);
    std::iota(cipher.begin(), cipher.end(), 0);
    std::shuffle(cipher.begin(), cipher.end(), rng);
    w.successor.resize(concepts);
    std::vector<int> order(concepts);
    std::iota(order.begin(), order.end(), 0);
    std::shuffle(order.begin(), order.end(), rng);
    for (std::size_t i = 0; i < concepts; ++i) w.successor[order[i]] = order[(i + 1) % concepts];

    const std::size_t n_src = n_supervised + n_transfer;
    const TokenId first_tag = kNumSpecials;
    const TokenId first_slice = first_tag + static_cast<TokenId>(n_src + 1);
    for (std::size_t i = 0; i < n_src; ++i) {
      ToyLanguageSpec s;
      s.index = static_cast<int>(i);
      s.name = (i < n_supervised ? "sup" : "xfer") + std::to_string(i);
      s.tag = first_tag + static_cast<TokenId>(i);
      s.slice_begin = first_slice + static_cast<TokenId>(i * concepts);
      s.slice_size = concepts;
      s.cipher = cipher;
      s.reorder = reorder;
      s.transfer = i >= n_supervised;
      w.sources.push_back(std::move(s));
    }
    w.target.name = "tgt";
    w.target.index = static_cast<int>(n_src);
    w.target.tag = first_tag + static_cast<TokenId>(n_src);
    w.target.slice_begin = first_slice + static_cast<TokenId>(n_src * concepts);
    w.target.slice_size = concepts;
    w.target.cipher.resize(concepts);
    std::iota(w.target.cipher.begin(), w.target.cipher.end(), 0);
    return w;
  }
};

/// Source sentence [tag, content...] and its target (content only).
struct ParallelPair {
  TokenSeq x;
  TokenSeq y;
};

inline std::vector<TokenId> content(const TokenSeq& x) {
  return x.empty() ? std::vector<TokenId>{} : std::vector<TokenId>(x.ids.begin() + 1, x.ids.end());
}

/// Reference translation of `src_content` written in `spec`'s slice. For
/// kRandomPairs the swap pattern is drawn from `rng` (nullptr: no swaps).
template <class Rng = std::mt19937_64>
std::vector<TokenId> apply(const ToyLanguageSpec& spec, const ToyLanguageSpec& target,
                           std::span<const TokenId> src_content, Rng* rng = nullptr) {
  std::vector<TokenId> out;
  out.reserve(src_content.size());
  for (TokenId t : src_content) {
    if (!spec.owns(t)) throw std::invalid_argument("token " + std::to_string(t) + " not in language " + spec.name);
    out.push_back(target.token(spec.cipher[static_cast<std::size_t>(t - spec.slice_begin)]));
  }
  if (spec.reorder == Reorder::kSwapPairs) {
    for (std::size_t i = 0; i + 1 < out.size(); i += 2) std::swap(out[i], out[i + 1]);
  } else if (spec.reorder == Reorder::kRandomPairs && rng) {
    std::bernoulli_distribution coin(0.5);
    for (std::size_t i = 0; i + 1 < out.size(); i += 2)
      if (coin(*rng)) std::swap(out[i], out[i + 1]);
  }
  return out;
}

/// True when `hyp` is one of the valid targets for `src_content`.
inline bool is_valid_target(const ToyLanguageSpec& spec, const ToyLanguageSpec& target,
                            std::span<const TokenId> src_content, std::span<const TokenId> hyp) {
  const std::vector<TokenId> base = apply<std::mt19937_64>(spec, target, src_content, nullptr);
  if (hyp.size() != base.size()) return false;
  if (spec.reorder != Reorder::kRandomPairs) return std::equal(base.begin(), base.end(), hyp.begin());
  for (std::size_t i = 0; i < base.size(); i += 2) {
    if (i + 1 >= base.size()) return hyp[i] == base[i];
    const bool straight = hyp[i] == base[i] && hyp[i + 1] == base[i + 1];
    const bool swapped = hyp[i] == base[i + 1] && hyp[i + 1] == base[i];
    if (!straight && !swapped) return false;
  }
  return true;
}

struct LengthRange {
  std::size_t min = 4;
  std::size_t max = 16;
};

/// Deterministic parallel corpus: source tokens uniform over the language's slice.
inline std::vector<ParallelPair> gen_parallel_corpus(const ToyLanguageSpec& spec, const ToyLanguageSpec& target,
                                                     std::size_t n, LengthRange len, std::uint64_t seed) {
  if (len.min == 0 || len.min > len.max) throw std::invalid_argument("invalid length range");
  std::mt19937_64 rng(seed);
  std::uniform_int_distribution<std::size_t> dlen(len.min, len.max);
  std::uniform_int_distribution<int> dtok(0, static_cast<int>(spec.slice_size) - 1);
  std::vector<ParallelPair> out;
  out.reserve(n);
  for (std::size_t i = 0; i < n; ++i) {
    ParallelPair p;
    p.x.lang = spec.index;
    p.x.ids.push_back(spec.tag);
    const std::size_t L = dlen(rng);
    for (std::size_t k = 0; k < L; ++k) p.x.ids.push_back(spec.token(dtok(rng)));
    const auto c = content(p.x);
    p.y.ids = apply(spec, target, std::span<const TokenId>(c), &rng);
    p.y.lang = target.index;
    out.push_back(std::move(p));
  }
  return out;
}

/// Monolingual sentences [tag, content...] mixing all languages uniformly.
///
/// Content follows a concept-level chain shared by every language: the next
/// concept is the fixed successor of the current one, except for random jumps
/// with probability `world.jump_prob`. With `blank_filler` > 0 each content
/// token is followed by a <blank> filler with that probability, which gives the
/// blank symbol a trained embedding that a frozen head can later emit.
inline std::vector<TokenSeq> gen_mlm_corpus(const ToyWorld& world, std::size_t n, std::uint64_t seed,
                                            LengthRange len = {4, 24}, double blank_filler = 0.0) {
  if (blank_filler < 0.0 || blank_filler >= 1.0) throw std::invalid_argument("blank_filler must be in [0,1)");
  if (len.min == 0 || len.min > len.max) throw std::invalid_argument("invalid length range");
  const auto langs = world.all_languages();
  std::mt19937_64 rng(seed);
  std::uniform_int_distribution<std::size_t> dlang(0, langs.size() - 1);
  std::uniform_int_distribution<std::size_t> dlen(len.min, len.max);
  std::uniform_int_distribution<int> dconcept(0, static_cast<int>(world.concepts) - 1);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  std::vector<TokenSeq> out;
  out.reserve(n);
  for (std::size_t i = 0; i < n; ++i) {
    const ToyLanguageSpec& l = *langs[dlang(rng)];
    TokenSeq s;
    s.lang = l.index;
    s.ids.push_back(l.tag);
    const std::size_t L = dlen(rng);
    int c = dconcept(rng);
    for (std::size_t k = 0; k < L; ++k) {
      s.ids.push_back(l.token(c));
      if (blank_filler > 0.0 && u(rng) < blank_filler) s.ids.push_back(kBlank);
      c = u(rng) < world.jump_prob ? dconcept(rng) : world.successor[static_cast<std::size_t>(c)];
    }
    out.push_back(std::move(s));
  }
  return out;
}

struct Splits {
  std::vector<ParallelPair> train, dev, test;
};

/// Train/dev/test corpora for one language, disjoint by source sentence.
inline Splits make_splits(const ToyLanguageSpec& spec, const ToyLanguageSpec& target, std::size_t n_train,
                          std::size_t n_dev, std::size_t n_test, LengthRange len, std::uint64_t seed) {
  Splits s;
  std::set<std::vector<TokenId>> seen;
  auto fill = [&](std::vector<ParallelPair>& dst, std::size_t n, std::uint64_t sd) {
    std::uint64_t round = 0;
    while (dst.size() < n) {
      for (auto& p : gen_parallel_corpus(spec, target, n, len, sd * 1000003ull + round++)) {
        if (dst.size() == n) break;
        if (seen.insert(p.x.ids).second) dst.push_back(std::move(p));
      }
    }
  };
  fill(s.train, n_train, seed * 3 + 1);
  fill(s.dev, n_dev, seed * 3 + 2);
  fill(s.test, n_test, seed * 3 + 3);
  return s;
}

/// Initialises token embeddings so that concept c shares a common component
/// across all languages, standing in for the shared sub-word anchors of real
/// multilingual vocabularies.
template <class Rng>
void anchor_embeddings(const ToyWorld& world, Tensor& tok_emb, double stddev, double shared_fraction, Rng& rng) {
  const std::size_t d = tok_emb.cols();
  const Tensor anchors = Tensor::randn({world.concepts, d}, stddev, rng);
  const double a = std::sqrt(shared_fraction), b = std::sqrt(1.0 - shared_fraction);
  std::normal_distribution<double> noise(0.0, stddev);
  for (const ToyLanguageSpec* l : world.all_languages())
    for (std::size_t c = 0; c < world.concepts; ++c) {
      auto row = tok_emb.row(static_cast<std::size_t>(l->token(static_cast<int>(c))));
      for (std::size_t j = 0; j < d; ++j) row[j] = a * anchors(c, j) + b * noise(rng);
    }
}

// ---- corpus files: one item per line, sides separated by a tab, ids by spaces ----

inline std::string join_ids(std::span<const TokenId> ids) {
  std::ostringstream os;
  for (std::size_t i = 0; i < ids.size(); ++i) os << (i ? " " : "") << ids[i];
  return os.str();
}

inline std::vector<TokenId> parse_ids(const std::string& s) {
  std::istringstream is(s);
  std::vector<TokenId> out;
  std::string tok;
  while (is >> tok) {
    std::size_t used = 0;
    const long v = std::stol(tok, &used);
    if (used != tok.size()) throw std::invalid_argument("bad token id '" + tok + "'");
    out.push_back(static_cast<TokenId>(v));
  }
  return out;
}

inline void write_parallel(const std::string& path, const std::vector<ParallelPair>& pairs) {
  std::ofstream f(path);
  if (!f) throw std::runtime_error("cannot write " + path);
  for (const auto& p : pairs) f << join_ids(p.x.ids) << '\t' << join_ids(p.y.ids) << '\n';
}

/// Reads pairs; the language of each source is recovered from its leading tag.
inline std::vector<ParallelPair> read_parallel(const std::string& path, const ToyWorld* world = nullptr) {
  std::ifstream f(path);
  if (!f) throw std::runtime_error("cannot read " + path);
  std::vector<ParallelPair> out;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(f, line)) {
    ++lineno;
    if (line.empty()) continue;
    const auto tab = line.find('\t');
    if (tab == std::string::npos) throw std::runtime_error(path + ":" + std::to_string(lineno) + ": missing tab");
    ParallelPair p;
    p.x.ids = parse_ids(line.substr(0, tab));
    p.y.ids = parse_ids(line.substr(tab + 1));
    if (world && !p.x.empty())
      if (const auto* l = world->by_tag(p.x.ids.front())) p.x.lang = l->index;
    if (world) p.y.lang = world->target.index;
    out.push_back(std::move(p));
  }
  return out;
}

inline void write_mono(const std::string& path, const std::vector<TokenSeq>& sents) {
  std::ofstream f(path);
  if (!f) throw std::runtime_error("cannot write " + path);
  for (const auto& s : sents) f << join_ids(s.ids) << '\n';
}

inline std::vector<TokenSeq> read_mono(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw std::runtime_error("cannot read " + path);
  std::vector<TokenSeq> out;
  std::string line;
  while (std::getline(f, line))
    if (!line.empty()) out.push_back({parse_ids(line), -1});
  return out;
}

}  // namespace sga::tasks
