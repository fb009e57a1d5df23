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

#include <gtest/gtest.h>

#include "oracles.hpp"
#include "sga/ctc/ctc.hpp"
#include "sga/numerics/grad_check.hpp"

using namespace sga;
using sga::ctc::collapse;

namespace {

constexpr TokenId B = 0;  // blank for the small-vocabulary instances
constexpr TokenId a = 1, b = 2;

Tensor random_log_probs(std::size_t T, std::size_t V, std::mt19937_64& rng, double spread = 1.5) {
  return log_softmax_rows(Tensor::randn({T, V}, spread, rng));
}

std::vector<std::vector<long double>> to_probs(const Tensor& lp) {
  std::vector<std::vector<long double>> p(lp.rows());
  for (std::size_t t = 0; t < lp.rows(); ++t)
    for (double v : lp.row(t)) p[t].push_back(std::exp(static_cast<long double>(v)));
  return p;
}

}  // namespace

TEST(Collapse, MergesRepeatsThenDropsBlanks) {
  EXPECT_EQ(collapse(std::vector<TokenId>{a, a, B, b}, B), (std::vector<TokenId>{a, b}));
  EXPECT_TRUE(collapse(std::vector<TokenId>{B, B}, B).empty());
  EXPECT_EQ(collapse(std::vector<TokenId>{a, B, a}, B), (std::vector<TokenId>{a, a}));
}

TEST(Collapse, IdempotentOnRepeatFreeBlankFreeInput) {
  std::mt19937_64 rng(1);
  for (int trial = 0; trial < 100; ++trial) {
    std::vector<TokenId> s;
    for (int i = 0; i < 8; ++i) {
      TokenId t = 1 + static_cast<TokenId>(rng() % 5);
      if (s.empty() || s.back() != t) s.push_back(t);
    }
    EXPECT_EQ(collapse(s, B), s);
    EXPECT_EQ(collapse(collapse(s, B), B), collapse(s, B));
  }
}

TEST(CtcLoss, SingleFrameSinglePath) {
  std::mt19937_64 rng(2);
  Tensor lp = random_log_probs(1, 3, rng);
  EXPECT_NEAR(ctc::ctc_loss_value(lp, std::vector<TokenId>{a}, B), -lp(0, a), 1e-14);
}

TEST(CtcLoss, TwoFramesEnumerable) {
  std::mt19937_64 rng(3);
  Tensor lp = random_log_probs(2, 3, rng);
  auto p = [&](std::size_t t, TokenId k) { return std::exp(lp(t, static_cast<std::size_t>(k))); };
  const double expected = -std::log(p(0, a) * p(1, a) + p(0, a) * p(1, B) + p(0, B) * p(1, a));
  EXPECT_NEAR(ctc::ctc_loss_value(lp, std::vector<TokenId>{a}, B), expected, 1e-14);
}

TEST(CtcLoss, MatchesExhaustivePathEnumeration) {
  // Every (T, target) with T <= 5, |target| <= 3 over V = 3 (blank + 2 symbols),
  // several random emission tables each.
  std::mt19937_64 rng(4);
  std::size_t checked = 0;
  for (std::size_t T = 1; T <= 5; ++T)
    for (std::size_t U = 0; U <= 3; ++U) {
      std::vector<std::size_t> digits(U, 0);
      while (true) {
        std::vector<TokenId> target;
        for (auto d : digits) target.push_back(static_cast<TokenId>(1 + d));
        for (int rep = 0; rep < 6; ++rep) {
          Tensor lp = random_log_probs(T, 3, rng);
          const bool ok = ctc::feasible(T, target);
          Tape tape;
          auto res = ctc::ctc_loss(tape.constant(lp), target, B);
          ASSERT_EQ(res.feasible, ok);
          if (!ok) {
            EXPECT_TRUE(std::isinf(res.loss.value().item()));
            continue;
          }
          const long double ref = oracle::ctc_brute_force(to_probs(lp), target, B);
          EXPECT_NEAR(res.loss.value().item(), static_cast<double>(ref), 1e-9);
          const double p = std::exp(-res.loss.value().item());
          EXPECT_GT(p, 0.0);
          EXPECT_LE(p, 1.0 + 1e-12);
          ++checked;
        }
        std::size_t i = 0;
        while (i < U && ++digits[i] == 2) digits[i++] = 0;
        if (i == U) break;
      }
    }
  EXPECT_GE(checked, 200u);
}

TEST(CtcLoss, InfeasibleTargetIsExplicitInfinity) {
  std::mt19937_64 rng(5);
  Tensor lp = random_log_probs(2, 3, rng);
  Tape tape;
  auto res = ctc::ctc_loss(tape.constant(lp), std::vector<TokenId>{a, a}, B);  // needs 3 frames
  EXPECT_FALSE(res.feasible);
  EXPECT_EQ(res.loss.value().item(), std::numeric_limits<double>::infinity());
  EXPECT_EQ(ctc::min_frames(std::vector<TokenId>{a, a}), 3u);
  EXPECT_EQ(ctc::min_frames(std::vector<TokenId>{a, b}), 2u);
}

TEST(CtcLoss, RejectsBlankInTarget) {
  Tensor lp({2, 3}, std::log(1.0 / 3.0));
  Tape tape;
  EXPECT_THROW(ctc::ctc_loss(tape.constant(lp), std::vector<TokenId>{B}, B), std::invalid_argument);
}

TEST(CtcLoss, GradientMatchesFiniteDifferences) {
  std::mt19937_64 rng(6);
  for (int trial = 0; trial < 5; ++trial) {
    Parameter logits{"logits", Tensor::randn({4, 3}, 1.0, rng)};
    const std::vector<TokenId> target = trial % 2 ? std::vector<TokenId>{a, b} : std::vector<TokenId>{a, a};
    auto res = grad_check(
        [&](Tape& t) { return ctc::ctc_loss(log_softmax_rows(t.param(logits)), target, B).loss; }, {&logits});
    EXPECT_LE(res.max_rel_error, 1e-6);
  }
}

TEST(GreedyDecode, PeakedRowsSpellCollapsedSequence) {
  const std::vector<TokenId> path{a, a, B, b};
  Tensor lp({4, 3}, std::log(0.05));
  for (std::size_t t = 0; t < 4; ++t) lp(t, static_cast<std::size_t>(path[t])) = std::log(0.9);
  EXPECT_EQ(ctc::greedy_decode(lp, B), (std::vector<TokenId>{a, b}));
}

TEST(GreedyDecode, AllBlankFallsBackToSingleToken) {
  Tensor lp({3, 5}, std::log(0.01));
  for (std::size_t t = 0; t < 3; ++t) lp(t, kBlank) = std::log(0.96);
  EXPECT_TRUE(ctc::greedy_decode(lp).empty());
  auto r = ctc::greedy_decode_nonempty(lp);
  EXPECT_TRUE(r.degenerate);
  EXPECT_EQ(r.tokens, (std::vector<TokenId>{kUnk}));
}

TEST(GreedyDecode, MatchesArgmaxOracleAndBreaksTiesLow) {
  std::mt19937_64 rng(7);
  for (int trial = 0; trial < 100; ++trial) {
    Tensor lp = random_log_probs(9, 4, rng);
    std::vector<TokenId> best;
    for (std::size_t t = 0; t < 9; ++t) {
      std::size_t arg = 0;
      for (std::size_t k = 1; k < 4; ++k)
        if (lp(t, k) > lp(t, arg)) arg = k;
      best.push_back(static_cast<TokenId>(arg));
    }
    EXPECT_EQ(ctc::greedy_decode(lp, B), collapse(best, B));
  }
  Tensor tie({1, 3}, 0.0);
  EXPECT_TRUE(ctc::greedy_decode(tie, B).empty());  // lowest id (the blank) wins the tie
  EXPECT_EQ(ctc::greedy_decode(tie, 2), (std::vector<TokenId>{0}));
}

TEST(Upsample, DuplicatesEachToken) {
  EXPECT_EQ(ctc::upsample2x(std::vector<TokenId>{a, b}, 8), (std::vector<TokenId>{a, a, b, b}));
  EXPECT_TRUE(ctc::upsample2x(std::vector<TokenId>{}, 8).empty());
  EXPECT_THROW(ctc::upsample2x(std::vector<TokenId>{a, b, a}, 5), LengthError);
}

TEST(Upsample, CollapseRoundTrip) {
  std::mt19937_64 rng(8);
  for (int trial = 0; trial < 100; ++trial) {
    std::vector<TokenId> s;
    while (s.size() < 6) {
      TokenId t = 1 + static_cast<TokenId>(rng() % 4);
      if (s.empty() || s.back() != t) s.push_back(t);
    }
    EXPECT_EQ(collapse(ctc::upsample2x(s, 64), B), collapse(s, B));
  }
}
