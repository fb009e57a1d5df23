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
#include "sga/numerics/adam.hpp"
#include "sga/numerics/grad_check.hpp"
#include "sga/numerics/ops.hpp"

using namespace sga;

namespace {

Parameter random_param(const std::string& name, Shape s, std::mt19937_64& rng, double stddev = 1.0) {
  return {name, Tensor::randn(std::move(s), stddev, rng)};
}

// sum_ij l_i v_ij p_j with fixed random l, p, so every entry carries a distinct weight.
Var weighted(Tape& t, Var v, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  Tensor l = Tensor::randn({1, v.rows()}, 1.0, rng);
  Tensor p = Tensor::randn({v.cols(), 1}, 1.0, rng);
  return sum(matmul(matmul(t.constant(std::move(l)), v), t.constant(std::move(p))));
}

}  // namespace

TEST(Matmul, IdentityLeavesMatrixUnchanged) {
  std::mt19937_64 rng(1);
  Tensor b = Tensor::randn({3, 3}, 1.0, rng);
  EXPECT_EQ(matmul(Tensor::identity(3), b), b);
}

TEST(Matmul, HandCheckedProduct) {
  Tensor c = matmul(Tensor::from_rows({{1, 2}, {3, 4}}), Tensor::from_rows({{0}, {1}}));
  EXPECT_EQ(c, Tensor::from_rows({{2}, {4}}));
}

TEST(Matmul, ShapeMismatchNamesBothShapes) {
  try {
    matmul(Tensor::matrix(2, 3), Tensor::matrix(2, 3));
    FAIL() << "expected DimensionError";
  } catch (const DimensionError& e) {
    const std::string msg = e.what();
    EXPECT_NE(msg.find("[2x3] x [2x3]"), std::string::npos) << msg;
  }
}

TEST(Matmul, GradientOfSumMatchesFiniteDifferences) {
  std::mt19937_64 rng(2);
  Parameter a = random_param("a", {4, 5}, rng), b = random_param("b", {5, 3}, rng);
  auto res = grad_check([&](Tape& t) { return sum(matmul(t.param(a), t.param(b))); }, {&a, &b});
  EXPECT_LE(res.max_rel_error, 1e-6);
  EXPECT_EQ(res.checked, 35u);
}

TEST(Softmax, SymmetricInputIsUniform) {
  Tensor s = softmax_rows(Tensor::from_rows({{0, 0}}));
  EXPECT_EQ(s(0, 0), 0.5);
  EXPECT_EQ(s(0, 1), 0.5);
}

TEST(Softmax, LargeEqualLogitsDoNotOverflow) {
  Tensor s = softmax_rows(Tensor::from_rows({{1000, 1000, 1000}}));
  for (double v : s.data()) EXPECT_NEAR(v, 1.0 / 3.0, 1e-15);
  EXPECT_TRUE(s.all_finite());
}

TEST(Softmax, MatchesExtendedPrecisionOracle) {
  std::mt19937_64 rng(3);
  for (int trial = 0; trial < 50; ++trial) {
    Tensor x = Tensor::randn({1, 5}, 3.0, rng);
    Tensor s = softmax_rows(x);
    auto ref = oracle::softmax({x.data().begin(), x.data().end()});
    for (std::size_t k = 0; k < 5; ++k) EXPECT_NEAR(s[k], static_cast<double>(ref[k]), 1e-12);
  }
}

TEST(Softmax, RowsSumToOneAndLogSoftmaxNormalises) {
  std::mt19937_64 rng(4);
  for (int trial = 0; trial < 20; ++trial) {
    std::uniform_int_distribution<std::size_t> dim(1, 16);
    const std::size_t r = dim(rng), c = dim(rng);
    Tensor x = Tensor::randn({r, c}, 5.0, rng);
    Tensor s = softmax_rows(x), ls = log_softmax_rows(x);
    for (std::size_t i = 0; i < r; ++i) {
      double total = 0.0;
      for (double v : s.row(i)) total += v;
      EXPECT_NEAR(total, 1.0, 1e-12);
      EXPECT_NEAR(detail::logsumexp(ls.row(i)), 0.0, 1e-10);
    }
  }
}

TEST(CrossEntropy, UniformLogitsGiveLogV) {
  Tape t;
  Var logits = t.constant(Tensor({3, 4}, 0.7));
  const std::vector<int> targets{0, 3, 2};
  Var loss = cross_entropy_masked(logits, targets, {true, false, true});
  EXPECT_NEAR(loss.value().item(), std::log(4.0), 1e-14);
}

TEST(CrossEntropy, DominantLogitDrivesLossToZero) {
  Tape t;
  Tensor l({1, 4}, 0.0);
  l(0, 2) = 1e4;
  Var loss = cross_entropy_masked(t.constant(l), std::vector<int>{2}, {true});
  EXPECT_LT(loss.value().item(), 1e-12);
}

TEST(CrossEntropy, MatchesDirectSummation) {
  std::mt19937_64 rng(5);
  for (int trial = 0; trial < 30; ++trial) {
    const std::size_t T = 1 + trial % 7, V = 2 + trial % 5;
    Tensor l = Tensor::randn({T, V}, 2.0, rng);
    std::vector<int> tg(T);
    std::vector<bool> mask(T);
    std::uniform_int_distribution<int> dv(0, static_cast<int>(V) - 1);
    std::bernoulli_distribution coin(0.6);
    for (std::size_t i = 0; i < T; ++i) {
      tg[i] = dv(rng);
      mask[i] = coin(rng);
    }
    long double total = 0;
    int n = 0;
    for (std::size_t i = 0; i < T; ++i) {
      if (!mask[i]) continue;
      auto p = oracle::softmax({l.row(i).begin(), l.row(i).end()});
      total += -std::log(p[static_cast<std::size_t>(tg[i])]);
      ++n;
    }
    Tape t;
    const double got = cross_entropy_masked(t.constant(l), tg, mask).value().item();
    EXPECT_NEAR(got, n ? static_cast<double>(total / n) : 0.0, 1e-12);
  }
}

TEST(CrossEntropy, EmptyMaskIsZeroWithZeroGradient) {
  Parameter p{"p", Tensor({2, 3}, 0.5)};
  Tape t;
  Var loss = cross_entropy_masked(t.param(p), std::vector<int>{0, 1}, {false, false});
  EXPECT_EQ(loss.value().item(), 0.0);
  t.backward(loss);
  for (double g : p.grad.data()) EXPECT_EQ(g, 0.0);
}

TEST(GradCheck, LinearFunction) {
  Parameter w{"w", Tensor::scalar(0.37)};
  auto res = grad_check([&](Tape& t) { return scale(t.param(w), 3.0); }, {&w});
  EXPECT_LE(res.max_rel_error, 1e-10);
  EXPECT_NEAR(w.grad[0], 3.0, 0.0);
}

// Every differentiable op against central differences on random shapes up to 16.
class OpGradient : public ::testing::TestWithParam<int> {};

TEST_P(OpGradient, MatchesFiniteDifferences) {
  std::mt19937_64 rng(100 + GetParam());
  std::uniform_int_distribution<std::size_t> dim(1, 16);
  const std::size_t r = dim(rng), c = dim(rng), k = dim(rng);
  Parameter x = random_param("x", {r, c}, rng);
  Parameter y = random_param("y", {c, k}, rng);
  Parameter z = random_param("z", {r, c}, rng);
  Parameter g = random_param("g", {c}, rng);
  Parameter bias = random_param("b", {c}, rng);
  Parameter table = random_param("table", {6, c}, rng);
  std::vector<int> ids(r);
  for (auto& id : ids) id = static_cast<int>(rng() % 6);
  std::vector<int> tg(r);
  for (auto& id : tg) id = static_cast<int>(rng() % c);
  std::vector<bool> mask(r, true);
  mask[0] = r == 1;

  GradCheckOptions opt;
  opt.samples = 40;
  opt.seed = static_cast<std::uint64_t>(GetParam());
  auto check = [&](const char* what, const std::function<Var(Tape&)>& f, std::vector<Parameter*> ps) {
    auto res = grad_check(f, ps, opt);
    EXPECT_LE(res.max_rel_error, 1e-5) << what << " r=" << r << " c=" << c << " k=" << k;
  };
  check("matmul", [&](Tape& t) { return weighted(t, matmul(t.param(x), t.param(y)), 77); }, {&x, &y});
  check("matmul_nt", [&](Tape& t) { return weighted(t, matmul_nt(t.param(x), t.param(z)), 77); }, {&x, &z});
  check("add", [&](Tape& t) { return weighted(t, add(t.param(x), t.param(z)), 77); }, {&x, &z});
  check("add_bias", [&](Tape& t) { return weighted(t, add_bias(t.param(x), t.param(bias)), 77); }, {&x, &bias});
  check("scale", [&](Tape& t) { return weighted(t, scale(t.param(x), -1.7), 77); }, {&x});
  check("softmax", [&](Tape& t) { return weighted(t, softmax_rows(t.param(x)), 77); }, {&x});
  check("log_softmax", [&](Tape& t) { return weighted(t, log_softmax_rows(t.param(x)), 77); }, {&x});
  check("gelu", [&](Tape& t) { return weighted(t, gelu(t.param(x)), 77); }, {&x});
  check("layer_norm", [&](Tape& t) { return weighted(t, layer_norm(t.param(x), t.param(g), t.param(bias)), 77); },
        {&x, &g, &bias});
  check("embed", [&](Tape& t) { return weighted(t, embed_lookup(t.param(table), ids), 77); }, {&table});
  check("cross_entropy", [&](Tape& t) { return cross_entropy_masked(t.param(x), tg, mask); }, {&x});
  check("concat_rows",
        [&](Tape& t) {
          Var cat = concat_rows(t.param(x), t.param(z));
          return sum(matmul(cat, t.constant(Tensor({c, 1}, 0.3))));
        },
        {&x, &z});
}

INSTANTIATE_TEST_SUITE_P(RandomShapes, OpGradient, ::testing::Range(0, 6));

TEST(Attention, GradientWithMaskAndMultipleHeads) {
  std::mt19937_64 rng(9);
  Parameter q = random_param("q", {3, 8}, rng), k = random_param("k", {5, 8}, rng), v = random_param("v", {5, 8}, rng);
  const std::vector<bool> key_mask{true, true, false, true, true};
  const Tensor w = Tensor::randn({8, 1}, 1.0, rng);
  auto res = grad_check(
      [&](Tape& t) { return sum(matmul(attention(t.param(q), t.param(k), t.param(v), 2, &key_mask), t.constant_ref(w))); },
      {&q, &k, &v});
  EXPECT_LE(res.max_rel_error, 1e-5);
}

TEST(Tape, GradientsAccumulateAcrossUses) {
  Parameter a{"a", Tensor::scalar(2.0)};
  Tape t;
  Var av = t.param(a);
  Var loss = add(scale(av, 3.0), add(av, av));
  t.backward(loss);
  EXPECT_EQ(a.grad[0], 5.0);
}

TEST(Tape, ConstantsReceiveNoGradient) {
  Tensor c = Tensor::scalar(4.0);
  Parameter a{"a", Tensor::scalar(1.0)};
  Tape t;
  Var cv = t.constant_ref(c);
  Var loss = add(scale(cv, 2.0), t.param(a));
  EXPECT_FALSE(cv.requires_grad());
  t.backward(loss);
  EXPECT_EQ(a.grad[0], 1.0);
}

TEST(Determinism, RepeatedForwardIsBitwiseIdentical) {
  std::mt19937_64 rng(11);
  Tensor x = Tensor::randn({7, 16}, 1.0, rng), w = Tensor::randn({16, 16}, 1.0, rng);
  auto run = [&] {
    Tape t;
    Var g = t.constant(Tensor({16}, 1.0)), b = t.constant(Tensor({16}, 0.0));
    return softmax_rows(gelu(layer_norm(matmul(t.constant_ref(x), t.constant_ref(w)), g, b))).value();
  };
  EXPECT_EQ(run(), run());
}

TEST(Adam, WarmupAndClipping) {
  Parameter p{"p", Tensor({2}, 0.0)};
  Adam opt({&p}, {0.1, 0.9, 0.98, 1e-9, 10, 1.0});
  EXPECT_NEAR(opt.current_lr(), 0.01, 1e-15);
  p.grad[0] = 100.0;
  opt.step();
  // First Adam step moves by lr * sign(g) regardless of magnitude.
  EXPECT_NEAR(p.value[0], -0.01, 1e-9);
  EXPECT_EQ(p.value[1], 0.0);
  EXPECT_EQ(p.grad[0], 0.0);
  EXPECT_EQ(opt.steps_taken(), 1u);
}

TEST(Adam, InactiveParametersDoNotMove) {
  Parameter a{"a", Tensor({1}, 1.0)}, b{"b", Tensor({1}, 1.0)};
  Adam opt({&a, &b}, {0.1, 0.9, 0.98, 1e-9, 0, 0.0});
  opt.set_active(&b, false);
  a.grad[0] = b.grad[0] = 1.0;
  opt.step();
  EXPECT_NE(a.value[0], 1.0);
  EXPECT_EQ(b.value[0], 1.0);
  EXPECT_EQ(b.grad[0], 0.0);
}

TEST(Adam, LinearDecayAfterWarmup) {
  Parameter p{"p", Tensor({1}, 0.0)};
  AdamConfig c{1.0, 0.9, 0.98, 1e-9, 10, 0.0};
  c.decay_until = 110;
  c.final_lr_ratio = 0.1;
  Adam opt({&p}, c);
  std::vector<double> lr;
  for (int i = 0; i < 200; ++i) {
    lr.push_back(opt.current_lr());
    p.grad[0] = 1.0;
    opt.step();
  }
  EXPECT_NEAR(lr[4], 0.5, 1e-15);   // step 5 of 10 warmup
  EXPECT_NEAR(lr[9], 1.0, 1e-15);   // peak
  EXPECT_NEAR(lr[59], 0.55, 1e-12);  // halfway through the decay
  EXPECT_NEAR(lr[109], 0.1, 1e-12);
  EXPECT_NEAR(lr[199], 0.1, 1e-12);
  for (std::size_t i = 10; i < lr.size(); ++i) EXPECT_LE(lr[i], lr[i - 1]);
}
