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

#include <filesystem>

#include "oracles.hpp"
#include "sga/harness/train.hpp"

using namespace sga;
using Seqs = std::vector<std::vector<TokenId>>;

namespace {

std::string temp_dir(const std::string& name) {
  const auto d = std::filesystem::temp_directory_path() / name;
  std::filesystem::remove_all(d);
  std::filesystem::create_directories(d);
  return d.string();
}

ModelConfig small_model(std::size_t V) {
  ModelConfig c;
  c.num_layers = 2;
  c.d_model = 16;
  c.num_heads = 2;
  c.d_ff = 32;
  c.vocab_size = V;
  c.max_positions = 48;
  return c;
}

struct SmallSetup {
  tasks::ToyWorld world = tasks::ToyWorld::make(3);
  BackboneParams backbone = BackboneParams::init(small_model(world.vocab_size()), 4);
  std::vector<tasks::ParallelPair> pairs = tasks::gen_parallel_corpus(world.sources[0], world.target, 24, {4, 8}, 5);
  SmallSetup() { backbone.frozen = true; }
  TrainConfig config(AlignMode mode = AlignMode::kCtc) const {
    TrainConfig c;
    c.mode = mode;
    c.steps = 6;
    c.batch = 4;
    c.warmup = 2;
    c.lr = 3e-3;
    c.prompt_lengths = {3, 3, 3};
    return c;
  }
};

}  // namespace

TEST(Bleu, IdenticalCorpusScoresHundred) {
  const Seqs h{{1, 2, 3, 4, 5}, {6, 7, 8, 9}};
  EXPECT_NEAR(metrics::corpus_bleu(h, h), 100.0, 1e-12);
}

TEST(Bleu, HandComputedValue) {
  // p1 = 3/4, p2 = 2/3, p3 = 1/2, p4 = 0/1 smoothed to 1/2, no brevity penalty.
  const double expected = 100.0 * std::pow(0.75 * (2.0 / 3.0) * 0.5 * 0.5, 0.25);
  EXPECT_NEAR(expected, 59.460355750136046, 1e-12);
  EXPECT_NEAR(metrics::corpus_bleu({{1, 2, 3, 4}}, {{1, 2, 3, 3}}), 59.460355750136046, 1e-9);
}

TEST(Bleu, ReferenceValuesFromSacrebleu) {
  // sacrebleu 2.x, tokenize='none', smooth_method='exp'
  EXPECT_NEAR(metrics::corpus_bleu({{1, 2, 3, 4}, {9, 10}}, {{1, 2, 3, 3}, {9, 10, 11}}), 53.21972092465657, 1e-9);
}

TEST(Bleu, ZeroOverlapIsSmallButPositive) {
  std::vector<TokenId> hyp, ref;
  for (int i = 0; i < 30; ++i) {
    hyp.push_back(10 + i);
    ref.push_back(100 + i);
  }
  const double b = metrics::corpus_bleu({hyp}, {ref});
  EXPECT_GT(b, 0.0);
  EXPECT_LT(b, 1.0);
  EXPECT_EQ(metrics::corpus_bleu({{7}}, {{1, 2, 3, 3}}), 0.0);  // no order-2 n-grams at all
}

TEST(Bleu, MatchesIndependentOracle) {
  std::mt19937_64 rng(1);
  for (int trial = 0; trial < 50; ++trial) {
    Seqs h, r;
    const std::size_t n = 1 + rng() % 5;
    for (std::size_t i = 0; i < n; ++i) {
      std::vector<TokenId> a, b;
      const std::size_t la = 1 + rng() % 12, lb = 1 + rng() % 12;
      for (std::size_t k = 0; k < la; ++k) a.push_back(static_cast<TokenId>(rng() % 6));
      for (std::size_t k = 0; k < lb; ++k) b.push_back(static_cast<TokenId>(rng() % 6));
      h.push_back(a);
      r.push_back(b);
    }
    EXPECT_NEAR(metrics::corpus_bleu(h, r), oracle::bleu(h, r), 1e-6) << "trial " << trial;
  }
}

TEST(Bleu, Errors) {
  EXPECT_THROW(metrics::corpus_bleu({}, {}), std::invalid_argument);
  EXPECT_THROW(metrics::corpus_bleu({{1}}, {{1}, {2}}), std::invalid_argument);
}

TEST(TokenMetrics, AccuracyAndExactMatch) {
  const Seqs h{{1, 2, 3}, {4, 5}};
  const Seqs r{{1, 9, 3, 7}, {4, 5}};
  EXPECT_DOUBLE_EQ(metrics::token_accuracy(h, r), 4.0 / 6.0);
  EXPECT_DOUBLE_EQ(metrics::exact_match(h, r), 0.5);
  EXPECT_DOUBLE_EQ(metrics::token_accuracy(r, r), 1.0);
}

TEST(KeyValues, ParseRoundTripAndStrictNumbers) {
  std::istringstream in("# comment\n a = 1 \nb=2.5\nc=true\nname=x y\n");
  KeyValues kv = KeyValues::parse(in);
  std::uint64_t a = 0;
  double b = 0;
  bool c = false;
  std::string name;
  kv.get("a", a);
  kv.get("b", b);
  kv.get("c", c);
  kv.get("name", name);
  EXPECT_EQ(a, 1u);
  EXPECT_EQ(b, 2.5);
  EXPECT_TRUE(c);
  EXPECT_EQ(name, "x y");
  EXPECT_THROW(kv.get("b", a), std::invalid_argument);
  EXPECT_THROW(kv.get("name", b), std::invalid_argument);
  std::istringstream bad("novalue\n");
  EXPECT_THROW(KeyValues::parse(bad), std::runtime_error);
}

TEST(Configs, TrainAndPretrainRoundTrip) {
  TrainConfig t;
  t.mode = AlignMode::kMaskPredict;
  t.lr = 1.0 / 3.0;
  t.noise = {0.2, 0.05, 9};
  t.prompt_lengths = {7, 8, 9};
  t.align_steps = 11;
  t.live_outputs = true;
  KeyValues kv;
  t.to(kv);
  std::istringstream in(kv.str());
  TrainConfig u;
  u.from(KeyValues::parse(in));
  EXPECT_EQ(u.mode, t.mode);
  EXPECT_EQ(u.lr, t.lr);
  EXPECT_EQ(u.noise.p_delete, 0.2);
  EXPECT_EQ(u.noise.seed, 9u);
  EXPECT_EQ(u.prompt_lengths.denoise, 9u);
  EXPECT_EQ(u.align_steps, 11u);
  EXPECT_TRUE(u.live_outputs);

  PretrainConfig p;
  p.mask_rate = 0.3;
  p.anchor_fraction = 0.25;
  KeyValues pk;
  p.to(pk);
  PretrainConfig q;
  q.from(pk);
  EXPECT_EQ(q.mask_rate, 0.3);
  EXPECT_EQ(q.anchor_fraction, 0.25);

  TrainConfig bad;
  bad.noise.p_delete = 0.9;
  bad.noise.p_repeat = 0.2;
  EXPECT_THROW(bad.validate(), std::invalid_argument);
}

TEST(Checkpoint, BackboneRoundTripIsBitwise) {
  const std::string dir = temp_dir("sga_ckpt_backbone");
  BackboneParams p = BackboneParams::init(small_model(30), 6);
  io::snap_to_float32(p);
  p.frozen = true;
  io::save_backbone(dir + "/bb.ckpt", p);
  const BackboneParams q = io::load_backbone(dir + "/bb.ckpt");
  EXPECT_TRUE(q.frozen);
  EXPECT_EQ(q.checksum(), p.checksum());
  const auto a = p.parameters();
  const auto b = const_cast<BackboneParams&>(q).parameters();
  ASSERT_EQ(a.size(), b.size());
  for (std::size_t i = 0; i < a.size(); ++i) EXPECT_EQ(a[i]->value, b[i]->value) << a[i]->name;
}

TEST(Checkpoint, TruncatedBlobRejected) {
  const std::string dir = temp_dir("sga_ckpt_trunc");
  BackboneParams p = BackboneParams::init(small_model(30), 7);
  io::save_backbone(dir + "/bb.ckpt", p);
  const auto blob = io::blob_path(dir + "/bb.ckpt");
  std::filesystem::resize_file(blob, std::filesystem::file_size(blob) - 4);
  EXPECT_THROW(io::load_backbone(dir + "/bb.ckpt"), std::runtime_error);
}

TEST(Checkpoint, PromptConfigMismatchNamesField) {
  SmallSetup s;
  const std::string dir = temp_dir("sga_ckpt_mismatch");
  const TrainResult r = train_sga(s.backbone, s.pairs, s.config());
  io::save_prompts(dir + "/p.ckpt", r.bundle);
  ModelConfig other = s.backbone.config;
  other.d_model = 32;
  other.d_ff = 64;
  try {
    io::load_prompts(dir + "/p.ckpt", other);
    FAIL() << "expected ConfigMismatch";
  } catch (const ConfigMismatch& e) {
    EXPECT_NE(std::string(e.what()).find("d_model"), std::string::npos) << e.what();
  }
}

TEST(TrainSga, SeededRunsAreIdentical) {
  SmallSetup s;
  const TrainResult a = train_sga(s.backbone, s.pairs, s.config());
  const TrainResult b = train_sga(s.backbone, s.pairs, s.config());
  ASSERT_EQ(a.curve.size(), 6u);
  for (std::size_t i = 0; i < a.curve.size(); ++i) {
    EXPECT_EQ(a.curve[i].l1, b.curve[i].l1);
    EXPECT_EQ(a.curve[i].l2, b.curve[i].l2);
  }
  const auto pa = const_cast<PromptSet&>(a.bundle.prompts).parameters();
  const auto pb = const_cast<PromptSet&>(b.bundle.prompts).parameters();
  for (std::size_t i = 0; i < pa.size(); ++i) EXPECT_EQ(pa[i]->value, pb[i]->value);
  EXPECT_EQ(a.bundle.language_tags, (std::vector<TokenId>{s.world.sources[0].tag}));
}

TEST(TrainSga, AlignStepsFreezesAlignmentPrompt) {
  SmallSetup s;
  TrainConfig c = s.config();
  c.steps = 1;
  const TrainResult one = train_sga(s.backbone, s.pairs, c);
  c.steps = 6;
  c.align_steps = 1;
  const TrainResult six = train_sga(s.backbone, s.pairs, c);
  const auto a = const_cast<PromptSet&>(one.bundle.prompts).task.align.layers[0].key.value;
  EXPECT_EQ(six.bundle.prompts.task.align.layers[0].key.value, a);
  EXPECT_NE(six.bundle.prompts.task.denoise.layers[0].key.value, one.bundle.prompts.task.denoise.layers[0].key.value);
}

TEST(TrainSga, RejectsUnfrozenBackbone) {
  SmallSetup s;
  s.backbone.frozen = false;
  EXPECT_THROW(train_sga(s.backbone, s.pairs, s.config()), FrozenViolation);
}

TEST(Evaluate, ReportSurvivesSaveLoadBitwise) {
  for (AlignMode mode : {AlignMode::kCtc, AlignMode::kMaskPredict}) {
    SmallSetup s;
    const std::string dir = temp_dir("sga_eval_roundtrip");
    io::snap_to_float32(s.backbone);
    const TrainResult r = train_sga(s.backbone, s.pairs, s.config(mode));
    io::save_backbone(dir + "/bb.ckpt", s.backbone);
    io::save_prompts(dir + "/p.ckpt", r.bundle);
    const BackboneParams bb = io::load_backbone(dir + "/bb.ckpt");
    const io::PromptBundle pb = io::load_prompts(dir + "/p.ckpt", bb.config);
    EXPECT_EQ(pb.mode, mode);
    EXPECT_EQ(pb.lengths.entries(), r.bundle.lengths.entries());
    EXPECT_EQ(pb.lengths.ratio(), r.bundle.lengths.ratio());
    const EvalOutput a = evaluate(s.backbone, r.bundle, s.pairs, {}, true);
    const EvalOutput b = evaluate(bb, pb, s.pairs, {}, true);
    EXPECT_TRUE(a.report.same_quality(b.report));
    for (std::size_t i = 0; i < a.traces.size(); ++i) EXPECT_EQ(a.traces[i].output(), b.traces[i].output());
  }
}

TEST(Evaluate, ForwardPassAccounting) {
  SmallSetup s;
  const TrainResult r = train_sga(s.backbone, s.pairs, s.config());
  EvalOptions o;
  o.max_loops = 3;
  const EvalOutput e = evaluate(s.backbone, r.bundle, s.pairs, o, true);
  double passes = 0, iters = 0;
  for (const auto& t : e.traces) {
    EXPECT_EQ(t.forward_passes, 2 + t.iterations_used);
    EXPECT_TRUE(t.length_capped || t.converged || t.iterations_used == 3);
    passes += static_cast<double>(t.forward_passes);
    iters += static_cast<double>(t.iterations_used);
  }
  EXPECT_DOUBLE_EQ(e.report.mean_forward_passes, passes / static_cast<double>(s.pairs.size()));
  EXPECT_DOUBLE_EQ(e.report.mean_iterations, iters / static_cast<double>(s.pairs.size()));

  const auto rows = bench_latency(s.backbone, r.bundle, s.pairs, {0, 2});
  EXPECT_DOUBLE_EQ(rows[0].report.mean_forward_passes, 2.0);
  if (rows[1].report.length_capped == 0) EXPECT_DOUBLE_EQ(rows[1].report.mean_forward_passes, 4.0);
}

TEST(Evaluate, FixedBudgetMatchesEarlyStopOutputs) {
  SmallSetup s;
  const TrainResult r = train_sga(s.backbone, s.pairs, s.config());
  EvalOptions stop, fixed;
  fixed.early_stop = false;
  const EvalOutput a = evaluate(s.backbone, r.bundle, s.pairs, stop, true);
  const EvalOutput b = evaluate(s.backbone, r.bundle, s.pairs, fixed, true);
  EXPECT_EQ(a.report.bleu, b.report.bleu);
  for (std::size_t i = 0; i < a.traces.size(); ++i) EXPECT_EQ(a.traces[i].output(), b.traces[i].output());
}

TEST(Reports, WindowMeans) {
  EXPECT_EQ(window_means({1, 2, 3, 4, 5}, 2), (std::vector<double>{1.5, 3.5}));
  EXPECT_TRUE(window_means({1, 2}, 0).empty());
}
