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

// Properties of the models trained by sga_acceptance. Usage: test_trained <artifacts-dir>

#include <gtest/gtest.h>

#include <filesystem>

#include "sga/harness/train.hpp"

using namespace sga;

namespace {

std::string g_dir;

struct Trained : ::testing::Test {
  static void SetUpTestSuite() {
    if (g_dir.empty() || !std::filesystem::exists(g_dir + "/backbone.ckpt")) return;
    backbone = new BackboneParams(io::load_backbone(g_dir + "/backbone.ckpt"));
    backbone->frozen = true;
    bundle = new io::PromptBundle(io::load_prompts(g_dir + "/prompts_sup0.ckpt", backbone->config));
    train = new std::vector<tasks::ParallelPair>(tasks::read_parallel(g_dir + "/sup0.train.tsv"));
    test = new std::vector<tasks::ParallelPair>(tasks::read_parallel(g_dir + "/sup0.test.tsv"));
    train->resize(std::min(train->size(), test->size()));
  }
  void SetUp() override {
    if (!backbone) GTEST_SKIP() << "no acceptance artifacts in '" << g_dir << "'";
  }
  static inline BackboneParams* backbone = nullptr;
  static inline io::PromptBundle* bundle = nullptr;
  static inline std::vector<tasks::ParallelPair>* train = nullptr;
  static inline std::vector<tasks::ParallelPair>* test = nullptr;
};

}  // namespace

TEST_F(Trained, TrainingSetScoresAtLeastTestSet) {
  const EvalReport tr = evaluate(*backbone, *bundle, *train).report;
  const EvalReport te = evaluate(*backbone, *bundle, *test).report;
  EXPECT_GE(tr.token_accuracy, te.token_accuracy);
  EXPECT_GE(tr.bleu, te.bleu);
}

TEST_F(Trained, CheckpointRoundTripReproducesReport) {
  const std::string dir = (std::filesystem::temp_directory_path() / "sga_trained_roundtrip").string();
  io::save_backbone(dir + "/bb.ckpt", *backbone);
  io::save_prompts(dir + "/p.ckpt", *bundle);
  BackboneParams bb = io::load_backbone(dir + "/bb.ckpt");
  bb.frozen = true;
  const io::PromptBundle pb = io::load_prompts(dir + "/p.ckpt", bb.config);
  EXPECT_EQ(bb.checksum(), backbone->checksum());
  const EvalReport a = evaluate(*backbone, *bundle, *test).report;
  const EvalReport b = evaluate(bb, pb, *test).report;
  EXPECT_TRUE(a.same_quality(b));
  EXPECT_EQ(a.bleu, b.bleu);
  std::filesystem::remove_all(dir);
}

TEST_F(Trained, ConvergedTracesAreFixedPoints) {
  const EvalOutput out = evaluate(*backbone, *bundle, *test, {}, true);
  std::size_t converged = 0;
  for (std::size_t i = 0; i < out.traces.size(); ++i) {
    const GenerationTrace& t = out.traces[i];
    EXPECT_LE(t.iterations_used, 4u);
    if (!t.converged) continue;
    ++converged;
    const SemanticStates s = encode_source(*backbone, bundle->prompts.sem, (*test)[i].x);
    EXPECT_EQ(denoise_step(*backbone, s, bundle->prompts.task.denoise, t.output()).tokens, t.output()) << i;
  }
  EXPECT_GT(converged, 0u);
}

TEST_F(Trained, DenoiserKeepsCorrectSequences) {
  std::size_t kept = 0;
  for (const auto& p : *test) {
    const SemanticStates s = encode_source(*backbone, bundle->prompts.sem, p.x);
    kept += denoise_step(*backbone, s, bundle->prompts.task.denoise, p.y).tokens == p.y;
  }
  EXPECT_GE(static_cast<double>(kept), 0.9 * static_cast<double>(test->size()));
}

int main(int argc, char** argv) {
  ::testing::InitGoogleTest(&argc, argv);
  if (argc > 1) g_dir = argv[1];
  return RUN_ALL_TESTS();
}
