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

// sga: command-line front end for corpus generation, pretraining, prompt
// training, generation, evaluation, benchmarking and trace inspection.

#include <CLI11.hpp>

#include <filesystem>
#include <iostream>

#include "sga/sga.hpp"

using namespace sga;

namespace {

struct WorldArgs {
  std::uint64_t seed = 1;
  std::size_t supervised = 8;
  std::size_t transfer = 2;
  std::size_t concepts = 24;
  std::string reorder = "identity";

  tasks::ToyWorld make() const {
    return tasks::ToyWorld::make(seed, supervised, transfer, concepts, tasks::reorder_from_string(reorder));
  }
  void to(KeyValues& kv) const {
    kv.set("world.seed", seed);
    kv.set("world.supervised", supervised);
    kv.set("world.transfer", transfer);
    kv.set("world.concepts", concepts);
    kv.set("world.reorder", reorder);
  }
  void from(const KeyValues& kv) {
    kv.get("world.seed", seed);
    kv.get("world.supervised", supervised);
    kv.get("world.transfer", transfer);
    kv.get("world.concepts", concepts);
    kv.get("world.reorder", reorder);
  }
};

std::optional<tasks::ToyWorld> load_world(const std::string& path) {
  if (path.empty()) return std::nullopt;
  WorldArgs w;
  w.from(KeyValues::load(path));
  return w.make();
}

void print_progress(const char* what, std::size_t step, const std::vector<double>& losses) {
  std::cerr << what << " step " << step;
  for (double l : losses) std::cerr << ' ' << l;
  std::cerr << '\n';
}

void add_model_flags(CLI::App* app, ModelConfig& c) {
  app->add_option("--layers", c.num_layers, "transformer layers");
  app->add_option("--d-model", c.d_model, "hidden size");
  app->add_option("--heads", c.num_heads, "attention heads");
  app->add_option("--d-ff", c.d_ff, "feed-forward size");
  app->add_option("--max-positions", c.max_positions, "position table size");
}

std::vector<tasks::ParallelPair> read_all(const std::vector<std::string>& files, const tasks::ToyWorld* w) {
  std::vector<tasks::ParallelPair> out;
  for (const auto& f : files) {
    auto part = tasks::read_parallel(f, w);
    out.insert(out.end(), part.begin(), part.end());
  }
  return out;
}

struct Loaded {
  BackboneParams backbone;
  io::PromptBundle bundle;
};

Loaded load_models(const std::string& bb, const std::string& prompts) {
  Loaded l{io::load_backbone(bb), {}};
  l.backbone.frozen = true;
  l.bundle = io::load_prompts(prompts, l.backbone.config);
  return l;
}

std::string ids(const TokenSeq& s) { return tasks::join_ids(s.span()); }

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"SGA toy-scale trainer and evaluator"};
  app.require_subcommand(1);

  // ---- gen-corpus ----
  WorldArgs world;
  std::string corpus_dir;
  std::size_t n_train = 2000, n_dev = 100, n_test = 200, mlm_size = 20000;
  std::size_t min_len = 4, max_len = 10, mlm_min = 4, mlm_max = 16;
  double blank_filler = 0.05;
  std::uint64_t corpus_seed = 7;
  auto* gen = app.add_subcommand("gen-corpus", "write the toy world, monolingual and parallel corpora");
  gen->add_option("--out", corpus_dir, "output directory")->required();
  gen->add_option("--world-seed", world.seed);
  gen->add_option("--supervised", world.supervised);
  gen->add_option("--transfer", world.transfer);
  gen->add_option("--concepts", world.concepts);
  gen->add_option("--reorder", world.reorder)->check(CLI::IsMember({"identity", "swap-pairs", "random-pairs"}));
  gen->add_option("--seed", corpus_seed);
  gen->add_option("--train", n_train);
  gen->add_option("--dev", n_dev);
  gen->add_option("--test", n_test);
  gen->add_option("--min-len", min_len);
  gen->add_option("--max-len", max_len);
  gen->add_option("--mlm-size", mlm_size);
  gen->add_option("--mlm-min-len", mlm_min);
  gen->add_option("--mlm-max-len", mlm_max);
  gen->add_option("--blank-filler", blank_filler, "rate of blank tokens inserted into the monolingual corpus");

  // ---- pretrain ----
  ModelConfig model;
  PretrainConfig pcfg;
  std::string config_file, mono_file, out_file, world_file;
  auto* pre = app.add_subcommand("pretrain", "MLM-pretrain a backbone on a monolingual corpus");
  pre->add_option("--corpus", mono_file, "monolingual corpus (one id sequence per line)")->required();
  pre->add_option("--world", world_file, "world.kv; sets vocab size and anchors");
  pre->add_option("--vocab-size", model.vocab_size);
  pre->add_option("--config", config_file, "key=value file (model.* and pretrain keys)");
  pre->add_option("--out", out_file, "backbone checkpoint")->required();
  add_model_flags(pre, model);
  pre->add_option("--steps", pcfg.steps);
  pre->add_option("--batch", pcfg.batch);
  pre->add_option("--lr", pcfg.lr);
  pre->add_option("--warmup", pcfg.warmup);
  pre->add_option("--mask-rate", pcfg.mask_rate);
  pre->add_option("--seed", pcfg.seed);
  pre->add_option("--anchor-fraction", pcfg.anchor_fraction);

  // ---- train-sga ----
  TrainConfig tcfg;
  std::string backbone_file, mode = "ctc", curve_file;
  std::vector<std::string> train_files;
  auto* tr = app.add_subcommand("train-sga", "train SGA prompts on a frozen backbone");
  tr->add_option("--backbone", backbone_file)->required();
  tr->add_option("--train", train_files, "parallel corpus file(s); several files give shared prompts")->required();
  tr->add_option("--config", config_file, "key=value TrainConfig file");
  tr->add_option("--out", out_file, "prompt checkpoint")->required();
  tr->add_option("--curve", curve_file, "write per-step losses (step l1 l2)");
  tr->add_option("--mode", mode)->check(CLI::IsMember({"ctc", "mask-predict"}));
  tr->add_option("--steps", tcfg.steps);
  tr->add_option("--batch", tcfg.batch);
  tr->add_option("--lr", tcfg.lr);
  tr->add_option("--warmup", tcfg.warmup);
  tr->add_option("--clip-norm", tcfg.clip_norm);
  tr->add_option("--seed", tcfg.seed);
  tr->add_option("--p-delete", tcfg.noise.p_delete);
  tr->add_option("--p-repeat", tcfg.noise.p_repeat);
  tr->add_option("--noise-seed", tcfg.noise.seed);
  tr->add_option("--source-prompt", tcfg.prompt_lengths.source);
  tr->add_option("--align-prompt", tcfg.prompt_lengths.align);
  tr->add_option("--denoise-prompt", tcfg.prompt_lengths.denoise);
  tr->add_option("--prompt-init-std", tcfg.prompt_init_std);
  tr->add_option("--align-steps", tcfg.align_steps, "stop updating the alignment prompt after this step (0: never)");
  tr->add_flag("--lr-decay", tcfg.lr_decay, "decay the learning rate linearly to 5% of the peak");
  tr->add_flag("--live-outputs", tcfg.live_outputs, "train the denoiser on the model's own alignment outputs");

  // ---- generate / eval / bench / inspect-trace ----
  std::string prompts_file, input_file, test_file, report_file;
  std::size_t max_loops = 4, mp_iters = 4, limit = 20;
  bool fixed_budget = true;
  std::vector<std::size_t> loops{0, 2, 4, 8};
  auto add_inference = [&](CLI::App* a) {
    a->add_option("--backbone", backbone_file)->required();
    a->add_option("--prompts", prompts_file)->required();
    a->add_option("--max-loops", max_loops);
    a->add_option("--mp-iterations", mp_iters);
  };
  auto* genr = app.add_subcommand("generate", "translate source id sequences (one per line, tag first)");
  add_inference(genr);
  genr->add_option("--input", input_file, "input file; '-' reads stdin")->required();
  auto* ev = app.add_subcommand("eval", "evaluate on a parallel test file");
  add_inference(ev);
  ev->add_option("--test", test_file)->required();
  ev->add_option("--world", world_file, "world.kv; accept every valid ordering as an exact match");
  ev->add_option("--report", report_file, "key=value report file");
  auto* be = app.add_subcommand("bench", "latency and quality per max_loops budget");
  add_inference(be);
  be->add_option("--test", test_file)->required();
  be->add_option("--world", world_file);
  be->add_option("--loops", loops);
  be->add_option("--fixed-budget", fixed_budget, "run every loop (true) or stop at the fixed point (false)");
  be->add_option("--report", report_file);
  auto* ins = app.add_subcommand("inspect-trace", "dump the generation trace of each sentence");
  add_inference(ins);
  ins->add_option("--test", test_file)->required();
  ins->add_option("--limit", limit, "sentences to dump (0: all)");

  CLI11_PARSE(app, argc, argv);

  try {
    if (*gen) {
      const tasks::ToyWorld w = world.make();
      std::filesystem::create_directories(corpus_dir);
      KeyValues kv;
      world.to(kv);
      kv.set("vocab_size", static_cast<std::uint64_t>(w.vocab_size()));
      kv.save(corpus_dir + "/world.kv");
      tasks::write_mono(corpus_dir + "/mono.txt", tasks::gen_mlm_corpus(w, mlm_size, corpus_seed, {mlm_min, mlm_max}, blank_filler));
      std::uint64_t s = corpus_seed;
      for (const auto* l : w.all_languages()) {
        if (l == &w.target) continue;
        const auto sp = tasks::make_splits(*l, w.target, n_train, n_dev, n_test, {min_len, max_len}, ++s);
        tasks::write_parallel(corpus_dir + "/" + l->name + ".train.tsv", sp.train);
        tasks::write_parallel(corpus_dir + "/" + l->name + ".dev.tsv", sp.dev);
        tasks::write_parallel(corpus_dir + "/" + l->name + ".test.tsv", sp.test);
      }
      std::cout << "wrote corpora for " << w.sources.size() << " languages to " << corpus_dir << " (vocab "
                << w.vocab_size() << ")\n";
    } else if (*pre) {
      std::optional<tasks::ToyWorld> w = load_world(world_file);
      ModelConfig c = model;
      PretrainConfig p = pcfg;
      if (!config_file.empty()) {
        const KeyValues kv = KeyValues::load(config_file);
        from_kv(kv, c);
        p.from(kv);
      }
      if (w) c.vocab_size = w->vocab_size();
      c.validate();
      BackboneParams params = BackboneParams::init(c, p.seed);
      if (w && p.anchor_fraction > 0.0) {
        std::mt19937_64 rng(p.seed + 1);
        tasks::anchor_embeddings(*w, params.tok_emb.value, 0.1, p.anchor_fraction, rng);
      }
      pretrain(params, tasks::read_mono(mono_file), p,
               [](std::size_t s, const std::vector<double>& l) { print_progress("pretrain", s, l); });
      io::snap_to_float32(params);
      params.frozen = true;
      io::save_backbone(out_file, params);
      std::cout << "saved backbone to " << out_file << '\n';
    } else if (*tr) {
      TrainConfig c = tcfg;
      if (!config_file.empty()) c.from(KeyValues::load(config_file));
      if (tr->count("--mode")) c.mode = align_mode_from_string(mode);
      c.shared = train_files.size() > 1;
      BackboneParams bb = io::load_backbone(backbone_file);
      bb.frozen = true;
      const auto pairs = read_all(train_files, nullptr);
      TrainResult r = train_sga(bb, pairs, c, nullptr,
                                [](std::size_t s, const std::vector<double>& l) { print_progress("train", s, l); });
      io::save_prompts(out_file, r.bundle);
      if (!curve_file.empty()) {
        std::ofstream f(curve_file);
        f.precision(17);
        for (std::size_t i = 0; i < r.curve.size(); ++i) f << i + 1 << '\t' << r.curve[i].l1 << '\t' << r.curve[i].l2 << '\n';
      }
      std::cout << "saved prompts to " << out_file << '\n';
    } else if (*genr) {
      Loaded m = load_models(backbone_file, prompts_file);
      std::ifstream file;
      if (input_file != "-") {
        file.open(input_file);
        if (!file) throw std::runtime_error("cannot read " + input_file);
      }
      std::istream& in = input_file == "-" ? std::cin : file;
      EvalOptions o{max_loops, mp_iters, true, nullptr};
      for (std::string line; std::getline(in, line);) {
        if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
        const TokenSeq x{tasks::parse_ids(line), 0};
        std::cout << ids(generate(m.backbone, m.bundle.prompts, x, generate_options(m.bundle, x, o)).output()) << '\n';
      }
    } else if (*ev) {
      Loaded m = load_models(backbone_file, prompts_file);
      std::optional<tasks::ToyWorld> w = load_world(world_file);
      EvalOptions o{max_loops, mp_iters, true, w ? &*w : nullptr};
      const EvalReport r = evaluate(m.backbone, m.bundle, tasks::read_parallel(test_file), o).report;
      std::cout << format_report(r);
      if (!report_file.empty()) {
        KeyValues kv;
        to_kv(kv, r);
        kv.save(report_file);
      }
    } else if (*be) {
      Loaded m = load_models(backbone_file, prompts_file);
      std::optional<tasks::ToyWorld> w = load_world(world_file);
      const auto rows = bench_latency(m.backbone, m.bundle, tasks::read_parallel(test_file), loops, fixed_budget,
                                      w ? &*w : nullptr, mp_iters);
      std::cout << format_bench(rows);
      if (!report_file.empty()) bench_kv(rows).save(report_file);
    } else if (*ins) {
      Loaded m = load_models(backbone_file, prompts_file);
      const auto pairs = tasks::read_parallel(test_file);
      EvalOptions o{max_loops, mp_iters, true, nullptr};
      const std::size_t n = limit ? std::min(limit, pairs.size()) : pairs.size();
      for (std::size_t i = 0; i < n; ++i) {
        const auto& p = pairs[i];
        const GenerationTrace t = generate(m.backbone, m.bundle.prompts, p.x, generate_options(m.bundle, p.x, o));
        std::cout << "sentence " << i << '\n'
                  << "  source    " << ids(p.x) << '\n'
                  << "  reference " << ids(p.y) << '\n'
                  << "  T0        " << ids(t.t0) << '\n';
        for (std::size_t k = 0; k < t.steps.size(); ++k)
          std::cout << "  T" << k + 1 << std::string(k + 1 < 10 ? 8 : 7, ' ') << ids(t.steps[k]) << '\n';
        std::cout << "  converged " << (t.converged ? "yes" : "no") << "  iterations " << t.iterations_used
                  << "  passes " << t.forward_passes << "  degenerate " << t.degenerate
                  << (t.length_capped ? "  length-capped" : "") << "  exact " << (t.output() == p.y ? "yes" : "no")
                  << '\n';
      }
    }
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
  return 0;
}
