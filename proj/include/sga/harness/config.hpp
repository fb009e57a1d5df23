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

#include <cctype>
#include <fstream>
#include <map>
#include <sstream>
#include <string>

#include "sga/backbone/backbone.hpp"
#include "sga/core/sga.hpp"

namespace sga {

/// Flat key=value text; '#' starts a comment line.
class KeyValues {
 public:
  static KeyValues parse(std::istream& in, const std::string& origin = "<config>") {
    KeyValues kv;
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
      ++lineno;
      const auto first = line.find_first_not_of(" \t\r");
      if (first == std::string::npos || line[first] == '#') continue;
      const auto eq = line.find('=');
      if (eq == std::string::npos)
        throw std::runtime_error(origin + ":" + std::to_string(lineno) + ": expected key=value");
      kv.set(trim(line.substr(0, eq)), trim(line.substr(eq + 1)));
    }
    return kv;
  }
  static KeyValues load(const std::string& path) {
    std::ifstream f(path);
    if (!f) throw std::runtime_error("cannot read " + path);
    return parse(f, path);
  }
  void save(const std::string& path) const {
    std::ofstream f(path);
    if (!f) throw std::runtime_error("cannot write " + path);
    f << str();
  }
  std::string str() const {
    std::string out;
    for (const auto& [k, v] : items_) out += k + "=" + v + "\n";
    return out;
  }

  void set(const std::string& k, const std::string& v) {
    for (auto& [key, val] : items_)
      if (key == k) {
        val = v;
        return;
      }
    items_.emplace_back(k, v);
  }
  void set(const std::string& k, double v) {
    std::ostringstream os;
    os.precision(17);
    os << v;
    set(k, os.str());
  }
  void set(const std::string& k, std::uint64_t v) { set(k, std::to_string(v)); }
  void set(const std::string& k, bool v) { set(k, std::string(v ? "true" : "false")); }

  const std::string* find(const std::string& k) const {
    for (const auto& [key, val] : items_)
      if (key == k) return &val;
    return nullptr;
  }
  const std::vector<std::pair<std::string, std::string>>& items() const { return items_; }

  void get(const std::string& k, std::string& out) const {
    if (auto* v = find(k)) out = *v;
  }
  void get(const std::string& k, double& out) const {
    if (auto* v = find(k)) out = number(k, *v);
  }
  void get(const std::string& k, std::uint64_t& out) const {
    if (auto* v = find(k)) {
      std::size_t used = 0;
      bool ok = !v->empty() && std::isdigit(static_cast<unsigned char>((*v)[0]));
      if (ok) {
        try {
          out = std::stoull(*v, &used);
        } catch (const std::exception&) {
          ok = false;
        }
      }
      if (!ok || used != v->size()) throw std::invalid_argument("config key '" + k + "' must be a whole number: " + *v);
    }
  }
  void get(const std::string& k, bool& out) const {
    if (auto* v = find(k)) {
      if (*v == "true" || *v == "1") out = true;
      else if (*v == "false" || *v == "0") out = false;
      else throw std::invalid_argument("config key '" + k + "' must be true or false");
    }
  }

 private:
  static std::string trim(const std::string& s) {
    const auto a = s.find_first_not_of(" \t\r");
    if (a == std::string::npos) return "";
    return s.substr(a, s.find_last_not_of(" \t\r") - a + 1);
  }
  static double number(const std::string& k, const std::string& v) {
    std::size_t used = 0;
    double d = 0;
    try {
      d = std::stod(v, &used);
    } catch (const std::exception&) {
      used = 0;
    }
    if (used != v.size() || v.empty()) throw std::invalid_argument("config key '" + k + "' is not a number: " + v);
    return d;
  }

  std::vector<std::pair<std::string, std::string>> items_;
};

inline void to_kv(KeyValues& kv, const ModelConfig& c, const std::string& pre = "model.") {
  kv.set(pre + "num_layers", c.num_layers);
  kv.set(pre + "d_model", c.d_model);
  kv.set(pre + "num_heads", c.num_heads);
  kv.set(pre + "d_ff", c.d_ff);
  kv.set(pre + "vocab_size", c.vocab_size);
  kv.set(pre + "max_positions", c.max_positions);
}

inline void from_kv(const KeyValues& kv, ModelConfig& c, const std::string& pre = "model.") {
  kv.get(pre + "num_layers", c.num_layers);
  kv.get(pre + "d_model", c.d_model);
  kv.get(pre + "num_heads", c.num_heads);
  kv.get(pre + "d_ff", c.d_ff);
  kv.get(pre + "vocab_size", c.vocab_size);
  kv.get(pre + "max_positions", c.max_positions);
}

/// MLM pretraining schedule.
struct PretrainConfig {
  std::size_t steps = 3000;
  std::size_t batch = 16;
  double lr = 3e-4;
  std::size_t warmup = 500;
  double mask_rate = 0.15;
  std::uint64_t seed = 1;
  std::size_t corpus_size = 20000;
  std::size_t min_len = 4;
  std::size_t max_len = 24;
  /// Fraction of each content embedding shared across languages at init; 0 disables.
  double anchor_fraction = 0.0;

  void validate() const {
    if (steps == 0 || batch == 0 || corpus_size == 0) throw std::invalid_argument("pretrain steps/batch/corpus must be positive");
    if (lr <= 0.0) throw std::invalid_argument("pretrain lr must be positive");
    if (mask_rate < 0.0 || mask_rate > 1.0) throw std::invalid_argument("mask_rate must lie in [0,1]");
    if (anchor_fraction < 0.0 || anchor_fraction > 1.0) throw std::invalid_argument("anchor_fraction must lie in [0,1]");
  }
  void to(KeyValues& kv) const {
    kv.set("pretrain.steps", steps);
    kv.set("pretrain.batch", batch);
    kv.set("pretrain.lr", lr);
    kv.set("pretrain.warmup", warmup);
    kv.set("pretrain.mask_rate", mask_rate);
    kv.set("pretrain.seed", seed);
    kv.set("pretrain.corpus_size", corpus_size);
    kv.set("pretrain.min_len", min_len);
    kv.set("pretrain.max_len", max_len);
    kv.set("pretrain.anchor_fraction", anchor_fraction);
  }
  void from(const KeyValues& kv) {
    kv.get("pretrain.steps", steps);
    kv.get("pretrain.batch", batch);
    kv.get("pretrain.lr", lr);
    kv.get("pretrain.warmup", warmup);
    kv.get("pretrain.mask_rate", mask_rate);
    kv.get("pretrain.seed", seed);
    kv.get("pretrain.corpus_size", corpus_size);
    kv.get("pretrain.min_len", min_len);
    kv.get("pretrain.max_len", max_len);
    kv.get("pretrain.anchor_fraction", anchor_fraction);
  }
};

/// Prompt-training schedule and inference defaults.
struct TrainConfig {
  AlignMode mode = AlignMode::kCtc;
  std::size_t steps = 2000;
  std::size_t batch = 64;
  double lr = 7e-4;
  std::size_t warmup = 200;
  /// Linear lr decay to 5% of the peak over the run.
  bool lr_decay = false;
  double clip_norm = 1.0;
  std::uint64_t seed = 1;
  NoiseSpec noise{};
  PromptSet::Lengths prompt_lengths{};
  double prompt_init_std = 0.1;
  std::size_t max_loops = 4;
  std::size_t mp_iterations = 4;
  bool shared = false;
  /// Steps during which the alignment prompt is updated; 0 means all steps.
  std::size_t align_steps = 0;
  bool live_outputs = false;

  void validate() const {
    if (steps == 0 || batch == 0) throw std::invalid_argument("steps and batch must be positive");
    if (lr <= 0.0) throw std::invalid_argument("lr must be positive");
    if (mp_iterations == 0) throw std::invalid_argument("mp_iterations must be positive");
    if (prompt_lengths.source == 0 || prompt_lengths.align == 0 || prompt_lengths.denoise == 0)
      throw std::invalid_argument("prompt lengths must be positive");
    noise.validate();
  }
  void to(KeyValues& kv) const {
    kv.set("mode", to_string(mode));
    kv.set("steps", steps);
    kv.set("batch", batch);
    kv.set("lr", lr);
    kv.set("warmup", warmup);
    kv.set("lr_decay", lr_decay);
    kv.set("clip_norm", clip_norm);
    kv.set("seed", seed);
    kv.set("noise.p_delete", noise.p_delete);
    kv.set("noise.p_repeat", noise.p_repeat);
    kv.set("noise.seed", noise.seed);
    kv.set("prompt.source_length", prompt_lengths.source);
    kv.set("prompt.align_length", prompt_lengths.align);
    kv.set("prompt.denoise_length", prompt_lengths.denoise);
    kv.set("prompt.init_std", prompt_init_std);
    kv.set("max_loops", max_loops);
    kv.set("mp_iterations", mp_iterations);
    kv.set("shared", shared);
    kv.set("align_steps", align_steps);
    kv.set("live_outputs", live_outputs);
  }
  void from(const KeyValues& kv) {
    std::string m = to_string(mode);
    kv.get("mode", m);
    mode = align_mode_from_string(m);
    kv.get("steps", steps);
    kv.get("batch", batch);
    kv.get("lr", lr);
    kv.get("warmup", warmup);
    kv.get("lr_decay", lr_decay);
    kv.get("clip_norm", clip_norm);
    kv.get("seed", seed);
    kv.get("noise.p_delete", noise.p_delete);
    kv.get("noise.p_repeat", noise.p_repeat);
    kv.get("noise.seed", noise.seed);
    kv.get("prompt.source_length", prompt_lengths.source);
    kv.get("prompt.align_length", prompt_lengths.align);
    kv.get("prompt.denoise_length", prompt_lengths.denoise);
    kv.get("prompt.init_std", prompt_init_std);
    kv.get("max_loops", max_loops);
    kv.get("mp_iterations", mp_iterations);
    kv.get("shared", shared);
    kv.get("align_steps", align_steps);
    kv.get("live_outputs", live_outputs);
  }
};

}  // namespace sga
