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

// Checkpoints are a text manifest plus a blob of little-endian float32 values
// stored in manifest order. The blob lives next to the manifest as <path>.bin.

#include <bit>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>

#include "sga/backbone/backbone.hpp"
#include "sga/core/sga.hpp"
#include "sga/maskpredict/maskpredict.hpp"

namespace sga::io {

inline constexpr const char* kFormat = "sga-checkpoint-1";

/// Ordered key=value text with repeated `tensor` entries.
struct Manifest {
  std::vector<std::pair<std::string, std::string>> entries;
  std::vector<std::pair<std::string, Shape>> tensors;

  void set(const std::string& k, const std::string& v) {
    for (auto& [key, val] : entries)
      if (key == k) {
        val = v;
        return;
      }
    entries.emplace_back(k, v);
  }
  bool has(const std::string& k) const {
    return std::any_of(entries.begin(), entries.end(), [&](const auto& e) { return e.first == k; });
  }
  const std::string& get(const std::string& k) const {
    for (const auto& [key, val] : entries)
      if (key == k) return val;
    throw std::runtime_error("checkpoint manifest lacks field '" + k + "'");
  }
  std::size_t get_size(const std::string& k) const { return static_cast<std::size_t>(std::stoull(get(k))); }
};

inline std::string shape_to_field(const Shape& s) {
  std::string out;
  for (std::size_t i = 0; i < s.size(); ++i) out += (i ? "x" : "") + std::to_string(s[i]);
  return out.empty() ? "scalar" : out;
}

inline Shape shape_from_field(const std::string& f) {
  if (f == "scalar") return {};
  Shape s;
  std::stringstream ss(f);
  std::string part;
  while (std::getline(ss, part, 'x')) s.push_back(static_cast<std::size_t>(std::stoull(part)));
  return s;
}

inline std::string blob_path(const std::string& manifest_path) { return manifest_path + ".bin"; }

inline void write_checkpoint(const std::string& path, Manifest m, const std::vector<const Parameter*>& params) {
  static_assert(std::endian::native == std::endian::little, "checkpoint IO assumes a little-endian host");
  const auto parent = std::filesystem::path(path).parent_path();
  if (!parent.empty()) std::filesystem::create_directories(parent);
  m.tensors.clear();
  for (const Parameter* p : params) m.tensors.emplace_back(p->name, p->value.shape());

  std::ofstream mf(path);
  if (!mf) throw std::runtime_error("cannot write " + path);
  mf << "format=" << kFormat << '\n';
  for (const auto& [k, v] : m.entries) mf << k << '=' << v << '\n';
  mf << "blob=" << std::filesystem::path(blob_path(path)).filename().string() << '\n';
  for (const auto& [name, shape] : m.tensors) mf << "tensor=" << name << ' ' << shape_to_field(shape) << '\n';

  std::ofstream bf(blob_path(path), std::ios::binary);
  if (!bf) throw std::runtime_error("cannot write " + blob_path(path));
  for (const Parameter* p : params)
    for (double v : p->value.data()) {
      const float f = static_cast<float>(v);
      bf.write(reinterpret_cast<const char*>(&f), sizeof f);
    }
  if (!bf) throw std::runtime_error("write failed for " + blob_path(path));
}

struct LoadedCheckpoint {
  Manifest manifest;
  std::map<std::string, Tensor> tensors;
};

inline LoadedCheckpoint read_checkpoint(const std::string& path) {
  std::ifstream mf(path);
  if (!mf) throw std::runtime_error("cannot read " + path);
  LoadedCheckpoint out;
  std::string line;
  bool format_ok = false;
  while (std::getline(mf, line)) {
    if (line.empty() || line[0] == '#') continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw std::runtime_error(path + ": malformed line '" + line + "'");
    const std::string k = line.substr(0, eq), v = line.substr(eq + 1);
    if (k == "format") {
      if (v != kFormat) throw std::runtime_error(path + ": unsupported format '" + v + "'");
      format_ok = true;
    } else if (k == "tensor") {
      const auto sp = v.find(' ');
      if (sp == std::string::npos) throw std::runtime_error(path + ": malformed tensor line '" + line + "'");
      out.manifest.tensors.emplace_back(v.substr(0, sp), shape_from_field(v.substr(sp + 1)));
    } else if (k != "blob") {
      out.manifest.entries.emplace_back(k, v);
    }
  }
  if (!format_ok) throw std::runtime_error(path + ": missing format line");

  std::ifstream bf(blob_path(path), std::ios::binary);
  if (!bf) throw std::runtime_error("cannot read " + blob_path(path));
  for (const auto& [name, shape] : out.manifest.tensors) {
    const std::size_t n = shape_numel(shape);
    std::vector<float> buf(n);
    bf.read(reinterpret_cast<char*>(buf.data()), static_cast<std::streamsize>(n * sizeof(float)));
    if (!bf) throw std::runtime_error(blob_path(path) + ": truncated while reading " + name);
    out.tensors.emplace(name, Tensor(shape, std::vector<double>(buf.begin(), buf.end())));
  }
  bf.peek();
  if (!bf.eof()) throw std::runtime_error(blob_path(path) + ": trailing bytes");
  return out;
}

/// Rounds every value to float32 so that a save/load cycle is exact.
template <class Params>
void snap_to_float32(Params& params) {
  params.for_each([](Parameter& p) {
    for (double& v : p.value.data()) v = static_cast<double>(static_cast<float>(v));
  });
}

inline void put_config(Manifest& m, const ModelConfig& c) {
  m.set("config.num_layers", std::to_string(c.num_layers));
  m.set("config.d_model", std::to_string(c.d_model));
  m.set("config.num_heads", std::to_string(c.num_heads));
  m.set("config.d_ff", std::to_string(c.d_ff));
  m.set("config.vocab_size", std::to_string(c.vocab_size));
  m.set("config.max_positions", std::to_string(c.max_positions));
}

inline ModelConfig get_config(const Manifest& m) {
  ModelConfig c;
  c.num_layers = m.get_size("config.num_layers");
  c.d_model = m.get_size("config.d_model");
  c.num_heads = m.get_size("config.num_heads");
  c.d_ff = m.get_size("config.d_ff");
  c.vocab_size = m.get_size("config.vocab_size");
  c.max_positions = m.get_size("config.max_positions");
  return c;
}

/// Throws ConfigMismatch naming the first differing field.
inline void require_same_config(const ModelConfig& expected, const ModelConfig& got, const std::string& what) {
  auto chk = [&](const char* field, std::size_t a, std::size_t b) {
    if (a != b)
      throw ConfigMismatch(what + ": config field '" + field + "' is " + std::to_string(b) + ", expected " +
                           std::to_string(a));
  };
  chk("num_layers", expected.num_layers, got.num_layers);
  chk("d_model", expected.d_model, got.d_model);
  chk("num_heads", expected.num_heads, got.num_heads);
  chk("d_ff", expected.d_ff, got.d_ff);
  chk("vocab_size", expected.vocab_size, got.vocab_size);
  chk("max_positions", expected.max_positions, got.max_positions);
}

namespace detail {

template <class Params>
void fill_params(Params& params, const LoadedCheckpoint& ck, const std::string& path) {
  std::size_t used = 0;
  params.for_each([&](Parameter& p) {
    auto it = ck.tensors.find(p.name);
    if (it == ck.tensors.end()) throw std::runtime_error(path + ": missing tensor '" + p.name + "'");
    if (it->second.shape() != p.value.shape())
      throw DimensionError(path + ": tensor '" + p.name + "' has shape " + shape_str(it->second.shape()) +
                           ", expected " + shape_str(p.value.shape()));
    p.value = it->second;
    p.zero_grad();
    ++used;
  });
  if (used != ck.tensors.size())
    throw std::runtime_error(path + ": " + std::to_string(ck.tensors.size() - used) + " unexpected tensors");
}

}  // namespace detail

inline void save_backbone(const std::string& path, const BackboneParams& params) {
  Manifest m;
  m.set("kind", "backbone");
  put_config(m, params.config);
  m.set("frozen", params.frozen ? "1" : "0");
  std::vector<const Parameter*> ps;
  params.for_each([&](const Parameter& p) { ps.push_back(&p); });
  write_checkpoint(path, m, ps);
}

inline BackboneParams load_backbone(const std::string& path) {
  const LoadedCheckpoint ck = read_checkpoint(path);
  if (ck.manifest.get("kind") != "backbone")
    throw std::runtime_error(path + ": not a backbone checkpoint (kind=" + ck.manifest.get("kind") + ")");
  BackboneParams p = BackboneParams::init(get_config(ck.manifest), 0);
  detail::fill_params(p, ck, path);
  p.frozen = ck.manifest.get("frozen") == "1";
  return p;
}

/// A prompt set plus what is needed to use it: the languages it serves, the
/// alignment mode it was trained for and (mask-predict) the target length table.
struct PromptBundle {
  PromptSet prompts;
  ModelConfig config;
  AlignMode mode = AlignMode::kCtc;
  std::vector<TokenId> language_tags;
  mp::LengthTable lengths;
};

inline void save_prompts(const std::string& path, const PromptBundle& b) {
  Manifest m;
  m.set("kind", "prompts");
  put_config(m, b.config);
  m.set("mode", to_string(b.mode));
  m.set("prompt.source_length", std::to_string(b.prompts.sem.source.length()));
  m.set("prompt.align_length", std::to_string(b.prompts.task.align.length()));
  m.set("prompt.denoise_length", std::to_string(b.prompts.task.denoise.length()));
  std::string tags;
  for (std::size_t i = 0; i < b.language_tags.size(); ++i) tags += (i ? " " : "") + std::to_string(b.language_tags[i]);
  m.set("languages", tags);
  std::ostringstream ratio;
  ratio.precision(17);
  ratio << b.lengths.ratio();
  m.set("length_table.ratio", ratio.str());
  std::string table;
  for (const auto& [s, t] : b.lengths.entries()) table += (table.empty() ? "" : " ") + std::to_string(s) + ":" + std::to_string(t);
  m.set("length_table", table);
  std::vector<const Parameter*> ps;
  b.prompts.for_each([&](const Parameter& p) { ps.push_back(&p); });
  write_checkpoint(path, m, ps);
}

/// Loads a prompt checkpoint; throws ConfigMismatch if it was trained for a different backbone shape.
inline PromptBundle load_prompts(const std::string& path, const ModelConfig& backbone_config) {
  const LoadedCheckpoint ck = read_checkpoint(path);
  const Manifest& m = ck.manifest;
  if (m.get("kind") != "prompts")
    throw std::runtime_error(path + ": not a prompt checkpoint (kind=" + m.get("kind") + ")");
  PromptBundle b;
  b.config = get_config(m);
  require_same_config(backbone_config, b.config, path);
  b.mode = align_mode_from_string(m.get("mode"));
  b.prompts = PromptSet::init(
      b.config, {m.get_size("prompt.source_length"), m.get_size("prompt.align_length"), m.get_size("prompt.denoise_length")},
      0);
  detail::fill_params(b.prompts, ck, path);
  std::istringstream tags(m.get("languages"));
  for (TokenId t; tags >> t;) b.language_tags.push_back(t);
  b.lengths.set_ratio(std::stod(m.get("length_table.ratio")));
  std::istringstream table(m.get("length_table"));
  for (std::string e; table >> e;) {
    const auto c = e.find(':');
    if (c == std::string::npos) throw std::runtime_error(path + ": bad length_table entry '" + e + "'");
    b.lengths.set(std::stoull(e.substr(0, c)), std::stoull(e.substr(c + 1)));
  }
  return b;
}

}  // namespace sga::io
