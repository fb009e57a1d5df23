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

#include <functional>
#include <random>

#include "sga/numerics/tape.hpp"

namespace sga {

struct GradCheckOptions {
  double step = 1e-5;
  /// Number of randomly sampled coordinates; 0 checks every coordinate.
  std::size_t samples = 0;
  std::uint64_t seed = 7;
};

struct GradCheckResult {
  double max_rel_error = 0.0;
  std::size_t checked = 0;
};

/// Compares tape gradients of a scalar function against central differences.
///
/// `build` must record the loss on the given tape, reading the current values
/// of `params`, and be deterministic. Relative error uses the denominator
/// max(|g|, |g_fd|, 1e-8).
inline GradCheckResult grad_check(const std::function<Var(Tape&)>& build, const std::vector<Parameter*>& params,
                                  const GradCheckOptions& opt = {}) {
  for (Parameter* p : params) p->zero_grad();
  {
    Tape tape;
    tape.backward(build(tape));
  }
  auto eval = [&] {
    Tape tape;
    return build(tape).value().item();
  };

  std::vector<std::pair<std::size_t, std::size_t>> coords;
  for (std::size_t pi = 0; pi < params.size(); ++pi)
    for (std::size_t k = 0; k < params[pi]->value.size(); ++k) coords.emplace_back(pi, k);
  if (opt.samples > 0 && opt.samples < coords.size()) {
    std::mt19937_64 rng(opt.seed);
    std::shuffle(coords.begin(), coords.end(), rng);
    coords.resize(opt.samples);
  }

  GradCheckResult res;
  for (auto [pi, k] : coords) {
    Parameter& p = *params[pi];
    const double orig = p.value[k];
    p.value[k] = orig + opt.step;
    const double up = eval();
    p.value[k] = orig - opt.step;
    const double down = eval();
    p.value[k] = orig;
    const double fd = (up - down) / (2.0 * opt.step);
    const double g = p.grad[k];
    const double denom = std::max({std::abs(g), std::abs(fd), 1e-8});
    res.max_rel_error = std::max(res.max_rel_error, std::abs(g - fd) / denom);
    ++res.checked;
  }
  return res;
}

}  // namespace sga
