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

#include <Eigen/Core>
#include <algorithm>
#include <cmath>
#include <limits>
#include <memory>
#include <numbers>
#include <optional>

#include "sga/numerics/tape.hpp"

namespace sga {

namespace detail {

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MapMat = Eigen::Map<RowMat>;
using CMapMat = Eigen::Map<const RowMat>;

inline CMapMat cmap(const Tensor& t, std::size_t r, std::size_t c) {
  return CMapMat(t.ptr(), static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(c));
}
inline MapMat mmap(Tensor& t, std::size_t r, std::size_t c) {
  return MapMat(t.ptr(), static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(c));
}

// C (+)= op(A) * op(B) on row-major buffers.
inline void gemm(const Tensor& a, bool ta, const Tensor& b, bool tb, Tensor& c, bool accumulate) {
  const auto A = cmap(a, a.rows(), a.cols());
  const auto B = cmap(b, b.rows(), b.cols());
  auto C = mmap(c, c.rows(), c.cols());
  if (!accumulate) C.setZero();
  if (!ta && !tb) C.noalias() += A * B;
  else if (!ta && tb) C.noalias() += A * B.transpose();
  else if (ta && !tb) C.noalias() += A.transpose() * B;
  else C.noalias() += A.transpose() * B.transpose();
}

inline bool any_grad(std::initializer_list<Var> vs) {
  for (const Var& v : vs)
    if (v.requires_grad()) return true;
  return false;
}

inline Shape with_last(const Shape& s, std::size_t last) {
  Shape out = s.empty() ? Shape{1} : s;
  out.back() = last;
  return out;
}

}  // namespace detail

/// Matrix product; `a` may carry leading batch dimensions that are flattened into rows.
inline Var matmul(Var a, Var b) {
  const Tensor& av = a.value();
  const Tensor& bv = b.value();
  if (bv.rank() != 2 || av.cols() != bv.rows())
    throw DimensionError("matmul inner dimensions disagree: " + shape_str(av.shape()) + " x " +
                         shape_str(bv.shape()));
  Tensor out(detail::with_last(av.shape(), bv.cols()));
  detail::gemm(av, false, bv, false, out, false);
  const std::size_t ia = a.id(), ib = b.id();
  return a.tape().record(std::move(out), detail::any_grad({a, b}), [ia, ib](Tape& t, std::size_t self) {
    const Tensor& g = t.grad(self);
    if (t.requires_grad(ia)) detail::gemm(g, false, t.value(ib), true, t.grad_buffer(ia), true);
    if (t.requires_grad(ib)) detail::gemm(t.value(ia), true, g, false, t.grad_buffer(ib), true);
  });
}

/// a * b^T, with a [m x k] and b [n x k].
inline Var matmul_nt(Var a, Var b) {
  const Tensor& av = a.value();
  const Tensor& bv = b.value();
  if (bv.rank() != 2 || av.cols() != bv.cols())
    throw DimensionError("matmul_nt inner dimensions disagree: " + shape_str(av.shape()) + " x " +
                         shape_str(bv.shape()) + "^T");
  Tensor out(detail::with_last(av.shape(), bv.rows()));
  detail::gemm(av, false, bv, true, out, false);
  const std::size_t ia = a.id(), ib = b.id();
  return a.tape().record(std::move(out), detail::any_grad({a, b}), [ia, ib](Tape& t, std::size_t self) {
    const Tensor& g = t.grad(self);
    if (t.requires_grad(ia)) detail::gemm(g, false, t.value(ib), false, t.grad_buffer(ia), true);
    if (t.requires_grad(ib)) detail::gemm(g, true, t.value(ia), false, t.grad_buffer(ib), true);
  });
}

inline Var add(Var a, Var b) {
  if (a.shape() != b.shape())
    throw DimensionError("add shape mismatch: " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
  Tensor out = a.value();
  const auto bv = b.value().data();
  auto o = out.data();
  for (std::size_t i = 0; i < o.size(); ++i) o[i] += bv[i];
  const std::size_t ia = a.id(), ib = b.id();
  return a.tape().record(std::move(out), detail::any_grad({a, b}), [ia, ib](Tape& t, std::size_t self) {
    t.accumulate(ia, t.grad(self));
    t.accumulate(ib, t.grad(self));
  });
}

/// Adds a [n] vector to every row of a [.. x n] tensor.
inline Var add_bias(Var a, Var bias) {
  const Tensor& av = a.value();
  const Tensor& bv = bias.value();
  if (bv.size() != av.cols())
    throw DimensionError("add_bias width mismatch: " + shape_str(av.shape()) + " + " + shape_str(bv.shape()));
  Tensor out = av;
  const std::size_t r = av.rows(), c = av.cols();
  for (std::size_t i = 0; i < r; ++i)
    for (std::size_t j = 0; j < c; ++j) out(i, j) += bv[j];
  const std::size_t ia = a.id(), ib = bias.id();
  return a.tape().record(std::move(out), detail::any_grad({a, bias}), [ia, ib, r, c](Tape& t, std::size_t self) {
    const Tensor& g = t.grad(self);
    t.accumulate(ia, g);
    if (t.requires_grad(ib)) {
      Tensor& gb = t.grad_buffer(ib);
      for (std::size_t i = 0; i < r; ++i)
        for (std::size_t j = 0; j < c; ++j) gb[j] += g(i, j);
    }
  });
}

inline Var scale(Var a, double s) {
  Tensor out = a.value();
  for (double& v : out.data()) v *= s;
  const std::size_t ia = a.id();
  return a.tape().record(std::move(out), a.requires_grad(), [ia, s](Tape& t, std::size_t self) {
    Tensor& ga = t.grad_buffer(ia);
    const Tensor& g = t.grad(self);
    for (std::size_t i = 0; i < g.size(); ++i) ga[i] += s * g[i];
  });
}

inline Var sum(Var a) {
  double s = 0.0;
  for (double v : a.value().data()) s += v;
  const std::size_t ia = a.id();
  return a.tape().record(Tensor::scalar(s), a.requires_grad(), [ia](Tape& t, std::size_t self) {
    const double g = t.grad(self)[0];
    for (double& v : t.grad_buffer(ia).data()) v += g;
  });
}

/// Stacks the rows of `a` on top of the rows of `b`.
inline Var concat_rows(Var a, Var b) {
  const Tensor& av = a.value();
  const Tensor& bv = b.value();
  if (av.cols() != bv.cols())
    throw DimensionError("concat_rows width mismatch: " + shape_str(av.shape()) + " vs " +
                         shape_str(bv.shape()));
  const std::size_t ra = av.rows(), rb = bv.rows(), c = av.cols();
  Tensor out({ra + rb, c});
  std::copy(av.data().begin(), av.data().end(), out.data().begin());
  std::copy(bv.data().begin(), bv.data().end(), out.data().begin() + static_cast<std::ptrdiff_t>(ra * c));
  const std::size_t ia = a.id(), ib = b.id();
  return a.tape().record(std::move(out), detail::any_grad({a, b}), [ia, ib, ra, rb, c](Tape& t, std::size_t self) {
    const Tensor& g = t.grad(self);
    if (t.requires_grad(ia)) {
      Tensor& ga = t.grad_buffer(ia);
      for (std::size_t i = 0; i < ra * c; ++i) ga[i] += g[i];
    }
    if (t.requires_grad(ib)) {
      Tensor& gb = t.grad_buffer(ib);
      for (std::size_t i = 0; i < rb * c; ++i) gb[i] += g[ra * c + i];
    }
  });
}

/// Gathers rows of `table` [V x d]; ids must lie in [0, V).
inline Var embed_lookup(Var table, std::span<const int> ids) {
  const Tensor& tv = table.value();
  const std::size_t d = tv.cols(), vocab = tv.rows();
  Tensor out({ids.size(), d});
  for (std::size_t i = 0; i < ids.size(); ++i) {
    if (ids[i] < 0 || static_cast<std::size_t>(ids[i]) >= vocab)
      throw std::out_of_range("token id " + std::to_string(ids[i]) + " outside vocabulary of " +
                              std::to_string(vocab));
    const auto src = tv.row(static_cast<std::size_t>(ids[i]));
    std::copy(src.begin(), src.end(), out.row(i).begin());
  }
  std::vector<int> saved(ids.begin(), ids.end());
  const std::size_t it = table.id();
  return table.tape().record(std::move(out), table.requires_grad(),
                             [it, saved = std::move(saved), d](Tape& t, std::size_t self) {
                               const Tensor& g = t.grad(self);
                               Tensor& gt = t.grad_buffer(it);
                               for (std::size_t i = 0; i < saved.size(); ++i)
                                 for (std::size_t j = 0; j < d; ++j)
                                   gt(static_cast<std::size_t>(saved[i]), j) += g(i, j);
                             });
}

namespace detail {

inline void softmax_inplace(std::span<double> row) {
  double mx = -std::numeric_limits<double>::infinity();
  for (double v : row) mx = std::max(mx, v);
  double s = 0.0;
  for (double& v : row) {
    v = std::exp(v - mx);
    s += v;
  }
  for (double& v : row) v /= s;
}

inline double logsumexp(std::span<const double> row) {
  double mx = -std::numeric_limits<double>::infinity();
  for (double v : row) mx = std::max(mx, v);
  if (!std::isfinite(mx)) return mx;
  double s = 0.0;
  for (double v : row) s += std::exp(v - mx);
  return mx + std::log(s);
}

}  // namespace detail

/// Row-wise softmax with max subtraction.
inline Var softmax_rows(Var x) {
  if (x.cols() == 0) throw DimensionError("softmax over empty last dimension");
  Tensor out = x.value();
  for (std::size_t r = 0; r < out.rows(); ++r) detail::softmax_inplace(out.row(r));
  const std::size_t ix = x.id();
  return x.tape().record(std::move(out), x.requires_grad(), [ix](Tape& t, std::size_t self) {
    const Tensor& y = t.value(self);
    const Tensor& g = t.grad(self);
    Tensor& gx = t.grad_buffer(ix);
    for (std::size_t r = 0; r < y.rows(); ++r) {
      double dot = 0.0;
      for (std::size_t c = 0; c < y.cols(); ++c) dot += g(r, c) * y(r, c);
      for (std::size_t c = 0; c < y.cols(); ++c) gx(r, c) += y(r, c) * (g(r, c) - dot);
    }
  });
}

inline Var log_softmax_rows(Var x) {
  if (x.cols() == 0) throw DimensionError("log_softmax over empty last dimension");
  Tensor out = x.value();
  for (std::size_t r = 0; r < out.rows(); ++r) {
    auto row = out.row(r);
    const double lse = detail::logsumexp(row);
    for (double& v : row) v -= lse;
  }
  const std::size_t ix = x.id();
  return x.tape().record(std::move(out), x.requires_grad(), [ix](Tape& t, std::size_t self) {
    const Tensor& y = t.value(self);
    const Tensor& g = t.grad(self);
    Tensor& gx = t.grad_buffer(ix);
    for (std::size_t r = 0; r < y.rows(); ++r) {
      double gs = 0.0;
      for (std::size_t c = 0; c < y.cols(); ++c) gs += g(r, c);
      for (std::size_t c = 0; c < y.cols(); ++c) gx(r, c) += g(r, c) - std::exp(y(r, c)) * gs;
    }
  });
}

/// Exact (erf) GELU.
inline Var gelu(Var x) {
  Tensor out = x.value();
  for (double& v : out.data()) v = 0.5 * v * (1.0 + std::erf(v / std::numbers::sqrt2));
  const std::size_t ix = x.id();
  return x.tape().record(std::move(out), x.requires_grad(), [ix](Tape& t, std::size_t self) {
    const Tensor& xv = t.value(ix);
    const Tensor& g = t.grad(self);
    Tensor& gx = t.grad_buffer(ix);
    constexpr double inv_sqrt_2pi = 0.3989422804014327;
    for (std::size_t i = 0; i < xv.size(); ++i) {
      const double v = xv[i];
      const double cdf = 0.5 * (1.0 + std::erf(v / std::numbers::sqrt2));
      const double pdf = inv_sqrt_2pi * std::exp(-0.5 * v * v);
      gx[i] += g[i] * (cdf + v * pdf);
    }
  });
}

/// Row-wise layer normalisation with affine gain/bias of width cols().
inline Var layer_norm(Var x, Var gain, Var bias, double eps = 1e-5) {
  const Tensor& xv = x.value();
  const std::size_t r = xv.rows(), c = xv.cols();
  if (gain.value().size() != c || bias.value().size() != c)
    throw DimensionError("layer_norm affine width mismatch for input " + shape_str(xv.shape()));
  Tensor out(xv.shape());
  auto xhat = std::make_shared<Tensor>(xv.shape());
  auto inv_std = std::make_shared<std::vector<double>>(r);
  const Tensor& gv = gain.value();
  const Tensor& bv = bias.value();
  for (std::size_t i = 0; i < r; ++i) {
    double mean = 0.0;
    for (std::size_t j = 0; j < c; ++j) mean += xv(i, j);
    mean /= static_cast<double>(c);
    double var = 0.0;
    for (std::size_t j = 0; j < c; ++j) var += (xv(i, j) - mean) * (xv(i, j) - mean);
    var /= static_cast<double>(c);
    const double is = 1.0 / std::sqrt(var + eps);
    (*inv_std)[i] = is;
    for (std::size_t j = 0; j < c; ++j) {
      const double h = (xv(i, j) - mean) * is;
      (*xhat)(i, j) = h;
      out(i, j) = h * gv[j] + bv[j];
    }
  }
  const std::size_t ix = x.id(), ig = gain.id(), ib = bias.id();
  return x.tape().record(std::move(out), detail::any_grad({x, gain, bias}),
                         [ix, ig, ib, xhat, inv_std, r, c](Tape& t, std::size_t self) {
                           const Tensor& g = t.grad(self);
                           const Tensor& gv = t.value(ig);
                           if (t.requires_grad(ig) || t.requires_grad(ib)) {
                             const bool wg = t.requires_grad(ig), wb = t.requires_grad(ib);
                             for (std::size_t i = 0; i < r; ++i)
                               for (std::size_t j = 0; j < c; ++j) {
                                 if (wg) t.grad_buffer(ig)[j] += g(i, j) * (*xhat)(i, j);
                                 if (wb) t.grad_buffer(ib)[j] += g(i, j);
                               }
                           }
                           if (!t.requires_grad(ix)) return;
                           Tensor& gx = t.grad_buffer(ix);
                           const double n = static_cast<double>(c);
                           for (std::size_t i = 0; i < r; ++i) {
                             double s1 = 0.0, s2 = 0.0;
                             for (std::size_t j = 0; j < c; ++j) {
                               const double dh = g(i, j) * gv[j];
                               s1 += dh;
                               s2 += dh * (*xhat)(i, j);
                             }
                             for (std::size_t j = 0; j < c; ++j) {
                               const double dh = g(i, j) * gv[j];
                               gx(i, j) += (*inv_std)[i] * (dh - s1 / n - (*xhat)(i, j) * s2 / n);
                             }
                           }
                         });
}

/// Multi-head scaled dot-product attention.
///
/// q is [T x d]; k and v are [S x d]. Each of the `heads` slices of width d/heads
/// attends independently over all S keys (no causal mask). Keys whose entry in
/// `key_mask` is false receive zero weight. When `weights_out` is given it
/// receives the [heads*T x S] attention weights.
inline Var attention(Var q, Var k, Var v, std::size_t heads, const std::vector<bool>* key_mask = nullptr,
                     Tensor* weights_out = nullptr) {
  const Tensor& qv = q.value();
  const Tensor& kv = k.value();
  const Tensor& vv = v.value();
  const std::size_t T = qv.rows(), S = kv.rows(), d = qv.cols();
  if (kv.cols() != d || vv.cols() != d || vv.rows() != S)
    throw DimensionError("attention shape mismatch: q " + shape_str(qv.shape()) + ", k " +
                         shape_str(kv.shape()) + ", v " + shape_str(vv.shape()));
  if (heads == 0 || d % heads != 0) throw DimensionError("attention width not divisible by head count");
  if (key_mask && key_mask->size() != S) throw DimensionError("attention key mask length mismatch");
  const std::size_t dh = d / heads;
  const double sc = 1.0 / std::sqrt(static_cast<double>(dh));
  auto probs = std::make_shared<Tensor>(Shape{heads * T, S});
  Tensor out({T, d});
  for (std::size_t h = 0; h < heads; ++h) {
    const std::size_t off = h * dh;
    for (std::size_t i = 0; i < T; ++i) {
      auto p = probs->row(h * T + i);
      const double* qi = qv.ptr() + i * d + off;
      double mx = -std::numeric_limits<double>::infinity();
      for (std::size_t j = 0; j < S; ++j) {
        if (key_mask && !(*key_mask)[j]) {
          p[j] = -std::numeric_limits<double>::infinity();
          continue;
        }
        const double* kj = kv.ptr() + j * d + off;
        double s = 0.0;
        for (std::size_t e = 0; e < dh; ++e) s += qi[e] * kj[e];
        p[j] = s * sc;
        mx = std::max(mx, p[j]);
      }
      double z = 0.0;
      for (std::size_t j = 0; j < S; ++j) {
        p[j] = std::isfinite(p[j]) ? std::exp(p[j] - mx) : 0.0;
        z += p[j];
      }
      double* oi = out.ptr() + i * d + off;
      for (std::size_t j = 0; j < S; ++j) {
        p[j] = z > 0.0 ? p[j] / z : 0.0;
        const double* vj = vv.ptr() + j * d + off;
        for (std::size_t e = 0; e < dh; ++e) oi[e] += p[j] * vj[e];
      }
    }
  }
  if (weights_out) *weights_out = *probs;
  const std::size_t iq = q.id(), ik = k.id(), iv = v.id();
  return q.tape().record(
      std::move(out), detail::any_grad({q, k, v}),
      [iq, ik, iv, probs, T, S, d, dh, heads, sc](Tape& t, std::size_t self) {
        const Tensor& g = t.grad(self);
        const Tensor& qv = t.value(iq);
        const Tensor& kv = t.value(ik);
        const Tensor& vv = t.value(iv);
        const bool wq = t.requires_grad(iq), wk = t.requires_grad(ik), wv = t.requires_grad(iv);
        Tensor* gq = wq ? &t.grad_buffer(iq) : nullptr;
        Tensor* gk = wk ? &t.grad_buffer(ik) : nullptr;
        Tensor* gv = wv ? &t.grad_buffer(iv) : nullptr;
        std::vector<double> dp(S);
        for (std::size_t h = 0; h < heads; ++h) {
          const std::size_t off = h * dh;
          for (std::size_t i = 0; i < T; ++i) {
            const auto p = probs->row(h * T + i);
            const double* gi = g.ptr() + i * d + off;
            double dot = 0.0;
            for (std::size_t j = 0; j < S; ++j) {
              const double* vj = vv.ptr() + j * d + off;
              double s = 0.0;
              for (std::size_t e = 0; e < dh; ++e) s += gi[e] * vj[e];
              dp[j] = s;
              dot += s * p[j];
              if (gv && p[j] != 0.0) {
                double* gvj = gv->ptr() + j * d + off;
                for (std::size_t e = 0; e < dh; ++e) gvj[e] += p[j] * gi[e];
              }
            }
            const double* qi = qv.ptr() + i * d + off;
            for (std::size_t j = 0; j < S; ++j) {
              const double ds = p[j] * (dp[j] - dot) * sc;
              if (ds == 0.0) continue;
              const double* kj = kv.ptr() + j * d + off;
              if (gq) {
                double* gqi = gq->ptr() + i * d + off;
                for (std::size_t e = 0; e < dh; ++e) gqi[e] += ds * kj[e];
              }
              if (gk) {
                double* gkj = gk->ptr() + j * d + off;
                for (std::size_t e = 0; e < dh; ++e) gkj[e] += ds * qi[e];
              }
            }
          }
        }
      });
}

/// Mean negative log-likelihood over positions with mask[i] set.
/// An empty mask yields a zero loss whose gradient is zero everywhere.
inline Var cross_entropy_masked(Var logits, std::span<const int> targets, const std::vector<bool>& mask) {
  const Tensor& lv = logits.value();
  const std::size_t T = lv.rows(), V = lv.cols();
  if (targets.size() != T || mask.size() != T)
    throw DimensionError("cross_entropy_masked: logits " + shape_str(lv.shape()) + ", " +
                         std::to_string(targets.size()) + " targets, " + std::to_string(mask.size()) +
                         " mask entries");
  std::size_t count = 0;
  for (std::size_t i = 0; i < T; ++i) {
    if (!mask[i]) continue;
    if (targets[i] < 0 || static_cast<std::size_t>(targets[i]) >= V)
      throw std::out_of_range("target id " + std::to_string(targets[i]) + " outside vocabulary");
    ++count;
  }
  if (count == 0) return logits.tape().constant(Tensor::scalar(0.0));
  auto probs = std::make_shared<Tensor>(Shape{T, V});
  double loss = 0.0;
  for (std::size_t i = 0; i < T; ++i) {
    if (!mask[i]) continue;
    const auto row = lv.row(i);
    const double lse = detail::logsumexp(row);
    loss -= row[static_cast<std::size_t>(targets[i])] - lse;
    for (std::size_t c = 0; c < V; ++c) (*probs)(i, c) = std::exp(row[c] - lse);
  }
  const double n = static_cast<double>(count);
  std::vector<int> tg(targets.begin(), targets.end());
  const std::size_t il = logits.id();
  return logits.tape().record(Tensor::scalar(loss / n), logits.requires_grad(),
                              [il, probs, tg = std::move(tg), mask, n, T, V](Tape& t, std::size_t self) {
                                const double g = t.grad(self)[0] / n;
                                Tensor& gl = t.grad_buffer(il);
                                for (std::size_t i = 0; i < T; ++i) {
                                  if (!mask[i]) continue;
                                  for (std::size_t c = 0; c < V; ++c) gl(i, c) += g * (*probs)(i, c);
                                  gl(i, static_cast<std::size_t>(tg[i])) -= g;
                                }
                              });
}

/// Plain-tensor conveniences (no tape).
inline Tensor matmul(const Tensor& a, const Tensor& b) {
  if (b.rank() != 2 || a.cols() != b.rows())
    throw DimensionError("matmul inner dimensions disagree: " + shape_str(a.shape()) + " x " +
                         shape_str(b.shape()));
  Tensor out(detail::with_last(a.shape(), b.cols()));
  detail::gemm(a, false, b, false, out, false);
  return out;
}

inline Tensor softmax_rows(const Tensor& x) {
  Tensor out = x;
  for (std::size_t r = 0; r < out.rows(); ++r) detail::softmax_inplace(out.row(r));
  return out;
}

inline Tensor log_softmax_rows(const Tensor& x) {
  Tensor out = x;
  for (std::size_t r = 0; r < out.rows(); ++r) {
    auto row = out.row(r);
    const double lse = detail::logsumexp(row);
    for (double& v : row) v -= lse;
  }
  return out;
}

}  // namespace sga
