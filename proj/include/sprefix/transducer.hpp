// Copyright 2026 The sprefix Authors
// SPDX-License-Identifier: Apache-2.0
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     https://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

// Training objectives: LM cross-entropy over text logits, the transducer
// (RNNT) loss over a stateless-prediction joint network, CTC, and their
// weighted combination. Blank is always the last label index.
//
// Lattice convention for RNNT with T frames and U targets:
//   alpha(t, u) = logaddexp(alpha(t-1, u) + blank(t-1, u),
//                           alpha(t, u-1) + label(t, u-1))
//   log p(Y | X) = alpha(T-1, U) + blank(T-1, U)
// Every complete path crosses each anti-diagonal t + u = n exactly once.

#pragma once

#include <cmath>
#include <limits>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "sprefix/autodiff.hpp"
#include "sprefix/model.hpp"
#include "sprefix/parameters.hpp"

namespace sprefix {

inline constexpr double kNegInf = -std::numeric_limits<double>::infinity();

namespace detail {

inline double log_add(double a, double b) {
  if (a == kNegInf) return b;
  if (b == kNegInf) return a;
  const double m = std::max(a, b);
  return m + std::log1p(std::exp(-std::abs(a - b)));
}

// log_softmax over the last axis of a plain tensor.
inline Tensor log_softmax_last(const Tensor& x) {
  Tensor out = x;
  const std::size_t k = x.shape.back();
  for (std::size_t r = 0; r < x.size() / k; ++r) {
    double* row = out.data.data() + r * k;
    double m = kNegInf;
    for (std::size_t j = 0; j < k; ++j) m = std::max(m, row[j]);
    double s = 0.0;
    for (std::size_t j = 0; j < k; ++j) s += std::exp(row[j] - m);
    const double lse = m + std::log(s);
    for (std::size_t j = 0; j < k; ++j) row[j] -= lse;
  }
  return out;
}

inline void check_labels(std::string_view op, std::span<const int> targets, std::size_t labels) {
  for (int y : targets) {
    if (y < 0 || static_cast<std::size_t>(y) + 1 >= labels) {
      throw std::out_of_range(std::string(op) + ": target id " + std::to_string(y) +
                              " outside [0, " + std::to_string(labels - 1) + ")");
    }
  }
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Joint objective

struct JointLossConfig {
  double alpha = 0.5;  // weight on the LM loss

  void validate() const {
    if (!(alpha >= 0.0 && alpha <= 1.0)) {
      throw std::invalid_argument("joint loss: alpha " + std::to_string(alpha) +
                                  " outside [0, 1]");
    }
  }
};

inline double joint_loss(double lm, double asr, const JointLossConfig& cfg) {
  cfg.validate();
  if (cfg.alpha == 1.0) return lm;
  if (cfg.alpha == 0.0) return asr;
  return cfg.alpha * lm + (1.0 - cfg.alpha) * asr;
}

inline Var joint_loss(Var lm, Var asr, const JointLossConfig& cfg) {
  cfg.validate();
  if (cfg.alpha == 1.0) return lm;
  if (cfg.alpha == 0.0) return asr;
  return add(scale(lm, cfg.alpha), scale(asr, 1.0 - cfg.alpha));
}

// ---------------------------------------------------------------------------
// LM cross-entropy

// Sum over positions of -log softmax(logits)[target].
inline Var lm_loss(Var text_logits, std::span<const int> targets) {
  const Shape& s = text_logits.shape();
  if (s.size() != 2 || s[0] != targets.size()) {
    throw shape_mismatch("lm_loss", s, Shape{targets.size()});
  }
  for (int y : targets) {
    if (y < 0 || static_cast<std::size_t>(y) >= s[1]) {
      throw std::out_of_range("lm_loss: target id " + std::to_string(y) + " outside [0, " +
                              std::to_string(s[1]) + ")");
    }
  }
  return neg(reduce_sum(gather(log_softmax(text_logits, 1), targets)));
}

// ---------------------------------------------------------------------------
// Transducer joint network

// logits[t][u] = out_proj . tanh(enc_proj . x_t + pred_proj . emb(prev_u) + bias)
// with prediction inputs [start, y0 .. y_{U-1}]; the start row is index V.
inline Var transducer_joint(Bindings& b, const PrefixLMConfig& cfg, Var speech,
                            std::span<const int> targets) {
  const Shape& s = speech.shape();
  if (s.size() != 2 || s[1] != cfg.speech_dim()) {
    throw shape_mismatch("transducer_joint", s, Shape{0, cfg.speech_dim()});
  }
  const std::size_t labels = cfg.vocab + 1;
  detail::check_labels("transducer_joint", targets, labels);
  const std::size_t frames = s[0], steps = targets.size() + 1;

  std::vector<int> prev{cfg.blank_id()};
  prev.insert(prev.end(), targets.begin(), targets.end());
  Var enc = matmul(speech, b("rnnt.enc_proj"));
  Var pred = matmul(embedding_gather(b("rnnt.label_embed"), prev), b("rnnt.pred_proj"));

  std::vector<int> t_idx, u_idx;
  t_idx.reserve(frames * steps);
  u_idx.reserve(frames * steps);
  for (std::size_t t = 0; t < frames; ++t) {
    for (std::size_t u = 0; u < steps; ++u) {
      t_idx.push_back(static_cast<int>(t));
      u_idx.push_back(static_cast<int>(u));
    }
  }
  Var h = add(embedding_gather(enc, t_idx), embedding_gather(pred, u_idx));
  h = tanh(add_rowwise(h, b("rnnt.joint_bias")));
  return reshape(matmul(h, b("rnnt.out_proj")), {frames, steps, labels});
}

// Plain-tensor copy of the transducer head for decoding.
struct TransducerHead {
  Tensor label_embed;  // [(V+1) x Dp]
  Tensor enc_proj;     // [S x Dj]
  Tensor pred_proj;    // [Dp x Dj]
  Tensor joint_bias;   // [Dj]
  Tensor out_proj;     // [Dj x (V+1)]

  static TransducerHead from(const ParameterRegistry& p) {
    if (!p.contains("rnnt.out_proj")) {
      throw std::invalid_argument("checkpoint has no rnnt head (missing rnnt.* parameters)");
    }
    return TransducerHead{p.value("rnnt.label_embed"), p.value("rnnt.enc_proj"),
                          p.value("rnnt.pred_proj"), p.value("rnnt.joint_bias"),
                          p.value("rnnt.out_proj")};
  }

  std::size_t labels() const { return out_proj.dim(1); }
  int blank() const { return static_cast<int>(labels()) - 1; }
  std::size_t joint_dim() const { return out_proj.dim(0); }

  // enc_proj . x for every row of speech [T x S] -> [T x Dj].
  Tensor project_encoder(const Tensor& speech) const {
    if (speech.rank() != 2 || speech.dim(1) != enc_proj.dim(0)) {
      throw shape_mismatch("TransducerHead::project_encoder", speech.shape, enc_proj.shape);
    }
    Tensor out({speech.dim(0), joint_dim()});
    kernel::gemm_nn(speech.data.data(), enc_proj.data.data(), out.data.data(), speech.dim(0),
                    enc_proj.dim(0), joint_dim());
    return out;
  }

  std::vector<double> logits(const double* enc_projected, int prev) const {
    const std::size_t dj = joint_dim(), dp = pred_proj.dim(0), k = labels();
    std::vector<double> pred(dj, 0.0);
    kernel::gemm_nn(label_embed.row(static_cast<std::size_t>(prev)), pred_proj.data.data(),
                    pred.data(), 1, dp, dj);
    for (std::size_t j = 0; j < dj; ++j) {
      pred[j] = std::tanh(enc_projected[j] + pred[j] + joint_bias.data[j]);
    }
    std::vector<double> out(k, 0.0);
    kernel::gemm_nn(pred.data(), out_proj.data.data(), out.data(), 1, dj, k);
    return out;
  }
};

// ---------------------------------------------------------------------------
// RNNT loss

struct TransducerLattice {
  Tensor log_alpha;  // [T x (U+1)]
  Tensor log_beta;   // [T x (U+1)]
  double log_prob = kNegInf;
};

namespace detail {

struct RnntGrid {
  const Tensor& lp;  // log-probs [T x (U+1) x K]
  std::span<const int> y;
  std::size_t frames, steps, k;
  double blank(std::size_t t, std::size_t u) const { return lp(t, u, k - 1); }
  double label(std::size_t t, std::size_t u) const {
    return lp(t, u, static_cast<std::size_t>(y[u]));
  }
};

inline void check_rnnt_logits(std::string_view op, const Shape& s, std::span<const int> targets) {
  if (s.size() != 3 || s[1] != targets.size() + 1 || s[2] < 2) {
    throw shape_mismatch(op, s, Shape{0, targets.size() + 1, 0});
  }
  check_labels(op, targets, s[2]);
}

}  // namespace detail

// Forward/backward variables over log-probabilities [T x (U+1) x (V+1)].
inline TransducerLattice rnnt_lattice_from_log_probs(const Tensor& lp, std::span<const int> targets) {
  detail::check_rnnt_logits("rnnt_lattice", lp.shape, targets);
  const detail::RnntGrid g{lp, targets, lp.dim(0), lp.dim(1), lp.dim(2)};
  const std::size_t T = g.frames, U = g.steps - 1;
  TransducerLattice lat{Tensor({T, U + 1}, kNegInf), Tensor({T, U + 1}, kNegInf), kNegInf};
  Tensor& a = lat.log_alpha;
  Tensor& b = lat.log_beta;

  for (std::size_t t = 0; t < T; ++t) {
    for (std::size_t u = 0; u <= U; ++u) {
      if (t == 0 && u == 0) {
        a(0, 0) = 0.0;
        continue;
      }
      double v = kNegInf;
      if (t > 0) v = detail::log_add(v, a(t - 1, u) + g.blank(t - 1, u));
      if (u > 0) v = detail::log_add(v, a(t, u - 1) + g.label(t, u - 1));
      a(t, u) = v;
    }
  }
  lat.log_prob = a(T - 1, U) + g.blank(T - 1, U);

  for (std::size_t t = T; t-- > 0;) {
    for (std::size_t u = U + 1; u-- > 0;) {
      if (t == T - 1 && u == U) {
        b(t, u) = g.blank(t, u);
        continue;
      }
      double v = kNegInf;
      if (t + 1 < T) v = detail::log_add(v, b(t + 1, u) + g.blank(t, u));
      if (u < U) v = detail::log_add(v, b(t, u + 1) + g.label(t, u));
      b(t, u) = v;
    }
  }
  return lat;
}

inline TransducerLattice rnnt_lattice(const Tensor& logits, std::span<const int> targets) {
  detail::check_rnnt_logits("rnnt_lattice", logits.shape, targets);
  return rnnt_lattice_from_log_probs(detail::log_softmax_last(logits), targets);
}

// Gradient of -log p(Y|X) with respect to the log-probabilities.
inline Tensor rnnt_log_prob_grad(const Tensor& lp, std::span<const int> targets,
                                 const TransducerLattice& lat) {
  const detail::RnntGrid g{lp, targets, lp.dim(0), lp.dim(1), lp.dim(2)};
  const std::size_t T = g.frames, U = g.steps - 1;
  Tensor grad(lp.shape, 0.0);
  for (std::size_t t = 0; t < T; ++t) {
    for (std::size_t u = 0; u <= U; ++u) {
      const double a = lat.log_alpha(t, u);
      double next_blank = kNegInf;
      if (t + 1 < T) next_blank = lat.log_beta(t + 1, u);
      else if (u == U) next_blank = 0.0;
      if (next_blank != kNegInf) {
        grad(t, u, g.k - 1) = -std::exp(a + g.blank(t, u) + next_blank - lat.log_prob);
      }
      if (u < U) {
        grad(t, u, static_cast<std::size_t>(targets[u])) -=
            std::exp(a + g.label(t, u) + lat.log_beta(t, u + 1) - lat.log_prob);
      }
    }
  }
  return grad;
}

struct RnntValueAndGrad {
  double loss;
  Tensor grad_logits;
  TransducerLattice lattice;
};

inline RnntValueAndGrad rnnt_loss_and_grad(const Tensor& logits, std::span<const int> targets) {
  detail::check_rnnt_logits("rnnt_loss", logits.shape, targets);
  const Tensor lp = detail::log_softmax_last(logits);
  TransducerLattice lat = rnnt_lattice_from_log_probs(lp, targets);
  Tensor g = rnnt_log_prob_grad(lp, targets, lat);
  // Through the per-node log_softmax: dz = g - softmax * sum(g).
  const std::size_t k = logits.shape.back();
  for (std::size_t r = 0; r < g.size() / k; ++r) {
    double s = 0.0;
    for (std::size_t j = 0; j < k; ++j) s += g.data[r * k + j];
    for (std::size_t j = 0; j < k; ++j) g.data[r * k + j] -= std::exp(lp.data[r * k + j]) * s;
  }
  return {-lat.log_prob, std::move(g), std::move(lat)};
}

// -log p(Y | X) with the gradient from the alpha/beta recursions.
inline Var rnnt_loss(Var logits, std::span<const int> targets) {
  RnntValueAndGrad r = rnnt_loss_and_grad(logits.value(), targets);
  return logits.tape().record("rnnt_loss", Tensor::scalar(r.loss), {logits},
                              [g = std::move(r.grad_logits)](const BackwardContext& c) {
                                detail::add_into(c.dx(0), g, c.grad.data[0]);
                              });
}

// Same loss, built from generic tape ops so that reverse mode differentiates
// through the alpha recursion itself.
inline Var rnnt_loss_autodiff(Var logits, std::span<const int> targets) {
  detail::check_rnnt_logits("rnnt_loss_autodiff", logits.shape(), targets);
  const std::size_t T = logits.shape()[0], U = targets.size(), K = logits.shape()[2];
  Var lp = log_softmax(logits, 2);
  auto at = [&](std::size_t t, std::size_t u, std::size_t k) {
    const std::size_t idx = (t * (U + 1) + u) * K + k;
    return take(lp, std::span<const std::size_t>(&idx, 1));
  };
  std::vector<Var> alpha(T * (U + 1));
  alpha[0] = logits.tape().constant(Tensor::scalar(0.0));
  for (std::size_t t = 0; t < T; ++t) {
    for (std::size_t u = 0; u <= U; ++u) {
      if (t == 0 && u == 0) continue;
      std::vector<Var> terms;
      if (t > 0) terms.push_back(add(alpha[(t - 1) * (U + 1) + u], at(t - 1, u, K - 1)));
      if (u > 0) {
        terms.push_back(add(alpha[t * (U + 1) + u - 1],
                            at(t, u - 1, static_cast<std::size_t>(targets[u - 1]))));
      }
      alpha[t * (U + 1) + u] = terms.size() == 1 ? terms[0] : logsumexp(concat(terms, 0), 0);
    }
  }
  return neg(add(alpha[(T - 1) * (U + 1) + U], at(T - 1, U, K - 1)));
}

struct BruteForceResult {
  double loss;
  std::size_t paths;
};

// Sums every monotone lattice path ending in the final blank. Exponential;
// bounded to T <= 6, U <= 4.
inline BruteForceResult rnnt_loss_bruteforce(const Tensor& logits, std::span<const int> targets) {
  detail::check_rnnt_logits("rnnt_loss_bruteforce", logits.shape, targets);
  const std::size_t T = logits.dim(0), U = targets.size();
  if (T > 6 || U > 4) {
    throw std::invalid_argument("rnnt_loss_bruteforce: enumeration bound exceeded (T <= 6, U <= 4)");
  }
  const Tensor lp = detail::log_softmax_last(logits);
  const std::size_t K = logits.dim(2);
  double total = 0.0;
  std::size_t paths = 0;
  // Depth-first over moves; `prob` is the product of emissions so far.
  auto walk = [&](auto&& self, std::size_t t, std::size_t u, double prob) -> void {
    if (t == T - 1 && u == U) {
      total += prob * std::exp(lp(t, u, K - 1));
      ++paths;
      return;
    }
    if (t + 1 < T) self(self, t + 1, u, prob * std::exp(lp(t, u, K - 1)));
    if (u < U) self(self, t, u + 1, prob * std::exp(lp(t, u, static_cast<std::size_t>(targets[u]))));
  };
  walk(walk, 0, 0, 1.0);
  return {-std::log(total), paths};
}

// ---------------------------------------------------------------------------
// CTC

inline Var ctc_logits(Bindings& b, Var speech) {
  return add_rowwise(matmul(speech, b("ctc.proj")), b("ctc.bias"));
}

// Removes adjacent repeats, then blanks.
inline std::vector<int> collapse_alignment(std::span<const int> path, int blank) {
  std::vector<int> out;
  int prev = -1;
  for (int s : path) {
    if (s != prev && s != blank) out.push_back(s);
    prev = s;
  }
  return out;
}

// A target fits in T frames iff T >= U + (number of adjacent repeats).
inline bool ctc_feasible(std::size_t frames, std::span<const int> targets) {
  std::size_t need = targets.size();
  for (std::size_t i = 1; i < targets.size(); ++i) {
    if (targets[i] == targets[i - 1]) ++need;
  }
  return frames >= need;
}

struct CtcResult {
  double loss;    // +inf when infeasible
  bool feasible;
};

namespace detail {

struct CtcLattice {
  std::vector<int> ext;  // blank-interleaved target, length 2U+1
  Tensor log_alpha;      // [T x S], emission at t included
  Tensor log_beta;       // [T x S], emissions after t only
  double log_prob;
};

inline CtcLattice ctc_lattice(const Tensor& lp, std::span<const int> targets) {
  const std::size_t T = lp.dim(0), K = lp.dim(1);
  const int blank = static_cast<int>(K) - 1;
  CtcLattice lat;
  lat.ext.push_back(blank);
  for (int y : targets) {
    lat.ext.push_back(y);
    lat.ext.push_back(blank);
  }
  const std::size_t S = lat.ext.size();
  auto skip_ok = [&](std::size_t s) {  // may jump from s-2 to s
    return s >= 2 && lat.ext[s] != blank && lat.ext[s] != lat.ext[s - 2];
  };
  auto e = [&](std::size_t t, std::size_t s) { return lp(t, static_cast<std::size_t>(lat.ext[s])); };

  lat.log_alpha = Tensor({T, S}, kNegInf);
  Tensor& a = lat.log_alpha;
  a(0, 0) = e(0, 0);
  if (S > 1) a(0, 1) = e(0, 1);
  for (std::size_t t = 1; t < T; ++t) {
    for (std::size_t s = 0; s < S; ++s) {
      double v = a(t - 1, s);
      if (s >= 1) v = log_add(v, a(t - 1, s - 1));
      if (skip_ok(s)) v = log_add(v, a(t - 1, s - 2));
      a(t, s) = v == kNegInf ? kNegInf : v + e(t, s);
    }
  }
  lat.log_prob = a(T - 1, S - 1);
  if (S > 1) lat.log_prob = log_add(lat.log_prob, a(T - 1, S - 2));

  lat.log_beta = Tensor({T, S}, kNegInf);
  Tensor& b = lat.log_beta;
  b(T - 1, S - 1) = 0.0;
  if (S > 1) b(T - 1, S - 2) = 0.0;
  for (std::size_t t = T - 1; t-- > 0;) {
    for (std::size_t s = 0; s < S; ++s) {
      double v = b(t + 1, s) + e(t + 1, s);
      if (s + 1 < S) v = log_add(v, b(t + 1, s + 1) + e(t + 1, s + 1));
      if (s + 2 < S && skip_ok(s + 2)) v = log_add(v, b(t + 1, s + 2) + e(t + 1, s + 2));
      b(t, s) = v;
    }
  }
  return lat;
}

inline void check_ctc_logits(std::string_view op, const Shape& s, std::span<const int> targets) {
  if (s.size() != 2 || s[1] < 2) throw shape_mismatch(op, s, Shape{0, 0});
  check_labels(op, targets, s[1]);
}

}  // namespace detail

inline CtcResult ctc_loss(const Tensor& logits, std::span<const int> targets) {
  detail::check_ctc_logits("ctc_loss", logits.shape, targets);
  if (!ctc_feasible(logits.dim(0), targets)) {
    return {std::numeric_limits<double>::infinity(), false};
  }
  const auto lat = detail::ctc_lattice(detail::log_softmax_last(logits), targets);
  return {-lat.log_prob, true};
}

struct CtcValueAndGrad {
  CtcResult result;
  Tensor grad_logits;  // zero when infeasible
};

inline CtcValueAndGrad ctc_loss_and_grad(const Tensor& logits, std::span<const int> targets) {
  detail::check_ctc_logits("ctc_loss", logits.shape, targets);
  Tensor grad(logits.shape, 0.0);
  if (!ctc_feasible(logits.dim(0), targets)) {
    return {{std::numeric_limits<double>::infinity(), false}, std::move(grad)};
  }
  const Tensor lp = detail::log_softmax_last(logits);
  const auto lat = detail::ctc_lattice(lp, targets);
  const std::size_t T = logits.dim(0), K = logits.dim(1), S = lat.ext.size();
  for (std::size_t t = 0; t < T; ++t) {
    double* g = grad.row(t);
    for (std::size_t s = 0; s < S; ++s) {
      const double occ = lat.log_alpha(t, s) + lat.log_beta(t, s) - lat.log_prob;
      if (occ != kNegInf) g[static_cast<std::size_t>(lat.ext[s])] -= std::exp(occ);
    }
    double sum = 0.0;
    for (std::size_t j = 0; j < K; ++j) sum += g[j];
    for (std::size_t j = 0; j < K; ++j) g[j] -= std::exp(lp(t, j)) * sum;
  }
  return {{-lat.log_prob, true}, std::move(grad)};
}

// Tape version. Infeasible targets produce +inf with a zero gradient; callers
// check ctc_feasible() first to skip them.
inline Var ctc_loss(Var logits, std::span<const int> targets) {
  CtcValueAndGrad r = ctc_loss_and_grad(logits.value(), targets);
  return logits.tape().record("ctc_loss", Tensor::scalar(r.result.loss), {logits},
                              [g = std::move(r.grad_logits)](const BackwardContext& c) {
                                detail::add_into(c.dx(0), g, c.grad.data[0]);
                              });
}

// Enumerates all K^T frame labelings and keeps those collapsing to the
// target. Bounded to T <= 5.
inline BruteForceResult ctc_loss_bruteforce(const Tensor& logits, std::span<const int> targets) {
  detail::check_ctc_logits("ctc_loss_bruteforce", logits.shape, targets);
  const std::size_t T = logits.dim(0), K = logits.dim(1);
  if (T > 5) throw std::invalid_argument("ctc_loss_bruteforce: enumeration bound exceeded (T <= 5)");
  const Tensor lp = detail::log_softmax_last(logits);
  const int blank = static_cast<int>(K) - 1;
  std::vector<int> path(T, 0);
  double total = 0.0;
  std::size_t count = 0;
  std::size_t combos = 1;
  for (std::size_t t = 0; t < T; ++t) combos *= K;
  for (std::size_t c = 0; c < combos; ++c) {
    std::size_t rest = c;
    double logp = 0.0;
    for (std::size_t t = 0; t < T; ++t) {
      path[t] = static_cast<int>(rest % K);
      rest /= K;
      logp += lp(t, static_cast<std::size_t>(path[t]));
    }
    const auto collapsed = collapse_alignment(path, blank);
    if (std::equal(collapsed.begin(), collapsed.end(), targets.begin(), targets.end())) {
      total += std::exp(logp);
      ++count;
    }
  }
  return {count == 0 ? std::numeric_limits<double>::infinity() : -std::log(total), count};
}

}  // namespace sprefix
