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

#include <cmath>
#include <limits>
#include <numeric>

#include <gtest/gtest.h>

#include "sprefix/gradcheck.hpp"
#include "sprefix/transducer.hpp"
#include "support/test_util.hpp"

namespace sprefix {
namespace {

using testing::max_abs_diff;
using testing::random_tensor;
using testing::single;

constexpr double kLn62_5 = 4.1351665567423561;
constexpr double kTwoLn5 = 3.2188758248682006;
constexpr double kLn25Over3 = 2.1202635362000910;

// Probability-domain references, written independently of the library.
std::vector<double> softmax_row(const double* z, std::size_t k) {
  double m = z[0];
  for (std::size_t j = 1; j < k; ++j) m = std::max(m, z[j]);
  std::vector<double> p(k);
  double s = 0.0;
  for (std::size_t j = 0; j < k; ++j) s += p[j] = std::exp(z[j] - m);
  for (double& v : p) v /= s;
  return p;
}

double rnnt_reference(const Tensor& logits, const std::vector<int>& y) {
  const std::size_t T = logits.dim(0), U = y.size(), K = logits.dim(2);
  auto prob = [&](std::size_t t, std::size_t u, std::size_t k) {
    return softmax_row(&logits.data[(t * (U + 1) + u) * K], K)[k];
  };
  std::vector<double> a(T * (U + 1), 0.0);
  a[0] = 1.0;
  for (std::size_t t = 0; t < T; ++t) {
    for (std::size_t u = 0; u <= U; ++u) {
      if (t == 0 && u == 0) continue;
      double v = 0.0;
      if (t > 0) v += a[(t - 1) * (U + 1) + u] * prob(t - 1, u, K - 1);
      if (u > 0) v += a[t * (U + 1) + u - 1] * prob(t, u - 1, static_cast<std::size_t>(y[u - 1]));
      a[t * (U + 1) + u] = v;
    }
  }
  return -std::log(a[(T - 1) * (U + 1) + U] * prob(T - 1, U, K - 1));
}

double ctc_reference(const Tensor& logits, const std::vector<int>& y) {
  const std::size_t T = logits.dim(0), K = logits.dim(1);
  const int blank = static_cast<int>(K) - 1;
  std::vector<int> ext{blank};
  for (int v : y) ext.insert(ext.end(), {v, blank});
  const std::size_t S = ext.size();
  std::vector<double> a(S, 0.0), next(S);
  auto p = [&](std::size_t t) { return softmax_row(&logits.data[t * K], K); };
  auto pt = p(0);
  a[0] = pt[static_cast<std::size_t>(blank)];
  if (S > 1) a[1] = pt[static_cast<std::size_t>(ext[1])];
  for (std::size_t t = 1; t < T; ++t) {
    pt = p(t);
    for (std::size_t s = 0; s < S; ++s) {
      double v = a[s] + (s > 0 ? a[s - 1] : 0.0);
      if (s > 1 && ext[s] != blank && ext[s] != ext[s - 2]) v += a[s - 2];
      next[s] = v * pt[static_cast<std::size_t>(ext[s])];
    }
    a = next;
  }
  const double total = a[S - 1] + (S > 1 ? a[S - 2] : 0.0);
  return total > 0.0 ? -std::log(total) : std::numeric_limits<double>::infinity();
}

std::vector<int> random_targets(Rng& rng, std::size_t n, std::size_t vocab) {
  std::vector<int> y(n);
  for (int& v : y) v = static_cast<int>(rng.below(vocab));
  return y;
}

std::size_t binomial(std::size_t n, std::size_t k) {
  std::size_t r = 1;
  for (std::size_t i = 1; i <= k; ++i) r = r * (n - k + i) / i;
  return r;
}

// ---- RNNT ------------------------------------------------------------------

TEST(Rnnt, FixedUniformCases) {
  const std::vector<int> y{0};
  EXPECT_NEAR(rnnt_loss_and_grad(Tensor({1, 2, 5}, 0.0), y).loss, kTwoLn5, 1e-12);
  EXPECT_NEAR(rnnt_loss_and_grad(Tensor({2, 2, 5}, 0.0), y).loss, kLn62_5, 1e-12);
  EXPECT_NEAR(rnnt_loss_bruteforce(Tensor({2, 2, 5}, 0.0), y).loss, kLn62_5, 1e-12);
  // Empty target: T blanks at (1/K) each.
  EXPECT_NEAR(rnnt_loss_and_grad(Tensor({3, 1, 4}, 0.0), std::vector<int>{}).loss, 3.0 * std::log(4.0), 1e-12);
}

class RnntRandom : public ::testing::TestWithParam<int> {};

TEST_P(RnntRandom, AgreesWithReferencesAndBruteForce) {
  Rng rng(static_cast<std::uint64_t>(GetParam()));
  for (int i = 0; i < 20; ++i) {
    const std::size_t T = 1 + rng.below(4), U = rng.below(4), V = 1 + rng.below(4);
    const auto y = random_targets(rng, U, V);
    const Tensor logits = random_tensor(rng, {T, U + 1, V + 1}, 1.5);
    const double loss = rnnt_loss_and_grad(logits, y).loss;
    const auto brute = rnnt_loss_bruteforce(logits, y);
    EXPECT_NEAR(loss, rnnt_reference(logits, y), 1e-10);
    EXPECT_NEAR(loss, brute.loss, 1e-10);
    EXPECT_EQ(brute.paths, binomial(T - 1 + U, U));
    Tape tape;
    EXPECT_NEAR(rnnt_loss_autodiff(tape.constant(logits), y).item(), loss, 1e-10);
  }
}

TEST_P(RnntRandom, EveryAntiDiagonalCarriesTheTotalMass) {
  Rng rng(static_cast<std::uint64_t>(GetParam()) + 50);
  const std::size_t T = 2 + rng.below(4), U = 1 + rng.below(3), V = 3;
  const auto y = random_targets(rng, U, V);
  const Tensor logits = random_tensor(rng, {T, U + 1, V + 1});
  const auto lat = rnnt_lattice(logits, y);
  for (std::size_t n = 0; n + 1 <= T + U - 1; ++n) {
    double s = 0.0;
    for (std::size_t t = 0; t < T; ++t) {
      if (n < t || n - t > U) continue;
      s += std::exp(lat.log_alpha(t, n - t) + lat.log_beta(t, n - t));
    }
    EXPECT_NEAR(std::log(s), lat.log_prob, 1e-10) << "diagonal " << n;
  }
}

TEST_P(RnntRandom, AnalyticGradientMatchesAutodiffAndFiniteDifferences) {
  Rng rng(static_cast<std::uint64_t>(GetParam()) + 100);
  const std::size_t T = 1 + rng.below(4), U = rng.below(3), V = 2 + rng.below(3);
  const auto y = random_targets(rng, U, V);
  const Tensor logits = random_tensor(rng, {T, U + 1, V + 1});
  const auto r = rnnt_loss_and_grad(logits, y);

  Tape tape;
  Var z = tape.leaf("z", logits);
  const Gradients ga = tape.backward(rnnt_loss_autodiff(z, y));
  EXPECT_LE(max_abs_diff(r.grad_logits, ga.at("z")), 1e-10);

  // Each node's gradient sums to zero (softmax over labels).
  const std::size_t K = V + 1;
  for (std::size_t n = 0; n < T * (U + 1); ++n) {
    double s = 0.0;
    for (std::size_t k = 0; k < K; ++k) s += r.grad_logits.data[n * K + k];
    EXPECT_NEAR(s, 0.0, 1e-12);
  }

  LossBuilder loss = [&](Bindings& b) { return rnnt_loss(b("z"), y); };
  EXPECT_LE(finite_difference_check(loss, single("z", logits), 1e-3, Stencil::central4).max_relative_error, 1e-7);
}

INSTANTIATE_TEST_SUITE_P(Seeds, RnntRandom, ::testing::Range(1, 6));

TEST(Rnnt, InvariantToPerNodeLogitShift) {
  Rng rng(8);
  const std::vector<int> y{1, 0};
  Tensor logits = random_tensor(rng, {3, 3, 4});
  const double before = rnnt_loss_and_grad(logits, y).loss;
  for (std::size_t k = 0; k < 4; ++k) logits(1, 2, k) += 7.5;
  EXPECT_NEAR(rnnt_loss_and_grad(logits, y).loss, before, 1e-12);
}

TEST(Rnnt, StableForLargeLogits) {
  Rng rng(10);
  const std::vector<int> y{2, 1};
  const Tensor logits = random_tensor(rng, {4, 3, 4}, 300.0);
  const auto r = rnnt_loss_and_grad(logits, y);
  EXPECT_TRUE(std::isfinite(r.loss));
  for (double g : r.grad_logits.data) EXPECT_TRUE(std::isfinite(g));
}

TEST(Rnnt, RejectsBadInputs) {
  const std::vector<int> y{0, 1};
  EXPECT_THROW(rnnt_loss_and_grad(Tensor({2, 2, 4}), y), ShapeError);  // U+1 mismatch
  EXPECT_THROW(rnnt_loss_and_grad(Tensor({2, 3}), y), ShapeError);
  EXPECT_THROW(rnnt_loss_and_grad(Tensor({2, 3, 4}), std::vector<int>{0, 3}), std::out_of_range);  // blank id
  EXPECT_THROW(rnnt_loss_and_grad(Tensor({2, 3, 4}), std::vector<int>{-1, 0}), std::out_of_range);
  EXPECT_THROW(rnnt_loss_bruteforce(Tensor({7, 2, 3}), std::vector<int>{0}), std::invalid_argument);
}

// ---- CTC -------------------------------------------------------------------

TEST(Ctc, FixedUniformCase) {
  const std::vector<int> y{0};
  EXPECT_NEAR(ctc_loss(Tensor({2, 5}, 0.0), y).loss, kLn25Over3, 1e-12);
  EXPECT_EQ(ctc_loss_bruteforce(Tensor({2, 5}, 0.0), y).paths, 3u);
}

TEST(Ctc, CollapseAndFeasibility) {
  const int b = 9;
  EXPECT_EQ(collapse_alignment(std::vector<int>{1, 1, b, 1, 2, 2, b}, b), (std::vector<int>{1, 1, 2}));
  EXPECT_EQ(collapse_alignment(std::vector<int>{b, b}, b), std::vector<int>{});
  EXPECT_TRUE(ctc_feasible(2, std::vector<int>{1, 2}));
  EXPECT_FALSE(ctc_feasible(2, std::vector<int>{1, 1}));
  EXPECT_TRUE(ctc_feasible(3, std::vector<int>{1, 1}));
  EXPECT_TRUE(ctc_feasible(1, std::vector<int>{}));
}

TEST(Ctc, InfeasibleTargetsGiveInfinityAndZeroGradient) {
  Rng rng(3);
  const Tensor logits = random_tensor(rng, {2, 4});
  const std::vector<int> y{1, 1};
  const auto r = ctc_loss_and_grad(logits, y);
  EXPECT_FALSE(r.result.feasible);
  EXPECT_TRUE(std::isinf(r.result.loss));
  EXPECT_EQ(r.grad_logits, Tensor({2, 4}, 0.0));
  EXPECT_EQ(ctc_loss_bruteforce(logits, y).paths, 0u);
}

class CtcRandom : public ::testing::TestWithParam<int> {};

TEST_P(CtcRandom, AgreesWithReferencesAndBruteForce) {
  Rng rng(static_cast<std::uint64_t>(GetParam()) + 200);
  for (int i = 0; i < 20; ++i) {
    const std::size_t T = 1 + rng.below(5), U = rng.below(4), V = 1 + rng.below(3);
    const auto y = random_targets(rng, U, V);
    const Tensor logits = random_tensor(rng, {T, V + 1}, 1.5);
    const auto r = ctc_loss(logits, y);
    const auto brute = ctc_loss_bruteforce(logits, y);
    const double ref = ctc_reference(logits, y);
    if (!r.feasible) {
      EXPECT_TRUE(std::isinf(ref));
      EXPECT_EQ(brute.paths, 0u);
      continue;
    }
    EXPECT_NEAR(r.loss, ref, 1e-10);
    EXPECT_NEAR(r.loss, brute.loss, 1e-10);
  }
}

TEST_P(CtcRandom, GradientMatchesFiniteDifferences) {
  Rng rng(static_cast<std::uint64_t>(GetParam()) + 300);
  const std::size_t T = 3 + rng.below(3), V = 3;
  const auto y = random_targets(rng, 1 + rng.below(2), V);
  ASSERT_TRUE(ctc_feasible(T, y));
  LossBuilder loss = [&](Bindings& b) { return ctc_loss(b("z"), y); };
  const Tensor logits = random_tensor(rng, {T, V + 1});
  EXPECT_LE(finite_difference_check(loss, single("z", logits), 1e-3, Stencil::central4).max_relative_error, 1e-7);
}

INSTANTIATE_TEST_SUITE_P(Seeds, CtcRandom, ::testing::Range(1, 6));

TEST(Ctc, RejectsBadInputs) {
  EXPECT_THROW(ctc_loss(Tensor({2, 3, 4}), std::vector<int>{0}), ShapeError);
  EXPECT_THROW(ctc_loss(Tensor({2, 4}), std::vector<int>{3}), std::out_of_range);
  EXPECT_THROW(ctc_loss_bruteforce(Tensor({6, 3}), std::vector<int>{0}), std::invalid_argument);
}

// ---- LM and joint ----------------------------------------------------------

TEST(LmLoss, UniformLogitsGiveLengthTimesLogVocab) {
  Tape tape;
  const std::vector<int> y{0, 3, 2};
  EXPECT_NEAR(lm_loss(tape.constant(Tensor({3, 5}, 0.0)), y).item(), 3.0 * std::log(5.0), 1e-12);
  EXPECT_THROW(lm_loss(tape.constant(Tensor({2, 5})), y), ShapeError);
  EXPECT_THROW(lm_loss(tape.constant(Tensor({3, 3})), y), std::out_of_range);
}

TEST(LmLoss, GradientMatchesFiniteDifferences) {
  Rng rng(12);
  const std::vector<int> y{1, 0, 4};
  LossBuilder loss = [&](Bindings& b) { return lm_loss(b("z"), y); };
  EXPECT_LE(finite_difference_check(loss, single("z", random_tensor(rng, {3, 5})), 1e-3, Stencil::central4)
                .max_relative_error,
            1e-7);
}

TEST(JointLoss, BoundaryWeightsReturnTheOperandUnchanged) {
  Tape tape;
  Var lm = tape.leaf("lm", Tensor::scalar(0.1 + 0.2));
  Var asr = tape.leaf("asr", Tensor::scalar(1.0 / 3.0));
  EXPECT_EQ(joint_loss(lm, asr, {1.0}).id(), lm.id());
  EXPECT_EQ(joint_loss(lm, asr, {0.0}).id(), asr.id());
  EXPECT_DOUBLE_EQ(joint_loss(lm, asr, {0.25}).item(), 0.25 * lm.item() + 0.75 * asr.item());
  EXPECT_EQ(joint_loss(2.0, 5.0, {1.0}), 2.0);
  EXPECT_EQ(joint_loss(2.0, 5.0, {0.0}), 5.0);
  EXPECT_THROW(joint_loss(1.0, 1.0, {1.5}), std::invalid_argument);
  EXPECT_THROW(joint_loss(1.0, 1.0, {-0.1}), std::invalid_argument);
  EXPECT_THROW(joint_loss(1.0, 1.0, {std::nan("")}), std::invalid_argument);
}

}  // namespace
}  // namespace sprefix
