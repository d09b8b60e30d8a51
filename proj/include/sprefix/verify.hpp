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

// Self-check suites shared by `sprefix verify` and the acceptance runner.

#pragma once

#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <numbers>
#include <string>
#include <vector>

#include "sprefix/corpus.hpp"
#include "sprefix/gradcheck.hpp"
#include "sprefix/model.hpp"
#include "sprefix/rng.hpp"
#include "sprefix/training.hpp"
#include "sprefix/transducer.hpp"

namespace sprefix {

struct SuiteResult {
  std::string suite;
  std::size_t checks = 0;
  std::size_t failures = 0;
  double max_error = 0.0;
  double seconds = 0.0;
  std::vector<std::string> lines;

  bool ok() const { return failures == 0; }

  void check(bool pass, const std::string& what) {
    ++checks;
    if (!pass) ++failures;
    lines.push_back(std::string(pass ? "ok   " : "FAIL ") + what);
  }

  void note(const std::string& what) { lines.push_back("     " + what); }
};

namespace verify {

inline std::string fmt(const char* f, double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, f, v);
  return buf;
}

inline std::string sci(double v) { return fmt("%.3e", v); }

inline Tensor random_tensor(Rng& rng, Shape shape, double sd) {
  Tensor t(std::move(shape));
  for (double& v : t.data) v = rng.normal(0.0, sd);
  return t;
}

inline std::vector<int> random_tokens(Rng& rng, std::size_t n, std::size_t vocab) {
  std::vector<int> out(n);
  for (int& t : out) t = static_cast<int>(rng.below(vocab));
  return out;
}

// Small enough for exhaustive finite differences.
inline PrefixLMConfig tiny_config(AsrHead head) {
  PrefixLMConfig c;
  c.width = 8;
  c.layers = 2;
  c.heads = 2;
  c.vocab = 12;
  c.feature_dim = 3;
  c.subsample_factor = 1;
  c.prompt_len = 2;
  c.languages = 2;
  c.encoder_layers = 1;
  c.ffn_mult = 2;
  c.joint_dim = 6;
  c.pred_dim = 4;
  c.max_frames = 16;
  c.max_text_len = 8;
  c.asr_head = head;
  return c;
}

inline Utterance random_utterance(Rng& rng, const PrefixLMConfig& cfg, std::size_t frames,
                                  std::size_t tokens, std::string id) {
  Utterance u;
  u.id = std::move(id);
  u.lang_id = static_cast<int>(rng.below(cfg.languages));
  u.lang = "l" + std::to_string(u.lang_id);
  u.frames = random_tensor(rng, {frames, cfg.feature_dim}, 1.0);
  u.tokens = random_tokens(rng, tokens, cfg.vocab - 1);
  return u;
}

inline Tensor uniform_logits(std::size_t t, std::size_t u1, std::size_t k) {
  return Tensor({t, u1, k}, 0.0);
}

}  // namespace verify

// Transducer loss against path enumeration on random small lattices.
inline SuiteResult verify_rnnt_oracle(std::uint64_t seed, std::size_t instances = 100) {
  SuiteResult r;
  r.suite = "rnnt-oracle";
  const auto t0 = std::chrono::steady_clock::now();
  Rng rng(derive_seed(seed, fnv1a64("rnnt-oracle")));

  {
    const std::vector<int> y{0};
    const double a = rnnt_loss_and_grad(verify::uniform_logits(1, 2, 5), y).loss;
    const double e = 2.0 * std::log(5.0);
    r.check(std::abs(a - e) <= 1e-12, "T=1 U=1 uniform over 5: loss " + verify::fmt("%.10f", a) +
                                          " expected 2 ln 5 = " + verify::fmt("%.10f", e));
    const double b = rnnt_loss_and_grad(verify::uniform_logits(2, 2, 5), y).loss;
    const double f = std::log(62.5);
    r.check(std::abs(b - f) <= 1e-12, "T=2 U=1 uniform over 5: loss " + verify::fmt("%.10f", b) +
                                          " expected ln 62.5 = " + verify::fmt("%.10f", f));
  }

  double max_delta = 0.0, max_autodiff = 0.0;
  std::size_t bad = 0, bad_paths = 0;
  for (std::size_t i = 0; i < instances; ++i) {
    const auto T = static_cast<std::size_t>(rng.between(1, 4));
    const auto U = static_cast<std::size_t>(rng.between(1, 3));
    const auto V = static_cast<std::size_t>(rng.between(2, 4));
    const Tensor logits = verify::random_tensor(rng, {T, U + 1, V + 1}, 2.0);
    const auto y = verify::random_tokens(rng, U, V);
    const double fast = rnnt_loss_and_grad(logits, y).loss;
    const BruteForceResult brute = rnnt_loss_bruteforce(logits, y);
    Tape tape;
    const double via_tape = rnnt_loss_autodiff(tape.constant(logits), y).item();
    const double d = std::abs(fast - brute.loss);
    max_delta = std::max(max_delta, d);
    max_autodiff = std::max(max_autodiff, std::abs(via_tape - brute.loss));
    if (!(d <= 1e-8)) ++bad;
    // Monotone paths through a T x (U+1) grid: C(T - 1 + U, U).
    double paths = 1.0;
    for (std::size_t k = 1; k <= U; ++k) paths = paths * static_cast<double>(T - 1 + k) / static_cast<double>(k);
    if (static_cast<double>(brute.paths) != std::round(paths)) ++bad_paths;
  }
  r.max_error = max_delta;
  r.check(bad == 0, std::to_string(instances) + " random lattices (T<=4, U<=3, V<=4): max |loss - brute| = " +
                        verify::sci(max_delta) + " (tol 1e-8)");
  r.check(max_autodiff <= 1e-8, "autodiff-through-recursion loss: max |loss - brute| = " + verify::sci(max_autodiff));
  r.check(bad_paths == 0, "enumerated path counts equal C(T-1+U, U)");
  r.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  return r;
}

inline SuiteResult verify_ctc_oracle(std::uint64_t seed, std::size_t instances = 100) {
  SuiteResult r;
  r.suite = "ctc-oracle";
  const auto t0 = std::chrono::steady_clock::now();
  Rng rng(derive_seed(seed, fnv1a64("ctc-oracle")));
  {
    const std::vector<int> y{0};
    const double a = ctc_loss(Tensor({2, 5}, 0.0), y).loss;
    const double e = std::log(25.0 / 3.0);
    r.check(std::abs(a - e) <= 1e-12, "T=2 target length 1 uniform over 5: loss " + verify::fmt("%.10f", a) +
                                          " expected ln(25/3) = " + verify::fmt("%.10f", e));
  }
  double max_delta = 0.0;
  std::size_t bad = 0, infeasible = 0;
  for (std::size_t i = 0; i < instances; ++i) {
    const auto T = static_cast<std::size_t>(rng.between(1, 5));
    const auto U = static_cast<std::size_t>(rng.between(1, 3));
    const auto V = static_cast<std::size_t>(rng.between(2, 4));
    const Tensor logits = verify::random_tensor(rng, {T, V + 1}, 2.0);
    const auto y = verify::random_tokens(rng, U, V);
    const CtcResult fast = ctc_loss(logits, y);
    const BruteForceResult brute = ctc_loss_bruteforce(logits, y);
    if (!fast.feasible) {
      ++infeasible;
      if (brute.paths != 0 || !std::isinf(fast.loss)) ++bad;
      continue;
    }
    const double d = std::abs(fast.loss - brute.loss);
    max_delta = std::max(max_delta, d);
    if (!(d <= 1e-8)) ++bad;
  }
  r.max_error = max_delta;
  r.check(bad == 0, std::to_string(instances) + " random lattices (T<=5, U<=3): max |loss - brute| = " +
                        verify::sci(max_delta) + " (tol 1e-8), " + std::to_string(infeasible) +
                        " infeasible with zero paths");
  r.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  return r;
}

// Finite differences (fourth-order central stencil, h = 1e-3) over every
// parameter of a tiny end-to-end model.
inline SuiteResult verify_gradients(std::uint64_t seed, double tolerance = 1e-5) {
  SuiteResult r;
  r.suite = "grad";
  const auto t0 = std::chrono::steady_clock::now();
  Rng rng(derive_seed(seed, fnv1a64("grad")));
  constexpr double kStep = 1e-3;

  const PrefixLMConfig rcfg = verify::tiny_config(AsrHead::rnnt);
  const PrefixLMConfig ccfg = verify::tiny_config(AsrHead::ctc);
  const PrefixLM rnnt_model(rcfg, derive_seed(seed, 1));
  const PrefixLM ctc_model(ccfg, derive_seed(seed, 2));
  const Utterance u = verify::random_utterance(rng, rcfg, 8, 3, "grad-0");

  auto lm_of = [&](const PrefixLM& m) {
    return [&m, &u](Bindings& b) {
      auto tf = m.run_teacher_forced(b, u);
      return lm_loss(tf.outputs.text_logits, tf.targets);
    };
  };
  auto rnnt_of = [&](bool autodiff) {
    return [&rnnt_model, &u, autodiff](Bindings& b) {
      auto tf = rnnt_model.run_teacher_forced(b, u);
      Var z = transducer_joint(b, rnnt_model.config(), tf.outputs.speech_outputs, u.tokens);
      return autodiff ? rnnt_loss_autodiff(z, u.tokens) : rnnt_loss(z, u.tokens);
    };
  };
  const LossBuilder ctc_fn = [&](Bindings& b) {
    auto tf = ctc_model.run_teacher_forced(b, u);
    return ctc_loss(ctc_logits(b, tf.outputs.speech_outputs), u.tokens);
  };
  const LossBuilder joint_fn = [&](Bindings& b) {
    auto tf = rnnt_model.run_teacher_forced(b, u);
    Var lm = lm_loss(tf.outputs.text_logits, tf.targets);
    Var asr = rnnt_loss(transducer_joint(b, rcfg, tf.outputs.speech_outputs, u.tokens), u.tokens);
    return joint_loss(lm, asr, JointLossConfig{0.5});
  };

  struct Case {
    std::string name;
    LossBuilder fn;
    const PrefixLM* model;
  };
  const std::vector<Case> cases = {
      {"L_LM", lm_of(rnnt_model), &rnnt_model},
      {"L_RNNT (alpha/beta gradient)", rnnt_of(false), &rnnt_model},
      {"L_RNNT (autodiff through recursion)", rnnt_of(true), &rnnt_model},
      {"L_CTC", ctc_fn, &ctc_model},
      {"L_joint alpha=0.5", joint_fn, &rnnt_model},
  };
  for (const Case& c : cases) {
    const GradCheckReport rep = finite_difference_check(c.fn, c.model->params(), kStep, Stencil::central4);
    r.max_error = std::max(r.max_error, rep.max_relative_error);
    r.check(rep.max_relative_error <= tolerance,
            c.name + ": max relative error " + verify::sci(rep.max_relative_error) + " over " +
                std::to_string(rep.entries_checked) + " entries (worst " + rep.worst_parameter + "[" +
                std::to_string(rep.worst_index) + "]), tol " + verify::sci(tolerance));
  }

  // Both transducer gradients, parameter by parameter.
  auto grads_of = [&](const LossBuilder& fn) {
    Tape tape;
    Bindings b(tape, rnnt_model.params());
    Var loss = fn(b);
    for (const auto& e : rnnt_model.params().entries()) b(e.name);
    return tape.backward(loss);
  };
  const Gradients ga = grads_of(rnnt_of(false)), gb = grads_of(rnnt_of(true));
  double worst = 0.0;
  for (const auto& [name, t] : ga) {
    const Tensor& o = gb.at(name);
    for (std::size_t i = 0; i < t.size(); ++i) {
      const double a = t.data[i], b = o.data[i];
      worst = std::max(worst, std::abs(a - b) / std::max(1e-12, std::abs(a) + std::abs(b)));
    }
  }
  r.check(worst <= 1e-8, "analytic vs autodiff transducer gradients: max relative difference " +
                             verify::sci(worst) + " (tol 1e-8)");
  r.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  return r;
}

// Perturbation sweep over the prefix LM attention pattern.
inline SuiteResult verify_mask(std::uint64_t seed, std::size_t trials = 50) {
  SuiteResult r;
  r.suite = "mask";
  const auto t0 = std::chrono::steady_clock::now();
  Rng rng(derive_seed(seed, fnv1a64("mask")));
  const PrefixLMConfig cfg = verify::tiny_config(AsrHead::rnnt);
  const PrefixLM model(cfg, derive_seed(seed, 3));

  struct Out {
    Tensor text;
    Tensor speech;
  };
  auto run = [&](const Tensor& frames, const std::vector<int>& text_in, int lang) {
    Tape tape;
    Bindings b(tape, model.params(), false);
    Var prompt = model.select_prompt(b, lang);
    Var prefix = model.encode(b, subsample(frames, cfg.subsample_factor));
    ModelOutputs o = model.forward(b, prompt, prefix, text_in);
    return Out{o.text_logits.value(), o.speech_outputs.value()};
  };

  std::size_t causal_violations = 0, prefix_violations = 0, reach = 0;
  double worst_leak = 0.0;
  for (std::size_t trial = 0; trial < trials; ++trial) {
    const auto frames_n = static_cast<std::size_t>(rng.between(2, 8));
    const auto text_n = static_cast<std::size_t>(rng.between(2, static_cast<long long>(cfg.max_text_len)));
    const Tensor frames = verify::random_tensor(rng, {frames_n, cfg.feature_dim}, 1.0);
    std::vector<int> text = verify::random_tokens(rng, text_n, cfg.vocab);
    const int lang = static_cast<int>(rng.below(cfg.languages));
    const Out base = run(frames, text, lang);

    const auto j = static_cast<std::size_t>(rng.below(text_n));
    std::vector<int> changed = text;
    changed[j] = static_cast<int>((static_cast<std::size_t>(text[j]) + 1 + rng.below(cfg.vocab - 1)) % cfg.vocab);
    const Out pert = run(frames, changed, lang);
    const std::size_t v = base.text.dim(1);
    for (std::size_t i = 0; i < j * v; ++i) {
      const double d = std::abs(base.text.data[i] - pert.text.data[i]);
      worst_leak = std::max(worst_leak, d);
      if (d > 1e-12) {
        ++causal_violations;
        break;
      }
    }
    if (!(base.speech == pert.speech)) ++prefix_violations;

    Tensor moved = frames;
    const auto f = static_cast<std::size_t>(rng.below(frames_n));
    for (std::size_t k = 0; k < cfg.feature_dim; ++k) moved(f, k) += 1.0;
    const Out shifted = run(moved, text, lang);
    const double* a = base.text.row(text_n - 1);
    const double* b = shifted.text.row(text_n - 1);
    for (std::size_t k = 0; k < v; ++k) {
      if (std::abs(a[k] - b[k]) > 1e-9) {
        ++reach;
        break;
      }
    }
  }
  r.max_error = worst_leak;
  r.check(causal_violations == 0, std::to_string(trials) + " text perturbations: " +
                                      std::to_string(causal_violations) +
                                      " changed an earlier text logit (max leak " + verify::sci(worst_leak) +
                                      ", tol 1e-12)");
  r.check(prefix_violations == 0, "prefix outputs unchanged by text perturbations in " +
                                      std::to_string(trials - prefix_violations) + "/" +
                                      std::to_string(trials) + " trials");
  r.check(reach > 0, "prefix-frame perturbation reached the final text logit in " + std::to_string(reach) +
                         "/" + std::to_string(trials) + " trials");

  std::size_t mask_errors = 0;
  for (std::size_t p = 1; p <= 6; ++p) {
    for (std::size_t n = 1; n <= 6; ++n) {
      const AttentionMask m = build_attention_mask(p, n);
      for (std::size_t i = 0; i < p + n; ++i) {
        for (std::size_t k = 0; k < p + n; ++k) {
          const bool expect = k < p ? true : (i >= p && k <= i);
          if (m(i, k) != expect) ++mask_errors;
        }
      }
    }
  }
  r.check(mask_errors == 0, "mask table matches (col < P) or (P <= col <= row) for P, U' in [1, 6]");
  r.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  return r;
}

namespace verify {

// Single-loss step built directly from the regime masks, used as the
// reference for the alpha = 0 and alpha = 1 boundaries.
inline void reference_step(std::span<const Utterance* const> batch, PrefixLM& model,
                           const Regime& regime, AdamOptimizer& opt, bool lm_objective) {
  const PrefixLMConfig& cfg = model.config();
  Gradients sum;
  std::size_t count = 0;
  for (const Utterance* u : batch) {
    Tape tape;
    Bindings b(tape, model.params());
    auto tf = model.run_teacher_forced(b, *u);
    Var loss = lm_objective
                   ? lm_loss(tf.outputs.text_logits, tf.targets)
                   : rnnt_loss(transducer_joint(b, cfg, tf.outputs.speech_outputs, u->tokens), u->tokens);
    for (const auto& [name, g] : tape.backward(loss)) {
      auto [it, fresh] = sum.try_emplace(name, g);
      if (!fresh) {
        for (std::size_t i = 0; i < g.size(); ++i) it->second.data[i] += g.data[i];
      }
    }
    ++count;
  }
  for (auto& [name, g] : sum) {
    for (double& v : g.data) v *= 1.0 / static_cast<double>(count);
  }
  RoutedUpdate upd;
  for (const auto& e : model.params().entries()) {
    const bool on = lm_objective ? regime.lm_updates(e.group) : regime.asr_updates(e.group);
    auto it = sum.find(e.name);
    upd.update.emplace(e.name, on && it != sum.end() ? it->second : Tensor(e.value.shape, 0.0));
    if (on) upd.active.insert(e.name);
  }
  opt.step(model.params(), upd);
}

inline bool bit_equal(const Tensor& a, const Tensor& b) {
  return a.shape == b.shape &&
         std::memcmp(a.data.data(), b.data.data(), a.data.size() * sizeof(double)) == 0;
}

inline std::vector<Utterance> routing_corpus(std::uint64_t seed, const PrefixLMConfig& cfg) {
  CorpusSpec spec;
  spec.languages = cfg.languages;
  spec.vocab = cfg.vocab - 1;
  spec.feature_dim = cfg.feature_dim;
  spec.train_utterances = 8;
  spec.test_utterances = 0;
  spec.min_tokens = 2;
  spec.max_tokens = 4;
  spec.min_frames_per_token = 1;
  spec.max_frames_per_token = 2;
  spec.seed = seed;
  return generate_synthetic_corpus(spec).train;
}

}  // namespace verify

inline SuiteResult verify_routing(std::uint64_t seed, std::size_t steps = 50) {
  SuiteResult r;
  r.suite = "routing";
  const auto t0 = std::chrono::steady_clock::now();
  const PrefixLMConfig cfg = verify::tiny_config(AsrHead::rnnt);
  const std::vector<Utterance> data = verify::routing_corpus(seed, cfg);
  std::vector<const Utterance*> all;
  for (const auto& u : data) all.push_back(&u);
  auto batch_at = [&](std::size_t step) {
    return std::vector<const Utterance*>{all[(2 * step) % all.size()], all[(2 * step + 1) % all.size()]};
  };
  auto train = [&](const Regime& regime, double alpha, std::size_t n) {
    PrefixLM model(cfg, derive_seed(seed, 4));
    AdamOptimizer opt;
    for (std::size_t s = 0; s < n; ++s) {
      const auto b = batch_at(s);
      train_step(b, model, regime, opt, JointLossConfig{alpha});
    }
    return model;
  };
  const ParameterRegistry init = PrefixLM(cfg, derive_seed(seed, 4)).params();
  auto groups_changed = [&](const ParameterRegistry& after, ParamGroup g, bool& all_changed,
                            bool& none_changed) {
    all_changed = true;
    none_changed = true;
    for (const auto& e : after.entries()) {
      if (e.group != g) continue;
      const bool same = verify::bit_equal(e.value, init.value(e.name));
      all_changed = all_changed && !same;
      none_changed = none_changed && same;
    }
  };

  {
    const PrefixLM m = train(Regime::frozen_llm(), 0.5, steps);
    bool all = false, none = false;
    groups_changed(m.params(), ParamGroup::llm, all, none);
    r.check(none, "frozen_llm, " + std::to_string(steps) + " steps: every llm tensor byte-identical to init");
    for (ParamGroup g : {ParamGroup::prompt, ParamGroup::encoder, ParamGroup::transducer_head}) {
      groups_changed(m.params(), g, all, none);
      r.check(all, "frozen_llm: every " + std::string(to_string(g)) + " tensor changed");
    }
  }
  {
    const PrefixLM m = train(Regime::finetuned_llm(), 0.0, steps);
    bool all = false, none = false;
    groups_changed(m.params(), ParamGroup::prompt, all, none);
    r.check(none, "finetuned_llm alpha=0, " + std::to_string(steps) + " steps: prompt tensors byte-identical");
    groups_changed(m.params(), ParamGroup::llm, all, none);
    r.check(!none, "finetuned_llm alpha=0: llm tensors moved");
  }
  {
    const PrefixLM m = train(Regime::frozen_llm(), 1.0, 1);
    bool ok = true;
    for (const auto& e : m.params().entries()) {
      const bool same = verify::bit_equal(e.value, init.value(e.name));
      if ((e.group == ParamGroup::prompt) == same) ok = false;
    }
    r.check(ok, "frozen_llm alpha=1, one step: exactly the prompt tensors changed");
  }

  // Boundary weights against single-loss reference steps.
  for (const Regime& regime : {Regime::frozen_llm(), Regime::finetuned_llm()}) {
    for (const double alpha : {1.0, 0.0}) {
      PrefixLM a(cfg, derive_seed(seed, 5)), b(cfg, derive_seed(seed, 5));
      AdamOptimizer oa, ob;
      for (std::size_t s = 0; s < 3; ++s) {
        const auto batch = batch_at(s);
        train_step(batch, a, regime, oa, JointLossConfig{alpha});
        verify::reference_step(batch, b, regime, ob, alpha == 1.0);
      }
      bool same = true;
      for (const auto& e : a.params().entries()) same = same && verify::bit_equal(e.value, b.params().value(e.name));
      r.check(same, std::string(regime.name()) + " alpha=" + (alpha == 1.0 ? "1" : "0") +
                        ": 3 steps bit-equal to pure " + (alpha == 1.0 ? "LM" : "RNNT") + " steps");
    }
  }

  {
    // Per-path contributions at alpha = 0 under frozen_llm.
    PrefixLM m(cfg, derive_seed(seed, 6));
    Tape tape;
    Bindings b(tape, m.params());
    auto tf = m.run_teacher_forced(b, data[0]);
    Var lm = lm_loss(tf.outputs.text_logits, tf.targets);
    Var asr = rnnt_loss(transducer_joint(b, cfg, tf.outputs.speech_outputs, data[0].tokens), data[0].tokens);
    const Gradients glm = tape.backward(lm), gasr = tape.backward(asr);
    const JointLossConfig zero{0.0};
    const auto from_lm = route_gradients(Regime::frozen_llm(), m.params(), glm, {}, zero);
    const auto from_asr = route_gradients(Regime::frozen_llm(), m.params(), {}, gasr, zero);
    double lm_norm = 0.0, asr_norm = 0.0;
    for (double v : from_lm.update.at("prompt.bank").data) lm_norm += v * v;
    for (double v : from_asr.update.at("prompt.bank").data) asr_norm += v * v;
    r.check(lm_norm == 0.0 && asr_norm > 0.0,
            "frozen_llm alpha=0: prompt update is zero from the LM path and nonzero from the RNNT path");
    bool rejected = false;
    try {
      Gradients bogus{{"no.such.param", Tensor({1}, 1.0)}};
      route_gradients(Regime::frozen_llm(), m.params(), bogus, {}, zero);
    } catch (const std::invalid_argument&) {
      rejected = true;
    }
    r.check(rejected, "unknown parameter name in a gradient map is rejected");
  }

  {
    const PrefixLM a = train(Regime::finetuned_llm(), 0.5, 5), b = train(Regime::finetuned_llm(), 0.5, 5);
    bool same = true;
    for (const auto& e : a.params().entries()) same = same && verify::bit_equal(e.value, b.params().value(e.name));
    r.check(same, "same seed, data and config: bit-identical parameters after 5 steps");
  }
  r.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  return r;
}

inline SuiteResult run_suite(std::string_view name, std::uint64_t seed) {
  if (name == "grad") return verify_gradients(seed);
  if (name == "rnnt-oracle") return verify_rnnt_oracle(seed);
  if (name == "ctc-oracle") return verify_ctc_oracle(seed);
  if (name == "mask") return verify_mask(seed);
  if (name == "routing") return verify_routing(seed);
  throw std::invalid_argument("unknown suite '" + std::string(name) +
                              "' (expected grad|rnnt-oracle|ctc-oracle|mask|routing)");
}

}  // namespace sprefix
