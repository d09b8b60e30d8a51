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

// Per-loss gradient routing and the optimizer.
//
// Each step runs one forward pass per utterance and two backward passes over
// the same tape, one per loss. The two gradient maps are then combined
// parameter by parameter:
//
//   update[p] = alpha * lm_mask(group(p)) * g_lm[p]
//             + (1 - alpha) * asr_mask(group(p)) * g_asr[p]
//
// which a single backward of the combined scalar cannot express (e.g. prompts
// that only see the LM loss while the LLM sees both).

#pragma once

#include <array>
#include <cmath>
#include <map>
#include <optional>
#include <set>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "sprefix/config.hpp"
#include "sprefix/model.hpp"
#include "sprefix/parameters.hpp"
#include "sprefix/transducer.hpp"

namespace sprefix {

class Regime {
 public:
  enum class Kind { frozen_llm, finetuned_llm };

  static Regime frozen_llm() {
    // LM loss: prompt only. ASR loss: encoder, prompt, head. LLM never moves.
    return Regime(Kind::frozen_llm, {false, true, false, false}, {true, true, false, true});
  }

  static Regime finetuned_llm() {
    // LM loss: prompt, LLM, encoder. ASR loss: encoder, LLM, head; never prompt.
    return Regime(Kind::finetuned_llm, {true, true, true, false}, {true, false, true, true});
  }

  static Regime parse(std::string_view name) {
    if (name == "frozen_llm") return frozen_llm();
    if (name == "finetuned_llm") return finetuned_llm();
    throw ConfigError("regime must be frozen_llm|finetuned_llm, got '" + std::string(name) + "'");
  }

  Kind kind() const { return kind_; }
  std::string_view name() const {
    return kind_ == Kind::frozen_llm ? "frozen_llm" : "finetuned_llm";
  }

  bool lm_updates(ParamGroup g) const { return lm_[static_cast<std::size_t>(g)]; }
  bool asr_updates(ParamGroup g) const { return asr_[static_cast<std::size_t>(g)]; }

 private:
  using Mask = std::array<bool, 4>;  // indexed by ParamGroup
  Regime(Kind k, Mask lm, Mask asr) : kind_(k), lm_(lm), asr_(asr) {}

  Kind kind_;
  Mask lm_;
  Mask asr_;
};

struct RoutedUpdate {
  Gradients update;               // one entry per registry parameter
  std::set<std::string> active;   // parameters the optimizer may touch
};

// Combines per-loss gradients under the regime masks. Gradient maps may omit
// parameters (treated as zero) but may not name unknown ones.
inline RoutedUpdate route_gradients(const Regime& regime, const ParameterRegistry& params,
                                    const Gradients& lm_grads, const Gradients& asr_grads,
                                    const JointLossConfig& cfg) {
  cfg.validate();
  for (const Gradients* g : {&lm_grads, &asr_grads}) {
    for (const auto& [name, t] : *g) {
      if (!params.contains(name)) {
        throw std::invalid_argument("route_gradients: unknown parameter '" + name + "'");
      }
      if (t.shape != params.value(name).shape) {
        throw shape_mismatch("route_gradients: " + name, t.shape, params.value(name).shape);
      }
    }
  }
  const double w_lm = cfg.alpha, w_asr = 1.0 - cfg.alpha;
  RoutedUpdate out;
  for (const auto& e : params.entries()) {
    Tensor u(e.value.shape, 0.0);
    bool active = false;
    auto apply = [&](const Gradients& grads, double w) {
      active = true;
      auto it = grads.find(e.name);
      if (it == grads.end()) return;
      for (std::size_t i = 0; i < u.size(); ++i) u.data[i] += w * it->second.data[i];
    };
    if (w_lm > 0.0 && regime.lm_updates(e.group)) apply(lm_grads, w_lm);
    if (w_asr > 0.0 && regime.asr_updates(e.group)) apply(asr_grads, w_asr);
    if (active) out.active.insert(e.name);
    out.update.emplace(e.name, std::move(u));
  }
  return out;
}

struct AdamConfig {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double clip_norm = 1.0;  // global L2 norm bound on the routed update
};

class AdamOptimizer {
 public:
  explicit AdamOptimizer(AdamConfig cfg = {}) : cfg_(cfg) {}

  const AdamConfig& config() const { return cfg_; }

  // Applies the update to active parameters only. Returns the global norm
  // before clipping.
  double step(ParameterRegistry& params, const RoutedUpdate& routed) {
    double sq = 0.0;
    for (const auto& name : routed.active) {
      for (double g : routed.update.at(name).data) sq += g * g;
    }
    const double norm = std::sqrt(sq);
    const double clip = (cfg_.clip_norm > 0.0 && norm > cfg_.clip_norm) ? cfg_.clip_norm / norm : 1.0;

    for (auto& e : params.entries()) {
      if (!routed.active.contains(e.name)) continue;
      const Tensor& g = routed.update.at(e.name);
      auto [it, fresh] = state_.try_emplace(e.name);
      State& s = it->second;
      if (fresh) {
        s.m = Tensor(e.value.shape, 0.0);
        s.v = Tensor(e.value.shape, 0.0);
      }
      ++s.steps;
      const double bc1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(s.steps));
      const double bc2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(s.steps));
      for (std::size_t i = 0; i < g.size(); ++i) {
        const double gi = g.data[i] * clip;
        s.m.data[i] = cfg_.beta1 * s.m.data[i] + (1.0 - cfg_.beta1) * gi;
        s.v.data[i] = cfg_.beta2 * s.v.data[i] + (1.0 - cfg_.beta2) * gi * gi;
        const double mhat = s.m.data[i] / bc1;
        const double vhat = s.v.data[i] / bc2;
        e.value.data[i] -= cfg_.lr * mhat / (std::sqrt(vhat) + cfg_.eps);
      }
    }
    return norm;
  }

 private:
  struct State {
    Tensor m;
    Tensor v;
    long steps = 0;
  };

  AdamConfig cfg_;
  std::map<std::string, State> state_;
};

class NonFiniteLoss : public std::runtime_error {
 public:
  NonFiniteLoss(const std::string& what, std::vector<std::string> ids)
      : std::runtime_error(what), utterance_ids(std::move(ids)) {}
  std::vector<std::string> utterance_ids;
};

struct StepMetrics {
  double lm_loss = 0.0;   // per utterance
  double asr_loss = 0.0;  // per utterance with a usable ASR lattice
  double joint_loss = 0.0;
  bool has_asr = false;
  std::size_t asr_skipped = 0;  // infeasible CTC targets
  std::map<ParamGroup, double> update_norms;  // routed update, before clipping
  double global_norm = 0.0;
};

// Which backward passes a step runs. `joint` is the normal mode; the others
// exist to compare against single-objective steps.
enum class Objective { joint, lm_only, asr_only };

namespace detail {

inline void accumulate(Gradients& sum, const Gradients& g) {
  for (const auto& [name, t] : g) {
    auto [it, fresh] = sum.try_emplace(name, t);
    if (!fresh) {
      for (std::size_t i = 0; i < t.size(); ++i) it->second.data[i] += t.data[i];
    }
  }
}

inline void scale_all(Gradients& g, double s) {
  for (auto& [name, t] : g) {
    for (double& v : t.data) v *= s;
  }
}

}  // namespace detail

inline StepMetrics train_step(std::span<const Utterance* const> batch, PrefixLM& model,
                              const Regime& regime, AdamOptimizer& optimizer,
                              const JointLossConfig& joint, Objective objective = Objective::joint) {
  if (batch.empty()) throw std::invalid_argument("train_step: empty batch");
  joint.validate();
  const PrefixLMConfig& cfg = model.config();
  const bool has_head = cfg.asr_head != AsrHead::none;
  const bool want_lm = objective != Objective::asr_only && joint.alpha > 0.0;
  const bool want_asr = has_head && objective != Objective::lm_only && joint.alpha < 1.0;

  StepMetrics m;
  m.has_asr = has_head;
  Gradients lm_sum, asr_sum;
  std::size_t asr_count = 0;
  std::vector<std::string> bad;

  for (const Utterance* u : batch) {
    Tape tape;
    Bindings b(tape, model.params());
    auto r = model.run_teacher_forced(b, *u);
    Var lm = lm_loss(r.outputs.text_logits, r.targets);
    std::optional<Var> asr;
    if (cfg.asr_head == AsrHead::rnnt) {
      asr = rnnt_loss(transducer_joint(b, cfg, r.outputs.speech_outputs, u->tokens), u->tokens);
    } else if (cfg.asr_head == AsrHead::ctc) {
      if (ctc_feasible(r.outputs.speech_outputs.shape()[0], u->tokens)) {
        asr = ctc_loss(ctc_logits(b, r.outputs.speech_outputs), u->tokens);
      } else {
        ++m.asr_skipped;
      }
    }
    if (!std::isfinite(lm.item()) || (asr && !std::isfinite(asr->item()))) {
      bad.push_back(u->id);
      continue;
    }
    m.lm_loss += lm.item();
    if (asr) {
      m.asr_loss += asr->item();
      ++asr_count;
    }
    if (want_lm) detail::accumulate(lm_sum, tape.backward(lm));
    if (want_asr && asr) detail::accumulate(asr_sum, tape.backward(*asr));
  }
  if (!bad.empty()) {
    std::string ids;
    for (const auto& id : bad) ids += (ids.empty() ? "" : ", ") + id;
    throw NonFiniteLoss("train_step: non-finite loss for utterance(s) " + ids, bad);
  }

  const double n = static_cast<double>(batch.size());
  m.lm_loss /= n;
  detail::scale_all(lm_sum, 1.0 / n);
  if (asr_count > 0) {
    m.asr_loss /= static_cast<double>(asr_count);
    detail::scale_all(asr_sum, 1.0 / static_cast<double>(asr_count));
  }
  m.joint_loss = has_head ? joint_loss(m.lm_loss, m.asr_loss, joint) : m.lm_loss;

  JointLossConfig route_cfg = joint;
  if (objective == Objective::lm_only || !has_head) route_cfg.alpha = 1.0;
  if (objective == Objective::asr_only) route_cfg.alpha = 0.0;
  const RoutedUpdate routed = route_gradients(regime, model.params(), lm_sum, asr_sum, route_cfg);

  for (ParamGroup g : kAllGroups) m.update_norms[g] = 0.0;
  for (const auto& e : model.params().entries()) {
    double sq = 0.0;
    for (double v : routed.update.at(e.name).data) sq += v * v;
    m.update_norms[e.group] += sq;
  }
  for (auto& [g, v] : m.update_norms) v = std::sqrt(v);
  m.global_norm = optimizer.step(model.params(), routed);
  return m;
}

}  // namespace sprefix
