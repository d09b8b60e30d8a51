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

#pragma once

#include <algorithm>
#include <cmath>
#include <cstring>
#include <functional>
#include <stdexcept>
#include <string>

#include "sprefix/parameters.hpp"

namespace sprefix {

// Builds a scalar loss on the tape, reading parameters through the bindings.
using LossBuilder = std::function<Var(Bindings&)>;

// Central-difference stencils: two-point (error O(h^2)) or the four-point
// fourth-order rule (8[f(h) - f(-h)] - [f(2h) - f(-2h)]) / 12h.
enum class Stencil { central2, central4 };

struct GradCheckReport {
  double max_relative_error = 0.0;
  std::string worst_parameter;
  std::size_t worst_index = 0;
  double worst_analytic = 0.0;
  double worst_numeric = 0.0;
  std::size_t entries_checked = 0;
};

class NonDeterministicLoss : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

inline double evaluate_loss(const LossBuilder& loss_fn,
                            const ParameterRegistry& params) {
  Tape tape;
  Bindings bind(tape, params, /*trainable=*/false);
  return loss_fn(bind).item();
}

// Compares reverse-mode gradients with central differences on every entry of
// every registry tensor. Relative error per entry:
//   |a - n| / max(1e-12, |a| + |n|).
inline GradCheckReport finite_difference_check(const LossBuilder& loss_fn,
                                               ParameterRegistry params, double step,
                                               Stencil stencil = Stencil::central2) {
  if (!(step > 0.0)) throw std::invalid_argument("finite_difference_check: step must be > 0");

  const double first = evaluate_loss(loss_fn, params);
  const double second = evaluate_loss(loss_fn, params);
  if (std::memcmp(&first, &second, sizeof(double)) != 0) {
    throw NonDeterministicLoss("finite_difference_check: two forward passes disagree (" +
                               std::to_string(first) + " vs " + std::to_string(second) + ")");
  }

  Gradients analytic;
  {
    Tape tape;
    Bindings bind(tape, params);
    Var loss = loss_fn(bind);
    // Parameters the builder never touched still get (zero) gradients.
    for (const auto& e : params.entries()) bind(e.name);
    analytic = tape.backward(loss);
  }

  GradCheckReport report;
  for (auto& entry : params.entries()) {
    const Tensor& grad = analytic.at(entry.name);
    for (std::size_t i = 0; i < entry.value.size(); ++i) {
      const double saved = entry.value.data[i];
      auto at = [&](double offset) {
        entry.value.data[i] = saved + offset;
        const double v = evaluate_loss(loss_fn, params);
        entry.value.data[i] = saved;
        return v;
      };
      double numeric = 0.0;
      if (stencil == Stencil::central2) {
        numeric = (at(step) - at(-step)) / (2.0 * step);
      } else {
        const double d1 = at(step) - at(-step);
        const double d2 = at(2.0 * step) - at(-2.0 * step);
        numeric = (8.0 * d1 - d2) / (12.0 * step);
      }
      const double a = grad.data[i];
      const double rel = std::abs(a - numeric) /
                         std::max(1e-12, std::abs(a) + std::abs(numeric));
      ++report.entries_checked;
      if (rel > report.max_relative_error || std::isnan(rel)) {
        report.max_relative_error = std::isnan(rel) ? INFINITY : rel;
        report.worst_parameter = entry.name;
        report.worst_index = i;
        report.worst_analytic = a;
        report.worst_numeric = numeric;
      }
    }
  }
  return report;
}

}  // namespace sprefix
