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

#include <array>
#include <cmath>
#include <cstdint>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "sprefix/autodiff.hpp"

namespace sprefix {

enum class ParamGroup : std::uint8_t { encoder, prompt, llm, transducer_head };

inline constexpr std::array<ParamGroup, 4> kAllGroups = {
    ParamGroup::encoder, ParamGroup::prompt, ParamGroup::llm,
    ParamGroup::transducer_head};

inline std::string_view to_string(ParamGroup g) {
  switch (g) {
    case ParamGroup::encoder: return "encoder";
    case ParamGroup::prompt: return "prompt";
    case ParamGroup::llm: return "llm";
    case ParamGroup::transducer_head: return "transducer_head";
  }
  return "?";
}

inline ParamGroup parse_group(std::string_view s) {
  for (ParamGroup g : kAllGroups) {
    if (to_string(g) == s) return g;
  }
  throw std::invalid_argument("unknown parameter group '" + std::string(s) + "'");
}

// Named parameter tensors, each tagged with exactly one group. Insertion
// order is the iteration order everywhere (checkpoints, optimizer, norms).
class ParameterRegistry {
 public:
  struct Entry {
    std::string name;
    ParamGroup group;
    Tensor value;
  };

  void add(std::string name, ParamGroup group, Tensor value) {
    if (index_.contains(name)) {
      throw std::invalid_argument("parameter '" + name + "' registered twice");
    }
    value.requires_grad = true;
    index_.emplace(name, entries_.size());
    entries_.push_back(Entry{std::move(name), group, std::move(value)});
  }

  bool contains(std::string_view name) const {
    return index_.contains(std::string(name));
  }

  const Entry& entry(std::string_view name) const { return entries_[find(name)]; }
  const Tensor& value(std::string_view name) const { return entries_[find(name)].value; }
  Tensor& value(std::string_view name) { return entries_[find(name)].value; }
  ParamGroup group(std::string_view name) const { return entries_[find(name)].group; }

  std::span<const Entry> entries() const { return entries_; }
  std::span<Entry> entries() { return entries_; }
  std::size_t size() const { return entries_.size(); }

  std::size_t element_count() const {
    std::size_t n = 0;
    for (const Entry& e : entries_) n += e.value.size();
    return n;
  }

  std::size_t element_count(ParamGroup g) const {
    std::size_t n = 0;
    for (const Entry& e : entries_) {
      if (e.group == g) n += e.value.size();
    }
    return n;
  }

 private:
  std::size_t find(std::string_view name) const {
    auto it = index_.find(std::string(name));
    if (it == index_.end()) {
      throw std::out_of_range("unknown parameter '" + std::string(name) + "'");
    }
    return it->second;
  }

  std::vector<Entry> entries_;
  std::unordered_map<std::string, std::size_t> index_;
};

// Binds registry entries onto a tape on first use. Trainable bindings create
// named leaves; frozen bindings create constants and record no backward work.
class Bindings {
 public:
  Bindings(Tape& tape, const ParameterRegistry& params, bool trainable = true)
      : tape_(tape), params_(params), trainable_(trainable) {}

  Var operator()(std::string_view name) {
    auto it = cache_.find(std::string(name));
    if (it != cache_.end()) return it->second;
    const Tensor& v = params_.value(name);
    Var var = trainable_ ? tape_.leaf(std::string(name), v) : tape_.constant(v);
    cache_.emplace(std::string(name), var);
    return var;
  }

  Tape& tape() { return tape_; }
  const ParameterRegistry& params() const { return params_; }
  bool trainable() const { return trainable_; }

 private:
  Tape& tape_;
  const ParameterRegistry& params_;
  bool trainable_;
  std::unordered_map<std::string, Var> cache_;
};

}  // namespace sprefix
