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

// Synthetic multilingual speech/text corpus and its on-disk formats.
//
// Corpus files hold one JSON object per line:
//   {"id": "...", "lang": "l0", "lang_id": 0, "frames": [[...], ...], "tokens": [...]}
// An optional first line {"meta": {...}} carries provenance and is skipped on
// read. Lexicon files hold "<token id>\t<language tag>" lines.

#pragma once

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

#include "sprefix/config.hpp"
#include "sprefix/model.hpp"
#include "sprefix/rng.hpp"

namespace sprefix {

class CorpusError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct TokenRange {
  int begin = 0;  // inclusive
  int end = 0;    // exclusive
  int size() const { return end - begin; }
  bool contains(int id) const { return id >= begin && id < end; }
};

struct CorpusSpec {
  std::size_t languages = 3;
  std::size_t vocab = 30;
  std::vector<std::string> lang_tags;  // empty: l0, l1, ...
  std::size_t train_utterances = 500;  // totals; language = index mod L
  std::size_t test_utterances = 100;
  std::size_t min_tokens = 3;
  std::size_t max_tokens = 6;
  std::size_t min_frames_per_token = 3;
  std::size_t max_frames_per_token = 5;
  std::size_t feature_dim = 8;
  double noise_std = 0.3;
  double code_mix_prob = 0.05;
  std::uint64_t seed = 1;

  std::string tag(std::size_t lang) const {
    return lang_tags.empty() ? "l" + std::to_string(lang) : lang_tags.at(lang);
  }

  // Contiguous, disjoint, covering [0, vocab); earlier languages get the
  // remainder when vocab % languages != 0.
  TokenRange range(std::size_t lang) const {
    const std::size_t base = vocab / languages, extra = vocab % languages;
    const std::size_t begin = lang * base + std::min(lang, extra);
    const std::size_t size = base + (lang < extra ? 1 : 0);
    return {static_cast<int>(begin), static_cast<int>(begin + size)};
  }

  std::size_t language_of(int token) const {
    for (std::size_t l = 0; l < languages; ++l) {
      if (range(l).contains(token)) return l;
    }
    throw std::out_of_range("token id " + std::to_string(token) + " outside the vocabulary");
  }

  void validate() const {
    auto fail = [](const std::string& m) { throw ConfigError("corpus spec: " + m); };
    if (languages < 1) fail("languages must be >= 1");
    if (vocab < languages) fail("vocab must be >= languages so every range is nonempty");
    if (!lang_tags.empty() && lang_tags.size() != languages) {
      fail("lang_tags lists " + std::to_string(lang_tags.size()) + " tags for " +
           std::to_string(languages) + " languages");
    }
    for (std::size_t i = 0; i < lang_tags.size(); ++i) {
      if (std::count(lang_tags.begin(), lang_tags.end(), lang_tags[i]) != 1) {
        fail("duplicate language tag '" + lang_tags[i] + "'");
      }
    }
    if (min_tokens < 1 || min_tokens > max_tokens) fail("need 1 <= min_tokens <= max_tokens");
    if (min_frames_per_token < 1 || min_frames_per_token > max_frames_per_token) {
      fail("need 1 <= min_frames_per_token <= max_frames_per_token");
    }
    if (feature_dim < 1) fail("feature_dim must be >= 1");
    if (!(noise_std >= 0.0) || !std::isfinite(noise_std)) fail("noise_std must be finite and >= 0");
    if (!(code_mix_prob >= 0.0 && code_mix_prob <= 1.0)) fail("code_mix_prob must be in [0, 1]");
  }

  void write(KeyValueConfig& kv) const {
    kv.set("languages", std::to_string(languages));
    kv.set("vocab", std::to_string(vocab));
    if (!lang_tags.empty()) {
      std::string tags;
      for (const auto& t : lang_tags) tags += (tags.empty() ? "" : ",") + t;
      kv.set("lang_tags", tags);
    }
    kv.set("train_utterances", std::to_string(train_utterances));
    kv.set("test_utterances", std::to_string(test_utterances));
    kv.set("min_tokens", std::to_string(min_tokens));
    kv.set("max_tokens", std::to_string(max_tokens));
    kv.set("min_frames_per_token", std::to_string(min_frames_per_token));
    kv.set("max_frames_per_token", std::to_string(max_frames_per_token));
    kv.set("feature_dim", std::to_string(feature_dim));
    kv.set("noise_std", nlohmann::json(noise_std).dump());
    kv.set("code_mix_prob", nlohmann::json(code_mix_prob).dump());
    kv.set("seed", std::to_string(seed));
  }

  // Utterance counts may be given as totals or per language, not both.
  static CorpusSpec read(const KeyValueConfig& kv) {
    kv.check_known({"languages", "vocab", "lang_tags", "train_utterances", "test_utterances",
                    "train_per_language", "test_per_language", "min_tokens", "max_tokens",
                    "min_frames_per_token", "max_frames_per_token", "feature_dim", "noise_std",
                    "code_mix_prob", "seed"});
    CorpusSpec s;
    s.languages = kv.get<std::size_t>("languages", s.languages);
    s.vocab = kv.get<std::size_t>("vocab", s.vocab);
    if (kv.has("lang_tags")) s.lang_tags = split_list(kv.require_string("lang_tags"));
    auto read_count = [&](const std::string& split, std::size_t& n) {
      const std::string total = split + "_utterances";
      const std::string per = split + "_per_language";
      if (kv.has(total) && kv.has(per)) {
        throw ConfigError("corpus spec: give either " + total + " or " + per + ", not both");
      }
      if (kv.has(total)) n = kv.require<std::size_t>(total);
      if (kv.has(per)) n = kv.require<std::size_t>(per) * s.languages;
    };
    read_count("train", s.train_utterances);
    read_count("test", s.test_utterances);
    s.min_tokens = kv.get<std::size_t>("min_tokens", s.min_tokens);
    s.max_tokens = kv.get<std::size_t>("max_tokens", s.max_tokens);
    s.min_frames_per_token = kv.get<std::size_t>("min_frames_per_token", s.min_frames_per_token);
    s.max_frames_per_token = kv.get<std::size_t>("max_frames_per_token", s.max_frames_per_token);
    s.feature_dim = kv.get<std::size_t>("feature_dim", s.feature_dim);
    s.noise_std = kv.get<double>("noise_std", s.noise_std);
    s.code_mix_prob = kv.get<double>("code_mix_prob", s.code_mix_prob);
    s.seed = kv.get<std::uint64_t>("seed", s.seed);
    s.validate();
    return s;
  }
};

struct Corpus {
  std::vector<Utterance> train;
  std::vector<Utterance> test;
};

// One acoustic template per token id, N(0, 1)^F.
inline Tensor token_templates(const CorpusSpec& spec) {
  Rng rng(derive_seed(spec.seed, fnv1a64("templates")));
  Tensor t({spec.vocab, spec.feature_dim});
  for (double& v : t.data) v = rng.normal();
  return t;
}

namespace detail {

inline Utterance synth_utterance(const CorpusSpec& spec, const Tensor& templates,
                                 std::string_view split, std::size_t index) {
  Rng rng(derive_seed(spec.seed, fnv1a64(split), index));
  Utterance u;
  const std::size_t lang = index % spec.languages;
  char id[32];
  std::snprintf(id, sizeof id, "%.*s-%06zu", static_cast<int>(split.size()), split.data(), index);
  u.id = id;
  u.lang = spec.tag(lang);
  u.lang_id = static_cast<int>(lang);

  const auto n_tokens = static_cast<std::size_t>(rng.between(
      static_cast<long long>(spec.min_tokens), static_cast<long long>(spec.max_tokens)));
  std::vector<std::size_t> durations;
  for (std::size_t i = 0; i < n_tokens; ++i) {
    std::size_t from = lang;
    if (spec.languages > 1 && rng.uniform() < spec.code_mix_prob) {
      from = static_cast<std::size_t>(rng.below(spec.languages - 1));
      if (from >= lang) ++from;
    }
    const TokenRange r = spec.range(from);
    u.tokens.push_back(r.begin + static_cast<int>(rng.below(static_cast<std::uint64_t>(r.size()))));
    durations.push_back(static_cast<std::size_t>(
        rng.between(static_cast<long long>(spec.min_frames_per_token),
                    static_cast<long long>(spec.max_frames_per_token))));
  }

  std::size_t total = 0;
  for (std::size_t d : durations) total += d;
  u.frames = Tensor({total, spec.feature_dim});
  std::size_t row = 0;
  for (std::size_t i = 0; i < n_tokens; ++i) {
    const double* tpl = templates.row(static_cast<std::size_t>(u.tokens[i]));
    for (std::size_t r = 0; r < durations[i]; ++r, ++row) {
      for (std::size_t f = 0; f < spec.feature_dim; ++f) {
        double v = tpl[f];
        if (spec.noise_std > 0.0) v += rng.normal(0.0, spec.noise_std);
        u.frames(row, f) = v;
      }
    }
  }
  return u;
}

}  // namespace detail

// Pure function of the spec. Utterance i draws from its own derived stream,
// so any subset can be regenerated independently.
inline Corpus generate_synthetic_corpus(const CorpusSpec& spec) {
  spec.validate();
  const Tensor templates = token_templates(spec);
  Corpus c;
  for (std::size_t i = 0; i < spec.train_utterances; ++i) {
    c.train.push_back(detail::synth_utterance(spec, templates, "train", i));
  }
  for (std::size_t i = 0; i < spec.test_utterances; ++i) {
    c.test.push_back(detail::synth_utterance(spec, templates, "test", i));
  }
  return c;
}

inline nlohmann::json utterance_to_json(const Utterance& u) {
  nlohmann::json frames = nlohmann::json::array();
  for (std::size_t t = 0; t < u.num_frames(); ++t) {
    frames.push_back(std::vector<double>(u.frames.row(t), u.frames.row(t) + u.frames.dim(1)));
  }
  nlohmann::json j = {{"id", u.id}, {"lang", u.lang}, {"lang_id", u.lang_id},
                      {"frames", std::move(frames)}, {"tokens", u.tokens}};
  if (u.raw_text) j["text"] = *u.raw_text;
  return j;
}

inline Utterance utterance_from_json(const nlohmann::json& j) {
  if (!j.is_object()) throw CorpusError("expected a JSON object");
  for (const char* key : {"id", "lang", "lang_id", "frames", "tokens"}) {
    if (!j.contains(key)) throw CorpusError(std::string("missing field '") + key + "'");
  }
  Utterance u;
  try {
    u.id = j.at("id").get<std::string>();
    u.lang = j.at("lang").get<std::string>();
    u.lang_id = j.at("lang_id").get<int>();
    u.tokens = j.at("tokens").get<std::vector<int>>();
    const auto rows = j.at("frames").get<std::vector<std::vector<double>>>();
    if (rows.empty()) throw CorpusError("field 'frames' is empty");
    const std::size_t width = rows[0].size();
    if (width == 0) throw CorpusError("field 'frames' has zero-width rows");
    u.frames = Tensor({rows.size(), width});
    for (std::size_t t = 0; t < rows.size(); ++t) {
      if (rows[t].size() != width) {
        throw CorpusError("field 'frames': row " + std::to_string(t) + " has " +
                          std::to_string(rows[t].size()) + " values, expected " +
                          std::to_string(width));
      }
      std::copy(rows[t].begin(), rows[t].end(), u.frames.data.begin() + t * width);
    }
    if (j.contains("text")) u.raw_text = j.at("text").get<std::string>();
  } catch (const nlohmann::json::exception& e) {
    throw CorpusError(std::string("bad field type: ") + e.what());
  }
  return u;
}

inline void write_corpus(const std::filesystem::path& path, const std::vector<Utterance>& set,
                         const std::optional<nlohmann::json>& meta = std::nullopt) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw CorpusError("cannot write corpus '" + path.string() + "'");
  if (meta) out << nlohmann::json{{"meta", *meta}}.dump() << '\n';
  for (const Utterance& u : set) out << utterance_to_json(u).dump() << '\n';
  if (!out) throw CorpusError("write failed for '" + path.string() + "'");
}

// Reads JSON lines, calling `fn(json, line_no)` for every record except a
// leading meta line. Errors carry the file and line number.
template <class Fn>
void for_each_json_line(const std::filesystem::path& path, Fn&& fn) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw CorpusError("cannot open '" + path.string() + "'");
  std::string line;
  std::size_t line_no = 0;
  bool first = true;
  while (std::getline(in, line)) {
    ++line_no;
    if (detail::trim(line).empty()) continue;
    nlohmann::json j;
    try {
      j = nlohmann::json::parse(line);
    } catch (const nlohmann::json::parse_error& e) {
      throw CorpusError(path.string() + ":" + std::to_string(line_no) + ": malformed record (" +
                        e.what() + ")");
    }
    const bool is_meta = first && j.is_object() && j.size() == 1 && j.contains("meta");
    first = false;
    if (is_meta) continue;
    try {
      fn(j, line_no);
    } catch (const CorpusError& e) {
      throw CorpusError(path.string() + ":" + std::to_string(line_no) + ": " + e.what());
    }
  }
}

// Returns the leading meta object, if any.
inline std::optional<nlohmann::json> read_meta(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw CorpusError("cannot open '" + path.string() + "'");
  std::string line;
  while (std::getline(in, line)) {
    if (detail::trim(line).empty()) continue;
    auto j = nlohmann::json::parse(line, nullptr, /*allow_exceptions=*/false);
    if (j.is_object() && j.size() == 1 && j.contains("meta")) return j["meta"];
    return std::nullopt;
  }
  return std::nullopt;
}

inline std::vector<Utterance> read_corpus(const std::filesystem::path& path) {
  std::vector<Utterance> set;
  std::map<std::string, std::size_t> seen;
  for_each_json_line(path, [&](const nlohmann::json& j, std::size_t line_no) {
    Utterance u = utterance_from_json(j);
    if (auto [it, fresh] = seen.emplace(u.id, line_no); !fresh) {
      throw CorpusError("duplicate utterance id '" + u.id + "' (first on line " +
                        std::to_string(it->second) + ")");
    }
    if (!set.empty() && u.frames.dim(1) != set.front().frames.dim(1)) {
      throw CorpusError("utterance '" + u.id + "' has feature dim " +
                        std::to_string(u.frames.dim(1)) + ", earlier records have " +
                        std::to_string(set.front().frames.dim(1)));
    }
    set.push_back(std::move(u));
  });
  return set;
}

// Token id -> language tag.
class Lexicon {
 public:
  Lexicon() = default;

  static Lexicon from_spec(const CorpusSpec& spec) {
    Lexicon lex;
    for (std::size_t l = 0; l < spec.languages; ++l) {
      const TokenRange r = spec.range(l);
      for (int id = r.begin; id < r.end; ++id) lex.tags_[id] = spec.tag(l);
    }
    return lex;
  }

  void add(int id, std::string tag) {
    if (!tags_.emplace(id, std::move(tag)).second) {
      throw CorpusError("lexicon: duplicate token id " + std::to_string(id));
    }
  }

  // Empty optional for ids outside the lexicon.
  std::optional<std::string> tag(int id) const {
    auto it = tags_.find(id);
    if (it == tags_.end()) return std::nullopt;
    return it->second;
  }

  const std::map<int, std::string>& entries() const { return tags_; }
  std::size_t size() const { return tags_.size(); }

  void write(const std::filesystem::path& path) const {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw CorpusError("cannot write lexicon '" + path.string() + "'");
    for (const auto& [id, tag] : tags_) out << id << '\t' << tag << '\n';
  }

  static Lexicon read(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw CorpusError("cannot open lexicon '" + path.string() + "'");
    Lexicon lex;
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
      ++line_no;
      std::string_view s = detail::trim(line);
      if (s.empty() || s.front() == '#') continue;
      const auto tab = s.find_first_of("\t ");
      const std::string where = path.string() + ":" + std::to_string(line_no) + ": ";
      if (tab == std::string_view::npos) throw CorpusError(where + "expected '<id>\\t<tag>'");
      int id = 0;
      const std::string_view id_text = s.substr(0, tab);
      auto [p, ec] = std::from_chars(id_text.data(), id_text.data() + id_text.size(), id);
      if (ec != std::errc() || p != id_text.data() + id_text.size()) {
        throw CorpusError(where + "bad token id '" + std::string(id_text) + "'");
      }
      const std::string_view tag = detail::trim(s.substr(tab + 1));
      if (tag.empty()) throw CorpusError(where + "missing language tag");
      try {
        lex.add(id, std::string(tag));
      } catch (const CorpusError& e) {
        throw CorpusError(where + e.what());
      }
    }
    return lex;
  }

 private:
  std::map<int, std::string> tags_;
};

}  // namespace sprefix
