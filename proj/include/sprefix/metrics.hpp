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

// Word error rate with an edit decomposition, and the code-mixing index.

#pragma once

#include <algorithm>
#include <cstdio>
#include <map>
#include <numeric>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

#include "sprefix/corpus.hpp"
#include "sprefix/model.hpp"

namespace sprefix {

struct EditCounts {
  std::size_t deletions = 0;
  std::size_t insertions = 0;
  std::size_t substitutions = 0;
  std::size_t ref_length = 0;

  std::size_t errors() const { return deletions + insertions + substitutions; }

  // Empty references score 0 with no hypothesis and 1 per inserted token.
  double wer() const {
    if (ref_length == 0) return static_cast<double>(insertions);
    return static_cast<double>(errors()) / static_cast<double>(ref_length);
  }

  EditCounts& operator+=(const EditCounts& o) {
    deletions += o.deletions;
    insertions += o.insertions;
    substitutions += o.substitutions;
    ref_length += o.ref_length;
    return *this;
  }

  friend bool operator==(const EditCounts&, const EditCounts&) = default;
};

// Unit-cost Levenshtein alignment. Among minimal alignments the backtrace
// prefers match, then substitution, then deletion, then insertion.
inline EditCounts align_wer(std::span<const int> ref, std::span<const int> hyp) {
  const std::size_t n = ref.size(), m = hyp.size();
  std::vector<std::size_t> d((n + 1) * (m + 1));
  auto at = [&](std::size_t i, std::size_t j) -> std::size_t& { return d[i * (m + 1) + j]; };
  for (std::size_t i = 0; i <= n; ++i) at(i, 0) = i;
  for (std::size_t j = 0; j <= m; ++j) at(0, j) = j;
  for (std::size_t i = 1; i <= n; ++i) {
    for (std::size_t j = 1; j <= m; ++j) {
      const std::size_t diag = at(i - 1, j - 1) + (ref[i - 1] == hyp[j - 1] ? 0 : 1);
      at(i, j) = std::min({diag, at(i - 1, j) + 1, at(i, j - 1) + 1});
    }
  }

  EditCounts c;
  c.ref_length = n;
  std::size_t i = n, j = m;
  while (i > 0 || j > 0) {
    const std::size_t here = at(i, j);
    if (i > 0 && j > 0 && ref[i - 1] == hyp[j - 1] && at(i - 1, j - 1) == here) {
      --i, --j;
    } else if (i > 0 && j > 0 && ref[i - 1] != hyp[j - 1] && at(i - 1, j - 1) + 1 == here) {
      ++c.substitutions;
      --i, --j;
    } else if (i > 0 && at(i - 1, j) + 1 == here) {
      ++c.deletions;
      --i;
    } else {
      ++c.insertions;
      --j;
    }
  }
  return c;
}

struct CmiInput {
  std::size_t n = 0;               // tokens in the utterance (or corpus slice)
  std::size_t u = 0;               // tokens with no language tag
  std::vector<std::size_t> words;  // per-language token counts

  std::size_t max_words() const {
    return words.empty() ? 0 : *std::max_element(words.begin(), words.end());
  }
};

// 100 * (1 - max_w / (n - u)) for n > u, and 0 for n == u.
inline double cmi(std::size_t n, std::size_t u, std::size_t max_w) {
  if (n < u) {
    throw std::invalid_argument("cmi: n (" + std::to_string(n) + ") < u (" + std::to_string(u) + ")");
  }
  if (n == u) return 0.0;
  if (max_w > n - u) throw std::invalid_argument("cmi: max_w exceeds n - u");
  return 100.0 * (1.0 - static_cast<double>(max_w) / static_cast<double>(n - u));
}

inline double cmi(const CmiInput& in) {
  const std::size_t tagged = std::accumulate(in.words.begin(), in.words.end(), std::size_t{0});
  if (tagged + in.u != in.n) {
    throw std::invalid_argument("cmi: word counts plus u (" + std::to_string(tagged + in.u) +
                                ") != n (" + std::to_string(in.n) + ")");
  }
  return cmi(in.n, in.u, in.max_words());
}

// Tags tokens through the lexicon; ids it does not know count toward u.
inline CmiInput cmi_counts(std::span<const int> tokens, const Lexicon& lexicon) {
  std::map<std::string, std::size_t> per_tag;
  CmiInput in;
  in.n = tokens.size();
  for (int t : tokens) {
    if (auto tag = lexicon.tag(t)) {
      ++per_tag[*tag];
    } else {
      ++in.u;
    }
  }
  for (const auto& [tag, count] : per_tag) in.words.push_back(count);
  return in;
}

struct HypothesisRecord {
  std::string id;
  std::vector<int> tokens;
};

struct ReportRow {
  std::string lang;  // "macro" for the average row
  std::size_t utterances = 0;
  EditCounts edits;
  double wer = 0.0;
  double del_rate = 0.0;
  double ins_rate = 0.0;
  double sub_rate = 0.0;
  std::size_t hyp_words = 0;
  std::size_t max_words = 0;    // largest single-language token count in the hypotheses
  std::size_t untagged = 0;     // hypothesis tokens outside the lexicon
  double cmi = 0.0;
};

struct Report {
  std::vector<ReportRow> languages;
  ReportRow macro;
};

// Groups utterances by the reference language. The macro row averages the
// per-language rates and sums the counts.
inline Report corpus_report(std::span<const Utterance> refs, std::span<const HypothesisRecord> hyps,
                            const Lexicon& lexicon) {
  std::map<std::string, const HypothesisRecord*> by_id;
  for (const auto& h : hyps) {
    if (!by_id.emplace(h.id, &h).second) {
      throw std::invalid_argument("corpus_report: duplicate hypothesis id '" + h.id + "'");
    }
  }
  std::vector<std::string> missing, extra;
  std::map<std::string, bool> ref_ids;
  for (const auto& r : refs) {
    ref_ids[r.id] = true;
    if (!by_id.contains(r.id)) missing.push_back(r.id);
  }
  for (const auto& [id, h] : by_id) {
    if (!ref_ids.contains(id)) extra.push_back(id);
  }
  if (!missing.empty() || !extra.empty()) {
    auto join = [](const std::vector<std::string>& v) {
      std::string s;
      for (const auto& x : v) s += (s.empty() ? "" : ", ") + x;
      return s;
    };
    std::string msg = "corpus_report: utterance ids differ between refs and hyps";
    if (!missing.empty()) msg += "; missing hypotheses: " + join(missing);
    if (!extra.empty()) msg += "; hypotheses without references: " + join(extra);
    throw std::invalid_argument(msg);
  }

  // Ordered by lang_id, then tag.
  std::map<std::pair<int, std::string>, std::vector<const Utterance*>> groups;
  for (const auto& r : refs) groups[{r.lang_id, r.lang}].push_back(&r);

  Report report;
  for (const auto& [key, utts] : groups) {
    ReportRow row;
    row.lang = key.second;
    row.utterances = utts.size();
    std::map<std::string, std::size_t> per_tag;
    for (const Utterance* r : utts) {
      const auto& hyp = by_id.at(r->id)->tokens;
      row.edits += align_wer(r->tokens, hyp);
      CmiInput c = cmi_counts(hyp, lexicon);
      row.hyp_words += c.n;
      row.untagged += c.u;
      for (int t : hyp) {
        if (auto tag = lexicon.tag(t)) ++per_tag[*tag];
      }
    }
    for (const auto& [tag, count] : per_tag) row.max_words = std::max(row.max_words, count);
    const double n_ref = static_cast<double>(std::max<std::size_t>(row.edits.ref_length, 1));
    row.wer = row.edits.wer();
    row.del_rate = static_cast<double>(row.edits.deletions) / n_ref;
    row.ins_rate = static_cast<double>(row.edits.insertions) / n_ref;
    row.sub_rate = static_cast<double>(row.edits.substitutions) / n_ref;
    row.cmi = cmi(row.hyp_words, row.untagged, row.max_words);
    report.languages.push_back(row);
  }

  ReportRow& m = report.macro;
  m.lang = "macro";
  for (const ReportRow& r : report.languages) {
    m.utterances += r.utterances;
    m.edits += r.edits;
    m.hyp_words += r.hyp_words;
    m.untagged += r.untagged;
    m.max_words += r.max_words;
    m.wer += r.wer;
    m.del_rate += r.del_rate;
    m.ins_rate += r.ins_rate;
    m.sub_rate += r.sub_rate;
    m.cmi += r.cmi;
  }
  if (!report.languages.empty()) {
    const double k = static_cast<double>(report.languages.size());
    m.wer /= k;
    m.del_rate /= k;
    m.ins_rate /= k;
    m.sub_rate /= k;
    m.cmi /= k;
  }
  return report;
}

inline nlohmann::json to_json(const ReportRow& r) {
  return {{"lang", r.lang},
          {"utterances", r.utterances},
          {"ref_words", r.edits.ref_length},
          {"hyp_words", r.hyp_words},
          {"deletions", r.edits.deletions},
          {"insertions", r.edits.insertions},
          {"substitutions", r.edits.substitutions},
          {"wer", r.wer},
          {"del_rate", r.del_rate},
          {"ins_rate", r.ins_rate},
          {"sub_rate", r.sub_rate},
          {"max_words", r.max_words},
          {"untagged_words", r.untagged},
          {"cmi", r.cmi}};
}

// Fixed-width table with WER and rates in percent.
inline std::string format_report_table(const Report& report) {
  std::string out;
  char line[256];
  std::snprintf(line, sizeof line, "%-8s %6s %7s %7s %7s %7s %7s %7s %7s %7s\n", "lang", "utts",
                "words", "WER%", "del%", "ins%", "sub%", "hyp_w", "max_w", "CMI");
  out += line;
  auto emit = [&](const ReportRow& r) {
    std::snprintf(line, sizeof line, "%-8s %6zu %7zu %7.2f %7.2f %7.2f %7.2f %7zu %7zu %7.2f\n",
                  r.lang.c_str(), r.utterances, r.edits.ref_length, 100.0 * r.wer,
                  100.0 * r.del_rate, 100.0 * r.ins_rate, 100.0 * r.sub_rate, r.hyp_words,
                  r.max_words, r.cmi);
    out += line;
  };
  for (const ReportRow& r : report.languages) emit(r);
  emit(report.macro);
  return out;
}

}  // namespace sprefix
