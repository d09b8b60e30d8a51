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

#include <gtest/gtest.h>

#include "sprefix/metrics.hpp"
#include "sprefix/pipeline.hpp"
#include "support/test_util.hpp"

namespace sprefix {
namespace {

using V = std::vector<int>;

EditCounts edits(const V& ref, const V& hyp) { return align_wer(ref, hyp); }

TEST(Wer, WorkedExamples) {
  EXPECT_EQ(edits({1, 2, 3}, {1, 2, 3}), (EditCounts{0, 0, 0, 3}));
  EXPECT_EQ(edits({1, 2, 3}, {1, 3}), (EditCounts{1, 0, 0, 3}));
  EXPECT_EQ(edits({1, 3}, {1, 2, 3}), (EditCounts{0, 1, 0, 2}));
  EXPECT_EQ(edits({1, 2, 3}, {1, 4, 3}), (EditCounts{0, 0, 1, 3}));
  EXPECT_EQ(edits({1, 2, 3, 4}, {}), (EditCounts{4, 0, 0, 4}));
  EXPECT_DOUBLE_EQ(edits({1, 2, 3, 4}, {2, 3, 5, 4, 4}).wer(), 3.0 / 4.0);
  EXPECT_EQ(edits({}, {}).wer(), 0.0);
  EXPECT_EQ(edits({}, {1, 2}).wer(), 2.0);
}

TEST(Wer, TieBreakPrefersSubstitution) {
  // {1,2} vs {2,3}: two substitutions or one deletion plus one insertion.
  EXPECT_EQ(edits({1, 2}, {2, 3}), (EditCounts{0, 0, 2, 2}));
  // One token short: two substitutions and a deletion.
  EXPECT_EQ(edits({1, 2, 3}, {4, 5}), (EditCounts{1, 0, 2, 3}));
}

TEST(Wer, AgreesWithAnIndependentDistanceOnRandomPairs) {
  Rng rng(12);
  for (int trial = 0; trial < 2000; ++trial) {
    V a(rng.below(9)), b(rng.below(9));
    for (int& x : a) x = static_cast<int>(rng.below(4));
    for (int& x : b) x = static_cast<int>(rng.below(4));
    const EditCounts c = edits(a, b);
    EXPECT_EQ(c.errors(), testing::edit_distance(a, b));
    EXPECT_EQ(c.ref_length, a.size());
    // Every hypothesis token is matched, substituted or inserted.
    EXPECT_EQ(a.size() - c.deletions + c.insertions, b.size());
    // The distance is symmetric.
    EXPECT_EQ(edits(b, a).errors(), c.errors());
  }
}

TEST(Cmi, FormulaCases) {
  EXPECT_DOUBLE_EQ(cmi(4, 0, 3), 25.0);
  EXPECT_DOUBLE_EQ(cmi(3, 3, 0), 0.0);
  EXPECT_DOUBLE_EQ(cmi(5, 0, 5), 0.0);
  EXPECT_DOUBLE_EQ(cmi(6, 2, 2), 50.0);
  EXPECT_DOUBLE_EQ(cmi(0, 0, 0), 0.0);
  EXPECT_THROW(cmi(2, 3, 0), std::invalid_argument);
  EXPECT_THROW(cmi(4, 1, 4), std::invalid_argument);

  EXPECT_DOUBLE_EQ(cmi(CmiInput{8, 0, {6, 2}}), 25.0);
  EXPECT_DOUBLE_EQ(cmi(CmiInput{5, 1, {2, 2}}), 50.0);
  EXPECT_THROW(cmi(CmiInput{5, 0, {2, 2}}), std::invalid_argument);
}

TEST(Cmi, CountsThroughTheLexicon) {
  Lexicon lex;
  lex.add(0, "en");
  lex.add(1, "en");
  lex.add(2, "de");
  const CmiInput in = cmi_counts(V{0, 1, 2, 9, 0}, lex);
  EXPECT_EQ(in.n, 5u);
  EXPECT_EQ(in.u, 1u);
  EXPECT_EQ(in.max_words(), 3u);
  EXPECT_DOUBLE_EQ(cmi(in), 25.0);
}

TEST(Cmi, TracksTheCodeMixRateOnTwoLanguages) {
  // With a foreign-token rate p and monolingual references, CMI ~ 100 p.
  CorpusSpec s;
  s.languages = 2;
  s.vocab = 10;
  s.code_mix_prob = 0.05;
  s.train_utterances = 4000;
  s.test_utterances = 0;
  s.min_tokens = s.max_tokens = 20;
  const Corpus c = generate_synthetic_corpus(s);
  std::vector<HypothesisRecord> hyps;
  for (const auto& u : c.train) hyps.push_back({u.id, u.tokens});
  const Report r = corpus_report(c.train, hyps, Lexicon::from_spec(s));
  for (const auto& row : r.languages) EXPECT_NEAR(row.cmi, 5.0, 1.0) << row.lang;
  EXPECT_EQ(r.macro.wer, 0.0);
}

Utterance ref(const std::string& id, int lang_id, const std::string& lang, V tokens) {
  Utterance u;
  u.id = id;
  u.lang_id = lang_id;
  u.lang = lang;
  u.tokens = std::move(tokens);
  u.frames = Tensor({1, 1});
  return u;
}

TEST(Report, GroupsByLanguageAndAveragesRates) {
  Lexicon lex;
  lex.add(1, "en");
  lex.add(2, "en");
  lex.add(3, "de");
  lex.add(4, "de");
  const std::vector<Utterance> refs{ref("b1", 1, "de", {3, 4}), ref("a1", 0, "en", {1, 2, 1, 2}),
                                    ref("a2", 0, "en", {1, 2})};
  const std::vector<HypothesisRecord> hyps{{"a1", {1, 2, 1}}, {"a2", {1, 2, 3}}, {"b1", {3, 4}}};
  const Report r = corpus_report(refs, hyps, lex);
  ASSERT_EQ(r.languages.size(), 2u);
  const ReportRow& en = r.languages[0];
  EXPECT_EQ(en.lang, "en");
  EXPECT_EQ(en.utterances, 2u);
  EXPECT_EQ(en.edits, (EditCounts{1, 1, 0, 6}));
  EXPECT_DOUBLE_EQ(en.wer, 2.0 / 6.0);
  EXPECT_DOUBLE_EQ(en.del_rate, 1.0 / 6.0);
  EXPECT_EQ(en.hyp_words, 6u);
  EXPECT_EQ(en.max_words, 5u);
  EXPECT_DOUBLE_EQ(en.cmi, 100.0 * (1.0 - 5.0 / 6.0));
  const ReportRow& de = r.languages[1];
  EXPECT_EQ(de.wer, 0.0);
  EXPECT_EQ(de.cmi, 0.0);

  EXPECT_EQ(r.macro.lang, "macro");
  EXPECT_EQ(r.macro.utterances, 3u);
  EXPECT_EQ(r.macro.edits.ref_length, 8u);
  EXPECT_DOUBLE_EQ(r.macro.wer, (en.wer + de.wer) / 2);
  EXPECT_DOUBLE_EQ(r.macro.cmi, (en.cmi + de.cmi) / 2);

  const std::string table = format_report_table(r);
  EXPECT_NE(table.find("macro"), std::string::npos);
  EXPECT_NE(table.find("33.33"), std::string::npos);
}

TEST(Report, IdMismatchesAreListed) {
  const std::vector<Utterance> refs{ref("a", 0, "l0", {1}), ref("b", 0, "l0", {1})};
  const std::vector<HypothesisRecord> hyps{{"a", {1}}, {"c", {1}}};
  try {
    corpus_report(refs, hyps, Lexicon{});
    FAIL();
  } catch (const std::invalid_argument& e) {
    const std::string m = e.what();
    EXPECT_NE(m.find("missing hypotheses: b"), std::string::npos) << m;
    EXPECT_NE(m.find("hypotheses without references: c"), std::string::npos) << m;
  }
  const std::vector<HypothesisRecord> dup{{"a", {1}}, {"a", {1}}, {"b", {}}};
  EXPECT_THROW(corpus_report(refs, dup, Lexicon{}), std::invalid_argument);
}

TEST(Report, FilesRoundTrip) {
  testing::ScratchDir d("report");
  const std::vector<HypothesisRecord> hyps{{"a", {1, 2}}, {"b", {}}};
  write_hypotheses(d / "h.jsonl", hyps, {{"decoder", "lm"}});
  const auto back = read_hypotheses(d / "h.jsonl");
  ASSERT_EQ(back.size(), 2u);
  EXPECT_EQ(back[0].tokens, (V{1, 2}));
  EXPECT_TRUE(back[1].tokens.empty());
  EXPECT_EQ(read_meta(d / "h.jsonl")->at("decoder"), "lm");

  const std::vector<Utterance> refs{ref("a", 0, "l0", {1, 2}), ref("b", 0, "l0", {3})};
  write_report(d / "r.jsonl", corpus_report(refs, back, Lexicon{}), {{"x", 1}});
  const std::string lines = testing::slurp(d / "r.jsonl");
  EXPECT_EQ(std::count(lines.begin(), lines.end(), '\n'), 3);
  EXPECT_TRUE(std::filesystem::exists(d / "r.jsonl.txt"));

  testing::spit(d / "bad.jsonl", "{\"id\":\"a\"}\n");
  EXPECT_THROW(read_hypotheses(d / "bad.jsonl"), CorpusError);
}

}  // namespace
}  // namespace sprefix
