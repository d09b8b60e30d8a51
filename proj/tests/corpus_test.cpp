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

#include <set>

#include <gtest/gtest.h>

#include "sprefix/corpus.hpp"
#include "support/test_util.hpp"

namespace sprefix {
namespace {

using testing::ScratchDir;

CorpusSpec small_spec() {
  CorpusSpec s;
  s.train_utterances = 30;
  s.test_utterances = 9;
  s.seed = 4;
  return s;
}

bool same(const Utterance& a, const Utterance& b) {
  return a.id == b.id && a.lang == b.lang && a.lang_id == b.lang_id && a.tokens == b.tokens &&
         a.frames == b.frames && a.raw_text == b.raw_text;
}

TEST(CorpusSpec, RangesPartitionTheVocabulary) {
  for (std::size_t vocab : {3u, 7u, 30u, 31u}) {
    CorpusSpec s;
    s.vocab = vocab;
    std::vector<int> owner(vocab, -1);
    for (std::size_t l = 0; l < s.languages; ++l) {
      const TokenRange r = s.range(l);
      EXPECT_GT(r.size(), 0);
      for (int id = r.begin; id < r.end; ++id) {
        EXPECT_EQ(owner[static_cast<std::size_t>(id)], -1);
        owner[static_cast<std::size_t>(id)] = static_cast<int>(l);
        EXPECT_EQ(s.language_of(id), l);
      }
    }
    for (int o : owner) EXPECT_NE(o, -1);
    EXPECT_THROW(s.language_of(static_cast<int>(vocab)), std::out_of_range);
  }
  CorpusSpec s;
  s.vocab = 31;
  EXPECT_EQ(s.range(0).size(), 11);
  EXPECT_EQ(s.range(2).size(), 10);
}

TEST(CorpusSpec, ValidationAndCounts) {
  CorpusSpec s;
  s.vocab = 2;
  EXPECT_THROW(s.validate(), ConfigError);
  s = CorpusSpec{};
  s.lang_tags = {"en", "en", "de"};
  EXPECT_THROW(s.validate(), ConfigError);
  s.lang_tags = {"en", "de"};
  EXPECT_THROW(s.validate(), ConfigError);
  s = CorpusSpec{};
  s.code_mix_prob = 1.5;
  EXPECT_THROW(s.validate(), ConfigError);

  const auto per = CorpusSpec::read(KeyValueConfig::parse("languages = 2\ntrain_per_language = 7\n"));
  EXPECT_EQ(per.train_utterances, 14u);
  EXPECT_THROW(CorpusSpec::read(KeyValueConfig::parse("train_utterances = 4\ntrain_per_language = 2\n")),
               ConfigError);
  EXPECT_THROW(CorpusSpec::read(KeyValueConfig::parse("vocabulary = 4\n")), ConfigError);

  CorpusSpec tagged = small_spec();
  tagged.lang_tags = {"en", "de", "fr"};
  tagged.noise_std = 0.125;
  KeyValueConfig kv;
  tagged.write(kv);
  const CorpusSpec back = CorpusSpec::read(kv);
  EXPECT_EQ(back.lang_tags, tagged.lang_tags);
  EXPECT_EQ(back.noise_std, tagged.noise_std);
  EXPECT_EQ(back.train_utterances, tagged.train_utterances);
}

TEST(Generation, DeterministicAndSeedSensitive) {
  const Corpus a = generate_synthetic_corpus(small_spec());
  const Corpus b = generate_synthetic_corpus(small_spec());
  ASSERT_EQ(a.train.size(), 30u);
  ASSERT_EQ(a.test.size(), 9u);
  for (std::size_t i = 0; i < a.train.size(); ++i) EXPECT_TRUE(same(a.train[i], b.train[i]));
  CorpusSpec other = small_spec();
  other.seed = 5;
  EXPECT_NE(generate_synthetic_corpus(other).train[0].frames, a.train[0].frames);

  // Growing one split leaves existing utterances unchanged.
  CorpusSpec more = small_spec();
  more.train_utterances = 40;
  EXPECT_TRUE(same(generate_synthetic_corpus(more).train[29], a.train[29]));
}

TEST(Generation, RecordsRespectTheSpec) {
  CorpusSpec s = small_spec();
  s.code_mix_prob = 0.0;
  const Corpus c = generate_synthetic_corpus(s);
  std::set<std::string> ids;
  for (const auto* set : {&c.train, &c.test}) {
    for (std::size_t i = 0; i < set->size(); ++i) {
      const Utterance& u = (*set)[i];
      EXPECT_TRUE(ids.insert(u.id).second);
      EXPECT_EQ(u.lang_id, static_cast<int>(i % s.languages));
      EXPECT_EQ(u.lang, s.tag(i % s.languages));
      EXPECT_GE(u.tokens.size(), s.min_tokens);
      EXPECT_LE(u.tokens.size(), s.max_tokens);
      EXPECT_GE(u.num_frames(), u.tokens.size() * s.min_frames_per_token);
      EXPECT_LE(u.num_frames(), u.tokens.size() * s.max_frames_per_token);
      EXPECT_EQ(u.frames.dim(1), s.feature_dim);
      for (int t : u.tokens) EXPECT_EQ(s.language_of(t), static_cast<std::size_t>(u.lang_id));
    }
  }
  EXPECT_EQ(c.train[0].id, "train-000000");
  EXPECT_EQ(c.test[3].id, "test-000003");
}

TEST(Generation, NoiselessFramesAreTokenTemplates) {
  CorpusSpec s = small_spec();
  s.noise_std = 0.0;
  s.min_frames_per_token = s.max_frames_per_token = 2;
  const Corpus c = generate_synthetic_corpus(s);
  const Tensor tpl = token_templates(s);
  const Utterance& u = c.train[0];
  for (std::size_t t = 0; t < u.num_frames(); ++t) {
    const auto tok = static_cast<std::size_t>(u.tokens[t / 2]);
    for (std::size_t f = 0; f < s.feature_dim; ++f) EXPECT_EQ(u.frames(t, f), tpl(tok, f));
  }
}

TEST(Generation, CodeMixRateMatchesTheProbability) {
  CorpusSpec s;
  s.train_utterances = 3000;
  s.test_utterances = 0;
  s.code_mix_prob = 0.2;
  const Corpus c = generate_synthetic_corpus(s);
  std::size_t foreign = 0, total = 0;
  for (const Utterance& u : c.train) {
    for (int t : u.tokens) {
      foreign += s.language_of(t) != static_cast<std::size_t>(u.lang_id);
      ++total;
    }
  }
  const double rate = static_cast<double>(foreign) / static_cast<double>(total);
  EXPECT_NEAR(rate, 0.2, 0.01) << total << " tokens";
}

TEST(CorpusFiles, RoundTripWithMeta) {
  ScratchDir d("corpus");
  Corpus c = generate_synthetic_corpus(small_spec());
  c.train[1].raw_text = "hello";
  const nlohmann::json meta = {{"split", "train"}, {"seed", 4}};
  write_corpus(d / "train.jsonl", c.train, meta);
  const auto back = read_corpus(d / "train.jsonl");
  ASSERT_EQ(back.size(), c.train.size());
  for (std::size_t i = 0; i < back.size(); ++i) EXPECT_TRUE(same(back[i], c.train[i])) << i;
  EXPECT_EQ(read_meta(d / "train.jsonl"), meta);

  write_corpus(d / "plain.jsonl", c.test);
  EXPECT_EQ(read_meta(d / "plain.jsonl"), std::nullopt);
  EXPECT_EQ(read_corpus(d / "plain.jsonl").size(), c.test.size());
}

std::string error_of(const std::filesystem::path& p) {
  try {
    read_corpus(p);
  } catch (const CorpusError& e) {
    return e.what();
  }
  return "";
}

TEST(CorpusFiles, ErrorsNameFileAndLine) {
  ScratchDir d("bad");
  const std::string good = R"({"id":"a","lang":"l0","lang_id":0,"frames":[[1,2]],"tokens":[1]})";

  testing::spit(d / "missing.jsonl", good + "\n\n" + R"({"id":"b","lang":"l0","frames":[[1,2]],"tokens":[1]})" + "\n");
  std::string e = error_of(d / "missing.jsonl");
  EXPECT_NE(e.find("missing.jsonl:3:"), std::string::npos) << e;
  EXPECT_NE(e.find("missing field 'lang_id'"), std::string::npos) << e;

  testing::spit(d / "dup.jsonl", good + "\n" + good + "\n");
  e = error_of(d / "dup.jsonl");
  EXPECT_NE(e.find("dup.jsonl:2:"), std::string::npos) << e;
  EXPECT_NE(e.find("duplicate utterance id 'a' (first on line 1)"), std::string::npos) << e;

  testing::spit(d / "broken.jsonl", good + "\n{\"id\":\n");
  EXPECT_NE(error_of(d / "broken.jsonl").find("broken.jsonl:2: malformed record"), std::string::npos);

  testing::spit(d / "ragged.jsonl", R"({"id":"a","lang":"l0","lang_id":0,"frames":[[1,2],[3]],"tokens":[1]})");
  EXPECT_NE(error_of(d / "ragged.jsonl").find("row 1 has 1 values"), std::string::npos);

  testing::spit(d / "width.jsonl", good + "\n" + R"({"id":"b","lang":"l0","lang_id":0,"frames":[[1]],"tokens":[1]})");
  EXPECT_NE(error_of(d / "width.jsonl").find("feature dim 1"), std::string::npos);

  testing::spit(d / "type.jsonl", R"({"id":"a","lang":"l0","lang_id":"zero","frames":[[1]],"tokens":[1]})");
  EXPECT_NE(error_of(d / "type.jsonl").find("bad field type"), std::string::npos);

  EXPECT_NE(error_of(d / "absent.jsonl").find("cannot open"), std::string::npos);
}

TEST(Lexicon, FromSpecAndFileRoundTrip) {
  CorpusSpec s;
  s.vocab = 7;
  s.lang_tags = {"en", "de", "fr"};
  const Lexicon lex = Lexicon::from_spec(s);
  EXPECT_EQ(lex.size(), 7u);
  EXPECT_EQ(lex.tag(0), "en");
  EXPECT_EQ(lex.tag(6), "fr");
  EXPECT_EQ(lex.tag(7), std::nullopt);

  ScratchDir d("lex");
  lex.write(d / "lex.tsv");
  EXPECT_EQ(Lexicon::read(d / "lex.tsv").entries(), lex.entries());

  testing::spit(d / "c.tsv", "# comment\n\n3\tde\n 4  fr \n");
  const Lexicon c = Lexicon::read(d / "c.tsv");
  EXPECT_EQ(c.size(), 2u);
  EXPECT_EQ(c.tag(4), "fr");

  auto fails = [&](const std::string& text, const std::string& needle) {
    testing::spit(d / "x.tsv", text);
    try {
      Lexicon::read(d / "x.tsv");
    } catch (const CorpusError& e) {
      return std::string(e.what()).find(needle) != std::string::npos;
    }
    return false;
  };
  EXPECT_TRUE(fails("1\ten\n1\tde\n", "x.tsv:2: lexicon: duplicate token id 1"));
  EXPECT_TRUE(fails("one\ten\n", "bad token id 'one'"));
  EXPECT_TRUE(fails("5\n", "expected"));
}

}  // namespace
}  // namespace sprefix
