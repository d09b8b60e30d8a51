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

#include <sys/wait.h>

#include <cstdlib>

#include <gtest/gtest.h>

#include "sprefix/checkpoint.hpp"
#include "sprefix/corpus.hpp"
#include "sprefix/pipeline.hpp"
#include "support/test_util.hpp"

namespace sprefix {
namespace {

using testing::ScratchDir;

struct Result {
  int code = -1;
  std::string out;
  std::string err;
};

Result run(const ScratchDir& dir, const std::string& args) {
  const std::string cmd = "cd '" + dir.path().string() + "' && '" SPREFIX_CLI "' " + args +
                          " > stdout.txt 2> stderr.txt";
  const int status = std::system(cmd.c_str());
  Result r;
  r.code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
  r.out = testing::slurp(dir / "stdout.txt");
  r.err = testing::slurp(dir / "stderr.txt");
  return r;
}

constexpr const char* kSpec =
    "languages = 2\nvocab = 8\ntrain_utterances = 12\ntest_utterances = 4\n"
    "min_tokens = 2\nmax_tokens = 3\nfeature_dim = 4\nseed = 5\n";

constexpr const char* kConfig =
    "vocab = 8\nlanguages = 2\nfeature_dim = 4\nwidth = 8\nlayers = 1\nheads = 2\nffn_mult = 2\n"
    "encoder_layers = 1\nprompt_len = 2\nsubsample_factor = 1\nmax_frames = 32\nmax_text_len = 6\n"
    "asr_head = rnnt\njoint_dim = 8\npred_dim = 4\nsteps = 4\nbatch_size = 2\nseed = 2\n";

class Cli : public ::testing::Test {
 protected:
  void SetUp() override {
    testing::spit(dir / "spec.txt", kSpec);
    testing::spit(dir / "run.txt", kConfig);
  }
  void generate() {
    const Result r = run(dir, "gen-data --spec spec.txt --out-train train.jsonl --out-test test.jsonl "
                              "--lexicon lex.tsv");
    ASSERT_EQ(r.code, 0) << r.err;
  }
  ScratchDir dir{"cli"};
};

TEST_F(Cli, GenDataWritesCorpusAndLexicon) {
  generate();
  const auto train = read_corpus(dir / "train.jsonl");
  EXPECT_EQ(train.size(), 12u);
  EXPECT_EQ(read_corpus(dir / "test.jsonl").size(), 4u);
  EXPECT_EQ(read_meta(dir / "train.jsonl")->at("seed"), 5);
  EXPECT_EQ(Lexicon::read(dir / "lex.tsv").size(), 8u);
  const std::string first = testing::slurp(dir / "train.jsonl");
  generate();
  EXPECT_EQ(testing::slurp(dir / "train.jsonl"), first);
}

TEST_F(Cli, TrainDecodeEvaluate) {
  generate();
  Result r = run(dir, "train --config run.txt --train train.jsonl --out run");
  ASSERT_EQ(r.code, 0) << r.err;
  EXPECT_TRUE(std::filesystem::exists(dir / "run/final/params.bin"));
  const std::string metrics = testing::slurp(dir / "run/metrics.jsonl");
  EXPECT_EQ(std::count(metrics.begin(), metrics.end(), '\n'), 5);  // meta plus one line per step

  for (const char* decoder : {"lm", "rnnt"}) {
    const std::string hyp = std::string("hyp_") + decoder + ".jsonl";
    r = run(dir, std::string("decode --checkpoint run --corpus test.jsonl --decoder ") + decoder +
                     " --out " + hyp);
    ASSERT_EQ(r.code, 0) << r.err;
    EXPECT_EQ(read_hypotheses(dir / hyp).size(), 4u);
    r = run(dir, "evaluate --refs test.jsonl --hyps " + hyp + " --lexicon lex.tsv --out rep.jsonl");
    ASSERT_EQ(r.code, 0) << r.err;
    EXPECT_NE(testing::slurp(dir / "rep.jsonl.txt").find("macro"), std::string::npos);
  }

  r = run(dir, "decode --checkpoint run --corpus test.jsonl --decoder ctc --out x.jsonl");
  EXPECT_EQ(r.code, 1);
  EXPECT_EQ(r.err.rfind("sprefix: error: ", 0), 0u) << r.err;
}

TEST_F(Cli, ErrorsExitNonZeroWithAMessage) {
  Result r = run(dir, "gen-data --spec missing.txt --out-train a --out-test b --lexicon c");
  EXPECT_EQ(r.code, 1);
  EXPECT_EQ(r.err.rfind("sprefix: error: ", 0), 0u) << r.err;

  testing::spit(dir / "typo.txt", "vocabb = 8\n");
  r = run(dir, "train --config typo.txt --train none.jsonl --out x");
  EXPECT_EQ(r.code, 1);
  EXPECT_NE(r.err.find("vocabb"), std::string::npos) << r.err;

  testing::spit(dir / "bad.jsonl", "{\"id\": 1}\n");
  r = run(dir, "train --config run.txt --train bad.jsonl --out x");
  EXPECT_EQ(r.code, 1);
  EXPECT_NE(r.err.find("bad.jsonl:1"), std::string::npos) << r.err;

  r = run(dir, "decode --checkpoint nowhere --corpus bad.jsonl --out h.jsonl");
  EXPECT_EQ(r.code, 1);

  r = run(dir, "verify --suite nonsense");
  EXPECT_NE(r.code, 0);
  r = run(dir, "");
  EXPECT_NE(r.code, 0);
}

TEST_F(Cli, VerifySuitesPass) {
  for (const char* suite : {"rnnt-oracle", "ctc-oracle", "mask", "routing", "grad"}) {
    const Result r = run(dir, std::string("verify --suite ") + suite + " --seed 3");
    EXPECT_EQ(r.code, 0) << suite << "\n" << r.out << r.err;
    EXPECT_EQ(r.out.find("FAIL"), std::string::npos) << suite << "\n" << r.out;
  }
}

}  // namespace
}  // namespace sprefix
