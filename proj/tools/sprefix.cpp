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

// sprefix: gen-data | train | decode | evaluate | verify

#include <cstdio>
#include <filesystem>
#include <iostream>
#include <string>

#include <CLI11.hpp>
#include <json.hpp>

#include "sprefix/checkpoint.hpp"
#include "sprefix/corpus.hpp"
#include "sprefix/metrics.hpp"
#include "sprefix/pipeline.hpp"
#include "sprefix/verify.hpp"

namespace fs = std::filesystem;
using namespace sprefix;

namespace {

KeyValueConfig load_config(const std::string& path) {
  if (!fs::exists(path)) throw ConfigError("config file not found: " + path);
  return KeyValueConfig::load(path);
}

int gen_data(const std::string& spec_path, const std::string& out_train,
             const std::string& out_test, const std::string& lexicon_path) {
  const CorpusSpec spec = CorpusSpec::read(load_config(spec_path));
  KeyValueConfig canonical;
  spec.write(canonical);
  const std::string hash = hex64(fnv1a64(canonical.to_text()));
  const Corpus c = generate_synthetic_corpus(spec);
  auto meta = [&](const char* split) {
    return nlohmann::json{{"seed", spec.seed}, {"config_hash", hash}, {"split", split}};
  };
  write_corpus(out_train, c.train, meta("train"));
  write_corpus(out_test, c.test, meta("test"));
  Lexicon::from_spec(spec).write(lexicon_path);
  std::cerr << "wrote " << c.train.size() << " train and " << c.test.size()
            << " test utterances\n";
  return 0;
}

int train(const std::string& config_path, const std::string& train_path, std::string out,
          const std::string& eval_path, std::size_t progress_every) {
  const TrainConfig cfg = TrainConfig::read(load_config(config_path));
  if (out.empty()) out = cfg.checkpoint_dir;
  if (out.empty()) throw ConfigError("no output directory: pass --out or set checkpoint_dir");
  const auto data = read_corpus(train_path);
  std::vector<Utterance> eval;
  if (!eval_path.empty()) eval = read_corpus(eval_path);
  RunInfo info{config_path, train_path, eval_path};
  run_training(cfg, data, out, info, eval, &std::cerr, progress_every);
  return 0;
}

int decode(const std::string& checkpoint, const std::string& corpus_path,
           const std::string& decoder_name, const std::string& out, std::size_t max_len,
           std::size_t max_symbols) {
  const Decoder decoder = parse_decoder(decoder_name);
  const Checkpoint ck = load_checkpoint(checkpoint);
  require_decoder_support(ck.model_config, decoder);
  const PrefixLM model(ck.model_config, ck.params);
  const auto data = read_corpus(corpus_path);
  check_corpus_fits(ck.model_config, data);
  DecodeOptions opts;
  opts.max_len = max_len;
  opts.max_symbols_per_frame = max_symbols;
  const auto hyps = decode_corpus(model, data, decoder, opts);
  nlohmann::json meta = {{"decoder", decoder_name},
                         {"config_hash", hex64(fnv1a64(ck.config.to_text()))},
                         {"seed", ck.config.get<std::uint64_t>("seed", 0)}};
  if (ck.manifest.contains("step")) meta["step"] = ck.manifest["step"];
  write_hypotheses(out, hyps, meta);
  return 0;
}

int evaluate(const std::string& refs_path, const std::string& hyps_path,
             const std::string& lexicon_path, const std::string& out) {
  const auto refs = read_corpus(refs_path);
  const auto hyps = read_hypotheses(hyps_path);
  const Lexicon lexicon = Lexicon::read(lexicon_path);
  const Report report = corpus_report(refs, hyps, lexicon);
  nlohmann::json meta = read_meta(hyps_path).value_or(nlohmann::json::object());
  write_report(out, report, meta);
  return 0;
}

int verify_cmd(const std::string& suite, std::uint64_t seed) {
  const SuiteResult r = run_suite(suite, seed);
  for (const auto& line : r.lines) std::cout << line << '\n';
  std::printf("suite=%s checks=%zu failures=%zu max_error=%.3e\n", r.suite.c_str(), r.checks,
              r.failures, r.max_error);
  return r.ok() ? 0 : 1;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Speech prefix-tuning for prefix language models on a synthetic corpus"};
  app.require_subcommand(1);

  std::string spec, out_train, out_test, lexicon;
  auto* gen = app.add_subcommand("gen-data", "generate a synthetic corpus and lexicon");
  gen->add_option("--spec", spec, "corpus spec file (key = value)")->required();
  gen->add_option("--out-train", out_train, "train corpus output")->required();
  gen->add_option("--out-test", out_test, "test corpus output")->required();
  gen->add_option("--lexicon", lexicon, "lexicon output")->required();

  std::string config, train_path, out_dir, eval_path;
  std::size_t progress = 0;
  auto* tr = app.add_subcommand("train", "train a model and write checkpoints");
  tr->add_option("--config", config, "run config (key = value)")->required();
  tr->add_option("--train", train_path, "training corpus")->required();
  tr->add_option("--out", out_dir, "output directory (default: checkpoint_dir)");
  tr->add_option("--eval", eval_path, "corpus decoded at every eval_every checkpoint");
  tr->add_option("--progress", progress, "print every N-th step record to stderr");

  std::string checkpoint, corpus, decoder = "lm", hyps_out;
  std::size_t max_len = 64, max_symbols = 5;
  auto* dec = app.add_subcommand("decode", "greedy decoding of a corpus");
  dec->add_option("--checkpoint", checkpoint, "checkpoint or training output directory")->required();
  dec->add_option("--corpus", corpus, "corpus to decode")->required();
  dec->add_option("--decoder", decoder, "lm | rnnt | ctc")->check(CLI::IsMember({"lm", "rnnt", "ctc"}));
  dec->add_option("--out", hyps_out, "hypotheses output")->required();
  dec->add_option("--max-len", max_len, "LM decoding length cap");
  dec->add_option("--max-symbols", max_symbols, "RNNT labels per frame cap");

  std::string refs, hyps, lex, report;
  auto* ev = app.add_subcommand("evaluate", "WER / CMI report");
  ev->add_option("--refs", refs, "reference corpus")->required();
  ev->add_option("--hyps", hyps, "hypotheses file")->required();
  ev->add_option("--lexicon", lex, "lexicon file")->required();
  ev->add_option("--out", report, "report output (a .txt table is written alongside)")->required();

  std::string suite;
  std::uint64_t seed = 1;
  auto* ver = app.add_subcommand("verify", "run a self-check suite");
  ver->add_option("--suite", suite, "grad | rnnt-oracle | ctc-oracle | mask | routing")
      ->required()
      ->check(CLI::IsMember({"grad", "rnnt-oracle", "ctc-oracle", "mask", "routing"}));
  ver->add_option("--seed", seed, "suite seed");

  CLI11_PARSE(app, argc, argv);

  try {
    if (*gen) return gen_data(spec, out_train, out_test, lexicon);
    if (*tr) return train(config, train_path, out_dir, eval_path, progress);
    if (*dec) return decode(checkpoint, corpus, decoder, hyps_out, max_len, max_symbols);
    if (*ev) return evaluate(refs, hyps, lex, report);
    if (*ver) return verify_cmd(suite, seed);
  } catch (const std::exception& e) {
    std::cerr << "sprefix: error: " << e.what() << '\n';
    return 1;
  }
  return 1;
}
