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

// Run configuration, the training loop, batch decoding and report files.
//
// A training output directory looks like:
//
//   config.txt  manifest.json  metrics.jsonl  [eval.jsonl]
//   checkpoints/step-000000/ ...  final/
//
// Output files carry the seed and config hash but no timestamps or absolute
// timings, so reruns are byte-identical.

#pragma once

#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <limits>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "sprefix/checkpoint.hpp"
#include "sprefix/config.hpp"
#include "sprefix/corpus.hpp"
#include "sprefix/decoding.hpp"
#include "sprefix/metrics.hpp"
#include "sprefix/model.hpp"
#include "sprefix/rng.hpp"
#include "sprefix/training.hpp"

namespace sprefix {

class TrainingError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

inline std::string hex64(std::uint64_t v) {
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(v));
  return buf;
}

struct TrainConfig {
  PrefixLMConfig model;
  double alpha = 0.5;
  std::string regime = "finetuned_llm";
  double lr = 1e-3;
  double clip_norm = 1.0;
  std::size_t steps = 1000;
  std::size_t batch_size = 8;
  std::uint64_t seed = 1;
  std::size_t eval_every = 0;  // 0: checkpoints only at step 0 and the end
  std::string checkpoint_dir;  // used when no output directory is given
  Decoder eval_decoder = Decoder::lm;
  std::string init_from;  // optional checkpoint whose init_groups are copied in
  std::vector<ParamGroup> init_groups{ParamGroup::llm};

  void validate() const {
    model.validate();
    JointLossConfig{alpha}.validate();
    Regime::parse(regime);
    if (!(lr > 0.0)) throw ConfigError("lr must be > 0");
    if (!(clip_norm > 0.0)) throw ConfigError("clip_norm must be > 0");
    if (batch_size < 1) throw ConfigError("batch_size must be >= 1");
    require_decoder_support(model, eval_decoder);
  }

  KeyValueConfig to_kv() const {
    KeyValueConfig kv;
    model.write(kv);
    kv.set("alpha", nlohmann::json(alpha).dump());
    kv.set("regime", regime);
    kv.set("lr", nlohmann::json(lr).dump());
    kv.set("clip_norm", nlohmann::json(clip_norm).dump());
    kv.set("steps", std::to_string(steps));
    kv.set("batch_size", std::to_string(batch_size));
    kv.set("seed", std::to_string(seed));
    kv.set("eval_every", std::to_string(eval_every));
    if (!checkpoint_dir.empty()) kv.set("checkpoint_dir", checkpoint_dir);
    kv.set("eval_decoder", std::string(to_string(eval_decoder)));
    if (!init_from.empty()) {
      kv.set("init_from", init_from);
      std::string groups;
      for (ParamGroup g : init_groups) groups += (groups.empty() ? "" : ",") + std::string(to_string(g));
      kv.set("init_groups", groups);
    }
    return kv;
  }

  std::uint64_t hash() const { return fnv1a64(to_kv().to_text()); }

  static TrainConfig read(const KeyValueConfig& kv) {
    kv.check_known({"width", "layers", "heads", "vocab", "model_vocab", "feature_dim",
                    "subsample_factor", "prompt_len", "languages", "encoder_layers", "ffn_mult",
                    "joint_dim", "pred_dim", "max_frames", "max_text_len", "asr_head",
                    "speech_output", "alpha", "regime", "lr", "clip_norm", "steps", "batch_size",
                    "seed", "eval_every", "checkpoint_dir", "eval_decoder", "init_from",
                    "init_groups"});
    TrainConfig c;
    c.model = PrefixLMConfig::read(kv);
    c.alpha = kv.get<double>("alpha", c.alpha);
    c.regime = kv.get<std::string>("regime", c.regime);
    c.lr = kv.get<double>("lr", c.lr);
    c.clip_norm = kv.get<double>("clip_norm", c.clip_norm);
    c.steps = kv.get<std::size_t>("steps", c.steps);
    c.batch_size = kv.get<std::size_t>("batch_size", c.batch_size);
    c.seed = kv.get<std::uint64_t>("seed", c.seed);
    c.eval_every = kv.get<std::size_t>("eval_every", c.eval_every);
    c.checkpoint_dir = kv.get<std::string>("checkpoint_dir", c.checkpoint_dir);
    c.eval_decoder = parse_decoder(kv.get<std::string>("eval_decoder", "lm"));
    c.init_from = kv.get<std::string>("init_from", c.init_from);
    if (kv.has("init_groups")) {
      c.init_groups.clear();
      for (const auto& g : split_list(kv.require_string("init_groups"))) {
        c.init_groups.push_back(parse_group(g));
      }
    }
    c.validate();
    return c;
  }
};

// Epoch-wise Fisher-Yates shuffles from derived seeds; step s takes the next
// batch_size indices of the stream.
class BatchSampler {
 public:
  BatchSampler(std::size_t n, std::size_t batch_size, std::uint64_t seed)
      : n_(n), batch_size_(batch_size), seed_(seed) {
    if (n == 0) throw std::invalid_argument("BatchSampler: empty training set");
  }

  std::vector<std::size_t> next() {
    std::vector<std::size_t> batch;
    while (batch.size() < batch_size_) {
      if (pos_ == order_.size()) reshuffle();
      batch.push_back(order_[pos_++]);
    }
    return batch;
  }

 private:
  void reshuffle() {
    order_.resize(n_);
    for (std::size_t i = 0; i < n_; ++i) order_[i] = i;
    Rng rng(derive_seed(seed_, fnv1a64("batches"), epoch_++));
    for (std::size_t i = n_; i > 1; --i) {
      std::swap(order_[i - 1], order_[rng.below(i)]);
    }
    pos_ = 0;
  }

  std::size_t n_, batch_size_;
  std::uint64_t seed_;
  std::uint64_t epoch_ = 0;
  std::vector<std::size_t> order_;
  std::size_t pos_ = 0;
};

// Rejects utterances the model cannot consume. Corpus token ids must stay
// below the boundary id.
inline void check_corpus_fits(const PrefixLMConfig& cfg, std::span<const Utterance> set) {
  const std::size_t langs = cfg.languages == 1 ? std::numeric_limits<int>::max() : cfg.languages;
  for (const Utterance& u : set) {
    validate_utterance(u, cfg.vocab - 1, cfg.feature_dim, langs);
    const std::size_t prefix = (u.num_frames() + cfg.subsample_factor - 1) / cfg.subsample_factor;
    if (prefix > cfg.max_frames) {
      throw std::length_error("utterance '" + u.id + "': " + std::to_string(prefix) +
                              " prefix frames exceed max_frames " + std::to_string(cfg.max_frames));
    }
    if (u.tokens.size() + 1 > cfg.max_text_len) {
      throw std::length_error("utterance '" + u.id + "': " + std::to_string(u.tokens.size()) +
                              " tokens exceed max_text_len - 1");
    }
  }
}

inline nlohmann::ordered_json step_record(std::size_t step, const StepMetrics& m, AsrHead head) {
  nlohmann::ordered_json j;
  j["step"] = step;
  j["lm_loss"] = m.lm_loss;
  if (head == AsrHead::rnnt) j["rnnt_loss"] = m.asr_loss;
  if (head == AsrHead::ctc) {
    j["ctc_loss"] = m.asr_loss;
    j["ctc_skipped"] = m.asr_skipped;
  }
  j["joint_loss"] = m.joint_loss;
  nlohmann::ordered_json norms;
  for (ParamGroup g : kAllGroups) norms[std::string(to_string(g))] = m.update_norms.at(g);
  j["grad_norms"] = norms;
  j["global_norm"] = m.global_norm;
  return j;
}

inline std::vector<HypothesisRecord> decode_corpus(const PrefixLM& model,
                                                   std::span<const Utterance> set, Decoder decoder,
                                                   const DecodeOptions& opts = {}) {
  require_decoder_support(model.config(), decoder);
  std::vector<HypothesisRecord> out;
  out.reserve(set.size());
  for (const Utterance& u : set) out.push_back({u.id, decode_utterance(model, u, decoder, opts).tokens});
  return out;
}

struct TrainOutputs {
  ParameterRegistry initial;
  ParameterRegistry final_params;
  std::vector<nlohmann::ordered_json> log;
};

struct RunInfo {
  std::string config_path;
  std::string train_path;
  std::string eval_path;
};

inline nlohmann::json make_manifest(const TrainConfig& cfg, const RunInfo& info, std::size_t step,
                                    const std::filesystem::path& checkpoint_dir) {
  return {{"seed", cfg.seed},
          {"config_hash", hex64(cfg.hash())},
          {"regime", cfg.regime},
          {"alpha", cfg.alpha},
          {"eval_decoder", std::string(to_string(cfg.eval_decoder))},
          {"config_path", info.config_path},
          {"train_corpus", info.train_path},
          {"eval_corpus", info.eval_path},
          {"checkpoint_dir", checkpoint_dir.string()},
          {"step", step}};
}

// Trains from scratch (or from init_from) and writes the output directory.
// `out_dir` may be empty to skip all file output. `progress` receives one
// line per logged step.
inline TrainOutputs run_training(const TrainConfig& cfg, std::span<const Utterance> train,
                                 const std::filesystem::path& out_dir, const RunInfo& info = {},
                                 std::span<const Utterance> eval = {},
                                 std::ostream* progress = nullptr, std::size_t progress_every = 0) {
  cfg.validate();
  check_corpus_fits(cfg.model, train);
  if (!eval.empty()) check_corpus_fits(cfg.model, eval);
  const Regime regime = Regime::parse(cfg.regime);
  const JointLossConfig joint{cfg.alpha};

  PrefixLM model(cfg.model, derive_seed(cfg.seed, fnv1a64("init")));
  if (!cfg.init_from.empty()) {
    const Checkpoint src = load_checkpoint(cfg.init_from);
    for (auto& e : model.params().entries()) {
      if (std::find(cfg.init_groups.begin(), cfg.init_groups.end(), e.group) == cfg.init_groups.end()) {
        continue;
      }
      if (!src.params.contains(e.name) || src.params.value(e.name).shape != e.value.shape) {
        throw TrainingError("init_from: checkpoint lacks a compatible '" + e.name + "'");
      }
      e.value.data = src.params.value(e.name).data;
    }
  }

  AdamConfig adam;
  adam.lr = cfg.lr;
  adam.clip_norm = cfg.clip_norm;
  AdamOptimizer optimizer(adam);
  BatchSampler sampler(train.size(), cfg.batch_size, derive_seed(cfg.seed, fnv1a64("data")));

  TrainOutputs outputs;
  outputs.initial = model.params();
  const bool write = !out_dir.empty();
  const KeyValueConfig kv = cfg.to_kv();
  std::ofstream metrics, eval_log;
  auto snapshot = [&](std::size_t step, const std::filesystem::path& dir) {
    save_checkpoint(dir, kv, model.params(), make_manifest(cfg, info, step, dir));
  };
  auto step_dir = [&](std::size_t step) {
    char name[32];
    std::snprintf(name, sizeof name, "step-%06zu", step);
    return out_dir / "checkpoints" / name;
  };
  nlohmann::ordered_json meta;
  meta["seed"] = cfg.seed;
  meta["config_hash"] = hex64(cfg.hash());
  if (write) {
    std::filesystem::create_directories(out_dir);
    detail::write_text_file(out_dir / "config.txt", kv.to_text());
    detail::write_text_file(out_dir / "manifest.json",
                            make_manifest(cfg, info, cfg.steps, out_dir / "final").dump(2) + "\n");
    metrics.open(out_dir / "metrics.jsonl", std::ios::binary);
    if (!metrics) throw TrainingError("cannot write metrics log in '" + out_dir.string() + "'");
    metrics << nlohmann::ordered_json{{"meta", meta}}.dump() << '\n';
    if (!eval.empty()) {
      eval_log.open(out_dir / "eval.jsonl", std::ios::binary);
      eval_log << nlohmann::ordered_json{{"meta", meta}}.dump() << '\n';
    }
    snapshot(0, step_dir(0));
  }

  for (std::size_t step = 1; step <= cfg.steps; ++step) {
    std::vector<const Utterance*> batch;
    for (std::size_t i : sampler.next()) batch.push_back(&train[i]);
    StepMetrics m;
    try {
      m = train_step(batch, model, regime, optimizer, joint);
    } catch (const NonFiniteLoss& e) {
      throw TrainingError("step " + std::to_string(step) + ": " + e.what());
    }
    auto rec = step_record(step, m, cfg.model.asr_head);
    if (write) metrics << rec.dump() << '\n';
    if (progress && progress_every > 0 && (step % progress_every == 0 || step == cfg.steps)) {
      *progress << rec.dump() << '\n';
    }
    outputs.log.push_back(std::move(rec));

    if (write && cfg.eval_every > 0 && step % cfg.eval_every == 0 && step != cfg.steps) {
      snapshot(step, step_dir(step));
      if (!eval.empty()) {
        // Decode from the saved snapshot, never the live model.
        const Checkpoint ck = load_checkpoint(step_dir(step));
        const PrefixLM frozen(ck.model_config, ck.params);
        const auto hyps = decode_corpus(frozen, eval, cfg.eval_decoder);
        EditCounts total;
        for (std::size_t i = 0; i < eval.size(); ++i) total += align_wer(eval[i].tokens, hyps[i].tokens);
        nlohmann::ordered_json e;
        e["step"] = step;
        e["decoder"] = std::string(to_string(cfg.eval_decoder));
        e["wer"] = total.wer();
        eval_log << e.dump() << '\n';
      }
    }
  }
  if (write) snapshot(cfg.steps, out_dir / "final");
  outputs.final_params = model.params();
  return outputs;
}

inline void write_hypotheses(const std::filesystem::path& path,
                             std::span<const HypothesisRecord> hyps, const nlohmann::json& meta) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw CorpusError("cannot write hypotheses '" + path.string() + "'");
  out << nlohmann::json{{"meta", meta}}.dump() << '\n';
  for (const auto& h : hyps) {
    nlohmann::ordered_json j;
    j["id"] = h.id;
    j["tokens"] = h.tokens;
    out << j.dump() << '\n';
  }
}

inline std::vector<HypothesisRecord> read_hypotheses(const std::filesystem::path& path) {
  std::vector<HypothesisRecord> out;
  for_each_json_line(path, [&](const nlohmann::json& j, std::size_t) {
    if (!j.is_object()) throw CorpusError("expected a JSON object");
    for (const char* key : {"id", "tokens"}) {
      if (!j.contains(key)) throw CorpusError(std::string("missing field '") + key + "'");
    }
    try {
      out.push_back({j.at("id").get<std::string>(), j.at("tokens").get<std::vector<int>>()});
    } catch (const nlohmann::json::exception& e) {
      throw CorpusError(std::string("bad field type: ") + e.what());
    }
  });
  return out;
}

// Writes `path` (JSON lines, one per row) and `path` + ".txt" (aligned table).
inline void write_report(const std::filesystem::path& path, const Report& report,
                         const nlohmann::json& meta) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw CorpusError("cannot write report '" + path.string() + "'");
  out << nlohmann::json{{"meta", meta}}.dump() << '\n';
  for (const ReportRow& r : report.languages) out << to_json(r).dump() << '\n';
  out << to_json(report.macro).dump() << '\n';
  std::filesystem::path txt = path;
  txt += ".txt";
  detail::write_text_file(txt, format_report_table(report));
}

}  // namespace sprefix
