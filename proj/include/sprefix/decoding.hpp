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

// Greedy decoders: autoregressive LM, transducer and CTC. Ties in every
// argmax go to the lowest id.

#pragma once

#include <algorithm>
#include <cmath>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "sprefix/model.hpp"
#include "sprefix/transducer.hpp"

namespace sprefix {

enum class Decoder { lm, rnnt, ctc };

inline std::string_view to_string(Decoder d) {
  switch (d) {
    case Decoder::lm: return "lm";
    case Decoder::rnnt: return "rnnt";
    case Decoder::ctc: return "ctc";
  }
  return "?";
}

inline Decoder parse_decoder(std::string_view s) {
  if (s == "lm") return Decoder::lm;
  if (s == "rnnt") return Decoder::rnnt;
  if (s == "ctc") return Decoder::ctc;
  throw std::invalid_argument("decoder must be one of lm|rnnt|ctc, got '" + std::string(s) + "'");
}

struct Hypothesis {
  std::vector<int> tokens;
  std::vector<double> scores;  // log-probability of each emitted token
  bool truncated = false;      // LM decoding stopped at max_len
  std::size_t cap_hits = 0;    // RNNT frames that hit the per-frame cap
};

namespace detail {

inline std::size_t argmax(std::span<const double> v) {
  std::size_t best = 0;
  for (std::size_t i = 1; i < v.size(); ++i) {
    if (v[i] > v[best]) best = i;
  }
  return best;
}

inline double log_softmax_at(std::span<const double> v, std::size_t k) {
  double m = v[0];
  for (double x : v) m = std::max(m, x);
  double s = 0.0;
  for (double x : v) s += std::exp(x - m);
  return v[k] - m - std::log(s);
}

}  // namespace detail

// `next_logits(history)` returns the next-token logits given the tokens
// emitted so far. Stops at `eos` or after max_len tokens.
template <class NextLogits>
Hypothesis greedy_lm_decode(NextLogits&& next_logits, int eos, std::size_t max_len) {
  if (max_len < 1) throw std::invalid_argument("greedy_lm_decode: max_len must be >= 1");
  Hypothesis hyp;
  while (true) {
    const std::vector<double> logits = next_logits(std::span<const int>(hyp.tokens));
    const std::size_t k = detail::argmax(logits);
    if (static_cast<int>(k) == eos) break;
    hyp.tokens.push_back(static_cast<int>(k));
    hyp.scores.push_back(detail::log_softmax_at(logits, k));
    if (hyp.tokens.size() >= max_len) {
      hyp.truncated = true;
      break;
    }
  }
  return hyp;
}

// Prompt and prefix for an utterance, computed without recording gradients.
struct EncodedUtterance {
  Tensor prompt;          // [M x D]
  Tensor prefix;          // [T' x D]
  Tensor speech_outputs;  // [T' x S]
};

inline EncodedUtterance encode_utterance(const PrefixLM& model, const Utterance& u) {
  Tape tape;
  Bindings b(tape, model.params(), /*trainable=*/false);
  EncodedUtterance e;
  Var prompt = model.select_prompt(b, u.lang_id);
  Var prefix = model.encode(b, subsample(u.frames, model.config().subsample_factor));
  // Prefix rows never attend to text, so any text input gives the same X-hat.
  const int bos = model.config().bos_id();
  ModelOutputs out = model.forward(b, prompt, prefix, std::span<const int>(&bos, 1));
  e.prompt = prompt.value();
  e.prefix = prefix.value();
  e.speech_outputs = out.speech_outputs.value();
  return e;
}

inline Hypothesis greedy_lm_decode(const PrefixLM& model, const Tensor& prompt,
                                   const Tensor& prefix, std::size_t max_len) {
  const auto& cfg = model.config();
  max_len = std::min(max_len, std::max<std::size_t>(1, cfg.max_text_len - 1));
  auto next = [&](std::span<const int> history) {
    Tape tape;
    Bindings b(tape, model.params(), /*trainable=*/false);
    const std::vector<int> in = teacher_forcing_input(history, cfg.bos_id());
    ModelOutputs out = model.forward(b, tape.constant(prompt), tape.constant(prefix), in);
    const Tensor& logits = out.text_logits.value();
    const double* last = logits.row(logits.dim(0) - 1);
    return std::vector<double>(last, last + logits.dim(1));
  };
  return greedy_lm_decode(next, cfg.eos_id(), max_len);
}

// Per frame: emit argmax labels, feeding each back as the previous label,
// until blank wins or max_symbols_per_frame labels were emitted.
inline Hypothesis greedy_rnnt_decode(const Tensor& speech_outputs, const TransducerHead& head,
                                     std::size_t max_symbols_per_frame = 5) {
  if (max_symbols_per_frame < 1) {
    throw std::invalid_argument("greedy_rnnt_decode: max_symbols_per_frame must be >= 1");
  }
  const Tensor enc = head.project_encoder(speech_outputs);
  const int blank = head.blank();
  int prev = blank;  // the start row shares the blank index
  Hypothesis hyp;
  for (std::size_t t = 0; t < enc.dim(0); ++t) {
    std::size_t emitted = 0;
    while (true) {
      const std::vector<double> logits = head.logits(enc.row(t), prev);
      const std::size_t k = detail::argmax(logits);
      if (static_cast<int>(k) == blank) break;
      hyp.tokens.push_back(static_cast<int>(k));
      hyp.scores.push_back(detail::log_softmax_at(logits, k));
      prev = static_cast<int>(k);
      if (++emitted == max_symbols_per_frame) {
        ++hyp.cap_hits;
        break;
      }
    }
  }
  return hyp;
}

// Frame-wise argmax, collapse repeats, drop blanks (blank = last column).
inline Hypothesis greedy_ctc_decode(const Tensor& ctc_logits) {
  if (ctc_logits.rank() != 2) {
    throw ShapeError("greedy_ctc_decode: expected [T x K] logits, got " + shape_str(ctc_logits.shape));
  }
  const std::size_t T = ctc_logits.dim(0), K = ctc_logits.dim(1);
  std::vector<int> path(T);
  std::vector<double> frame_scores(T);
  for (std::size_t t = 0; t < T; ++t) {
    std::span<const double> row(ctc_logits.row(t), K);
    path[t] = static_cast<int>(detail::argmax(row));
    frame_scores[t] = detail::log_softmax_at(row, static_cast<std::size_t>(path[t]));
  }
  Hypothesis hyp;
  const int blank = static_cast<int>(K) - 1;
  int prev = -1;
  for (std::size_t t = 0; t < T; ++t) {
    if (path[t] != prev && path[t] != blank) {
      hyp.tokens.push_back(path[t]);
      hyp.scores.push_back(frame_scores[t]);
    }
    prev = path[t];
  }
  return hyp;
}

struct DecodeOptions {
  std::size_t max_len = 64;
  std::size_t max_symbols_per_frame = 5;
};

// Throws naming the head when the model lacks what the decoder needs.
inline void require_decoder_support(const PrefixLMConfig& cfg, Decoder d) {
  if (d == Decoder::rnnt && cfg.asr_head != AsrHead::rnnt) {
    throw std::invalid_argument("decoder rnnt requires the rnnt head, which this checkpoint lacks");
  }
  if (d == Decoder::ctc && cfg.asr_head != AsrHead::ctc) {
    throw std::invalid_argument("decoder ctc requires the ctc head, which this checkpoint lacks");
  }
}

inline Hypothesis decode_utterance(const PrefixLM& model, const Utterance& u, Decoder decoder,
                                   const DecodeOptions& opts = {}) {
  require_decoder_support(model.config(), decoder);
  const EncodedUtterance e = encode_utterance(model, u);
  switch (decoder) {
    case Decoder::lm:
      return greedy_lm_decode(model, e.prompt, e.prefix, opts.max_len);
    case Decoder::rnnt:
      return greedy_rnnt_decode(e.speech_outputs, TransducerHead::from(model.params()),
                                opts.max_symbols_per_frame);
    case Decoder::ctc: {
      Tape tape;
      Bindings b(tape, model.params(), /*trainable=*/false);
      return greedy_ctc_decode(ctc_logits(b, tape.constant(e.speech_outputs)).value());
    }
  }
  return {};
}

}  // namespace sprefix
