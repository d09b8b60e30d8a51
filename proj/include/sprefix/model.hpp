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

// Speech encoder, soft prompt bank and decoder-only prefix language model.
//
// Sequence layout fed to the decoder stack:
//
//   [ prompt (M rows) | speech prefix (T' rows) | BOS y0 ... y_{U-1} ]
//   \______ bidirectional block, P = M + T' ____/ \___ causal text ___/
//
// The sentence-boundary id V-1 is used both as BOS on the input side and as
// EOS on the target side. The transducer blank is V.

#pragma once

#include <cmath>
#include <cstdint>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "sprefix/autodiff.hpp"
#include "sprefix/config.hpp"
#include "sprefix/parameters.hpp"
#include "sprefix/rng.hpp"

namespace sprefix {

enum class AsrHead { none, rnnt, ctc };
enum class SpeechOutput { hidden, logits };

inline std::string_view to_string(AsrHead h) {
  switch (h) {
    case AsrHead::none: return "none";
    case AsrHead::rnnt: return "rnnt";
    case AsrHead::ctc: return "ctc";
  }
  return "?";
}

inline AsrHead parse_asr_head(std::string_view s) {
  if (s == "none") return AsrHead::none;
  if (s == "rnnt") return AsrHead::rnnt;
  if (s == "ctc") return AsrHead::ctc;
  throw ConfigError("asr_head must be one of none|rnnt|ctc, got '" + std::string(s) + "'");
}

inline std::string_view to_string(SpeechOutput s) {
  return s == SpeechOutput::hidden ? "hidden" : "logits";
}

inline SpeechOutput parse_speech_output(std::string_view s) {
  if (s == "hidden") return SpeechOutput::hidden;
  if (s == "logits") return SpeechOutput::logits;
  throw ConfigError("speech_output must be hidden|logits, got '" + std::string(s) + "'");
}

struct PrefixLMConfig {
  std::size_t width = 32;             // D
  std::size_t layers = 2;
  std::size_t heads = 4;
  std::size_t vocab = 31;             // V, including the boundary id V-1
  std::size_t feature_dim = 8;        // F
  std::size_t subsample_factor = 4;
  std::size_t prompt_len = 4;         // M
  std::size_t languages = 1;          // L
  std::size_t encoder_layers = 2;
  std::size_t ffn_mult = 4;
  std::size_t joint_dim = 32;
  std::size_t pred_dim = 16;
  std::size_t max_frames = 64;        // longest speech prefix T'
  std::size_t max_text_len = 32;      // longest text input U + 1
  AsrHead asr_head = AsrHead::rnnt;
  SpeechOutput speech_output = SpeechOutput::hidden;

  int eos_id() const { return static_cast<int>(vocab) - 1; }
  int bos_id() const { return static_cast<int>(vocab) - 1; }
  int blank_id() const { return static_cast<int>(vocab); }
  std::size_t speech_dim() const {
    return speech_output == SpeechOutput::hidden ? width : vocab;
  }
  std::size_t head_dim() const { return width / heads; }

  void validate() const {
    auto positive = [](std::size_t v, const char* name) {
      if (v == 0) throw ConfigError(std::string("model: ") + name + " must be >= 1");
    };
    positive(width, "width");
    positive(layers, "layers");
    positive(heads, "heads");
    positive(feature_dim, "feature_dim");
    positive(subsample_factor, "subsample_factor");
    positive(prompt_len, "prompt_len");
    positive(languages, "languages");
    positive(ffn_mult, "ffn_mult");
    positive(joint_dim, "joint_dim");
    positive(pred_dim, "pred_dim");
    positive(max_frames, "max_frames");
    positive(max_text_len, "max_text_len");
    if (vocab < 2) throw ConfigError("model: vocab must be >= 2 (tokens plus boundary id)");
    if (width % heads != 0) {
      throw ConfigError("model: width " + std::to_string(width) +
                        " not divisible by heads " + std::to_string(heads));
    }
  }

  void write(KeyValueConfig& kv) const {
    kv.set("width", std::to_string(width));
    kv.set("layers", std::to_string(layers));
    kv.set("heads", std::to_string(heads));
    kv.set("model_vocab", std::to_string(vocab));
    kv.set("feature_dim", std::to_string(feature_dim));
    kv.set("subsample_factor", std::to_string(subsample_factor));
    kv.set("prompt_len", std::to_string(prompt_len));
    kv.set("languages", std::to_string(languages));
    kv.set("encoder_layers", std::to_string(encoder_layers));
    kv.set("ffn_mult", std::to_string(ffn_mult));
    kv.set("joint_dim", std::to_string(joint_dim));
    kv.set("pred_dim", std::to_string(pred_dim));
    kv.set("max_frames", std::to_string(max_frames));
    kv.set("max_text_len", std::to_string(max_text_len));
    kv.set("asr_head", std::string(to_string(asr_head)));
    kv.set("speech_output", std::string(to_string(speech_output)));
  }

  // Reads model keys. The model vocabulary is either given directly as
  // model_vocab or derived from the corpus token count `vocab` plus one
  // boundary id.
  static PrefixLMConfig read(const KeyValueConfig& kv) {
    PrefixLMConfig c;
    c.width = kv.get<std::size_t>("width", c.width);
    c.layers = kv.get<std::size_t>("layers", c.layers);
    c.heads = kv.get<std::size_t>("heads", c.heads);
    if (kv.has("model_vocab")) {
      c.vocab = kv.require<std::size_t>("model_vocab");
    } else if (kv.has("vocab")) {
      c.vocab = kv.require<std::size_t>("vocab") + 1;
    }
    c.feature_dim = kv.get<std::size_t>("feature_dim", c.feature_dim);
    c.subsample_factor = kv.get<std::size_t>("subsample_factor", c.subsample_factor);
    c.prompt_len = kv.get<std::size_t>("prompt_len", c.prompt_len);
    c.languages = kv.get<std::size_t>("languages", c.languages);
    c.encoder_layers = kv.get<std::size_t>("encoder_layers", c.encoder_layers);
    c.ffn_mult = kv.get<std::size_t>("ffn_mult", c.ffn_mult);
    c.joint_dim = kv.get<std::size_t>("joint_dim", c.joint_dim);
    c.pred_dim = kv.get<std::size_t>("pred_dim", c.pred_dim);
    c.max_frames = kv.get<std::size_t>("max_frames", c.max_frames);
    c.max_text_len = kv.get<std::size_t>("max_text_len", c.max_text_len);
    c.asr_head = parse_asr_head(kv.get<std::string>("asr_head", std::string(to_string(c.asr_head))));
    c.speech_output = parse_speech_output(
        kv.get<std::string>("speech_output", std::string(to_string(c.speech_output))));
    c.validate();
    return c;
  }
};

struct Utterance {
  std::string id;
  std::string lang;
  int lang_id = 0;
  Tensor frames;  // [T x F]
  std::vector<int> tokens;
  std::optional<std::string> raw_text;

  std::size_t num_frames() const { return frames.empty() ? 0 : frames.dim(0); }

  friend bool operator==(const Utterance&, const Utterance&) = default;
};

// Checks the utterance invariants against a token bound and feature width.
inline void validate_utterance(const Utterance& u, std::size_t token_bound,
                               std::size_t feature_dim, std::size_t languages) {
  const std::string where = "utterance '" + u.id + "': ";
  if (u.frames.rank() != 2 || u.frames.dim(0) < 1) {
    throw std::invalid_argument(where + "frames must be a [T x F] matrix with T >= 1");
  }
  if (u.frames.dim(1) != feature_dim) {
    throw std::invalid_argument(where + "feature dim " + std::to_string(u.frames.dim(1)) +
                                " != " + std::to_string(feature_dim));
  }
  if (u.tokens.empty()) throw std::invalid_argument(where + "empty transcript");
  for (int t : u.tokens) {
    if (t < 0 || static_cast<std::size_t>(t) >= token_bound) {
      throw std::invalid_argument(where + "token id " + std::to_string(t) +
                                  " outside [0, " + std::to_string(token_bound) + ")");
    }
  }
  if (u.lang_id < 0 || static_cast<std::size_t>(u.lang_id) >= languages) {
    throw std::invalid_argument(where + "lang_id " + std::to_string(u.lang_id) + " out of range");
  }
  for (double v : u.frames.data) {
    if (!std::isfinite(v)) throw std::invalid_argument(where + "non-finite frame value");
  }
}

// Stacks consecutive groups of `factor` frames: [T x F] -> [ceil(T/f) x f*F].
// A short final group is zero-padded on the right.
inline Tensor subsample(const Tensor& frames, std::size_t factor) {
  if (factor < 1) throw std::invalid_argument("subsample: factor must be >= 1");
  if (frames.rank() != 2) {
    throw ShapeError("subsample: frames must be rank 2, got " + shape_str(frames.shape));
  }
  const std::size_t t = frames.dim(0), f = frames.dim(1);
  const std::size_t out_rows = (t + factor - 1) / factor;
  Tensor out({out_rows, factor * f});
  for (std::size_t r = 0; r < t; ++r) {
    std::copy_n(frames.row(r), f, out.data.data() + (r / factor) * factor * f + (r % factor) * f);
  }
  return out;
}

struct AttentionMask {
  std::size_t size = 0;
  std::vector<std::uint8_t> allowed;  // row-major [size x size]

  bool operator()(std::size_t row, std::size_t col) const {
    return allowed[row * size + col] != 0;
  }

  static AttentionMask full(std::size_t n) {
    return AttentionMask{n, std::vector<std::uint8_t>(n * n, 1)};
  }
};

// Prefix rows (0..P-1) see the whole prefix and nothing else; text row P+i
// sees the prefix and text columns P..P+i.
inline AttentionMask build_attention_mask(std::size_t prefix_len, std::size_t text_len) {
  if (prefix_len < 1 || text_len < 1) {
    throw std::invalid_argument("build_attention_mask: prefix and text lengths must be >= 1");
  }
  const std::size_t n = prefix_len + text_len;
  AttentionMask mask{n, std::vector<std::uint8_t>(n * n, 0)};
  for (std::size_t r = 0; r < n; ++r) {
    const std::size_t last = r < prefix_len ? prefix_len : r + 1;
    for (std::size_t c = 0; c < last; ++c) mask.allowed[r * n + c] = 1;
  }
  return mask;
}

// Teacher forcing: input [BOS, y0..y_{U-1}], targets [y0..y_{U-1}, EOS].
inline std::vector<int> teacher_forcing_input(std::span<const int> tokens, int bos) {
  std::vector<int> in{bos};
  in.insert(in.end(), tokens.begin(), tokens.end());
  return in;
}

inline std::vector<int> lm_targets(std::span<const int> tokens, int eos) {
  std::vector<int> out(tokens.begin(), tokens.end());
  out.push_back(eos);
  return out;
}

struct ModelOutputs {
  Var speech_outputs;  // [T' x speech_dim]
  Var text_logits;     // [U_in x V]
};

enum class InitKind { weight, zeros, ones, prompt };

struct ParamSpec {
  std::string name;
  ParamGroup group;
  Shape shape;
  InitKind init;
};

// Every parameter the configuration implies, in registration order.
inline std::vector<ParamSpec> parameter_layout(const PrefixLMConfig& c) {
  std::vector<ParamSpec> out;
  const std::size_t d = c.width, h = c.width * c.ffn_mult;
  auto block = [&](const std::string& p, ParamGroup g) {
    out.push_back({p + ".ln1.g", g, {d}, InitKind::ones});
    out.push_back({p + ".ln1.b", g, {d}, InitKind::zeros});
    out.push_back({p + ".attn.q", g, {d, d}, InitKind::weight});
    out.push_back({p + ".attn.k", g, {d, d}, InitKind::weight});
    out.push_back({p + ".attn.v", g, {d, d}, InitKind::weight});
    out.push_back({p + ".attn.o", g, {d, d}, InitKind::weight});
    out.push_back({p + ".ln2.g", g, {d}, InitKind::ones});
    out.push_back({p + ".ln2.b", g, {d}, InitKind::zeros});
    out.push_back({p + ".ffn.w1", g, {d, h}, InitKind::weight});
    out.push_back({p + ".ffn.b1", g, {h}, InitKind::zeros});
    out.push_back({p + ".ffn.w2", g, {h, d}, InitKind::weight});
    out.push_back({p + ".ffn.b2", g, {d}, InitKind::zeros});
  };

  out.push_back({"encoder.in.w", ParamGroup::encoder,
                 {c.subsample_factor * c.feature_dim, d}, InitKind::weight});
  out.push_back({"encoder.in.b", ParamGroup::encoder, {d}, InitKind::zeros});
  for (std::size_t i = 0; i < c.encoder_layers; ++i) {
    block("encoder." + std::to_string(i), ParamGroup::encoder);
  }

  out.push_back({"prompt.bank", ParamGroup::prompt, {c.languages, c.prompt_len, d},
                 InitKind::prompt});

  out.push_back({"llm.embed", ParamGroup::llm, {c.vocab, d}, InitKind::weight});
  out.push_back({"llm.pos", ParamGroup::llm, {c.max_text_len, d}, InitKind::weight});
  for (std::size_t i = 0; i < c.layers; ++i) block("llm." + std::to_string(i), ParamGroup::llm);
  out.push_back({"llm.ln_f.g", ParamGroup::llm, {d}, InitKind::ones});
  out.push_back({"llm.ln_f.b", ParamGroup::llm, {d}, InitKind::zeros});
  out.push_back({"llm.unembed", ParamGroup::llm, {d, c.vocab}, InitKind::weight});

  const std::size_t s = c.speech_dim(), labels = c.vocab + 1;
  if (c.asr_head == AsrHead::rnnt) {
    const auto g = ParamGroup::transducer_head;
    out.push_back({"rnnt.label_embed", g, {labels, c.pred_dim}, InitKind::weight});
    out.push_back({"rnnt.enc_proj", g, {s, c.joint_dim}, InitKind::weight});
    out.push_back({"rnnt.pred_proj", g, {c.pred_dim, c.joint_dim}, InitKind::weight});
    out.push_back({"rnnt.joint_bias", g, {c.joint_dim}, InitKind::zeros});
    out.push_back({"rnnt.out_proj", g, {c.joint_dim, labels}, InitKind::weight});
  } else if (c.asr_head == AsrHead::ctc) {
    out.push_back({"ctc.proj", ParamGroup::transducer_head, {s, labels}, InitKind::weight});
    out.push_back({"ctc.bias", ParamGroup::transducer_head, {labels}, InitKind::zeros});
  }
  return out;
}

// Weight matrices ~ Normal(0, 1/sqrt(fan_in)) with fan_in = rows (inputs are
// right-multiplied, embeddings are one-hot rows); prompt bank ~ Normal(0, 0.5).
inline ParameterRegistry initial_parameters(const PrefixLMConfig& c, std::uint64_t seed) {
  c.validate();
  ParameterRegistry reg;
  Rng rng(derive_seed(seed, fnv1a64("init")));
  for (const ParamSpec& p : parameter_layout(c)) {
    Tensor t(p.shape);
    switch (p.init) {
      case InitKind::zeros: break;
      case InitKind::ones: std::fill(t.data.begin(), t.data.end(), 1.0); break;
      case InitKind::weight: {
        const double sd = 1.0 / std::sqrt(static_cast<double>(p.shape[0]));
        for (double& v : t.data) v = rng.normal(0.0, sd);
        break;
      }
      case InitKind::prompt:
        for (double& v : t.data) v = rng.normal(0.0, 0.5);
        break;
    }
    reg.add(p.name, p.group, std::move(t));
  }
  return reg;
}

// Fixed sinusoidal positions for the encoder input.
inline Tensor sinusoidal_positions(std::size_t rows, std::size_t width) {
  Tensor pos({rows, width});
  for (std::size_t t = 0; t < rows; ++t) {
    for (std::size_t i = 0; i < width; ++i) {
      const double rate = std::pow(10000.0, -static_cast<double>(i / 2 * 2) /
                                               static_cast<double>(width));
      pos(t, i) = (i % 2 == 0) ? std::sin(t * rate) : std::cos(t * rate);
    }
  }
  return pos;
}

class PrefixLM {
 public:
  PrefixLM(PrefixLMConfig cfg, std::uint64_t seed)
      : cfg_(std::move(cfg)), params_(initial_parameters(cfg_, seed)) {}

  // Adopts existing parameters after checking names, groups and shapes.
  PrefixLM(PrefixLMConfig cfg, ParameterRegistry params) : cfg_(std::move(cfg)) {
    cfg_.validate();
    const auto layout = parameter_layout(cfg_);
    if (params.size() != layout.size()) {
      throw std::invalid_argument("model: expected " + std::to_string(layout.size()) +
                                  " parameters, got " + std::to_string(params.size()));
    }
    for (const ParamSpec& p : layout) {
      if (!params.contains(p.name)) {
        throw std::invalid_argument("model: missing parameter '" + p.name + "'");
      }
      const auto& e = params.entry(p.name);
      if (e.value.shape != p.shape) throw shape_mismatch("model: parameter '" + p.name + "'", p.shape, e.value.shape);
      if (e.group != p.group) {
        throw std::invalid_argument("model: parameter '" + p.name + "' has group " +
                                    std::string(to_string(e.group)) + ", expected " +
                                    std::string(to_string(p.group)));
      }
    }
    for (const ParamSpec& p : layout) params_.add(p.name, p.group, params.value(p.name));
  }

  const PrefixLMConfig& config() const { return cfg_; }
  const ParameterRegistry& params() const { return params_; }
  ParameterRegistry& params() { return params_; }

  // Linear projection of stacked frames plus fixed sinusoidal positions.
  Var input_projection(Bindings& b, const Tensor& stacked) const {
    if (stacked.rank() != 2 || stacked.dim(1) != cfg_.subsample_factor * cfg_.feature_dim) {
      throw shape_mismatch("encode", stacked.shape,
                           Shape{0, cfg_.subsample_factor * cfg_.feature_dim});
    }
    for (double v : stacked.data) {
      if (!std::isfinite(v)) throw std::invalid_argument("encode: non-finite input");
    }
    const std::size_t rows = stacked.dim(0);
    if (rows > cfg_.max_frames) {
      throw std::length_error("encode: " + std::to_string(rows) + " prefix frames exceed max_frames " +
                              std::to_string(cfg_.max_frames));
    }
    Tape& tape = b.tape();
    Var x = add_rowwise(matmul(tape.constant(stacked), b("encoder.in.w")), b("encoder.in.b"));
    return add(x, tape.constant(sinusoidal_positions(rows, cfg_.width)));
  }

  Var encode(Bindings& b, const Tensor& stacked) const {
    Var x = input_projection(b, stacked);
    const AttentionMask full = AttentionMask::full(stacked.dim(0));
    for (std::size_t i = 0; i < cfg_.encoder_layers; ++i) {
      x = block(b, "encoder." + std::to_string(i), x, full);
    }
    return x;
  }

  // A bank with a single row is shared by every language.
  std::size_t prompt_index(int lang_id) const {
    if (lang_id < 0) throw std::out_of_range("select_prompt: negative lang_id");
    if (cfg_.languages == 1) return 0;
    if (static_cast<std::size_t>(lang_id) >= cfg_.languages) {
      throw std::out_of_range("select_prompt: lang_id " + std::to_string(lang_id) +
                              " outside [0, " + std::to_string(cfg_.languages) + ")");
    }
    return static_cast<std::size_t>(lang_id);
  }

  Var select_prompt(Bindings& b, int lang_id) const {
    const std::size_t l = prompt_index(lang_id);
    Var s = slice(b("prompt.bank"), {{l, l + 1}, {0, cfg_.prompt_len}, {0, cfg_.width}});
    return reshape(s, {cfg_.prompt_len, cfg_.width});
  }

  ModelOutputs forward(Bindings& b, Var prompt, Var prefix, std::span<const int> text_in) const {
    const std::size_t m = cfg_.prompt_len, d = cfg_.width;
    if (prompt.shape() != Shape{m, d}) throw shape_mismatch("forward: prompt", prompt.shape(), Shape{m, d});
    if (prefix.shape().size() != 2 || prefix.shape()[1] != d) {
      throw shape_mismatch("forward: prefix", prefix.shape(), Shape{0, d});
    }
    const std::size_t frames = prefix.shape()[0];
    if (frames > cfg_.max_frames) {
      throw std::length_error("forward: prefix of " + std::to_string(frames) +
                              " frames exceeds max_frames " + std::to_string(cfg_.max_frames));
    }
    if (text_in.empty()) throw std::invalid_argument("forward: empty text input");
    if (text_in.size() > cfg_.max_text_len) {
      throw std::length_error("forward: text input of " + std::to_string(text_in.size()) +
                              " tokens exceeds max_text_len " + std::to_string(cfg_.max_text_len));
    }
    const std::size_t n_text = text_in.size();
    Var text = embedding_gather(b("llm.embed"), text_in);
    Var pos = slice(b("llm.pos"), {{0, n_text}, {0, d}});
    text = add(text, pos);

    const std::size_t p = m + frames;
    Var x = concat({prompt, prefix, text}, 0);
    const AttentionMask mask = build_attention_mask(p, n_text);
    for (std::size_t i = 0; i < cfg_.layers; ++i) x = block(b, "llm." + std::to_string(i), x, mask);
    x = affine_norm(b, "llm.ln_f", x);

    Var speech = slice(x, {{m, p}, {0, d}});
    Var text_hidden = slice(x, {{p, p + n_text}, {0, d}});
    ModelOutputs out;
    out.text_logits = matmul(text_hidden, b("llm.unembed"));
    out.speech_outputs = cfg_.speech_output == SpeechOutput::hidden
                             ? speech
                             : matmul(speech, b("llm.unembed"));
    return out;
  }

  struct TeacherForced {
    Var prompt;
    Var prefix;
    ModelOutputs outputs;
    std::vector<int> targets;  // [y0 .. y_{U-1}, EOS]
  };

  TeacherForced run_teacher_forced(Bindings& b, const Utterance& u) const {
    TeacherForced r;
    r.prompt = select_prompt(b, u.lang_id);
    r.prefix = encode(b, subsample(u.frames, cfg_.subsample_factor));
    const auto in = teacher_forcing_input(u.tokens, cfg_.bos_id());
    r.outputs = forward(b, r.prompt, r.prefix, in);
    r.targets = lm_targets(u.tokens, cfg_.eos_id());
    return r;
  }

 private:
  Var affine_norm(Bindings& b, const std::string& name, Var x) const {
    return add_rowwise(mul_rowwise(layer_norm(x, 1), b(name + ".g")), b(name + ".b"));
  }

  Var attention(Bindings& b, const std::string& p, Var h, const AttentionMask& mask) const {
    const std::size_t n = h.shape()[0], dh = cfg_.head_dim();
    Var q = matmul(h, b(p + ".attn.q"));
    Var k = matmul(h, b(p + ".attn.k"));
    Var v = matmul(h, b(p + ".attn.v"));
    const double inv = 1.0 / std::sqrt(static_cast<double>(dh));
    std::vector<Var> heads;
    for (std::size_t i = 0; i < cfg_.heads; ++i) {
      const Range cols{i * dh, (i + 1) * dh};
      Var qh = slice(q, {{0, n}, cols});
      Var kh = slice(k, {{0, n}, cols});
      Var vh = slice(v, {{0, n}, cols});
      Var scores = scale(matmul(qh, transpose(kh)), inv);
      heads.push_back(matmul(masked_softmax(scores, mask.allowed), vh));
    }
    Var merged = heads.size() == 1 ? heads[0] : concat(heads, 1);
    return matmul(merged, b(p + ".attn.o"));
  }

  // Pre-norm transformer block.
  Var block(Bindings& b, const std::string& p, Var x, const AttentionMask& mask) const {
    x = add(x, attention(b, p, affine_norm(b, p + ".ln1", x), mask));
    Var h = affine_norm(b, p + ".ln2", x);
    h = gelu(add_rowwise(matmul(h, b(p + ".ffn.w1")), b(p + ".ffn.b1")));
    h = add_rowwise(matmul(h, b(p + ".ffn.w2")), b(p + ".ffn.b2"));
    return add(x, h);
  }

  PrefixLMConfig cfg_;
  ParameterRegistry params_;
};

}  // namespace sprefix
