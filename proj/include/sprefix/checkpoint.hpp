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

// Checkpoint directories:
//
//   params.bin     parameter records (below)
//   config.txt     the full run configuration, canonical key = value form
//   manifest.json  seed, config hash, step and input paths
//
// params.bin layout, little-endian:
//   "SPFXPARM" | u32 version | u64 count | count x record
//   record = u32 name_len | name | u8 group | u32 rank | rank x u64 dim | numel x f64

#pragma once

#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <stdexcept>
#include <string>

#include <json.hpp>

#include "sprefix/config.hpp"
#include "sprefix/model.hpp"
#include "sprefix/parameters.hpp"

namespace sprefix {

static_assert(std::endian::native == std::endian::little,
              "checkpoint I/O assumes a little-endian host");

class CheckpointError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

inline constexpr char kParamMagic[8] = {'S', 'P', 'F', 'X', 'P', 'A', 'R', 'M'};
inline constexpr std::uint32_t kParamVersion = 1;

namespace detail {

template <class T>
void put(std::ostream& out, const T& v) {
  out.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <class T>
T get(std::istream& in, const std::string& what) {
  T v{};
  if (!in.read(reinterpret_cast<char*>(&v), sizeof(T))) {
    throw CheckpointError("truncated parameter file while reading " + what);
  }
  return v;
}

inline std::string read_text_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw CheckpointError("cannot open '" + path.string() + "'");
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

inline void write_text_file(const std::filesystem::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out || !(out << text)) throw CheckpointError("cannot write '" + path.string() + "'");
}

}  // namespace detail

inline void save_parameters(const std::filesystem::path& path, const ParameterRegistry& params) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw CheckpointError("cannot write '" + path.string() + "'");
  out.write(kParamMagic, sizeof kParamMagic);
  detail::put(out, kParamVersion);
  detail::put(out, static_cast<std::uint64_t>(params.size()));
  for (const auto& e : params.entries()) {
    detail::put(out, static_cast<std::uint32_t>(e.name.size()));
    out.write(e.name.data(), static_cast<std::streamsize>(e.name.size()));
    detail::put(out, static_cast<std::uint8_t>(e.group));
    detail::put(out, static_cast<std::uint32_t>(e.value.rank()));
    for (std::size_t d : e.value.shape) detail::put(out, static_cast<std::uint64_t>(d));
    out.write(reinterpret_cast<const char*>(e.value.data.data()),
              static_cast<std::streamsize>(e.value.size() * sizeof(double)));
  }
  if (!out) throw CheckpointError("write failed for '" + path.string() + "'");
}

inline ParameterRegistry load_parameters(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw CheckpointError("cannot open '" + path.string() + "'");
  char magic[8];
  if (!in.read(magic, sizeof magic) || std::memcmp(magic, kParamMagic, sizeof magic) != 0) {
    throw CheckpointError("'" + path.string() + "' is not a parameter file");
  }
  const auto version = detail::get<std::uint32_t>(in, "version");
  if (version != kParamVersion) {
    throw CheckpointError("unsupported parameter file version " + std::to_string(version));
  }
  const auto count = detail::get<std::uint64_t>(in, "count");
  ParameterRegistry params;
  for (std::uint64_t i = 0; i < count; ++i) {
    const auto name_len = detail::get<std::uint32_t>(in, "name length");
    if (name_len > 4096) throw CheckpointError("implausible parameter name length");
    std::string name(name_len, '\0');
    if (!in.read(name.data(), name_len)) throw CheckpointError("truncated parameter name");
    const auto group = detail::get<std::uint8_t>(in, name + " group");
    if (group >= kAllGroups.size()) throw CheckpointError(name + ": bad group tag");
    const auto rank = detail::get<std::uint32_t>(in, name + " rank");
    if (rank < 1 || rank > 8) throw CheckpointError(name + ": bad rank");
    Shape shape;
    for (std::uint32_t r = 0; r < rank; ++r) {
      shape.push_back(static_cast<std::size_t>(detail::get<std::uint64_t>(in, name + " shape")));
    }
    Tensor t(shape);
    if (!in.read(reinterpret_cast<char*>(t.data.data()),
                 static_cast<std::streamsize>(t.size() * sizeof(double)))) {
      throw CheckpointError("truncated values for parameter '" + name + "'");
    }
    params.add(name, static_cast<ParamGroup>(group), std::move(t));
  }
  if (in.peek() != std::char_traits<char>::eof()) {
    throw CheckpointError("trailing bytes after parameter records in '" + path.string() + "'");
  }
  return params;
}

struct Checkpoint {
  KeyValueConfig config;
  PrefixLMConfig model_config;
  ParameterRegistry params;
  nlohmann::json manifest;
};

inline void save_checkpoint(const std::filesystem::path& dir, const KeyValueConfig& config,
                            const ParameterRegistry& params, const nlohmann::json& manifest) {
  std::filesystem::create_directories(dir);
  save_parameters(dir / "params.bin", params);
  detail::write_text_file(dir / "config.txt", config.to_text());
  detail::write_text_file(dir / "manifest.json", manifest.dump(2) + "\n");
}

// Accepts a checkpoint directory, or a training output directory, in which
// case its final checkpoint is used.
inline std::filesystem::path resolve_checkpoint(const std::filesystem::path& path) {
  if (std::filesystem::exists(path / "params.bin")) return path;
  if (std::filesystem::exists(path / "final" / "params.bin")) return path / "final";
  throw CheckpointError("no checkpoint at '" + path.string() + "'");
}

// Loads and checks parameter names, shapes and groups against the config.
inline Checkpoint load_checkpoint(const std::filesystem::path& path) {
  const auto dir = resolve_checkpoint(path);
  Checkpoint c;
  c.config = KeyValueConfig::parse(detail::read_text_file(dir / "config.txt"),
                                   (dir / "config.txt").string());
  c.model_config = PrefixLMConfig::read(c.config);
  c.params = load_parameters(dir / "params.bin");
  if (std::filesystem::exists(dir / "manifest.json")) {
    c.manifest = nlohmann::json::parse(detail::read_text_file(dir / "manifest.json"));
  }
  PrefixLM check(c.model_config, c.params);  // throws on any layout mismatch
  return c;
}

}  // namespace sprefix
