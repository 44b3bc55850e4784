// Copyright 2026 The hsdlab Authors.
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#include "hsdlab/model.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <set>

#include "json.hpp"

namespace hsd {

using nlohmann::json;

namespace {

constexpr char kMagic[8] = {'H', 'S', 'D', 'L', 'A', 'B', 'C', 'K'};
constexpr std::uint32_t kFormatVersion = 1;

static_assert(std::endian::native == std::endian::little, "checkpoint I/O assumes a little-endian host");

json config_json(const ModelConfig& c) {
  return {{"d", c.d},
          {"text_layers", c.text_layers},
          {"text_heads", c.text_heads},
          {"text_positional", c.text_positional},
          {"max_text_tokens", c.max_text_tokens},
          {"audio_channels", c.audio_channels},
          {"audio_freq_strides", c.audio_freq_strides},
          {"num_mel_bins", c.num_mel_bins},
          {"decoder_layers", c.decoder_layers},
          {"decoder_heads", c.decoder_heads},
          {"ffn_multiplier", c.ffn_multiplier},
          {"tau", c.tau},
          {"lambda_init", c.lambda_init},
          {"query_self_attention", c.query_self_attention},
          {"contrastive_projection", c.contrastive_projection}};
}

ModelConfig config_from(const json& j) {
  if (!j.is_object()) throw ValidationError("model config must be a JSON object");
  ModelConfig c;
  const json known = config_json(c);
  for (auto it = j.begin(); it != j.end(); ++it) {
    if (!known.contains(it.key())) throw ValidationError("unknown model config key '" + it.key() + "'");
  }
  c.d = j.value("d", c.d);
  c.text_layers = j.value("text_layers", c.text_layers);
  c.text_heads = j.value("text_heads", c.text_heads);
  c.text_positional = j.value("text_positional", c.text_positional);
  c.max_text_tokens = j.value("max_text_tokens", c.max_text_tokens);
  c.audio_channels = j.value("audio_channels", c.audio_channels);
  c.audio_freq_strides = j.value("audio_freq_strides", c.audio_freq_strides);
  c.num_mel_bins = j.value("num_mel_bins", c.num_mel_bins);
  c.decoder_layers = j.value("decoder_layers", c.decoder_layers);
  c.decoder_heads = j.value("decoder_heads", c.decoder_heads);
  c.ffn_multiplier = j.value("ffn_multiplier", c.ffn_multiplier);
  c.tau = j.value("tau", c.tau);
  c.lambda_init = j.value("lambda_init", c.lambda_init);
  c.query_self_attention = j.value("query_self_attention", c.query_self_attention);
  c.contrastive_projection = j.value("contrastive_projection", c.contrastive_projection);
  c.validate();
  return c;
}

template <typename T>
void put(std::ostream& out, T v) {
  out.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <typename T>
T get(std::istream& in, const std::string& path) {
  T v{};
  in.read(reinterpret_cast<char*>(&v), sizeof(T));
  if (!in) throw ValidationError("checkpoint '" + path + "' is truncated");
  return v;
}

void put_tensor(std::ostream& out, const Eigen::MatrixXd& m) {
  put<std::uint32_t>(out, static_cast<std::uint32_t>(m.rows()));
  put<std::uint32_t>(out, static_cast<std::uint32_t>(m.cols()));
  for (Eigen::Index r = 0; r < m.rows(); ++r) {
    for (Eigen::Index c = 0; c < m.cols(); ++c) put<double>(out, m(r, c));
  }
}

Eigen::MatrixXd get_tensor(std::istream& in, const std::string& path) {
  const auto rows = get<std::uint32_t>(in, path);
  const auto cols = get<std::uint32_t>(in, path);
  if (static_cast<std::uint64_t>(rows) * cols > (1ULL << 32)) {
    throw ValidationError("checkpoint '" + path + "' has an implausible tensor size");
  }
  Eigen::MatrixXd m(rows, cols);
  for (Eigen::Index r = 0; r < m.rows(); ++r) {
    for (Eigen::Index c = 0; c < m.cols(); ++c) m(r, c) = get<double>(in, path);
  }
  return m;
}

}  // namespace

void ModelConfig::validate() const {
  auto fail = [](const std::string& msg) { throw ValidationError("model config: " + msg); };
  if (d < 1) fail("d must be positive");
  if (text_layers < 0 || decoder_layers < 1) fail("layer counts out of range");
  if (text_heads < 1 || d % text_heads != 0) fail("text_heads must divide d");
  if (decoder_heads < 1 || d % decoder_heads != 0) fail("decoder_heads must divide d");
  if (max_text_tokens < 1) fail("max_text_tokens must be positive");
  if (audio_channels.empty()) fail("audio_channels must not be empty");
  for (int c : audio_channels) {
    if (c < 1) fail("audio channel counts must be positive");
  }
  if (audio_freq_strides.size() != audio_channels.size()) {
    fail("audio_freq_strides needs one entry per conv block");
  }
  for (int s : audio_freq_strides) {
    if (s != 1 && s != 2) fail("audio_freq_strides entries must be 1 or 2");
  }
  if (num_mel_bins < 1) fail("num_mel_bins must be positive");
  if (ffn_multiplier < 1) fail("ffn_multiplier must be positive");
  if (!(tau > 0.0)) fail("tau must be positive");
  if (!std::isfinite(lambda_init)) fail("lambda_init must be finite");
}

std::string model_config_to_json(const ModelConfig& config) { return config_json(config).dump(2); }

ModelConfig model_config_from_json(const std::string& text) {
  try {
    return config_from(json::parse(text));
  } catch (const json::exception& e) {
    throw ValidationError(std::string("model config: ") + e.what());
  }
}

Vocabulary vocabulary_for(const AbnormalityCatalog& catalog) {
  std::vector<std::string> corpus;
  corpus.push_back("normal");
  for (const auto& e : catalog.entities) {
    corpus.push_back(e.canonical_name);
    corpus.push_back(e.annotation());
    corpus.push_back(e.definition_text);
    for (const auto& s : e.synonyms) corpus.push_back(s);
    for (const auto& s : e.description_bank) corpus.push_back(s);
  }
  return Vocabulary::build(corpus);
}

std::string checkpoint_header(const CheckpointInfo& info) {
  json extra = json::parse(info.extra_json.empty() ? "{}" : info.extra_json);
  json j = {{"model", config_json(info.config)},
            {"vocab", info.vocab_tokens},
            {"config_hash", info.config_hash},
            {"epochs_completed", info.epochs_completed},
            {"step", info.step},
            {"train_state", extra}};
  return j.dump();
}

CheckpointInfo parse_checkpoint_header(const std::string& header_json) {
  try {
    const json j = json::parse(header_json);
    CheckpointInfo info;
    info.config = config_from(j.at("model"));
    info.vocab_tokens = j.at("vocab").get<std::vector<std::string>>();
    info.config_hash = j.value("config_hash", std::string());
    info.epochs_completed = j.value("epochs_completed", 0);
    info.step = j.value("step", std::uint64_t{0});
    info.extra_json = j.contains("train_state") ? j.at("train_state").dump() : "{}";
    return info;
  } catch (const json::exception& e) {
    throw ValidationError(std::string("checkpoint header: ") + e.what());
  }
}

void write_checkpoint(const std::string& path, const Checkpoint& ckpt) {
  if (ckpt.names.size() != ckpt.tensors.size()) throw std::invalid_argument("checkpoint names/tensors mismatch");
  const bool moments = !ckpt.adam_m.empty();
  if (moments && (ckpt.adam_m.size() != ckpt.tensors.size() || ckpt.adam_v.size() != ckpt.tensors.size())) {
    throw std::invalid_argument("checkpoint moments mismatch");
  }
  const std::string tmp = path + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw RuntimeAbort("cannot write checkpoint '" + path + "'");
    out.write(kMagic, sizeof(kMagic));
    put<std::uint32_t>(out, kFormatVersion);
    put<std::uint64_t>(out, ckpt.header_json.size());
    out.write(ckpt.header_json.data(), static_cast<std::streamsize>(ckpt.header_json.size()));
    put<std::uint32_t>(out, static_cast<std::uint32_t>(ckpt.names.size()));
    put<std::uint8_t>(out, moments ? 1 : 0);
    for (std::size_t i = 0; i < ckpt.names.size(); ++i) {
      put<std::uint32_t>(out, static_cast<std::uint32_t>(ckpt.names[i].size()));
      out.write(ckpt.names[i].data(), static_cast<std::streamsize>(ckpt.names[i].size()));
      put_tensor(out, ckpt.tensors[i]);
      if (moments) {
        put_tensor(out, ckpt.adam_m[i]);
        put_tensor(out, ckpt.adam_v[i]);
      }
    }
    if (!out) throw RuntimeAbort("failed writing checkpoint '" + path + "'");
  }
  if (std::rename(tmp.c_str(), path.c_str()) != 0) throw RuntimeAbort("cannot move checkpoint into '" + path + "'");
}

Checkpoint read_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ValidationError("cannot open checkpoint '" + path + "'");
  char magic[8];
  in.read(magic, sizeof(magic));
  if (!in || std::memcmp(magic, kMagic, sizeof(kMagic)) != 0) {
    throw ValidationError("'" + path + "' is not a checkpoint");
  }
  const auto version = get<std::uint32_t>(in, path);
  if (version != kFormatVersion) {
    throw ValidationError("checkpoint '" + path + "' has format version " + std::to_string(version) +
                          ", expected " + std::to_string(kFormatVersion));
  }
  const auto header_len = get<std::uint64_t>(in, path);
  if (header_len > (1ULL << 28)) throw ValidationError("checkpoint '" + path + "' header is implausibly large");
  Checkpoint c;
  c.header_json.resize(header_len);
  in.read(c.header_json.data(), static_cast<std::streamsize>(header_len));
  if (!in) throw ValidationError("checkpoint '" + path + "' is truncated");
  const auto count = get<std::uint32_t>(in, path);
  const bool moments = get<std::uint8_t>(in, path) != 0;
  std::set<std::string> seen;
  for (std::uint32_t i = 0; i < count; ++i) {
    const auto len = get<std::uint32_t>(in, path);
    if (len > 4096) throw ValidationError("checkpoint '" + path + "' has an implausible tensor name");
    std::string name(len, '\0');
    in.read(name.data(), len);
    if (!in) throw ValidationError("checkpoint '" + path + "' is truncated");
    if (!seen.insert(name).second) throw ValidationError("checkpoint '" + path + "' repeats tensor '" + name + "'");
    c.names.push_back(std::move(name));
    c.tensors.push_back(get_tensor(in, path));
    if (moments) {
      c.adam_m.push_back(get_tensor(in, path));
      c.adam_v.push_back(get_tensor(in, path));
    }
  }
  if (in.peek() != std::char_traits<char>::eof()) {
    throw ValidationError("checkpoint '" + path + "' has trailing bytes");
  }
  return c;
}

}  // namespace hsd
