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

// Knowledge-aware query decoder.
//
// Class queries are text embeddings of definition sentences. A small
// transformer encodes text, a strided convolution stack encodes filter-bank
// frames into H (x_h x d), and a decoder lets every query cross-attend to H
// independently before a linear head produces one logit per query.

#ifndef HSDLAB_MODEL_HPP_
#define HSDLAB_MODEL_HPP_

#include <Eigen/Dense>

#include <cmath>
#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "hsdlab/audiofeat.hpp"
#include "hsdlab/autodiff.hpp"
#include "hsdlab/catalog.hpp"
#include "hsdlab/common.hpp"
#include "hsdlab/losses.hpp"
#include "hsdlab/ops.hpp"
#include "hsdlab/text.hpp"

namespace hsd {

struct ModelConfig {
  int d = 256;
  int text_layers = 2;
  int text_heads = 4;
  bool text_positional = true;
  int max_text_tokens = 256;
  std::vector<int> audio_channels = {8, 16, 32, 32};
  /// Mel-axis stride (1 or 2) of each conv block; time stride is always 2.
  std::vector<int> audio_freq_strides = {2, 2, 2, 2};
  int num_mel_bins = 64;
  int decoder_layers = 2;
  int decoder_heads = 4;
  int ffn_multiplier = 2;
  double tau = 0.07;
  double lambda_init = 1.0;
  /// Lets class queries attend to each other before cross-attention. Off by
  /// default: with it on, a query's logit depends on the other queries.
  bool query_self_attention = false;
  /// Optional learned projection of pooled audio before the contrastive loss.
  bool contrastive_projection = false;

  /// Product of the per-block time strides.
  int total_stride() const { return 1 << static_cast<int>(audio_channels.size()); }
  /// Encoded frame count for a given number of input frames.
  Eigen::Index encoded_length(Eigen::Index frames) const {
    return (frames + total_stride() - 1) / total_stride();
  }
  /// Throws ValidationError when dimensions are inconsistent.
  void validate() const;
};

std::string model_config_to_json(const ModelConfig& config);
ModelConfig model_config_from_json(const std::string& text);

/// Sinusoidal position table, rows are positions.
template <typename S>
ad::Matrix<S> sinusoidal_positions(Eigen::Index n, Eigen::Index d) {
  ad::Matrix<S> pe(n, d);
  for (Eigen::Index p = 0; p < n; ++p) {
    for (Eigen::Index i = 0; i < d; ++i) {
      const double rate = std::pow(10000.0, -static_cast<double>(2 * (i / 2)) / static_cast<double>(d));
      const double angle = static_cast<double>(p) * rate;
      pe(p, i) = static_cast<S>(i % 2 == 0 ? std::sin(angle) : std::cos(angle));
    }
  }
  return pe;
}

/// Parameters, vocabulary and forward passes. All forward functions record on
/// the tape they are given; a non-recording tape gives eval mode.
template <typename S>
class Model {
 public:
  using Mat = ad::Matrix<S>;
  using Tape = ad::Tape<S>;
  using Var = ad::Var;

  Model() = default;
  Model(ModelConfig config, Vocabulary vocab, std::uint64_t seed) : config_(std::move(config)), vocab_(std::move(vocab)) {
    config_.validate();
    init(seed);
  }

  const ModelConfig& config() const { return config_; }
  const Vocabulary& vocab() const { return vocab_; }
  ad::ParameterSet<S>& params() { return params_; }
  const ad::ParameterSet<S>& params() const { return params_; }

  /// Parameters whose names start with `prefix` get fresh values drawn from
  /// `seed` (used to undo a warm start for one encoder).
  void reinitialize(const std::string& prefix, std::uint64_t seed) {
    Model fresh(config_, vocab_, seed);
    for (auto& p : params_) {
      if (p.name.rfind(prefix, 0) == 0) p.value = fresh.params_[fresh.params_.index_of(p.name)].value;
    }
  }

  S lambda() const { return params_[params_.index_of("lambda")].value(0, 0); }

  /// Token ids for a text; throws ValidationError on empty input.
  std::vector<int> tokenize(const std::string& text) const {
    std::vector<int> ids = vocab_.encode(text);
    if (ids.empty()) throw ValidationError("cannot encode empty text");
    if (static_cast<int>(ids.size()) > config_.max_text_tokens) ids.resize(static_cast<std::size_t>(config_.max_text_tokens));
    return ids;
  }

  /// Text -> 1 x d.
  Var encode_text(Tape& t, const std::string& text) const {
    const auto ids = tokenize(text);
    Var x = ad::embedding(t, p(t, "text.embed"), ids);
    if (config_.text_positional) {
      x = ad::add_constant(t, x, sinusoidal_positions<S>(static_cast<Eigen::Index>(ids.size()), config_.d));
    }
    for (int l = 0; l < config_.text_layers; ++l) {
      const std::string pre = "text.L" + std::to_string(l) + ".";
      x = self_block(t, x, pre, config_.text_heads, /*rowwise=*/false);
    }
    return ad::mean_rows(t, x);
  }

  /// Filter-bank frames (T x bins) -> H (ceil(T / stride) x d).
  Var encode_audio(Tape& t, const FeatureMatrix& frames) const {
    const Eigen::Index T = frames.rows();
    const Eigen::Index F = frames.cols();
    if (F != config_.num_mel_bins) {
      throw ValidationError("expected " + std::to_string(config_.num_mel_bins) + " mel bins, got " +
                            std::to_string(F));
    }
    if (T < config_.total_stride()) {
      throw ValidationError("audio needs at least " + std::to_string(config_.total_stride()) +
                            " frames, got " + std::to_string(T));
    }
    // Per-utterance standardization with scalar statistics.
    double mean = 0.0;
    for (Eigen::Index i = 0; i < frames.size(); ++i) mean += frames.data()[i];
    mean /= static_cast<double>(frames.size());
    double var = 0.0;
    for (Eigen::Index i = 0; i < frames.size(); ++i) {
      const double dlt = frames.data()[i] - mean;
      var += dlt * dlt;
    }
    const double inv = 1.0 / std::sqrt(var / static_cast<double>(frames.size()) + 1e-8);
    Mat x0(T * F, 1);
    for (Eigen::Index ti = 0; ti < T; ++ti) {
      for (Eigen::Index f = 0; f < F; ++f) x0(ti * F + f, 0) = static_cast<S>((frames(ti, f) - mean) * inv);
    }
    Var x = t.constant(std::move(x0));
    ad::MapShape shape{T, F};
    for (std::size_t b = 0; b < config_.audio_channels.size(); ++b) {
      const std::string pre = "audio.conv" + std::to_string(b) + ".";
      ad::MapShape next;
      x = ad::conv3x3(t, x, shape, p(t, pre + "w"), p(t, pre + "b"), 2, config_.audio_freq_strides[b], &next);
      x = ad::gelu(t, x);
      shape = next;
    }
    x = ad::flatten_freq(t, x, shape);
    return ad::linear(t, x, p(t, "audio.proj.w"), p(t, "audio.proj.b"));
  }

  /// Queries (n x d) attend to H; returns n x 1 logits.
  Var decode(Tape& t, Var h, Var queries) const {
    const Eigen::Index m = t.value(h).rows();
    const Var h_pos = ad::add_constant(t, h, sinusoidal_positions<S>(m, config_.d));
    Var x = queries;
    for (int l = 0; l < config_.decoder_layers; ++l) {
      const std::string pre = "dec.L" + std::to_string(l) + ".";
      if (config_.query_self_attention) x = self_block_attention_only(t, x, pre + "self.");
      const Var q = ad::linear_rows(t, x, p(t, pre + "wq"), p(t, pre + "bq"));
      const Var k = ad::linear(t, h_pos, p(t, pre + "wk"), p(t, pre + "bk"));
      const Var v = ad::linear(t, h, p(t, pre + "wv"), p(t, pre + "bv"));
      const Var a = ad::attention(t, q, k, v, config_.decoder_heads);
      x = ad::layer_norm(t, ad::add(t, x, ad::linear_rows(t, a, p(t, pre + "wo"), p(t, pre + "bo"))),
                         p(t, pre + "ln1.g"), p(t, pre + "ln1.b"));
      x = ffn(t, x, pre, /*rowwise=*/true);
    }
    return ad::linear_rows(t, x, p(t, "head.w"), p(t, "head.b"));
  }

  /// Mean-pooled audio embedding (1 x d) used by the contrastive term.
  Var pool_audio(Tape& t, Var h) const {
    Var pooled = ad::mean_rows(t, h);
    if (config_.contrastive_projection) {
      pooled = ad::linear(t, pooled, p(t, "con.proj.w"), p(t, "con.proj.b"));
    }
    return pooled;
  }

  Var lambda_var(Tape& t) const { return p(t, "lambda"); }

  /// Eval-mode text embeddings, one row per text.
  Mat embed_texts(const std::vector<std::string>& texts) const {
    Mat out(static_cast<Eigen::Index>(texts.size()), config_.d);
    for (std::size_t i = 0; i < texts.size(); ++i) {
      Tape t(false);
      out.row(static_cast<Eigen::Index>(i)) = t.value(encode_text(t, texts[i]));
    }
    return out;
  }

  /// Eval-mode logits of precomputed query embeddings against one recording.
  Eigen::Matrix<S, Eigen::Dynamic, 1> logits(const FeatureMatrix& frames, const Mat& query_embeddings) const {
    Tape t(false);
    const Var h = encode_audio(t, frames);
    const Var q = t.constant(query_embeddings);
    return t.value(decode(t, h, q)).col(0);
  }

  /// Eval-mode encoded audio map.
  Mat audio_map(const FeatureMatrix& frames) const {
    Tape t(false);
    return t.value(encode_audio(t, frames));
  }

  /// Copies every parameter value from a model of another scalar type.
  template <typename Other>
  void copy_values_from(const Model<Other>& other) {
    for (auto& prm : params_) {
      const auto& src = other.params()[other.params().index_of(prm.name)];
      if (src.value.rows() != prm.value.rows() || src.value.cols() != prm.value.cols()) {
        throw ValidationError("parameter '" + prm.name + "' shape mismatch");
      }
      prm.value = src.value.template cast<S>();
    }
  }

 private:
  Var p(Tape& t, const std::string& name) const { return t.param(params_[params_.index_of(name)]); }

  Var ffn(Tape& t, Var x, const std::string& pre, bool rowwise) const {
    Var f;
    if (rowwise) {
      f = ad::linear_rows(t, ad::gelu(t, ad::linear_rows(t, x, p(t, pre + "w1"), p(t, pre + "b1"))), p(t, pre + "w2"),
                          p(t, pre + "b2"));
    } else {
      f = ad::linear(t, ad::gelu(t, ad::linear(t, x, p(t, pre + "w1"), p(t, pre + "b1"))), p(t, pre + "w2"),
                     p(t, pre + "b2"));
    }
    return ad::layer_norm(t, ad::add(t, x, f), p(t, pre + "ln2.g"), p(t, pre + "ln2.b"));
  }

  Var self_block(Tape& t, Var x, const std::string& pre, int heads, bool rowwise) const {
    const Var q = ad::linear(t, x, p(t, pre + "wq"), p(t, pre + "bq"));
    const Var k = ad::linear(t, x, p(t, pre + "wk"), p(t, pre + "bk"));
    const Var v = ad::linear(t, x, p(t, pre + "wv"), p(t, pre + "bv"));
    const Var a = ad::attention(t, q, k, v, heads);
    x = ad::layer_norm(t, ad::add(t, x, ad::linear(t, a, p(t, pre + "wo"), p(t, pre + "bo"))), p(t, pre + "ln1.g"),
                       p(t, pre + "ln1.b"));
    return ffn(t, x, pre, rowwise);
  }

  Var self_block_attention_only(Tape& t, Var x, const std::string& pre) const {
    const Var q = ad::linear(t, x, p(t, pre + "wq"), p(t, pre + "bq"));
    const Var k = ad::linear(t, x, p(t, pre + "wk"), p(t, pre + "bk"));
    const Var v = ad::linear(t, x, p(t, pre + "wv"), p(t, pre + "bv"));
    const Var a = ad::attention(t, q, k, v, config_.decoder_heads);
    return ad::layer_norm(t, ad::add(t, x, ad::linear(t, a, p(t, pre + "wo"), p(t, pre + "bo"))), p(t, pre + "ln.g"),
                          p(t, pre + "ln.b"));
  }

  void init(std::uint64_t seed) {
    Rng rng(mix_seed(seed, 0xa11ce));
    const int d = config_.d;
    auto norm = [&](const std::string& name) {
      params_.add(name + ".g", Mat::Ones(1, d), false);
      params_.add(name + ".b", Mat::Zero(1, d), false);
    };
    auto proj = [&](const std::string& pre, const std::string& w, const std::string& b, Eigen::Index in,
                    Eigen::Index out) {
      Mat m(in, out);
      const double sd = 1.0 / std::sqrt(static_cast<double>(in));
      for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = static_cast<S>(sd * rng.normal());
      params_.add(pre + w, std::move(m), true);
      params_.add(pre + b, Mat::Zero(1, out), false);
    };
    auto attn_block = [&](const std::string& pre) {
      proj(pre, "wq", "bq", d, d);
      proj(pre, "wk", "bk", d, d);
      proj(pre, "wv", "bv", d, d);
      proj(pre, "wo", "bo", d, d);
    };
    auto ffn_block = [&](const std::string& pre) {
      const int hidden = d * config_.ffn_multiplier;
      proj(pre, "w1", "b1", d, hidden);
      proj(pre, "w2", "b2", hidden, d);
    };

    // Text encoder.
    {
      Mat emb(static_cast<Eigen::Index>(vocab_.size()), d);
      for (Eigen::Index i = 0; i < emb.size(); ++i) emb.data()[i] = static_cast<S>(rng.normal());
      params_.add("text.embed", std::move(emb), true);
      for (int l = 0; l < config_.text_layers; ++l) {
        const std::string pre = "text.L" + std::to_string(l) + ".";
        attn_block(pre);
        norm(pre + "ln1");
        ffn_block(pre);
        norm(pre + "ln2");
      }
    }
    // Audio encoder.
    {
      int c_in = 1;
      for (std::size_t b = 0; b < config_.audio_channels.size(); ++b) {
        const int c_out = config_.audio_channels[b];
        proj("audio.conv" + std::to_string(b) + ".", "w", "b", 9 * c_in, c_out);
        c_in = c_out;
      }
      Eigen::Index f = config_.num_mel_bins;
      for (int stride : config_.audio_freq_strides) f = ad::strided_length(f, stride);
      proj("audio.proj.", "w", "b", f * c_in, d);
    }
    // Query decoder.
    for (int l = 0; l < config_.decoder_layers; ++l) {
      const std::string pre = "dec.L" + std::to_string(l) + ".";
      if (config_.query_self_attention) {
        attn_block(pre + "self.");
        norm(pre + "self.ln");
      }
      attn_block(pre);
      norm(pre + "ln1");
      ffn_block(pre);
      norm(pre + "ln2");
    }
    proj("head.", "w", "b", d, 1);
    if (config_.contrastive_projection) proj("con.proj.", "w", "b", d, d);
    params_.add("lambda", Mat::Constant(1, 1, static_cast<S>(config_.lambda_init)), false);
  }

  ModelConfig config_;
  Vocabulary vocab_;
  ad::ParameterSet<S> params_;
};

/// One optimization step's worth of inputs.
template <typename S>
struct BatchInputs {
  std::vector<const FeatureMatrix*> frames;  // one filter-bank matrix per sample
  ad::Matrix<S> labels;                      // N x K, 0/1
  std::vector<std::string> class_texts;      // K query texts, catalog order
  std::vector<std::string> descriptions;     // N semantic descriptions
  bool contrastive = true;                   // false drops the term and leaves lambda out of the graph
};

/// Records bce + lambda * con for a batch on `t` and returns the 1 x 1 total.
/// The class queries are encoded once and shared by every sample; identical
/// semantic descriptions are encoded once per batch.
template <typename S>
ad::Var batch_loss(ad::Tape<S>& t, const Model<S>& model, const BatchInputs<S>& in, LossBreakdown* parts = nullptr) {
  const auto n = static_cast<Eigen::Index>(in.frames.size());
  const auto k = static_cast<Eigen::Index>(in.class_texts.size());
  if (n == 0 || k == 0) throw ValidationError("empty batch");
  if (in.labels.rows() != n || in.labels.cols() != k) throw ValidationError("label matrix does not match the batch");
  if (in.contrastive && static_cast<Eigen::Index>(in.descriptions.size()) != n) {
    throw ValidationError("one semantic description per sample is required");
  }
  std::vector<ad::Var> queries;
  queries.reserve(in.class_texts.size());
  for (const auto& text : in.class_texts) queries.push_back(model.encode_text(t, text));
  const ad::Var q = ad::vstack(t, queries);

  std::vector<ad::Var> logit_rows, pooled;
  for (const FeatureMatrix* f : in.frames) {
    const ad::Var h = model.encode_audio(t, *f);
    logit_rows.push_back(ad::transpose(t, model.decode(t, h, q)));
    if (in.contrastive) pooled.push_back(model.pool_audio(t, h));
  }
  const ad::Var probs = ad::sigmoid(t, ad::vstack(t, logit_rows));
  const ad::Var bce = ad::bce(t, probs, in.labels);
  LossBreakdown lb;
  lb.tau = model.config().tau;
  lb.bce = static_cast<double>(t.scalar(bce));
  if (!in.contrastive) {
    lb.con = 0.0;
    lb.lambda = 0.0;
    lb.total = lb.bce;
    if (parts != nullptr) *parts = lb;
    return bce;
  }
  std::map<std::string, ad::Var> cache;
  std::vector<ad::Var> texts;
  for (const auto& d : in.descriptions) {
    auto it = cache.find(d);
    if (it == cache.end()) it = cache.emplace(d, model.encode_text(t, d)).first;
    texts.push_back(it->second);
  }
  const ad::Var con = ad::contrastive(t, ad::vstack(t, pooled), ad::vstack(t, texts), model.config().tau);
  const ad::Var lambda = model.lambda_var(t);
  const ad::Var total = ad::add(t, bce, ad::multiply(t, lambda, con));
  lb.con = static_cast<double>(t.scalar(con));
  lb.lambda = static_cast<double>(t.scalar(lambda));
  lb.total = static_cast<double>(t.scalar(total));
  if (parts != nullptr) *parts = lb;
  return total;
}

/// Vocabulary over every definition, description, canonical name and
/// annotation in the catalog, plus "normal".
Vocabulary vocabulary_for(const AbnormalityCatalog& catalog);

// Checkpoints.

/// Raw checkpoint contents: a JSON header and named float64 tensors.
struct Checkpoint {
  std::string header_json;  // model config, vocabulary, config hash, training state
  std::vector<std::string> names;
  std::vector<Eigen::MatrixXd> tensors;
  /// Optional AdamW moments, aligned with tensors (empty when absent).
  std::vector<Eigen::MatrixXd> adam_m;
  std::vector<Eigen::MatrixXd> adam_v;
};

void write_checkpoint(const std::string& path, const Checkpoint& ckpt);
Checkpoint read_checkpoint(const std::string& path);

/// Header fields shared by every checkpoint.
struct CheckpointInfo {
  ModelConfig config;
  std::vector<std::string> vocab_tokens;
  std::string config_hash;
  int epochs_completed = 0;
  std::uint64_t step = 0;
  std::string extra_json = "{}";  // free-form training state
};

std::string checkpoint_header(const CheckpointInfo& info);
CheckpointInfo parse_checkpoint_header(const std::string& header_json);

template <typename S>
Checkpoint make_checkpoint(const Model<S>& model, const CheckpointInfo& info) {
  Checkpoint c;
  c.header_json = checkpoint_header(info);
  for (const auto& prm : model.params()) {
    c.names.push_back(prm.name);
    c.tensors.push_back(prm.value.template cast<double>());
  }
  return c;
}

/// Rebuilds a model from a checkpoint; any missing, extra or misshapen tensor
/// is a ValidationError.
template <typename S>
Model<S> model_from_checkpoint(const Checkpoint& ckpt, CheckpointInfo* info_out = nullptr) {
  CheckpointInfo info = parse_checkpoint_header(ckpt.header_json);
  Model<S> model(info.config, Vocabulary::from_tokens(info.vocab_tokens), 0);
  if (ckpt.names.size() != model.params().size()) {
    throw ValidationError("checkpoint has " + std::to_string(ckpt.names.size()) + " tensors, model expects " +
                          std::to_string(model.params().size()));
  }
  for (std::size_t i = 0; i < ckpt.names.size(); ++i) {
    if (!model.params().contains(ckpt.names[i])) {
      throw ValidationError("checkpoint tensor '" + ckpt.names[i] + "' is not a model parameter");
    }
    auto& prm = model.params()[model.params().index_of(ckpt.names[i])];
    const auto& v = ckpt.tensors[i];
    if (v.rows() != prm.value.rows() || v.cols() != prm.value.cols()) {
      throw ValidationError("checkpoint tensor '" + ckpt.names[i] + "' has shape " + std::to_string(v.rows()) + "x" +
                            std::to_string(v.cols()) + ", model expects " + std::to_string(prm.value.rows()) + "x" +
                            std::to_string(prm.value.cols()));
    }
    prm.value = v.cast<S>();
  }
  if (info_out != nullptr) *info_out = std::move(info);
  return model;
}

}  // namespace hsd

#endif  // HSDLAB_MODEL_HPP_
