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

// Training loop (AdamW with warmup + cosine schedule) and description-ensemble
// inference.

#ifndef HSDLAB_PIPELINE_HPP_
#define HSDLAB_PIPELINE_HPP_

#include <Eigen/Dense>

#include <cmath>
#include <cstdint>
#include <functional>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "hsdlab/audiofeat.hpp"
#include "hsdlab/autodiff.hpp"
#include "hsdlab/catalog.hpp"
#include "hsdlab/losses.hpp"
#include "hsdlab/model.hpp"

namespace hsd {

/// Linear warmup from 0 to base_lr over warmup_steps, then a half cosine
/// down to 0 at total_steps.
double lr_at(std::uint64_t step, std::uint64_t total_steps, std::uint64_t warmup_steps, double base_lr);

/// AdamW with decoupled weight decay: decaying parameters shrink by
/// lr * weight_decay * theta before the Adam update, independent of the
/// gradient.
template <typename S>
class AdamW {
 public:
  using Mat = ad::Matrix<S>;

  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;

  /// Applies one update from the gradients stored in `params`. Parameters for
  /// which `frozen` returns true are left untouched.
  void step(ad::ParameterSet<S>& params, double lr, double weight_decay,
            const std::function<bool(const ad::Parameter<S>&)>& frozen = nullptr) {
    if (m_.size() != params.size()) reset(params);
    ++t_;
    const double c1 = 1.0 - std::pow(beta1, static_cast<double>(t_));
    const double c2 = 1.0 - std::pow(beta2, static_cast<double>(t_));
    for (std::size_t i = 0; i < params.size(); ++i) {
      auto& p = params[i];
      if (frozen && frozen(p)) continue;
      Mat& m = m_[i];
      Mat& v = v_[i];
      m = S(beta1) * m + S(1.0 - beta1) * p.grad;
      v = S(beta2) * v + S(1.0 - beta2) * p.grad.cwiseProduct(p.grad);
      if (p.decay && weight_decay != 0.0) p.value *= S(1.0 - lr * weight_decay);
      const S step_size = S(lr / c1);
      const S inv_c2 = S(1.0 / c2);
      p.value.array() -= step_size * m.array() / ((v.array() * inv_c2).sqrt() + S(eps));
    }
  }

  void reset(const ad::ParameterSet<S>& params) {
    m_.clear();
    v_.clear();
    for (const auto& p : params) {
      m_.push_back(Mat::Zero(p.value.rows(), p.value.cols()));
      v_.push_back(Mat::Zero(p.value.rows(), p.value.cols()));
    }
    t_ = 0;
  }

  std::uint64_t steps_taken() const { return t_; }
  const std::vector<Mat>& first_moments() const { return m_; }
  const std::vector<Mat>& second_moments() const { return v_; }
  void restore(std::vector<Mat> m, std::vector<Mat> v, std::uint64_t t) {
    m_ = std::move(m);
    v_ = std::move(v);
    t_ = t;
  }

 private:
  std::vector<Mat> m_;
  std::vector<Mat> v_;
  std::uint64_t t_ = 0;
};

/// Which text becomes each class query during training. kSampledDescription
/// draws, per class and micro-batch, one text uniformly from the definition
/// and the description bank, so paraphrases used at inference are in
/// distribution.
enum class QueryText { kDefinition, kEntityName, kSampledDescription };

std::string_view query_text_name(QueryText mode);
QueryText parse_query_text(std::string_view name);

struct TrainConfig {
  double lr = 5e-5;
  double weight_decay = 0.02;
  int epochs = 100;
  int warmup_epochs = 20;
  int batch_size = 16;
  /// Micro-batches summed into one optimizer step.
  int grad_accumulation = 1;
  std::uint64_t seed = 0;
  AugmentPolicy augment = AugmentPolicy::none();
  QueryText queries = QueryText::kSampledDescription;
  /// false: the contrastive term is dropped and lambda stays frozen.
  bool contrastive = true;

  /// Throws ValidationError on inconsistent values.
  void validate() const;
};

std::string train_config_to_json(const TrainConfig& config);
TrainConfig train_config_from_json(const std::string& text);

struct TrainSample {
  std::string id;
  LabelVector labels;
  std::string description;  // semantic description of the labels
  FeatureMatrix frames;     // cached filter banks of the clean recording
};

/// Regenerates or reloads a recording when waveform augmentation is on.
using WaveformLoader = std::function<HeartSoundRecord(const std::string& id)>;

struct TrainData {
  std::vector<TrainSample> samples;
  WaveformLoader loader;
};

/// Mean loss components over one epoch (sample-weighted).
struct EpochLog {
  int epoch = 0;  // 1-based, continues across resumes
  double bce = 0.0;
  std::optional<double> con;  // empty when the contrastive term is off
  double lambda = 0.0;        // value at the end of the epoch
  double total = 0.0;
  double lr = 0.0;            // at the last step of the epoch
};

/// Optimizer state carried across a resume.
struct TrainState {
  int epochs_completed = 0;
  std::uint64_t step = 0;
  AdamW<float> optimizer;
};

using EpochCallback = std::function<void(const EpochLog&, const Model<float>&, const TrainState&)>;

struct TrainResult {
  Model<float> model;
  std::vector<EpochLog> log;
  TrainState state;
};

/// Query text of every class for training.
/// One query text per class. For kSampledDescription the draw is a pure
/// function of `seed`.
std::vector<std::string> class_query_texts(const AbnormalityCatalog& catalog, QueryText mode,
                                           std::uint64_t seed = 0);

/// Trains `model` in place for the configured epochs (minus those already in
/// `state`). Throws RuntimeAbort on a non-finite loss or gradient.
TrainResult train(const TrainData& data, const AbnormalityCatalog& catalog, Model<float> model,
                  const TrainConfig& config, TrainState state = {}, const EpochCallback& on_epoch = nullptr);

struct InferConfig {
  /// 0 queries with the canonical names; N >= 1 with the first N bank entries.
  int n_descriptions = 10;
  double threshold = 0.5;
  /// With N >= 1, the training definition replaces the first bank entry.
  bool definition_first = false;

  void validate() const;
};

/// Per-class query texts for inference; throws ValidationError naming the
/// class when its bank holds fewer than N descriptions.
std::vector<std::vector<std::string>> inference_queries(const AbnormalityCatalog& catalog, const InferConfig& config);

/// Encodes every class query once and scores recordings against all of them.
/// Read-only after construction; safe to share between threads.
class Predictor {
 public:
  Predictor(const Model<float>& model, const AbnormalityCatalog& catalog, const InferConfig& config);
  Predictor(const Model<float>& model, std::vector<std::vector<std::string>> queries);

  /// Per-class mean of the per-query sigmoid outputs, catalog order.
  Eigen::VectorXd predict(const FeatureMatrix& frames) const;
  /// Sigmoid output of every query, grouped by class.
  std::vector<std::vector<double>> query_probabilities(const FeatureMatrix& frames) const;

  std::size_t num_classes() const { return queries_.size(); }

 private:
  const Model<float>* model_;
  std::vector<std::vector<std::string>> queries_;
  Eigen::MatrixXf embeddings_;  // all queries stacked in class order
};

/// label_j = 1 iff preds_j >= threshold.
LabelVector decide(const Eigen::VectorXd& preds, double threshold);

}  // namespace hsd

#endif  // HSDLAB_PIPELINE_HPP_
