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

// Precision / recall / F1, ROC curves, report tables and the ablation
// harnesses.

#ifndef HSDLAB_METRICS_HPP_
#define HSDLAB_METRICS_HPP_

#include <Eigen/Dense>

#include <cstddef>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "hsdlab/catalog.hpp"
#include "hsdlab/model.hpp"
#include "hsdlab/pipeline.hpp"

namespace hsd {

struct ConfusionCounts {
  std::size_t tp = 0;
  std::size_t fp = 0;
  std::size_t fn = 0;
  std::size_t tn = 0;

  std::size_t total() const { return tp + fp + fn + tn; }
};

struct Prf {
  double precision = 0.0;
  double recall = 0.0;
  double f1 = 0.0;
};

/// Undefined ratios (zero denominators) are reported as 0.
Prf prf(const ConfusionCounts& counts);

/// Per-class counts; truth and pred are N label vectors of length k.
std::vector<ConfusionCounts> confusion(const std::vector<LabelVector>& truth, const std::vector<LabelVector>& pred,
                                       std::size_t k);

struct RocPoint {
  double fpr = 0.0;
  double tpr = 0.0;
  double threshold = 0.0;  // scores >= threshold are positive; +inf for the origin
};

struct RocCurve {
  std::vector<RocPoint> points;  // from (0, 0) to (1, 1), one point per distinct score
  double auc = 0.0;
};

/// ROC curve and the Mann-Whitney AUC (ties count one half). Throws
/// ValidationError "degenerate ROC" unless both classes are present.
RocCurve roc_auc(const std::vector<double>& scores, const std::vector<std::uint8_t>& labels);

struct ClassMetrics {
  std::string name;
  ConfusionCounts counts;
  Prf prf;
  std::optional<double> auc;  // empty when the class has one label value in the split
};

struct MetricsReport {
  std::vector<ClassMetrics> classes;
  Prf macro;  // unweighted mean of the per-class values
  std::size_t n_samples = 0;
  double threshold = 0.5;
  std::string config_hash;
  std::uint64_t seed = 0;
};

/// Scores are N x K predicted probabilities.
MetricsReport evaluate(const std::vector<LabelVector>& truth, const Eigen::MatrixXd& scores,
                       const std::vector<std::string>& class_names, double threshold);

/// JSON with percentages rounded to two decimals.
std::string metrics_to_json(const MetricsReport& report);
/// Aligned text table: one column per class plus Average; rows P, R, F1 (%).
std::string metrics_table(const MetricsReport& report);

/// `fpr,tpr,threshold` with a header row.
std::string roc_csv(const RocCurve& curve);
/// Self-contained SVG line plot of one curve.
std::string roc_svg(const RocCurve& curve, const std::string& title);

// Ablations.

enum class AblationCell { kFull, kNoPretrainedText, kNoPretrainedAudio, kNoContrastive, kEntityWords };

std::string ablation_cell_name(AblationCell cell);
AblationCell parse_ablation_cell(const std::string& name);
std::vector<AblationCell> all_ablation_cells();

struct EvalSet {
  std::vector<std::string> ids;
  std::vector<FeatureMatrix> frames;
  std::vector<LabelVector> labels;
};

/// Scores every recording with the predictor: N x K probabilities.
Eigen::MatrixXd predict_all(const Predictor& predictor, const std::vector<FeatureMatrix>& frames);

struct AblationSetup {
  const TrainData* train = nullptr;
  const EvalSet* test = nullptr;
  const AbnormalityCatalog* catalog = nullptr;
  ModelConfig model;
  Vocabulary vocab;
  TrainConfig train_config;
  InferConfig infer;
  std::uint64_t model_seed = 0;
  /// Source of the "pretrained" encoders. Without it every cell starts from
  /// the same random initialization.
  const Model<float>* warm_start = nullptr;
};

struct AblationRow {
  std::string name;
  std::optional<MetricsReport> report;
  std::vector<EpochLog> log;
  std::string error;  // non-empty when the cell failed
};

/// The initial model of one cell: encoders copied from the warm start unless
/// the cell asks for a random one.
Model<float> ablation_initial_model(const AblationSetup& setup, AblationCell cell);

/// Trains and evaluates one model per cell with a shared seed and split. A
/// failing cell is recorded and the others still run.
std::vector<AblationRow> run_ablation_train(const AblationSetup& setup, const std::vector<AblationCell>& grid);

/// Re-evaluates one trained model for each description count, no retraining.
std::vector<AblationRow> run_ablation_infer(const Model<float>& model, const AbnormalityCatalog& catalog,
                                            const EvalSet& test, const std::vector<int>& n_values,
                                            double threshold = 0.5);

/// Macro P/R/F1 (%) per row, one line each.
std::string ablation_table(const std::vector<AblationRow>& rows);
std::string ablation_to_json(const std::vector<AblationRow>& rows);

}  // namespace hsd

#endif  // HSDLAB_METRICS_HPP_
