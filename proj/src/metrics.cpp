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

#include "hsdlab/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <limits>
#include <numeric>
#include <sstream>

#include "json.hpp"

namespace hsd {

using nlohmann::json;

namespace {

double ratio(std::size_t num, std::size_t den) {
  return den == 0 ? 0.0 : static_cast<double>(num) / static_cast<double>(den);
}

double round2(double percent) { return std::round(percent * 100.0) / 100.0; }

std::string pct(double fraction) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.2f", fraction * 100.0);
  return buf;
}

json prf_json(const Prf& p) {
  return {{"precision", round2(p.precision * 100.0)}, {"recall", round2(p.recall * 100.0)}, {"f1", round2(p.f1 * 100.0)}};
}

json report_json(const MetricsReport& r) {
  json classes = json::array();
  for (const auto& c : r.classes) {
    json jc = prf_json(c.prf);
    jc["name"] = c.name;
    jc["tp"] = c.counts.tp;
    jc["fp"] = c.counts.fp;
    jc["fn"] = c.counts.fn;
    jc["tn"] = c.counts.tn;
    jc["auc"] = c.auc ? json(std::round(*c.auc * 1e6) / 1e6) : json(nullptr);
    classes.push_back(std::move(jc));
  }
  return {{"classes", classes},
          {"macro", prf_json(r.macro)},
          {"n_samples", r.n_samples},
          {"threshold", r.threshold},
          {"config_hash", r.config_hash},
          {"seed", r.seed}};
}

}  // namespace

Prf prf(const ConfusionCounts& c) {
  Prf out;
  out.precision = ratio(c.tp, c.tp + c.fp);
  out.recall = ratio(c.tp, c.tp + c.fn);
  const double s = out.precision + out.recall;
  out.f1 = s > 0.0 ? 2.0 * out.precision * out.recall / s : 0.0;
  return out;
}

std::vector<ConfusionCounts> confusion(const std::vector<LabelVector>& truth, const std::vector<LabelVector>& pred,
                                       std::size_t k) {
  if (truth.size() != pred.size()) throw ValidationError("truth and prediction counts differ");
  std::vector<ConfusionCounts> out(k);
  for (std::size_t i = 0; i < truth.size(); ++i) {
    if (truth[i].size() != k || pred[i].size() != k) throw ValidationError("label vector length mismatch");
    for (std::size_t j = 0; j < k; ++j) {
      const bool t = truth[i][j] != 0;
      const bool p = pred[i][j] != 0;
      ConfusionCounts& c = out[j];
      if (t && p) {
        ++c.tp;
      } else if (!t && p) {
        ++c.fp;
      } else if (t && !p) {
        ++c.fn;
      } else {
        ++c.tn;
      }
    }
  }
  return out;
}

RocCurve roc_auc(const std::vector<double>& scores, const std::vector<std::uint8_t>& labels) {
  if (scores.size() != labels.size()) throw ValidationError("scores and labels differ in length");
  std::size_t pos = 0;
  for (auto l : labels) pos += l != 0 ? 1 : 0;
  const std::size_t neg = labels.size() - pos;
  if (pos == 0 || neg == 0) throw ValidationError("degenerate ROC: both classes must be present");

  std::vector<std::size_t> order(scores.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return scores[a] > scores[b]; });

  RocCurve curve;
  curve.points.push_back({0.0, 0.0, std::numeric_limits<double>::infinity()});
  std::size_t tp = 0, fp = 0;
  double area = 0.0;  // pairs (pos, neg) with pos ranked above neg, ties half
  for (std::size_t i = 0; i < order.size();) {
    const double s = scores[order[i]];
    std::size_t gp = 0, gn = 0;
    while (i < order.size() && scores[order[i]] == s) {
      if (labels[order[i]] != 0) {
        ++gp;
      } else {
        ++gn;
      }
      ++i;
    }
    // Positives in this group beat every negative not yet seen, and tie with
    // the group's negatives.
    area += static_cast<double>(gp) * (static_cast<double>(neg - fp - gn) + 0.5 * static_cast<double>(gn));
    tp += gp;
    fp += gn;
    curve.points.push_back({ratio(fp, neg), ratio(tp, pos), s});
  }
  curve.auc = area / (static_cast<double>(pos) * static_cast<double>(neg));
  return curve;
}

MetricsReport evaluate(const std::vector<LabelVector>& truth, const Eigen::MatrixXd& scores,
                       const std::vector<std::string>& class_names, double threshold) {
  const std::size_t k = class_names.size();
  if (static_cast<std::size_t>(scores.rows()) != truth.size() || static_cast<std::size_t>(scores.cols()) != k) {
    throw ValidationError("score matrix does not match labels and classes");
  }
  if (truth.empty()) throw ValidationError("cannot evaluate an empty split");
  std::vector<LabelVector> pred;
  for (Eigen::Index i = 0; i < scores.rows(); ++i) pred.push_back(decide(scores.row(i).transpose(), threshold));
  const auto counts = confusion(truth, pred, k);
  MetricsReport r;
  r.n_samples = truth.size();
  r.threshold = threshold;
  for (std::size_t j = 0; j < k; ++j) {
    ClassMetrics c;
    c.name = class_names[j];
    c.counts = counts[j];
    c.prf = prf(counts[j]);
    std::vector<double> s(truth.size());
    std::vector<std::uint8_t> l(truth.size());
    std::size_t positives = 0;
    for (std::size_t i = 0; i < truth.size(); ++i) {
      s[i] = scores(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j));
      l[i] = truth[i][j];
      positives += l[i];
    }
    if (positives > 0 && positives < truth.size()) c.auc = roc_auc(s, l).auc;
    r.macro.precision += c.prf.precision / static_cast<double>(k);
    r.macro.recall += c.prf.recall / static_cast<double>(k);
    r.macro.f1 += c.prf.f1 / static_cast<double>(k);
    r.classes.push_back(std::move(c));
  }
  return r;
}

std::string metrics_to_json(const MetricsReport& report) { return report_json(report).dump(2) + "\n"; }

std::string metrics_table(const MetricsReport& report) {
  std::vector<std::string> header = {"Metric"};
  for (const auto& c : report.classes) header.push_back(c.name);
  header.push_back("Average");
  std::vector<std::vector<std::string>> rows = {header};
  const char* names[] = {"P", "R", "F1"};
  for (int m = 0; m < 3; ++m) {
    std::vector<std::string> row = {names[m]};
    auto pick = [m](const Prf& p) { return m == 0 ? p.precision : (m == 1 ? p.recall : p.f1); };
    for (const auto& c : report.classes) row.push_back(pct(pick(c.prf)));
    row.push_back(pct(pick(report.macro)));
    rows.push_back(std::move(row));
  }
  std::vector<std::size_t> width(header.size(), 0);
  for (const auto& row : rows) {
    for (std::size_t i = 0; i < row.size(); ++i) width[i] = std::max(width[i], row[i].size());
  }
  std::ostringstream out;
  for (const auto& row : rows) {
    for (std::size_t i = 0; i < row.size(); ++i) {
      if (i > 0) out << "  ";
      if (i == 0) {
        out << row[i] << std::string(width[i] - row[i].size(), ' ');
      } else {
        out << std::string(width[i] - row[i].size(), ' ') << row[i];
      }
    }
    out << "\n";
  }
  out << "n_samples=" << report.n_samples << " threshold=" << report.threshold;
  if (!report.config_hash.empty()) out << " config_hash=" << report.config_hash;
  out << " seed=" << report.seed << "\n";
  return out.str();
}

std::string roc_csv(const RocCurve& curve) {
  std::ostringstream out;
  out << "fpr,tpr,threshold\n";
  char buf[96];
  for (const auto& p : curve.points) {
    if (std::isinf(p.threshold)) {
      std::snprintf(buf, sizeof(buf), "%.6f,%.6f,inf\n", p.fpr, p.tpr);
    } else {
      std::snprintf(buf, sizeof(buf), "%.6f,%.6f,%.9g\n", p.fpr, p.tpr, p.threshold);
    }
    out << buf;
  }
  return out.str();
}

std::string roc_svg(const RocCurve& curve, const std::string& title) {
  constexpr double kSize = 320.0;
  constexpr double kMargin = 48.0;
  auto x = [](double fpr) { return kMargin + fpr * kSize; };
  auto y = [](double tpr) { return kMargin + (1.0 - tpr) * kSize; };
  std::string escaped;
  for (char c : title) {
    if (c == '<') {
      escaped += "&lt;";
    } else if (c == '>') {
      escaped += "&gt;";
    } else if (c == '&') {
      escaped += "&amp;";
    } else {
      escaped += c;
    }
  }
  char buf[160];
  std::ostringstream out;
  const double total = kSize + 2 * kMargin;
  out << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << total << "\" height=\"" << total << "\">\n";
  out << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
  std::snprintf(buf, sizeof(buf), "<rect x=\"%g\" y=\"%g\" width=\"%g\" height=\"%g\" fill=\"none\" stroke=\"black\"/>\n",
                kMargin, kMargin, kSize, kSize);
  out << buf;
  std::snprintf(buf, sizeof(buf),
                "<line x1=\"%g\" y1=\"%g\" x2=\"%g\" y2=\"%g\" stroke=\"gray\" stroke-dasharray=\"4 4\"/>\n", x(0), y(0),
                x(1), y(1));
  out << buf;
  out << "<polyline fill=\"none\" stroke=\"#c0392b\" stroke-width=\"2\" points=\"";
  for (const auto& p : curve.points) {
    std::snprintf(buf, sizeof(buf), "%.2f,%.2f ", x(p.fpr), y(p.tpr));
    out << buf;
  }
  out << "\"/>\n";
  std::snprintf(buf, sizeof(buf), "<text x=\"%g\" y=\"%g\" font-family=\"sans-serif\" font-size=\"14\">", kMargin,
                kMargin - 16);
  out << buf << escaped;
  std::snprintf(buf, sizeof(buf), " (AUC %.3f)</text>\n", curve.auc);
  out << buf;
  std::snprintf(buf, sizeof(buf),
                "<text x=\"%g\" y=\"%g\" font-family=\"sans-serif\" font-size=\"12\">False positive rate</text>\n",
                kMargin + kSize / 2 - 50, total - 14);
  out << buf;
  std::snprintf(buf, sizeof(buf),
                "<text x=\"14\" y=\"%g\" font-family=\"sans-serif\" font-size=\"12\" "
                "transform=\"rotate(-90 14 %g)\">True positive rate</text>\n",
                kMargin + kSize / 2 + 45, kMargin + kSize / 2 + 45);
  out << buf;
  out << "</svg>\n";
  return out.str();
}

std::string ablation_cell_name(AblationCell cell) {
  switch (cell) {
    case AblationCell::kFull:
      return "full";
    case AblationCell::kNoPretrainedText:
      return "no_pretrained_text";
    case AblationCell::kNoPretrainedAudio:
      return "no_pretrained_audio";
    case AblationCell::kNoContrastive:
      return "no_contrastive";
    case AblationCell::kEntityWords:
      return "entity_words";
  }
  return "unknown";
}

std::vector<AblationCell> all_ablation_cells() {
  return {AblationCell::kFull, AblationCell::kNoPretrainedText, AblationCell::kNoPretrainedAudio,
          AblationCell::kNoContrastive, AblationCell::kEntityWords};
}

AblationCell parse_ablation_cell(const std::string& name) {
  for (AblationCell c : all_ablation_cells()) {
    if (ablation_cell_name(c) == name) return c;
  }
  throw ValidationError("unknown ablation cell '" + name + "'");
}

Eigen::MatrixXd predict_all(const Predictor& predictor, const std::vector<FeatureMatrix>& frames) {
  Eigen::MatrixXd out(static_cast<Eigen::Index>(frames.size()), static_cast<Eigen::Index>(predictor.num_classes()));
  for (std::size_t i = 0; i < frames.size(); ++i) {
    out.row(static_cast<Eigen::Index>(i)) = predictor.predict(frames[i]).transpose();
  }
  return out;
}

Model<float> ablation_initial_model(const AblationSetup& setup, AblationCell cell) {
  Model<float> model(setup.model, setup.vocab, setup.model_seed);
  if (setup.warm_start == nullptr) return model;
  const bool text = cell != AblationCell::kNoPretrainedText;
  const bool audio = cell != AblationCell::kNoPretrainedAudio;
  for (auto& p : model.params()) {
    const bool take = (text && p.name.rfind("text.", 0) == 0) || (audio && p.name.rfind("audio.", 0) == 0);
    if (!take) continue;
    const auto& src = setup.warm_start->params();
    if (!src.contains(p.name)) throw ValidationError("warm start lacks parameter '" + p.name + "'");
    const auto& v = src[src.index_of(p.name)].value;
    if (v.rows() != p.value.rows() || v.cols() != p.value.cols()) {
      throw ValidationError("warm start parameter '" + p.name + "' has a different shape");
    }
    p.value = v;
  }
  return model;
}

std::vector<AblationRow> run_ablation_train(const AblationSetup& setup, const std::vector<AblationCell>& grid) {
  if (setup.train == nullptr || setup.test == nullptr || setup.catalog == nullptr) {
    throw std::invalid_argument("ablation setup is incomplete");
  }
  std::vector<std::string> names;
  for (const auto& e : setup.catalog->entities) names.push_back(e.canonical_name);
  std::vector<AblationRow> rows;
  for (AblationCell cell : grid) {
    AblationRow row;
    row.name = ablation_cell_name(cell);
    try {
      TrainConfig tc = setup.train_config;
      InferConfig ic = setup.infer;
      if (cell == AblationCell::kNoContrastive) tc.contrastive = false;
      if (cell == AblationCell::kEntityWords) {
        tc.queries = QueryText::kEntityName;
        ic.n_descriptions = 0;
      }
      TrainResult trained = train(*setup.train, *setup.catalog, ablation_initial_model(setup, cell), tc);
      const Predictor predictor(trained.model, *setup.catalog, ic);
      row.report = evaluate(setup.test->labels, predict_all(predictor, setup.test->frames), names, ic.threshold);
      row.log = std::move(trained.log);
    } catch (const std::exception& e) {
      row.error = e.what();
    }
    rows.push_back(std::move(row));
  }
  return rows;
}

std::vector<AblationRow> run_ablation_infer(const Model<float>& model, const AbnormalityCatalog& catalog,
                                            const EvalSet& test, const std::vector<int>& n_values,
                                            double threshold) {
  std::vector<std::string> names;
  for (const auto& e : catalog.entities) names.push_back(e.canonical_name);
  std::vector<AblationRow> rows;
  for (int n : n_values) {
    AblationRow row;
    row.name = n == 0 ? "entity_only" : "N=" + std::to_string(n);
    try {
      InferConfig ic;
      ic.n_descriptions = n;
      ic.threshold = threshold;
      const Predictor predictor(model, catalog, ic);
      row.report = evaluate(test.labels, predict_all(predictor, test.frames), names, threshold);
    } catch (const std::exception& e) {
      row.error = e.what();
    }
    rows.push_back(std::move(row));
  }
  return rows;
}

std::string ablation_table(const std::vector<AblationRow>& rows) {
  std::size_t w = 6;
  for (const auto& r : rows) w = std::max(w, r.name.size());
  std::ostringstream out;
  char buf[128];
  std::snprintf(buf, sizeof(buf), "%-*s  %8s  %8s  %8s\n", static_cast<int>(w), "Method", "P", "R", "F1");
  out << buf;
  for (const auto& r : rows) {
    if (r.report) {
      std::snprintf(buf, sizeof(buf), "%-*s  %8s  %8s  %8s\n", static_cast<int>(w), r.name.c_str(),
                    pct(r.report->macro.precision).c_str(), pct(r.report->macro.recall).c_str(),
                    pct(r.report->macro.f1).c_str());
      out << buf;
    } else {
      out << r.name << std::string(w - r.name.size(), ' ') << "  failed: " << r.error << "\n";
    }
  }
  return out.str();
}

std::string ablation_to_json(const std::vector<AblationRow>& rows) {
  json arr = json::array();
  for (const auto& r : rows) {
    json j = {{"name", r.name}};
    j["metrics"] = r.report ? report_json(*r.report) : json(nullptr);
    json log = json::array();
    for (const auto& e : r.log) {
      log.push_back({{"epoch", e.epoch},
                     {"bce", e.bce},
                     {"con", e.con ? json(*e.con) : json(nullptr)},
                     {"lambda", e.lambda},
                     {"total", e.total}});
    }
    j["epochs"] = log;
    if (!r.error.empty()) j["error"] = r.error;
    arr.push_back(std::move(j));
  }
  return arr.dump(2) + "\n";
}

}  // namespace hsd
