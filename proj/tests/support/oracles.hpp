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

// Independent reference implementations shared by the unit tests and the
// acceptance runner. Each one is written from the defining formula with
// plain loops and does not call into the library code it checks.

#ifndef HSDLAB_TESTS_SUPPORT_ORACLES_HPP_
#define HSDLAB_TESTS_SUPPORT_ORACLES_HPP_

#include <Eigen/Dense>

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <map>
#include <string>
#include <utility>
#include <vector>

#include "hsdlab/catalog.hpp"
#include "hsdlab/metrics.hpp"

namespace hsd::oracle {

/// Mean binary cross-entropy with predictions clamped to [1e-7, 1 - 1e-7].
inline double bce(const std::vector<std::vector<double>>& p, const std::vector<std::vector<int>>& s) {
  double acc = 0.0;
  std::size_t count = 0;
  for (std::size_t i = 0; i < p.size(); ++i) {
    for (std::size_t j = 0; j < p[i].size(); ++j) {
      double e = p[i][j];
      if (e < 1e-7) e = 1e-7;
      if (e > 1 - 1e-7) e = 1 - 1e-7;
      acc += s[i][j] == 1 ? std::log(e) : std::log(1 - e);
      ++count;
    }
  }
  return -acc / static_cast<double>(count);
}

/// Symmetric InfoNCE over cosine similarities divided by tau.
inline double infonce(const Eigen::MatrixXd& audio, const Eigen::MatrixXd& text, double tau) {
  const auto n = static_cast<std::size_t>(audio.rows());
  const auto d = static_cast<std::size_t>(audio.cols());
  std::vector<std::vector<double>> sim(n, std::vector<double>(n));
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t k = 0; k < n; ++k) {
      double dot = 0, na = 0, nt = 0;
      for (std::size_t c = 0; c < d; ++c) {
        const double a = audio(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(c));
        const double t = text(static_cast<Eigen::Index>(k), static_cast<Eigen::Index>(c));
        dot += a * t;
        na += a * a;
        nt += t * t;
      }
      sim[i][k] = dot / std::sqrt(na * nt) / tau;
    }
  }
  double total = 0;
  for (std::size_t i = 0; i < n; ++i) {
    double row = 0, col = 0;
    for (std::size_t k = 0; k < n; ++k) {
      row += std::exp(sim[i][k]);
      col += std::exp(sim[k][i]);
    }
    total += std::log(std::exp(sim[i][i]) / row) + std::log(std::exp(sim[i][i]) / col);
  }
  return -total / static_cast<double>(n);
}

/// Precision, recall and F1 from raw label lists; F1 via 2tp / (2tp + fp + fn).
inline Prf prf(const std::vector<int>& truth, const std::vector<int>& pred) {
  double tp = 0, fp = 0, fn = 0;
  for (std::size_t i = 0; i < truth.size(); ++i) {
    tp += truth[i] && pred[i];
    fp += !truth[i] && pred[i];
    fn += truth[i] && !pred[i];
  }
  Prf r;
  r.precision = tp + fp > 0 ? tp / (tp + fp) : 0.0;
  r.recall = tp + fn > 0 ? tp / (tp + fn) : 0.0;
  r.f1 = tp > 0 ? 2 * tp / (2 * tp + fp + fn) : 0.0;
  return r;
}

/// AUC by counting every (positive, negative) pair, ties worth one half.
inline double auc(const std::vector<double>& s, const std::vector<std::uint8_t>& l) {
  double num = 0, pairs = 0;
  for (std::size_t i = 0; i < s.size(); ++i) {
    if (!l[i]) continue;
    for (std::size_t j = 0; j < s.size(); ++j) {
      if (l[j]) continue;
      pairs += 1;
      num += s[i] > s[j] ? 1.0 : (s[i] == s[j] ? 0.5 : 0.0);
    }
  }
  return num / pairs;
}

/// Top-k entity names by summed count with count >= min_count, ties by name.
/// Filters, then bubble-sorts with the full comparator, then truncates.
/// Returns fewer than k entries when not enough qualify.
inline std::vector<std::pair<std::string, std::size_t>> schema(const EntityFrequencyTable& table, int k,
                                                               int min_count) {
  std::map<std::string, std::size_t> totals;
  for (const auto& e : table.entries) {
    if (e.mapped_entity) totals[*e.mapped_entity] += e.count;
  }
  std::vector<std::pair<std::string, std::size_t>> eligible;
  for (const auto& [n, c] : totals) {
    if (static_cast<int>(c) >= min_count) eligible.emplace_back(n, c);
  }
  for (std::size_t i = 0; i < eligible.size(); ++i) {
    for (std::size_t j = i + 1; j < eligible.size(); ++j) {
      const bool swap = eligible[j].second > eligible[i].second ||
                        (eligible[j].second == eligible[i].second && eligible[j].first < eligible[i].first);
      if (swap) std::swap(eligible[i], eligible[j]);
    }
  }
  if (static_cast<int>(eligible.size()) > k) eligible.resize(static_cast<std::size_t>(k));
  return eligible;
}

/// Frames counted by sliding a window until it falls off the end.
inline std::size_t frames_by_walking(std::size_t n, std::size_t len, std::size_t shift) {
  std::size_t count = 0;
  for (std::size_t start = 0; start + len <= n; start += shift) ++count;
  return count;
}

}  // namespace hsd::oracle

#endif  // HSDLAB_TESTS_SUPPORT_ORACLES_HPP_
