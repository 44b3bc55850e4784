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

#ifndef HSDLAB_LOSSES_HPP_
#define HSDLAB_LOSSES_HPP_

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>
#include <string>

#include "hsdlab/common.hpp"

namespace hsd {

inline constexpr double kPredictionEpsilon = 1e-7;

template <typename Scalar>
Scalar sigmoid(Scalar x) {
  if (x >= Scalar(0)) {
    const Scalar e = std::exp(-x);
    return Scalar(1) / (Scalar(1) + e);
  }
  const Scalar e = std::exp(x);
  return e / (Scalar(1) + e);
}

/// Mean binary cross-entropy over an N x K matrix of probabilities; each
/// probability is clamped to [eps, 1 - eps] before the logarithm.
template <typename DerivedP, typename DerivedS>
typename DerivedP::Scalar bce_loss(const Eigen::MatrixBase<DerivedP>& preds,
                                   const Eigen::MatrixBase<DerivedS>& labels,
                                   double eps = kPredictionEpsilon) {
  using Scalar = typename DerivedP::Scalar;
  if (preds.rows() != labels.rows() || preds.cols() != labels.cols()) {
    throw std::invalid_argument("bce_loss: shape mismatch");
  }
  if (preds.size() == 0) throw std::invalid_argument("bce_loss: empty batch");
  const Scalar lo = Scalar(eps);
  const Scalar hi = Scalar(1) - Scalar(eps);
  Scalar total = 0;
  for (Eigen::Index j = 0; j < preds.cols(); ++j) {
    for (Eigen::Index i = 0; i < preds.rows(); ++i) {
      const Scalar p = std::clamp(Scalar(preds(i, j)), lo, hi);
      const Scalar s = Scalar(labels(i, j));
      total += s * std::log(p) + (Scalar(1) - s) * std::log(Scalar(1) - p);
    }
  }
  return -total / Scalar(preds.size());
}

/// dL/dpreds of bce_loss; zero where the clamp is active.
template <typename DerivedP, typename DerivedS>
Eigen::Matrix<typename DerivedP::Scalar, Eigen::Dynamic, Eigen::Dynamic> bce_loss_grad(
    const Eigen::MatrixBase<DerivedP>& preds, const Eigen::MatrixBase<DerivedS>& labels,
    double eps = kPredictionEpsilon) {
  using Scalar = typename DerivedP::Scalar;
  const Scalar lo = Scalar(eps);
  const Scalar hi = Scalar(1) - Scalar(eps);
  const Scalar scale = Scalar(1) / Scalar(preds.size());
  Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic> g(preds.rows(), preds.cols());
  for (Eigen::Index j = 0; j < preds.cols(); ++j) {
    for (Eigen::Index i = 0; i < preds.rows(); ++i) {
      const Scalar p = Scalar(preds(i, j));
      const Scalar s = Scalar(labels(i, j));
      if (p < lo || p > hi) {
        g(i, j) = 0;
      } else {
        g(i, j) = -scale * (s / p - (Scalar(1) - s) / (Scalar(1) - p));
      }
    }
  }
  return g;
}

/// Symmetric InfoNCE between pooled audio embeddings (rows of `audio`) and
/// text embeddings (rows of `text`). Similarities are cosine / tau. The
/// optional gradient outputs receive dL/daudio and dL/dtext scaled by
/// `upstream`.
template <typename DerivedA, typename DerivedT, typename Scalar = typename DerivedA::Scalar>
Scalar contrastive_loss(const Eigen::MatrixBase<DerivedA>& audio,
                        const Eigen::MatrixBase<DerivedT>& text, double tau,
                        Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic>* grad_audio = nullptr,
                        Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic>* grad_text = nullptr,
                        Scalar upstream = Scalar(1)) {
  using Mat = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic>;
  using Vec = Eigen::Matrix<Scalar, Eigen::Dynamic, 1>;
  if (audio.rows() != text.rows() || audio.cols() != text.cols()) {
    throw std::invalid_argument("contrastive_loss: shape mismatch");
  }
  if (audio.rows() < 1) throw std::invalid_argument("contrastive_loss: empty batch");
  if (!(tau > 0.0)) throw std::invalid_argument("contrastive_loss: tau must be positive");
  const Eigen::Index n = audio.rows();

  Vec audio_norm(n), text_norm(n);
  for (Eigen::Index i = 0; i < n; ++i) {
    audio_norm(i) = audio.row(i).norm();
    text_norm(i) = text.row(i).norm();
    if (!(audio_norm(i) > Scalar(0)) || !(text_norm(i) > Scalar(0))) {
      throw ValidationError("degenerate embedding");
    }
  }
  Mat a = audio;
  Mat r = text;
  for (Eigen::Index i = 0; i < n; ++i) {
    a.row(i) /= audio_norm(i);
    r.row(i) /= text_norm(i);
  }
  const Scalar inv_tau = Scalar(1.0 / tau);
  Mat sim = (a * r.transpose()) * inv_tau;

  // Row softmax (audio i against all texts) and column softmax (text k
  // against all audio clips).
  Mat row_p(n, n), col_p(n, n);
  Scalar loss = 0;
  for (Eigen::Index i = 0; i < n; ++i) {
    const Scalar mx = sim.row(i).maxCoeff();
    Scalar z = 0;
    for (Eigen::Index k = 0; k < n; ++k) {
      row_p(i, k) = std::exp(sim(i, k) - mx);
      z += row_p(i, k);
    }
    row_p.row(i) /= z;
    loss -= sim(i, i) - (mx + std::log(z));
  }
  for (Eigen::Index k = 0; k < n; ++k) {
    const Scalar mx = sim.col(k).maxCoeff();
    Scalar z = 0;
    for (Eigen::Index i = 0; i < n; ++i) {
      col_p(i, k) = std::exp(sim(i, k) - mx);
      z += col_p(i, k);
    }
    col_p.col(k) /= z;
    loss -= sim(k, k) - (mx + std::log(z));
  }
  loss /= Scalar(n);

  if (grad_audio != nullptr || grad_text != nullptr) {
    Mat dsim = row_p + col_p;
    dsim.diagonal().array() -= Scalar(2);
    dsim *= upstream / Scalar(n) * inv_tau;
    const Mat da = dsim * r;
    const Mat dr = dsim.transpose() * a;
    if (grad_audio != nullptr) {
      grad_audio->resize(n, audio.cols());
      for (Eigen::Index i = 0; i < n; ++i) {
        const Scalar proj = a.row(i).dot(da.row(i));
        grad_audio->row(i) = (da.row(i) - proj * a.row(i)) / audio_norm(i);
      }
    }
    if (grad_text != nullptr) {
      grad_text->resize(n, text.cols());
      for (Eigen::Index i = 0; i < n; ++i) {
        const Scalar proj = r.row(i).dot(dr.row(i));
        grad_text->row(i) = (dr.row(i) - proj * r.row(i)) / text_norm(i);
      }
    }
  }
  return loss;
}

/// Result of combining the two objectives with the learnable weight.
struct LossBreakdown {
  double bce = 0.0;
  double con = 0.0;
  double lambda = 1.0;
  double total = 0.0;
  double tau = 0.07;
};

inline LossBreakdown total_loss(double bce, double con, double lambda, double tau = 0.07) {
  return LossBreakdown{bce, con, lambda, bce + lambda * con, tau};
}

}  // namespace hsd

#endif  // HSDLAB_LOSSES_HPP_
