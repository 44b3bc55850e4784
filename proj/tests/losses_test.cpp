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

#include "hsdlab/losses.hpp"

#include <gtest/gtest.h>

#include <cmath>
#include <vector>

#include "hsdlab/common.hpp"
#include "support/oracles.hpp"

namespace hsd {
namespace {

using Mat = Eigen::MatrixXd;

Mat random_matrix(Eigen::Index r, Eigen::Index c, Rng& rng) {
  Mat m(r, c);
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = rng.normal();
  return m;
}

TEST(BceLoss, MidpointIsLn2) {
  EXPECT_NEAR(bce_loss(Mat::Constant(1, 1, 0.5), Mat::Ones(1, 1)), std::log(2.0), 1e-12);
}

TEST(BceLoss, PerfectPredictionIsNearZero) {
  Rng rng(1);
  Mat s(4, 12);
  for (Eigen::Index i = 0; i < s.size(); ++i) s.data()[i] = rng.bernoulli(0.5) ? 1 : 0;
  EXPECT_LE(bce_loss(s, s), 1e-6);
  EXPECT_GE(bce_loss(s, s), 0.0);
}

TEST(BceLoss, MatchesScalarLoop) {
  Rng rng(2);
  for (int trial = 0; trial < 50; ++trial) {
    std::vector<std::vector<double>> p(4, std::vector<double>(12));
    std::vector<std::vector<int>> s(4, std::vector<int>(12));
    Mat pm(4, 12), sm(4, 12);
    for (int i = 0; i < 4; ++i) {
      for (int j = 0; j < 12; ++j) {
        // Include exact 0 and 1 so the clamp is exercised.
        const double u = rng.uniform();
        p[i][j] = u < 0.05 ? 0.0 : (u > 0.95 ? 1.0 : rng.uniform());
        s[i][j] = rng.bernoulli(0.4) ? 1 : 0;
        pm(i, j) = p[i][j];
        sm(i, j) = s[i][j];
      }
    }
    EXPECT_NEAR(bce_loss(pm, sm), oracle::bce(p, s), 1e-9);
  }
}

TEST(BceLoss, ShapeMismatchThrows) {
  EXPECT_THROW(bce_loss(Mat::Constant(2, 3, 0.5), Mat::Ones(3, 2)), std::invalid_argument);
}

TEST(BceLoss, MovingTowardLabelStrictlyDecreases) {
  Rng rng(3);
  for (int trial = 0; trial < 200; ++trial) {
    Mat p(3, 5), s(3, 5);
    for (Eigen::Index i = 0; i < p.size(); ++i) {
      p.data()[i] = rng.uniform(0.01, 0.99);
      s.data()[i] = rng.bernoulli(0.5) ? 1 : 0;
    }
    const auto k = static_cast<Eigen::Index>(rng.index(15));
    const double before = bce_loss(p, s);
    p.data()[k] += 0.5 * (s.data()[k] - p.data()[k]);
    EXPECT_LT(bce_loss(p, s), before);
  }
}

TEST(BceLoss, GradientMatchesFiniteDifferences) {
  Rng rng(4);
  Mat p(4, 6), s(4, 6);
  for (Eigen::Index i = 0; i < p.size(); ++i) {
    p.data()[i] = rng.uniform(0.05, 0.95);
    s.data()[i] = rng.bernoulli(0.5) ? 1 : 0;
  }
  const Mat g = bce_loss_grad(p, s);
  for (Eigen::Index i = 0; i < p.size(); ++i) {
    Mat up = p, down = p;
    up.data()[i] += 1e-6;
    down.data()[i] -= 1e-6;
    EXPECT_NEAR(g.data()[i], (bce_loss(up, s) - bce_loss(down, s)) / 2e-6, 1e-6);
  }
}

TEST(ContrastiveLoss, SingletonBatchIsZero) {
  Rng rng(5);
  EXPECT_NEAR(contrastive_loss(random_matrix(1, 8, rng), random_matrix(1, 8, rng), 0.07), 0.0, 1e-12);
}

TEST(ContrastiveLoss, IdenticalEmbeddingsGiveTwoLnN) {
  Rng rng(6);
  const Mat row = random_matrix(1, 8, rng);
  const Mat a = row.replicate(4, 1);
  EXPECT_NEAR(contrastive_loss(a, a, 0.07), 2 * std::log(4.0), 1e-12);
}

TEST(ContrastiveLoss, MatchesScalarLoop) {
  Rng rng(7);
  for (int trial = 0; trial < 20; ++trial) {
    const Mat a = random_matrix(8, 16, rng);
    const Mat t = random_matrix(8, 16, rng);
    EXPECT_NEAR(contrastive_loss(a, t, 0.5), oracle::infonce(a, t, 0.5), 1e-9);
    EXPECT_NEAR(contrastive_loss(a, t, 0.07), oracle::infonce(a, t, 0.07), 1e-9);
  }
}

TEST(ContrastiveLoss, InvariantToPositiveRescaling) {
  Rng rng(8);
  for (int trial = 0; trial < 20; ++trial) {
    Mat a = random_matrix(6, 10, rng);
    Mat t = random_matrix(6, 10, rng);
    const double base = contrastive_loss(a, t, 0.07);
    a.row(static_cast<Eigen::Index>(rng.index(6))) *= rng.uniform(0.01, 100.0);
    t.row(static_cast<Eigen::Index>(rng.index(6))) *= rng.uniform(0.01, 100.0);
    EXPECT_NEAR(contrastive_loss(a, t, 0.07), base, 1e-6);
  }
}

TEST(ContrastiveLoss, RaisingAMatchedSimilarityToTheBatchMaxLowersTheLoss) {
  // One-hot audio rows make sim(k, i) = text_i[k] / tau for unit text rows, so
  // a single similarity can be changed while every other entry stays fixed;
  // the spare last coordinate keeps each text row at unit norm.
  constexpr Eigen::Index kN = 5;
  Rng rng(9);
  int checked = 0;
  for (int trial = 0; trial < 200; ++trial) {
    Mat audio = Mat::Zero(kN, kN + 1);
    for (Eigen::Index k = 0; k < kN; ++k) audio(k, k) = 1.0;
    Mat text(kN, kN + 1);
    for (Eigen::Index i = 0; i < kN; ++i) {
      for (Eigen::Index k = 0; k < kN; ++k) text(i, k) = rng.uniform(-0.4, 0.4);
      text(i, kN) = std::sqrt(1.0 - text.row(i).head(kN).squaredNorm());
    }
    const auto i = static_cast<Eigen::Index>(rng.index(kN));
    const double batch_max = text.leftCols(kN).maxCoeff();
    if (text(i, i) == batch_max) continue;
    const double before = contrastive_loss(audio, text, 0.1);
    text(i, i) = batch_max;
    text(i, kN) = std::sqrt(1.0 - text.row(i).head(kN).squaredNorm());
    EXPECT_LT(contrastive_loss(audio, text, 0.1), before);
    ++checked;
  }
  EXPECT_GT(checked, 150);
}

TEST(ContrastiveLoss, ZeroNormIsDegenerate) {
  Rng rng(10);
  Mat a = random_matrix(3, 4, rng);
  a.row(1).setZero();
  try {
    contrastive_loss(a, random_matrix(3, 4, rng), 0.07);
    FAIL() << "expected ValidationError";
  } catch (const ValidationError& e) {
    EXPECT_NE(std::string(e.what()).find("degenerate embedding"), std::string::npos);
  }
  EXPECT_THROW(contrastive_loss(random_matrix(3, 4, rng), random_matrix(3, 4, rng), 0.0), std::invalid_argument);
}

TEST(ContrastiveLoss, GradientMatchesFiniteDifferences) {
  Rng rng(11);
  const Mat a = random_matrix(5, 7, rng);
  const Mat t = random_matrix(5, 7, rng);
  Mat ga, gt;
  contrastive_loss(a, t, 0.3, &ga, &gt, 1.0);
  for (Eigen::Index i = 0; i < a.size(); ++i) {
    Mat up = a, down = a;
    up.data()[i] += 1e-6;
    down.data()[i] -= 1e-6;
    EXPECT_NEAR(ga.data()[i], (contrastive_loss(up, t, 0.3) - contrastive_loss(down, t, 0.3)) / 2e-6, 1e-6);
    up = t;
    down = t;
    up.data()[i] += 1e-6;
    down.data()[i] -= 1e-6;
    EXPECT_NEAR(gt.data()[i], (contrastive_loss(a, up, 0.3) - contrastive_loss(a, down, 0.3)) / 2e-6, 1e-6);
  }
}

TEST(TotalLoss, Arithmetic) {
  const LossBreakdown b = total_loss(0.7, 0.3, 1.0);
  EXPECT_NEAR(b.total, 1.0, 1e-15);
  EXPECT_EQ(total_loss(0.7, 0.3, 0.0).total, 0.7);
  const double con = 0.4321;
  const double h = 1e-5;
  const double fd = (total_loss(0.7, con, 0.9 + h).total - total_loss(0.7, con, 0.9 - h).total) / (2 * h);
  EXPECT_LT(std::abs(fd - con) / con, 1e-6);
}

}  // namespace
}  // namespace hsd
