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

#include "hsdlab/pipeline.hpp"

#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <limits>

#include "hsdlab/catalog.hpp"
#include "hsdlab/synthgen.hpp"

namespace hsd {
namespace {

const AbnormalityCatalog& catalog() {
  static const AbnormalityCatalog c = default_catalog();
  return c;
}

const Vocabulary& vocab() {
  static const Vocabulary v = vocabulary_for(catalog());
  return v;
}

ModelConfig small_config() {
  ModelConfig c;
  c.d = 32;
  c.text_layers = 1;
  c.decoder_layers = 1;
  c.audio_channels = {4, 4, 4, 4};
  return c;
}

// 32 synthetic recordings with labels and cached filter banks.
const TrainData& synthetic_data() {
  static const TrainData data = [] {
    TrainData d;
    const SynthSpec spec = default_synth_spec(32, 5);
    for (std::size_t i = 0; i < 32; ++i) {
      const LabelVector labels = gen_labels(spec, i);
      const HeartSoundRecord rec = gen_sample(labels, spec, sample_seed(spec, i));
      d.samples.push_back(
          {sample_id(i), labels, semantic_description(labels, catalog()), compute_filterbanks(rec, 64).frames});
    }
    d.loader = [spec](const std::string& id) {
      const auto i = static_cast<std::size_t>(std::stoul(id.substr(1)));
      return gen_sample(gen_labels(spec, i), spec, sample_seed(spec, i));
    };
    return d;
  }();
  return data;
}

TrainConfig smoke_config() {
  TrainConfig c;
  c.lr = 1e-3;
  c.epochs = 2;
  c.warmup_epochs = 0;
  c.batch_size = 8;
  c.seed = 3;
  return c;
}

bool same_params(const Model<float>& a, const Model<float>& b) {
  for (const auto& p : a.params()) {
    if (p.value != b.params()[b.params().index_of(p.name)].value) return false;
  }
  return true;
}

TEST(LrSchedule, Endpoints) {
  EXPECT_EQ(lr_at(0, 1000, 200, 5e-5), 0.0);
  EXPECT_DOUBLE_EQ(lr_at(200, 1000, 200, 5e-5), 5e-5);
  EXPECT_LE(lr_at(1000, 1000, 200, 5e-5), 1e-12 * 5e-5);
  EXPECT_DOUBLE_EQ(lr_at(100, 1000, 200, 5e-5), 2.5e-5);
  EXPECT_NEAR(lr_at(600, 1000, 200, 1.0), 0.5, 1e-12);
}

TEST(LrSchedule, ContinuousAndNonNegative) {
  for (std::uint64_t warm : {0u, 1u, 7u, 50u}) {
    const std::uint64_t total = 200;
    double prev = lr_at(0, total, warm, 1.0);
    for (std::uint64_t s = 0; s <= total; ++s) {
      const double lr = lr_at(s, total, warm, 1.0);
      EXPECT_GE(lr, 0.0);
      EXPECT_LE(lr, 1.0);
      // Neighbouring steps never jump by more than one warmup increment.
      if (s > 0) {
        EXPECT_LE(std::abs(lr - prev), warm > 0 ? 1.0 / static_cast<double>(warm) + 1e-12 : 0.05);
      }
      prev = lr;
    }
    if (warm > 0) {
      EXPECT_NEAR(lr_at(warm - 1, total, warm, 1.0), 1.0 - 1.0 / static_cast<double>(warm), 1e-12);
      EXPECT_NEAR(lr_at(warm + 1, total, warm, 1.0), 1.0, 1e-3);
    }
  }
}

TEST(AdamW, DecayIsDecoupledFromTheGradient) {
  ad::ParameterSet<double> ps;
  ps.add("w", Eigen::MatrixXd::Constant(2, 3, 2.0), true);
  ps.add("b", Eigen::MatrixXd::Constant(1, 3, 2.0), false);
  AdamW<double> opt;
  // Zero gradient: the Adam term vanishes and only the decay acts.
  opt.step(ps, 0.1, 0.02);
  EXPECT_EQ(ps[0].value, Eigen::MatrixXd::Constant(2, 3, 2.0 * (1.0 - 0.1 * 0.02)));
  EXPECT_EQ(ps[1].value, Eigen::MatrixXd::Constant(1, 3, 2.0));
}

TEST(AdamW, MatchesScalarReference) {
  ad::ParameterSet<double> ps;
  ps.add("w", Eigen::MatrixXd::Constant(1, 1, 0.5), true);
  AdamW<double> opt;
  double theta = 0.5, m = 0, v = 0;
  const double grads[] = {0.3, -0.1, 0.7};
  for (int t = 1; t <= 3; ++t) {
    const double g = grads[t - 1];
    ps[0].grad(0, 0) = g;
    opt.step(ps, 0.01, 0.1);
    m = 0.9 * m + 0.1 * g;
    v = 0.999 * v + 0.001 * g * g;
    theta *= 1.0 - 0.01 * 0.1;
    theta -= 0.01 * (m / (1 - std::pow(0.9, t))) / (std::sqrt(v / (1 - std::pow(0.999, t))) + 1e-8);
    EXPECT_NEAR(ps[0].value(0, 0), theta, 1e-15);
  }
}

TEST(AdamW, FrozenParametersStayPut) {
  ad::ParameterSet<double> ps;
  ps.add("lambda", Eigen::MatrixXd::Constant(1, 1, 1.0), false);
  ps[0].grad(0, 0) = 5.0;
  AdamW<double> opt;
  opt.step(ps, 0.1, 0.0, [](const ad::Parameter<double>& p) { return p.name == "lambda"; });
  EXPECT_EQ(ps[0].value(0, 0), 1.0);
}

TEST(Decide, InclusiveThreshold) {
  Eigen::VectorXd p(3);
  p << 0.5, 0.49, 0.51;
  EXPECT_EQ(decide(p, 0.5), (LabelVector{1, 0, 1}));
  EXPECT_EQ(decide(Eigen::VectorXd::Constant(12, 0.49), 0.5), LabelVector(12, 0));
}

TEST(Decide, RaisingTheThresholdNeverAddsPositives) {
  Rng rng(1);
  for (int trial = 0; trial < 100; ++trial) {
    Eigen::VectorXd p(12);
    for (Eigen::Index j = 0; j < 12; ++j) p(j) = rng.uniform();
    const double lo = rng.uniform(0.01, 0.98);
    const double hi = rng.uniform(lo, 0.99);
    const LabelVector a = decide(p, lo);
    const LabelVector b = decide(p, hi);
    for (std::size_t j = 0; j < 12; ++j) EXPECT_LE(b[j], a[j]);
  }
}

TEST(InferenceQueries, SelectionRules) {
  InferConfig c;
  c.n_descriptions = 0;
  auto q = inference_queries(catalog(), c);
  ASSERT_EQ(q.size(), 12u);
  EXPECT_EQ(q[1], std::vector<std::string>{"VSD"});

  c.n_descriptions = 3;
  q = inference_queries(catalog(), c);
  for (std::size_t j = 0; j < 12; ++j) {
    ASSERT_EQ(q[j].size(), 3u);
    for (std::size_t i = 0; i < 3; ++i) EXPECT_EQ(q[j][i], catalog().entities[j].description_bank[i]);
  }

  c.definition_first = true;
  c.n_descriptions = 1;
  q = inference_queries(catalog(), c);
  EXPECT_EQ(q[4], std::vector<std::string>{catalog().entities[4].definition_text});

  AbnormalityCatalog small = catalog();
  small.entities[7].description_bank.resize(5);
  c.definition_first = false;
  c.n_descriptions = 6;
  try {
    inference_queries(small, c);
    FAIL() << "expected ValidationError";
  } catch (const ValidationError& e) {
    EXPECT_NE(std::string(e.what()).find(small.entities[7].canonical_name), std::string::npos) << e.what();
  }
  c.threshold = 1.0;
  EXPECT_THROW(inference_queries(catalog(), c), ValidationError);
}

TEST(Predictor, AveragesIndependentQueries) {
  Model<float> m(small_config(), vocab(), 2);
  const FeatureMatrix& f = synthetic_data().samples[0].frames;

  InferConfig ten;
  ten.n_descriptions = 10;
  const Eigen::VectorXd p10 = Predictor(m, catalog(), ten).predict(f);
  Eigen::VectorXd mean = Eigen::VectorXd::Zero(12);
  for (std::size_t i = 0; i < 10; ++i) {
    std::vector<std::vector<std::string>> single;
    for (const auto& e : catalog().entities) single.push_back({e.description_bank[i]});
    mean += Predictor(m, std::move(single)).predict(f);
  }
  mean /= 10.0;
  EXPECT_LT((p10 - mean).cwiseAbs().maxCoeff(), 1e-9);

  // Identical descriptions reproduce the single-description value up to the
  // rounding of the mean.
  std::vector<std::vector<std::string>> one, many;
  for (const auto& e : catalog().entities) {
    one.push_back({e.description_bank[0]});
    many.push_back(std::vector<std::string>(7, e.description_bank[0]));
  }
  EXPECT_LT((Predictor(m, one).predict(f) - Predictor(m, many).predict(f)).cwiseAbs().maxCoeff(), 1e-15);

  // The class score is the arithmetic mean of its query probabilities.
  const Predictor p(m, catalog(), ten);
  const auto probs = p.query_probabilities(f);
  const Eigen::VectorXd pred = p.predict(f);
  for (std::size_t j = 0; j < 12; ++j) {
    double s = 0;
    for (double x : probs[j]) s += x;
    EXPECT_NEAR(pred(static_cast<Eigen::Index>(j)), s / 10.0, 1e-15);
  }
}

TEST(ClassQueries, ModesAndSampling) {
  const auto defs = class_query_texts(catalog(), QueryText::kDefinition);
  const auto names = class_query_texts(catalog(), QueryText::kEntityName);
  for (std::size_t j = 0; j < 12; ++j) {
    EXPECT_EQ(defs[j], catalog().entities[j].definition_text);
    EXPECT_EQ(names[j], catalog().entities[j].canonical_name);
  }
  EXPECT_EQ(class_query_texts(catalog(), QueryText::kSampledDescription, 5),
            class_query_texts(catalog(), QueryText::kSampledDescription, 5));
  // Every sampled text belongs to its own class, and over many draws both the
  // definition and bank entries appear.
  std::size_t definitions = 0, bank = 0;
  for (std::uint64_t seed = 0; seed < 400; ++seed) {
    const auto q = class_query_texts(catalog(), QueryText::kSampledDescription, seed);
    ASSERT_EQ(q.size(), 12u);
    for (std::size_t j = 0; j < 12; ++j) {
      const auto& e = catalog().entities[j];
      if (q[j] == e.definition_text) {
        ++definitions;
      } else {
        EXPECT_NE(std::find(e.description_bank.begin(), e.description_bank.end(), q[j]), e.description_bank.end());
        ++bank;
      }
    }
  }
  EXPECT_GT(definitions, 20u);
  EXPECT_GT(bank, 4000u);
  EXPECT_EQ(parse_query_text("sampled_description"), QueryText::kSampledDescription);
  EXPECT_THROW(parse_query_text("paraphrase"), ValidationError);
}

TEST(TrainConfig, JsonRoundTripAndValidation) {
  TrainConfig c = smoke_config();
  c.augment = AugmentPolicy::all_defaults();
  c.queries = QueryText::kEntityName;
  c.contrastive = false;
  const TrainConfig back = train_config_from_json(train_config_to_json(c));
  EXPECT_EQ(train_config_to_json(back), train_config_to_json(c));
  EXPECT_THROW(train_config_from_json(R"({"epochs": 10, "warmup_epochs": 10})"), ValidationError);
  EXPECT_THROW(train_config_from_json(R"({"lr": 0})"), ValidationError);
  EXPECT_THROW(train_config_from_json(R"({"learning_rate": 0.1})"), ValidationError);
  EXPECT_THROW(train_config_from_json(R"({"augment": {"gain": [0.1, 3.0]}})"), ValidationError);
  EXPECT_NO_THROW(train_config_from_json(R"({"epochs": 0, "warmup_epochs": 0})"));
}

TEST(Train, ZeroEpochsReturnsTheInitialization) {
  Model<float> m(small_config(), vocab(), 4);
  TrainConfig c = smoke_config();
  c.epochs = 0;
  const TrainResult r = train(synthetic_data(), catalog(), m, c);
  EXPECT_TRUE(r.log.empty());
  EXPECT_TRUE(same_params(r.model, m));
}

TEST(Train, LossDecreasesOverASmokeRun) {
  Model<float> m(small_config(), vocab(), 5);
  const TrainResult r = train(synthetic_data(), catalog(), m, smoke_config());
  ASSERT_EQ(r.log.size(), 2u);
  EXPECT_LT(r.log[1].total, r.log[0].total);
  for (const auto& e : r.log) {
    EXPECT_TRUE(std::isfinite(e.lambda));
    ASSERT_TRUE(e.con.has_value());
    EXPECT_GE(e.bce, 0.0);
  }
  EXPECT_EQ(r.state.step, 8u);
}

TEST(Train, DeterministicUnderAFixedSeed) {
  Model<float> m(small_config(), vocab(), 6);
  const TrainResult a = train(synthetic_data(), catalog(), m, smoke_config());
  const TrainResult b = train(synthetic_data(), catalog(), m, smoke_config());
  ASSERT_EQ(a.log.size(), b.log.size());
  for (std::size_t i = 0; i < a.log.size(); ++i) {
    EXPECT_EQ(a.log[i].total, b.log[i].total);
    EXPECT_EQ(a.log[i].lambda, b.log[i].lambda);
  }
  EXPECT_TRUE(same_params(a.model, b.model));
}

TEST(Train, ResumeContinuesExactly) {
  Model<float> m(small_config(), vocab(), 7);
  const TrainResult full = train(synthetic_data(), catalog(), m, smoke_config());
  // Capture the state after epoch 1 of the same two-epoch schedule.
  std::optional<TrainResult> half;
  train(synthetic_data(), catalog(), m, smoke_config(), {},
        [&](const EpochLog& log, const Model<float>& model, const TrainState& st) {
          if (log.epoch == 1) half = TrainResult{model, {log}, st};
        });
  ASSERT_TRUE(half.has_value());
  const TrainResult resumed = train(synthetic_data(), catalog(), half->model, smoke_config(), half->state);
  ASSERT_EQ(resumed.log.size(), 1u);
  EXPECT_EQ(resumed.log[0].epoch, 2);
  EXPECT_EQ(resumed.log[0].total, full.log[1].total);
  EXPECT_TRUE(same_params(resumed.model, full.model));
}

TEST(Train, WithoutContrastiveLambdaIsUntouched) {
  Model<float> m(small_config(), vocab(), 8);
  TrainConfig c = smoke_config();
  c.contrastive = false;
  const TrainResult r = train(synthetic_data(), catalog(), m, c);
  for (const auto& e : r.log) {
    EXPECT_FALSE(e.con.has_value());
    EXPECT_EQ(e.total, e.bce);
    EXPECT_EQ(e.lambda, 1.0);
  }
}

TEST(Train, NonFiniteLossAbortsWithDiagnostics) {
  Model<float> m(small_config(), vocab(), 9);
  m.params()[m.params().index_of("head.b")].value(0, 0) = std::numeric_limits<float>::quiet_NaN();
  try {
    train(synthetic_data(), catalog(), m, smoke_config());
    FAIL() << "expected RuntimeAbort";
  } catch (const RuntimeAbort& e) {
    const std::string msg = e.what();
    EXPECT_NE(msg.find("step 0"), std::string::npos) << msg;
    EXPECT_NE(msg.find("lambda"), std::string::npos) << msg;
    EXPECT_NE(msg.find("grad norm"), std::string::npos) << msg;
  }
}

TEST(Train, WaveformAugmentationRunsThroughTheLoader) {
  Model<float> m(small_config(), vocab(), 10);
  TrainConfig c = smoke_config();
  c.epochs = 1;
  c.augment = AugmentPolicy::all_defaults();
  TrainData small;
  small.samples.assign(synthetic_data().samples.begin(), synthetic_data().samples.begin() + 8);
  small.loader = synthetic_data().loader;
  const TrainResult a = train(small, catalog(), m, c);
  const TrainResult b = train(small, catalog(), m, c);
  EXPECT_TRUE(std::isfinite(a.log[0].total));
  EXPECT_EQ(a.log[0].total, b.log[0].total);

  small.loader = nullptr;
  EXPECT_THROW(train(small, catalog(), m, c), ValidationError);
}

TEST(Train, RejectsBadInputs) {
  Model<float> m(small_config(), vocab(), 11);
  EXPECT_THROW(train(TrainData{}, catalog(), m, smoke_config()), ValidationError);
  TrainData bad;
  bad.samples.push_back(synthetic_data().samples[0]);
  bad.samples[0].labels.pop_back();
  EXPECT_THROW(train(bad, catalog(), m, smoke_config()), ValidationError);
}

}  // namespace
}  // namespace hsd
