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

#include <algorithm>
#include <numeric>
#include <sstream>

#include "json.hpp"

namespace hsd {

using nlohmann::json;

namespace {

constexpr double kPi = 3.14159265358979323846;

json range_json(ValueRange r) { return json::array({r.lo, r.hi}); }

ValueRange range_from(const json& j, const char* key) {
  if (!j.is_array() || j.size() != 2) throw ValidationError(std::string("augment.") + key + " must be [lo, hi]");
  return {j[0].get<double>(), j[1].get<double>()};
}

json augment_json(const AugmentPolicy& a) {
  return {{"chunk_drop", a.chunk_drop},
          {"max_chunks", a.max_chunks},
          {"max_drop_fraction", a.max_drop_fraction},
          {"speed_perturb", a.speed_perturb},
          {"speed_factors", a.speed_factors},
          {"clip", a.clip},
          {"clip_fraction", a.clip_fraction},
          {"noise", a.noise},
          {"noise_snr_db", range_json(a.noise_snr_db)},
          {"amplify", a.amplify},
          {"gain", range_json(a.gain)},
          {"spec_augment", a.spec_augment},
          {"time_masks", a.time_masks},
          {"time_mask_width", range_json(a.time_mask_width)},
          {"freq_masks", a.freq_masks},
          {"freq_mask_width", range_json(a.freq_mask_width)}};
}

void reject_unknown(const json& j, const json& known, const std::string& where) {
  for (auto it = j.begin(); it != j.end(); ++it) {
    if (!known.contains(it.key())) throw ValidationError("unknown " + where + " key '" + it.key() + "'");
  }
}

AugmentPolicy augment_from(const json& j) {
  AugmentPolicy a;
  reject_unknown(j, augment_json(a), "augment");
  a.chunk_drop = j.value("chunk_drop", a.chunk_drop);
  a.max_chunks = j.value("max_chunks", a.max_chunks);
  a.max_drop_fraction = j.value("max_drop_fraction", a.max_drop_fraction);
  a.speed_perturb = j.value("speed_perturb", a.speed_perturb);
  a.speed_factors = j.value("speed_factors", a.speed_factors);
  a.clip = j.value("clip", a.clip);
  a.clip_fraction = j.value("clip_fraction", a.clip_fraction);
  a.noise = j.value("noise", a.noise);
  if (j.contains("noise_snr_db")) a.noise_snr_db = range_from(j["noise_snr_db"], "noise_snr_db");
  a.amplify = j.value("amplify", a.amplify);
  if (j.contains("gain")) a.gain = range_from(j["gain"], "gain");
  a.spec_augment = j.value("spec_augment", a.spec_augment);
  a.time_masks = j.value("time_masks", a.time_masks);
  if (j.contains("time_mask_width")) a.time_mask_width = range_from(j["time_mask_width"], "time_mask_width");
  a.freq_masks = j.value("freq_masks", a.freq_masks);
  if (j.contains("freq_mask_width")) a.freq_mask_width = range_from(j["freq_mask_width"], "freq_mask_width");
  a.validate();
  return a;
}

json train_json(const TrainConfig& c) {
  return {{"lr", c.lr},
          {"weight_decay", c.weight_decay},
          {"epochs", c.epochs},
          {"warmup_epochs", c.warmup_epochs},
          {"batch_size", c.batch_size},
          {"grad_accumulation", c.grad_accumulation},
          {"seed", c.seed},
          {"augment", augment_json(c.augment)},
          {"queries", std::string(query_text_name(c.queries))},
          {"contrastive", c.contrastive}};
}

double grad_norm(const ad::ParameterSet<float>& params) {
  double s = 0.0;
  for (const auto& p : params) s += p.grad.template cast<double>().squaredNorm();
  return std::sqrt(s);
}

std::string grad_report(const ad::ParameterSet<float>& params) {
  std::ostringstream out;
  out << "grad norm " << grad_norm(params) << "; largest groups:";
  std::vector<std::pair<double, std::string>> groups;
  for (const auto& p : params) groups.emplace_back(p.grad.template cast<double>().norm(), p.name);
  std::sort(groups.begin(), groups.end(), [](const auto& a, const auto& b) {
    // NaN sorts first so it is always reported.
    if (std::isnan(a.first) != std::isnan(b.first)) return std::isnan(a.first);
    return a.first > b.first;
  });
  for (std::size_t i = 0; i < std::min<std::size_t>(3, groups.size()); ++i) {
    out << " " << groups[i].second << "=" << groups[i].first;
  }
  return out.str();
}

}  // namespace

double lr_at(std::uint64_t step, std::uint64_t total_steps, std::uint64_t warmup_steps, double base_lr) {
  if (total_steps == 0) return 0.0;
  step = std::min(step, total_steps);
  if (step < warmup_steps) return base_lr * static_cast<double>(step) / static_cast<double>(warmup_steps);
  if (total_steps == warmup_steps) return base_lr;
  const double progress =
      static_cast<double>(step - warmup_steps) / static_cast<double>(total_steps - warmup_steps);
  return std::max(0.0, base_lr * 0.5 * (1.0 + std::cos(kPi * progress)));
}

void TrainConfig::validate() const {
  auto fail = [](const std::string& msg) { throw ValidationError("train config: " + msg); };
  if (!(lr > 0.0) || !std::isfinite(lr)) fail("lr must be positive");
  if (weight_decay < 0.0 || !std::isfinite(weight_decay)) fail("weight_decay must be non-negative");
  if (epochs < 0) fail("epochs must be non-negative");
  if (warmup_epochs < 0) fail("warmup_epochs must be non-negative");
  if (epochs > 0 && warmup_epochs >= epochs) fail("warmup_epochs must be smaller than epochs");
  if (epochs == 0 && warmup_epochs != 0) fail("warmup_epochs must be 0 when epochs is 0");
  if (batch_size < 1) fail("batch_size must be positive");
  if (grad_accumulation < 1) fail("grad_accumulation must be positive");
  augment.validate();
}

std::string train_config_to_json(const TrainConfig& config) { return train_json(config).dump(2); }

TrainConfig train_config_from_json(const std::string& text) {
  try {
    const json j = json::parse(text);
    if (!j.is_object()) throw ValidationError("train config must be a JSON object");
    TrainConfig c;
    reject_unknown(j, train_json(c), "train config");
    c.lr = j.value("lr", c.lr);
    c.weight_decay = j.value("weight_decay", c.weight_decay);
    c.epochs = j.value("epochs", c.epochs);
    c.warmup_epochs = j.value("warmup_epochs", c.warmup_epochs);
    c.batch_size = j.value("batch_size", c.batch_size);
    c.grad_accumulation = j.value("grad_accumulation", c.grad_accumulation);
    c.seed = j.value("seed", c.seed);
    if (j.contains("augment")) c.augment = augment_from(j["augment"]);
    if (j.contains("queries")) c.queries = parse_query_text(j["queries"].get<std::string>());
    c.contrastive = j.value("contrastive", c.contrastive);
    c.validate();
    return c;
  } catch (const json::exception& e) {
    throw ValidationError(std::string("train config: ") + e.what());
  }
}

std::string_view query_text_name(QueryText mode) {
  switch (mode) {
    case QueryText::kDefinition:
      return "definition";
    case QueryText::kEntityName:
      return "entity_name";
    case QueryText::kSampledDescription:
      return "sampled_description";
  }
  return "unknown";
}

QueryText parse_query_text(std::string_view name) {
  for (QueryText q : {QueryText::kDefinition, QueryText::kEntityName, QueryText::kSampledDescription}) {
    if (query_text_name(q) == name) return q;
  }
  throw ValidationError("train config: queries must be 'definition', 'entity_name' or 'sampled_description', got '" +
                        std::string(name) + "'");
}

std::vector<std::string> class_query_texts(const AbnormalityCatalog& catalog, QueryText mode, std::uint64_t seed) {
  std::vector<std::string> out;
  Rng rng(seed);
  for (const auto& e : catalog.entities) {
    switch (mode) {
      case QueryText::kDefinition:
        out.push_back(e.definition_text);
        break;
      case QueryText::kEntityName:
        out.push_back(e.canonical_name);
        break;
      case QueryText::kSampledDescription: {
        const std::size_t pick = rng.index(e.description_bank.size() + 1);
        out.push_back(pick == 0 ? e.definition_text : e.description_bank[pick - 1]);
        break;
      }
    }
  }
  return out;
}

TrainResult train(const TrainData& data, const AbnormalityCatalog& catalog, Model<float> model,
                  const TrainConfig& config, TrainState state, const EpochCallback& on_epoch) {
  config.validate();
  const std::size_t n = data.samples.size();
  const std::size_t k = catalog.size();
  if (n == 0) throw ValidationError("training split is empty");
  if (k == 0) throw ValidationError("catalog is empty");
  for (const auto& s : data.samples) {
    if (s.labels.size() != k) throw ValidationError("sample '" + s.id + "' has the wrong number of labels");
  }
  if (config.augment.any_waveform_op() && !data.loader) {
    throw ValidationError("waveform augmentation needs a waveform loader");
  }

  const auto micro = static_cast<std::size_t>(config.batch_size);
  const std::size_t micro_per_epoch = (n + micro - 1) / micro;
  const auto accum = static_cast<std::size_t>(config.grad_accumulation);
  const std::uint64_t steps_per_epoch = (micro_per_epoch + accum - 1) / accum;
  const std::uint64_t total_steps = steps_per_epoch * static_cast<std::uint64_t>(config.epochs);
  const std::uint64_t warmup_steps = steps_per_epoch * static_cast<std::uint64_t>(config.warmup_epochs);

  auto frozen = [&](const ad::Parameter<float>& p) { return !config.contrastive && p.name == "lambda"; };

  TrainResult result{std::move(model), {}, std::move(state)};
  Model<float>& m = result.model;
  TrainState& st = result.state;
  for (int epoch = st.epochs_completed; epoch < config.epochs; ++epoch) {
    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), 0);
    Rng shuffle_rng(mix_seed(config.seed, 0xe0c0000ULL + static_cast<std::uint64_t>(epoch)));
    shuffle_rng.shuffle(order.begin(), order.end());

    double sum_bce = 0.0, sum_con = 0.0, sum_total = 0.0;
    double lr = 0.0;
    std::size_t pending = 0;
    m.params().zero_grad();
    for (std::size_t b = 0; b < micro_per_epoch; ++b) {
      const std::size_t begin = b * micro;
      const std::size_t end = std::min(n, begin + micro);
      std::vector<FeatureMatrix> augmented;
      augmented.reserve(end - begin);
      BatchInputs<float> in;
      in.labels.resize(static_cast<Eigen::Index>(end - begin), static_cast<Eigen::Index>(k));
      in.class_texts = class_query_texts(
          catalog, config.queries,
          mix_seed(config.seed, 0x9e77000000ULL + static_cast<std::uint64_t>(epoch) * micro_per_epoch + b));
      in.contrastive = config.contrastive;
      for (std::size_t i = begin; i < end; ++i) {
        const TrainSample& s = data.samples[order[i]];
        const auto row = static_cast<Eigen::Index>(i - begin);
        for (std::size_t j = 0; j < k; ++j) in.labels(row, static_cast<Eigen::Index>(j)) = s.labels[j];
        in.descriptions.push_back(s.description);
        if (config.augment.any_op()) {
          const AugmentPolicy policy = config.augment.with_seed(
              mix_seed(config.seed, mix_seed(static_cast<std::uint64_t>(epoch), order[i])));
          FilterBankFeatures fb;
          if (config.augment.any_waveform_op()) {
            fb = compute_filterbanks(augment(data.loader(s.id), policy), m.config().num_mel_bins);
          } else {
            fb.frames = s.frames;
            fb.num_mel_bins = static_cast<int>(s.frames.cols());
          }
          augmented.push_back(augment_spec(fb, policy).frames);
        }
      }
      for (std::size_t i = begin; i < end; ++i) {
        in.frames.push_back(config.augment.any_op() ? &augmented[i - begin] : &data.samples[order[i]].frames);
      }

      LossBreakdown parts;
      {
        ad::Tape<float> tape;
        const ad::Var loss = batch_loss(tape, m, in, &parts);
        if (!std::isfinite(parts.total)) {
          throw RuntimeAbort("non-finite loss at step " + std::to_string(st.step) + " (epoch " +
                             std::to_string(epoch + 1) + "): bce " + std::to_string(parts.bce) + ", con " +
                             std::to_string(parts.con) + ", lambda " + std::to_string(m.lambda()) + "; " +
                             grad_report(m.params()));
        }
        // Each micro-batch loss is a mean, so scale to average over the step.
        const std::size_t micro_in_step = std::min(accum, micro_per_epoch - (b / accum) * accum);
        const ad::Var scaled = ad::scale(tape, loss, 1.0f / static_cast<float>(micro_in_step));
        tape.backward(scaled);
      }
      const auto count = static_cast<double>(end - begin);
      sum_bce += parts.bce * count;
      sum_con += parts.con * count;
      sum_total += parts.total * count;
      ++pending;

      if (pending == accum || b + 1 == micro_per_epoch) {
        const double gn = grad_norm(m.params());
        if (!std::isfinite(gn)) {
          throw RuntimeAbort("non-finite gradient at step " + std::to_string(st.step) + " (epoch " +
                             std::to_string(epoch + 1) + "), lambda " + std::to_string(m.lambda()) + "; " +
                             grad_report(m.params()));
        }
        lr = lr_at(st.step + 1, total_steps, warmup_steps, config.lr);
        st.optimizer.step(m.params(), lr, config.weight_decay, frozen);
        m.params().zero_grad();
        ++st.step;
        pending = 0;
      }
    }
    EpochLog log;
    log.epoch = epoch + 1;
    log.bce = sum_bce / static_cast<double>(n);
    if (config.contrastive) log.con = sum_con / static_cast<double>(n);
    log.lambda = static_cast<double>(m.lambda());
    log.total = sum_total / static_cast<double>(n);
    log.lr = lr;
    if (!std::isfinite(log.lambda)) {
      throw RuntimeAbort("lambda became non-finite in epoch " + std::to_string(log.epoch));
    }
    st.epochs_completed = epoch + 1;
    result.log.push_back(log);
    if (on_epoch) on_epoch(log, m, st);
  }
  return result;
}

void InferConfig::validate() const {
  if (n_descriptions < 0) throw ValidationError("infer config: n_descriptions must be non-negative");
  if (!(threshold > 0.0 && threshold < 1.0)) throw ValidationError("infer config: threshold must be in (0, 1)");
}

std::vector<std::vector<std::string>> inference_queries(const AbnormalityCatalog& catalog,
                                                        const InferConfig& config) {
  config.validate();
  std::vector<std::vector<std::string>> out;
  const auto n = static_cast<std::size_t>(config.n_descriptions);
  for (const auto& e : catalog.entities) {
    std::vector<std::string> q;
    if (n == 0) {
      q.push_back(e.canonical_name);
    } else {
      const std::size_t from_bank = config.definition_first ? n - 1 : n;
      if (e.description_bank.size() < from_bank) {
        throw ValidationError("class '" + e.canonical_name + "' has " + std::to_string(e.description_bank.size()) +
                              " descriptions, " + std::to_string(from_bank) + " requested");
      }
      if (config.definition_first) q.push_back(e.definition_text);
      q.insert(q.end(), e.description_bank.begin(), e.description_bank.begin() + static_cast<std::ptrdiff_t>(from_bank));
    }
    out.push_back(std::move(q));
  }
  return out;
}

Predictor::Predictor(const Model<float>& model, const AbnormalityCatalog& catalog, const InferConfig& config)
    : Predictor(model, inference_queries(catalog, config)) {}

Predictor::Predictor(const Model<float>& model, std::vector<std::vector<std::string>> queries)
    : model_(&model), queries_(std::move(queries)) {
  std::vector<std::string> flat;
  for (const auto& q : queries_) {
    if (q.empty()) throw ValidationError("every class needs at least one query");
    flat.insert(flat.end(), q.begin(), q.end());
  }
  embeddings_ = model.embed_texts(flat);
}

std::vector<std::vector<double>> Predictor::query_probabilities(const FeatureMatrix& frames) const {
  const Eigen::VectorXf logits = model_->logits(frames, embeddings_);
  std::vector<std::vector<double>> out;
  Eigen::Index row = 0;
  for (const auto& q : queries_) {
    std::vector<double> probs;
    for (std::size_t i = 0; i < q.size(); ++i) probs.push_back(sigmoid(static_cast<double>(logits(row++))));
    out.push_back(std::move(probs));
  }
  return out;
}

Eigen::VectorXd Predictor::predict(const FeatureMatrix& frames) const {
  const auto probs = query_probabilities(frames);
  Eigen::VectorXd out(static_cast<Eigen::Index>(probs.size()));
  for (std::size_t j = 0; j < probs.size(); ++j) {
    double sum = 0.0;
    for (double p : probs[j]) sum += p;
    out(static_cast<Eigen::Index>(j)) = sum / static_cast<double>(probs[j].size());
  }
  return out;
}

LabelVector decide(const Eigen::VectorXd& preds, double threshold) {
  LabelVector out(static_cast<std::size_t>(preds.size()));
  for (Eigen::Index j = 0; j < preds.size(); ++j) out[static_cast<std::size_t>(j)] = preds(j) >= threshold ? 1 : 0;
  return out;
}

}  // namespace hsd
