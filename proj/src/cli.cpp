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

#include "hsdlab/cli.hpp"

#include <chrono>
#include <cstdlib>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <map>
#include <optional>
#include <set>
#include <sstream>

#include "CLI11.hpp"
#include "json.hpp"

#include "hsdlab/audiofeat.hpp"
#include "hsdlab/catalog.hpp"
#include "hsdlab/common.hpp"
#include "hsdlab/metrics.hpp"
#include "hsdlab/model.hpp"
#include "hsdlab/pipeline.hpp"
#include "hsdlab/synthgen.hpp"
#include "hsdlab/wav.hpp"

namespace hsd {

using nlohmann::json;
namespace fs = std::filesystem;

namespace {

// Config.

json default_config() {
  InferConfig infer;
  TrainConfig train;
  json train_json = json::parse(train_config_to_json(train));
  train_json.erase("seed");  // derived from the global seed
  return {{"seed", 0},
          {"synth", {{"n_samples", 200}, {"snr_db", 20.0}, {"spec", nullptr}}},
          {"corpus", {{"reports", nullptr}, {"audio_dir", nullptr}}},
          {"catalog", {{"k", 12}, {"min_count", 20}, {"negation_window", 4}}},
          {"model", json::parse(model_config_to_json(ModelConfig{}))},
          {"train", train_json},
          {"infer",
           {{"n_descriptions", infer.n_descriptions},
            {"threshold", infer.threshold},
            {"definition_first", infer.definition_first}}},
          {"eval",
           {{"roc_classes", {"VSD", "PDA", "Shunt", "Hypertrophy"}}, {"plots", true}, {"checkpoint", nullptr}}},
          {"ablate",
           {{"grid", {"full", "no_pretrained_text", "no_pretrained_audio", "no_contrastive", "entity_words"}},
            {"infer_grid", {0, 1, 10, 50}},
            {"warm_start", nullptr},
            {"pretrain_epochs", 5}}}};
}

// Overlays `patch` on `base`; every key must already exist in `base`.
void merge_into(json& base, const json& patch, const std::string& where) {
  if (!patch.is_object()) throw ValidationError("config" + where + " must be a JSON object");
  for (auto it = patch.begin(); it != patch.end(); ++it) {
    const std::string path = where + "." + it.key();
    if (!base.contains(it.key())) throw ValidationError("unknown config key '" + path.substr(1) + "'");
    json& slot = base[it.key()];
    if (slot.is_object() && !slot.empty()) {
      merge_into(slot, it.value(), path);
    } else {
      slot = it.value();
    }
  }
}

void apply_set(json& cfg, const std::string& assignment) {
  const auto eq = assignment.find('=');
  if (eq == std::string::npos || eq == 0) throw ValidationError("--set expects key=value, got '" + assignment + "'");
  const std::string key = assignment.substr(0, eq);
  const std::string raw = assignment.substr(eq + 1);
  json value;
  try {
    value = json::parse(raw);
  } catch (const json::exception&) {
    value = raw;
  }
  json* node = &cfg;
  std::size_t start = 0;
  while (true) {
    const auto dot = key.find('.', start);
    const std::string part = key.substr(start, dot == std::string::npos ? std::string::npos : dot - start);
    if (!node->is_object() || !node->contains(part)) throw ValidationError("unknown config key '" + key + "'");
    node = &(*node)[part];
    if (dot == std::string::npos) break;
    start = dot + 1;
  }
  *node = value;
}

std::string read_text(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ValidationError("cannot read '" + path + "'");
  std::ostringstream s;
  s << in.rdbuf();
  return s.str();
}

// Writes through a temporary file and a rename so readers never see a
// partial artifact.
void write_text(const fs::path& path, const std::string& text) {
  fs::create_directories(path.parent_path());
  const fs::path tmp = path.string() + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw RuntimeAbort("cannot write '" + path.string() + "'");
    out << text;
    if (!out) throw RuntimeAbort("failed writing '" + path.string() + "'");
  }
  fs::rename(tmp, path);
}

json parse_json_file(const std::string& path) {
  try {
    return json::parse(read_text(path));
  } catch (const json::exception& e) {
    throw ValidationError("'" + path + "' is not valid JSON: " + e.what());
  }
}

struct Options {
  std::string config_path;
  std::optional<std::uint64_t> seed;
  std::string out = "hsdlab_out";
  std::vector<std::string> sets;
  bool force = false;
  bool resume = false;
  std::vector<std::string> inputs;
  int stop_after = 0;
};

struct Context {
  json cfg;
  std::string hash;  // of everything that shapes the trained model
  std::uint64_t seed = 0;
  fs::path out;
  fs::path cache;
  bool force = false;
  std::ostream* log = nullptr;
  std::ostream* err = nullptr;
};

Context make_context(const Options& opt, std::ostream& out, std::ostream& err) {
  Context ctx;
  ctx.cfg = default_config();
  if (!opt.config_path.empty()) merge_into(ctx.cfg, parse_json_file(opt.config_path), "");
  for (const auto& s : opt.sets) apply_set(ctx.cfg, s);
  if (opt.seed) ctx.cfg["seed"] = *opt.seed;
  try {
    ctx.seed = ctx.cfg.at("seed").get<std::uint64_t>();
  } catch (const json::exception&) {
    throw ValidationError("seed must be a non-negative integer");
  }
  const json shaping = {{"seed", ctx.cfg["seed"]},     {"synth", ctx.cfg["synth"]}, {"corpus", ctx.cfg["corpus"]},
                        {"catalog", ctx.cfg["catalog"]}, {"model", ctx.cfg["model"]}, {"train", ctx.cfg["train"]}};
  ctx.hash = hex64(fnv1a64(shaping.dump()));
  ctx.out = opt.out;
  const char* env = std::getenv("HSDLAB_CACHE");
  ctx.cache = env != nullptr && *env != '\0' ? fs::path(env) : ctx.out / "cache";
  ctx.force = opt.force;
  ctx.log = &out;
  ctx.err = &err;
  return ctx;
}

template <typename T>
T get_or_fail(const json& j, const char* section, const char* key) {
  try {
    return j.at(section).at(key).get<T>();
  } catch (const json::exception& e) {
    throw ValidationError(std::string("config ") + section + "." + key + ": " + e.what());
  }
}

ModelConfig model_config(const Context& ctx) { return model_config_from_json(ctx.cfg["model"].dump()); }

TrainConfig train_config(const Context& ctx) {
  json t = ctx.cfg["train"];
  t["seed"] = mix_seed(ctx.seed, 2);
  return train_config_from_json(t.dump());
}

InferConfig infer_config(const Context& ctx) {
  InferConfig c;
  c.n_descriptions = get_or_fail<int>(ctx.cfg, "infer", "n_descriptions");
  c.threshold = get_or_fail<double>(ctx.cfg, "infer", "threshold");
  c.definition_first = get_or_fail<bool>(ctx.cfg, "infer", "definition_first");
  c.validate();
  return c;
}

// Corpus source: synthetic (regenerated on demand) or report/WAV files.

struct Source {
  bool synthetic = true;
  SynthSpec spec;
  std::string reports_path;
  std::string audio_dir;

  HeartSoundRecord load(const std::string& id) const {
    if (synthetic) {
      const std::size_t i = synth_index(id);
      HeartSoundRecord rec = gen_sample(gen_labels(spec, i), spec, sample_seed(spec, i));
      rec.record_id = id;
      return rec;
    }
    const fs::path stem = fs::path(audio_dir) / id;
    if (fs::exists(stem.string() + ".json")) return read_record(stem.string());
    const fs::path wav = stem.string() + ".wav";
    if (!fs::exists(wav)) throw ValidationError("no audio for report '" + id + "' (expected " + wav.string() + ")");
    const WavData w = read_wav_pcm16(wav.string());
    HeartSoundRecord rec;
    rec.record_id = id;
    rec.samples = w.samples;
    rec.sample_rate_hz = w.sample_rate_hz;
    return rec;
  }

  std::size_t synth_index(const std::string& id) const {
    if (id.size() < 2 || id[0] != 'S') throw ValidationError("'" + id + "' is not a synthetic sample id");
    const std::size_t i = std::stoul(id.substr(1));
    if (i >= spec.n_samples) throw ValidationError("sample id '" + id + "' is outside the synthetic corpus");
    return i;
  }

  std::string identity() const {
    return synthetic ? synth_spec_to_json(spec) : "files:" + fs::absolute(audio_dir).lexically_normal().string();
  }
};

Source make_source(const Context& ctx) {
  Source s;
  const json& corpus = ctx.cfg["corpus"];
  if (!corpus["reports"].is_null()) {
    s.synthetic = false;
    s.reports_path = corpus["reports"].get<std::string>();
    if (corpus["audio_dir"].is_null()) throw ValidationError("corpus.audio_dir is required with corpus.reports");
    s.audio_dir = corpus["audio_dir"].get<std::string>();
    if (!fs::exists(s.reports_path)) throw ValidationError("corpus.reports '" + s.reports_path + "' does not exist");
    if (!fs::is_directory(s.audio_dir)) throw ValidationError("corpus.audio_dir '" + s.audio_dir + "' is not a directory");
    return s;
  }
  const json& synth = ctx.cfg["synth"];
  if (!synth["spec"].is_null()) {
    s.spec = synth_spec_from_json(read_text(synth["spec"].get<std::string>()));
  } else {
    s.spec = default_synth_spec(get_or_fail<std::size_t>(ctx.cfg, "synth", "n_samples"), ctx.seed,
                                get_or_fail<double>(ctx.cfg, "synth", "snr_db"));
  }
  s.spec.validate();
  return s;
}

// Filter banks of the clean recording, cached on disk by source and id.
FeatureMatrix cached_features(const Context& ctx, const Source& src, const std::string& id, int bins) {
  const fs::path dir = ctx.cache / ("fbank_" + hex64(fnv1a64(src.identity() + "|" + std::to_string(bins))));
  const fs::path file = dir / (id + ".fbk");
  if (fs::exists(file)) return read_feature_cache(file.string());
  const FeatureMatrix f = compute_filterbanks(src.load(id), bins).frames;
  fs::create_directories(dir);
  const fs::path tmp = file.string() + ".tmp";
  write_feature_cache(tmp.string(), f);
  fs::rename(tmp, file);
  return f;
}

// Prepared workspace.

struct Prepared {
  AbnormalityCatalog catalog;
  std::vector<LabelRow> labels;
  std::vector<std::string> train_ids;
  std::vector<std::string> test_ids;
  std::map<std::string, std::size_t> row_of;
};

Prepared load_prepared(const Context& ctx) {
  const fs::path dir = ctx.out / "prepared";
  if (!fs::exists(dir / "catalog.json")) {
    throw ValidationError("missing catalog '" + (dir / "catalog.json").string() + "'; run prepare first");
  }
  Prepared p;
  p.catalog = read_catalog_json((dir / "catalog.json").string());
  p.labels = read_labels_jsonl((dir / "labels.jsonl").string(), p.catalog.size());
  const json split = parse_json_file((dir / "split.json").string());
  p.train_ids = split.at("train").get<std::vector<std::string>>();
  p.test_ids = split.at("test").get<std::vector<std::string>>();
  for (std::size_t i = 0; i < p.labels.size(); ++i) p.row_of[p.labels[i].report_id] = i;
  for (const auto* ids : {&p.train_ids, &p.test_ids}) {
    for (const auto& id : *ids) {
      if (p.row_of.count(id) == 0) throw ValidationError("split lists '" + id + "' which has no labels");
    }
  }
  const std::string hash = split.value("config_hash", std::string());
  if (hash != ctx.hash) {
    *ctx.err << "warning: prepared data has config hash " << hash << ", current config is " << ctx.hash << "\n";
  }
  return p;
}

std::string prevalence_table(const AbnormalityCatalog& catalog, const std::vector<LabelVector>& train,
                             const std::vector<LabelVector>& test) {
  std::ostringstream out;
  out << std::left << std::setw(14) << "class" << std::right << std::setw(8) << "train" << std::setw(9) << "%"
      << std::setw(8) << "test" << std::setw(9) << "%" << "\n";
  auto count = [](const std::vector<LabelVector>& rows, std::size_t j) {
    std::size_t c = 0;
    for (const auto& r : rows) c += r[j];
    return c;
  };
  out << std::fixed << std::setprecision(2);
  for (std::size_t j = 0; j < catalog.size(); ++j) {
    const std::size_t a = count(train, j), b = count(test, j);
    out << std::left << std::setw(14) << catalog.entities[j].canonical_name << std::right << std::setw(8) << a
        << std::setw(9) << (train.empty() ? 0.0 : 100.0 * static_cast<double>(a) / static_cast<double>(train.size()))
        << std::setw(8) << b << std::setw(9)
        << (test.empty() ? 0.0 : 100.0 * static_cast<double>(b) / static_cast<double>(test.size())) << "\n";
  }
  out << "n_train=" << train.size() << " n_test=" << test.size() << "\n";
  return out.str();
}

json prevalence_json(const AbnormalityCatalog& catalog, const std::vector<LabelVector>& rows) {
  json j = json::object();
  for (std::size_t c = 0; c < catalog.size(); ++c) {
    std::size_t n = 0;
    for (const auto& r : rows) n += r[c];
    j[catalog.entities[c].canonical_name] = n;
  }
  return j;
}

std::vector<LabelVector> labels_of(const Prepared& p, const std::vector<std::string>& ids) {
  std::vector<LabelVector> out;
  for (const auto& id : ids) out.push_back(p.labels[p.row_of.at(id)].labels);
  return out;
}

TrainData train_data(const Context& ctx, const Source& src, const Prepared& p, int bins) {
  TrainData d;
  for (const auto& id : p.train_ids) {
    const LabelVector& l = p.labels[p.row_of.at(id)].labels;
    d.samples.push_back({id, l, semantic_description(l, p.catalog), cached_features(ctx, src, id, bins)});
  }
  d.loader = [src](const std::string& id) { return src.load(id); };
  return d;
}

EvalSet eval_set(const Context& ctx, const Source& src, const Prepared& p, int bins) {
  EvalSet e;
  for (const auto& id : p.test_ids) {
    e.ids.push_back(id);
    e.frames.push_back(cached_features(ctx, src, id, bins));
    e.labels.push_back(p.labels[p.row_of.at(id)].labels);
  }
  return e;
}

std::vector<std::string> class_names(const AbnormalityCatalog& c) {
  std::vector<std::string> out;
  for (const auto& e : c.entities) out.push_back(e.canonical_name);
  return out;
}

json epoch_json(const EpochLog& e) {
  return {{"epoch", e.epoch},
          {"bce", e.bce},
          {"con", e.con ? json(*e.con) : json(nullptr)},
          {"lambda", e.lambda},
          {"total", e.total},
          {"lr", e.lr}};
}

std::string epoch_line(const EpochLog& e) {
  char buf[200];
  if (e.con) {
    std::snprintf(buf, sizeof(buf), "epoch %d  bce %.6f  con %.6f  lambda %.6f  total %.6f  lr %.3e", e.epoch, e.bce,
                  *e.con, e.lambda, e.total, e.lr);
  } else {
    std::snprintf(buf, sizeof(buf), "epoch %d  bce %.6f  con -  lambda %.6f  total %.6f  lr %.3e", e.epoch, e.bce,
                  e.lambda, e.total, e.lr);
  }
  return buf;
}

Checkpoint checkpoint_with_state(const Model<float>& model, const Context& ctx, const TrainState& st,
                                 bool with_moments) {
  CheckpointInfo info;
  info.config = model.config();
  info.vocab_tokens = model.vocab().tokens();
  info.config_hash = ctx.hash;
  info.epochs_completed = st.epochs_completed;
  info.step = st.step;
  info.extra_json = json({{"seed", ctx.seed}, {"optimizer_steps", st.optimizer.steps_taken()}}).dump();
  Checkpoint c = make_checkpoint(model, info);
  if (with_moments && !st.optimizer.first_moments().empty()) {
    for (std::size_t i = 0; i < c.names.size(); ++i) {
      c.adam_m.push_back(st.optimizer.first_moments()[i].cast<double>());
      c.adam_v.push_back(st.optimizer.second_moments()[i].cast<double>());
    }
  }
  return c;
}

std::string timestamp() {
  const std::time_t now = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  std::tm tm{};
  gmtime_r(&now, &tm);
  char buf[32];
  std::strftime(buf, sizeof(buf), "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

void check_hash(const Context& ctx, const std::string& found, const std::string& what) {
  if (found == ctx.hash) return;
  *ctx.err << "warning: " << what << " has config hash " << found << " but the current config hashes to " << ctx.hash
           << "\n";
  if (!ctx.force) throw ValidationError("config hash mismatch for " + what + "; rerun with --force to proceed");
}

// Commands.

int cmd_synth(const Context& ctx) {
  const Source src = make_source(ctx);
  if (!src.synthetic) throw ValidationError("synth needs a synthetic corpus config (corpus.reports must be null)");
  const AbnormalityCatalog catalog = default_catalog();
  const fs::path dir = ctx.out / "corpus";
  fs::create_directories(dir / "audio");
  std::vector<EchoReportRaw> reports;
  std::vector<LabelRow> truth;
  for (std::size_t i = 0; i < src.spec.n_samples; ++i) {
    const std::string id = sample_id(i);
    const LabelVector labels = gen_labels(src.spec, i);
    HeartSoundRecord rec = gen_sample(labels, src.spec, sample_seed(src.spec, i));
    rec.record_id = id;
    write_record((dir / "audio" / id).string(), rec);
    reports.push_back(gen_report(labels, catalog, sample_seed(src.spec, i), id));
    truth.push_back({id, labels});
  }
  write_corpus_jsonl((dir / "reports.jsonl").string(), reports);
  write_labels_jsonl((dir / "truth_labels.jsonl").string(), truth);
  write_text(dir / "synth_spec.json", synth_spec_to_json(src.spec) + "\n");
  *ctx.log << "wrote " << reports.size() << " synthetic samples to " << dir.string() << "\n";
  return kExitOk;
}

int cmd_prepare(const Context& ctx) {
  const Source src = make_source(ctx);
  std::vector<EchoReportRaw> reports;
  if (src.synthetic) {
    const AbnormalityCatalog catalog = default_catalog();
    for (std::size_t i = 0; i < src.spec.n_samples; ++i) {
      reports.push_back(gen_report(gen_labels(src.spec, i), catalog, sample_seed(src.spec, i), sample_id(i)));
    }
  } else {
    reports = read_corpus_jsonl(src.reports_path);
  }
  for (auto& r : reports) r = strip_numeric(r);

  const int k = get_or_fail<int>(ctx.cfg, "catalog", "k");
  const int min_count = get_or_fail<int>(ctx.cfg, "catalog", "min_count");
  const EntityFrequencyTable freq = extract_entities(reports, default_synonym_table());
  AbnormalityCatalog catalog = build_label_schema(freq, k, min_count, default_knowledge_base());
  reorder_catalog(catalog, default_entity_order());

  const RuleResolver resolver(get_or_fail<int>(ctx.cfg, "catalog", "negation_window"));
  std::vector<LabelRow> rows;
  for (const auto& r : reports) rows.push_back({r.report_id, annotate(r, catalog, resolver)});

  const CorpusSplit split = split_corpus(rows.size(), ctx.seed);
  std::vector<std::string> train_ids, test_ids;
  std::vector<LabelVector> train_labels, test_labels;
  for (auto i : split.train) {
    train_ids.push_back(rows[i].report_id);
    train_labels.push_back(rows[i].labels);
  }
  for (auto i : split.test) {
    test_ids.push_back(rows[i].report_id);
    test_labels.push_back(rows[i].labels);
  }

  const fs::path dir = ctx.out / "prepared";
  fs::create_directories(dir);
  write_catalog_json((dir / "catalog.json").string(), catalog);
  write_labels_jsonl((dir / "labels.jsonl").string(), rows);
  json freq_json = json::array();
  for (const auto& e : freq.entries) {
    freq_json.push_back({{"surface_form", e.surface_form},
                         {"entity", e.mapped_entity ? json(*e.mapped_entity) : json(nullptr)},
                         {"count", e.count}});
  }
  write_text(dir / "entity_frequencies.json", freq_json.dump(2) + "\n");
  const json split_json = {{"config_hash", ctx.hash},
                           {"seed", ctx.seed},
                           {"train", train_ids},
                           {"test", test_ids},
                           {"prevalence",
                            {{"train", prevalence_json(catalog, train_labels)},
                             {"test", prevalence_json(catalog, test_labels)}}}};
  write_text(dir / "split.json", split_json.dump(2) + "\n");
  const std::string table = prevalence_table(catalog, train_labels, test_labels);
  write_text(dir / "prevalence.txt", table);
  *ctx.log << table;
  return kExitOk;
}

struct StopRequested {};

int cmd_train(const Context& ctx, bool resume, int stop_after) {
  const Source src = make_source(ctx);
  const Prepared p = load_prepared(ctx);
  const ModelConfig mc = model_config(ctx);
  const TrainConfig tc = train_config(ctx);
  const fs::path dir = ctx.out / "train";
  if (resume && !fs::exists(dir / "last.ckpt")) {
    throw ValidationError("nothing to resume: '" + (dir / "last.ckpt").string() + "' does not exist");
  }
  const TrainData data = train_data(ctx, src, p, mc.num_mel_bins);
  fs::create_directories(dir);

  Model<float> model(mc, vocabulary_for(p.catalog), mix_seed(ctx.seed, 1));
  TrainState state;
  if (resume) {
    const fs::path last = dir / "last.ckpt";
    const Checkpoint c = read_checkpoint(last.string());
    CheckpointInfo info;
    model = model_from_checkpoint<float>(c, &info);
    check_hash(ctx, info.config_hash, last.string());
    state.epochs_completed = info.epochs_completed;
    state.step = info.step;
    if (!c.adam_m.empty()) {
      std::vector<ad::Matrix<float>> m, v;
      for (std::size_t i = 0; i < c.adam_m.size(); ++i) {
        m.push_back(c.adam_m[i].cast<float>());
        v.push_back(c.adam_v[i].cast<float>());
      }
      const auto extra = json::parse(info.extra_json);
      state.optimizer.restore(std::move(m), std::move(v), extra.value("optimizer_steps", info.step));
    }
    *ctx.log << "resuming after epoch " << state.epochs_completed << "\n";
  }

  // Earlier epochs of a resumed run come from the previous manifest.
  json epochs = json::array();
  if (resume && fs::exists(dir / "manifest.json")) {
    for (const auto& e : parse_json_file((dir / "manifest.json").string()).value("epochs", json::array())) {
      if (e.value("epoch", 0) <= state.epochs_completed) epochs.push_back(e);
    }
  }
  const std::string started = timestamp();
  const int first_epoch = state.epochs_completed;
  std::optional<TrainResult> trained;
  try {
    trained = train(data, p.catalog, std::move(model), tc, std::move(state),
                    [&](const EpochLog& e, const Model<float>& m, const TrainState& st) {
                      *ctx.log << epoch_line(e) << std::endl;
                      epochs.push_back(epoch_json(e));
                      write_checkpoint((dir / "last.ckpt").string(), checkpoint_with_state(m, ctx, st, true));
                      if (stop_after > 0 && st.epochs_completed - first_epoch >= stop_after &&
                          st.epochs_completed < tc.epochs) {
                        throw StopRequested{};
                      }
                    });
  } catch (const StopRequested&) {
    const json partial = {{"config_hash", ctx.hash}, {"epochs", epochs}, {"started_at", started}};
    write_text(dir / "manifest.json", partial.dump(2) + "\n");
    *ctx.log << "stopped after epoch " << epochs.size() << "; continue with --resume\n";
    return kExitOk;
  }
  const TrainResult& result = *trained;
  write_checkpoint((dir / "model.ckpt").string(), checkpoint_with_state(result.model, ctx, result.state, false));

  std::vector<LabelVector> train_labels = labels_of(p, p.train_ids);
  std::vector<LabelVector> test_labels = labels_of(p, p.test_ids);
  json lambdas = json::array();
  for (const auto& e : epochs) lambdas.push_back(e["lambda"]);
  const json manifest = {{"config", ctx.cfg},
                         {"config_hash", ctx.hash},
                         {"seeds",
                          {{"global", ctx.seed},
                           {"model_init", mix_seed(ctx.seed, 1)},
                           {"train", tc.seed},
                           {"split", ctx.seed}}},
                         {"split", {{"train", p.train_ids}, {"test", p.test_ids}}},
                         {"prevalence",
                          {{"train", prevalence_json(p.catalog, train_labels)},
                           {"test", prevalence_json(p.catalog, test_labels)}}},
                         {"epochs", epochs},
                         {"lambda_trajectory", lambdas},
                         {"checkpoint", (dir / "model.ckpt").string()},
                         {"started_at", started},
                         {"finished_at", timestamp()}};
  write_text(dir / "manifest.json", manifest.dump(2) + "\n");
  *ctx.log << "checkpoint " << (dir / "model.ckpt").string() << "\n";
  return kExitOk;
}

Model<float> load_model(const Context& ctx, const fs::path& path) {
  if (!fs::exists(path)) throw ValidationError("checkpoint '" + path.string() + "' does not exist; run train first");
  CheckpointInfo info;
  Model<float> m = model_from_checkpoint<float>(read_checkpoint(path.string()), &info);
  check_hash(ctx, info.config_hash, path.string());
  return m;
}

fs::path eval_checkpoint(const Context& ctx) {
  const json& c = ctx.cfg["eval"]["checkpoint"];
  return c.is_null() ? ctx.out / "train" / "model.ckpt" : fs::path(c.get<std::string>());
}

int cmd_eval(const Context& ctx) {
  const Source src = make_source(ctx);
  const Prepared p = load_prepared(ctx);
  if (p.test_ids.empty()) throw ValidationError("test split is empty");
  const Model<float> model = load_model(ctx, eval_checkpoint(ctx));
  const InferConfig ic = infer_config(ctx);
  const EvalSet test = eval_set(ctx, src, p, model.config().num_mel_bins);
  const Predictor predictor(model, p.catalog, ic);
  const Eigen::MatrixXd scores = predict_all(predictor, test.frames);
  MetricsReport report = evaluate(test.labels, scores, class_names(p.catalog), ic.threshold);
  report.config_hash = ctx.hash;
  report.seed = ctx.seed;

  const fs::path dir = ctx.out / "eval";
  fs::create_directories(dir);
  write_text(dir / "metrics.json", metrics_to_json(report));
  write_text(dir / "metrics.txt", metrics_table(report));

  const auto roc_classes = ctx.cfg["eval"]["roc_classes"].get<std::vector<std::string>>();
  const bool plots = ctx.cfg["eval"]["plots"].get<bool>();
  for (const auto& name : roc_classes) {
    const int j = p.catalog.index_of(name);
    if (j < 0) throw ValidationError("eval.roc_classes names unknown class '" + name + "'");
    std::vector<double> s;
    std::vector<std::uint8_t> l;
    for (std::size_t i = 0; i < test.labels.size(); ++i) {
      s.push_back(scores(static_cast<Eigen::Index>(i), j));
      l.push_back(test.labels[i][static_cast<std::size_t>(j)]);
    }
    RocCurve curve;
    try {
      curve = roc_auc(s, l);
    } catch (const ValidationError& e) {
      *ctx.err << "warning: no ROC for " << name << ": " << e.what() << "\n";
      continue;
    }
    write_text(dir / ("roc_" + name + ".csv"), roc_csv(curve));
    if (plots) write_text(dir / ("roc_" + name + ".svg"), roc_svg(curve, name));
  }
  *ctx.log << metrics_table(report);
  return kExitOk;
}

int cmd_infer(const Context& ctx, const std::vector<std::string>& inputs) {
  const Model<float> model = load_model(ctx, eval_checkpoint(ctx));
  const InferConfig ic = infer_config(ctx);
  AbnormalityCatalog catalog;
  if (fs::exists(ctx.out / "prepared" / "catalog.json")) {
    catalog = read_catalog_json((ctx.out / "prepared" / "catalog.json").string());
  } else {
    catalog = default_catalog();
  }
  const Predictor predictor(model, catalog, ic);
  auto line = [&](const std::string& id, const FeatureMatrix& f) {
    const Eigen::VectorXd p = predictor.predict(f);
    const LabelVector l = decide(p, ic.threshold);
    json probs = json::object();
    std::vector<std::string> positives;
    for (std::size_t j = 0; j < catalog.size(); ++j) {
      probs[catalog.entities[j].canonical_name] = std::round(p(static_cast<Eigen::Index>(j)) * 1e6) / 1e6;
      if (l[j]) positives.push_back(catalog.entities[j].canonical_name);
    }
    return json({{"id", id}, {"probabilities", probs}, {"positives", positives}}).dump();
  };
  std::ostringstream all;
  if (!inputs.empty()) {
    for (const auto& path : inputs) {
      const WavData w = read_wav_pcm16(path);
      HeartSoundRecord rec;
      rec.record_id = fs::path(path).stem().string();
      rec.samples = w.samples;
      rec.sample_rate_hz = w.sample_rate_hz;
      all << line(rec.record_id, compute_filterbanks(rec, model.config().num_mel_bins).frames) << "\n";
    }
  } else {
    const Source src = make_source(ctx);
    const Prepared p = load_prepared(ctx);
    for (const auto& id : p.test_ids) {
      all << line(id, cached_features(ctx, src, id, model.config().num_mel_bins)) << "\n";
    }
  }
  write_text(ctx.out / "infer" / "predictions.jsonl", all.str());
  *ctx.log << all.str();
  return kExitOk;
}

AblationRow row_from_json(const json& j) {
  AblationRow r;
  r.name = j.at("name").get<std::string>();
  if (j.contains("error")) r.error = j["error"].get<std::string>();
  if (!j["metrics"].is_null()) {
    MetricsReport m;
    const json& macro = j["metrics"]["macro"];
    m.macro.precision = macro["precision"].get<double>() / 100.0;
    m.macro.recall = macro["recall"].get<double>() / 100.0;
    m.macro.f1 = macro["f1"].get<double>() / 100.0;
    m.n_samples = j["metrics"]["n_samples"].get<std::size_t>();
    r.report = m;
  }
  return r;
}

int cmd_ablate(const Context& ctx) {
  const Source src = make_source(ctx);
  const Prepared p = load_prepared(ctx);
  if (p.test_ids.empty()) throw ValidationError("test split is empty");
  const ModelConfig mc = model_config(ctx);
  const TrainConfig tc = train_config(ctx);
  const InferConfig ic = infer_config(ctx);
  const TrainData data = train_data(ctx, src, p, mc.num_mel_bins);
  const EvalSet test = eval_set(ctx, src, p, mc.num_mel_bins);
  const fs::path dir = ctx.out / "ablate";
  const fs::path cells_dir = dir / "cells";
  fs::create_directories(cells_dir);
  // Cells also depend on the pretraining and inference settings.
  const std::string cell_key =
      hex64(fnv1a64(ctx.hash + ctx.cfg["ablate"].dump() + ctx.cfg["infer"].dump()));

  std::vector<AblationCell> grid;
  for (const auto& name : ctx.cfg["ablate"]["grid"].get<std::vector<std::string>>()) {
    grid.push_back(parse_ablation_cell(name));
  }
  const auto infer_grid = ctx.cfg["ablate"]["infer_grid"].get<std::vector<int>>();

  AblationSetup setup;
  setup.train = &data;
  setup.test = &test;
  setup.catalog = &p.catalog;
  setup.model = mc;
  setup.vocab = vocabulary_for(p.catalog);
  setup.train_config = tc;
  setup.infer = ic;
  setup.model_seed = mix_seed(ctx.seed, 1);

  // Encoders for the "pretrained" cells: a given checkpoint, or a short run on
  // the training split with an independent seed.
  std::optional<Model<float>> warm;
  const json& ws = ctx.cfg["ablate"]["warm_start"];
  const int pretrain_epochs = get_or_fail<int>(ctx.cfg, "ablate", "pretrain_epochs");
  if (!ws.is_null()) {
    warm = model_from_checkpoint<float>(read_checkpoint(ws.get<std::string>()));
  } else if (pretrain_epochs > 0) {
    const fs::path pre = dir / "pretrain.ckpt";
    std::optional<Model<float>> cached;
    if (fs::exists(pre)) {
      CheckpointInfo info;
      Model<float> m = model_from_checkpoint<float>(read_checkpoint(pre.string()), &info);
      if (info.config_hash == ctx.hash && info.epochs_completed == pretrain_epochs) cached = std::move(m);
    }
    if (cached) {
      *ctx.log << "pretrain: cached\n";
      warm = std::move(cached);
    } else {
      TrainConfig ptc = tc;
      ptc.epochs = pretrain_epochs;
      ptc.warmup_epochs = std::min(tc.warmup_epochs, pretrain_epochs - 1);
      ptc.seed = mix_seed(ctx.seed, 0x9e7);
      TrainResult r = train(data, p.catalog, Model<float>(mc, setup.vocab, mix_seed(ctx.seed, 0x9e8)), ptc);
      write_checkpoint(pre.string(), checkpoint_with_state(r.model, ctx, r.state, false));
      *ctx.log << "pretrain: " << pretrain_epochs << " epochs\n";
      warm = std::move(r.model);
    }
  }
  if (warm) setup.warm_start = &*warm;

  std::vector<AblationRow> rows;
  std::optional<Model<float>> full_model;
  for (AblationCell cell : grid) {
    const std::string name = ablation_cell_name(cell);
    const fs::path cell_json = cells_dir / (name + ".json");
    const fs::path cell_ckpt = cells_dir / (name + ".ckpt");
    if (fs::exists(cell_json)) {
      const json cached = parse_json_file(cell_json.string());
      if (cached.value("cell_key", std::string()) == cell_key && !cached["row"].contains("error")) {
        *ctx.log << name << ": cached\n";
        rows.push_back(row_from_json(cached["row"]));
        if (cell == AblationCell::kFull && fs::exists(cell_ckpt)) {
          full_model = model_from_checkpoint<float>(read_checkpoint(cell_ckpt.string()));
        }
        continue;
      }
    }
    AblationRow row;
    row.name = name;
    try {
      TrainConfig cell_tc = tc;
      InferConfig cell_ic = ic;
      if (cell == AblationCell::kNoContrastive) cell_tc.contrastive = false;
      if (cell == AblationCell::kEntityWords) {
        cell_tc.queries = QueryText::kEntityName;
        cell_ic.n_descriptions = 0;
      }
      TrainResult r = train(data, p.catalog, ablation_initial_model(setup, cell), cell_tc);
      const Predictor predictor(r.model, p.catalog, cell_ic);
      MetricsReport m = evaluate(test.labels, predict_all(predictor, test.frames), class_names(p.catalog),
                                 cell_ic.threshold);
      m.config_hash = ctx.hash;
      m.seed = ctx.seed;
      row.report = m;
      row.log = r.log;
      write_checkpoint(cell_ckpt.string(), checkpoint_with_state(r.model, ctx, r.state, false));
      if (cell == AblationCell::kFull) full_model = std::move(r.model);
    } catch (const ValidationError& e) {
      row.error = e.what();
    } catch (const RuntimeAbort& e) {
      row.error = e.what();
    }
    *ctx.log << name << ": " << (row.report ? "done" : "failed: " + row.error) << "\n";
    const json row_json = json::parse(ablation_to_json({row}))[0];
    write_text(cell_json, json({{"config_hash", ctx.hash}, {"cell_key", cell_key}, {"seed", ctx.seed}, {"row", row_json}})
                                  .dump(2) +
                              "\n");
    rows.push_back(std::move(row));
  }
  std::vector<json> training_rows;
  for (const auto& r : rows) training_rows.push_back(json::parse(ablation_to_json({r}))[0]);
  const json t2 = {{"config_hash", ctx.hash}, {"seed", ctx.seed}, {"rows", training_rows}};
  write_text(dir / "training_ablation.json", t2.dump(2) + "\n");
  write_text(dir / "training_ablation.txt", ablation_table(rows));
  *ctx.log << ablation_table(rows);

  if (!infer_grid.empty()) {
    std::optional<Model<float>> source_model = std::move(full_model);
    if (!source_model) {
      const fs::path fallback = ctx.out / "train" / "model.ckpt";
      if (!fs::exists(fallback)) {
        throw ValidationError("the description-count table needs the 'full' cell or a trained model at " +
                              fallback.string());
      }
      source_model = load_model(ctx, fallback);
    }
    const auto rows3 = run_ablation_infer(*source_model, p.catalog, test, infer_grid, ic.threshold);
    const json t3 = {{"config_hash", ctx.hash}, {"seed", ctx.seed}, {"rows", json::parse(ablation_to_json(rows3))}};
    write_text(dir / "description_ablation.json", t3.dump(2) + "\n");
    write_text(dir / "description_ablation.txt", ablation_table(rows3));
    *ctx.log << ablation_table(rows3);
  }
  for (const auto& r : rows) {
    if (!r.report) return kExitRuntime;
  }
  return kExitOk;
}

}  // namespace

std::string default_experiment_config() { return default_config().dump(2) + "\n"; }

int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"hsdlab: heart-sound abnormality detection experiments"};
  app.require_subcommand(1);
  Options opt;
  std::uint64_t seed = 0;
  auto add_common = [&](CLI::App* sub) {
    sub->add_option("--config", opt.config_path, "Experiment config (JSON)")->check(CLI::ExistingFile);
    sub->add_option("--seed", seed, "Global seed (overrides the config)");
    sub->add_option("--out", opt.out, "Output directory");
    sub->add_option("--set", opt.sets, "Config override key=value (repeatable)");
    sub->add_flag("--force", opt.force, "Proceed despite a config hash mismatch");
  };
  std::map<std::string, CLI::App*> subs;
  for (const auto& [name, help] : std::vector<std::pair<std::string, std::string>>{
           {"synth", "Write a synthetic corpus (reports and recordings)"},
           {"prepare", "Build the catalog, labels and split"},
           {"train", "Train a model"},
           {"eval", "Evaluate a checkpoint on the test split"},
           {"infer", "Predict labels for recordings"},
           {"ablate", "Run the training and description-count ablations"},
           {"config", "Print the effective config"}}) {
    subs[name] = app.add_subcommand(name, help);
    add_common(subs[name]);
  }
  subs["train"]->add_flag("--resume", opt.resume, "Continue from train/last.ckpt");
  subs["train"]->add_option("--stop-after", opt.stop_after, "Stop after this many epochs (resumable)")
      ->check(CLI::NonNegativeNumber);
  subs["infer"]->add_option("--input", opt.inputs, "WAV file to classify (repeatable)")->check(CLI::ExistingFile);

  std::vector<std::string> reversed(args.rbegin(), args.rend());
  try {
    app.parse(reversed);
  } catch (const CLI::CallForHelp& e) {
    out << app.help();
    return kExitOk;
  } catch (const CLI::ParseError& e) {
    err << "error: " << e.what() << "\n";
    return e.get_exit_code() == 0 ? kExitOk : kExitValidation;
  }
  for (auto& [name, sub] : subs) {
    if (sub->count("--seed") > 0) opt.seed = seed;
  }

  try {
    const Context ctx = make_context(opt, out, err);
    if (*subs["config"]) {
      out << ctx.cfg.dump(2) << "\n";
      return kExitOk;
    }
    if (*subs["synth"]) return cmd_synth(ctx);
    if (*subs["prepare"]) return cmd_prepare(ctx);
    if (*subs["train"]) return cmd_train(ctx, opt.resume, opt.stop_after);
    if (*subs["eval"]) return cmd_eval(ctx);
    if (*subs["infer"]) return cmd_infer(ctx, opt.inputs);
    if (*subs["ablate"]) return cmd_ablate(ctx);
  } catch (const ValidationError& e) {
    err << "error: " << e.what() << "\n";
    return kExitValidation;
  } catch (const RuntimeAbort& e) {
    err << "aborted: " << e.what() << "\n";
    return kExitRuntime;
  } catch (const fs::filesystem_error& e) {
    err << "aborted: " << e.what() << "\n";
    return kExitRuntime;
  } catch (const json::exception& e) {
    err << "error: malformed JSON input: " << e.what() << "\n";
    return kExitValidation;
  }
  return kExitValidation;
}

}  // namespace hsd
