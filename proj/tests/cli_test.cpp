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

#include <gtest/gtest.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "json.hpp"

#include "hsdlab/cli.hpp"
#include "hsdlab/model.hpp"

namespace hsd {
namespace {

namespace fs = std::filesystem;
using nlohmann::json;

struct Outcome {
  int code;
  std::string out;
  std::string err;
};

Outcome run(std::vector<std::string> args) {
  std::ostringstream out, err;
  const int code = run_cli(args, out, err);
  return {code, out.str(), err.str()};
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream s;
  s << in.rdbuf();
  return s.str();
}

// Small enough to train in seconds.
std::vector<std::string> small(const fs::path& out) {
  return {"--out", out.string(), "--set", "synth.n_samples=120", "--set", "catalog.min_count=5",
          "--set", "model.d=16",  "--set", "train.epochs=1",     "--set", "train.warmup_epochs=0",
          "--set", "train.batch_size=16"};
}

std::vector<std::string> cmd(const std::string& name, std::vector<std::string> rest) {
  rest.insert(rest.begin(), name);
  return rest;
}

class CliTest : public ::testing::Test {
 protected:
  static void SetUpTestSuite() {
    root_ = fs::temp_directory_path() / "hsdlab_cli_test";
    fs::remove_all(root_);
    fs::create_directories(root_);
    // One feature cache for every workspace in this suite.
    setenv("HSDLAB_CACHE", (root_ / "cache").c_str(), 1);
  }
  static void TearDownTestSuite() {
    unsetenv("HSDLAB_CACHE");
    fs::remove_all(root_);
  }
  static fs::path root_;
};
fs::path CliTest::root_;

TEST_F(CliTest, ConfigCommandAppliesOverridesInOrder) {
  const Outcome r = run({"config", "--set", "train.epochs=7", "--set", "infer.definition_first=true", "--seed", "5"});
  ASSERT_EQ(r.code, kExitOk) << r.err;
  const json cfg = json::parse(r.out);
  EXPECT_EQ(cfg["train"]["epochs"], 7);
  EXPECT_EQ(cfg["infer"]["definition_first"], true);
  EXPECT_EQ(cfg["seed"], 5);
  EXPECT_EQ(cfg["model"]["d"], 256);
  EXPECT_EQ(json::parse(default_experiment_config())["catalog"]["k"], 12);
}

TEST_F(CliTest, ConfigFileIsMergedAndUnknownKeysAreRejected) {
  const fs::path file = root_ / "exp.json";
  std::ofstream(file) << R"({"train": {"epochs": 3}, "model": {"d": 64}})";
  Outcome r = run({"config", "--config", file.string()});
  ASSERT_EQ(r.code, kExitOk) << r.err;
  EXPECT_EQ(json::parse(r.out)["train"]["epochs"], 3);
  EXPECT_EQ(json::parse(r.out)["train"]["lr"], 5e-5);

  std::ofstream(file) << R"({"train": {"epoch": 3}})";
  r = run({"config", "--config", file.string()});
  EXPECT_EQ(r.code, kExitValidation);
  EXPECT_NE(r.err.find("train.epoch"), std::string::npos);

  EXPECT_EQ(run({"config", "--set", "nonsense"}).code, kExitValidation);
  EXPECT_EQ(run({"config", "--set", "model.dd=3"}).code, kExitValidation);
  EXPECT_EQ(run({"frobnicate"}).code, kExitValidation);
}

TEST_F(CliTest, PrepareIsDeterministicAndSeedDependent) {
  const fs::path a = root_ / "prep_a", b = root_ / "prep_b", c = root_ / "prep_c";
  ASSERT_EQ(run(cmd("prepare", small(a))).code, kExitOk);
  ASSERT_EQ(run(cmd("prepare", small(b))).code, kExitOk);
  auto other = small(c);
  other.insert(other.end(), {"--seed", "9"});
  ASSERT_EQ(run(cmd("prepare", other)).code, kExitOk);
  for (const char* f : {"catalog.json", "labels.jsonl", "split.json", "entity_frequencies.json"}) {
    EXPECT_EQ(slurp(a / "prepared" / f), slurp(b / "prepared" / f)) << f;
  }
  EXPECT_NE(slurp(a / "prepared" / "split.json"), slurp(c / "prepared" / "split.json"));

  const json split = json::parse(slurp(a / "prepared" / "split.json"));
  EXPECT_EQ(split["train"].size(), 108u);
  EXPECT_EQ(split["test"].size(), 12u);
}

TEST_F(CliTest, FileCorpusMatchesTheSyntheticOne) {
  const fs::path s = root_ / "synth";
  ASSERT_EQ(run(cmd("synth", small(s))).code, kExitOk);
  ASSERT_TRUE(fs::exists(s / "corpus" / "reports.jsonl"));
  ASSERT_TRUE(fs::exists(s / "corpus" / "audio" / "S00000.wav"));
  ASSERT_EQ(run(cmd("prepare", small(s))).code, kExitOk);

  auto files = small(root_ / "files");
  files.insert(files.end(), {"--set", "corpus.reports=" + (s / "corpus" / "reports.jsonl").string(), "--set",
                             "corpus.audio_dir=" + (s / "corpus" / "audio").string()});
  const Outcome r = run(cmd("prepare", files));
  ASSERT_EQ(r.code, kExitOk) << r.err;
  EXPECT_EQ(slurp(s / "prepared" / "labels.jsonl"), slurp(root_ / "files" / "prepared" / "labels.jsonl"));
  EXPECT_EQ(slurp(s / "prepared" / "catalog.json"), slurp(root_ / "files" / "prepared" / "catalog.json"));
}

TEST_F(CliTest, MalformedCorpusLineIsReportedWithItsNumber) {
  const fs::path s = root_ / "bad_corpus";
  fs::create_directories(s / "audio");
  {
    std::ofstream out(s / "reports.jsonl");
    for (int i = 0; i < 6; ++i) {
      out << R"({"report_id":"R)" << i << R"(","numeric_indices":[],"description":"normal","diagnosis":"normal"})"
          << "\n";
    }
    out << "{\"report_id\": \"R6\", \"description\": \n";
  }
  auto args = small(s);
  args.insert(args.end(), {"--set", "corpus.reports=" + (s / "reports.jsonl").string(), "--set",
                           "corpus.audio_dir=" + (s / "audio").string()});
  const Outcome r = run(cmd("prepare", args));
  EXPECT_EQ(r.code, kExitValidation);
  EXPECT_NE(r.err.find("line 7"), std::string::npos) << r.err;
}

TEST_F(CliTest, CommandsNeedTheirInputs) {
  const fs::path empty = root_ / "empty";
  Outcome r = run(cmd("train", small(empty)));
  EXPECT_EQ(r.code, kExitValidation);
  EXPECT_NE(r.err.find("catalog"), std::string::npos);
  EXPECT_EQ(run(cmd("eval", small(empty))).code, kExitValidation);

  ASSERT_EQ(run(cmd("prepare", small(empty))).code, kExitOk);
  r = run(cmd("eval", small(empty)));
  EXPECT_EQ(r.code, kExitValidation);
  EXPECT_NE(r.err.find("checkpoint"), std::string::npos);
  r = run(cmd("train", [&] {
    auto a = small(empty);
    a.push_back("--resume");
    return a;
  }()));
  EXPECT_EQ(r.code, kExitValidation);
}

TEST_F(CliTest, TrainEvalInferProduceTheirArtifacts) {
  const fs::path w = root_ / "full";
  ASSERT_EQ(run(cmd("prepare", small(w))).code, kExitOk);
  Outcome r = run(cmd("train", small(w)));
  ASSERT_EQ(r.code, kExitOk) << r.err;
  EXPECT_NE(r.out.find("epoch 1"), std::string::npos);

  const json manifest = json::parse(slurp(w / "train" / "manifest.json"));
  EXPECT_EQ(manifest["epochs"].size(), 1u);
  EXPECT_EQ(manifest["lambda_trajectory"].size(), 1u);
  EXPECT_EQ(manifest["split"]["test"].size(), 12u);
  EXPECT_TRUE(manifest.contains("started_at"));

  r = run(cmd("eval", small(w)));
  ASSERT_EQ(r.code, kExitOk) << r.err;
  for (const char* cls : {"VSD", "PDA", "Shunt", "Hypertrophy"}) {
    EXPECT_TRUE(fs::exists(w / "eval" / (std::string("roc_") + cls + ".csv"))) << cls;
    EXPECT_TRUE(fs::exists(w / "eval" / (std::string("roc_") + cls + ".svg"))) << cls;
  }
  const json metrics = json::parse(slurp(w / "eval" / "metrics.json"));
  EXPECT_EQ(metrics["n_samples"], 12);
  EXPECT_EQ(metrics["config_hash"], manifest["config_hash"]);

  r = run(cmd("infer", small(w)));
  ASSERT_EQ(r.code, kExitOk) << r.err;
  std::istringstream lines(slurp(w / "infer" / "predictions.jsonl"));
  std::string line;
  int n = 0;
  while (std::getline(lines, line)) {
    const json j = json::parse(line);
    EXPECT_EQ(j["probabilities"].size(), 12u);
    ++n;
  }
  EXPECT_EQ(n, 12);
}

TEST_F(CliTest, ConfigHashMismatchNeedsForce) {
  const fs::path w = root_ / "hash";
  ASSERT_EQ(run(cmd("prepare", small(w))).code, kExitOk);
  ASSERT_EQ(run(cmd("train", small(w))).code, kExitOk);
  auto changed = small(w);
  changed.insert(changed.end(), {"--set", "train.lr=0.001"});
  Outcome r = run(cmd("eval", changed));
  EXPECT_EQ(r.code, kExitValidation);
  EXPECT_NE(r.err.find("hash"), std::string::npos);
  changed.push_back("--force");
  r = run(cmd("eval", changed));
  EXPECT_EQ(r.code, kExitOk) << r.err;
}

TEST_F(CliTest, ResumeMatchesAnUninterruptedRun) {
  auto two = [](const fs::path& w) {
    auto a = small(w);
    a.insert(a.end(), {"--set", "train.epochs=2"});
    return a;
  };
  const fs::path straight = root_ / "straight", resumed = root_ / "resumed";
  ASSERT_EQ(run(cmd("prepare", two(straight))).code, kExitOk);
  ASSERT_EQ(run(cmd("train", two(straight))).code, kExitOk);

  ASSERT_EQ(run(cmd("prepare", two(resumed))).code, kExitOk);
  auto first = two(resumed);
  first.insert(first.end(), {"--stop-after", "1"});
  Outcome r = run(cmd("train", first));
  ASSERT_EQ(r.code, kExitOk) << r.err;
  EXPECT_NE(r.out.find("stopped after epoch 1"), std::string::npos);
  EXPECT_FALSE(fs::exists(resumed / "train" / "model.ckpt"));
  auto resume = two(resumed);
  resume.push_back("--resume");
  r = run(cmd("train", resume));
  ASSERT_EQ(r.code, kExitOk) << r.err;
  EXPECT_NE(r.out.find("resuming after epoch 1"), std::string::npos);

  const Checkpoint a = read_checkpoint((straight / "train" / "model.ckpt").string());
  const Checkpoint b = read_checkpoint((resumed / "train" / "model.ckpt").string());
  ASSERT_EQ(a.names, b.names);
  for (std::size_t i = 0; i < a.tensors.size(); ++i) EXPECT_EQ(a.tensors[i], b.tensors[i]) << a.names[i];
  EXPECT_EQ(json::parse(slurp(resumed / "train" / "manifest.json"))["epochs"].size(), 2u);
}

TEST_F(CliTest, AblationReusesFinishedCells) {
  const fs::path w = root_ / "ablate";
  auto args = small(w);
  args.insert(args.end(), {"--set", "ablate.pretrain_epochs=1", "--set", R"(ablate.grid=["full","no_contrastive"])",
                           "--set", "ablate.infer_grid=[0,1,2]"});
  ASSERT_EQ(run(cmd("prepare", args)).code, kExitOk);
  Outcome r = run(cmd("ablate", args));
  ASSERT_EQ(r.code, kExitOk) << r.err;
  const std::string training_rows = slurp(w / "ablate" / "training_ablation.txt");
  const std::string description_rows = slurp(w / "ablate" / "description_ablation.txt");
  EXPECT_NE(training_rows.find("no_contrastive"), std::string::npos);
  EXPECT_NE(description_rows.find("entity_only"), std::string::npos);
  EXPECT_NE(description_rows.find("N=2"), std::string::npos);

  r = run(cmd("ablate", args));
  ASSERT_EQ(r.code, kExitOk) << r.err;
  EXPECT_NE(r.out.find("full: cached"), std::string::npos);
  EXPECT_EQ(slurp(w / "ablate" / "training_ablation.txt"), training_rows);
  EXPECT_EQ(slurp(w / "ablate" / "description_ablation.txt"), description_rows);

  // Changing an ablation setting invalidates the cells.
  args.insert(args.end(), {"--set", "infer.threshold=0.6"});
  r = run(cmd("ablate", args));
  ASSERT_EQ(r.code, kExitOk) << r.err;
  EXPECT_EQ(r.out.find("full: cached"), std::string::npos);
}

}  // namespace
}  // namespace hsd
