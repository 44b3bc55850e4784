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

// Command-line entry points: synth, prepare, train, eval, infer, ablate.
//
// Every command reads one JSON experiment config (built-in defaults, then
// --config FILE, then --set key=value overrides) and works inside an output
// directory:
//
//   corpus/    synth: reports.jsonl, audio/<id>.wav + .json, truth labels
//   prepared/  prepare: catalog, labels, split, entity frequencies
//   train/     train: model.ckpt, last.ckpt (resumable), manifest.json
//   eval/      eval: metrics.json, metrics.txt, roc_<class>.csv/.svg
//   infer/     infer: predictions.jsonl
//   ablate/    ablate: per-cell cache, table2.*, table3.*
//
// Filter banks are cached under $HSDLAB_CACHE (default <out>/cache).

#ifndef HSDLAB_CLI_HPP_
#define HSDLAB_CLI_HPP_

#include <ostream>
#include <string>
#include <vector>

namespace hsd {

inline constexpr int kExitOk = 0;
inline constexpr int kExitValidation = 2;
inline constexpr int kExitRuntime = 3;

/// Built-in experiment config, pretty-printed JSON.
std::string default_experiment_config();

/// Runs one command; `args` excludes the program name. Returns the exit code.
int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace hsd

#endif  // HSDLAB_CLI_HPP_
