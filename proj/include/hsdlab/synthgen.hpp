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

// Synthetic auscultation corpora. Each abnormality class owns a murmur
// signature (frequency band, cardiac phase, emphasized site) that is injected
// on top of an S1/S2 pulse train, and every sample comes with an
// echocardiography-style report that mentions exactly its positive classes.

#ifndef HSDLAB_SYNTHGEN_HPP_
#define HSDLAB_SYNTHGEN_HPP_

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "hsdlab/audiofeat.hpp"
#include "hsdlab/catalog.hpp"

namespace hsd {

enum class MurmurPhase { kSystole, kDiastole, kContinuous };

std::string_view phase_name(MurmurPhase phase);
MurmurPhase parse_phase(std::string_view name);

struct ClassSignature {
  double band_low_hz = 0.0;
  double band_high_hz = 0.0;
  MurmurPhase phase = MurmurPhase::kSystole;
  Site site_emphasis = Site::kAortic;
  double snr_db = 20.0;
};

struct SynthSpec {
  std::size_t n_samples = 1000;
  std::vector<std::string> class_names;  // catalog order
  std::vector<double> class_priors;
  double heart_rate_min_bpm = 70.0;
  double heart_rate_max_bpm = 110.0;
  std::vector<ClassSignature> signatures;
  std::uint64_t rng_seed = 0;

  int sample_rate_hz = 4000;
  double site_seconds = 15.0;
  double noise_floor_rms = 0.01;
  /// Gain of a murmur away from its emphasized site.
  double off_site_gain = 0.4;
  /// Level of broadband rubbing transients; disabled when empty.
  std::optional<double> ambient_snr_db;

  std::size_t num_classes() const { return class_names.size(); }
  /// Throws ValidationError on any broken invariant.
  void validate() const;
};

/// Default signatures: class j occupies [100 + 66 j, 140 + 66 j] Hz, cycles
/// through systole / diastole / continuous, and is emphasized at site j mod 5.
std::vector<ClassSignature> default_signatures(std::size_t num_classes, double snr_db = 20.0);
/// Moderate prevalences for the twelve default classes (0.10 to 0.35).
std::vector<double> default_priors();
SynthSpec default_synth_spec(std::size_t n_samples, std::uint64_t seed, double snr_db = 20.0);

std::string synth_spec_to_json(const SynthSpec& spec);
SynthSpec synth_spec_from_json(const std::string& text);

/// One five-site recording. Deterministic in (labels, spec, seed); the base
/// signal does not depend on the labels, so an all-zero sample with the same
/// seed is the exact murmur-free baseline.
HeartSoundRecord gen_sample(const LabelVector& labels, const SynthSpec& spec, std::uint64_t seed);

/// Report text for a label vector, mentioning exactly the positive entities.
EchoReportRaw gen_report(const LabelVector& labels, const AbnormalityCatalog& catalog, std::uint64_t seed,
                         const std::string& report_id);

struct SynthCorpus {
  std::vector<HeartSoundRecord> records;
  std::vector<LabelVector> labels;
  std::vector<EchoReportRaw> reports;
};

/// Labels for sample i come from Bernoulli(prior_j) draws seeded by
/// mix_seed(rng_seed, i), so any subset can be regenerated independently.
LabelVector gen_labels(const SynthSpec& spec, std::size_t index);
std::string sample_id(std::size_t index);
std::uint64_t sample_seed(const SynthSpec& spec, std::size_t index);

/// Whole corpus in memory. For large corpora, generate per index instead.
SynthCorpus gen_corpus(const SynthSpec& spec, const AbnormalityCatalog& catalog);

/// Mean power spectral density inside [lo, hi] Hz of a sample range.
double band_power(const std::vector<float>& samples, std::size_t begin, std::size_t end, int sample_rate_hz,
                  double lo_hz, double hi_hz);

/// Per-class threshold detector on log band power at the emphasized site.
/// Serves as the separability ceiling for learned models.
class BandPowerOracle {
 public:
  explicit BandPowerOracle(SynthSpec spec);

  /// Log band power per class.
  std::vector<double> score(const HeartSoundRecord& record) const;
  /// Chooses per-class thresholds maximizing F1 on the given scores.
  void fit(const std::vector<std::vector<double>>& scores, const std::vector<LabelVector>& labels);
  LabelVector predict(const std::vector<double>& scores) const;

  const std::vector<double>& thresholds() const { return thresholds_; }

 private:
  SynthSpec spec_;
  std::vector<double> thresholds_;
};

}  // namespace hsd

#endif  // HSDLAB_SYNTHGEN_HPP_
