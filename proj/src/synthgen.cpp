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

#include "hsdlab/synthgen.hpp"

#include <unsupported/Eigen/FFT>

#include <algorithm>
#include <cctype>
#include <cmath>
#include <complex>
#include <cstdio>
#include <map>
#include <set>

#include "hsdlab/common.hpp"
#include "json.hpp"

namespace hsd {
namespace {

using nlohmann::json;

constexpr double kTwoPi = 6.283185307179586476925286766559;
constexpr int kMurmurComponents = 16;

struct Cycle {
  double s1;  // S1 centre, seconds from record start
  double s2;  // S2 centre
  double next_s1;
  Site site;
};

double gabor(double t, double centre, double freq, double sigma) {
  const double u = t - centre;
  return std::exp(-u * u / (2.0 * sigma * sigma)) * std::cos(kTwoPi * freq * u);
}

// Adds a Gabor pulse, restricted to samples [first, last).
void add_gabor(std::vector<double>& x, int sr, std::size_t first, std::size_t last, double centre, double amp,
               double freq, double sigma) {
  const auto lo = std::max(static_cast<long>(first), static_cast<long>(std::floor((centre - 4.0 * sigma) * sr)));
  const auto hi = std::min(static_cast<long>(last) - 1, static_cast<long>(std::ceil((centre + 4.0 * sigma) * sr)));
  for (long n = lo; n <= hi; ++n) {
    x[static_cast<std::size_t>(n)] += amp * gabor(static_cast<double>(n) / sr, centre, freq, sigma);
  }
}

// Raised-cosine window over [a, b] seconds with `ramp` second edges, added
// into a gate array with weight w (gates of different cycles never overlap).
void add_window(std::vector<double>& gate, int sr, double a, double b, double ramp, double w) {
  if (b - a < 2.0 * ramp) return;
  const auto lo = static_cast<long>(std::ceil(a * sr));
  const auto hi = static_cast<long>(std::floor(b * sr));
  for (long n = std::max(0L, lo); n <= hi && n < static_cast<long>(gate.size()); ++n) {
    const double t = static_cast<double>(n) / sr;
    double g = 1.0;
    if (t < a + ramp) g = 0.5 - 0.5 * std::cos(M_PI * (t - a) / ramp);
    if (t > b - ramp) g = 0.5 - 0.5 * std::cos(M_PI * (b - t) / ramp);
    gate[static_cast<std::size_t>(n)] = std::max(gate[static_cast<std::size_t>(n)], w * g);
  }
}

std::string upper(std::string s) {
  for (auto& c : s) c = static_cast<char>(std::toupper(static_cast<unsigned char>(c)));
  return s;
}

std::string capitalize(std::string s) {
  if (!s.empty()) s[0] = static_cast<char>(std::toupper(static_cast<unsigned char>(s[0])));
  return s;
}

bool is_abbreviation(const std::string& s) {
  return s.size() <= 4 && std::all_of(s.begin(), s.end(), [](unsigned char c) { return std::isalpha(c) != 0; });
}

std::string display(const std::string& surface) { return is_abbreviation(surface) ? upper(surface) : surface; }

// Synonyms that read as adjectives get whole-sentence templates.
const std::map<std::string, std::vector<std::string>>& adjective_sentences() {
  static const std::map<std::string, std::vector<std::string>> kSentences = {
      {"dilated", {"Dilated left atrium.", "Dilated right ventricle."}},
      {"enlarged", {"Enlarged left ventricle.", "Enlarged right atrium."}},
      {"hypertrophic", {"Hypertrophic left ventricular walls."}},
      {"regurgitant", {"Regurgitant flow across the tricuspid valve.", "Regurgitant jet at the mitral valve."}},
      {"prolapsed", {"Prolapsed anterior mitral leaflet."}},
      {"shunting", {"Shunting across the atrial septum."}},
  };
  return kSentences;
}

std::vector<std::string> noun_surfaces(const AbnormalityEntity& e) {
  std::vector<std::string> out;
  for (const auto& s : e.synonyms) {
    if (adjective_sentences().count(s) == 0) out.push_back(s);
  }
  if (out.empty()) out.push_back(e.canonical_name);
  return out;
}

template <typename T>
const T& pick(Rng& rng, const std::vector<T>& v) {
  return v[rng.index(v.size())];
}

std::string fixed1(double v) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.1f", v);
  return buf;
}

std::vector<std::vector<std::complex<double>>> site_spectra(const HeartSoundRecord& rec, int* nfft_out) {
  std::vector<std::vector<std::complex<double>>> spectra;
  Eigen::FFT<double> fft;
  fft.SetFlag(Eigen::FFT<double>::HalfSpectrum);
  for (const auto& span : rec.site_spans) {
    const std::size_t len = span.end - span.start;
    int nfft = 1;
    while (static_cast<std::size_t>(nfft) < len) nfft <<= 1;
    std::vector<double> buf(static_cast<std::size_t>(nfft), 0.0);
    for (std::size_t i = 0; i < len; ++i) buf[i] = rec.samples[span.start + i];
    std::vector<std::complex<double>> out;
    fft.fwd(out, buf);
    spectra.push_back(std::move(out));
    *nfft_out = nfft;
  }
  return spectra;
}

double mean_band(const std::vector<std::complex<double>>& spec, int nfft, std::size_t len, int sr, double lo,
                 double hi) {
  const double bin_hz = static_cast<double>(sr) / nfft;
  const auto b0 = static_cast<std::size_t>(std::ceil(lo / bin_hz));
  const auto b1 = std::min(spec.size() - 1, static_cast<std::size_t>(std::floor(hi / bin_hz)));
  if (b1 < b0) return 0.0;
  double acc = 0.0;
  for (std::size_t b = b0; b <= b1; ++b) acc += std::norm(spec[b]);
  return acc / static_cast<double>(b1 - b0 + 1) / static_cast<double>(len);
}

}  // namespace

std::string_view phase_name(MurmurPhase phase) {
  switch (phase) {
    case MurmurPhase::kSystole:
      return "systole";
    case MurmurPhase::kDiastole:
      return "diastole";
    case MurmurPhase::kContinuous:
      return "continuous";
  }
  return "systole";
}

MurmurPhase parse_phase(std::string_view name) {
  if (name == "systole") return MurmurPhase::kSystole;
  if (name == "diastole") return MurmurPhase::kDiastole;
  if (name == "continuous") return MurmurPhase::kContinuous;
  throw ValidationError("unknown murmur phase '" + std::string(name) + "'");
}

void SynthSpec::validate() const {
  const std::size_t k = class_names.size();
  if (k == 0) throw ValidationError("synth spec has no classes");
  if (class_priors.size() != k) throw ValidationError("class_priors length does not match class count");
  if (signatures.size() != k) throw ValidationError("signatures length does not match class count");
  for (double p : class_priors) {
    if (!(p >= 0.0 && p <= 1.0)) throw ValidationError("class prior outside [0, 1]");
  }
  if (!(heart_rate_min_bpm > 0.0 && heart_rate_min_bpm <= heart_rate_max_bpm)) {
    throw ValidationError("heart rate range must satisfy 0 < min <= max");
  }
  if (sample_rate_hz < 2000) throw ValidationError("synthetic sample rate must be at least 2000 Hz");
  if (site_seconds < 15.0) throw ValidationError("site segments must last at least 15 s");
  if (!(noise_floor_rms > 0.0)) throw ValidationError("noise floor must be positive");
  const double nyquist = sample_rate_hz / 2.0;
  std::set<std::tuple<double, double, int>> seen;
  for (const auto& s : signatures) {
    if (!(s.band_low_hz > 0.0 && s.band_low_hz < s.band_high_hz && s.band_high_hz < nyquist)) {
      throw ValidationError("signature band must satisfy 0 < low < high < sample_rate/2");
    }
    if (!seen.emplace(s.band_low_hz, s.band_high_hz, static_cast<int>(s.phase)).second) {
      throw ValidationError("class signatures must be pairwise distinct in (band, phase)");
    }
  }
}

std::vector<ClassSignature> default_signatures(std::size_t num_classes, double snr_db) {
  std::vector<ClassSignature> out;
  for (std::size_t j = 0; j < num_classes; ++j) {
    ClassSignature s;
    s.band_low_hz = 100.0 + 66.0 * static_cast<double>(j);
    s.band_high_hz = s.band_low_hz + 40.0;
    s.phase = static_cast<MurmurPhase>(j % 3);
    s.site_emphasis = kAllSites[j % kNumSites];
    s.snr_db = snr_db;
    out.push_back(s);
  }
  return out;
}

std::vector<double> default_priors() {
  // ASD VSD PVS PDA PFO AS PH Prolapse Regurgitation Shunt Hypertrophy Dilation
  return {0.30, 0.25, 0.12, 0.20, 0.18, 0.10, 0.12, 0.10, 0.35, 0.28, 0.15, 0.22};
}

SynthSpec default_synth_spec(std::size_t n_samples, std::uint64_t seed, double snr_db) {
  SynthSpec s;
  s.n_samples = n_samples;
  s.class_names = default_entity_order();
  s.class_priors = default_priors();
  s.signatures = default_signatures(s.class_names.size(), snr_db);
  s.rng_seed = seed;
  return s;
}

std::string synth_spec_to_json(const SynthSpec& spec) {
  json sigs = json::array();
  for (const auto& s : spec.signatures) {
    sigs.push_back({{"band_low_hz", s.band_low_hz},
                    {"band_high_hz", s.band_high_hz},
                    {"phase", std::string(phase_name(s.phase))},
                    {"site_emphasis", std::string(site_name(s.site_emphasis))},
                    {"snr_db", s.snr_db}});
  }
  json j = {{"n_samples", spec.n_samples},
            {"class_names", spec.class_names},
            {"class_priors", spec.class_priors},
            {"heart_rate_bpm", {spec.heart_rate_min_bpm, spec.heart_rate_max_bpm}},
            {"signatures", sigs},
            {"rng_seed", spec.rng_seed},
            {"sample_rate_hz", spec.sample_rate_hz},
            {"site_seconds", spec.site_seconds},
            {"noise_floor_rms", spec.noise_floor_rms},
            {"off_site_gain", spec.off_site_gain},
            {"ambient_snr_db", spec.ambient_snr_db ? json(*spec.ambient_snr_db) : json(nullptr)}};
  return j.dump(2);
}

SynthSpec synth_spec_from_json(const std::string& text) {
  SynthSpec s;
  try {
    const json j = json::parse(text);
    s.n_samples = j.at("n_samples").get<std::size_t>();
    s.class_names = j.at("class_names").get<std::vector<std::string>>();
    s.class_priors = j.at("class_priors").get<std::vector<double>>();
    const auto hr = j.at("heart_rate_bpm").get<std::vector<double>>();
    if (hr.size() != 2) throw ValidationError("heart_rate_bpm must be [min, max]");
    s.heart_rate_min_bpm = hr[0];
    s.heart_rate_max_bpm = hr[1];
    for (const auto& sj : j.at("signatures")) {
      ClassSignature sig;
      sig.band_low_hz = sj.at("band_low_hz").get<double>();
      sig.band_high_hz = sj.at("band_high_hz").get<double>();
      sig.phase = parse_phase(sj.at("phase").get<std::string>());
      sig.site_emphasis = parse_site(sj.at("site_emphasis").get<std::string>());
      sig.snr_db = sj.at("snr_db").get<double>();
      s.signatures.push_back(sig);
    }
    s.rng_seed = j.at("rng_seed").get<std::uint64_t>();
    s.sample_rate_hz = j.value("sample_rate_hz", 4000);
    s.site_seconds = j.value("site_seconds", 15.0);
    s.noise_floor_rms = j.value("noise_floor_rms", 0.01);
    s.off_site_gain = j.value("off_site_gain", 0.4);
    if (j.contains("ambient_snr_db") && !j.at("ambient_snr_db").is_null()) {
      s.ambient_snr_db = j.at("ambient_snr_db").get<double>();
    }
  } catch (const json::exception& e) {
    throw ValidationError(std::string("malformed synth spec: ") + e.what());
  }
  s.validate();
  return s;
}

HeartSoundRecord gen_sample(const LabelVector& labels, const SynthSpec& spec, std::uint64_t seed) {
  if (labels.size() != spec.num_classes()) {
    throw std::invalid_argument("label vector length " + std::to_string(labels.size()) + " does not match " +
                                std::to_string(spec.num_classes()) + " classes");
  }
  const int sr = spec.sample_rate_hz;
  const auto site_len = static_cast<std::size_t>(std::llround(spec.site_seconds * sr));
  const std::size_t n = site_len * kNumSites;

  HeartSoundRecord rec;
  rec.sample_rate_hz = sr;
  for (int s = 0; s < kNumSites; ++s) {
    rec.site_spans.push_back({kAllSites[static_cast<std::size_t>(s)], site_len * static_cast<std::size_t>(s),
                              site_len * static_cast<std::size_t>(s + 1)});
  }

  // Base signal: S1/S2 pulse train per site plus a white noise floor. Drawn
  // from its own stream so murmurs never perturb it.
  Rng base(mix_seed(seed, 1));
  std::vector<double> x(n, 0.0);
  const double period = 60.0 / base.uniform(spec.heart_rate_min_bpm, spec.heart_rate_max_bpm);
  std::vector<Cycle> cycles;
  for (const auto& span : rec.site_spans) {
    const double seg_start = static_cast<double>(span.start) / sr;
    const double seg_end = static_cast<double>(span.end) / sr;
    double t = seg_start - base.uniform(0.0, period);
    while (t < seg_end) {
      const double len = period * std::clamp(1.0 + 0.03 * base.normal(), 0.9, 1.1);
      const double sys = 0.4 * len;
      const Cycle c{t + 0.03, t + 0.03 + sys, t + len + 0.03, span.site};
      const double a1 = base.uniform(0.35, 0.45);
      const double a2 = base.uniform(0.25, 0.35);
      // Pulses are confined to their own segment.
      add_gabor(x, sr, span.start, span.end, c.s1, a1, 45.0, 0.015);
      add_gabor(x, sr, span.start, span.end, c.s2, a2, 55.0, 0.018);
      cycles.push_back(c);
      t += len;
    }
  }
  for (auto& v : x) v += spec.noise_floor_rms * base.normal();

  // Murmurs.
  for (std::size_t j = 0; j < labels.size(); ++j) {
    if (labels[j] == 0) continue;
    const auto& sig = spec.signatures[j];
    Rng rng(mix_seed(seed, 1000 + j));
    std::vector<double> gate(n, 0.0);
    for (const auto& c : cycles) {
      const double w = c.site == sig.site_emphasis ? 1.0 : spec.off_site_gain;
      const auto& span = rec.site_spans[static_cast<std::size_t>(c.site)];
      const double seg_start = static_cast<double>(span.start) / sr;
      const double seg_end = static_cast<double>(span.end) / sr;
      double a = 0.0;
      double b = 0.0;
      switch (sig.phase) {
        case MurmurPhase::kSystole:
          a = c.s1 + 0.05;
          b = c.s2 - 0.04;
          break;
        case MurmurPhase::kDiastole:
          a = c.s2 + 0.05;
          b = c.next_s1 - 0.05;
          break;
        case MurmurPhase::kContinuous:
          // Uninterrupted across beats; only the segment edges are ramped.
          a = seg_start;
          b = seg_end - 1.0 / sr;
          break;
      }
      a = std::max(a, seg_start);
      b = std::min(b, seg_end - 1.0 / sr);
      add_window(gate, sr, a, b, 0.025, w);
    }
    const double target_rms = spec.noise_floor_rms * std::pow(10.0, sig.snr_db / 20.0);
    const double scale = target_rms / std::sqrt(kMurmurComponents / 2.0);
    std::vector<std::complex<double>> z(kMurmurComponents);
    std::vector<std::complex<double>> step(kMurmurComponents);
    for (int m = 0; m < kMurmurComponents; ++m) {
      const double f = rng.uniform(sig.band_low_hz, sig.band_high_hz);
      z[static_cast<std::size_t>(m)] = std::polar(1.0, rng.uniform(0.0, kTwoPi));
      step[static_cast<std::size_t>(m)] = std::polar(1.0, kTwoPi * f / sr);
    }
    for (std::size_t i = 0; i < n; ++i) {
      double acc = 0.0;
      for (int m = 0; m < kMurmurComponents; ++m) {
        auto& zm = z[static_cast<std::size_t>(m)];
        acc += zm.real();
        zm *= step[static_cast<std::size_t>(m)];
      }
      if ((i & 4095u) == 4095u) {
        for (auto& zm : z) zm /= std::abs(zm);
      }
      x[i] += scale * gate[i] * acc;
    }
  }

  // Optional rubbing transients: short broadband bursts.
  if (spec.ambient_snr_db) {
    Rng amb(mix_seed(seed, 2));
    const double rms = spec.noise_floor_rms * std::pow(10.0, *spec.ambient_snr_db / 20.0);
    for (const auto& span : rec.site_spans) {
      const int bursts = amb.integer(1, 4);
      for (int b = 0; b < bursts; ++b) {
        const auto len = static_cast<std::size_t>(amb.uniform(0.05, 0.2) * sr);
        const std::size_t room = span.end - span.start - len;
        const std::size_t at = span.start + amb.index(room);
        for (std::size_t i = 0; i < len; ++i) {
          const double w = 0.5 - 0.5 * std::cos(kTwoPi * static_cast<double>(i) / static_cast<double>(len));
          x[at + i] += rms * std::sqrt(2.0) * w * amb.normal();
        }
      }
    }
  }

  rec.samples.resize(n);
  for (std::size_t i = 0; i < n; ++i) rec.samples[i] = static_cast<float>(x[i]);
  return rec;
}

EchoReportRaw gen_report(const LabelVector& labels, const AbnormalityCatalog& catalog, std::uint64_t seed,
                         const std::string& report_id) {
  if (labels.size() != catalog.entities.size()) {
    throw std::invalid_argument("label vector length does not match catalog size");
  }
  Rng rng(mix_seed(seed, 7));
  EchoReportRaw r;
  r.report_id = report_id;

  const int lvef = rng.integer(55, 75);
  const int lvidd = rng.integer(28, 50);
  const double vmax = std::round(rng.uniform(0.8, 1.6) * 10.0) / 10.0;
  r.numeric_indices = {{"LVEF", static_cast<double>(lvef), "%"},
                       {"LVIDd", static_cast<double>(lvidd), "mm"},
                       {"Peak velocity", vmax, "m/s"}};
  std::vector<std::string> measurements = {"LVEF " + std::to_string(lvef) + "%.",
                                           "LVIDd " + std::to_string(lvidd) + " mm.",
                                           "Peak velocity " + fixed1(vmax) + " m/s."};

  static const std::vector<std::string> kFiller = {
      "Situs solitus with levocardia.",
      "Normal sinus rhythm during the examination.",
      "Left ventricular systolic function is preserved.",
      "The aortic arch is left-sided.",
      "The mitral valve leaflets are thin and mobile.",
      "Good acoustic windows.",
      "The pericardium appears normal.",
  };
  static const std::vector<std::string> kPositive = {"{A}{S} is seen.", "Findings consistent with {a}{s}.",
                                                     "{A}{S} is present.", "Possible {a}{s}.",
                                                     "There is {a}{s}."};
  static const std::vector<std::string> kNegative = {"No {s}.", "No evidence of {s}.", "Without {s}.",
                                                     "There is no {s}."};
  static const std::vector<std::string> kAdjectives = {"", "mild ", "small ", "moderate "};

  auto fill = [&](std::string tmpl, const std::string& surface, const std::string& adjective) {
    auto replace = [&](const std::string& key, const std::string& value) {
      for (auto p = tmpl.find(key); p != std::string::npos; p = tmpl.find(key, p + value.size())) {
        tmpl.replace(p, key.size(), value);
      }
    };
    replace("{A}", capitalize(adjective));
    replace("{a}", adjective);
    replace("{S}", adjective.empty() ? capitalize(surface) : surface);
    replace("{s}", surface);
    return capitalize(tmpl);
  };

  std::vector<std::string> findings;
  for (std::size_t j = 0; j < labels.size(); ++j) {
    const auto& e = catalog.entities[j];
    if (labels[j] != 0) {
      const std::string surface = e.synonyms.empty() ? e.canonical_name : pick(rng, e.synonyms);
      if (auto it = adjective_sentences().find(surface); it != adjective_sentences().end()) {
        findings.push_back(pick(rng, it->second));
      } else {
        const std::string& adj = pick(rng, kAdjectives);
        findings.push_back(fill(pick(rng, kPositive), display(surface), adj));
      }
    } else if (rng.bernoulli(0.2)) {
      findings.push_back(fill(pick(rng, kNegative), display(pick(rng, noun_surfaces(e))), ""));
    }
  }
  for (int f = 0; f < 2; ++f) findings.push_back(pick(rng, kFiller));
  if (rng.bernoulli(0.01)) findings.push_back("Bicuspid aortic valve morphology.");
  rng.shuffle(findings.begin(), findings.end());

  std::string desc;
  for (const auto& s : measurements) desc += (desc.empty() ? "" : " ") + s;
  for (const auto& s : findings) desc += " " + s;
  r.description = desc;

  std::string diag;
  for (std::size_t j = 0; j < labels.size(); ++j) {
    if (labels[j] == 0) continue;
    diag += diag.empty() ? capitalize(catalog.entities[j].annotation()) : "; " + catalog.entities[j].annotation();
  }
  r.diagnosis = diag.empty() ? "normal study" : diag + ".";
  return r;
}

std::string sample_id(std::size_t index) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "S%05zu", index);
  return buf;
}

std::uint64_t sample_seed(const SynthSpec& spec, std::size_t index) { return mix_seed(spec.rng_seed, index); }

LabelVector gen_labels(const SynthSpec& spec, std::size_t index) {
  Rng rng(mix_seed(sample_seed(spec, index), 3));
  LabelVector labels(spec.num_classes(), 0);
  for (std::size_t j = 0; j < labels.size(); ++j) labels[j] = rng.bernoulli(spec.class_priors[j]) ? 1 : 0;
  return labels;
}

SynthCorpus gen_corpus(const SynthSpec& spec, const AbnormalityCatalog& catalog) {
  spec.validate();
  if (spec.n_samples < 10) throw ValidationError("synthetic corpus needs at least 10 samples");
  if (catalog.entities.size() != spec.num_classes()) {
    throw ValidationError("catalog and synth spec disagree on the number of classes");
  }
  for (std::size_t j = 0; j < spec.num_classes(); ++j) {
    if (catalog.entities[j].canonical_name != spec.class_names[j]) {
      throw ValidationError("class " + std::to_string(j) + " is '" + spec.class_names[j] + "' in the synth spec but '" +
                            catalog.entities[j].canonical_name + "' in the catalog");
    }
  }
  SynthCorpus c;
  for (std::size_t i = 0; i < spec.n_samples; ++i) {
    const auto seed = sample_seed(spec, i);
    auto labels = gen_labels(spec, i);
    auto rec = gen_sample(labels, spec, seed);
    rec.record_id = sample_id(i);
    c.reports.push_back(gen_report(labels, catalog, seed, rec.record_id));
    c.records.push_back(std::move(rec));
    c.labels.push_back(std::move(labels));
  }
  return c;
}

double band_power(const std::vector<float>& samples, std::size_t begin, std::size_t end, int sample_rate_hz,
                  double lo_hz, double hi_hz) {
  if (end <= begin || end > samples.size()) throw std::invalid_argument("band_power: bad sample range");
  HeartSoundRecord tmp;
  tmp.sample_rate_hz = sample_rate_hz;
  tmp.samples.assign(samples.begin() + static_cast<std::ptrdiff_t>(begin),
                     samples.begin() + static_cast<std::ptrdiff_t>(end));
  tmp.site_spans.push_back({Site::kAortic, 0, end - begin});
  int nfft = 0;
  const auto spectra = site_spectra(tmp, &nfft);
  return mean_band(spectra[0], nfft, end - begin, sample_rate_hz, lo_hz, hi_hz);
}

BandPowerOracle::BandPowerOracle(SynthSpec spec) : spec_(std::move(spec)) {
  spec_.validate();
  thresholds_.assign(spec_.num_classes(), 0.0);
}

std::vector<double> BandPowerOracle::score(const HeartSoundRecord& record) const {
  int nfft = 0;
  const auto spectra = site_spectra(record, &nfft);
  std::vector<double> out;
  for (const auto& sig : spec_.signatures) {
    const auto idx = static_cast<std::size_t>(sig.site_emphasis);
    if (idx >= spectra.size()) throw ValidationError("record lacks the emphasized site segment");
    const auto& span = record.site_spans[idx];
    const double p = mean_band(spectra[idx], nfft, span.end - span.start, record.sample_rate_hz, sig.band_low_hz,
                               sig.band_high_hz);
    out.push_back(std::log(std::max(p, 1e-30)));
  }
  return out;
}

void BandPowerOracle::fit(const std::vector<std::vector<double>>& scores, const std::vector<LabelVector>& labels) {
  if (scores.size() != labels.size() || scores.empty()) throw std::invalid_argument("oracle fit: size mismatch");
  for (std::size_t j = 0; j < spec_.num_classes(); ++j) {
    std::vector<double> v;
    for (const auto& s : scores) v.push_back(s[j]);
    std::sort(v.begin(), v.end());
    v.erase(std::unique(v.begin(), v.end()), v.end());
    std::vector<double> candidates = {v.front() - 1.0};
    for (std::size_t i = 0; i + 1 < v.size(); ++i) candidates.push_back(0.5 * (v[i] + v[i + 1]));
    double best_f1 = -1.0;
    for (double t : candidates) {
      std::size_t tp = 0, fp = 0, fn = 0;
      for (std::size_t i = 0; i < scores.size(); ++i) {
        const bool pred = scores[i][j] > t;
        const bool truth = labels[i][j] != 0;
        tp += pred && truth;
        fp += pred && !truth;
        fn += !pred && truth;
      }
      const double denom = static_cast<double>(2 * tp + fp + fn);
      const double f1 = denom == 0.0 ? 1.0 : 2.0 * static_cast<double>(tp) / denom;
      if (f1 > best_f1) {
        best_f1 = f1;
        thresholds_[j] = t;
      }
    }
  }
}

LabelVector BandPowerOracle::predict(const std::vector<double>& scores) const {
  LabelVector out(scores.size(), 0);
  for (std::size_t j = 0; j < scores.size(); ++j) out[j] = scores[j] > thresholds_[j] ? 1 : 0;
  return out;
}

}  // namespace hsd
