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

#include "hsdlab/audiofeat.hpp"

#include <unsupported/Eigen/FFT>

#include <algorithm>
#include <cmath>
#include <complex>
#include <cstring>
#include <fstream>
#include <sstream>

#include "hsdlab/common.hpp"

namespace hsd {
namespace {

constexpr double kPi = 3.14159265358979323846;

double hz_to_mel(double hz) { return 1127.0 * std::log(1.0 + hz / 700.0); }

int round_to_int(double x) { return static_cast<int>(std::lround(x)); }

}  // namespace

std::string_view site_name(Site site) {
  switch (site) {
    case Site::kAortic:
      return "aortic";
    case Site::kPulmonic:
      return "pulmonic";
    case Site::kErb:
      return "erb";
    case Site::kTricuspid:
      return "tricuspid";
    case Site::kMitral:
      return "mitral";
  }
  return "unknown";
}

Site parse_site(std::string_view name) {
  for (Site s : kAllSites) {
    if (site_name(s) == name) return s;
  }
  throw ValidationError("unknown auscultation site '" + std::string(name) + "'");
}

void validate_record(const HeartSoundRecord& record, double min_site_seconds,
                     double nominal_total_seconds, double total_tolerance) {
  if (record.sample_rate_hz <= 0) throw ValidationError(record.record_id + ": sample rate must be positive");
  if (record.site_spans.empty()) throw ValidationError(record.record_id + ": no site spans");
  std::size_t expected_start = 0;
  const double sr = record.sample_rate_hz;
  for (const auto& span : record.site_spans) {
    if (span.start != expected_start || span.end <= span.start) {
      throw ValidationError(record.record_id + ": site spans must be ordered, contiguous and non-empty");
    }
    const double seconds = static_cast<double>(span.end - span.start) / sr;
    if (seconds + 1e-9 < min_site_seconds) {
      std::ostringstream msg;
      msg << record.record_id << ": site " << site_name(span.site) << " lasts " << seconds
          << " s, below the " << min_site_seconds << " s minimum";
      throw ValidationError(msg.str());
    }
    expected_start = span.end;
  }
  if (expected_start != record.samples.size()) {
    throw ValidationError(record.record_id + ": site spans do not cover the recording");
  }
  const double total = record.duration_seconds();
  if (std::abs(total - nominal_total_seconds) > total_tolerance * nominal_total_seconds) {
    std::ostringstream msg;
    msg << record.record_id << ": total duration " << total << " s is outside "
        << nominal_total_seconds << " s +/- " << total_tolerance * 100 << "%";
    throw ValidationError(msg.str());
  }
}

std::size_t expected_num_frames(std::size_t num_samples, int sample_rate_hz, double frame_length_ms,
                                double frame_shift_ms) {
  const auto len = static_cast<std::size_t>(round_to_int(sample_rate_hz * frame_length_ms / 1000.0));
  const auto shift = static_cast<std::size_t>(round_to_int(sample_rate_hz * frame_shift_ms / 1000.0));
  if (num_samples < len || len == 0 || shift == 0) return 0;
  return 1 + (num_samples - len) / shift;
}

FilterBankExtractor::FilterBankExtractor(int sample_rate_hz, FilterBankOptions options)
    : sample_rate_hz_(sample_rate_hz), options_(options) {
  if (sample_rate_hz < 2000) throw ValidationError("sample rate must be at least 2 kHz");
  if (options.num_mel_bins < 1) throw ValidationError("num_mel_bins must be positive");
  frame_length_ = round_to_int(sample_rate_hz * options.frame_length_ms / 1000.0);
  frame_shift_ = round_to_int(sample_rate_hz * options.frame_shift_ms / 1000.0);
  if (frame_length_ < 2 || frame_shift_ < 1) throw ValidationError("frame length/shift too small");
  fft_size_ = 1;
  while (fft_size_ < frame_length_) fft_size_ *= 2;

  // Symmetric Hann window.
  window_.resize(frame_length_);
  for (int i = 0; i < frame_length_; ++i) {
    window_(i) = 0.5 - 0.5 * std::cos(2.0 * kPi * i / (frame_length_ - 1));
  }

  const double nyquist = 0.5 * sample_rate_hz;
  const double high = options.high_freq_hz > 0.0 ? std::min(options.high_freq_hz, nyquist) : nyquist;
  const double low = std::max(0.0, options.low_freq_hz);
  if (!(high > low)) throw ValidationError("mel filter range is empty");
  const double mel_low = hz_to_mel(low);
  const double mel_high = hz_to_mel(high);
  const int bins = options.num_mel_bins;
  const double mel_step = (mel_high - mel_low) / (bins + 1);
  const int num_fft_bins = fft_size_ / 2 + 1;
  mel_weights_ = Eigen::MatrixXd::Zero(num_fft_bins, bins);
  for (int m = 0; m < bins; ++m) {
    const double left = mel_low + m * mel_step;
    const double center = left + mel_step;
    const double right = center + mel_step;
    for (int k = 0; k < num_fft_bins; ++k) {
      const double mel = hz_to_mel(static_cast<double>(k) * sample_rate_hz / fft_size_);
      if (mel > left && mel < right) {
        mel_weights_(k, m) = mel <= center ? (mel - left) / (center - left) : (right - mel) / (right - center);
      }
    }
  }
}

FilterBankFeatures FilterBankExtractor::compute(std::span<const float> samples) const {
  const std::size_t num_frames = expected_num_frames(samples.size(), sample_rate_hz_,
                                                     options_.frame_length_ms, options_.frame_shift_ms);
  if (num_frames == 0) throw ValidationError("input shorter than one frame");
  const int num_fft_bins = fft_size_ / 2 + 1;

  Eigen::FFT<double> fft;
  fft.SetFlag(Eigen::FFT<double>::HalfSpectrum);
  std::vector<double> frame(static_cast<std::size_t>(fft_size_), 0.0);
  std::vector<std::complex<double>> spectrum;
  Eigen::MatrixXd power(static_cast<Eigen::Index>(num_frames), num_fft_bins);
  for (std::size_t f = 0; f < num_frames; ++f) {
    const std::size_t offset = f * static_cast<std::size_t>(frame_shift_);
    double mean = 0.0;
    for (int i = 0; i < frame_length_; ++i) mean += samples[offset + i];
    mean /= frame_length_;
    for (int i = 0; i < frame_length_; ++i) {
      frame[static_cast<std::size_t>(i)] = (samples[offset + i] - mean) * window_(i);
    }
    std::fill(frame.begin() + frame_length_, frame.end(), 0.0);
    fft.fwd(spectrum, frame);
    for (int k = 0; k < num_fft_bins; ++k) {
      power(static_cast<Eigen::Index>(f), k) = std::norm(spectrum[static_cast<std::size_t>(k)]);
    }
  }
  const Eigen::MatrixXd energies = power * mel_weights_;
  FilterBankFeatures out;
  out.frames.resize(energies.rows(), energies.cols());
  for (Eigen::Index c = 0; c < energies.cols(); ++c) {
    for (Eigen::Index r = 0; r < energies.rows(); ++r) {
      out.frames(r, c) = static_cast<float>(std::log(std::max(energies(r, c), options_.log_floor)));
    }
  }
  out.frame_length_ms = options_.frame_length_ms;
  out.frame_shift_ms = options_.frame_shift_ms;
  out.num_mel_bins = options_.num_mel_bins;
  out.sample_rate_hz = sample_rate_hz_;
  return out;
}

FilterBankFeatures compute_filterbanks(const HeartSoundRecord& record, int num_mel_bins) {
  FilterBankOptions options;
  options.num_mel_bins = num_mel_bins;
  FilterBankExtractor extractor(record.sample_rate_hz, options);
  return extractor.compute(record.samples);
}

AugmentPolicy AugmentPolicy::all_defaults() {
  AugmentPolicy p;
  p.chunk_drop = true;
  p.speed_perturb = true;
  p.clip = true;
  p.noise = true;
  p.amplify = true;
  p.spec_augment = true;
  return p;
}

void AugmentPolicy::validate() const {
  auto fail = [](const std::string& what) { throw ValidationError("augment policy: " + what); };
  auto within = [](ValueRange r, double lo, double hi) { return r.lo <= r.hi && r.lo >= lo && r.hi <= hi; };
  if (max_chunks < 1 || max_chunks > 10) fail("max_chunks must be in [1, 10]");
  if (max_drop_fraction < 0.0 || max_drop_fraction > 0.10) fail("chunk drop fraction must be in [0, 0.1]");
  if (speed_factors.empty()) fail("speed_factors is empty");
  for (double f : speed_factors) {
    if (f < 0.95 || f > 1.05) fail("speed factor outside [0.95, 1.05]");
  }
  if (clip_fraction <= 0.0 || clip_fraction > 1.0) fail("clip_fraction must be in (0, 1]");
  if (!within(noise_snr_db, 15.0, 30.0)) fail("noise SNR range outside [15, 30] dB");
  if (!within(gain, 0.5, 2.0)) fail("gain range outside [0.5, 2.0]");
  if (time_masks < 0 || time_masks > 2) fail("time_masks must be in [0, 2]");
  if (!within(time_mask_width, 0.0, 40.0)) fail("time mask width outside [0, 40] frames");
  if (freq_masks < 0 || freq_masks > 2) fail("freq_masks must be in [0, 2]");
  if (!within(freq_mask_width, 0.0, 8.0)) fail("freq mask width outside [0, 8] bins");
}

HeartSoundRecord augment(const HeartSoundRecord& record, const AugmentPolicy& policy) {
  policy.validate();
  HeartSoundRecord out = record;
  if (!policy.any_waveform_op() || record.samples.empty()) return out;
  Rng rng(mix_seed(policy.seed, 0xa11));

  if (policy.speed_perturb) {
    const double factor = policy.speed_factors[rng.index(policy.speed_factors.size())];
    if (factor != 1.0) {
      const std::size_t n_in = record.samples.size();
      const auto n_out = static_cast<std::size_t>(std::llround(static_cast<double>(n_in) / factor));
      out.samples.assign(n_out, 0.0f);
      for (std::size_t i = 0; i < n_out; ++i) {
        const double pos = static_cast<double>(i) * factor;
        const auto i0 = static_cast<std::size_t>(pos);
        const double frac = pos - static_cast<double>(i0);
        const float a = record.samples[std::min(i0, n_in - 1)];
        const float b = record.samples[std::min(i0 + 1, n_in - 1)];
        out.samples[i] = static_cast<float>(a + (b - a) * frac);
      }
      for (std::size_t s = 0; s < out.site_spans.size(); ++s) {
        auto& span = out.site_spans[s];
        span.start = std::min(n_out, static_cast<std::size_t>(std::llround(span.start / factor)));
        span.end = s + 1 == out.site_spans.size()
                       ? n_out
                       : std::min(n_out, static_cast<std::size_t>(std::llround(span.end / factor)));
      }
    }
  }

  auto& x = out.samples;
  const std::size_t n = x.size();

  if (policy.chunk_drop && n > 0) {
    const int chunks = rng.integer(1, policy.max_chunks);
    const double budget = policy.max_drop_fraction * static_cast<double>(n) / chunks;
    for (int c = 0; c < chunks; ++c) {
      const auto len = static_cast<std::size_t>(rng.uniform() * budget);
      if (len == 0) continue;
      const std::size_t start = rng.index(n - len + 1);
      std::fill(x.begin() + static_cast<std::ptrdiff_t>(start),
                x.begin() + static_cast<std::ptrdiff_t>(start + len), 0.0f);
    }
  }

  if (policy.amplify) {
    const double g = rng.uniform(policy.gain.lo, policy.gain.hi);
    for (auto& v : x) v = static_cast<float>(v * g);
  }

  if (policy.clip && n > 0) {
    float peak = 0.0f;
    for (float v : x) peak = std::max(peak, std::abs(v));
    const float limit = static_cast<float>(policy.clip_fraction * peak);
    for (auto& v : x) v = std::clamp(v, -limit, limit);
  }

  if (policy.noise && n > 0) {
    double power = 0.0;
    for (float v : x) power += static_cast<double>(v) * v;
    power /= static_cast<double>(n);
    const double snr = rng.uniform(policy.noise_snr_db.lo, policy.noise_snr_db.hi);
    const double sigma = std::sqrt(power / std::pow(10.0, snr / 10.0));
    for (auto& v : x) v = static_cast<float>(v + sigma * rng.normal());
  }
  return out;
}

FilterBankFeatures augment_spec(const FilterBankFeatures& features, const AugmentPolicy& policy) {
  policy.validate();
  FilterBankFeatures out = features;
  if (!policy.spec_augment || features.frames.size() == 0) return out;
  Rng rng(mix_seed(policy.seed, 0x5bec));
  const float mean = features.frames.mean();
  const auto frames = static_cast<int>(features.frames.rows());
  const auto bins = static_cast<int>(features.frames.cols());
  auto width = [&](ValueRange r, int limit) {
    const int w = rng.integer(round_to_int(std::ceil(r.lo)), round_to_int(std::floor(r.hi)));
    return std::min(w, limit);
  };
  for (int m = 0; m < policy.time_masks; ++m) {
    const int w = width(policy.time_mask_width, frames);
    const int start = static_cast<int>(rng.index(static_cast<std::size_t>(frames - w + 1)));
    out.frames.middleRows(start, w).setConstant(mean);
  }
  for (int m = 0; m < policy.freq_masks; ++m) {
    const int w = width(policy.freq_mask_width, bins);
    const int start = static_cast<int>(rng.index(static_cast<std::size_t>(bins - w + 1)));
    out.frames.middleCols(start, w).setConstant(mean);
  }
  return out;
}

namespace {

void put_u32(std::ostream& os, std::uint32_t v) {
  const unsigned char b[4] = {static_cast<unsigned char>(v), static_cast<unsigned char>(v >> 8),
                              static_cast<unsigned char>(v >> 16), static_cast<unsigned char>(v >> 24)};
  os.write(reinterpret_cast<const char*>(b), 4);
}

std::uint32_t get_u32(std::istream& is) {
  unsigned char b[4];
  if (!is.read(reinterpret_cast<char*>(b), 4)) throw ValidationError("truncated feature cache");
  return static_cast<std::uint32_t>(b[0]) | static_cast<std::uint32_t>(b[1]) << 8 |
         static_cast<std::uint32_t>(b[2]) << 16 | static_cast<std::uint32_t>(b[3]) << 24;
}

}  // namespace

void write_feature_cache(const std::string& path, const FeatureMatrix& frames) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw RuntimeAbort("cannot write feature cache " + path);
  put_u32(os, static_cast<std::uint32_t>(frames.rows()));
  put_u32(os, static_cast<std::uint32_t>(frames.cols()));
  for (Eigen::Index r = 0; r < frames.rows(); ++r) {
    for (Eigen::Index c = 0; c < frames.cols(); ++c) {
      std::uint32_t bits;
      const float v = frames(r, c);
      std::memcpy(&bits, &v, 4);
      put_u32(os, bits);
    }
  }
}

FeatureMatrix read_feature_cache(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw ValidationError("cannot open feature cache " + path);
  const std::uint32_t rows = get_u32(is);
  const std::uint32_t cols = get_u32(is);
  FeatureMatrix m(rows, cols);
  for (std::uint32_t r = 0; r < rows; ++r) {
    for (std::uint32_t c = 0; c < cols; ++c) {
      const std::uint32_t bits = get_u32(is);
      float v;
      std::memcpy(&v, &bits, 4);
      m(r, c) = v;
    }
  }
  return m;
}

}  // namespace hsd
