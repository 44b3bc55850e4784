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

// Heart-sound records, log mel filter-bank extraction and training-time
// augmentation.

#ifndef HSDLAB_AUDIOFEAT_HPP_
#define HSDLAB_AUDIOFEAT_HPP_

#include <Eigen/Dense>

#include <array>
#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace hsd {

/// Auscultation sites in recording order.
enum class Site { kAortic = 0, kPulmonic, kErb, kTricuspid, kMitral };
inline constexpr int kNumSites = 5;
inline constexpr std::array<Site, kNumSites> kAllSites = {Site::kAortic, Site::kPulmonic, Site::kErb,
                                                          Site::kTricuspid, Site::kMitral};

std::string_view site_name(Site site);
Site parse_site(std::string_view name);

struct SiteSpan {
  Site site = Site::kAortic;
  std::size_t start = 0;  // first sample
  std::size_t end = 0;    // one past the last sample
};

/// Mono recording with the five site segments concatenated in time.
struct HeartSoundRecord {
  std::string record_id;
  std::vector<float> samples;
  int sample_rate_hz = 4000;
  std::vector<SiteSpan> site_spans;

  double duration_seconds() const {
    return static_cast<double>(samples.size()) / static_cast<double>(sample_rate_hz);
  }
};

/// Throws ValidationError unless spans are ordered, non-overlapping, cover
/// the whole signal, each last at least min_site_seconds, and the total is
/// within +/- total_tolerance (fraction) of nominal_total_seconds.
void validate_record(const HeartSoundRecord& record, double min_site_seconds = 15.0,
                     double nominal_total_seconds = 75.0, double total_tolerance = 0.5);

using FeatureMatrix = Eigen::MatrixXf;

struct FilterBankOptions {
  int num_mel_bins = 64;
  double frame_length_ms = 100.0;
  double frame_shift_ms = 40.0;
  double low_freq_hz = 0.0;
  double high_freq_hz = 0.0;  // <= 0 means Nyquist
  double log_floor = 1e-10;
};

/// Framed log mel energies; rows are frames, columns are mel bins.
struct FilterBankFeatures {
  FeatureMatrix frames;
  double frame_length_ms = 100.0;
  double frame_shift_ms = 40.0;
  int num_mel_bins = 64;
  int sample_rate_hz = 4000;

  Eigen::Index num_frames() const { return frames.rows(); }
};

/// 1 + floor((n - frame_len) / shift) in samples, or 0 when shorter than a frame.
std::size_t expected_num_frames(std::size_t num_samples, int sample_rate_hz,
                                double frame_length_ms = 100.0, double frame_shift_ms = 40.0);

/// Reusable extractor: Hann window, power spectrum, HTK-mel triangular filters,
/// natural log with a floor. Thread-safe.
class FilterBankExtractor {
 public:
  FilterBankExtractor(int sample_rate_hz, FilterBankOptions options = {});

  FilterBankFeatures compute(std::span<const float> samples) const;

  int frame_length() const { return frame_length_; }
  int frame_shift() const { return frame_shift_; }
  int fft_size() const { return fft_size_; }
  /// (fft_size/2 + 1) x num_mel_bins.
  const Eigen::MatrixXd& mel_weights() const { return mel_weights_; }

 private:
  int sample_rate_hz_;
  FilterBankOptions options_;
  int frame_length_;
  int frame_shift_;
  int fft_size_;
  Eigen::VectorXd window_;
  Eigen::MatrixXd mel_weights_;
};

FilterBankFeatures compute_filterbanks(const HeartSoundRecord& record, int num_mel_bins = 64);

struct ValueRange {
  double lo = 0.0;
  double hi = 0.0;
};

/// Which augmentations run and their parameter ranges. Waveform ops run in the
/// order speed, chunk drop, amplify, clip, noise; SpecAugment runs on features.
struct AugmentPolicy {
  bool chunk_drop = false;
  int max_chunks = 3;
  double max_drop_fraction = 0.10;  // of total duration, summed over chunks

  bool speed_perturb = false;
  std::vector<double> speed_factors = {0.95, 1.0, 1.05};

  bool clip = false;
  double clip_fraction = 0.9;  // of peak absolute amplitude

  bool noise = false;
  ValueRange noise_snr_db = {15.0, 30.0};

  bool amplify = false;
  ValueRange gain = {0.5, 2.0};

  bool spec_augment = false;
  int time_masks = 2;
  ValueRange time_mask_width = {0.0, 40.0};  // frames
  int freq_masks = 2;
  ValueRange freq_mask_width = {0.0, 8.0};  // mel bins

  std::uint64_t seed = 0;

  bool any_waveform_op() const { return chunk_drop || speed_perturb || clip || noise || amplify; }
  bool any_op() const { return any_waveform_op() || spec_augment; }

  /// Everything off.
  static AugmentPolicy none() { return AugmentPolicy{}; }
  /// Every op on with the documented default ranges.
  static AugmentPolicy all_defaults();

  /// Throws ValidationError when a range leaves its documented bounds.
  void validate() const;

  /// Copy with a different seed (for per-step derivation).
  AugmentPolicy with_seed(std::uint64_t s) const {
    AugmentPolicy p = *this;
    p.seed = s;
    return p;
  }
};

HeartSoundRecord augment(const HeartSoundRecord& record, const AugmentPolicy& policy);
FilterBankFeatures augment_spec(const FilterBankFeatures& features, const AugmentPolicy& policy);

/// Feature cache file: uint32 LE num_frames, uint32 LE num_bins, then
/// row-major float32 LE values.
void write_feature_cache(const std::string& path, const FeatureMatrix& frames);
FeatureMatrix read_feature_cache(const std::string& path);

}  // namespace hsd

#endif  // HSDLAB_AUDIOFEAT_HPP_
