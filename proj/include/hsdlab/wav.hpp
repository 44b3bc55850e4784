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

#ifndef HSDLAB_WAV_HPP_
#define HSDLAB_WAV_HPP_

#include <string>
#include <vector>

#include "hsdlab/audiofeat.hpp"

namespace hsd {

/// RIFF/WAVE PCM16 mono. Samples are clamped to [-1, 1] before quantization.
void write_wav_pcm16(const std::string& path, const std::vector<float>& samples, int sample_rate_hz);

struct WavData {
  std::vector<float> samples;
  int sample_rate_hz = 0;
};
WavData read_wav_pcm16(const std::string& path);

/// Writes `<stem>.wav` and `<stem>.json` (record_id, sample_rate_hz, site_spans).
void write_record(const std::string& stem, const HeartSoundRecord& record);
/// Reads a record written by write_record(); the sidecar must agree with the
/// WAV header on sample rate.
HeartSoundRecord read_record(const std::string& stem);

}  // namespace hsd

#endif  // HSDLAB_WAV_HPP_
