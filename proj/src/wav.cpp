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

#include "hsdlab/wav.hpp"

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <fstream>

#include "hsdlab/common.hpp"
#include "json.hpp"

namespace hsd {
namespace {

void put_le(std::string& buf, std::uint32_t v, int bytes) {
  for (int i = 0; i < bytes; ++i) buf.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

std::uint32_t get_le(const std::string& buf, std::size_t pos, int bytes) {
  std::uint32_t v = 0;
  for (int i = 0; i < bytes; ++i) {
    v |= static_cast<std::uint32_t>(static_cast<unsigned char>(buf[pos + i])) << (8 * i);
  }
  return v;
}

}  // namespace

void write_wav_pcm16(const std::string& path, const std::vector<float>& samples, int sample_rate_hz) {
  const auto data_bytes = static_cast<std::uint32_t>(samples.size() * 2);
  std::string buf;
  buf.reserve(44 + data_bytes);
  buf += "RIFF";
  put_le(buf, 36 + data_bytes, 4);
  buf += "WAVEfmt ";
  put_le(buf, 16, 4);
  put_le(buf, 1, 2);  // PCM
  put_le(buf, 1, 2);  // mono
  put_le(buf, static_cast<std::uint32_t>(sample_rate_hz), 4);
  put_le(buf, static_cast<std::uint32_t>(sample_rate_hz) * 2, 4);
  put_le(buf, 2, 2);
  put_le(buf, 16, 2);
  buf += "data";
  put_le(buf, data_bytes, 4);
  for (float s : samples) {
    const float c = std::clamp(s, -1.0f, 1.0f);
    const auto q = static_cast<std::int16_t>(std::lround(c * 32767.0f));
    put_le(buf, static_cast<std::uint16_t>(q), 2);
  }
  std::ofstream os(path, std::ios::binary);
  if (!os || !os.write(buf.data(), static_cast<std::streamsize>(buf.size()))) {
    throw RuntimeAbort("cannot write " + path);
  }
}

WavData read_wav_pcm16(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw ValidationError("cannot open " + path);
  std::string buf((std::istreambuf_iterator<char>(is)), std::istreambuf_iterator<char>());
  if (buf.size() < 12 || buf.compare(0, 4, "RIFF") != 0 || buf.compare(8, 4, "WAVE") != 0) {
    throw ValidationError(path + ": not a RIFF/WAVE file");
  }
  WavData out;
  bool have_fmt = false;
  std::size_t pos = 12;
  while (pos + 8 <= buf.size()) {
    const std::string id = buf.substr(pos, 4);
    const std::uint32_t size = get_le(buf, pos + 4, 4);
    const std::size_t body = pos + 8;
    if (body + size > buf.size()) throw ValidationError(path + ": truncated chunk '" + id + "'");
    if (id == "fmt ") {
      if (get_le(buf, body, 2) != 1 || get_le(buf, body + 2, 2) != 1 || get_le(buf, body + 14, 2) != 16) {
        throw ValidationError(path + ": only PCM16 mono is supported");
      }
      out.sample_rate_hz = static_cast<int>(get_le(buf, body + 4, 4));
      have_fmt = true;
    } else if (id == "data") {
      if (!have_fmt) throw ValidationError(path + ": data chunk before fmt chunk");
      out.samples.resize(size / 2);
      for (std::size_t i = 0; i < out.samples.size(); ++i) {
        const auto q = static_cast<std::int16_t>(get_le(buf, body + 2 * i, 2));
        out.samples[i] = static_cast<float>(q) / 32767.0f;
      }
      return out;
    }
    pos = body + size + (size & 1);
  }
  throw ValidationError(path + ": no data chunk");
}

void write_record(const std::string& stem, const HeartSoundRecord& record) {
  write_wav_pcm16(stem + ".wav", record.samples, record.sample_rate_hz);
  nlohmann::json side;
  side["record_id"] = record.record_id;
  side["sample_rate_hz"] = record.sample_rate_hz;
  side["site_spans"] = nlohmann::json::array();
  for (const auto& s : record.site_spans) {
    side["site_spans"].push_back({{"site", std::string(site_name(s.site))},
                                  {"start_sample", s.start},
                                  {"end_sample", s.end}});
  }
  std::ofstream os(stem + ".json");
  if (!os) throw RuntimeAbort("cannot write " + stem + ".json");
  os << side.dump(2) << "\n";
}

HeartSoundRecord read_record(const std::string& stem) {
  std::ifstream is(stem + ".json");
  if (!is) throw ValidationError("cannot open sidecar " + stem + ".json");
  nlohmann::json side;
  try {
    side = nlohmann::json::parse(is);
  } catch (const nlohmann::json::exception& e) {
    throw ValidationError(stem + ".json: " + e.what());
  }
  HeartSoundRecord rec;
  try {
    rec.record_id = side.at("record_id").get<std::string>();
    rec.sample_rate_hz = side.at("sample_rate_hz").get<int>();
    for (const auto& s : side.at("site_spans")) {
      rec.site_spans.push_back(SiteSpan{parse_site(s.at("site").get<std::string>()),
                                        s.at("start_sample").get<std::size_t>(),
                                        s.at("end_sample").get<std::size_t>()});
    }
  } catch (const nlohmann::json::exception& e) {
    throw ValidationError(stem + ".json: " + e.what());
  }
  WavData wav = read_wav_pcm16(stem + ".wav");
  if (wav.sample_rate_hz != rec.sample_rate_hz) {
    throw ValidationError(stem + ": sidecar sample rate disagrees with WAV header");
  }
  rec.samples = std::move(wav.samples);
  return rec;
}

}  // namespace hsd
