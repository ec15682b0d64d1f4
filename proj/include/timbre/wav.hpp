// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <algorithm>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <string>
#include <vector>

#include "timbre/common.hpp"

namespace timbre {

enum class WavFormat { kPcm16, kPcm24, kFloat32 };

struct WavData {
  int sample_rate = 0;
  int channels = 0;
  // Interleaved, scaled to [-1, 1].
  std::vector<float> samples;

  int64_t frames() const { return channels ? int64_t(samples.size()) / channels : 0; }
};

namespace detail {

inline uint32_t read_u32(const uint8_t* p) {
  return uint32_t(p[0]) | uint32_t(p[1]) << 8 | uint32_t(p[2]) << 16 | uint32_t(p[3]) << 24;
}
inline uint16_t read_u16(const uint8_t* p) { return uint16_t(p[0] | p[1] << 8); }

inline void put_u32(std::string& out, uint32_t v) {
  out.push_back(char(v & 0xff));
  out.push_back(char((v >> 8) & 0xff));
  out.push_back(char((v >> 16) & 0xff));
  out.push_back(char((v >> 24) & 0xff));
}
inline void put_u16(std::string& out, uint16_t v) {
  out.push_back(char(v & 0xff));
  out.push_back(char((v >> 8) & 0xff));
}

}  // namespace detail

// RIFF/WAVE reader. PCM 16/24-bit and IEEE float 32-bit, 1-2 channels,
// little-endian. Unknown chunks are skipped.
inline WavData read_wav(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw IoError("cannot open wav file: " + path);
  std::vector<uint8_t> bytes((std::istreambuf_iterator<char>(f)),
                             std::istreambuf_iterator<char>());
  if (bytes.size() < 12 || std::memcmp(bytes.data(), "RIFF", 4) != 0 ||
      std::memcmp(bytes.data() + 8, "WAVE", 4) != 0)
    throw FormatError("not a RIFF/WAVE file: " + path);

  size_t pos = 12;
  bool have_fmt = false;
  uint16_t audio_format = 0, channels = 0, bits = 0;
  uint32_t rate = 0;
  const uint8_t* data_ptr = nullptr;
  uint32_t data_len = 0;

  while (pos + 8 <= bytes.size()) {
    const uint8_t* hdr = bytes.data() + pos;
    uint32_t chunk_len = detail::read_u32(hdr + 4);
    const uint8_t* body = hdr + 8;
    if (pos + 8 + chunk_len > bytes.size()) {
      // Tolerate a truncated final data chunk length only if it is "data".
      if (std::memcmp(hdr, "data", 4) == 0) chunk_len = uint32_t(bytes.size() - pos - 8);
      else throw FormatError("truncated chunk in wav file: " + path);
    }
    if (std::memcmp(hdr, "fmt ", 4) == 0) {
      if (chunk_len < 16) throw FormatError("fmt chunk too short: " + path);
      audio_format = detail::read_u16(body);
      channels = detail::read_u16(body + 2);
      rate = detail::read_u32(body + 4);
      bits = detail::read_u16(body + 14);
      if (audio_format == 0xFFFE) {
        // WAVE_FORMAT_EXTENSIBLE: sub-format GUID starts at offset 24.
        if (chunk_len < 40) throw FormatError("extensible fmt chunk too short: " + path);
        audio_format = detail::read_u16(body + 24);
      }
      have_fmt = true;
    } else if (std::memcmp(hdr, "data", 4) == 0) {
      data_ptr = body;
      data_len = chunk_len;
    }
    pos += 8 + chunk_len + (chunk_len & 1);  // chunks are word-aligned
  }

  if (!have_fmt || data_ptr == nullptr) throw FormatError("missing fmt or data chunk: " + path);
  if (channels < 1 || channels > 2)
    throw UnsupportedError("unsupported channel count " + std::to_string(channels) + ": " + path);
  if (rate == 0) throw FormatError("zero sample rate: " + path);

  const bool pcm = audio_format == 1;
  const bool ieee = audio_format == 3;
  if (!((pcm && (bits == 16 || bits == 24)) || (ieee && bits == 32)))
    throw UnsupportedError("unsupported encoding (format " + std::to_string(audio_format) +
                           ", " + std::to_string(bits) + " bit): " + path);

  const uint32_t bytes_per_sample = bits / 8;
  const uint32_t frame_bytes = bytes_per_sample * channels;
  const uint32_t n_frames = frame_bytes ? data_len / frame_bytes : 0;

  WavData out;
  out.sample_rate = int(rate);
  out.channels = int(channels);
  out.samples.resize(size_t(n_frames) * channels);
  const uint8_t* p = data_ptr;
  for (size_t i = 0; i < out.samples.size(); ++i, p += bytes_per_sample) {
    float v;
    if (pcm && bits == 16) {
      int16_t s = int16_t(detail::read_u16(p));
      v = float(s) / 32768.0f;
    } else if (pcm && bits == 24) {
      int32_t s = int32_t(uint32_t(p[0]) | uint32_t(p[1]) << 8 | uint32_t(p[2]) << 16);
      if (s & 0x800000) s |= ~0xFFFFFF;  // sign-extend
      v = float(double(s) / 8388608.0);
    } else {
      uint32_t u = detail::read_u32(p);
      float fv;
      std::memcpy(&fv, &u, 4);
      v = std::clamp(fv, -1.0f, 1.0f);
    }
    out.samples[i] = v;
  }
  return out;
}

struct WavInfo {
  int sample_rate = 0;
  int channels = 0;
  int64_t frames = 0;
  double duration_s() const { return sample_rate ? double(frames) / sample_rate : 0.0; }
};

// Header-only probe: chunk sizes without decoding samples.
inline WavInfo read_wav_info(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw IoError("cannot open wav file: " + path);
  char hdr[12];
  if (!f.read(hdr, 12) || std::memcmp(hdr, "RIFF", 4) != 0 || std::memcmp(hdr + 8, "WAVE", 4) != 0)
    throw FormatError("not a RIFF/WAVE file: " + path);

  WavInfo info;
  uint16_t bits = 0;
  bool have_fmt = false;
  int64_t data_len = -1;
  char chunk[8];
  while (f.read(chunk, 8)) {
    const uint32_t len = detail::read_u32(reinterpret_cast<const uint8_t*>(chunk + 4));
    if (std::memcmp(chunk, "fmt ", 4) == 0) {
      std::vector<uint8_t> body(len);
      if (!f.read(reinterpret_cast<char*>(body.data()), std::streamsize(len)))
        throw FormatError("truncated fmt chunk: " + path);
      if (len < 16) throw FormatError("short fmt chunk: " + path);
      info.channels = detail::read_u16(body.data() + 2);
      info.sample_rate = int(detail::read_u32(body.data() + 4));
      bits = detail::read_u16(body.data() + 14);
      have_fmt = true;
    } else if (std::memcmp(chunk, "data", 4) == 0) {
      data_len = len;
      f.seekg(std::streamoff(len), std::ios::cur);
    } else {
      f.seekg(std::streamoff(len), std::ios::cur);
    }
    if (len & 1) f.seekg(1, std::ios::cur);  // chunks are word-aligned
    if (have_fmt && data_len >= 0) break;
  }
  if (!have_fmt || data_len < 0) throw FormatError("missing fmt or data chunk: " + path);
  if (info.channels < 1 || bits < 8) throw FormatError("bad fmt chunk: " + path);
  info.frames = data_len / (int64_t(info.channels) * (bits / 8));
  return info;
}

// Writer for the same three encodings. `samples` is interleaved in [-1, 1];
// values are clipped to full scale.
inline void write_wav(const std::string& path, const std::vector<float>& samples, int sample_rate,
                      int channels, WavFormat format = WavFormat::kPcm16) {
  if (channels < 1 || channels > 2) throw UnsupportedError("writer supports 1-2 channels");
  const int bits = format == WavFormat::kPcm16 ? 16 : format == WavFormat::kPcm24 ? 24 : 32;
  const uint16_t fmt_code = format == WavFormat::kFloat32 ? 3 : 1;
  const uint32_t bytes_per_sample = uint32_t(bits / 8);
  const uint32_t data_len = uint32_t(samples.size() * bytes_per_sample);

  std::string out;
  out.reserve(44 + data_len);
  out += "RIFF";
  detail::put_u32(out, 36 + data_len);
  out += "WAVEfmt ";
  detail::put_u32(out, 16);
  detail::put_u16(out, fmt_code);
  detail::put_u16(out, uint16_t(channels));
  detail::put_u32(out, uint32_t(sample_rate));
  detail::put_u32(out, uint32_t(sample_rate) * channels * bytes_per_sample);
  detail::put_u16(out, uint16_t(channels * bytes_per_sample));
  detail::put_u16(out, uint16_t(bits));
  out += "data";
  detail::put_u32(out, data_len);

  for (float x : samples) {
    double v = std::clamp(double(x), -1.0, 1.0);
    if (format == WavFormat::kPcm16) {
      auto s = int32_t(std::lrint(v * 32767.0));
      s = std::clamp(s, -32768, 32767);
      detail::put_u16(out, uint16_t(int16_t(s)));
    } else if (format == WavFormat::kPcm24) {
      auto s = int64_t(std::llrint(v * 8388607.0));
      s = std::clamp<int64_t>(s, -8388608, 8388607);
      uint32_t u = uint32_t(s) & 0xFFFFFF;
      out.push_back(char(u & 0xff));
      out.push_back(char((u >> 8) & 0xff));
      out.push_back(char((u >> 16) & 0xff));
    } else {
      float fv = float(v);
      uint32_t u;
      std::memcpy(&u, &fv, 4);
      detail::put_u32(out, u);
    }
  }

  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw IoError("cannot write wav file: " + path);
  f.write(out.data(), std::streamsize(out.size()));
  if (!f) throw IoError("short write: " + path);
}

}  // namespace timbre
