#pragma once

// Linear-PCM / IEEE-float WAV reading and writing.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <string>
#include <vector>

#include "amfm/core/errors.hpp"

namespace amfm::frontend {

inline constexpr unsigned kExpectedSampleRate = 44100;

struct AudioClip {
  std::vector<double> samples;  // mono, in [-1, 1]
  unsigned sample_rate = kExpectedSampleRate;
  std::string source_id;

  double duration() const {
    return static_cast<double>(samples.size()) / static_cast<double>(sample_rate);
  }
};

enum class SampleFormat { pcm16, pcm24, pcm32, float32 };

namespace detail {

inline std::uint32_t le32(const unsigned char* p) {
  return std::uint32_t(p[0]) | std::uint32_t(p[1]) << 8 |
         std::uint32_t(p[2]) << 16 | std::uint32_t(p[3]) << 24;
}
inline std::uint16_t le16(const unsigned char* p) {
  return std::uint16_t(p[0] | p[1] << 8);
}

inline void put32(std::string& s, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) s.push_back(static_cast<char>((v >> (8 * i)) & 0xFF));
}
inline void put16(std::string& s, std::uint16_t v) {
  s.push_back(static_cast<char>(v & 0xFF));
  s.push_back(static_cast<char>(v >> 8));
}

}  // namespace detail

/// Parses a WAV byte buffer. Stereo (or wider) input is averaged to mono.
inline AudioClip parse_wav(const std::vector<unsigned char>& bytes,
                           unsigned expected_rate = kExpectedSampleRate) {
  using detail::le16;
  using detail::le32;
  if (bytes.size() < 12 || std::memcmp(bytes.data(), "RIFF", 4) != 0 ||
      std::memcmp(bytes.data() + 8, "WAVE", 4) != 0) {
    throw ParseError("wav: missing RIFF/WAVE header");
  }
  std::uint16_t format = 0, channels = 0, bits = 0;
  std::uint32_t rate = 0;
  const unsigned char* data = nullptr;
  std::size_t data_len = 0;
  std::size_t pos = 12;
  while (pos + 8 <= bytes.size()) {
    const unsigned char* chunk = bytes.data() + pos;
    const std::size_t len = le32(chunk + 4);
    const std::size_t body = pos + 8;
    if (body + len > bytes.size()) {
      // A truncated trailing data chunk is a malformed file.
      throw ParseError("wav: chunk extends past end of file");
    }
    if (std::memcmp(chunk, "fmt ", 4) == 0) {
      if (len < 16) throw ParseError("wav: fmt chunk too short");
      const unsigned char* f = bytes.data() + body;
      format = le16(f);
      channels = le16(f + 2);
      rate = le32(f + 4);
      bits = le16(f + 14);
      if (format == 0xFFFE) {
        if (len < 40) throw ParseError("wav: extensible fmt chunk too short");
        format = le16(f + 24);
      }
    } else if (std::memcmp(chunk, "data", 4) == 0) {
      data = bytes.data() + body;
      data_len = len;
    }
    pos = body + len + (len & 1);
  }
  if (channels == 0 || rate == 0) throw ParseError("wav: missing fmt chunk");
  if (data == nullptr) throw ParseError("wav: missing data chunk");
  if (rate != expected_rate) {
    throw ValidationError("wav: sample rate " + std::to_string(rate) +
                          " Hz, expected " + std::to_string(expected_rate) +
                          " Hz (resampling is not supported)");
  }
  const bool is_float = format == 3;
  if (!(format == 1 || is_float)) {
    throw ParseError("wav: unsupported format tag " + std::to_string(format));
  }
  if (is_float ? bits != 32 : !(bits == 16 || bits == 24 || bits == 32)) {
    throw ParseError("wav: unsupported bit depth " + std::to_string(bits));
  }
  const std::size_t width = bits / 8;
  const std::size_t frame = width * channels;
  const std::size_t n = data_len / frame;
  AudioClip clip;
  clip.sample_rate = rate;
  clip.samples.resize(n);
  for (std::size_t i = 0; i < n; ++i) {
    double acc = 0.0;
    for (std::size_t ch = 0; ch < channels; ++ch) {
      const unsigned char* p = data + i * frame + ch * width;
      double v = 0.0;
      if (is_float) {
        float f;
        const std::uint32_t u = le32(p);
        std::memcpy(&f, &u, 4);
        v = std::clamp(static_cast<double>(f), -1.0, 1.0);
      } else if (bits == 16) {
        v = static_cast<std::int16_t>(le16(p)) / 32768.0;
      } else if (bits == 24) {
        std::int32_t s = std::int32_t(p[0]) | std::int32_t(p[1]) << 8 |
                         std::int32_t(p[2]) << 16;
        if (s & 0x800000) s -= 0x1000000;
        v = s / 8388608.0;
      } else {
        v = static_cast<std::int32_t>(le32(p)) / 2147483648.0;
      }
      acc += v;
    }
    clip.samples[i] = acc / channels;
  }
  return clip;
}

inline AudioClip load_wav(const std::filesystem::path& path,
                          unsigned expected_rate = kExpectedSampleRate) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  std::vector<unsigned char> bytes((std::istreambuf_iterator<char>(in)),
                                   std::istreambuf_iterator<char>());
  AudioClip clip = parse_wav(bytes, expected_rate);
  clip.source_id = path.filename().string();
  return clip;
}

/// Mono WAV encoding; integer formats round to the nearest level and clip.
inline std::string encode_wav(const AudioClip& clip, SampleFormat fmt) {
  const unsigned bits = fmt == SampleFormat::pcm16 ? 16 : fmt == SampleFormat::pcm24 ? 24 : 32;
  const unsigned width = bits / 8;
  const auto n = static_cast<std::uint32_t>(clip.samples.size());
  std::string out;
  out.reserve(44 + n * width);
  out += "RIFF";
  detail::put32(out, 36 + n * width);
  out += "WAVEfmt ";
  detail::put32(out, 16);
  detail::put16(out, fmt == SampleFormat::float32 ? 3 : 1);
  detail::put16(out, 1);
  detail::put32(out, clip.sample_rate);
  detail::put32(out, clip.sample_rate * width);
  detail::put16(out, static_cast<std::uint16_t>(width));
  detail::put16(out, static_cast<std::uint16_t>(bits));
  out += "data";
  detail::put32(out, n * width);
  for (double s : clip.samples) {
    s = std::clamp(s, -1.0, 1.0);
    if (fmt == SampleFormat::float32) {
      const float f = static_cast<float>(s);
      std::uint32_t u;
      std::memcpy(&u, &f, 4);
      detail::put32(out, u);
      continue;
    }
    const double scale = std::ldexp(1.0, static_cast<int>(bits) - 1);
    const double hi = scale - 1.0;
    const auto q = static_cast<std::int64_t>(std::clamp(std::round(s * scale), -scale, hi));
    const auto u = static_cast<std::uint32_t>(q);
    for (unsigned i = 0; i < width; ++i) {
      out.push_back(static_cast<char>((u >> (8 * i)) & 0xFF));
    }
  }
  return out;
}

inline void write_wav(const std::filesystem::path& path, const AudioClip& clip,
                      SampleFormat fmt = SampleFormat::pcm16) {
  const std::string bytes = encode_wav(clip, fmt);
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write " + path.string());
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw IoError("short write to " + path.string());
}

}  // namespace amfm::frontend
