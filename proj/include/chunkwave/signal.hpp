#pragma once

#include <algorithm>
#include <array>
#include <bit>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <limits>
#include <span>
#include <string>
#include <vector>

#include "chunkwave/audio_buffer.hpp"
#include "chunkwave/error.hpp"
#include "chunkwave/spectral.hpp"

static_assert(std::endian::native == std::endian::little,
              "binary I/O assumes a little-endian host");

namespace chunkwave {

namespace detail {

inline std::uint16_t read_u16(const unsigned char* p) {
  return static_cast<std::uint16_t>(p[0] | (p[1] << 8));
}

inline std::uint32_t read_u32(const unsigned char* p) {
  return static_cast<std::uint32_t>(p[0]) | (static_cast<std::uint32_t>(p[1]) << 8) |
         (static_cast<std::uint32_t>(p[2]) << 16) | (static_cast<std::uint32_t>(p[3]) << 24);
}

inline void put_u16(std::string& out, std::uint16_t v) {
  out.push_back(static_cast<char>(v & 0xff));
  out.push_back(static_cast<char>(v >> 8));
}

inline void put_u32(std::string& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

inline std::vector<unsigned char> read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FormatError("cannot open '" + path.string() + "'");
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

constexpr std::uint16_t kWavePcm = 1;
constexpr std::uint16_t kWaveFloat = 3;
constexpr std::uint16_t kWaveExtensible = 0xFFFE;

}  // namespace detail

// Decodes a RIFF/WAVE byte stream. Supports 16-bit integer and 32-bit float
// PCM; multichannel audio is averaged to mono.
inline AudioBuffer decode_wav(std::span<const unsigned char> bytes) {
  using namespace detail;
  if (bytes.size() < 12 || std::memcmp(bytes.data(), "RIFF", 4) != 0) {
    throw FormatError("missing RIFF chunk");
  }
  if (std::memcmp(bytes.data() + 8, "WAVE", 4) != 0) {
    throw FormatError("RIFF chunk is not of form WAVE");
  }
  std::uint16_t format = 0, channels = 0, bits = 0;
  std::uint32_t rate = 0;
  bool have_fmt = false;
  std::size_t pos = 12;
  while (pos + 8 <= bytes.size()) {
    const std::string id(reinterpret_cast<const char*>(bytes.data() + pos), 4);
    const std::uint32_t size = read_u32(bytes.data() + pos + 4);
    const std::size_t body = pos + 8;
    if (body + size > bytes.size()) {
      throw FormatError("chunk '" + id + "' is truncated");
    }
    if (id == "fmt ") {
      if (size < 16) throw FormatError("chunk 'fmt ' is too short");
      format = read_u16(bytes.data() + body);
      channels = read_u16(bytes.data() + body + 2);
      rate = read_u32(bytes.data() + body + 4);
      bits = read_u16(bytes.data() + body + 14);
      if (format == kWaveExtensible) {
        if (size < 26) throw FormatError("chunk 'fmt ' extensible header is too short");
        format = read_u16(bytes.data() + body + 24);
      }
      if (!((format == kWavePcm && bits == 16) || (format == kWaveFloat && bits == 32))) {
        throw FormatError("chunk 'fmt ' declares unsupported codec (format " +
                          std::to_string(format) + ", " + std::to_string(bits) + " bits)");
      }
      if (channels == 0) throw FormatError("chunk 'fmt ' declares zero channels");
      if (rate == 0) throw FormatError("chunk 'fmt ' declares zero sample rate");
      have_fmt = true;
    } else if (id == "data") {
      if (!have_fmt) throw FormatError("chunk 'data' precedes chunk 'fmt '");
      const std::size_t width = bits / 8;
      const std::size_t frame_bytes = width * channels;
      const std::size_t frames = size / frame_bytes;
      std::vector<double> samples(frames, 0.0);
      const unsigned char* p = bytes.data() + body;
      for (std::size_t f = 0; f < frames; ++f) {
        double acc = 0.0;
        for (std::size_t c = 0; c < channels; ++c) {
          const unsigned char* s = p + f * frame_bytes + c * width;
          if (format == kWavePcm) {
            acc += static_cast<std::int16_t>(read_u16(s)) / 32768.0;
          } else {
            float v;
            std::memcpy(&v, s, sizeof v);
            acc += static_cast<double>(v);
          }
        }
        samples[f] = channels == 1 ? acc : acc / channels;
      }
      try {
        return AudioBuffer(std::move(samples), static_cast<int>(rate));
      } catch (const InputError& e) {
        throw FormatError(std::string("chunk 'data': ") + e.what());
      }
    }
    pos = body + size + (size & 1u);
  }
  throw FormatError(have_fmt ? "missing chunk 'data'" : "missing chunk 'fmt '");
}

inline AudioBuffer load_wav(const std::filesystem::path& path) {
  const std::vector<unsigned char> bytes = detail::read_file(path);
  try {
    return decode_wav(bytes);
  } catch (const FormatError& e) {
    throw FormatError(path.string() + ": " + e.what());
  }
}

// Mono 32-bit IEEE float WAV.
inline std::string encode_wav(const AudioBuffer& audio) {
  using namespace detail;
  const auto data_bytes = static_cast<std::uint32_t>(audio.size() * 4);
  std::string out;
  out.reserve(44 + data_bytes);
  out += "RIFF";
  put_u32(out, 36 + data_bytes);
  out += "WAVEfmt ";
  put_u32(out, 16);
  put_u16(out, kWaveFloat);
  put_u16(out, 1);
  put_u32(out, static_cast<std::uint32_t>(audio.sample_rate()));
  put_u32(out, static_cast<std::uint32_t>(audio.sample_rate()) * 4);
  put_u16(out, 4);
  put_u16(out, 32);
  out += "data";
  put_u32(out, data_bytes);
  for (double s : audio.samples()) {
    const float v = static_cast<float>(s);
    char raw[4];
    std::memcpy(raw, &v, 4);
    out.append(raw, 4);
  }
  return out;
}

inline void save_wav(const std::filesystem::path& path, const AudioBuffer& audio) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw InputError("cannot open '" + path.string() + "' for writing");
  const std::string bytes = encode_wav(audio);
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
}

// Scales quiet audio up so its peak equals `target`. Audio already at or
// above the target, and digital silence, are returned unchanged.
inline AudioBuffer peak_normalize(const AudioBuffer& audio, double target = 0.35) {
  if (!(target > 0.0)) throw ParameterError("peak_normalize target must be positive");
  const double peak = audio.peak();
  // A peak within rounding of the target counts as reached, so a second
  // call leaves the buffer unchanged.
  if (peak == 0.0 || peak >= target * (1.0 - 4.0 * std::numeric_limits<double>::epsilon())) return audio;
  return audio.scaled(target / peak);
}

// IEC 61672 A-weighting gain in dB at frequency `hz` (-inf at DC).
inline double a_weighting_db(double hz) {
  if (hz <= 0.0) return -std::numeric_limits<double>::infinity();
  const double f2 = hz * hz;
  const double c1 = 20.598997 * 20.598997;
  const double c2 = 107.65265 * 107.65265;
  const double c3 = 737.86223 * 737.86223;
  const double c4 = 12194.217 * 12194.217;
  const double ra = c4 * f2 * f2 / ((f2 + c1) * std::sqrt((f2 + c2) * (f2 + c3)) * (f2 + c4));
  return 2.0 + 20.0 * std::log10(ra);
}

inline constexpr double kLoudnessReferenceDb = 20.0;
inline constexpr double kLoudnessFloorDb = -100.0;

// Per-frame A-weighted loudness in dB relative to a 20 dB reference.
// Framing matches stft() so frames line up with mel and pitch frames. Each
// bin's power is scaled by the A-curve at the bin frequency, the weighted
// power is averaged over bins and converted to dB; anything below -100 dB
// (including digital silence) is floored there.
inline std::vector<double> a_weighted_loudness(const AudioBuffer& audio, int hop = 256,
                                               int window = 1024) {
  if (window < 2) throw ParameterError("loudness window must be at least 2 samples");
  if (hop <= 0 || window < hop) throw ParameterError("loudness requires 0 < hop <= window");
  const StftConfig cfg{window, window, hop};
  const ComplexSpectrogram spec = stft(audio, cfg);
  std::vector<double> gains(static_cast<std::size_t>(spec.bins()));
  for (Eigen::Index b = 0; b < spec.bins(); ++b) {
    gains[static_cast<std::size_t>(b)] = std::pow(10.0, a_weighting_db(spec.bin_frequency(b)) / 10.0);
  }
  std::vector<double> out(static_cast<std::size_t>(spec.frames()));
  for (Eigen::Index f = 0; f < spec.frames(); ++f) {
    double power = 0.0;
    for (Eigen::Index b = 0; b < spec.bins(); ++b) {
      const double m = spec.magnitude(b, f);
      power += m * m * gains[static_cast<std::size_t>(b)];
    }
    power /= static_cast<double>(spec.bins());
    const double db = power > 0.0 ? 10.0 * std::log10(power) - kLoudnessReferenceDb
                                  : kLoudnessFloorDb;
    out[static_cast<std::size_t>(f)] = std::max(db, kLoudnessFloorDb);
  }
  return out;
}

// Linear interpolation of a frame-rate track onto `target_len` evenly spaced
// positions spanning the same extent (endpoints map to endpoints). With
// `log2_domain` the interpolation runs on log2 of the values.
inline std::vector<double> resample_track(std::span<const double> values,
                                          std::size_t target_len, bool log2_domain) {
  if (values.empty()) throw InputError("resample_track of an empty sequence");
  if (target_len < 1) throw ParameterError("resample_track target length must be >= 1");
  if (log2_domain) {
    for (double v : values) {
      if (!(v > 0.0)) throw DomainError("log2-domain resampling requires positive values");
    }
  }
  if (target_len == values.size()) return {values.begin(), values.end()};
  if (target_len == 1 || values.size() == 1) {
    return std::vector<double>(target_len, values.front());
  }
  std::vector<double> src(values.begin(), values.end());
  if (log2_domain) {
    for (double& v : src) v = std::log2(v);
  }
  std::vector<double> out(target_len);
  const double scale = static_cast<double>(src.size() - 1) / static_cast<double>(target_len - 1);
  for (std::size_t i = 0; i < target_len; ++i) {
    const double x = static_cast<double>(i) * scale;
    const auto lo = std::min(static_cast<std::size_t>(x), src.size() - 2);
    const double frac = x - static_cast<double>(lo);
    out[i] = src[lo] + (src[lo + 1] - src[lo]) * frac;
    if (log2_domain) out[i] = std::exp2(out[i]);
  }
  out.front() = values.front();
  out.back() = values.back();
  return out;
}

}  // namespace chunkwave
