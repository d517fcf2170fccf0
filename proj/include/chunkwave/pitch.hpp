#pragma once

// Pitch and periodicity extraction from per-frame pitch posteriorgrams:
// range restriction, Viterbi decoding under an octave-limited triangular
// transition model, loudness gating of periodicity and hysteresis voicing.
// Posteriorgrams come either from the built-in autocorrelation estimator
// or from an `.fpg` file written by an external (neural) estimator.

#include <Eigen/Dense>
#include <unsupported/Eigen/FFT>

#include <algorithm>
#include <cmath>
#include <complex>
#include <concepts>
#include <cstdint>
#include <cstdio>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <limits>
#include <ostream>
#include <span>
#include <string>
#include <vector>

#include "chunkwave/audio_buffer.hpp"
#include "chunkwave/error.hpp"
#include "chunkwave/signal.hpp"
#include "chunkwave/spectral.hpp"

namespace chunkwave {

inline constexpr double kPitchFmin = 50.0;
inline constexpr double kPitchFmax = 550.0;

// Pitch of frequency `a` relative to `b`, in cents.
inline double cents(double a, double b) { return 1200.0 * std::log2(a / b); }

// `n` frequencies evenly spaced in log2 between fmin and fmax (inclusive).
inline std::vector<double> log_spaced_bins(int n, double fmin = kPitchFmin,
                                           double fmax = kPitchFmax) {
  if (n < 1) throw ParameterError("pitch grid needs at least one bin");
  if (!(fmin > 0.0) || fmax < fmin) throw ParameterError("invalid pitch range");
  std::vector<double> f(static_cast<std::size_t>(n));
  if (n == 1) {
    f[0] = fmin;
    return f;
  }
  const double lo = std::log2(fmin), hi = std::log2(fmax);
  for (int i = 0; i < n; ++i) f[i] = std::exp2(lo + (hi - lo) * i / (n - 1));
  f.front() = fmin;
  f.back() = fmax;
  return f;
}

struct Posteriorgram {
  Eigen::MatrixXd probs;          // frames x bins, rows are distributions
  std::vector<double> bin_freqs;  // Hz, strictly increasing
  double hop_seconds = 0.0;

  Eigen::Index frames() const { return probs.rows(); }
  Eigen::Index bins() const { return probs.cols(); }

  void validate(double row_tolerance = 1e-6) const {
    if (static_cast<std::size_t>(probs.cols()) != bin_freqs.size()) {
      throw InputError("posteriorgram has " + std::to_string(probs.cols()) + " columns but " +
                       std::to_string(bin_freqs.size()) + " bin frequencies");
    }
    for (std::size_t i = 1; i < bin_freqs.size(); ++i) {
      if (!(bin_freqs[i] > bin_freqs[i - 1])) {
        throw InputError("posteriorgram bin frequencies must be strictly increasing");
      }
    }
    for (Eigen::Index t = 0; t < probs.rows(); ++t) {
      if ((probs.row(t).array() < 0.0).any() || !probs.row(t).allFinite()) {
        throw InputError("posteriorgram row " + std::to_string(t) + " has invalid entries");
      }
      if (std::abs(probs.row(t).sum() - 1.0) > row_tolerance) {
        throw InputError("posteriorgram row " + std::to_string(t) + " does not sum to 1");
      }
    }
  }
};

struct PitchTrack {
  std::vector<double> pitch_hz;
  std::vector<double> periodicity;
  std::vector<bool> voiced;
  double hop_seconds = 0.0;

  std::size_t size() const { return pitch_hz.size(); }
};

// Drops bins outside [fmin, fmax] and renormalizes each row. A row with no
// mass left in range becomes uniform.
inline Posteriorgram restrict_range(const Posteriorgram& p, double fmin = kPitchFmin,
                                    double fmax = kPitchFmax) {
  std::vector<Eigen::Index> keep;
  for (std::size_t b = 0; b < p.bin_freqs.size(); ++b) {
    const double f = p.bin_freqs[b];
    if (f >= fmin * (1.0 - 1e-9) && f <= fmax * (1.0 + 1e-9)) {
      keep.push_back(static_cast<Eigen::Index>(b));
    }
  }
  if (keep.empty()) throw InputError("posteriorgram has no bins inside the pitch range");
  Posteriorgram out;
  out.hop_seconds = p.hop_seconds;
  out.probs.resize(p.frames(), static_cast<Eigen::Index>(keep.size()));
  for (std::size_t j = 0; j < keep.size(); ++j) {
    out.bin_freqs.push_back(p.bin_freqs[static_cast<std::size_t>(keep[j])]);
    out.probs.col(static_cast<Eigen::Index>(j)) = p.probs.col(keep[j]);
  }
  for (Eigen::Index t = 0; t < out.frames(); ++t) {
    const double s = out.probs.row(t).sum();
    if (s > 0.0) {
      out.probs.row(t) /= s;
    } else {
      out.probs.row(t).setConstant(1.0 / static_cast<double>(out.bins()));
    }
  }
  return out;
}

// Row-normalized triangular transition matrix: T(i, j) proportional to
// max(0, 1 - |cents(i) - cents(j)| / 1200), so jumps above one octave have
// zero probability.
inline Eigen::MatrixXd octave_transition_matrix(std::span<const double> bin_freqs) {
  const auto n = static_cast<Eigen::Index>(bin_freqs.size());
  Eigen::MatrixXd t(n, n);
  for (Eigen::Index i = 0; i < n; ++i) {
    for (Eigen::Index j = 0; j < n; ++j) {
      const double d = std::abs(cents(bin_freqs[i], bin_freqs[j]));
      t(i, j) = std::max(0.0, 1.0 - d / 1200.0);
    }
    t.row(i) /= t.row(i).sum();
  }
  return t;
}

struct ViterbiPath {
  std::vector<int> bins;             // chosen bin per frame
  std::vector<double> probabilities;  // emission probability of that bin
};

// Maximum-likelihood bin sequence with emissions given by the posteriorgram
// rows and octave-limited transitions (uniform initial distribution).
// Runs in the log domain; ties go to the lower bin index.
inline ViterbiPath viterbi_decode(const Posteriorgram& p) {
  if (p.frames() == 0 || p.bins() == 0) throw InputError("viterbi_decode of an empty posteriorgram");
  const Eigen::Index frames = p.frames(), bins = p.bins();
  const Eigen::MatrixXd log_trans = octave_transition_matrix(p.bin_freqs).array().log().matrix();
  const Eigen::MatrixXd log_emit = p.probs.array().log().matrix();
  constexpr double kNegInf = -std::numeric_limits<double>::infinity();

  std::vector<double> score(static_cast<std::size_t>(bins)), next(score.size());
  std::vector<int> backptr(static_cast<std::size_t>(frames * bins), 0);
  for (Eigen::Index j = 0; j < bins; ++j) score[j] = log_emit(0, j);
  for (Eigen::Index t = 1; t < frames; ++t) {
    for (Eigen::Index j = 0; j < bins; ++j) {
      double best = kNegInf;
      int arg = 0;
      for (Eigen::Index i = 0; i < bins; ++i) {
        const double s = score[i] + log_trans(i, j);
        if (s > best) {
          best = s;
          arg = static_cast<int>(i);
        }
      }
      next[j] = best + log_emit(t, j);
      backptr[static_cast<std::size_t>(t * bins + j)] = arg;
    }
    std::swap(score, next);
  }
  int last = 0;
  for (Eigen::Index j = 1; j < bins; ++j) {
    if (score[j] > score[last]) last = static_cast<int>(j);
  }
  ViterbiPath path;
  path.bins.assign(static_cast<std::size_t>(frames), 0);
  path.bins.back() = last;
  for (Eigen::Index t = frames - 1; t > 0; --t) {
    path.bins[t - 1] = backptr[static_cast<std::size_t>(t * bins + path.bins[t])];
  }
  path.probabilities.resize(path.bins.size());
  for (Eigen::Index t = 0; t < frames; ++t) path.probabilities[t] = p.probs(t, path.bins[t]);
  return path;
}

inline constexpr double kSilenceGateDb = -60.0;

// Zeroes periodicity wherever loudness (dB re. the 20 dB reference) is
// below `gate_db`.
inline PitchTrack periodicity_gate(PitchTrack track, std::span<const double> loudness_db,
                                   double gate_db = kSilenceGateDb) {
  if (loudness_db.size() != track.size()) {
    throw InputError("loudness has " + std::to_string(loudness_db.size()) +
                     " frames but the pitch track has " + std::to_string(track.size()));
  }
  for (std::size_t i = 0; i < track.size(); ++i) {
    if (loudness_db[i] < gate_db) track.periodicity[i] = 0.0;
  }
  return track;
}

inline constexpr double kVoicingThreshold = 0.1625;
inline constexpr int kVoicingMinFrames = 3;

// A frame is voiced when it lies in a run of at least `min_frames`
// consecutive frames whose periodicity exceeds `threshold`.
inline std::vector<bool> hysteresis_voicing(std::span<const double> periodicity,
                                            double threshold = kVoicingThreshold,
                                            int min_frames = kVoicingMinFrames) {
  if (!(threshold > 0.0 && threshold < 1.0)) throw ParameterError("voicing threshold must lie in (0, 1)");
  if (min_frames < 1) throw ParameterError("min_frames must be >= 1");
  std::vector<bool> voiced(periodicity.size(), false);
  std::size_t i = 0;
  while (i < periodicity.size()) {
    if (!(periodicity[i] > threshold)) {
      ++i;
      continue;
    }
    std::size_t end = i;
    while (end < periodicity.size() && periodicity[end] > threshold) ++end;
    if (end - i >= static_cast<std::size_t>(min_frames)) {
      std::fill(voiced.begin() + static_cast<std::ptrdiff_t>(i),
                voiced.begin() + static_cast<std::ptrdiff_t>(end), true);
    }
    i = end;
  }
  return voiced;
}

struct DspPitchConfig {
  int n_bins = 128;
  int hop = 256;
  int window = 1024;
  double fmin = kPitchFmin;
  double fmax = kPitchFmax;
  // Softmax sharpness applied to autocorrelation scores.
  double sharpness = 400.0;
};

// Autocorrelation posteriorgram. Per frame: the biased normalized
// autocorrelation r(lag) = sum x[i] x[i+lag] / sum x[i]^2 of the
// mean-removed frame is scored on every bin of the log-spaced grid (linear
// interpolation at the bin's lag, max-pooled with the integer lags whose
// nearest bin it is). The scores are sharpened with a softmax and blended
// with a uniform row, weighted by the squared peak correlation, so strongly
// periodic frames give peaked rows and noise gives near-uniform rows.
// Framing and padding match stft(), so frame t aligns with mel frame t.
inline Posteriorgram dsp_posteriorgram(const AudioBuffer& audio, const DspPitchConfig& cfg = {}) {
  const double sr = audio.sample_rate();
  const auto min_lag = static_cast<int>(std::floor(sr / cfg.fmax));
  const auto max_lag = static_cast<int>(std::ceil(sr / cfg.fmin));
  if (cfg.window <= max_lag) {
    throw ParameterError("window of " + std::to_string(cfg.window) +
                         " samples is shorter than the longest candidate lag " +
                         std::to_string(max_lag));
  }
  const StftConfig framing{cfg.window, cfg.window, cfg.hop};
  framing.validate();
  const std::vector<double> padded = reflect_pad(audio.samples(), framing.pad());
  const std::size_t frames = frame_count(audio.size(), framing);
  if (frames == 0) throw InputError("audio too short for a single pitch frame");

  Posteriorgram out;
  out.bin_freqs = log_spaced_bins(cfg.n_bins, cfg.fmin, cfg.fmax);
  out.hop_seconds = cfg.hop / sr;
  out.probs.resize(static_cast<Eigen::Index>(frames), cfg.n_bins);

  const double log_lo = std::log2(cfg.fmin);
  const double log_step =
      cfg.n_bins > 1 ? (std::log2(cfg.fmax) - log_lo) / (cfg.n_bins - 1) : 1.0;
  // Integer lag -> nearest bin, or -1 when outside the grid.
  std::vector<int> lag_bin(static_cast<std::size_t>(max_lag) + 1, -1);
  for (int lag = std::max(min_lag, 1); lag <= max_lag; ++lag) {
    const double idx = (std::log2(sr / lag) - log_lo) / log_step;
    const long b = std::lround(idx);
    if (b >= 0 && b < cfg.n_bins) lag_bin[static_cast<std::size_t>(lag)] = static_cast<int>(b);
  }

  std::size_t fft_size = 1;
  while (fft_size < 2 * static_cast<std::size_t>(cfg.window)) fft_size <<= 1;
  Eigen::FFT<double> fft;
  std::vector<double> buf(fft_size), acf;
  std::vector<std::complex<double>> spec;
  std::vector<double> score(static_cast<std::size_t>(cfg.n_bins));
  const double uniform = 1.0 / cfg.n_bins;

  for (std::size_t f = 0; f < frames; ++f) {
    const double* frame = padded.data() + f * static_cast<std::size_t>(cfg.hop);
    double mean = 0.0;
    for (int i = 0; i < cfg.window; ++i) mean += frame[i];
    mean /= cfg.window;
    std::fill(buf.begin(), buf.end(), 0.0);
    double energy = 0.0;
    for (int i = 0; i < cfg.window; ++i) {
      buf[i] = frame[i] - mean;
      energy += buf[i] * buf[i];
    }
    const auto row = static_cast<Eigen::Index>(f);
    if (!(energy > 0.0)) {
      out.probs.row(row).setConstant(uniform);
      continue;
    }
    fft.fwd(spec, buf);
    for (auto& c : spec) c = std::norm(c);
    fft.inv(acf, spec);
    const double r0 = acf[0];
    auto r_at = [&](double lag) {
      const auto lo = static_cast<std::size_t>(lag);
      const double frac = lag - static_cast<double>(lo);
      return (acf[lo] + (acf[lo + 1] - acf[lo]) * frac) / r0;
    };
    for (int b = 0; b < cfg.n_bins; ++b) score[b] = r_at(sr / out.bin_freqs[b]);
    for (int lag = std::max(min_lag, 1); lag <= max_lag; ++lag) {
      const int b = lag_bin[static_cast<std::size_t>(lag)];
      if (b >= 0) score[b] = std::max(score[b], acf[static_cast<std::size_t>(lag)] / r0);
    }
    const double peak = *std::max_element(score.begin(), score.end());
    const double clarity = std::pow(std::clamp(peak, 0.0, 1.0), 2.0);
    double z = 0.0;
    for (int b = 0; b < cfg.n_bins; ++b) z += std::exp(cfg.sharpness * (score[b] - peak));
    for (int b = 0; b < cfg.n_bins; ++b) {
      const double sharp = std::exp(cfg.sharpness * (score[b] - peak)) / z;
      out.probs(row, b) = (1.0 - clarity) * uniform + clarity * sharp;
    }
  }
  return out;
}

// Anything that turns audio into a posteriorgram.
template <typename S>
concept PosteriorgramSource = requires(const S& s, const AudioBuffer& a) {
  { s(a) } -> std::convertible_to<Posteriorgram>;
};

struct DspPosteriorgramSource {
  DspPitchConfig config;
  Posteriorgram operator()(const AudioBuffer& audio) const { return dsp_posteriorgram(audio, config); }
};

// Serves a precomputed posteriorgram (e.g. read from an `.fpg` file)
// regardless of the audio passed in.
struct StoredPosteriorgramSource {
  Posteriorgram posteriorgram;
  Posteriorgram operator()(const AudioBuffer&) const { return posteriorgram; }
};

// ---------------------------------------------------------------------------
// `.fpg` interchange format, little-endian:
//   "FPG1" | u32 n_frames | u32 n_bins | f64 hop_seconds | f64 fmin_hz |
//   f64 fmax_hz | n_frames * n_bins f32 probabilities, frame-major.
// Bin frequencies are log2-evenly spaced between fmin_hz and fmax_hz.

inline constexpr char kFpgMagic[4] = {'F', 'P', 'G', '1'};
inline constexpr std::size_t kFpgHeaderBytes = 4 + 4 + 4 + 8 + 8 + 8;
inline constexpr double kFpgRowTolerance = 1e-4;

inline std::string encode_posteriorgram(const Posteriorgram& p) {
  if (p.bin_freqs.empty()) throw InputError("cannot encode a posteriorgram without bins");
  std::string out(kFpgMagic, 4);
  auto put = [&out](const auto& v) {
    char raw[sizeof v];
    std::memcpy(raw, &v, sizeof v);
    out.append(raw, sizeof v);
  };
  put(static_cast<std::uint32_t>(p.frames()));
  put(static_cast<std::uint32_t>(p.bins()));
  put(p.hop_seconds);
  put(p.bin_freqs.front());
  put(p.bin_freqs.back());
  for (Eigen::Index t = 0; t < p.frames(); ++t) {
    for (Eigen::Index b = 0; b < p.bins(); ++b) put(static_cast<float>(p.probs(t, b)));
  }
  return out;
}

inline Posteriorgram decode_posteriorgram(std::span<const unsigned char> bytes) {
  if (bytes.size() < 4 || std::memcmp(bytes.data(), kFpgMagic, 4) != 0) {
    throw FormatError("bad posteriorgram magic (expected FPG1)");
  }
  if (bytes.size() < kFpgHeaderBytes) throw FormatError("truncated posteriorgram header");
  std::uint32_t n_frames, n_bins;
  double hop, fmin, fmax;
  std::memcpy(&n_frames, bytes.data() + 4, 4);
  std::memcpy(&n_bins, bytes.data() + 8, 4);
  std::memcpy(&hop, bytes.data() + 12, 8);
  std::memcpy(&fmin, bytes.data() + 20, 8);
  std::memcpy(&fmax, bytes.data() + 28, 8);
  if (n_bins == 0) throw FormatError("posteriorgram declares zero bins");
  if (!(fmin > 0.0) || !(fmax >= fmin) || (n_bins > 1 && !(fmax > fmin))) {
    throw FormatError("posteriorgram declares an invalid frequency range");
  }
  if (!(hop > 0.0)) throw FormatError("posteriorgram declares a non-positive hop");
  const std::size_t payload = static_cast<std::size_t>(n_frames) * n_bins * 4;
  if (bytes.size() - kFpgHeaderBytes < payload) {
    throw FormatError("truncated posteriorgram payload");
  }
  Posteriorgram p;
  p.hop_seconds = hop;
  p.bin_freqs = log_spaced_bins(static_cast<int>(n_bins), fmin, fmax);
  p.probs.resize(n_frames, n_bins);
  const unsigned char* data = bytes.data() + kFpgHeaderBytes;
  for (std::uint32_t t = 0; t < n_frames; ++t) {
    double sum = 0.0;
    for (std::uint32_t b = 0; b < n_bins; ++b) {
      float v;
      std::memcpy(&v, data + (static_cast<std::size_t>(t) * n_bins + b) * 4, 4);
      if (!std::isfinite(v) || v < 0.0f) {
        throw FormatError("posteriorgram frame " + std::to_string(t) + " has an invalid probability");
      }
      p.probs(t, b) = v;
      sum += v;
    }
    if (std::abs(sum - 1.0) > kFpgRowTolerance) {
      throw FormatError("posteriorgram frame " + std::to_string(t) + " sums to " +
                        std::to_string(sum));
    }
  }
  return p;
}

inline void write_posteriorgram(const Posteriorgram& p, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw InputError("cannot open '" + path.string() + "' for writing");
  const std::string bytes = encode_posteriorgram(p);
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
}

inline Posteriorgram read_posteriorgram(const std::filesystem::path& path) {
  const std::vector<unsigned char> bytes = detail::read_file(path);
  try {
    return decode_posteriorgram(bytes);
  } catch (const FormatError& e) {
    throw FormatError(path.string() + ": " + e.what());
  }
}

// ---------------------------------------------------------------------------

struct PitchConfig {
  int hop = 256;      // mel-spectrogram framing that outputs align to
  int window = 1024;
  double fmin = kPitchFmin;
  double fmax = kPitchFmax;
  double gate_db = kSilenceGateDb;
  double voicing_threshold = kVoicingThreshold;
  int voicing_min_frames = kVoicingMinFrames;
};

// Full pipeline: posteriorgram -> range restriction -> Viterbi -> pitch and
// periodicity contours -> (resampling to the mel frame count when the source
// runs at a different rate) -> loudness gate -> hysteresis voicing.
template <PosteriorgramSource Source>
PitchTrack extract_pitch(const AudioBuffer& audio, const Source& source,
                         const PitchConfig& cfg = {}) {
  const Posteriorgram raw = source(audio);
  raw.validate(kFpgRowTolerance);
  const Posteriorgram p = restrict_range(raw, cfg.fmin, cfg.fmax);
  const ViterbiPath path = viterbi_decode(p);

  PitchTrack track;
  track.pitch_hz.reserve(path.bins.size());
  for (int b : path.bins) track.pitch_hz.push_back(p.bin_freqs[static_cast<std::size_t>(b)]);
  track.periodicity = path.probabilities;

  const std::size_t target = frame_count(audio.size(), StftConfig{cfg.window, cfg.window, cfg.hop});
  if (target == 0) throw InputError("audio too short for a single analysis frame");
  if (track.pitch_hz.size() != target) {
    track.pitch_hz = resample_track(track.pitch_hz, target, true);
    track.periodicity = resample_track(track.periodicity, target, false);
  }
  track.hop_seconds = static_cast<double>(cfg.hop) / audio.sample_rate();
  track.voiced.assign(target, false);

  const std::vector<double> loudness = a_weighted_loudness(audio, cfg.hop, cfg.window);
  track = periodicity_gate(std::move(track), loudness, cfg.gate_db);
  track.voiced = hysteresis_voicing(track.periodicity, cfg.voicing_threshold, cfg.voicing_min_frames);
  return track;
}

// CSV with header `time,pitch,periodicity,voiced`, one row per frame.
inline void write_pitch_csv(const PitchTrack& track, std::ostream& out) {
  out << "time,pitch,periodicity,voiced\n";
  char line[128];
  for (std::size_t i = 0; i < track.size(); ++i) {
    std::snprintf(line, sizeof line, "%.6f,%.6f,%.6f,%d\n",
                  static_cast<double>(i) * track.hop_seconds, track.pitch_hz[i],
                  track.periodicity[i], track.voiced[i] ? 1 : 0);
    out << line;
  }
}

}  // namespace chunkwave
