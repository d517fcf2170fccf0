#pragma once

// Short-time Fourier analysis: framed magnitude/phase spectra, the log-mel
// spectrogram used as vocoder conditioning, and a magnitude-weighted phase
// distance between two waveforms.

#include <Eigen/Dense>
#include <unsupported/Eigen/FFT>

#include <cmath>
#include <complex>
#include <cstddef>
#include <numbers>
#include <span>
#include <string>
#include <vector>

#include "chunkwave/audio_buffer.hpp"
#include "chunkwave/error.hpp"

namespace chunkwave {

struct StftConfig {
  int n_fft = 1024;
  int window = 1024;
  int hop = 256;

  // Reflection padding applied to each side so that a signal whose length
  // is a multiple of `hop` yields exactly length / hop frames.
  std::size_t pad() const { return static_cast<std::size_t>((n_fft - hop) / 2); }
  int bins() const { return n_fft / 2 + 1; }

  void validate() const {
    if (hop <= 0) throw ParameterError("hop must be positive");
    if (window < 2) throw ParameterError("window must be at least 2 samples");
    if (window > n_fft) throw ParameterError("window must not exceed n_fft");
    if (hop > window) throw ParameterError("hop must not exceed window");
  }
};

// numpy-style "reflect" padding (edge sample not repeated).
inline std::vector<double> reflect_pad(std::span<const double> x, std::size_t pad) {
  const std::size_t n = x.size();
  if (pad > 0 && n <= pad) {
    throw InputError("signal of " + std::to_string(n) +
                     " samples is too short for reflection padding of " +
                     std::to_string(pad));
  }
  std::vector<double> out(n + 2 * pad);
  for (std::size_t i = 0; i < pad; ++i) out[i] = x[pad - i];
  for (std::size_t i = 0; i < n; ++i) out[pad + i] = x[i];
  for (std::size_t i = 0; i < pad; ++i) out[pad + n + i] = x[n - 2 - i];
  return out;
}

// Number of analysis frames produced for a signal of `n` samples.
inline std::size_t frame_count(std::size_t n, const StftConfig& cfg) {
  const std::size_t padded = n + 2 * cfg.pad();
  if (padded < static_cast<std::size_t>(cfg.n_fft)) return 0;
  return 1 + (padded - cfg.n_fft) / static_cast<std::size_t>(cfg.hop);
}

// Periodic Hann window of `window` samples, zero-padded symmetrically to n_fft.
inline std::vector<double> hann_window(const StftConfig& cfg) {
  std::vector<double> w(static_cast<std::size_t>(cfg.n_fft), 0.0);
  const int offset = (cfg.n_fft - cfg.window) / 2;
  for (int i = 0; i < cfg.window; ++i) {
    w[offset + i] = 0.5 - 0.5 * std::cos(2.0 * std::numbers::pi * i / cfg.window);
  }
  return w;
}

struct ComplexSpectrogram {
  Eigen::MatrixXd magnitude;  // bins x frames, >= 0
  Eigen::MatrixXd phase;      // bins x frames, radians in (-pi, pi]
  int sample_rate = 0;
  int n_fft = 0;
  int hop = 0;

  Eigen::Index bins() const { return magnitude.rows(); }
  Eigen::Index frames() const { return magnitude.cols(); }
  double bin_frequency(Eigen::Index bin) const {
    return static_cast<double>(bin) * sample_rate / n_fft;
  }
};

inline ComplexSpectrogram stft(const AudioBuffer& audio, const StftConfig& cfg = {}) {
  cfg.validate();
  if (audio.empty()) throw InputError("stft of an empty signal");
  const std::vector<double> padded = reflect_pad(audio.samples(), cfg.pad());
  const std::size_t frames = frame_count(audio.size(), cfg);
  if (frames == 0) {
    throw InputError("signal too short for a single " + std::to_string(cfg.n_fft) +
                     "-point frame");
  }
  const std::vector<double> window = hann_window(cfg);
  const int bins = cfg.bins();

  ComplexSpectrogram out;
  out.magnitude.resize(bins, static_cast<Eigen::Index>(frames));
  out.phase.resize(bins, static_cast<Eigen::Index>(frames));
  out.sample_rate = audio.sample_rate();
  out.n_fft = cfg.n_fft;
  out.hop = cfg.hop;

  Eigen::FFT<double> fft;
  fft.SetFlag(Eigen::FFT<double>::HalfSpectrum);
  std::vector<double> frame(static_cast<std::size_t>(cfg.n_fft));
  std::vector<std::complex<double>> spectrum;
  for (std::size_t f = 0; f < frames; ++f) {
    const std::size_t start = f * static_cast<std::size_t>(cfg.hop);
    for (int i = 0; i < cfg.n_fft; ++i) frame[i] = padded[start + i] * window[i];
    fft.fwd(spectrum, frame);
    for (int b = 0; b < bins; ++b) {
      const std::complex<double> v = spectrum[static_cast<std::size_t>(b)];
      out.magnitude(b, static_cast<Eigen::Index>(f)) = std::abs(v);
      double ph = std::arg(v);
      if (ph <= -std::numbers::pi) ph = std::numbers::pi;
      out.phase(b, static_cast<Eigen::Index>(f)) = ph;
    }
  }
  return out;
}

// Slaney-style mel scale: linear below 1 kHz, logarithmic above.
inline double hz_to_mel(double hz) {
  constexpr double f_sp = 200.0 / 3.0;
  constexpr double min_log_hz = 1000.0;
  constexpr double min_log_mel = min_log_hz / f_sp;
  const double logstep = std::log(6.4) / 27.0;
  if (hz >= min_log_hz) return min_log_mel + std::log(hz / min_log_hz) / logstep;
  return hz / f_sp;
}

inline double mel_to_hz(double mel) {
  constexpr double f_sp = 200.0 / 3.0;
  constexpr double min_log_hz = 1000.0;
  constexpr double min_log_mel = min_log_hz / f_sp;
  const double logstep = std::log(6.4) / 27.0;
  if (mel >= min_log_mel) return min_log_hz * std::exp(logstep * (mel - min_log_mel));
  return f_sp * mel;
}

// Triangular filterbank (n_mels x n_fft/2+1) with unnormalized rows; band
// edges are evenly spaced on the mel scale between fmin and fmax.
inline Eigen::MatrixXd mel_filterbank(int n_mels, int n_fft, int sample_rate,
                                      double fmin = 0.0, double fmax = -1.0) {
  if (n_mels < 1) throw ParameterError("n_mels must be positive");
  if (fmax < 0.0) fmax = sample_rate / 2.0;
  const int bins = n_fft / 2 + 1;
  const double mel_lo = hz_to_mel(fmin);
  const double mel_hi = hz_to_mel(fmax);
  std::vector<double> edges(static_cast<std::size_t>(n_mels) + 2);
  for (std::size_t i = 0; i < edges.size(); ++i) {
    edges[i] = mel_to_hz(mel_lo + (mel_hi - mel_lo) * static_cast<double>(i) /
                                      static_cast<double>(n_mels + 1));
  }
  Eigen::MatrixXd fb = Eigen::MatrixXd::Zero(n_mels, bins);
  for (int m = 0; m < n_mels; ++m) {
    const double lo = edges[m], center = edges[m + 1], hi = edges[m + 2];
    for (int b = 0; b < bins; ++b) {
      const double f = static_cast<double>(b) * sample_rate / n_fft;
      const double rising = (f - lo) / (center - lo);
      const double falling = (hi - f) / (hi - center);
      fb(m, b) = std::max(0.0, std::min(rising, falling));
    }
  }
  return fb;
}

inline constexpr double kMelFloor = 1e-5;

struct MelSpectrogram {
  Eigen::MatrixXd frames;  // n_mels x n_frames, log10 energies >= log10(1e-5)
  int n_mels = 0;
  int hop = 0;
  int sample_rate = 0;

  Eigen::Index n_frames() const { return frames.cols(); }
};

inline MelSpectrogram mel_spectrogram(const AudioBuffer& audio, int n_mels = 80,
                                      const StftConfig& cfg = {}) {
  const ComplexSpectrogram spec = stft(audio, cfg);
  const Eigen::MatrixXd fb = mel_filterbank(n_mels, cfg.n_fft, audio.sample_rate());
  MelSpectrogram out;
  out.frames = (fb * spec.magnitude).array().max(kMelFloor).log10().matrix();
  out.n_mels = n_mels;
  out.hop = cfg.hop;
  out.sample_rate = audio.sample_rate();
  return out;
}

// Wraps an angle difference into (-pi, pi].
inline double wrap_phase(double x) {
  constexpr double two_pi = 2.0 * std::numbers::pi;
  double y = std::fmod(x + std::numbers::pi, two_pi);
  if (y < 0.0) y += two_pi;
  y -= std::numbers::pi;
  if (y <= -std::numbers::pi) y = std::numbers::pi;
  return y;
}

// Magnitude-weighted squared phase distance. Within each frame the
// reference magnitudes are normalized to sum to one and used to weight the
// squared wrapped phase differences; the per-frame sums are averaged over
// frames with non-zero reference energy. Silent references score 0.
inline double phase_error(const AudioBuffer& reference, const AudioBuffer& estimate,
                          const StftConfig& cfg = {}) {
  if (reference.size() != estimate.size()) {
    throw InputError("phase_error length mismatch: " + std::to_string(reference.size()) +
                     " vs " + std::to_string(estimate.size()));
  }
  if (reference.sample_rate() != estimate.sample_rate()) {
    throw InputError("phase_error sample-rate mismatch");
  }
  const ComplexSpectrogram ref = stft(reference, cfg);
  const ComplexSpectrogram est = stft(estimate, cfg);
  double total = 0.0;
  std::size_t counted = 0;
  for (Eigen::Index f = 0; f < ref.frames(); ++f) {
    const double energy = ref.magnitude.col(f).sum();
    if (!(energy > 0.0)) continue;
    double frame_err = 0.0;
    for (Eigen::Index b = 0; b < ref.bins(); ++b) {
      const double d = wrap_phase(ref.phase(b, f) - est.phase(b, f));
      frame_err += ref.magnitude(b, f) / energy * d * d;
    }
    total += frame_err;
    ++counted;
  }
  return counted == 0 ? 0.0 : total / static_cast<double>(counted);
}

}  // namespace chunkwave
