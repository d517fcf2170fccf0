#pragma once

// Objective fidelity metrics between a reference and an estimated
// (synthesized) waveform: pitch RMSE in cents over jointly voiced frames,
// periodicity RMSE, voiced/unvoiced F1, and waveform / mel / phase
// distances. Corpus totals pool frames across files before taking roots.

#include <json.hpp>

#include <cmath>
#include <cstddef>
#include <optional>
#include <string>
#include <vector>

#include "chunkwave/audio_buffer.hpp"
#include "chunkwave/error.hpp"
#include "chunkwave/pitch.hpp"
#include "chunkwave/spectral.hpp"

namespace chunkwave {

namespace detail {
inline void require_same_length(const PitchTrack& a, const PitchTrack& b, const char* what) {
  if (a.size() != b.size() || a.periodicity.size() != b.periodicity.size() ||
      a.voiced.size() != b.voiced.size()) {
    throw InputError(std::string(what) + ": track length mismatch (" + std::to_string(a.size()) +
                     " vs " + std::to_string(b.size()) + ")");
  }
}
}  // namespace detail

// Running sums from which every frame-level metric is derived. Merging
// accumulators and then finalizing yields pooled (not file-averaged) values.
struct FrameTally {
  double cents_sq = 0.0;
  std::size_t joint_voiced = 0;
  double periodicity_sq = 0.0;
  std::size_t frames = 0;
  std::size_t true_pos = 0;
  std::size_t false_pos = 0;
  std::size_t false_neg = 0;

  void add(const PitchTrack& ref, const PitchTrack& est) {
    detail::require_same_length(ref, est, "frame tally");
    for (std::size_t i = 0; i < ref.size(); ++i) {
      if (ref.voiced[i] && est.voiced[i]) {
        const double c = cents(ref.pitch_hz[i], est.pitch_hz[i]);
        cents_sq += c * c;
        ++joint_voiced;
      }
      const double d = ref.periodicity[i] - est.periodicity[i];
      periodicity_sq += d * d;
      true_pos += ref.voiced[i] && est.voiced[i];
      false_pos += !ref.voiced[i] && est.voiced[i];
      false_neg += ref.voiced[i] && !est.voiced[i];
    }
    frames += ref.size();
  }

  void merge(const FrameTally& o) {
    cents_sq += o.cents_sq;
    joint_voiced += o.joint_voiced;
    periodicity_sq += o.periodicity_sq;
    frames += o.frames;
    true_pos += o.true_pos;
    false_pos += o.false_pos;
    false_neg += o.false_neg;
  }

  std::optional<double> pitch_rmse_cents() const {
    if (joint_voiced == 0) return std::nullopt;
    return std::sqrt(cents_sq / static_cast<double>(joint_voiced));
  }

  double periodicity_rmse() const {
    return frames == 0 ? 0.0 : std::sqrt(periodicity_sq / static_cast<double>(frames));
  }

  double voicing_f1() const {
    const double tp = static_cast<double>(true_pos);
    const double precision = true_pos + false_pos == 0 ? 0.0 : tp / static_cast<double>(true_pos + false_pos);
    const double recall = true_pos + false_neg == 0 ? 0.0 : tp / static_cast<double>(true_pos + false_neg);
    return precision + recall == 0.0 ? 0.0 : 2.0 * precision * recall / (precision + recall);
  }
};

struct PitchRmse {
  std::optional<double> rmse;  // empty when no frame is voiced in both tracks
  std::size_t joint_count = 0;
};

inline PitchRmse pitch_rmse_cents(const PitchTrack& ref, const PitchTrack& est) {
  detail::require_same_length(ref, est, "pitch_rmse_cents");
  FrameTally t;
  t.add(ref, est);
  return {t.pitch_rmse_cents(), t.joint_voiced};
}

inline double periodicity_rmse(const PitchTrack& ref, const PitchTrack& est) {
  detail::require_same_length(ref, est, "periodicity_rmse");
  FrameTally t;
  t.add(ref, est);
  return t.periodicity_rmse();
}

// F1 with voiced as the positive class; 0 when precision + recall is 0.
inline double voicing_f1(const PitchTrack& ref, const PitchTrack& est) {
  detail::require_same_length(ref, est, "voicing_f1");
  FrameTally t;
  t.add(ref, est);
  return t.voicing_f1();
}

struct EvalReport {
  std::optional<double> pitch_rmse_cents;
  double periodicity_rmse = 0.0;
  double voicing_f1 = 0.0;
  std::size_t n_joint_voiced_frames = 0;
  double waveform_l1 = 0.0;
  double waveform_l2 = 0.0;
  double mel_l1 = 0.0;
  double phase_error = 0.0;
};

inline nlohmann::ordered_json to_json(const EvalReport& r) {
  nlohmann::ordered_json j;
  j["pitch_rmse_cents"] = r.pitch_rmse_cents ? nlohmann::ordered_json(*r.pitch_rmse_cents)
                                             : nlohmann::ordered_json(nullptr);
  j["periodicity_rmse"] = r.periodicity_rmse;
  j["voicing_f1"] = r.voicing_f1;
  j["n_joint_voiced_frames"] = r.n_joint_voiced_frames;
  j["waveform_l1"] = r.waveform_l1;
  j["waveform_l2"] = r.waveform_l2;
  j["mel_l1"] = r.mel_l1;
  j["phase_error"] = r.phase_error;
  return j;
}

// Everything needed to produce one EvalReport and to pool it with others.
struct PairEvaluation {
  FrameTally tally;
  double abs_sum = 0.0;        // waveform |ref - est|
  double sq_sum = 0.0;         // waveform (ref - est)^2
  std::size_t samples = 0;
  double mel_abs_sum = 0.0;
  std::size_t mel_cells = 0;
  double phase_sum = 0.0;      // phase_error * frames
  std::size_t phase_frames = 0;

  void merge(const PairEvaluation& o) {
    tally.merge(o.tally);
    abs_sum += o.abs_sum;
    sq_sum += o.sq_sum;
    samples += o.samples;
    mel_abs_sum += o.mel_abs_sum;
    mel_cells += o.mel_cells;
    phase_sum += o.phase_sum;
    phase_frames += o.phase_frames;
  }

  EvalReport report() const {
    EvalReport r;
    r.pitch_rmse_cents = tally.pitch_rmse_cents();
    r.periodicity_rmse = tally.periodicity_rmse();
    r.voicing_f1 = tally.voicing_f1();
    r.n_joint_voiced_frames = tally.joint_voiced;
    const auto n = static_cast<double>(samples);
    r.waveform_l1 = samples ? abs_sum / n : 0.0;
    r.waveform_l2 = samples ? sq_sum / n : 0.0;
    r.mel_l1 = mel_cells ? mel_abs_sum / static_cast<double>(mel_cells) : 0.0;
    r.phase_error = phase_frames ? phase_sum / static_cast<double>(phase_frames) : 0.0;
    return r;
  }
};

struct EvalConfig {
  PitchConfig pitch;
  int n_mels = 80;
};

// Runs the pitch pipeline on both signals and measures every distance.
// Lengths may differ by less than one hop; the longer one is truncated.
template <PosteriorgramSource Source>
PairEvaluation evaluate_pair_detail(const AudioBuffer& reference, const AudioBuffer& estimate,
                                    const Source& source, const EvalConfig& cfg = {}) {
  if (reference.sample_rate() != estimate.sample_rate()) {
    throw InputError("sample-rate mismatch: " + std::to_string(reference.sample_rate()) + " vs " +
                     std::to_string(estimate.sample_rate()));
  }
  const std::size_t n = std::min(reference.size(), estimate.size());
  const std::size_t diff = std::max(reference.size(), estimate.size()) - n;
  if (diff >= static_cast<std::size_t>(cfg.pitch.hop)) {
    throw InputError("lengths differ by " + std::to_string(diff) + " samples (at least one hop)");
  }
  const AudioBuffer ref = reference.truncated(n);
  const AudioBuffer est = estimate.truncated(n);

  PairEvaluation e;
  e.tally.add(extract_pitch(ref, source, cfg.pitch), extract_pitch(est, source, cfg.pitch));
  for (std::size_t i = 0; i < n; ++i) {
    const double d = ref[i] - est[i];
    e.abs_sum += std::abs(d);
    e.sq_sum += d * d;
  }
  e.samples = n;

  const StftConfig stft_cfg{cfg.pitch.window, cfg.pitch.window, cfg.pitch.hop};
  const MelSpectrogram mr = mel_spectrogram(ref, cfg.n_mels, stft_cfg);
  const MelSpectrogram me = mel_spectrogram(est, cfg.n_mels, stft_cfg);
  e.mel_abs_sum = (mr.frames - me.frames).cwiseAbs().sum();
  e.mel_cells = static_cast<std::size_t>(mr.frames.size());
  e.phase_frames = static_cast<std::size_t>(mr.n_frames());
  e.phase_sum = phase_error(ref, est, stft_cfg) * static_cast<double>(e.phase_frames);
  return e;
}

template <PosteriorgramSource Source>
EvalReport evaluate_pair(const AudioBuffer& reference, const AudioBuffer& estimate,
                         const Source& source, const EvalConfig& cfg = {}) {
  return evaluate_pair_detail(reference, estimate, source, cfg).report();
}

}  // namespace chunkwave
