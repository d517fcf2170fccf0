// Walks through the library on synthetic data: pitch tracking of a gliding
// tone, the metrics against a detuned copy, receptive fields of the
// generator stacks, and the phase recursion run through chunked generation.

#include <cmath>
#include <cstdio>
#include <numbers>
#include <vector>

#include "chunkwave/chunkwave.hpp"

using namespace chunkwave;

namespace {

AudioBuffer glide(double f0, double f1, double seconds, int sr, double amp = 0.5) {
  const auto n = static_cast<std::size_t>(seconds * sr);
  std::vector<double> freqs(n);
  for (std::size_t i = 0; i < n; ++i) freqs[i] = f0 + (f1 - f0) * static_cast<double>(i) / static_cast<double>(n);
  std::vector<double> x = phase_recursion(freqs, sr);
  for (double& v : x) v = amp * std::sin(v);
  return AudioBuffer(std::move(x), sr);
}

}  // namespace

int main() {
  const int sr = 22050;
  const AudioBuffer ref = glide(180.0, 260.0, 1.5, sr);
  const AudioBuffer est = glide(180.0 * 1.01, 260.0 * 1.01, 1.5, sr);

  const DspPosteriorgramSource source;
  const PitchTrack track = extract_pitch(ref, source);
  std::printf("frames %zu, first voiced pitch ", track.size());
  for (std::size_t i = 0; i < track.size(); ++i) {
    if (track.voiced[i]) {
      std::printf("%.1f Hz at %.3f s\n", track.pitch_hz[i], static_cast<double>(i) * track.hop_seconds);
      break;
    }
  }

  const EvalReport r = evaluate_pair(ref, est, source);
  std::printf("1%% detune: pitch rmse %.1f cents over %zu frames, periodicity rmse %.4f, f1 %.3f\n",
              r.pitch_rmse_cents.value_or(NAN), r.n_joint_voiced_frames, r.periodicity_rmse, r.voicing_f1);

  std::printf("receptive field: kernel 3 -> %lld, kernel 15 -> %lld\n",
              static_cast<long long>(causal_receptive_field(generator_spec(10, 3))),
              static_cast<long long>(causal_receptive_field(generator_spec(10, 15))));

  // A generator that continues the phase ramp from its context reproduces the
  // unchunked recursion.
  const double f = 220.0;
  ChunkPlan plan;
  plan.chunk_size = 2048;
  plan.context_size = 2;
  plan.total_length = sr;
  const Eigen::MatrixXd cond = Eigen::MatrixXd::Constant(1, sr, f);
  auto continue_phase = [&](std::span<const double> ctx, const Eigen::MatrixXd& frames) {
    std::vector<double> freqs(static_cast<std::size_t>(plan.chunk_size), f);
    for (Eigen::Index i = 0; i < frames.cols(); ++i) freqs[static_cast<std::size_t>(i)] = frames(0, i);
    return phase_recursion(freqs, sr, ctx.back());
  };
  const std::vector<double> chunked = generate(plan, continue_phase, cond);
  const std::vector<double> direct = phase_recursion(std::vector<double>(static_cast<std::size_t>(sr), f), sr);
  double worst = 0.0;
  for (std::size_t i = 0; i < direct.size(); ++i) worst = std::max(worst, std::abs(chunked[i] - direct[i]));
  std::printf("chunked vs direct phase, max difference %.3g rad\n", worst);
  return 0;
}
