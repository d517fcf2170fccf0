#pragma once

// Chunked autoregressive generation: each generator call produces k samples
// conditioned on the previous n generated samples and on the conditioning
// frames overlapping the chunk.

#include <Eigen/Dense>

#include <cmath>
#include <cstdint>
#include <functional>
#include <numbers>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "chunkwave/error.hpp"

namespace chunkwave {

struct ChunkPlan {
  int chunk_size = 2048;       // k
  int context_size = 512;      // n
  std::int64_t total_length = 1;
  int conditioning_hop = 1;    // output samples per conditioning frame

  void validate() const {
    if (chunk_size < 1) throw ParameterError("chunk size must be >= 1");
    if (context_size < 1) throw ParameterError("context size must be >= 1");
    if (total_length < 1) throw ParameterError("total length must be >= 1");
    if (conditioning_hop < 1) throw ParameterError("conditioning hop must be >= 1");
  }

  std::int64_t n_chunks() const { return (total_length + chunk_size - 1) / chunk_size; }
  std::int64_t n_frames() const { return (total_length + conditioning_hop - 1) / conditioning_hop; }
};

// (context of n samples, conditioning frames of the chunk) -> k samples.
// Conditioning is (channels x frames).
using ChunkGenerator =
    std::function<std::vector<double>(std::span<const double>, const Eigen::MatrixXd&)>;

inline std::vector<double> concat_with_context(std::span<const double> context,
                                               std::span<const double> chunk) {
  std::vector<double> out(context.begin(), context.end());
  out.insert(out.end(), chunk.begin(), chunk.end());
  return out;
}

// Runs the chunk loop. The context starts as zeros unless `warm_start`
// (exactly n samples) is given. Frames handed to chunk c are those whose
// hop-aligned sample span intersects the chunk; the trailing chunk sees only
// the frames that exist and its output is truncated to total_length.
template <typename Gen>
std::vector<double> generate(const ChunkPlan& plan, Gen&& gen, const Eigen::MatrixXd& conditioning,
                             std::optional<std::vector<double>> warm_start = std::nullopt) {
  plan.validate();
  if (conditioning.cols() < plan.n_frames()) {
    throw InputError("conditioning has " + std::to_string(conditioning.cols()) + " frames; " +
                     std::to_string(plan.n_frames()) + " needed");
  }
  const auto n = static_cast<std::size_t>(plan.context_size);
  std::vector<double> context(n, 0.0);
  if (warm_start) {
    if (warm_start->size() != n) {
      throw ParameterError("warm start must hold exactly " + std::to_string(n) + " samples");
    }
    context = std::move(*warm_start);
  }

  const std::int64_t k = plan.chunk_size;
  const std::int64_t hop = plan.conditioning_hop;
  std::vector<double> out;
  out.reserve(static_cast<std::size_t>(plan.total_length));
  for (std::int64_t c = 0; c < plan.n_chunks(); ++c) {
    const std::int64_t start = c * k;
    const std::int64_t end = std::min(start + k, plan.total_length);
    const std::int64_t f0 = start / hop;
    const std::int64_t f1 = (end + hop - 1) / hop;
    const Eigen::MatrixXd frames = conditioning.middleCols(f0, f1 - f0);
    const std::vector<double> chunk = gen(std::span<const double>(context), frames);
    if (static_cast<std::int64_t>(chunk.size()) != k) {
      throw ContractError("chunk generator returned " + std::to_string(chunk.size()) +
                          " samples for chunk " + std::to_string(c) + "; expected " +
                          std::to_string(k));
    }
    out.insert(out.end(), chunk.begin(), chunk.begin() + (end - start));
    if (end == plan.total_length) break;
    const std::vector<double> joined = concat_with_context(context, chunk);
    context.assign(joined.end() - static_cast<std::ptrdiff_t>(n), joined.end());
  }
  return out;
}

// Unwrapped phase from instantaneous frequency:
// phi[t] = phi[t-1] + 2*pi/r * f[t], with phi[-1] = phi0.
inline std::vector<double> phase_recursion(std::span<const double> freqs, double sample_rate,
                                           double phi0 = 0.0) {
  if (!(sample_rate > 0.0)) throw ParameterError("sample rate must be positive");
  const double step = 2.0 * std::numbers::pi / sample_rate;
  std::vector<double> phase(freqs.size());
  double phi = phi0;
  for (std::size_t t = 0; t < freqs.size(); ++t) {
    if (!std::isfinite(freqs[t])) throw InputError("non-finite frequency at sample " + std::to_string(t));
    phi += step * freqs[t];
    phase[t] = phi;
  }
  return phase;
}

}  // namespace chunkwave
