#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "chunkwave/error.hpp"

namespace chunkwave {

// Mono waveform with its sample rate. Samples are finite and nominally in
// [-1, 1]; the rate is strictly positive.
class AudioBuffer {
 public:
  AudioBuffer(std::vector<double> samples, int sample_rate)
      : samples_(std::move(samples)), sample_rate_(sample_rate) {
    if (sample_rate_ <= 0) {
      throw InputError("sample rate must be positive, got " +
                       std::to_string(sample_rate_));
    }
    for (std::size_t i = 0; i < samples_.size(); ++i) {
      if (!std::isfinite(samples_[i])) {
        throw InputError("non-finite sample at index " + std::to_string(i));
      }
    }
  }

  std::span<const double> samples() const noexcept { return samples_; }
  const std::vector<double>& vector() const noexcept { return samples_; }
  int sample_rate() const noexcept { return sample_rate_; }
  std::size_t size() const noexcept { return samples_.size(); }
  bool empty() const noexcept { return samples_.empty(); }
  double operator[](std::size_t i) const noexcept { return samples_[i]; }

  double duration_seconds() const noexcept {
    return static_cast<double>(samples_.size()) / sample_rate_;
  }

  double peak() const noexcept {
    double p = 0.0;
    for (double s : samples_) p = std::max(p, std::abs(s));
    return p;
  }

  // First `n` samples (or all of them if shorter).
  AudioBuffer truncated(std::size_t n) const {
    n = std::min(n, samples_.size());
    return AudioBuffer(std::vector<double>(samples_.begin(), samples_.begin() + n),
                       sample_rate_);
  }

  AudioBuffer scaled(double gain) const {
    std::vector<double> out(samples_);
    for (double& s : out) s *= gain;
    return AudioBuffer(std::move(out), sample_rate_);
  }

 private:
  std::vector<double> samples_;
  int sample_rate_;
};

}  // namespace chunkwave
