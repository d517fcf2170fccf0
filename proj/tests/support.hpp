#pragma once

#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <numbers>
#include <random>
#include <sys/wait.h>
#include <string>
#include <vector>

#include "chunkwave/audio_buffer.hpp"

namespace testing {

inline chunkwave::AudioBuffer sine(double hz, double seconds, int sr = 22050, double amp = 1.0) {
  const auto n = static_cast<std::size_t>(std::lround(seconds * sr));
  std::vector<double> x(n);
  for (std::size_t i = 0; i < n; ++i) x[i] = amp * std::sin(2.0 * std::numbers::pi * hz * static_cast<double>(i) / sr);
  return chunkwave::AudioBuffer(std::move(x), sr);
}

inline chunkwave::AudioBuffer silence(std::size_t n, int sr = 22050) {
  return chunkwave::AudioBuffer(std::vector<double>(n, 0.0), sr);
}

inline chunkwave::AudioBuffer noise(std::size_t n, std::uint64_t seed, int sr = 22050, double amp = 0.5) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> dist(-amp, amp);
  std::vector<double> x(n);
  for (double& v : x) v = dist(rng);
  return chunkwave::AudioBuffer(std::move(x), sr);
}

// Fresh directory under the system temp dir, removed on destruction.
class TempDir {
 public:
  explicit TempDir(const std::string& tag) {
    std::random_device rd;
    path_ = std::filesystem::temp_directory_path() / ("chunkwave-" + tag + "-" + std::to_string(rd()));
    std::filesystem::create_directories(path_);
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path_, ec);
  }
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;

  const std::filesystem::path& path() const { return path_; }
  std::filesystem::path operator/(const std::string& name) const { return path_ / name; }

 private:
  std::filesystem::path path_;
};

inline std::string slurp(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

// Runs a shell command and returns its exit status.
inline int run(const std::string& cmd) {
  const int status = std::system(cmd.c_str());
  if (status == -1) return -1;
  if (WIFEXITED(status)) return WEXITSTATUS(status);
  return -1;
}

inline std::string quote(const std::filesystem::path& p) { return "'" + p.string() + "'"; }

}  // namespace testing
