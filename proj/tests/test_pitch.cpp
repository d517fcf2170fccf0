#include <catch_amalgamated.hpp>

#include <algorithm>

#include "chunkwave/pitch.hpp"
#include "oracles.hpp"
#include "support.hpp"

using namespace chunkwave;
using Catch::Approx;

namespace {

using oracle::brute_force_path;
using oracle::random_posteriorgram;

double median(std::vector<double> v) {
  std::sort(v.begin(), v.end());
  return v[v.size() / 2];
}

double voiced_fraction(const PitchTrack& t) {
  return static_cast<double>(std::count(t.voiced.begin(), t.voiced.end(), true)) / static_cast<double>(t.size());
}

}  // namespace

TEST_CASE("cents of an octave") {
  CHECK(cents(880.0, 440.0) == Approx(1200.0).margin(1e-9));
  CHECK(cents(440.0, 880.0) == Approx(-1200.0).margin(1e-9));
}

TEST_CASE("log-spaced bins span the speaking range") {
  const auto f = log_spaced_bins(128);
  REQUIRE(f.size() == 128);
  CHECK(f.front() == 50.0);
  CHECK(f.back() == 550.0);
  for (std::size_t i = 1; i < f.size(); ++i) REQUIRE(f[i] > f[i - 1]);
  const double step = cents(f[1], f[0]);
  for (std::size_t i = 2; i < f.size(); ++i) REQUIRE(cents(f[i], f[i - 1]) == Approx(step).epsilon(1e-9));
}

TEST_CASE("transition matrix is row-stochastic and octave limited") {
  const auto f = log_spaced_bins(32);
  const Eigen::MatrixXd t = octave_transition_matrix(f);
  for (Eigen::Index i = 0; i < t.rows(); ++i) {
    CHECK(t.row(i).sum() == Approx(1.0));
    for (Eigen::Index j = 0; j < t.cols(); ++j) {
      if (std::abs(cents(f[i], f[j])) >= 1200.0) REQUIRE(t(i, j) == 0.0);
    }
  }
}

TEST_CASE("peaked rows decode to the per-frame argmax") {
  Posteriorgram p;
  p.bin_freqs = log_spaced_bins(16);
  p.probs = Eigen::MatrixXd::Constant(5, 16, 0.1 / 15.0);
  const int want[] = {6, 7, 7, 8, 6};
  for (int t = 0; t < 5; ++t) p.probs(t, want[t]) = 0.9;
  const ViterbiPath path = viterbi_decode(p);
  for (int t = 0; t < 5; ++t) {
    CHECK(path.bins[static_cast<std::size_t>(t)] == want[t]);
    CHECK(path.probabilities[static_cast<std::size_t>(t)] == Approx(0.9));
  }
}

TEST_CASE("an out-of-octave middle frame is not followed") {
  Posteriorgram p;
  p.bin_freqs = {100.0, 150.0, 450.0};
  p.probs.resize(3, 3);
  p.probs << 0.8, 0.15, 0.05,
             0.05, 0.15, 0.8,
             0.8, 0.15, 0.05;
  const ViterbiPath path = viterbi_decode(p);
  CHECK(path.bins[1] != 2);
  for (std::size_t t = 1; t < 3; ++t) {
    CHECK(std::abs(cents(p.bin_freqs[path.bins[t]], p.bin_freqs[path.bins[t - 1]])) <= 1200.0);
  }
}

TEST_CASE("viterbi matches exhaustive search on random small instances") {
  std::mt19937_64 rng(2024);
  std::uniform_int_distribution<int> nf(1, 6), nb(1, 8);
  for (int trial = 0; trial < 1000; ++trial) {
    const Posteriorgram p = random_posteriorgram(rng, nf(rng), nb(rng));
    const ViterbiPath path = viterbi_decode(p);
    REQUIRE(path.bins == brute_force_path(p));
    for (std::size_t t = 1; t < path.bins.size(); ++t) {
      REQUIRE(std::abs(cents(p.bin_freqs[path.bins[t]], p.bin_freqs[path.bins[t - 1]])) <= 1200.0);
    }
  }
}

TEST_CASE("viterbi ties go to the lower bin") {
  Posteriorgram p;
  p.bin_freqs = log_spaced_bins(4);
  p.probs = Eigen::MatrixXd::Constant(1, 4, 0.25);
  CHECK(viterbi_decode(p).bins[0] == 0);
  p.probs = Eigen::MatrixXd(0, 4);
  CHECK_THROWS_AS(viterbi_decode(p), InputError);
}

TEST_CASE("restrict_range drops out-of-range bins and renormalizes") {
  Posteriorgram p;
  p.bin_freqs = {40.0, 100.0, 200.0, 600.0};
  p.probs.resize(2, 4);
  p.probs << 0.4, 0.2, 0.2, 0.2,
             0.5, 0.0, 0.0, 0.5;
  const Posteriorgram r = restrict_range(p);
  CHECK(r.bin_freqs == std::vector<double>{100.0, 200.0});
  CHECK(r.probs(0, 0) == Approx(0.5));
  CHECK(r.probs(1, 0) == Approx(0.5));  // no mass left: uniform
}

TEST_CASE("periodicity gate zeroes quiet frames only") {
  PitchTrack t;
  t.pitch_hz = {100, 110, 120, 130};
  t.periodicity = {0.9, 0.8, 0.7, 0.6};
  t.voiced.assign(4, true);
  const std::vector<double> quiet(4, -70.0), loud(4, 0.0), mixed{-70.0, -50.0, -70.0, -50.0};
  for (double v : periodicity_gate(t, quiet).periodicity) CHECK(v == 0.0);
  CHECK(periodicity_gate(t, loud).periodicity == t.periodicity);
  const PitchTrack m = periodicity_gate(t, mixed);
  CHECK(m.periodicity == std::vector<double>{0.0, 0.8, 0.0, 0.6});
  CHECK(m.pitch_hz == t.pitch_hz);
  CHECK_THROWS_AS(periodicity_gate(t, std::vector<double>(3, 0.0)), InputError);
}

TEST_CASE("hysteresis keeps only long enough runs") {
  const std::vector<double> one_run{0.9, 0.9, 0.9, 0.0};
  CHECK(hysteresis_voicing(one_run, kVoicingThreshold, 3) == std::vector<bool>{true, true, true, false});
  const std::vector<double> chatter{0.2, 0.1, 0.2, 0.1, 0.2};
  CHECK(hysteresis_voicing(chatter, 0.15, 3) == std::vector<bool>(5, false));
  CHECK_THROWS_AS(hysteresis_voicing(chatter, 0.0, 3), ParameterError);
  CHECK_THROWS_AS(hysteresis_voicing(chatter, 0.5, 0), ParameterError);
}

TEST_CASE("hysteresis is a subset of thresholding and equals it for min_frames 1") {
  std::mt19937_64 rng(9);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  for (int trial = 0; trial < 300; ++trial) {
    std::vector<double> p(40);
    for (double& v : p) v = u(rng);
    const double th = 0.05 + 0.9 * u(rng);
    const auto plain = hysteresis_voicing(p, th, 1);
    for (std::size_t i = 0; i < p.size(); ++i) REQUIRE(plain[i] == (p[i] > th));
    const auto hyst = hysteresis_voicing(p, th, 1 + trial % 5);
    for (std::size_t i = 0; i < p.size(); ++i) REQUIRE((!hyst[i] || plain[i]));
  }
}

TEST_CASE("DSP posteriorgram locates a 110 Hz tone") {
  const Posteriorgram p = dsp_posteriorgram(testing::sine(110.0, 1.0));
  p.validate();
  for (Eigen::Index t = 0; t < p.frames(); ++t) {
    Eigen::Index arg;
    p.probs.row(t).maxCoeff(&arg);
    REQUIRE(std::abs(cents(p.bin_freqs[static_cast<std::size_t>(arg)], 110.0)) <= 50.0);
  }
}

TEST_CASE("DSP posteriorgram of noise is nearly flat and of silence is uniform") {
  const Posteriorgram n = dsp_posteriorgram(testing::noise(22050, 77));
  for (Eigen::Index t = 0; t < n.frames(); ++t) REQUIRE(n.probs.row(t).maxCoeff() < 3.0 / 128.0);
  const Posteriorgram s = dsp_posteriorgram(testing::silence(8192));
  for (Eigen::Index i = 0; i < s.probs.size(); ++i) REQUIRE(s.probs.data()[i] == 1.0 / 128.0);
}

TEST_CASE("DSP posteriorgram needs a window longer than the longest period") {
  DspPitchConfig cfg;
  cfg.window = 256;
  cfg.hop = 128;
  CHECK_THROWS_AS(dsp_posteriorgram(testing::sine(220.0, 0.5), cfg), ParameterError);
}

TEST_CASE("posteriorgram files round-trip exactly") {
  testing::TempDir dir("fpg");
  std::mt19937_64 rng(4);
  Posteriorgram p = random_posteriorgram(rng, 7, 12);
  p.probs = p.probs.cast<float>().cast<double>();
  write_posteriorgram(p, dir / "p.fpg");
  const Posteriorgram q = read_posteriorgram(dir / "p.fpg");
  CHECK(q.probs == p.probs);
  CHECK(q.hop_seconds == p.hop_seconds);
  CHECK(q.bin_freqs == p.bin_freqs);
}

TEST_CASE("handcrafted two-frame posteriorgram decodes to the expected matrix") {
  std::string bytes = "FPG1";
  auto put = [&bytes](const auto& v) { bytes.append(reinterpret_cast<const char*>(&v), sizeof v); };
  put(std::uint32_t{2});
  put(std::uint32_t{4});
  put(0.01);
  put(100.0);
  put(400.0);
  for (float v : {0.25f, 0.25f, 0.25f, 0.25f, 0.5f, 0.125f, 0.125f, 0.25f}) put(v);
  REQUIRE(bytes.size() == 36 + 32);
  const Posteriorgram p = decode_posteriorgram(std::span(reinterpret_cast<const unsigned char*>(bytes.data()), bytes.size()));
  Eigen::MatrixXd want(2, 4);
  want << 0.25, 0.25, 0.25, 0.25, 0.5, 0.125, 0.125, 0.25;
  CHECK(p.probs == want);
  CHECK(p.bin_freqs.front() == 100.0);
  CHECK(p.bin_freqs.back() == 400.0);
  CHECK(p.bin_freqs[1] == Approx(100.0 * std::pow(4.0, 1.0 / 3.0)));

  auto decode = [](std::string b) {
    return decode_posteriorgram(std::span(reinterpret_cast<const unsigned char*>(b.data()), b.size()));
  };
  std::string bad_magic = bytes;
  bad_magic.replace(0, 4, "XXXX");
  CHECK_THROWS_AS(decode(bad_magic), FormatError);
  CHECK_THROWS_AS(decode(bytes.substr(0, bytes.size() - 3)), FormatError);
  std::string bad_sum = bytes;
  const float heavy = 0.6f;
  std::memcpy(bad_sum.data() + 36, &heavy, 4);
  CHECK_THROWS_AS(decode(bad_sum), FormatError);
}

TEST_CASE("220 Hz full-scale sine is tracked and voiced") {
  const PitchTrack t = extract_pitch(testing::sine(220.0, 2.0), DspPosteriorgramSource{});
  REQUIRE(t.periodicity.size() == t.size());
  REQUIRE(t.voiced.size() == t.size());
  CHECK(std::abs(cents(median(t.pitch_hz), 220.0)) <= 50.0);
  CHECK(voiced_fraction(t) >= 0.9);
}

TEST_CASE("nearly silent tone and digital silence are unvoiced") {
  const PitchTrack quiet = extract_pitch(testing::sine(220.0, 2.0, 22050, 1e-5), DspPosteriorgramSource{});
  CHECK(voiced_fraction(quiet) == 0.0);
  const PitchTrack silent = extract_pitch(testing::silence(22050), DspPosteriorgramSource{});
  CHECK(voiced_fraction(silent) == 0.0);
  for (double v : silent.periodicity) CHECK(v == 0.0);
}

TEST_CASE("a stored posteriorgram at another frame rate is resampled to the mel frames") {
  const Posteriorgram p = read_posteriorgram(std::string(FIXTURE_DIR) + "/peak220.fpg");
  const AudioBuffer tone = testing::sine(220.0, 1.5);
  const PitchTrack t = extract_pitch(tone, StoredPosteriorgramSource{p});
  CHECK(t.size() == frame_count(tone.size(), StftConfig{}));
  CHECK(std::abs(cents(median(t.pitch_hz), 220.0)) <= 50.0);
  CHECK(voiced_fraction(t) >= 0.9);
}

TEST_CASE("pitch CSV has one row per frame") {
  PitchTrack t;
  t.pitch_hz = {100.0, 200.0};
  t.periodicity = {0.5, 0.25};
  t.voiced = {true, false};
  t.hop_seconds = 0.01;
  std::ostringstream out;
  write_pitch_csv(t, out);
  CHECK(out.str() == "time,pitch,periodicity,voiced\n0.000000,100.000000,0.500000,1\n0.010000,200.000000,0.250000,0\n");
}
