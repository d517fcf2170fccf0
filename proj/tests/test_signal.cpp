#include <catch_amalgamated.hpp>

#include <cstring>

#include "chunkwave/signal.hpp"
#include "support.hpp"

using namespace chunkwave;
using Catch::Approx;

namespace {

// Minimal RIFF writer independent of encode_wav.
std::string riff(std::uint16_t format, std::uint16_t channels, std::uint32_t rate, std::uint16_t bits,
                 const std::string& data) {
  auto u16 = [](std::uint16_t v) { return std::string{static_cast<char>(v & 0xff), static_cast<char>(v >> 8)}; };
  auto u32 = [](std::uint32_t v) {
    std::string s;
    for (int i = 0; i < 4; ++i) s.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
    return s;
  };
  const std::uint16_t align = static_cast<std::uint16_t>(channels * bits / 8);
  std::string fmt = u16(format) + u16(channels) + u32(rate) + u32(rate * align) + u16(align) + u16(bits);
  std::string body = "WAVE" + std::string("fmt ") + u32(16) + fmt + "data" + u32(static_cast<std::uint32_t>(data.size())) + data;
  return "RIFF" + u32(static_cast<std::uint32_t>(body.size())) + body;
}

std::string pcm16(std::initializer_list<std::int16_t> v) {
  std::string s;
  for (std::int16_t x : v) {
    const auto u = static_cast<std::uint16_t>(x);
    s.push_back(static_cast<char>(u & 0xff));
    s.push_back(static_cast<char>(u >> 8));
  }
  return s;
}

AudioBuffer decode(const std::string& bytes) {
  return decode_wav(std::span(reinterpret_cast<const unsigned char*>(bytes.data()), bytes.size()));
}

}  // namespace

TEST_CASE("AudioBuffer rejects bad sample rates and non-finite samples") {
  CHECK_THROWS_AS(AudioBuffer({0.0}, 0), InputError);
  CHECK_THROWS_AS(AudioBuffer({0.0, NAN}, 16000), InputError);
  CHECK_THROWS_AS(AudioBuffer({INFINITY}, 16000), InputError);
}

TEST_CASE("16-bit PCM is scaled by 1/32768") {
  const AudioBuffer a = decode(riff(1, 1, 22050, 16, pcm16({0, 16384, -32768})));
  REQUIRE(a.size() == 3);
  CHECK(a[0] == 0.0);
  CHECK(a[1] == 0.5);
  CHECK(a[2] == -1.0);
  CHECK(a.sample_rate() == 22050);
}

TEST_CASE("multichannel audio is averaged to mono") {
  const AudioBuffer a = decode(riff(1, 2, 8000, 16, pcm16({16384, 16384, 0, 16384})));
  REQUIRE(a.size() == 2);
  CHECK(a[0] == 0.5);
  CHECK(a[1] == 0.25);

  std::string data;
  for (float v : {1.0f, 1.0f, 0.0f, 1.0f}) data.append(reinterpret_cast<const char*>(&v), 4);
  const AudioBuffer f = decode(riff(3, 2, 8000, 32, data));
  REQUIRE(f.size() == 2);
  CHECK(f[0] == 1.0);
  CHECK(f[1] == 0.5);
}

TEST_CASE("float WAV round-trips bit-exactly") {
  testing::TempDir dir("signal");
  std::mt19937 rng(3);
  std::uniform_real_distribution<float> dist(-1.f, 1.f);
  std::vector<double> x(1001);
  for (double& v : x) v = dist(rng);
  const AudioBuffer a(x, 44100);
  save_wav(dir / "a.wav", a);
  const AudioBuffer b = load_wav(dir / "a.wav");
  REQUIRE(b.size() == a.size());
  CHECK(b.sample_rate() == 44100);
  for (std::size_t i = 0; i < a.size(); ++i) REQUIRE(b[i] == a[i]);
}

TEST_CASE("WAV errors name the offending chunk") {
  auto message = [](const std::string& bytes) {
    try {
      decode(bytes);
    } catch (const FormatError& e) {
      return std::string(e.what());
    }
    return std::string("no error");
  };
  CHECK_THAT(message("RIFX0000WAVE"), Catch::Matchers::ContainsSubstring("RIFF"));
  CHECK_THAT(message(riff(1, 1, 8000, 24, std::string(6, '\0'))), Catch::Matchers::ContainsSubstring("fmt "));
  std::string truncated = riff(1, 1, 8000, 16, pcm16({1, 2, 3}));
  truncated.resize(truncated.size() - 2);
  CHECK_THAT(message(truncated), Catch::Matchers::ContainsSubstring("data"));
  CHECK_THROWS_AS(load_wav("/nonexistent/file.wav"), FormatError);
}

TEST_CASE("peak_normalize only raises quiet audio") {
  const AudioBuffer quiet({0.1, -0.2, 0.05}, 16000);
  const AudioBuffer q = peak_normalize(quiet);
  CHECK(q.peak() == Approx(0.35).epsilon(1e-12));
  CHECK(q[1] == Approx(-0.35));

  const AudioBuffer loud({0.9, -0.3}, 16000);
  const AudioBuffer l = peak_normalize(loud);
  CHECK(l[0] == 0.9);
  CHECK(l[1] == -0.3);

  const AudioBuffer zero = peak_normalize(testing::silence(10));
  CHECK(zero.peak() == 0.0);

  CHECK_THROWS_AS(peak_normalize(quiet, 0.0), ParameterError);
}

TEST_CASE("peak_normalize is idempotent") {
  for (std::uint64_t seed = 0; seed < 50; ++seed) {
    const double amp = 0.01 + 0.02 * static_cast<double>(seed);
    const AudioBuffer a = testing::noise(500, seed, 16000, amp);
    const AudioBuffer once = peak_normalize(a);
    const AudioBuffer twice = peak_normalize(once);
    for (std::size_t i = 0; i < a.size(); ++i) REQUIRE(once[i] == twice[i]);
  }
}

TEST_CASE("A-weighting matches the standard curve") {
  CHECK(a_weighting_db(1000.0) == Approx(0.0).margin(0.01));
  CHECK(a_weighting_db(100.0) == Approx(-19.1).margin(0.05));
  CHECK(a_weighting_db(10000.0) == Approx(-2.5).margin(0.05));
  CHECK(std::isinf(a_weighting_db(0.0)));
}

TEST_CASE("loudness of a 1 kHz sine equals its unweighted loudness") {
  const AudioBuffer a = testing::sine(1000.0, 1.0, 22050);
  const auto weighted = a_weighted_loudness(a);
  const ComplexSpectrogram spec = stft(a);
  REQUIRE(weighted.size() == static_cast<std::size_t>(spec.frames()));
  for (Eigen::Index f = 2; f + 2 < spec.frames(); ++f) {
    const double power = spec.magnitude.col(f).squaredNorm() / static_cast<double>(spec.bins());
    const double plain = 10.0 * std::log10(power) - kLoudnessReferenceDb;
    CHECK(weighted[static_cast<std::size_t>(f)] == Approx(plain).margin(0.1));
  }
}

TEST_CASE("loudness floors silence and penalizes low frequencies") {
  for (double db : a_weighted_loudness(testing::silence(4096))) CHECK(db == kLoudnessFloorDb);
  const auto lo = a_weighted_loudness(testing::sine(100.0, 1.0));
  const auto hi = a_weighted_loudness(testing::sine(1000.0, 1.0));
  REQUIRE(lo.size() == hi.size());
  for (std::size_t f = 2; f + 2 < lo.size(); ++f) CHECK(hi[f] - lo[f] >= 15.0);
  CHECK_THROWS_AS(a_weighted_loudness(testing::sine(100.0, 0.1), 1, 1), ParameterError);
}

TEST_CASE("loudness frames line up with STFT frames") {
  for (std::size_t n : {1024u, 3000u, 22050u, 65536u}) {
    const AudioBuffer a = testing::noise(n, n, 22050);
    CHECK(a_weighted_loudness(a).size() == static_cast<std::size_t>(stft(a).frames()));
  }
}

TEST_CASE("resample_track interpolates linearly or in log2") {
  const std::vector<double> geo{100.0, 400.0};
  const auto g = resample_track(geo, 3, true);
  REQUIRE(g.size() == 3);
  CHECK(g[0] == 100.0);
  CHECK(g[1] == Approx(200.0).epsilon(1e-12));
  CHECK(g[2] == 400.0);

  const std::vector<double> lin{1.0, 3.0};
  const auto l = resample_track(lin, 3, false);
  CHECK(l == std::vector<double>{1.0, 2.0, 3.0});

  const std::vector<double> v{5.0, 7.0, 2.0, 9.0};
  CHECK(resample_track(v, v.size(), false) == v);
  CHECK(resample_track(v, v.size(), true) == v);
}

TEST_CASE("resample_track keeps endpoints in log2 mode") {
  std::mt19937_64 rng(11);
  std::uniform_real_distribution<double> pitch(50.0, 550.0);
  std::uniform_int_distribution<int> len(1, 40);
  for (int trial = 0; trial < 200; ++trial) {
    std::vector<double> v(static_cast<std::size_t>(len(rng)));
    for (double& x : v) x = pitch(rng);
    const auto out = resample_track(v, static_cast<std::size_t>(len(rng)), true);
    REQUIRE(out.front() == v.front());
    if (out.size() > 1) REQUIRE(out.back() == v.back());
  }
}

TEST_CASE("resample_track rejects bad input") {
  const std::vector<double> v{1.0, -1.0};
  CHECK_THROWS_AS(resample_track(v, 0, false), ParameterError);
  CHECK_THROWS_AS(resample_track(v, 4, true), DomainError);
  CHECK_THROWS_AS(resample_track(std::vector<double>{}, 4, false), InputError);
}
