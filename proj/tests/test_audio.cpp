#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <cstdint>
#include <fstream>
#include <vector>

#include "pedsense/audio.hpp"
#include "pedsense/error.hpp"

using namespace pedsense;

namespace {

constexpr double kPi = 3.14159265358979323846;

void put_u32(std::string& s, uint32_t v) {
  for (int i = 0; i < 4; ++i) s.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}
void put_u16(std::string& s, uint16_t v) {
  s.push_back(static_cast<char>(v & 0xff));
  s.push_back(static_cast<char>((v >> 8) & 0xff));
}

// Minimal RIFF writer: format 1 = integer PCM, 3 = float32.
std::string wav_bytes(uint16_t format, uint16_t channels, uint32_t rate,
                      uint16_t bits, const std::string& payload) {
  std::string body;
  body += "WAVE";
  body += "fmt ";
  put_u32(body, 16);
  put_u16(body, format);
  put_u16(body, channels);
  put_u32(body, rate);
  put_u32(body, rate * channels * bits / 8);
  put_u16(body, channels * bits / 8);
  put_u16(body, bits);
  body += "data";
  put_u32(body, static_cast<uint32_t>(payload.size()));
  body += payload;
  std::string out = "RIFF";
  put_u32(out, static_cast<uint32_t>(body.size()));
  out += body;
  return out;
}

void write_file(const std::string& path, const std::string& bytes) {
  std::ofstream out(path, std::ios::binary);
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
}

std::string pcm16(const std::vector<int16_t>& samples) {
  std::string s;
  for (int16_t v : samples) put_u16(s, static_cast<uint16_t>(v));
  return s;
}

// Single-bin DFT magnitude at frequency f (Hz).
double dft_mag(const std::vector<double>& x, int rate, double f) {
  double re = 0.0, im = 0.0;
  for (size_t n = 0; n < x.size(); ++n) {
    const double w = 2.0 * kPi * f * static_cast<double>(n) / rate;
    re += x[n] * std::cos(w);
    im -= x[n] * std::sin(w);
  }
  return std::hypot(re, im);
}

}  // namespace

TEST_CASE("16-bit PCM scaling") {
  const char* path = "/tmp/pedsense_a16.wav";
  write_file(path, wav_bytes(1, 1, 16000, 16, pcm16({0, 32767, -32768})));
  AudioClip clip = load_wav(path);
  REQUIRE(clip.samples.size() == 3);
  CHECK(clip.sample_rate == 16000);
  CHECK(clip.samples[0] == doctest::Approx(0.0));
  CHECK(clip.samples[1] == doctest::Approx(32767.0 / 32768.0));
  CHECK(clip.samples[2] == doctest::Approx(-1.0));
}

TEST_CASE("stereo averages to mono") {
  const char* path = "/tmp/pedsense_ast.wav";
  write_file(path, wav_bytes(1, 2, 16000, 16, pcm16({32767, 0})));
  AudioClip clip = load_wav(path);
  REQUIRE(clip.samples.size() == 1);
  CHECK(clip.samples[0] == doctest::Approx(0.5).epsilon(1e-4));
}

TEST_CASE("float32 payload") {
  std::string payload;
  for (float v : {0.25f, -0.5f}) {
    uint32_t bits;
    std::memcpy(&bits, &v, 4);
    put_u32(payload, bits);
  }
  const char* path = "/tmp/pedsense_af.wav";
  write_file(path, wav_bytes(3, 1, 8000, 32, payload));
  AudioClip clip = load_wav(path);
  REQUIRE(clip.samples.size() == 2);
  CHECK(clip.samples[0] == doctest::Approx(0.25));
  CHECK(clip.samples[1] == doctest::Approx(-0.5));
}

TEST_CASE("distinct error values per failure mode") {
  const char* path = "/tmp/pedsense_abad.wav";

  write_file(path, "RIFFxx");
  try {
    load_wav(path);
    FAIL("expected error");
  } catch (const Error& e) {
    CHECK(e.code() == "wav.bad_header");
  }

  write_file(path, wav_bytes(1, 1, 16000, 16, ""));
  try {
    load_wav(path);
    FAIL("expected error");
  } catch (const Error& e) {
    CHECK(e.code() == "wav.empty");
  }

  // 12-bit depth is not a supported codec.
  write_file(path, wav_bytes(1, 1, 16000, 12, pcm16({0, 0})));
  try {
    load_wav(path);
    FAIL("expected error");
  } catch (const Error& e) {
    CHECK(e.code() == "wav.unsupported_codec");
  }

  // Four channels exceed the supported layouts.
  write_file(path, wav_bytes(1, 4, 16000, 16, pcm16({0, 0, 0, 0})));
  CHECK_THROWS_AS(load_wav(path), Error);
}

TEST_CASE("write then load round trip") {
  AudioClip clip;
  clip.sample_rate = 16000;
  clip.samples.resize(1600);
  for (size_t i = 0; i < clip.samples.size(); ++i) {
    clip.samples[i] = 0.8 * std::sin(2.0 * kPi * 440.0 * i / 16000.0);
  }
  const char* path = "/tmp/pedsense_rt.wav";
  write_wav(path, clip);
  AudioClip loaded = load_wav(path);
  REQUIRE(loaded.samples.size() == clip.samples.size());
  for (size_t i = 0; i < clip.samples.size(); ++i) {
    CHECK(loaded.samples[i] ==
          doctest::Approx(clip.samples[i]).epsilon(1e-3));
  }
}

TEST_CASE("resample at the same rate is the identity") {
  AudioClip clip;
  clip.sample_rate = 16000;
  clip.samples = {0.1, -0.2, 0.3, 0.0};
  AudioClip out = resample(clip, 16000);
  CHECK(out.samples == clip.samples);
}

TEST_CASE("DC survives 48k to 16k") {
  AudioClip clip;
  clip.sample_rate = 48000;
  clip.samples.assign(48000, 0.5);
  AudioClip out = resample(clip, 16000);
  REQUIRE(std::llabs(static_cast<long long>(out.samples.size()) - 16000) <= 1);
  for (size_t i = 100; i + 100 < out.samples.size(); ++i) {
    CHECK(std::abs(out.samples[i] - 0.5) < 1e-3);
  }
}

TEST_CASE("440 Hz sinusoid keeps its DFT peak through 48k to 16k") {
  AudioClip clip;
  clip.sample_rate = 48000;
  clip.samples.resize(48000);
  for (size_t i = 0; i < clip.samples.size(); ++i) {
    clip.samples[i] = std::sin(2.0 * kPi * 440.0 * i / 48000.0);
  }
  AudioClip out = resample(clip, 16000);
  // 1 Hz resolution scan up to 1 kHz.
  double best_mag = -1.0;
  int best_f = -1;
  for (int f = 1; f <= 1000; ++f) {
    const double m = dft_mag(out.samples, 16000, f);
    if (m > best_mag) {
      best_mag = m;
      best_f = f;
    }
  }
  CHECK(best_f == 440);
}

TEST_CASE("band-limited round trip 16k-48k-16k") {
  AudioClip clip;
  clip.sample_rate = 16000;
  clip.samples.resize(16000);
  for (size_t i = 0; i < clip.samples.size(); ++i) {
    const double t = static_cast<double>(i) / 16000.0;
    clip.samples[i] = 0.3 * std::sin(2.0 * kPi * 440.0 * t) +
                      0.3 * std::sin(2.0 * kPi * 1234.0 * t) +
                      0.3 * std::sin(2.0 * kPi * 3000.0 * t);
  }
  AudioClip back = resample(resample(clip, 48000), 16000);
  REQUIRE(std::llabs(static_cast<long long>(back.samples.size()) -
                     static_cast<long long>(clip.samples.size())) <= 1);
  const size_t n = std::min(back.samples.size(), clip.samples.size());
  for (size_t i = 100; i + 100 < n; ++i) {
    CHECK(std::abs(back.samples[i] - clip.samples[i]) < 1e-3);
  }
}

TEST_CASE("resample rejects a non-positive target rate") {
  AudioClip clip;
  clip.sample_rate = 16000;
  clip.samples = {0.0, 0.1};
  CHECK_THROWS_AS(resample(clip, 0), Error);
}
