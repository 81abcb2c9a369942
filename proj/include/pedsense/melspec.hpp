#pragma once

#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include "pedsense/audio.hpp"

namespace pedsense {

// Front-end defaults: 16 kHz working rate, 25 ms Hann window zero-padded to a
// 512-point FFT, 10 ms hop, 64 mel bands over 125-7500 Hz, natural log of
// (power mel + floor). One second yields a 98x64 patch.
struct FrontendConfig {
  int sample_rate = 16000;
  int win_length = 400;
  int fft_size = 512;  // power of two, >= win_length
  int hop = 160;
  int mel_bands = 64;
  double f_min = 125.0;
  double f_max = 7500.0;
  double log_floor = 1e-2;

  int frames_per_second() const {
    return (sample_rate - win_length) / hop + 1;
  }
};

// Log-mel time-frequency matrix for one second: frames x bands, row-major.
struct MelPatch {
  int frames = 0;
  int bands = 0;
  std::vector<double> values;

  double at(int frame, int band) const { return values[frame * bands + band]; }
};

struct MelSequence {
  std::vector<MelPatch> patches;       // one per second
  std::vector<int64_t> timestamps;     // contiguous, 1 Hz
};

inline double hz_to_mel(double f) { return 2595.0 * std::log10(1.0 + f / 700.0); }
inline double mel_to_hz(double m) { return 700.0 * (std::pow(10.0, m / 2595.0) - 1.0); }

// Magnitude STFT: Hann window of win_length, zero-padded to fft_size
// (power of two), hop samples between frames. Returns
// frames x (fft_size/2 + 1), frames = floor((len - win_length)/hop) + 1.
std::vector<std::vector<double>> stft_magnitude(
    const std::vector<double>& samples, int win_length, int fft_size, int hop);

// Triangular filters equally spaced on the mel scale; bands x bins matrix,
// bins = fft_size/2 + 1.
std::vector<std::vector<double>> mel_filterbank(int n_bands, double f_min,
                                                double f_max, int fft_size,
                                                int sample_rate);

// Center frequency (Hz) of each mel band, for test signal construction.
std::vector<double> mel_band_centers(int n_bands, double f_min, double f_max);

// log(filterbank . |stft|^2 + floor) for exactly one second of samples.
// Shorter segments are zero-padded to sample_rate samples.
MelPatch segment_to_patch(const std::vector<double>& segment,
                          const FrontendConfig& cfg = {});

// One patch per whole second; a trailing partial second is dropped.
// Errors when the clip is shorter than one second or not at cfg.sample_rate.
MelSequence clip_to_sequence(const AudioClip& clip,
                             const FrontendConfig& cfg = {});

// Binary feature cache: little-endian u32 header (T, F, M) followed by
// T*F*M float32 values, row-major (t, f, m).
void write_feature_cache(const std::string& path, const MelSequence& seq);
MelSequence read_feature_cache(const std::string& path);

}  // namespace pedsense
