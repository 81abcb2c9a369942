#include "pedsense/melspec.hpp"

#include <cmath>
#include <complex>
#include <cstring>
#include <fstream>

#include "pedsense/error.hpp"

namespace pedsense {
namespace {

bool is_power_of_two(int n) { return n > 0 && (n & (n - 1)) == 0; }

// In-place iterative radix-2 FFT.
void fft(std::vector<std::complex<double>>& a) {
  const size_t n = a.size();
  for (size_t i = 1, j = 0; i < n; ++i) {
    size_t bit = n >> 1;
    for (; j & bit; bit >>= 1) j ^= bit;
    j ^= bit;
    if (i < j) std::swap(a[i], a[j]);
  }
  for (size_t len = 2; len <= n; len <<= 1) {
    const double angle = -2.0 * M_PI / static_cast<double>(len);
    const std::complex<double> wl(std::cos(angle), std::sin(angle));
    for (size_t i = 0; i < n; i += len) {
      std::complex<double> w(1.0, 0.0);
      for (size_t k = 0; k < len / 2; ++k) {
        const std::complex<double> u = a[i + k];
        const std::complex<double> v = a[i + k + len / 2] * w;
        a[i + k] = u + v;
        a[i + k + len / 2] = u - v;
        w *= wl;
      }
    }
  }
}

std::vector<double> hann_window(int n) {
  std::vector<double> w(n);
  for (int i = 0; i < n; ++i) {
    w[i] = 0.5 - 0.5 * std::cos(2.0 * M_PI * i / n);
  }
  return w;
}

void put_u32(std::ofstream& f, uint32_t v) {
  uint8_t b[4] = {static_cast<uint8_t>(v & 0xff),
                  static_cast<uint8_t>((v >> 8) & 0xff),
                  static_cast<uint8_t>((v >> 16) & 0xff),
                  static_cast<uint8_t>((v >> 24) & 0xff)};
  f.write(reinterpret_cast<const char*>(b), 4);
}

uint32_t get_u32(std::ifstream& f) {
  uint8_t b[4];
  f.read(reinterpret_cast<char*>(b), 4);
  return static_cast<uint32_t>(b[0]) | static_cast<uint32_t>(b[1]) << 8 |
         static_cast<uint32_t>(b[2]) << 16 | static_cast<uint32_t>(b[3]) << 24;
}

}  // namespace

std::vector<std::vector<double>> stft_magnitude(
    const std::vector<double>& samples, int win_length, int fft_size,
    int hop) {
  if (!is_power_of_two(fft_size) || fft_size < win_length) {
    throw_input("stft.bad_fft_size",
                "fft_size must be a power of two >= win_length");
  }
  if (hop <= 0 || hop > win_length) {
    throw_input("stft.bad_hop", "hop must be in (0, win_length]");
  }
  if (static_cast<int>(samples.size()) < win_length) {
    throw_input("stft.short_input", "input shorter than one window");
  }
  const int n_frames =
      (static_cast<int>(samples.size()) - win_length) / hop + 1;
  const int n_bins = fft_size / 2 + 1;
  const std::vector<double> window = hann_window(win_length);

  std::vector<std::vector<double>> mag(n_frames, std::vector<double>(n_bins));
  std::vector<std::complex<double>> buf(fft_size);
  for (int t = 0; t < n_frames; ++t) {
    std::fill(buf.begin(), buf.end(), std::complex<double>(0.0, 0.0));
    const double* src = samples.data() + static_cast<size_t>(t) * hop;
    for (int i = 0; i < win_length; ++i) buf[i] = src[i] * window[i];
    fft(buf);
    for (int k = 0; k < n_bins; ++k) mag[t][k] = std::abs(buf[k]);
  }
  return mag;
}

std::vector<double> mel_band_centers(int n_bands, double f_min, double f_max) {
  const double mel_lo = hz_to_mel(f_min);
  const double mel_hi = hz_to_mel(f_max);
  std::vector<double> centers(n_bands);
  for (int m = 0; m < n_bands; ++m) {
    const double mel = mel_lo + (mel_hi - mel_lo) * (m + 1) / (n_bands + 1);
    centers[m] = mel_to_hz(mel);
  }
  return centers;
}

std::vector<std::vector<double>> mel_filterbank(int n_bands, double f_min,
                                                double f_max, int fft_size,
                                                int sample_rate) {
  if (f_min < 0.0 || f_min >= f_max || f_max > sample_rate / 2.0) {
    throw_input("mel.bad_range", "need 0 <= f_min < f_max <= rate/2");
  }
  const int n_bins = fft_size / 2 + 1;
  const double mel_lo = hz_to_mel(f_min);
  const double mel_hi = hz_to_mel(f_max);
  // n_bands + 2 edge frequencies, equally spaced in mel.
  std::vector<double> edges(n_bands + 2);
  for (int i = 0; i < n_bands + 2; ++i) {
    edges[i] = mel_to_hz(mel_lo + (mel_hi - mel_lo) * i / (n_bands + 1));
  }

  std::vector<std::vector<double>> fb(n_bands, std::vector<double>(n_bins, 0.0));
  const double bin_hz = static_cast<double>(sample_rate) / fft_size;
  for (int m = 0; m < n_bands; ++m) {
    const double lo = edges[m], center = edges[m + 1], hi = edges[m + 2];
    bool nonzero = false;
    for (int k = 0; k < n_bins; ++k) {
      const double f = k * bin_hz;
      double w = 0.0;
      if (f > lo && f < center) {
        w = (f - lo) / (center - lo);
      } else if (f >= center && f < hi) {
        w = (hi - f) / (hi - center);
      }
      if (w > 0.0) nonzero = true;
      fb[m][k] = w;
    }
    if (!nonzero) {
      throw_input("mel.empty_filter",
                  "band " + std::to_string(m) + " covers no FFT bin");
    }
  }
  return fb;
}

MelPatch segment_to_patch(const std::vector<double>& segment,
                          const FrontendConfig& cfg) {
  std::vector<double> padded = segment;
  if (static_cast<int>(padded.size()) > cfg.sample_rate) {
    throw_input("mel.segment_too_long", "segment longer than one second");
  }
  padded.resize(cfg.sample_rate, 0.0);

  const auto mag =
      stft_magnitude(padded, cfg.win_length, cfg.fft_size, cfg.hop);
  const auto fb = mel_filterbank(cfg.mel_bands, cfg.f_min, cfg.f_max,
                                 cfg.fft_size, cfg.sample_rate);
  MelPatch patch;
  patch.frames = static_cast<int>(mag.size());
  patch.bands = cfg.mel_bands;
  patch.values.resize(static_cast<size_t>(patch.frames) * patch.bands);
  const int n_bins = cfg.fft_size / 2 + 1;
  for (int t = 0; t < patch.frames; ++t) {
    for (int m = 0; m < cfg.mel_bands; ++m) {
      double acc = 0.0;
      for (int k = 0; k < n_bins; ++k) {
        acc += fb[m][k] * mag[t][k] * mag[t][k];
      }
      patch.values[static_cast<size_t>(t) * cfg.mel_bands + m] =
          std::log(acc + cfg.log_floor);
    }
  }
  return patch;
}

MelSequence clip_to_sequence(const AudioClip& clip, const FrontendConfig& cfg) {
  if (clip.sample_rate != cfg.sample_rate) {
    throw_input("mel.rate_mismatch",
                "clip must be at the working rate " +
                    std::to_string(cfg.sample_rate));
  }
  const size_t whole_seconds = clip.samples.size() / cfg.sample_rate;
  if (whole_seconds == 0) {
    throw_input("mel.too_short", "clip shorter than one second");
  }
  MelSequence seq;
  for (size_t s = 0; s < whole_seconds; ++s) {
    std::vector<double> segment(
        clip.samples.begin() + s * cfg.sample_rate,
        clip.samples.begin() + (s + 1) * cfg.sample_rate);
    seq.patches.push_back(segment_to_patch(segment, cfg));
    seq.timestamps.push_back(static_cast<int64_t>(clip.start_time) +
                             static_cast<int64_t>(s));
  }
  return seq;
}

void write_feature_cache(const std::string& path, const MelSequence& seq) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw_input("cache.write", "cannot open " + path);
  const uint32_t t = static_cast<uint32_t>(seq.patches.size());
  const uint32_t fr = t > 0 ? static_cast<uint32_t>(seq.patches[0].frames) : 0;
  const uint32_t m = t > 0 ? static_cast<uint32_t>(seq.patches[0].bands) : 0;
  put_u32(f, t);
  put_u32(f, fr);
  put_u32(f, m);
  for (const auto& patch : seq.patches) {
    for (double v : patch.values) {
      float fv = static_cast<float>(v);
      f.write(reinterpret_cast<const char*>(&fv), 4);
    }
  }
}

MelSequence read_feature_cache(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw_input("cache.open", "cannot open " + path);
  const uint32_t t = get_u32(f);
  const uint32_t fr = get_u32(f);
  const uint32_t m = get_u32(f);
  if (!f) throw_input("cache.malformed", "truncated header in " + path);
  MelSequence seq;
  for (uint32_t i = 0; i < t; ++i) {
    MelPatch patch;
    patch.frames = static_cast<int>(fr);
    patch.bands = static_cast<int>(m);
    patch.values.resize(static_cast<size_t>(fr) * m);
    for (auto& v : patch.values) {
      float fv;
      f.read(reinterpret_cast<char*>(&fv), 4);
      v = static_cast<double>(fv);
    }
    if (!f) throw_input("cache.malformed", "truncated payload in " + path);
    seq.patches.push_back(std::move(patch));
  }
  return seq;
}

}  // namespace pedsense
