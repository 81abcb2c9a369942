#include "pedsense/audio.hpp"

#include <cmath>
#include <cstring>
#include <fstream>

#include "pedsense/error.hpp"

namespace pedsense {
namespace {

uint32_t read_u32(const uint8_t* p) {
  return static_cast<uint32_t>(p[0]) | static_cast<uint32_t>(p[1]) << 8 |
         static_cast<uint32_t>(p[2]) << 16 | static_cast<uint32_t>(p[3]) << 24;
}

uint16_t read_u16(const uint8_t* p) {
  return static_cast<uint16_t>(p[0] | p[1] << 8);
}

void put_u32(std::vector<uint8_t>& out, uint32_t v) {
  out.push_back(v & 0xff);
  out.push_back((v >> 8) & 0xff);
  out.push_back((v >> 16) & 0xff);
  out.push_back((v >> 24) & 0xff);
}

void put_u16(std::vector<uint8_t>& out, uint16_t v) {
  out.push_back(v & 0xff);
  out.push_back((v >> 8) & 0xff);
}

double decode_sample(const uint8_t* p, int bits, uint16_t format) {
  if (format == 3) {  // IEEE float
    float f;
    std::memcpy(&f, p, 4);
    return static_cast<double>(f);
  }
  switch (bits) {
    case 8:
      // 8-bit WAV is unsigned.
      return (static_cast<int>(p[0]) - 128) / 128.0;
    case 16: {
      int16_t v = static_cast<int16_t>(p[0] | p[1] << 8);
      return v / 32768.0;
    }
    case 24: {
      int32_t v = p[0] | p[1] << 8 | p[2] << 16;
      if (v & 0x800000) v |= ~0xffffff;
      return v / 8388608.0;
    }
    case 32: {
      int32_t v;
      std::memcpy(&v, p, 4);
      return v / 2147483648.0;
    }
    default:
      throw_input("wav.unsupported_codec", "bit depth " + std::to_string(bits));
  }
}

// Zeroth-order modified Bessel function, power series.
double bessel_i0(double x) {
  double sum = 1.0, term = 1.0;
  for (int k = 1; k < 64; ++k) {
    term *= (x / (2.0 * k)) * (x / (2.0 * k));
    sum += term;
    if (term < 1e-16 * sum) break;
  }
  return sum;
}

double sinc(double x) {
  if (std::abs(x) < 1e-12) return 1.0;
  double px = M_PI * x;
  return std::sin(px) / px;
}

}  // namespace

AudioClip load_wav(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw_input("wav.bad_header", "cannot open " + path);
  std::vector<uint8_t> bytes((std::istreambuf_iterator<char>(f)),
                             std::istreambuf_iterator<char>());
  if (bytes.size() < 12 || std::memcmp(bytes.data(), "RIFF", 4) != 0 ||
      std::memcmp(bytes.data() + 8, "WAVE", 4) != 0) {
    throw_input("wav.bad_header", "not a RIFF/WAVE file: " + path);
  }

  uint16_t format = 0, channels = 0, bits = 0;
  uint32_t rate = 0;
  bool have_fmt = false;
  const uint8_t* data = nullptr;
  size_t data_len = 0;

  size_t pos = 12;
  while (pos + 8 <= bytes.size()) {
    const uint8_t* hdr = bytes.data() + pos;
    uint32_t chunk_len = read_u32(hdr + 4);
    const uint8_t* body = hdr + 8;
    if (pos + 8 + chunk_len > bytes.size()) {
      throw_input("wav.bad_header", "truncated chunk in " + path);
    }
    if (std::memcmp(hdr, "fmt ", 4) == 0) {
      if (chunk_len < 16) throw_input("wav.bad_header", "short fmt chunk");
      format = read_u16(body);
      channels = read_u16(body + 2);
      rate = read_u32(body + 4);
      bits = read_u16(body + 14);
      if (format == 0xfffe && chunk_len >= 40) {
        // WAVE_FORMAT_EXTENSIBLE: sub-format GUID starts with the format tag.
        format = read_u16(body + 24);
      }
      have_fmt = true;
    } else if (std::memcmp(hdr, "data", 4) == 0) {
      data = body;
      data_len = chunk_len;
    }
    pos += 8 + chunk_len + (chunk_len & 1);
  }

  if (!have_fmt || rate == 0) throw_input("wav.bad_header", "missing fmt chunk");
  if (format != 1 && format != 3) {
    throw_input("wav.unsupported_codec", "format tag " + std::to_string(format));
  }
  if (format == 3 && bits != 32) {
    throw_input("wav.unsupported_codec", "float must be 32-bit");
  }
  if (channels != 1 && channels != 2) {
    throw_input("wav.unsupported_codec",
                std::to_string(channels) + " channels");
  }
  if (bits != 8 && bits != 16 && bits != 24 && bits != 32) {
    throw_input("wav.unsupported_codec", "bit depth " + std::to_string(bits));
  }
  if (data == nullptr || data_len == 0) {
    throw_input("wav.empty", "zero-length data chunk in " + path);
  }

  const size_t bytes_per_sample = bits / 8;
  const size_t frame_size = bytes_per_sample * channels;
  const size_t frames = data_len / frame_size;
  if (frames == 0) throw_input("wav.empty", "no complete frames in " + path);

  AudioClip clip;
  clip.sample_rate = static_cast<int>(rate);
  clip.samples.resize(frames);
  for (size_t i = 0; i < frames; ++i) {
    double acc = 0.0;
    for (int c = 0; c < channels; ++c) {
      acc += decode_sample(data + i * frame_size + c * bytes_per_sample,
                           bits, format);
    }
    clip.samples[i] = acc / channels;
  }
  return clip;
}

void write_wav(const std::string& path, const AudioClip& clip) {
  std::vector<uint8_t> out;
  const uint32_t n = static_cast<uint32_t>(clip.samples.size());
  const uint32_t data_len = n * 2;
  out.reserve(44 + data_len);
  out.insert(out.end(), {'R', 'I', 'F', 'F'});
  put_u32(out, 36 + data_len);
  out.insert(out.end(), {'W', 'A', 'V', 'E', 'f', 'm', 't', ' '});
  put_u32(out, 16);
  put_u16(out, 1);  // PCM
  put_u16(out, 1);  // mono
  put_u32(out, static_cast<uint32_t>(clip.sample_rate));
  put_u32(out, static_cast<uint32_t>(clip.sample_rate) * 2);
  put_u16(out, 2);
  put_u16(out, 16);
  out.insert(out.end(), {'d', 'a', 't', 'a'});
  put_u32(out, data_len);
  for (uint32_t i = 0; i < n; ++i) {
    double v = std::clamp(clip.samples[i], -1.0, 1.0);
    int s = static_cast<int>(std::lround(v * 32767.0));
    put_u16(out, static_cast<uint16_t>(static_cast<int16_t>(s)));
  }
  std::ofstream f(path, std::ios::binary);
  if (!f) throw_input("wav.write", "cannot open " + path + " for writing");
  f.write(reinterpret_cast<const char*>(out.data()),
          static_cast<std::streamsize>(out.size()));
}

AudioClip resample(const AudioClip& clip, int target_rate) {
  if (target_rate <= 0) {
    throw_input("resample.bad_rate", "target rate must be positive");
  }
  if (target_rate == clip.sample_rate) return clip;

  constexpr int kTapsPerSide = 64;
  constexpr double kBeta = 8.0;
  const double ratio = static_cast<double>(target_rate) / clip.sample_rate;
  // Cutoff scaled below Nyquist of the slower rate when downsampling.
  const double cutoff = std::min(1.0, ratio);
  const double i0_beta = bessel_i0(kBeta);
  const auto n_in = static_cast<long long>(clip.samples.size());
  const auto n_out = static_cast<size_t>(
      std::llround(static_cast<double>(n_in) * ratio));

  AudioClip out;
  out.sample_rate = target_rate;
  out.start_time = clip.start_time;
  out.samples.resize(n_out);

  for (size_t i = 0; i < n_out; ++i) {
    const double t = static_cast<double>(i) / ratio;  // in input samples
    const long long j0 = static_cast<long long>(std::ceil(t)) - kTapsPerSide;
    const long long j1 = static_cast<long long>(std::floor(t)) + kTapsPerSide;
    double acc = 0.0, wsum = 0.0;
    for (long long j = j0; j <= j1; ++j) {
      const double x = (t - static_cast<double>(j)) / kTapsPerSide;
      if (x < -1.0 || x > 1.0) continue;
      const double w = bessel_i0(kBeta * std::sqrt(1.0 - x * x)) / i0_beta;
      const double k = cutoff * sinc(cutoff * (t - static_cast<double>(j))) * w;
      wsum += k;
      if (j >= 0 && j < n_in) acc += k * clip.samples[static_cast<size_t>(j)];
    }
    // Normalizing by the kernel sum keeps DC exact.
    out.samples[i] = wsum != 0.0 ? acc / wsum : 0.0;
  }
  return out;
}

}  // namespace pedsense
