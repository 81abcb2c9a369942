#pragma once

#include <cstdint>
#include <string>
#include <vector>

namespace pedsense {

// Mono PCM signal. Samples are normalized to [-1, 1]; start_time is the UTC
// second of the first sample.
struct AudioClip {
  std::vector<double> samples;
  int sample_rate = 0;
  double start_time = 0.0;

  double duration() const {
    return static_cast<double>(samples.size()) / sample_rate;
  }
};

// Reads a RIFF/WAVE file. Accepts 8/16/24/32-bit integer PCM and 32-bit
// float, 1 or 2 channels; stereo is averaged to mono. Error codes:
//   wav.bad_header        unreadable or truncated container
//   wav.unsupported_codec codec/bit depth/channel count outside the above
//   wav.empty             zero-length data payload
AudioClip load_wav(const std::string& path);

// Writes 16-bit mono PCM.
void write_wav(const std::string& path, const AudioClip& clip);

// Band-limited resampling with a Kaiser-windowed sinc kernel
// (beta = 8, 64 taps per side). Preserves duration within one output sample.
AudioClip resample(const AudioClip& clip, int target_rate);

}  // namespace pedsense
