#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include "pedsense/audio.hpp"
#include "pedsense/geometry.hpp"
#include "pedsense/labels.hpp"

namespace pedsense {

// Piecewise-linear ground trajectory walked at constant speed from
// start_time; footsteps are tone bursts at stride_period intervals.
struct Walker {
  std::vector<Vec2> waypoints;
  double start_time = 0.0;   // scene-relative seconds
  double speed = 1.0;        // m/s, > 0
  double stride_period = 0.5;  // s, > 0
  double level = 1.0;        // amplitude scalar
  double footstep_hz = 2000.0;  // within the 1-3 kHz footstep band

  double path_length() const;
  double duration() const { return path_length() / speed; }
  bool active_at(double t) const {
    return t >= start_time && t <= start_time + duration();
  }
  // Position at scene time t, clamped to the path endpoints.
  Vec2 position_at(double t) const;
};

struct SceneConfig {
  std::vector<SensorSite> sites;
  double duration_s = 300.0;  // >= 60
  int64_t start_ts = 0;       // Unix seconds of scene time 0
  uint64_t seed = 1;

  // Group arrivals per hour, modulated by the hour-of-day weights (UTC).
  double arrivals_per_hour = 120.0;
  std::array<double, 24> hourly_profile{1, 1, 1, 1, 1, 1, 1, 1, 1, 1, 1, 1,
                                        1, 1, 1, 1, 1, 1, 1, 1, 1, 1, 1, 1};
  std::vector<int> group_sizes{1};  // uniform choice per arrival

  double speed_min = 1.0;  // m/s
  double speed_max = 1.5;
  double stride_period = 0.5;

  // Audio: gaussian background at this RMS; footstep peak amplitude is
  // background_rms * 10^(snr_db/20) * level / (1 + (d/attenuation_ref_m)^2).
  int sample_rate = 16000;
  double background_rms = 0.02;
  double snr_db = 15.0;
  double attenuation_ref_m = 1.0;

  // Corridor mode: walkers traverse the site line end to end, giving
  // downstream sensors a distance/speed lag; otherwise paths are random
  // lines passing near a random site.
  bool corridor = false;
};

// Deterministic arrival sampling and path construction from scene.seed.
std::vector<Walker> generate_walkers(const SceneConfig& scene);

// Exact per-second, per-site, per-radius counts from the trajectories
// (closed disc, position sampled at each integer second). Zero counts are
// explicit; records ordered by (timestamp, sensor_id, radius).
std::vector<LabelRecord> simulate_counts(const SceneConfig& scene,
                                         const std::vector<Walker>& walkers);
std::vector<LabelRecord> simulate_counts(const SceneConfig& scene);

// Background noise plus Hann-windowed footstep tone bursts for one site.
AudioClip render_audio(const SceneConfig& scene,
                       const std::vector<Walker>& walkers,
                       const SensorSite& site);

// Corridor traces for the flow experiments; requires scene.corridor and the
// sites laid out in traversal order.
std::vector<LabelRecord> generate_flow_traces(const SceneConfig& scene);

// Mean STFT power of `samples` within [f_lo, f_hi] Hz; measurement helper
// for tests.
double band_energy(const std::vector<double>& samples, int sample_rate,
                   double f_lo, double f_hi);

// Ready-made scenes.
SceneConfig crossing_scene(int n_sites, double duration_s, uint64_t seed);
SceneConfig corridor_scene(int n_sites, double spacing_m, double duration_s,
                           uint64_t seed);

// JSON scene file; unknown keys rejected, sites as in load_sites.
SceneConfig load_scene_config(const std::string& path);

}  // namespace pedsense
