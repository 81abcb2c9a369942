#include "pedsense/synth.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <random>
#include <set>

#include <json.hpp>

#include "pedsense/error.hpp"
#include "pedsense/melspec.hpp"

namespace pedsense {

namespace {

constexpr double kPi = 3.14159265358979323846;

double dist(const Vec2& a, const Vec2& b) {
  return std::hypot(a.x - b.x, a.y - b.y);
}

uint64_t fnv1a(const std::string& s) {
  uint64_t h = 14695981039346656037ull;
  for (unsigned char c : s) {
    h ^= c;
    h *= 1099511628211ull;
  }
  return h;
}

}  // namespace

double Walker::path_length() const {
  double total = 0.0;
  for (size_t i = 1; i < waypoints.size(); ++i) {
    total += dist(waypoints[i - 1], waypoints[i]);
  }
  return total;
}

Vec2 Walker::position_at(double t) const {
  if (waypoints.empty()) throw_input("synth.empty_path", "walker has no path");
  double s = (t - start_time) * speed;  // arc length along the path
  s = std::clamp(s, 0.0, path_length());
  for (size_t i = 1; i < waypoints.size(); ++i) {
    const double seg = dist(waypoints[i - 1], waypoints[i]);
    if (s <= seg || i + 1 == waypoints.size()) {
      const double f = seg > 0.0 ? std::min(s / seg, 1.0) : 0.0;
      return {waypoints[i - 1].x + f * (waypoints[i].x - waypoints[i - 1].x),
              waypoints[i - 1].y + f * (waypoints[i].y - waypoints[i - 1].y)};
    }
    s -= seg;
  }
  return waypoints.back();
}

namespace {

void validate_scene(const SceneConfig& scene) {
  if (scene.sites.empty()) throw_input("synth.no_sites", "scene needs sites");
  if (scene.duration_s < 60.0) {
    throw_input("synth.short_scene", "duration must be >= 60 s");
  }
  if (scene.speed_min <= 0.0 || scene.speed_max < scene.speed_min) {
    throw_input("synth.bad_speed", "invalid walker speed range");
  }
  if (scene.stride_period <= 0.0) {
    throw_input("synth.bad_stride", "stride period must be > 0");
  }
  if (scene.group_sizes.empty()) {
    throw_input("synth.bad_groups", "group size list is empty");
  }
  for (int g : scene.group_sizes) {
    if (g < 1) throw_input("synth.bad_groups", "group sizes must be >= 1");
  }
}

}  // namespace

std::vector<Walker> generate_walkers(const SceneConfig& scene) {
  validate_scene(scene);
  std::mt19937_64 rng(scene.seed);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  std::uniform_real_distribution<double> angle(0.0, 2.0 * kPi);
  std::uniform_real_distribution<double> speed(scene.speed_min,
                                               scene.speed_max);
  std::uniform_real_distribution<double> freq(1200.0, 2800.0);
  std::uniform_int_distribution<size_t> site_pick(0, scene.sites.size() - 1);
  std::uniform_int_distribution<size_t> group_pick(0,
                                                   scene.group_sizes.size() - 1);

  int max_radius = 1;
  for (const auto& site : scene.sites) {
    for (int r : site.radii) max_radius = std::max(max_radius, r);
  }

  // Corridor endpoints: 10 m beyond the first/last site along the site line.
  Vec2 corridor_a{}, corridor_b{};
  if (scene.corridor) {
    const Vec2 p0 = scene.sites.front().ground_position;
    const Vec2 p1 = scene.sites.back().ground_position;
    const double len = std::max(dist(p0, p1), 1e-9);
    const Vec2 dir{(p1.x - p0.x) / len, (p1.y - p0.y) / len};
    corridor_a = {p0.x - 10.0 * dir.x, p0.y - 10.0 * dir.y};
    corridor_b = {p1.x + 10.0 * dir.x, p1.y + 10.0 * dir.y};
  }

  std::vector<Walker> walkers;
  const int seconds = static_cast<int>(scene.duration_s);
  for (int sec = 0; sec < seconds; ++sec) {
    const int hour = static_cast<int>(
        (((scene.start_ts + sec) / 3600) % 24 + 24) % 24);
    const double rate =
        scene.arrivals_per_hour * scene.hourly_profile[hour] / 3600.0;
    std::poisson_distribution<int> arrivals(rate);
    const int groups = arrivals(rng);
    for (int g = 0; g < groups; ++g) {
      const int members = scene.group_sizes[group_pick(rng)];
      const double group_speed = speed(rng);
      Vec2 a, b;
      if (scene.corridor) {
        a = corridor_a;
        b = corridor_b;
      } else {
        // A straight 30 m path passing near a random site.
        const Vec2 site = scene.sites[site_pick(rng)].ground_position;
        const double theta = angle(rng);
        const Vec2 d{std::cos(theta), std::sin(theta)};
        const double offset = (unit(rng) * 2.0 - 1.0) * 0.8 * max_radius;
        const Vec2 through{site.x - d.y * offset, site.y + d.x * offset};
        a = {through.x - 15.0 * d.x, through.y - 15.0 * d.y};
        b = {through.x + 15.0 * d.x, through.y + 15.0 * d.y};
      }
      const double len = std::max(dist(a, b), 1e-9);
      const Vec2 d{(b.x - a.x) / len, (b.y - a.y) / len};
      for (int m = 0; m < members; ++m) {
        // Members fan out laterally so they stay one group acoustically.
        const double lateral = (unit(rng) * 2.0 - 1.0) * 0.5;
        Walker w;
        w.waypoints = {{a.x - d.y * lateral, a.y + d.x * lateral},
                       {b.x - d.y * lateral, b.y + d.x * lateral}};
        w.start_time = sec + unit(rng) * 0.5;
        w.speed = group_speed;
        w.stride_period = scene.stride_period;
        w.level = 1.0;
        w.footstep_hz = freq(rng);
        walkers.push_back(std::move(w));
      }
    }
  }
  return walkers;
}

std::vector<LabelRecord> simulate_counts(const SceneConfig& scene,
                                         const std::vector<Walker>& walkers) {
  validate_scene(scene);
  std::vector<size_t> site_order(scene.sites.size());
  std::iota(site_order.begin(), site_order.end(), 0);
  std::sort(site_order.begin(), site_order.end(), [&](size_t a, size_t b) {
    return scene.sites[a].sensor_id < scene.sites[b].sensor_id;
  });

  std::vector<LabelRecord> records;
  const int seconds = static_cast<int>(scene.duration_s);
  for (int sec = 0; sec < seconds; ++sec) {
    const double t = static_cast<double>(sec);
    // Positions of walkers active at this second.
    std::vector<Vec2> positions;
    for (const auto& w : walkers) {
      if (w.active_at(t)) positions.push_back(w.position_at(t));
    }
    for (size_t idx : site_order) {
      const SensorSite& site = scene.sites[idx];
      for (int r : site.radii) {
        int count = 0;
        for (const auto& p : positions) {
          if (dist(p, site.ground_position) <= static_cast<double>(r)) {
            ++count;
          }
        }
        records.push_back(
            {scene.start_ts + sec, site.sensor_id, r, count});
      }
    }
  }
  return records;
}

std::vector<LabelRecord> simulate_counts(const SceneConfig& scene) {
  return simulate_counts(scene, generate_walkers(scene));
}

AudioClip render_audio(const SceneConfig& scene,
                       const std::vector<Walker>& walkers,
                       const SensorSite& site) {
  validate_scene(scene);
  const int sr = scene.sample_rate;
  const size_t n = static_cast<size_t>(scene.duration_s * sr);
  AudioClip clip;
  clip.sample_rate = sr;
  clip.start_time = static_cast<double>(scene.start_ts);
  clip.samples.assign(n, 0.0);

  std::mt19937_64 rng(scene.seed ^ fnv1a(site.sensor_id));
  std::normal_distribution<double> noise(0.0, scene.background_rms);
  for (auto& s : clip.samples) s = noise(rng);

  const double peak = scene.background_rms * std::pow(10.0, scene.snr_db / 20.0);
  const int click_len = sr / 10;  // 100 ms bursts
  for (const auto& w : walkers) {
    const double t_end = w.start_time + w.duration();
    for (double t = w.start_time; t <= t_end; t += w.stride_period) {
      const double d = dist(w.position_at(t), site.ground_position);
      const double rel = d / scene.attenuation_ref_m;
      const double amp = peak * w.level / (1.0 + rel * rel);
      if (amp < scene.background_rms * 1e-3) continue;
      const int64_t begin = static_cast<int64_t>(t * sr);
      for (int i = 0; i < click_len; ++i) {
        const int64_t idx = begin + i;
        if (idx < 0 || idx >= static_cast<int64_t>(n)) continue;
        const double window =
            0.5 * (1.0 - std::cos(2.0 * kPi * i / (click_len - 1)));
        clip.samples[idx] +=
            amp * window * std::sin(2.0 * kPi * w.footstep_hz * i / sr);
      }
    }
  }
  return clip;
}

std::vector<LabelRecord> generate_flow_traces(const SceneConfig& scene) {
  if (!scene.corridor) {
    throw_input("synth.not_corridor", "flow traces need a corridor scene");
  }
  return simulate_counts(scene);
}

double band_energy(const std::vector<double>& samples, int sample_rate,
                   double f_lo, double f_hi) {
  const int win = 400, fft = 512, hop = 160;
  if (static_cast<int>(samples.size()) < win) {
    throw_input("synth.too_short", "band energy needs >= one window");
  }
  auto spec = stft_magnitude(samples, win, fft, hop);
  const double hz_per_bin = static_cast<double>(sample_rate) / fft;
  double sum = 0.0;
  int64_t cells = 0;
  for (const auto& frame : spec) {
    for (size_t b = 0; b < frame.size(); ++b) {
      const double f = b * hz_per_bin;
      if (f >= f_lo && f <= f_hi) {
        sum += frame[b] * frame[b];
        ++cells;
      }
    }
  }
  return cells ? sum / cells : 0.0;
}

SceneConfig crossing_scene(int n_sites, double duration_s, uint64_t seed) {
  if (n_sites < 1) throw_input("synth.no_sites", "need at least one site");
  SceneConfig scene;
  scene.duration_s = duration_s;
  scene.seed = seed;
  for (int i = 0; i < n_sites; ++i) {
    SensorSite site;
    site.sensor_id = "s" + std::to_string(i + 1);
    // Sites far apart so the buffers never overlap.
    site.ground_position = {60.0 * i, 0.0};
    scene.sites.push_back(std::move(site));
  }
  return scene;
}

SceneConfig corridor_scene(int n_sites, double spacing_m, double duration_s,
                           uint64_t seed) {
  if (n_sites < 2) throw_input("synth.no_sites", "corridor needs >= 2 sites");
  SceneConfig scene;
  scene.duration_s = duration_s;
  scene.seed = seed;
  scene.corridor = true;
  for (int i = 0; i < n_sites; ++i) {
    SensorSite site;
    site.sensor_id = "s" + std::to_string(i + 1);
    site.ground_position = {spacing_m * i, 0.0};
    scene.sites.push_back(std::move(site));
  }
  return scene;
}

SceneConfig load_scene_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw_input("synth.config_missing", path);
  nlohmann::json j;
  try {
    in >> j;
  } catch (const std::exception& e) {
    throw_input("synth.config_parse", e.what());
  }
  static const std::set<std::string> allowed{
      "sites",          "duration_s",    "start_ts",
      "seed",           "arrivals_per_hour", "hourly_profile",
      "group_sizes",    "speed_min",     "speed_max",
      "stride_period",  "sample_rate",   "background_rms",
      "snr_db",         "attenuation_ref_m", "corridor"};
  for (const auto& [key, value] : j.items()) {
    if (!allowed.count(key)) {
      throw_input("synth.unknown_key", "unknown scene key: " + key);
    }
  }
  SceneConfig scene;
  if (j.contains("sites")) {
    for (const auto& s : j["sites"]) {
      SensorSite site;
      site.sensor_id = s.at("sensor_id").get<std::string>();
      auto pos = s.at("ground_position").get<std::vector<double>>();
      if (pos.size() != 2) {
        throw_input("synth.bad_site", "ground_position needs [x, y]");
      }
      site.ground_position = {pos[0], pos[1]};
      if (s.contains("radii")) site.radii = s["radii"].get<std::vector<int>>();
      scene.sites.push_back(std::move(site));
    }
  }
  if (j.contains("duration_s")) scene.duration_s = j["duration_s"].get<double>();
  if (j.contains("start_ts")) scene.start_ts = j["start_ts"].get<int64_t>();
  if (j.contains("seed")) scene.seed = j["seed"].get<uint64_t>();
  if (j.contains("arrivals_per_hour")) {
    scene.arrivals_per_hour = j["arrivals_per_hour"].get<double>();
  }
  if (j.contains("hourly_profile")) {
    auto p = j["hourly_profile"].get<std::vector<double>>();
    if (p.size() != 24) {
      throw_input("synth.bad_profile", "hourly_profile needs 24 weights");
    }
    std::copy(p.begin(), p.end(), scene.hourly_profile.begin());
  }
  if (j.contains("group_sizes")) {
    scene.group_sizes = j["group_sizes"].get<std::vector<int>>();
  }
  if (j.contains("speed_min")) scene.speed_min = j["speed_min"].get<double>();
  if (j.contains("speed_max")) scene.speed_max = j["speed_max"].get<double>();
  if (j.contains("stride_period")) {
    scene.stride_period = j["stride_period"].get<double>();
  }
  if (j.contains("sample_rate")) {
    scene.sample_rate = j["sample_rate"].get<int>();
  }
  if (j.contains("background_rms")) {
    scene.background_rms = j["background_rms"].get<double>();
  }
  if (j.contains("snr_db")) scene.snr_db = j["snr_db"].get<double>();
  if (j.contains("attenuation_ref_m")) {
    scene.attenuation_ref_m = j["attenuation_ref_m"].get<double>();
  }
  if (j.contains("corridor")) scene.corridor = j["corridor"].get<bool>();
  validate_scene(scene);
  return scene;
}

}  // namespace pedsense
