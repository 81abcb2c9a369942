#pragma once

#include <array>
#include <cstdint>
#include <map>
#include <string>
#include <tuple>
#include <vector>

namespace pedsense {

// Ground truth for one second: pedestrian count inside the radius-r buffer of
// one sensor.
struct LabelRecord {
  int64_t timestamp = 0;  // UTC seconds, 1 Hz grid
  std::string sensor_id;
  int radius_m = 0;
  int count = 0;
};

inline const std::vector<int>& default_radii() {
  static const std::vector<int> radii{1, 3, 6, 9};
  return radii;
}

// CSV with header `timestamp,sensor_id,radius_m,count`. Rejects malformed
// rows (error reports the 1-based row number), duplicate
// (timestamp, sensor, radius) keys, radii outside `radii`, and counts that
// decrease as the radius grows at a fixed (timestamp, sensor).
std::vector<LabelRecord> load_labels(const std::string& path,
                                     const std::vector<int>& radii =
                                         default_radii());

std::vector<LabelRecord> parse_labels(const std::string& csv_text,
                                      const std::vector<int>& radii =
                                          default_radii());

void save_labels(const std::string& path,
                 const std::vector<LabelRecord>& records);

// Fraction of (timestamp, sensor) frames at the given radius with count >= 1.
double pedestrian_fraction(const std::vector<LabelRecord>& labels,
                           int radius_m);

struct HourlyHistogram {
  std::array<double, 24> fraction{};  // meaningful only where support > 0
  std::array<int64_t, 24> support{};
};

// Per hour-of-day fraction of frames with count >= 1 at the given radius.
// Hour-of-day uses a fixed UTC offset, not a timezone database.
HourlyHistogram hourly_fraction(const std::vector<LabelRecord>& labels,
                                int radius_m, int utc_offset_hours = 0);

struct ClipRef {
  std::string path;
  std::string sensor_id;
  double start_time = 0.0;
  double duration = 0.0;
};

// Aligned view over clips and labels sharing the per-second timeline.
struct DatasetIndex {
  std::vector<ClipRef> clips;
  std::map<std::tuple<int64_t, std::string, int>, int> labels;
  std::vector<std::pair<int64_t, int64_t>> sessions;  // [start, end) seconds
};

// Builds the index, checking that every label timestamp falls inside some
// clip of the same sensor and that keys are unique.
DatasetIndex build_index(const std::vector<ClipRef>& clips,
                         const std::vector<LabelRecord>& labels);

}  // namespace pedsense
