#include "pedsense/labels.hpp"

#include <algorithm>
#include <charconv>
#include <fstream>
#include <set>
#include <sstream>

#include "pedsense/error.hpp"

namespace pedsense {
namespace {

std::vector<std::string> split_csv_row(const std::string& line) {
  std::vector<std::string> fields;
  std::string cur;
  for (char c : line) {
    if (c == ',') {
      fields.push_back(cur);
      cur.clear();
    } else if (c != '\r') {
      cur.push_back(c);
    }
  }
  fields.push_back(cur);
  return fields;
}

template <typename T>
T parse_int_field(const std::string& s, size_t row, const char* what) {
  T value{};
  auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), value);
  if (ec != std::errc() || ptr != s.data() + s.size()) {
    throw_input("labels.malformed_row",
                "row " + std::to_string(row) + ": bad " + what + " '" + s + "'");
  }
  return value;
}

void check_radius_monotonicity(const std::vector<LabelRecord>& records) {
  // (timestamp, sensor) -> sorted (radius, count)
  std::map<std::pair<int64_t, std::string>, std::vector<std::pair<int, int>>>
      groups;
  for (const auto& r : records) {
    groups[{r.timestamp, r.sensor_id}].emplace_back(r.radius_m, r.count);
  }
  for (auto& [key, entries] : groups) {
    std::sort(entries.begin(), entries.end());
    for (size_t i = 1; i < entries.size(); ++i) {
      if (entries[i].second < entries[i - 1].second) {
        throw_input("labels.monotonicity",
                    "count decreases with radius at t=" +
                        std::to_string(key.first) + " sensor=" + key.second);
      }
    }
  }
}

}  // namespace

std::vector<LabelRecord> parse_labels(const std::string& csv_text,
                                      const std::vector<int>& radii) {
  std::istringstream in(csv_text);
  std::string line;
  if (!std::getline(in, line)) {
    throw_input("labels.malformed_row", "empty label file");
  }
  if (split_csv_row(line) !=
      std::vector<std::string>{"timestamp", "sensor_id", "radius_m", "count"}) {
    throw_input("labels.malformed_row", "bad header: " + line);
  }

  std::vector<LabelRecord> records;
  std::set<std::tuple<int64_t, std::string, int>> seen;
  size_t row = 1;
  while (std::getline(in, line)) {
    ++row;
    if (line.empty() || line == "\r") continue;
    auto fields = split_csv_row(line);
    if (fields.size() != 4) {
      throw_input("labels.malformed_row",
                  "row " + std::to_string(row) + ": expected 4 fields");
    }
    LabelRecord rec;
    rec.timestamp = parse_int_field<int64_t>(fields[0], row, "timestamp");
    rec.sensor_id = fields[1];
    rec.radius_m = parse_int_field<int>(fields[2], row, "radius");
    rec.count = parse_int_field<int>(fields[3], row, "count");
    if (rec.sensor_id.empty()) {
      throw_input("labels.malformed_row",
                  "row " + std::to_string(row) + ": empty sensor id");
    }
    if (std::find(radii.begin(), radii.end(), rec.radius_m) == radii.end()) {
      throw_input("labels.bad_radius",
                  "row " + std::to_string(row) + ": radius " +
                      std::to_string(rec.radius_m) + " not configured");
    }
    if (rec.count < 0) {
      throw_input("labels.malformed_row",
                  "row " + std::to_string(row) + ": negative count");
    }
    if (!seen.insert({rec.timestamp, rec.sensor_id, rec.radius_m}).second) {
      throw_input("labels.duplicate_key",
                  "row " + std::to_string(row) + ": duplicate key");
    }
    records.push_back(std::move(rec));
  }
  check_radius_monotonicity(records);
  return records;
}

std::vector<LabelRecord> load_labels(const std::string& path,
                                     const std::vector<int>& radii) {
  std::ifstream f(path);
  if (!f) throw_input("labels.open", "cannot open " + path);
  std::stringstream buf;
  buf << f.rdbuf();
  return parse_labels(buf.str(), radii);
}

void save_labels(const std::string& path,
                 const std::vector<LabelRecord>& records) {
  std::ofstream f(path, std::ios::binary);  // LF line endings everywhere
  if (!f) throw_input("labels.write", "cannot open " + path + " for writing");
  f << "timestamp,sensor_id,radius_m,count\n";
  for (const auto& r : records) {
    f << r.timestamp << ',' << r.sensor_id << ',' << r.radius_m << ','
      << r.count << '\n';
  }
}

double pedestrian_fraction(const std::vector<LabelRecord>& labels,
                           int radius_m) {
  int64_t total = 0, positive = 0;
  for (const auto& r : labels) {
    if (r.radius_m != radius_m) continue;
    ++total;
    if (r.count >= 1) ++positive;
  }
  if (total == 0) {
    throw_input("labels.empty", "no labels at radius " +
                                    std::to_string(radius_m));
  }
  return static_cast<double>(positive) / static_cast<double>(total);
}

HourlyHistogram hourly_fraction(const std::vector<LabelRecord>& labels,
                                int radius_m, int utc_offset_hours) {
  HourlyHistogram hist;
  std::array<int64_t, 24> positive{};
  int64_t total = 0;
  for (const auto& r : labels) {
    if (r.radius_m != radius_m) continue;
    int64_t local = r.timestamp + static_cast<int64_t>(utc_offset_hours) * 3600;
    int hour = static_cast<int>(((local / 3600) % 24 + 24) % 24);
    ++hist.support[hour];
    ++total;
    if (r.count >= 1) ++positive[hour];
  }
  if (total == 0) {
    throw_input("labels.empty", "no labels at radius " +
                                    std::to_string(radius_m));
  }
  for (int h = 0; h < 24; ++h) {
    if (hist.support[h] > 0) {
      hist.fraction[h] =
          static_cast<double>(positive[h]) / static_cast<double>(hist.support[h]);
    }
  }
  return hist;
}

DatasetIndex build_index(const std::vector<ClipRef>& clips,
                         const std::vector<LabelRecord>& labels) {
  DatasetIndex index;
  index.clips = clips;
  for (const auto& r : labels) {
    auto key = std::make_tuple(r.timestamp, r.sensor_id, r.radius_m);
    if (!index.labels.emplace(key, r.count).second) {
      throw_input("labels.duplicate_key",
                  "duplicate key at t=" + std::to_string(r.timestamp));
    }
    bool covered = false;
    for (const auto& c : clips) {
      if (c.sensor_id == r.sensor_id &&
          static_cast<double>(r.timestamp) >= c.start_time &&
          static_cast<double>(r.timestamp) < c.start_time + c.duration) {
        covered = true;
        break;
      }
    }
    if (!covered) {
      throw_input("index.unaligned_label",
                  "label at t=" + std::to_string(r.timestamp) + " sensor=" +
                      r.sensor_id + " outside every clip");
    }
  }
  // Merge clip ranges into sessions.
  std::vector<std::pair<int64_t, int64_t>> ranges;
  for (const auto& c : clips) {
    ranges.emplace_back(static_cast<int64_t>(c.start_time),
                        static_cast<int64_t>(c.start_time + c.duration));
  }
  std::sort(ranges.begin(), ranges.end());
  for (const auto& r : ranges) {
    if (!index.sessions.empty() && r.first <= index.sessions.back().second) {
      index.sessions.back().second =
          std::max(index.sessions.back().second, r.second);
    } else {
      index.sessions.push_back(r);
    }
  }
  return index;
}

}  // namespace pedsense
