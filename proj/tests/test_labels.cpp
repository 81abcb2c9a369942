#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cstdio>
#include <fstream>
#include <sstream>
#include <string>

#include "pedsense/error.hpp"
#include "pedsense/labels.hpp"

using namespace pedsense;

namespace {

std::string full_frame(int64_t ts, const std::string& sensor,
                       int c1, int c3, int c6, int c9) {
  std::ostringstream out;
  out << ts << ',' << sensor << ",1," << c1 << '\n'
      << ts << ',' << sensor << ",3," << c3 << '\n'
      << ts << ',' << sensor << ",6," << c6 << '\n'
      << ts << ',' << sensor << ",9," << c9 << '\n';
  return out.str();
}

const std::string kHeader = "timestamp,sensor_id,radius_m,count\n";

}  // namespace

TEST_CASE("a well-formed row parses into all four fields") {
  auto records = parse_labels(kHeader + "1690000000,sensorA,3,2\n");
  REQUIRE(records.size() == 1);
  CHECK(records[0].timestamp == 1690000000);
  CHECK(records[0].sensor_id == "sensorA");
  CHECK(records[0].radius_m == 3);
  CHECK(records[0].count == 2);
}

TEST_CASE("malformed rows report their 1-based row number") {
  try {
    parse_labels(kHeader + "1690000000,sensorA,3,2\n1690000001,sensorA,3\n");
    FAIL("expected error");
  } catch (const Error& e) {
    CHECK(e.kind() == ErrorKind::input);
    CHECK(std::string(e.what()).find("3") != std::string::npos);  // row 3
  }

  CHECK_THROWS_AS(parse_labels(kHeader + "notanumber,sensorA,3,2\n"), Error);
  CHECK_THROWS_AS(parse_labels(kHeader + "1690000000,sensorA,3,-1\n"), Error);
}

TEST_CASE("duplicate keys and out-of-domain radii are rejected") {
  const std::string dup = kHeader +
                          "1690000000,sensorA,3,2\n"
                          "1690000000,sensorA,3,1\n";
  try {
    parse_labels(dup);
    FAIL("expected error");
  } catch (const Error& e) {
    CHECK(e.code() == "labels.duplicate_key");
  }

  try {
    parse_labels(kHeader + "1690000000,sensorA,5,2\n");
    FAIL("expected error");
  } catch (const Error& e) {
    CHECK(e.code() == "labels.bad_radius");
  }
}

TEST_CASE("counts must be monotone in the radius within a frame") {
  // count at r=6 below count at r=3 is geometrically impossible.
  const std::string bad = kHeader +
                          "1690000000,sensorA,3,2\n"
                          "1690000000,sensorA,6,1\n";
  try {
    parse_labels(bad);
    FAIL("expected error");
  } catch (const Error& e) {
    CHECK(e.code() == "labels.monotonicity");
  }

  // Equal counts are fine.
  const std::string ok = kHeader +
                         "1690000000,sensorA,3,2\n"
                         "1690000000,sensorA,6,2\n";
  CHECK(parse_labels(ok).size() == 2);
}

TEST_CASE("pedestrian_fraction counts frames with at least one pedestrian") {
  std::string csv = kHeader;
  csv += full_frame(1690000000, "a", 0, 0, 0, 0);
  csv += full_frame(1690000001, "a", 0, 0, 0, 0);
  csv += full_frame(1690000002, "a", 0, 1, 1, 2);
  csv += full_frame(1690000003, "a", 0, 0, 0, 0);
  auto labels = parse_labels(csv);
  CHECK(pedestrian_fraction(labels, 3) == doctest::Approx(0.25));
  CHECK(pedestrian_fraction(labels, 1) == doctest::Approx(0.0));
  CHECK(pedestrian_fraction(labels, 9) == doctest::Approx(0.25));
  CHECK_THROWS_AS(pedestrian_fraction({}, 3), Error);
}

TEST_CASE("hourly_fraction groups by UTC hour of day") {
  std::string csv = kHeader;
  // Two frames at hour 12, one positive; one frame at hour 3, negative.
  const int64_t noon = 12 * 3600;
  csv += full_frame(noon, "a", 1, 1, 1, 1);
  csv += full_frame(noon + 1, "a", 0, 0, 0, 0);
  csv += full_frame(3 * 3600, "a", 0, 0, 0, 0);
  auto labels = parse_labels(csv);

  HourlyHistogram hist = hourly_fraction(labels, 6);
  CHECK(hist.support[12] == 2);
  CHECK(hist.fraction[12] == doctest::Approx(0.5));
  CHECK(hist.support[3] == 1);
  CHECK(hist.fraction[3] == doctest::Approx(0.0));
  CHECK(hist.support[7] == 0);

  // A +1 hour offset shifts the noon bucket to 13.
  HourlyHistogram shifted = hourly_fraction(labels, 6, 1);
  CHECK(shifted.support[13] == 2);
  CHECK(shifted.support[12] == 0);
}

TEST_CASE("save then load round trip with LF line endings") {
  std::string csv = kHeader;
  csv += full_frame(1690000000, "a", 0, 1, 1, 3);
  csv += full_frame(1690000000, "b", 0, 0, 0, 0);
  auto labels = parse_labels(csv);

  const char* path = "/tmp/pedsense_labels.csv";
  save_labels(path, labels);

  std::ifstream in(path, std::ios::binary);
  std::string raw((std::istreambuf_iterator<char>(in)),
                  std::istreambuf_iterator<char>());
  CHECK(raw.find('\r') == std::string::npos);
  CHECK(raw.substr(0, kHeader.size()) == kHeader);

  auto loaded = load_labels(path);
  REQUIRE(loaded.size() == labels.size());
  for (size_t i = 0; i < labels.size(); ++i) {
    CHECK(loaded[i].timestamp == labels[i].timestamp);
    CHECK(loaded[i].sensor_id == labels[i].sensor_id);
    CHECK(loaded[i].radius_m == labels[i].radius_m);
    CHECK(loaded[i].count == labels[i].count);
  }
}

TEST_CASE("build_index accepts labels covered by clips of the same sensor") {
  ClipRef clip;
  clip.path = "a.wav";
  clip.sensor_id = "a";
  clip.start_time = 1690000000.0;
  clip.duration = 10.0;

  std::string csv = kHeader;
  csv += full_frame(1690000005, "a", 0, 0, 0, 1);
  auto labels = parse_labels(csv);

  DatasetIndex index = build_index({clip}, labels);
  CHECK(index.clips.size() == 1);
  CHECK(index.labels.size() == 4);
  CHECK(index.labels.at({1690000005, "a", 9}) == 1);
  REQUIRE(index.sessions.size() == 1);
  CHECK(index.sessions[0].first <= 1690000005);
  CHECK(index.sessions[0].second > 1690000005);
}

TEST_CASE("build_index rejects labels outside every clip") {
  ClipRef clip;
  clip.path = "a.wav";
  clip.sensor_id = "a";
  clip.start_time = 1690000000.0;
  clip.duration = 10.0;

  std::string csv = kHeader;
  csv += full_frame(1690000050, "a", 0, 0, 0, 0);  // past the clip end
  auto labels = parse_labels(csv);
  CHECK_THROWS_AS(build_index({clip}, labels), Error);

  // Same timestamp but a different sensor is also uncovered.
  std::string csv2 = kHeader;
  csv2 += full_frame(1690000005, "b", 0, 0, 0, 0);
  CHECK_THROWS_AS(build_index({clip}, parse_labels(csv2)), Error);
}
