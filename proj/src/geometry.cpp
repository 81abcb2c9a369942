#include "pedsense/geometry.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>

#include <json.hpp>

#include "pedsense/error.hpp"

namespace pedsense {
namespace {

struct Similarity {
  // x' = s * (x - cx), y' = s * (y - cy)
  double s = 1.0, cx = 0.0, cy = 0.0;
};

Similarity normalizing_transform(const std::array<Vec2, 4>& pts) {
  Similarity t;
  for (const auto& p : pts) {
    t.cx += p.x / 4.0;
    t.cy += p.y / 4.0;
  }
  double mean_dist = 0.0;
  for (const auto& p : pts) {
    mean_dist += std::hypot(p.x - t.cx, p.y - t.cy) / 4.0;
  }
  t.s = mean_dist > 1e-12 ? std::sqrt(2.0) / mean_dist : 1.0;
  return t;
}

void check_no_collinear_triple(const std::array<Vec2, 4>& pts,
                               const char* side) {
  double spread = 0.0;
  for (const auto& a : pts)
    for (const auto& b : pts)
      spread = std::max(spread, std::hypot(a.x - b.x, a.y - b.y));
  for (int i = 0; i < 4; ++i) {
    for (int j = i + 1; j < 4; ++j) {
      for (int k = j + 1; k < 4; ++k) {
        double area = (pts[j].x - pts[i].x) * (pts[k].y - pts[i].y) -
                      (pts[j].y - pts[i].y) * (pts[k].x - pts[i].x);
        if (std::abs(area) < 1e-9 * spread * spread + 1e-12) {
          throw_numeric("homography.degenerate",
                        std::string("collinear ") + side + " points");
        }
      }
    }
  }
}

// Gaussian elimination with partial pivoting for an n x n system.
void solve_linear(std::vector<double>& a, std::vector<double>& b, int n,
                  const char* error_code) {
  for (int col = 0; col < n; ++col) {
    int pivot = col;
    for (int r = col + 1; r < n; ++r) {
      if (std::abs(a[r * n + col]) > std::abs(a[pivot * n + col])) pivot = r;
    }
    if (std::abs(a[pivot * n + col]) < 1e-12) {
      throw_numeric(error_code, "singular system");
    }
    if (pivot != col) {
      for (int c = 0; c < n; ++c) std::swap(a[col * n + c], a[pivot * n + c]);
      std::swap(b[col], b[pivot]);
    }
    for (int r = col + 1; r < n; ++r) {
      double f = a[r * n + col] / a[col * n + col];
      for (int c = col; c < n; ++c) a[r * n + c] -= f * a[col * n + c];
      b[r] -= f * b[col];
    }
  }
  for (int r = n - 1; r >= 0; --r) {
    double acc = b[r];
    for (int c = r + 1; c < n; ++c) acc -= a[r * n + c] * b[c];
    b[r] = acc / a[r * n + r];
  }
}

std::array<double, 9> compose(const std::array<double, 9>& a,
                              const std::array<double, 9>& b) {
  std::array<double, 9> out{};
  for (int i = 0; i < 3; ++i)
    for (int j = 0; j < 3; ++j)
      for (int k = 0; k < 3; ++k) out[i * 3 + j] += a[i * 3 + k] * b[k * 3 + j];
  return out;
}

}  // namespace

CameraCalibration estimate_homography(const std::array<Vec2, 4>& pixel_points,
                                      const std::array<Vec2, 4>& ground_points) {
  check_no_collinear_triple(pixel_points, "pixel");
  check_no_collinear_triple(ground_points, "ground");

  const Similarity tp = normalizing_transform(pixel_points);
  const Similarity tg = normalizing_transform(ground_points);

  std::vector<double> a(8 * 8, 0.0), b(8, 0.0);
  for (int i = 0; i < 4; ++i) {
    const double px = tp.s * (pixel_points[i].x - tp.cx);
    const double py = tp.s * (pixel_points[i].y - tp.cy);
    const double gx = tg.s * (ground_points[i].x - tg.cx);
    const double gy = tg.s * (ground_points[i].y - tg.cy);
    double* r0 = &a[(2 * i) * 8];
    double* r1 = &a[(2 * i + 1) * 8];
    r0[0] = -px; r0[1] = -py; r0[2] = -1;
    r0[6] = gx * px; r0[7] = gx * py;
    b[2 * i] = -gx;
    r1[3] = -px; r1[4] = -py; r1[5] = -1;
    r1[6] = gy * px; r1[7] = gy * py;
    b[2 * i + 1] = -gy;
  }
  solve_linear(a, b, 8, "homography.rank_deficient");

  const std::array<double, 9> hn{b[0], b[1], b[2], b[3],
                                 b[4], b[5], b[6], b[7], 1.0};
  // Undo normalization: H = Tg^-1 * Hn * Tp.
  const std::array<double, 9> t_pixel{tp.s, 0, -tp.s * tp.cx,
                                      0, tp.s, -tp.s * tp.cy,
                                      0, 0, 1};
  const std::array<double, 9> t_ground_inv{1.0 / tg.s, 0, tg.cx,
                                           0, 1.0 / tg.s, tg.cy,
                                           0, 0, 1};
  std::array<double, 9> h = compose(t_ground_inv, compose(hn, t_pixel));
  if (std::abs(h[8]) < 1e-12) {
    throw_numeric("homography.rank_deficient", "cannot scale h33 to 1");
  }
  for (double& v : h) v /= h[8];
  h[8] = 1.0;

  CameraCalibration calib;
  calib.h = h;
  for (int i = 0; i < 4; ++i) {
    auto g = project_to_ground(calib, pixel_points[i]);
    if (!g || std::hypot(g->x - ground_points[i].x,
                         g->y - ground_points[i].y) > 1e-6) {
      throw_numeric("homography.rank_deficient",
                    "reprojection exceeds 1e-6 m");
    }
  }
  return calib;
}

std::optional<Vec2> project_to_ground(const CameraCalibration& calib,
                                      const Vec2& pixel) {
  const auto& h = calib.h;
  const double w = h[6] * pixel.x + h[7] * pixel.y + h[8];
  if (std::abs(w) < 1e-9) return std::nullopt;
  return Vec2{(h[0] * pixel.x + h[1] * pixel.y + h[2]) / w,
              (h[3] * pixel.x + h[4] * pixel.y + h[5]) / w};
}

FrameLabels label_frame(const DetectionFrame& frame,
                        const CameraCalibration& calib,
                        const SensorSite& site) {
  FrameLabels out;
  for (int r : site.radii) out.counts[r] = 0;
  for (const auto& box : frame.boxes) {
    auto ground = project_to_ground(calib, box_anchor(box));
    if (!ground) {
      ++out.skipped_boxes;
      continue;
    }
    const double d = std::hypot(ground->x - site.ground_position.x,
                                ground->y - site.ground_position.y);
    for (int r : site.radii) {
      if (d <= static_cast<double>(r)) ++out.counts[r];
    }
  }
  return out;
}

std::vector<LabelRecord> label_stream(const std::vector<DetectionFrame>& frames,
                                      const CameraCalibration& calib,
                                      const std::vector<SensorSite>& sites,
                                      StreamDiagnostics* diag) {
  StreamDiagnostics local;
  std::vector<LabelRecord> records;
  for (size_t i = 0; i < frames.size(); ++i) {
    if (i > 0) {
      if (frames[i].timestamp <= frames[i - 1].timestamp) {
        throw_input("labels.unsorted_frames",
                    "frames not strictly increasing at index " +
                        std::to_string(i));
      }
      if (frames[i].timestamp != frames[i - 1].timestamp + 1) ++local.timestamp_gaps;
    }
    for (const auto& site : sites) {
      FrameLabels fl = label_frame(frames[i], calib, site);
      local.skipped_boxes += fl.skipped_boxes;
      for (const auto& [radius, count] : fl.counts) {
        records.push_back({frames[i].timestamp, site.sensor_id, radius, count});
      }
    }
  }
  std::sort(records.begin(), records.end(), [](const auto& a, const auto& b) {
    return std::tie(a.timestamp, a.sensor_id, a.radius_m) <
           std::tie(b.timestamp, b.sensor_id, b.radius_m);
  });
  if (diag) *diag = local;
  return records;
}

std::vector<DetectionFrame> load_detections(const std::string& path,
                                            double confidence_threshold) {
  std::ifstream f(path);
  if (!f) throw_input("detections.open", "cannot open " + path);
  std::vector<DetectionFrame> frames;
  std::string line;
  size_t row = 0;
  while (std::getline(f, line)) {
    ++row;
    if (line.empty()) continue;
    nlohmann::json j;
    try {
      j = nlohmann::json::parse(line);
    } catch (const nlohmann::json::exception& e) {
      throw_input("detections.malformed",
                  "line " + std::to_string(row) + ": " + e.what());
    }
    DetectionFrame frame;
    try {
      frame.timestamp = j.at("timestamp").get<int64_t>();
      frame.camera_id = j.at("camera_id").get<std::string>();
      for (const auto& b : j.at("boxes")) {
        BoundingBox box{b.at(0).get<double>(), b.at(1).get<double>(),
                        b.at(2).get<double>(), b.at(3).get<double>(),
                        b.at(4).get<double>()};
        if (box.x_min >= box.x_max || box.y_min >= box.y_max) {
          throw_input("detections.malformed",
                      "line " + std::to_string(row) + ": degenerate box");
        }
        if (box.confidence >= confidence_threshold) frame.boxes.push_back(box);
      }
    } catch (const nlohmann::json::exception& e) {
      throw_input("detections.malformed",
                  "line " + std::to_string(row) + ": " + e.what());
    }
    frames.push_back(std::move(frame));
  }
  return frames;
}

std::vector<CameraCalibration> load_calibration(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw_input("calibration.open", "cannot open " + path);
  nlohmann::json j;
  try {
    f >> j;
  } catch (const nlohmann::json::exception& e) {
    throw_input("calibration.malformed", e.what());
  }
  std::vector<CameraCalibration> out;
  for (const auto& cam : j.at("cameras")) {
    std::array<Vec2, 4> px, gnd;
    for (int i = 0; i < 4; ++i) {
      px[i] = {cam.at("pixel_points").at(i).at(0).get<double>(),
               cam.at("pixel_points").at(i).at(1).get<double>()};
      gnd[i] = {cam.at("ground_points").at(i).at(0).get<double>(),
                cam.at("ground_points").at(i).at(1).get<double>()};
    }
    CameraCalibration calib = estimate_homography(px, gnd);
    calib.camera_id = cam.at("camera_id").get<std::string>();
    out.push_back(std::move(calib));
  }
  return out;
}

std::vector<SensorSite> load_sites(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw_input("sites.open", "cannot open " + path);
  nlohmann::json j;
  try {
    f >> j;
  } catch (const nlohmann::json::exception& e) {
    throw_input("sites.malformed", e.what());
  }
  std::vector<SensorSite> out;
  for (const auto& s : j.at("sites")) {
    SensorSite site;
    site.sensor_id = s.at("sensor_id").get<std::string>();
    site.ground_position = {s.at("ground_position").at(0).get<double>(),
                            s.at("ground_position").at(1).get<double>()};
    if (s.contains("radii")) {
      site.radii = s.at("radii").get<std::vector<int>>();
    }
    if (site.radii.empty() ||
        !std::is_sorted(site.radii.begin(), site.radii.end()) ||
        site.radii.front() <= 0) {
      throw_input("sites.malformed",
                  "radii must be positive and ascending for " + site.sensor_id);
    }
    out.push_back(std::move(site));
  }
  return out;
}

}  // namespace pedsense
