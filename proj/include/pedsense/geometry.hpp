#pragma once

#include <array>
#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "pedsense/labels.hpp"

namespace pedsense {

struct Vec2 {
  double x = 0.0;
  double y = 0.0;
};

struct BoundingBox {
  double x_min, y_min, x_max, y_max;
  double confidence = 1.0;
};

struct DetectionFrame {
  int64_t timestamp = 0;
  std::string camera_id;
  std::vector<BoundingBox> boxes;
};

// Row-major 3x3 homography mapping image pixels (homogeneous) to ground-plane
// meters.
struct CameraCalibration {
  std::string camera_id;
  std::array<double, 9> h{1, 0, 0, 0, 1, 0, 0, 0, 1};
};

struct SensorSite {
  std::string sensor_id;
  Vec2 ground_position;
  std::vector<int> radii = default_radii();  // meters, ascending
};

// Direct linear transform from 4 pixel/ground correspondences, with Hartley
// normalization. The result is scaled so h[8] == 1 and reprojects all four
// correspondences within 1e-6 m. Error codes:
//   homography.degenerate      three collinear points on either side
//   homography.rank_deficient  singular DLT system
CameraCalibration estimate_homography(const std::array<Vec2, 4>& pixel_points,
                                      const std::array<Vec2, 4>& ground_points);

// Bottom-center of the box: the body's ground contact pixel.
inline Vec2 box_anchor(const BoundingBox& box) {
  return {(box.x_min + box.x_max) / 2.0, box.y_max};
}

// Applies the homography; empty when the point maps near infinity
// (|w| < 1e-9).
std::optional<Vec2> project_to_ground(const CameraCalibration& calib,
                                      const Vec2& pixel);

struct FrameLabels {
  std::map<int, int> counts;  // radius -> pedestrians inside the closed disc
  int skipped_boxes = 0;      // anchors that mapped near infinity
};

// Counts boxes whose ground-projected anchor lies within each buffer radius
// of the site (closed disc: distance == r is inside).
FrameLabels label_frame(const DetectionFrame& frame,
                        const CameraCalibration& calib,
                        const SensorSite& site);

struct StreamDiagnostics {
  int skipped_boxes = 0;
  int timestamp_gaps = 0;
};

// One LabelRecord per (frame, site, radius), zero counts explicit, ordered by
// (timestamp, sensor_id, radius). Frames must be sorted by timestamp.
std::vector<LabelRecord> label_stream(const std::vector<DetectionFrame>& frames,
                                      const CameraCalibration& calib,
                                      const std::vector<SensorSite>& sites,
                                      StreamDiagnostics* diag = nullptr);

// JSON Lines: {"timestamp": int, "camera_id": str,
//              "boxes": [[x_min,y_min,x_max,y_max,conf], ...]}
std::vector<DetectionFrame> load_detections(const std::string& path,
                                            double confidence_threshold = 0.7);

// JSON: {"cameras": [{"camera_id": str, "pixel_points": [[x,y]x4],
//                     "ground_points": [[x,y]x4]}]}
std::vector<CameraCalibration> load_calibration(const std::string& path);

// JSON: {"sites": [{"sensor_id": str, "ground_position": [x,y],
//                   "radii": [..]}]}
std::vector<SensorSite> load_sites(const std::string& path);

}  // namespace pedsense
