#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "pedsense/labels.hpp"
#include "pedsense/nn/module.hpp"
#include "pedsense/nn/ops.hpp"

namespace pedsense {

// Fixed (sensor, radius) -> column bijection: column = sensor_index *
// radii.size() + radius_index, sensors in roster order; the last column is
// the Unix timestamp.
struct FlowColumns {
  std::vector<std::string> sensors;
  std::vector<int> radii{1, 3, 6, 9};

  int count_columns() const {
    return static_cast<int>(sensors.size() * radii.size());
  }
  int total_columns() const { return count_columns() + 1; }
  int index(int sensor_idx, int radius_idx) const {
    return sensor_idx * static_cast<int>(radii.size()) + radius_idx;
  }
};

inline constexpr int kFlowRows = 11;

// 11 consecutive seconds of raw counts plus the timestamp column, row-major
// 11 x total_columns.
struct FlowWindow {
  std::vector<double> matrix;
  int64_t last_ts = 0;

  double at(int row, int col, int total_cols) const {
    return matrix[row * total_cols + col];
  }
};

// Counts for the second following the window, in column order.
struct FlowTarget {
  std::vector<int> counts;
  int64_t ts = 0;
};

struct FlowSample {
  FlowWindow window;
  FlowTarget target;
};

struct WindowSet {
  std::vector<FlowSample> samples;
  FlowColumns columns;
  int64_t skipped_gap_positions = 0;
  int64_t excluded_all_zero = 0;
};

// One window per position with 12 consecutive seconds on the full grid;
// positions spanning missing seconds are skipped and counted; windows whose
// 11 x count_columns input cells are all zero are excluded.
WindowSet build_windows(const std::vector<LabelRecord>& records,
                        const FlowColumns& columns);

// Training-set column statistics; std entries floored at 1e-8.
struct NormalizationStats {
  std::vector<double> mean;
  std::vector<double> std_dev;
};

struct FlowSplit {
  std::vector<FlowSample> train;
  std::vector<FlowSample> test;
  NormalizationStats stats;
};

// Seeded random partition of windows; stats from the training side only.
// Targets stay raw counts.
FlowSplit split_and_normalize(const std::vector<FlowSample>& samples,
                              double train_ratio, uint64_t seed);

std::vector<double> normalized_matrix(const FlowWindow& window,
                                      const NormalizationStats& stats);

struct FlowModelConfig {
  std::vector<int> channels{8, 8, 16, 16};  // 4 conv stages
  int kernel = 3;
  int fc_hidden = 64;
  int c_max = 8;  // count classes {0..c_max}
  int rows = kFlowRows;
  int cols = 25;
  int targets = 24;

  int classes() const { return c_max + 1; }
};

// 1-channel 11 x 25 image -> 4 convs (relu), one 2x2 max pool after the
// second conv, two fully connected layers -> per-target class logits.
class FlowModel {
 public:
  FlowModel(FlowModelConfig cfg, uint64_t seed);

  nn::ParamStore& params() { return params_; }
  const nn::ParamStore& params() const { return params_; }
  const FlowModelConfig& config() const { return cfg_; }

  // x [N, 1, rows, cols] normalized -> logits [N, targets * classes]
  nn::Tensor forward(const nn::Tensor& x);

  // Per-target softmax scores for one normalized window: targets x classes,
  // each row summing to 1.
  std::vector<std::vector<double>> scores(const std::vector<double>& matrix);

  // Argmax class per target; ties break toward the smaller class index.
  std::vector<int> predict(const std::vector<double>& matrix);

 private:
  FlowModelConfig cfg_;
  nn::ParamStore params_;
};

struct FlowEpochLog {
  int epoch = 0;
  double train_loss = 0.0;
};

struct FlowTrainResult {
  std::vector<FlowEpochLog> log;
};

// Mean per-target cross-entropy, targets clipped to c_max; seeded shuffling.
FlowTrainResult train_flow(FlowModel& model,
                           const std::vector<FlowSample>& train,
                           const NormalizationStats& stats,
                           const nn::SgdConfig& cfg);

// Per (sensor, radius) exact-match accuracy and support on the test set.
struct BoundaryTable {
  FlowColumns columns;
  std::vector<double> accuracy;  // count_columns entries, column order
  std::vector<int64_t> support;

  double mean_accuracy() const;
  double mean_accuracy_at_radius(int radius) const;
};

BoundaryTable accuracy_by_boundary(FlowModel& model,
                                   const std::vector<FlowSample>& test,
                                   const NormalizationStats& stats,
                                   const FlowColumns& columns);

// Persistence baseline: predict next frame = last frame (clipped).
BoundaryTable persistence_by_boundary(const std::vector<FlowSample>& test,
                                      const FlowColumns& columns);

// Autoregressive H-step forecast: argmax counts are fed back into the window
// and the timestamp column advances by 1 s per step. history holds raw rows
// (count columns + timestamp), most recent last, at least kFlowRows of them.
std::vector<std::vector<int>> sliding_forecast(
    FlowModel& model, const NormalizationStats& stats,
    const std::vector<std::vector<double>>& history, int horizon);

// Rows = sensors, columns = radii; a parallel support table follows.
void write_boundary_csv(const std::string& path, const BoundaryTable& table);
// timestamp plus one column per target.
void write_forecast_csv(const std::string& path, const FlowColumns& columns,
                        int64_t first_ts,
                        const std::vector<std::vector<int>>& forecast);

// Checkpoint plus a JSON sidecar (path + ".json") embedding the stats and
// column map.
void save_flow(const std::string& path, const FlowModel& model,
               const NormalizationStats& stats, const FlowColumns& columns);
void load_flow(const std::string& path, FlowModel& model,
               NormalizationStats& stats, FlowColumns& columns);

}  // namespace pedsense
