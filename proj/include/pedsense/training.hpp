#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "pedsense/detector.hpp"
#include "pedsense/labels.hpp"
#include "pedsense/melspec.hpp"
#include "pedsense/nn/module.hpp"
#include "pedsense/nn/ops.hpp"

namespace pedsense {

struct ThresholdConfig {
  int train_threshold = 1;  // pedestrian event when count >= threshold
  int test_threshold = 1;
  int radius_m = 6;
};

// target = 1 iff count >= cfg.train_threshold, for records at cfg.radius_m,
// in input order.
std::vector<int> binarize_labels(const std::vector<LabelRecord>& records,
                                 const ThresholdConfig& cfg);

// Class-balanced index batches: the majority class is enumerated exactly once
// per epoch in seeded shuffled order; each batch slot flips a fair coin
// between the next majority sample and a minority sample drawn with
// replacement, so the expected minority fraction is 0.5. The epoch ends when
// the majority class is exhausted (the final batch may be short).
class BalancedSampler {
 public:
  // classes[i] in {0,1}; throws on a single-class dataset.
  BalancedSampler(const std::vector<int>& classes, int batch_size,
                  uint64_t seed);

  std::vector<std::vector<int>> epoch();

  int minority_class() const { return minority_class_; }

 private:
  std::vector<int> minority_;
  std::vector<int> majority_;
  int minority_class_ = 1;
  int batch_size_;
  std::mt19937_64 rng_;
};

struct WeightedLossTerms {
  double loss_pos = 0.0;  // sum of per-sample losses over positives
  double loss_neg = 0.0;
  int num_pos = 0;
  int num_neg = 0;
  double lambda = 0.0;
};

// lambda = (1/num_pos) / ((1/num_pos) + (1/num_neg)) = num_neg / (num_pos +
// num_neg); 0 when num_pos = 0, and 1 by symmetry when num_neg = 0.
double lambda_weight(int num_pos, int num_neg);

// L = lambda * loss_pos + (1 - lambda) * loss_neg as an autograd expression.
nn::Tensor weighted_loss(const nn::BceResult& bce,
                         WeightedLossTerms* terms = nullptr);

// One training sample: a context window of consecutive seconds.
struct DetectorSample {
  std::vector<MelPatch> patches;
  std::vector<int> targets;  // one per second
  int64_t start_ts = 0;
  bool positive = false;  // any second positive
};

struct DetectorDataset {
  std::vector<DetectorSample> windows;

  std::vector<int> window_classes() const;
};

// Non-overlapping context windows over a contiguous 1 Hz sequence; targets
// align with seq.timestamps. A trailing short window is kept.
DetectorDataset make_detector_dataset(const MelSequence& seq,
                                      const std::vector<int>& targets,
                                      int context_seconds);

// Contiguous time-block split; no second appears on both sides.
struct DatasetSplit {
  DetectorDataset train;
  DetectorDataset validation;
  DetectorDataset test;
};
DatasetSplit time_block_split(const DetectorDataset& dataset,
                              double train_fraction, double val_fraction);

struct EpochLog {
  int epoch = 0;
  double train_loss = 0.0;
  double val_macro = 0.0;
};

struct TrainResult {
  std::vector<EpochLog> log;
  double best_val_macro = 0.0;
  int best_epoch = 0;  // 0 when the log is empty
};

struct EvalReport {
  double recall_pos = 0.0;
  double recall_neg = 0.0;
  double macro_accuracy = 0.0;
  int64_t tp = 0, fn = 0, tn = 0, fp = 0;
  int64_t support_pos = 0;
  int64_t support_neg = 0;
  bool pos_defined = false;  // support > 0
  bool neg_defined = false;
};

EvalReport score_predictions(const std::vector<int>& predicted,
                             const std::vector<int>& targets);

EvalReport evaluate(DetectorModel& model, const DetectorDataset& test,
                    double threshold = 0.5);

// Balanced-oversampled SGD on the weighted loss; the model retains the
// parameters of the best-validation epoch. Aborts with a divergence error on
// non-finite loss.
TrainResult train_detector(DetectorModel& model, const DetectorDataset& train,
                           const DetectorDataset& validation,
                           const nn::SgdConfig& cfg);

// Shared audio with per-radius counts, 1 Hz aligned to features.timestamps.
struct ExperimentData {
  MelSequence features;
  std::map<int, std::vector<int>> counts;  // radius -> per-second counts
};

struct ExperimentConfig {
  std::vector<int> radii{1, 3, 6, 9};
  std::vector<int> train_thresholds{1, 2, 3, 4};
  std::vector<int> test_thresholds{1, 2, 3, 4};
  uint64_t seed = 1;
  int epochs = 20;
  int batch_size = 16;
  double learning_rate = 0.01;
  double momentum = 0.9;
  double lr_decay = 0.9;
  double train_fraction = 0.6;
  double val_fraction = 0.2;
  int grid_radius = 6;
  ConvEncoderConfig encoder;
  AggregatorConfig aggregator;
};

ExperimentConfig load_experiment_config(const std::string& path);

struct GridCell {
  int radius = 0;
  int train_threshold = 0;
  int test_threshold = 0;
  EvalReport report;
};

// One train/evaluate cycle per radius at a fixed threshold; same audio,
// radius-specific labels.
std::vector<GridCell> radius_experiment(const ExperimentData& data,
                                        const ExperimentConfig& cfg,
                                        int threshold = 1);

// Train at each train threshold (fixed radius), evaluate at each test
// threshold: |train| x |test| cells.
std::vector<GridCell> threshold_grid(const ExperimentData& data,
                                     const ExperimentConfig& cfg);

// One row per cell: radius,train_thr,test_thr,recall_pos,recall_neg,
// macro_acc,support_pos,support_neg.
void write_cells_csv(const std::string& path,
                     const std::vector<GridCell>& cells);
void write_cells_json(const std::string& path,
                      const std::vector<GridCell>& cells);

}  // namespace pedsense
