#include "pedsense/training.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>

#include <json.hpp>

#include "pedsense/error.hpp"

namespace pedsense {

using nn::Tensor;

std::vector<int> binarize_labels(const std::vector<LabelRecord>& records,
                                 const ThresholdConfig& cfg) {
  if (cfg.train_threshold < 1) {
    throw_input("training.bad_threshold", "threshold must be >= 1");
  }
  std::vector<int> targets;
  for (const auto& r : records) {
    if (r.radius_m == cfg.radius_m) {
      targets.push_back(r.count >= cfg.train_threshold ? 1 : 0);
    }
  }
  return targets;
}

BalancedSampler::BalancedSampler(const std::vector<int>& classes,
                                 int batch_size, uint64_t seed)
    : batch_size_(batch_size), rng_(seed) {
  if (batch_size < 1) {
    throw_input("training.bad_batch_size", "batch size must be >= 1");
  }
  std::vector<int> pos, neg;
  for (size_t i = 0; i < classes.size(); ++i) {
    (classes[i] ? pos : neg).push_back(static_cast<int>(i));
  }
  if (pos.empty() || neg.empty()) {
    throw_input("training.single_class",
                "balanced sampling needs both classes present");
  }
  // Ties count the positives as the minority.
  if (pos.size() <= neg.size()) {
    minority_ = pos;
    majority_ = neg;
    minority_class_ = 1;
  } else {
    minority_ = neg;
    majority_ = pos;
    minority_class_ = 0;
  }
}

std::vector<std::vector<int>> BalancedSampler::epoch() {
  std::vector<int> order = majority_;
  std::shuffle(order.begin(), order.end(), rng_);
  std::uniform_int_distribution<size_t> pick(0, minority_.size() - 1);

  // Stratified batches: half majority, half minority (with replacement).
  // Every gradient step then sees both classes, so the common-mode part of
  // the gradient cancels inside the step instead of bouncing the model
  // between all-positive and all-negative updates.
  std::vector<std::vector<int>> batches;
  if (batch_size_ == 1) {
    // Alternate classes so the expected positive fraction stays one half.
    for (int idx : order) {
      batches.push_back({idx});
      batches.push_back({minority_[pick(rng_)]});
    }
    return batches;
  }
  size_t next = 0;
  while (next < order.size()) {
    // Odd sizes alternate the extra slot between the classes.
    const size_t majority_slots =
        (static_cast<size_t>(batch_size_) + batches.size() % 2) / 2;
    const size_t stop = std::min(order.size(), next + majority_slots);
    std::vector<int> batch(order.begin() + next, order.begin() + stop);
    next = stop;
    while (batch.size() < static_cast<size_t>(batch_size_)) {
      batch.push_back(minority_[pick(rng_)]);
    }
    std::shuffle(batch.begin(), batch.end(), rng_);
    batches.push_back(std::move(batch));
  }
  return batches;
}

double lambda_weight(int num_pos, int num_neg) {
  if (num_pos < 0 || num_neg < 0) {
    throw_input("training.bad_counts", "negative class counts");
  }
  if (num_pos == 0) return 0.0;
  if (num_neg == 0) return 1.0;
  const double inv_pos = 1.0 / num_pos;
  const double inv_neg = 1.0 / num_neg;
  return inv_pos / (inv_pos + inv_neg);
}

Tensor weighted_loss(const nn::BceResult& bce, WeightedLossTerms* terms) {
  const double lambda = lambda_weight(bce.num_pos, bce.num_neg);
  if (terms) {
    terms->loss_pos = bce.pos_sum.item();
    terms->loss_neg = bce.neg_sum.item();
    terms->num_pos = bce.num_pos;
    terms->num_neg = bce.num_neg;
    terms->lambda = lambda;
  }
  return nn::add(nn::scale(bce.pos_sum, lambda),
                 nn::scale(bce.neg_sum, 1.0 - lambda));
}

std::vector<int> DetectorDataset::window_classes() const {
  std::vector<int> classes;
  classes.reserve(windows.size());
  for (const auto& w : windows) classes.push_back(w.positive ? 1 : 0);
  return classes;
}

DetectorDataset make_detector_dataset(const MelSequence& seq,
                                      const std::vector<int>& targets,
                                      int context_seconds) {
  if (targets.size() != seq.patches.size()) {
    throw_input("training.misaligned",
                "targets must align one-to-one with patches");
  }
  if (context_seconds < 1) {
    throw_input("training.bad_context", "context must be >= 1 second");
  }
  DetectorDataset out;
  const size_t total = seq.patches.size();
  const size_t window = static_cast<size_t>(context_seconds);
  for (size_t begin = 0; begin < total; begin += window) {
    const size_t end = std::min(total, begin + window);
    DetectorSample sample;
    sample.start_ts = seq.timestamps.empty() ? static_cast<int64_t>(begin)
                                             : seq.timestamps[begin];
    for (size_t i = begin; i < end; ++i) {
      sample.patches.push_back(seq.patches[i]);
      sample.targets.push_back(targets[i]);
      if (targets[i]) sample.positive = true;
    }
    out.windows.push_back(std::move(sample));
  }
  return out;
}

DatasetSplit time_block_split(const DetectorDataset& dataset,
                              double train_fraction, double val_fraction) {
  if (train_fraction <= 0.0 || val_fraction < 0.0 ||
      train_fraction + val_fraction > 1.0) {
    throw_input("training.bad_split", "fractions must sum to at most 1");
  }
  const size_t n = dataset.windows.size();
  const size_t n_train = static_cast<size_t>(std::round(train_fraction * n));
  const size_t n_val = static_cast<size_t>(
      std::round((train_fraction + val_fraction) * n)) - n_train;
  DatasetSplit split;
  for (size_t i = 0; i < n; ++i) {
    if (i < n_train) {
      split.train.windows.push_back(dataset.windows[i]);
    } else if (i < n_train + n_val) {
      split.validation.windows.push_back(dataset.windows[i]);
    } else {
      split.test.windows.push_back(dataset.windows[i]);
    }
  }
  return split;
}

EvalReport score_predictions(const std::vector<int>& predicted,
                             const std::vector<int>& targets) {
  if (predicted.size() != targets.size()) {
    throw_input("training.misaligned", "prediction/target length mismatch");
  }
  EvalReport r;
  for (size_t i = 0; i < targets.size(); ++i) {
    if (targets[i]) {
      predicted[i] ? ++r.tp : ++r.fn;
    } else {
      predicted[i] ? ++r.fp : ++r.tn;
    }
  }
  r.support_pos = r.tp + r.fn;
  r.support_neg = r.tn + r.fp;
  r.pos_defined = r.support_pos > 0;
  r.neg_defined = r.support_neg > 0;
  if (r.pos_defined) r.recall_pos = static_cast<double>(r.tp) / r.support_pos;
  if (r.neg_defined) r.recall_neg = static_cast<double>(r.tn) / r.support_neg;
  if (r.pos_defined && r.neg_defined) {
    r.macro_accuracy = 0.5 * (r.recall_pos + r.recall_neg);
  } else if (r.pos_defined) {
    r.macro_accuracy = r.recall_pos;
  } else if (r.neg_defined) {
    r.macro_accuracy = r.recall_neg;
  }
  return r;
}

namespace {

Tensor window_to_tensor(const DetectorSample& sample) {
  const int t = static_cast<int>(sample.patches.size());
  const int f = sample.patches[0].frames;
  const int m = sample.patches[0].bands;
  Tensor x = Tensor::zeros({t, 1, f, m});
  for (int i = 0; i < t; ++i) {
    std::copy(sample.patches[i].values.begin(), sample.patches[i].values.end(),
              x.data().begin() + static_cast<size_t>(i) * f * m);
  }
  return x;
}

}  // namespace

EvalReport evaluate(DetectorModel& model, const DetectorDataset& test,
                    double threshold) {
  std::vector<int> predicted, targets;
  for (const auto& w : test.windows) {
    Tensor probs = model.forward_window(window_to_tensor(w));
    for (int i = 0; i < probs.size(); ++i) {
      predicted.push_back(probs.data()[i] >= threshold ? 1 : 0);
      targets.push_back(w.targets[i]);
    }
  }
  return score_predictions(predicted, targets);
}

TrainResult train_detector(DetectorModel& model, const DetectorDataset& train,
                           const DetectorDataset& validation,
                           const nn::SgdConfig& cfg) {
  TrainResult result;
  if (cfg.epochs == 0) return result;
  if (train.windows.empty()) {
    throw_input("training.empty", "no training windows");
  }
  BalancedSampler sampler(train.window_classes(), cfg.batch_size, cfg.seed);
  nn::SgdOptimizer opt(model.params(), cfg.learning_rate, cfg.momentum);

  std::vector<std::vector<double>> best_params = model.params().snapshot_values();
  double best_macro = -1.0;
  int best_epoch = 0;

  for (int epoch = 1; epoch <= cfg.epochs; ++epoch) {
    opt.set_learning_rate(cfg.learning_rate *
                          std::pow(cfg.lr_decay, epoch - 1));
    double loss_sum = 0.0;
    int batch_count = 0;
    for (const auto& batch : sampler.epoch()) {
      model.params().zero_grad();
      std::vector<Tensor> prob_rows;
      std::vector<int> targets;
      for (int idx : batch) {
        const auto& w = train.windows[idx];
        Tensor probs = model.forward_window(window_to_tensor(w));
        prob_rows.push_back(
            nn::reshape(probs, {1, static_cast<int>(w.targets.size())}));
        targets.insert(targets.end(), w.targets.begin(), w.targets.end());
      }
      Tensor all_probs = prob_rows.size() == 1 ? prob_rows[0]
                                               : nn::concat_cols(prob_rows);
      nn::BceResult bce = nn::bce_loss(all_probs, targets);
      Tensor loss = nn::scale(weighted_loss(bce),
                              1.0 / (bce.num_pos + bce.num_neg));
      if (!std::isfinite(loss.item())) {
        throw_divergence("training.non_finite_loss",
                         "epoch " + std::to_string(epoch));
      }
      loss.backward();
      opt.step();
      loss_sum += loss.item();
      ++batch_count;
    }
    EpochLog log;
    log.epoch = epoch;
    log.train_loss = batch_count ? loss_sum / batch_count : 0.0;
    log.val_macro = validation.windows.empty()
                        ? 0.0
                        : evaluate(model, validation).macro_accuracy;
    result.log.push_back(log);
    if (log.val_macro > best_macro) {
      best_macro = log.val_macro;
      best_epoch = epoch;
      best_params = model.params().snapshot_values();
    }
  }
  model.params().restore_values(best_params);
  result.best_val_macro = best_macro;
  result.best_epoch = best_epoch;
  return result;
}

ExperimentConfig load_experiment_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw_input("training.config_missing", path);
  nlohmann::json j;
  try {
    in >> j;
  } catch (const std::exception& e) {
    throw_input("training.config_parse", e.what());
  }
  ExperimentConfig cfg;
  if (j.contains("radii")) cfg.radii = j["radii"].get<std::vector<int>>();
  if (j.contains("train_thresholds")) {
    cfg.train_thresholds = j["train_thresholds"].get<std::vector<int>>();
  }
  if (j.contains("test_thresholds")) {
    cfg.test_thresholds = j["test_thresholds"].get<std::vector<int>>();
  }
  if (j.contains("seed")) cfg.seed = j["seed"].get<uint64_t>();
  if (j.contains("epochs")) cfg.epochs = j["epochs"].get<int>();
  if (j.contains("batch_size")) cfg.batch_size = j["batch_size"].get<int>();
  if (j.contains("lr")) cfg.learning_rate = j["lr"].get<double>();
  if (j.contains("momentum")) cfg.momentum = j["momentum"].get<double>();
  if (j.contains("lr_decay")) cfg.lr_decay = j["lr_decay"].get<double>();
  if (j.contains("train_fraction")) {
    cfg.train_fraction = j["train_fraction"].get<double>();
  }
  if (j.contains("val_fraction")) {
    cfg.val_fraction = j["val_fraction"].get<double>();
  }
  if (j.contains("grid_radius")) cfg.grid_radius = j["grid_radius"].get<int>();
  if (j.contains("encoder_channels")) {
    cfg.encoder.channels = j["encoder_channels"].get<std::vector<int>>();
  }
  return cfg;
}

namespace {

// Trains once at (radius, train_threshold) and evaluates at each test
// threshold over the held-out time block.
std::vector<GridCell> run_cell(const ExperimentData& data,
                               const ExperimentConfig& cfg, int radius,
                               int train_threshold,
                               const std::vector<int>& test_thresholds) {
  const auto it = data.counts.find(radius);
  if (it == data.counts.end()) {
    throw_input("training.missing_radius",
                "no counts for radius " + std::to_string(radius));
  }
  const std::vector<int>& counts = it->second;
  if (counts.size() != data.features.patches.size()) {
    throw_input("training.misaligned", "counts/features length mismatch");
  }
  auto binarize = [&](int threshold) {
    std::vector<int> t(counts.size());
    for (size_t i = 0; i < counts.size(); ++i) t[i] = counts[i] >= threshold;
    return t;
  };

  const int context = cfg.aggregator.context_seconds;
  DatasetSplit split = time_block_split(
      make_detector_dataset(data.features, binarize(train_threshold), context),
      cfg.train_fraction, cfg.val_fraction);

  DetectorModel model(cfg.encoder, cfg.aggregator, cfg.seed);
  nn::SgdConfig sgd;
  sgd.learning_rate = cfg.learning_rate;
  sgd.momentum = cfg.momentum;
  sgd.lr_decay = cfg.lr_decay;
  sgd.batch_size = cfg.batch_size;
  sgd.epochs = cfg.epochs;
  sgd.seed = cfg.seed;
  train_detector(model, split.train, split.validation, sgd);

  std::vector<GridCell> cells;
  for (int test_threshold : test_thresholds) {
    DatasetSplit eval_split = time_block_split(
        make_detector_dataset(data.features, binarize(test_threshold), context),
        cfg.train_fraction, cfg.val_fraction);
    GridCell cell;
    cell.radius = radius;
    cell.train_threshold = train_threshold;
    cell.test_threshold = test_threshold;
    cell.report = evaluate(model, eval_split.test);
    cells.push_back(cell);
  }
  return cells;
}

}  // namespace

std::vector<GridCell> radius_experiment(const ExperimentData& data,
                                        const ExperimentConfig& cfg,
                                        int threshold) {
  std::vector<GridCell> cells;
  for (int radius : cfg.radii) {
    auto cell = run_cell(data, cfg, radius, threshold, {threshold});
    cells.insert(cells.end(), cell.begin(), cell.end());
  }
  return cells;
}

std::vector<GridCell> threshold_grid(const ExperimentData& data,
                                     const ExperimentConfig& cfg) {
  std::vector<GridCell> cells;
  for (int train_threshold : cfg.train_thresholds) {
    auto row = run_cell(data, cfg, cfg.grid_radius, train_threshold,
                        cfg.test_thresholds);
    cells.insert(cells.end(), row.begin(), row.end());
  }
  return cells;
}

void write_cells_csv(const std::string& path,
                     const std::vector<GridCell>& cells) {
  std::ofstream out(path);
  if (!out) throw_input("training.write_failed", path);
  out << "radius,train_thr,test_thr,recall_pos,recall_neg,macro_acc,"
         "support_pos,support_neg\n";
  for (const auto& c : cells) {
    out << c.radius << ',' << c.train_threshold << ',' << c.test_threshold
        << ',' << c.report.recall_pos << ',' << c.report.recall_neg << ','
        << c.report.macro_accuracy << ',' << c.report.support_pos << ','
        << c.report.support_neg << '\n';
  }
}

void write_cells_json(const std::string& path,
                      const std::vector<GridCell>& cells) {
  nlohmann::json j = nlohmann::json::array();
  for (const auto& c : cells) {
    j.push_back({{"radius", c.radius},
                 {"train_thr", c.train_threshold},
                 {"test_thr", c.test_threshold},
                 {"recall_pos", c.report.recall_pos},
                 {"recall_neg", c.report.recall_neg},
                 {"macro_acc", c.report.macro_accuracy},
                 {"support_pos", c.report.support_pos},
                 {"support_neg", c.report.support_neg},
                 {"pos_defined", c.report.pos_defined},
                 {"neg_defined", c.report.neg_defined}});
  }
  std::ofstream out(path);
  if (!out) throw_input("training.write_failed", path);
  out << j.dump(2) << '\n';
}

}  // namespace pedsense
