#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <random>
#include <set>

#include "pedsense/error.hpp"
#include "pedsense/training.hpp"

using namespace pedsense;

namespace {

std::vector<LabelRecord> make_records(const std::vector<int>& counts,
                                      int radius) {
  std::vector<LabelRecord> records;
  for (size_t i = 0; i < counts.size(); ++i) {
    records.push_back({static_cast<int64_t>(i), "s1", radius, counts[i]});
  }
  return records;
}

// Tiny detector footprint so unit tests stay fast.
ConvEncoderConfig tiny_encoder() {
  ConvEncoderConfig cfg;
  cfg.channels = {2, 2, 2, 2, 2, 2};
  cfg.in_frames = 16;
  cfg.in_bands = 16;
  return cfg;
}

AggregatorConfig tiny_aggregator() {
  AggregatorConfig cfg;
  cfg.layers = 1;
  cfg.context_seconds = 4;
  return cfg;
}

// Class-separable toy patches: positives carry a constant offset.
MelSequence toy_sequence(const std::vector<int>& targets, uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> noise(0.0, 0.1);
  MelSequence seq;
  for (size_t i = 0; i < targets.size(); ++i) {
    MelPatch p;
    p.frames = 16;
    p.bands = 16;
    p.values.resize(256);
    for (auto& v : p.values) v = noise(rng) + (targets[i] ? 1.0 : -1.0);
    seq.patches.push_back(std::move(p));
    seq.timestamps.push_back(static_cast<int64_t>(i));
  }
  return seq;
}

}  // namespace

TEST_CASE("binarize_labels thresholds and monotonicity") {
  auto records = make_records({0, 1, 2, 3}, 6);
  CHECK(binarize_labels(records, {2, 1, 6}) == std::vector<int>{0, 0, 1, 1});
  CHECK(binarize_labels(records, {1, 1, 6}) == std::vector<int>{0, 1, 1, 1});
  // Other radii are filtered out.
  CHECK(binarize_labels(records, {1, 1, 3}).empty());

  std::mt19937_64 rng(17);
  std::uniform_int_distribution<int> count(0, 6);
  std::vector<int> counts(500);
  for (auto& c : counts) c = count(rng);
  auto random_records = make_records(counts, 6);
  for (int k = 1; k < 6; ++k) {
    auto lo = binarize_labels(random_records, {k, 1, 6});
    auto hi = binarize_labels(random_records, {k + 1, 1, 6});
    for (size_t i = 0; i < lo.size(); ++i) {
      // positives(k+1) subset of positives(k)
      CHECK(hi[i] <= lo[i]);
    }
  }
}

TEST_CASE("balanced sampler covers the majority exactly once per epoch") {
  std::vector<int> classes(1000, 0);
  for (int i = 0; i < 10; ++i) classes[i] = 1;
  BalancedSampler sampler(classes, 32, 7);
  auto batches = sampler.epoch();
  std::multiset<int> majority_seen;
  for (const auto& b : batches) {
    for (int idx : b) {
      if (classes[idx] == 0) majority_seen.insert(idx);
    }
  }
  CHECK(majority_seen.size() == 990);
  std::set<int> unique(majority_seen.begin(), majority_seen.end());
  CHECK(unique.size() == 990);
}

TEST_CASE("balanced sampler positive fraction near one half") {
  std::vector<int> classes(1000, 0);
  for (int i = 0; i < 10; ++i) classes[i] = 1;
  BalancedSampler sampler(classes, 32, 11);
  int64_t pos = 0, total = 0;
  int batches_counted = 0;
  while (batches_counted < 1000) {
    for (const auto& b : sampler.epoch()) {
      if (batches_counted >= 1000) break;
      for (int idx : b) {
        pos += classes[idx];
        ++total;
      }
      ++batches_counted;
    }
  }
  const double fraction = static_cast<double>(pos) / total;
  CHECK(fraction > 0.45);
  CHECK(fraction < 0.55);
}

TEST_CASE("balanced sampler on an already balanced dataset") {
  std::vector<int> classes(200);
  for (int i = 0; i < 100; ++i) classes[i] = 1;
  BalancedSampler sampler(classes, 20, 3);
  int64_t pos = 0, total = 0;
  for (int e = 0; e < 50; ++e) {
    for (const auto& b : sampler.epoch()) {
      for (int idx : b) {
        pos += classes[idx];
        ++total;
      }
    }
  }
  const double fraction = static_cast<double>(pos) / total;
  CHECK(fraction > 0.45);
  CHECK(fraction < 0.55);
}

TEST_CASE("balanced sampler rejects single-class datasets") {
  CHECK_THROWS_AS(BalancedSampler(std::vector<int>(10, 0), 4, 1), Error);
  CHECK_THROWS_AS(BalancedSampler(std::vector<int>(10, 1), 4, 1), Error);
}

TEST_CASE("lambda weight matches the piecewise definition") {
  CHECK(lambda_weight(0, 5) == 0.0);
  CHECK(lambda_weight(5, 0) == 1.0);
  CHECK(lambda_weight(3, 3) == doctest::Approx(0.5));
  CHECK(lambda_weight(1, 3) == doctest::Approx(0.75));
  // Direct evaluation of the harmonic form over a grid.
  for (int p = 1; p <= 64; ++p) {
    for (int n = 1; n <= 64; ++n) {
      const double direct = (1.0 / p) / ((1.0 / p) + (1.0 / n));
      CHECK(lambda_weight(p, n) == doctest::Approx(direct).epsilon(1e-14));
      CHECK(lambda_weight(p, n) ==
            doctest::Approx(static_cast<double>(n) / (p + n)).epsilon(1e-14));
    }
  }
}

TEST_CASE("weighted loss composes the class sums") {
  nn::Tensor p = nn::Tensor::from_data({4}, {0.8, 0.3, 0.4, 0.9});
  auto bce = nn::bce_loss(p, {1, 0, 0, 0});
  WeightedLossTerms terms;
  nn::Tensor loss = weighted_loss(bce, &terms);
  CHECK(terms.num_pos == 1);
  CHECK(terms.num_neg == 3);
  CHECK(terms.lambda == doctest::Approx(0.75));
  const double pos = -std::log(0.8);
  const double neg = -std::log(0.7) - std::log(0.6) - std::log(0.1);
  CHECK(terms.loss_pos == doctest::Approx(pos));
  CHECK(terms.loss_neg == doctest::Approx(neg));
  CHECK(loss.item() == doctest::Approx(0.75 * pos + 0.25 * neg));
}

TEST_CASE("weighted loss all-negative batch reduces to the negative sum") {
  nn::Tensor p = nn::Tensor::from_data({3}, {0.2, 0.1, 0.4});
  auto bce = nn::bce_loss(p, {0, 0, 0});
  WeightedLossTerms terms;
  nn::Tensor loss = weighted_loss(bce, &terms);
  CHECK(terms.lambda == 0.0);
  CHECK(loss.item() == doctest::Approx(terms.loss_neg));
}

TEST_CASE("dataset windows partition the sequence") {
  std::vector<int> targets(11, 0);
  targets[3] = 1;
  MelSequence seq = toy_sequence(targets, 1);
  DetectorDataset ds = make_detector_dataset(seq, targets, 4);
  REQUIRE(ds.windows.size() == 3);  // 4 + 4 + 3
  CHECK(ds.windows[0].patches.size() == 4);
  CHECK(ds.windows[2].patches.size() == 3);
  CHECK(ds.windows[0].positive);
  CHECK_FALSE(ds.windows[1].positive);
  CHECK(ds.windows[1].start_ts == 4);
}

TEST_CASE("time block split is contiguous and disjoint") {
  std::vector<int> targets(40, 0);
  MelSequence seq = toy_sequence(targets, 2);
  DetectorDataset ds = make_detector_dataset(seq, targets, 4);
  DatasetSplit split = time_block_split(ds, 0.6, 0.2);
  CHECK(split.train.windows.size() == 6);
  CHECK(split.validation.windows.size() == 2);
  CHECK(split.test.windows.size() == 2);
  // Blocks are time-ordered: train < validation < test start timestamps.
  CHECK(split.train.windows.back().start_ts <
        split.validation.windows.front().start_ts);
  CHECK(split.validation.windows.back().start_ts <
        split.test.windows.front().start_ts);
}

TEST_CASE("score_predictions degenerate and exact cases") {
  std::vector<int> targets{1, 1, 0, 0, 0, 0, 0, 0, 0, 0};
  auto perfect = score_predictions(targets, targets);
  CHECK(perfect.recall_pos == 1.0);
  CHECK(perfect.recall_neg == 1.0);
  CHECK(perfect.macro_accuracy == 1.0);

  auto all_neg = score_predictions(std::vector<int>(10, 0), targets);
  CHECK(all_neg.recall_neg == 1.0);
  CHECK(all_neg.recall_pos == 0.0);
  CHECK(all_neg.macro_accuracy == doctest::Approx(0.5));
}

TEST_CASE("score_predictions flags zero-support classes") {
  auto r = score_predictions({0, 1, 0}, {0, 0, 0});
  CHECK_FALSE(r.pos_defined);
  CHECK(r.neg_defined);
  CHECK(r.macro_accuracy == doctest::Approx(r.recall_neg));
}

TEST_CASE("score_predictions equals a brute-force recount") {
  std::mt19937_64 rng(29);
  std::bernoulli_distribution bit(0.3);
  std::vector<int> pred(1000), target(1000);
  for (int i = 0; i < 1000; ++i) {
    pred[i] = bit(rng);
    target[i] = bit(rng);
  }
  auto r = score_predictions(pred, target);
  int64_t tp = 0, fn = 0, tn = 0, fp = 0;
  for (int i = 0; i < 1000; ++i) {
    if (target[i] == 1 && pred[i] == 1) ++tp;
    if (target[i] == 1 && pred[i] == 0) ++fn;
    if (target[i] == 0 && pred[i] == 0) ++tn;
    if (target[i] == 0 && pred[i] == 1) ++fp;
  }
  CHECK(r.tp == tp);
  CHECK(r.fn == fn);
  CHECK(r.tn == tn);
  CHECK(r.fp == fp);
  CHECK(r.recall_pos == doctest::Approx(double(tp) / (tp + fn)));
  CHECK(r.recall_neg == doctest::Approx(double(tn) / (tn + fp)));
}

TEST_CASE("evaluation is prediction-order invariant") {
  std::mt19937_64 rng(5);
  std::bernoulli_distribution bit(0.4);
  std::vector<int> pred(200), target(200);
  for (int i = 0; i < 200; ++i) {
    pred[i] = bit(rng);
    target[i] = bit(rng);
  }
  auto base = score_predictions(pred, target);
  std::vector<int> order(200);
  std::iota(order.begin(), order.end(), 0);
  std::shuffle(order.begin(), order.end(), rng);
  std::vector<int> pred2, target2;
  for (int i : order) {
    pred2.push_back(pred[i]);
    target2.push_back(target[i]);
  }
  auto shuffled = score_predictions(pred2, target2);
  CHECK(base.macro_accuracy == shuffled.macro_accuracy);
  CHECK(base.tp == shuffled.tp);
}

TEST_CASE("zero-epoch training returns the initial parameters") {
  std::vector<int> targets(8, 0);
  targets[0] = targets[4] = 1;
  MelSequence seq = toy_sequence(targets, 3);
  DetectorDataset ds = make_detector_dataset(seq, targets, 4);
  DetectorModel model(tiny_encoder(), tiny_aggregator(), 1);
  auto before = model.params().snapshot_values();
  nn::SgdConfig cfg;
  cfg.epochs = 0;
  auto result = train_detector(model, ds, ds, cfg);
  CHECK(result.log.empty());
  CHECK(model.params().snapshot_values() == before);
}

TEST_CASE("training is deterministic and reduces loss on separable data") {
  std::vector<int> targets(24, 0);
  for (int i : {2, 7, 12, 17, 22}) targets[i] = 1;
  MelSequence seq = toy_sequence(targets, 9);
  DetectorDataset ds = make_detector_dataset(seq, targets, 4);

  nn::SgdConfig cfg;
  cfg.epochs = 5;
  cfg.batch_size = 4;
  cfg.learning_rate = 0.01;
  cfg.seed = 2;

  DetectorModel a(tiny_encoder(), tiny_aggregator(), 1);
  auto log_a = train_detector(a, ds, ds, cfg);
  DetectorModel b(tiny_encoder(), tiny_aggregator(), 1);
  auto log_b = train_detector(b, ds, ds, cfg);
  CHECK(a.params().snapshot_values() == b.params().snapshot_values());
  REQUIRE(log_a.log.size() == 5);
  CHECK(log_a.log.back().train_loss <= log_a.log.front().train_loss);
  CHECK(log_a.log.back().train_loss == log_b.log.back().train_loss);
}

TEST_CASE("best-validation checkpoint is retained") {
  std::vector<int> targets(16, 0);
  for (int i : {1, 9}) targets[i] = 1;
  MelSequence seq = toy_sequence(targets, 13);
  DetectorDataset ds = make_detector_dataset(seq, targets, 4);
  DetectorModel model(tiny_encoder(), tiny_aggregator(), 4);
  nn::SgdConfig cfg;
  cfg.epochs = 4;
  cfg.batch_size = 4;
  cfg.seed = 6;
  auto result = train_detector(model, ds, ds, cfg);
  REQUIRE(!result.log.empty());
  double best = -1.0;
  for (const auto& e : result.log) best = std::max(best, e.val_macro);
  CHECK(result.best_val_macro == doctest::Approx(best));
  // The retained parameters reproduce the best epoch's validation score.
  CHECK(evaluate(model, ds).macro_accuracy == doctest::Approx(best));
}

TEST_CASE("grid helpers emit the right shapes") {
  std::vector<int> counts(40, 0);
  for (int i = 0; i < 40; i += 5) counts[i] = 1 + (i % 3);
  MelSequence seq = toy_sequence(binarize_labels(make_records(counts, 6),
                                                 {1, 1, 6}),
                                 21);
  ExperimentData data;
  data.features = seq;
  for (int r : {1, 3, 6, 9}) data.counts[r] = counts;

  ExperimentConfig cfg;
  cfg.encoder = tiny_encoder();
  cfg.aggregator = tiny_aggregator();
  cfg.epochs = 1;
  cfg.batch_size = 4;
  cfg.train_fraction = 0.6;
  cfg.val_fraction = 0.2;
  cfg.train_thresholds = {1, 2};
  cfg.test_thresholds = {1, 2};

  auto grid = threshold_grid(data, cfg);
  REQUIRE(grid.size() == 4);
  for (const auto& c : grid) {
    CHECK(c.radius == 6);
    CHECK(c.report.macro_accuracy >= 0.0);
    CHECK(c.report.macro_accuracy <= 1.0);
  }

  cfg.radii = {3};
  auto radius_cells = radius_experiment(data, cfg, 1);
  REQUIRE(radius_cells.size() == 1);
  CHECK(radius_cells[0].radius == 3);

  // Identical labels across radii and a shared seed give equal accuracies.
  cfg.radii = {1, 9};
  auto pair_cells = radius_experiment(data, cfg, 1);
  REQUIRE(pair_cells.size() == 2);
  CHECK(pair_cells[0].report.macro_accuracy ==
        doctest::Approx(pair_cells[1].report.macro_accuracy));

  write_cells_csv("/tmp/pedsense_cells.csv", grid);
  write_cells_json("/tmp/pedsense_cells.json", grid);
  std::ifstream csv("/tmp/pedsense_cells.csv");
  std::string header;
  std::getline(csv, header);
  CHECK(header ==
        "radius,train_thr,test_thr,recall_pos,recall_neg,macro_acc,"
        "support_pos,support_neg");
}
