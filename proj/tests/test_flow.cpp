#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <random>
#include <set>

#include "pedsense/error.hpp"
#include "pedsense/flow.hpp"

using namespace pedsense;

namespace {

FlowColumns toy_columns() {
  FlowColumns c;
  c.sensors = {"s1", "s2"};
  c.radii = {1, 3};
  return c;
}

FlowModelConfig toy_model_config() {
  FlowModelConfig cfg;
  cfg.channels = {2, 2, 2, 2};
  cfg.fc_hidden = 4;
  cfg.cols = 5;
  cfg.targets = 4;
  cfg.c_max = 3;
  return cfg;
}

// Full toy grid: count = counts(ts, column), skipping timestamps in `missing`.
std::vector<LabelRecord> grid_records(
    const FlowColumns& cols, int64_t t0, int seconds,
    const std::function<int(int64_t, int)>& counts,
    const std::set<int64_t>& missing = {}) {
  std::vector<LabelRecord> records;
  for (int64_t ts = t0; ts < t0 + seconds; ++ts) {
    if (missing.count(ts)) continue;
    for (size_t s = 0; s < cols.sensors.size(); ++s) {
      for (size_t r = 0; r < cols.radii.size(); ++r) {
        const int c = cols.index(static_cast<int>(s), static_cast<int>(r));
        records.push_back({ts, cols.sensors[s], cols.radii[r], counts(ts, c)});
      }
    }
  }
  return records;
}

void zero_params(FlowModel& model) {
  for (auto& p : model.params().params()) {
    std::fill(p.tensor.data().begin(), p.tensor.data().end(), 0.0);
  }
}

}  // namespace

TEST_CASE("single nonzero count yields one retained window") {
  auto cols = toy_columns();
  auto records = grid_records(cols, 100, 12, [](int64_t ts, int c) {
    return (ts == 103 && c == 0) ? 1 : 0;
  });
  auto set = build_windows(records, cols);
  REQUIRE(set.samples.size() == 1);
  CHECK(set.excluded_all_zero == 0);
  CHECK(set.skipped_gap_positions == 0);
  const auto& s = set.samples[0];
  CHECK(s.window.last_ts == 110);
  CHECK(s.target.ts == 111);
  CHECK(s.window.at(3, 0, cols.total_columns()) == 1.0);
  // Timestamp column carries the Unix timestamp of each row.
  CHECK(s.window.at(0, 4, cols.total_columns()) == 100.0);
  CHECK(s.window.at(10, 4, cols.total_columns()) == 110.0);
  // Target timestamp = last window timestamp + 1 s.
  CHECK(s.target.ts == s.window.last_ts + 1);
}

TEST_CASE("all-zero windows are excluded") {
  auto cols = toy_columns();
  auto records = grid_records(cols, 0, 12, [](int64_t, int) { return 0; });
  auto set = build_windows(records, cols);
  CHECK(set.samples.empty());
  CHECK(set.excluded_all_zero == 1);
}

TEST_CASE("gaps are skipped and counted") {
  auto cols = toy_columns();
  // 30 seconds with second 14 missing: positions 3..14 span the hole.
  auto records = grid_records(
      cols, 0, 30, [](int64_t ts, int) { return ts % 7 == 0 ? 1 : 0; }, {14});
  auto set = build_windows(records, cols);
  CHECK(set.skipped_gap_positions == 12);
  for (const auto& s : set.samples) {
    const int64_t start = s.window.last_ts - 10;
    CHECK((s.target.ts <= 14 || start >= 15));
  }
}

TEST_CASE("window count matches a brute-force enumeration") {
  auto cols = toy_columns();
  std::mt19937_64 rng(41);
  std::uniform_int_distribution<int> count(0, 2);
  std::bernoulli_distribution drop(0.02);
  std::bernoulli_distribution zero_second(0.7);

  const int64_t t0 = 1600000000;
  const int seconds = 3600;
  std::map<int64_t, std::vector<int>> truth;
  std::set<int64_t> missing;
  for (int64_t ts = t0; ts < t0 + seconds; ++ts) {
    if (drop(rng)) {
      missing.insert(ts);
      continue;
    }
    std::vector<int> row(4, 0);
    if (!zero_second(rng)) {
      for (auto& v : row) v = count(rng);
    }
    truth[ts] = row;
  }
  auto records = grid_records(
      cols, t0, seconds,
      [&](int64_t ts, int c) { return truth.at(ts)[c]; }, missing);
  auto set = build_windows(records, cols);

  // Independent enumeration of the same rules over the observed span.
  const int64_t first = truth.begin()->first;
  const int64_t last = truth.rbegin()->first;
  int64_t expected = 0, expected_skipped = 0, expected_excluded = 0;
  for (int64_t t = first; t + 11 <= last; ++t) {
    bool gap = false;
    for (int64_t s = t; s <= t + 11; ++s) {
      if (missing.count(s)) gap = true;
    }
    if (gap) {
      ++expected_skipped;
      continue;
    }
    bool any = false;
    for (int64_t s = t; s <= t + 10; ++s) {
      for (int v : truth.at(s)) {
        if (v) any = true;
      }
    }
    any ? ++expected : ++expected_excluded;
  }
  CHECK(static_cast<int64_t>(set.samples.size()) == expected);
  CHECK(set.skipped_gap_positions == expected_skipped);
  CHECK(set.excluded_all_zero == expected_excluded);
}

TEST_CASE("split sizes and training-only normalization stats") {
  auto cols = toy_columns();
  std::mt19937_64 rng(3);
  std::uniform_int_distribution<int> count(0, 3);
  auto records = grid_records(cols, 0, 111, [&](int64_t ts, int c) {
    return c == 1 ? 2 : count(rng);  // column 1 held constant
  });
  auto set = build_windows(records, cols);
  REQUIRE(set.samples.size() == 100);
  auto split = split_and_normalize(set.samples, 0.8, 7);
  CHECK(split.train.size() == 80);
  CHECK(split.test.size() == 20);

  // Constant column: std floored, normalized values all ~0.
  CHECK(split.stats.std_dev[1] == 1e-8);
  for (const auto& s : split.train) {
    auto norm = normalized_matrix(s.window, split.stats);
    for (int r = 0; r < kFlowRows; ++r) {
      CHECK(norm[r * 5 + 1] == doctest::Approx(0.0));
    }
  }

  // Non-constant columns renormalize to zero mean, unit std.
  for (int c : {0, 2, 3, 4}) {
    double mean = 0.0, var = 0.0;
    const double n = split.train.size() * kFlowRows;
    for (const auto& s : split.train) {
      auto norm = normalized_matrix(s.window, split.stats);
      for (int r = 0; r < kFlowRows; ++r) mean += norm[r * 5 + c];
    }
    mean /= n;
    for (const auto& s : split.train) {
      auto norm = normalized_matrix(s.window, split.stats);
      for (int r = 0; r < kFlowRows; ++r) {
        var += (norm[r * 5 + c] - mean) * (norm[r * 5 + c] - mean);
      }
    }
    var /= n;
    CHECK(std::abs(mean) < 1e-9);
    CHECK(std::sqrt(var) == doctest::Approx(1.0).epsilon(1e-6));
  }

  CHECK_THROWS_AS(split_and_normalize({set.samples[0]}, 0.8, 1), Error);
}

TEST_CASE("forward scores are softmax rows and deterministic") {
  FlowModel model(toy_model_config(), 5);
  std::mt19937_64 rng(9);
  std::uniform_real_distribution<double> dist(-1.0, 1.0);
  std::vector<double> matrix(11 * 5);
  for (auto& v : matrix) v = dist(rng);

  auto s1 = model.scores(matrix);
  auto s2 = model.scores(matrix);
  REQUIRE(s1.size() == 4);
  for (const auto& row : s1) {
    REQUIRE(row.size() == 4);  // c_max 3 -> classes {0..3}
    double sum = 0.0;
    for (double v : row) {
      CHECK(v >= 0.0);
      sum += v;
    }
    CHECK(sum == doctest::Approx(1.0));
  }
  CHECK(s1 == s2);
}

TEST_CASE("uniform scores break argmax ties toward class 0") {
  FlowModel model(toy_model_config(), 5);
  zero_params(model);
  std::vector<double> matrix(11 * 5, 0.3);
  auto pred = model.predict(matrix);
  CHECK(pred == std::vector<int>(4, 0));
}

TEST_CASE("flow gradients pass finite differences") {
  FlowModel model(toy_model_config(), 17);
  std::mt19937_64 rng(19);
  std::uniform_real_distribution<double> dist(-1.0, 1.0);
  nn::Tensor x = nn::Tensor::zeros({2, 1, 11, 5});
  for (auto& v : x.data()) v = dist(rng);
  std::vector<std::vector<int>> targets{{0, 1}, {2, 3}, {1, 1}, {3, 0}};
  auto forward = [&] {
    nn::Tensor logits = model.forward(x);
    nn::Tensor loss;
    for (int t = 0; t < 4; ++t) {
      nn::Tensor ce = nn::cross_entropy_rows(
          nn::slice_cols(logits, t * 4, (t + 1) * 4), targets[t]);
      loss = loss.defined() ? nn::add(loss, ce) : ce;
    }
    return nn::scale(loss, 0.25);
  };
  CHECK(nn::grad_check(forward, model.params(), 1e-4).passed);
}

TEST_CASE("flow training is deterministic and reduces the loss") {
  auto cols = toy_columns();
  std::mt19937_64 rng(23);
  std::uniform_int_distribution<int> count(0, 3);
  // Structured counts so there is something to learn.
  auto records = grid_records(cols, 0, 120, [&](int64_t ts, int c) {
    return (ts / 4 + c) % 2 ? 1 + static_cast<int>(ts % 2) : 0;
  });
  auto set = build_windows(records, cols);
  auto split = split_and_normalize(set.samples, 0.8, 2);

  nn::SgdConfig cfg;
  cfg.learning_rate = 0.001;
  cfg.epochs = 6;
  cfg.batch_size = 16;
  cfg.seed = 3;

  FlowModel a(toy_model_config(), 7);
  auto log_a = train_flow(a, split.train, split.stats, cfg);
  FlowModel b(toy_model_config(), 7);
  auto log_b = train_flow(b, split.train, split.stats, cfg);
  REQUIRE(log_a.log.size() == 6);
  CHECK(log_a.log.back().train_loss < log_a.log.front().train_loss);
  CHECK(a.params().snapshot_values() == b.params().snapshot_values());

  FlowModel untouched(toy_model_config(), 7);
  auto before = untouched.params().snapshot_values();
  cfg.epochs = 0;
  auto empty_log = train_flow(untouched, split.train, split.stats, cfg);
  CHECK(empty_log.log.empty());
  CHECK(untouched.params().snapshot_values() == before);
}

TEST_CASE("persistence baseline base-rate identities") {
  auto cols = toy_columns();
  // Counts constant within each 12 s stretch: persistence is perfect.
  auto records = grid_records(cols, 0, 40, [](int64_t, int c) { return c; });
  auto set = build_windows(records, cols);
  auto table = persistence_by_boundary(set.samples, cols);
  for (double a : table.accuracy) CHECK(a == 1.0);
  for (int64_t s : table.support) {
    CHECK(s == static_cast<int64_t>(set.samples.size()));
  }
  CHECK(table.mean_accuracy() == doctest::Approx(1.0));
}

TEST_CASE("zeroed model accuracy equals the zero-target base rate") {
  auto cols = toy_columns();
  std::mt19937_64 rng(31);
  std::bernoulli_distribution bit(0.3);
  auto records = grid_records(cols, 0, 80, [&](int64_t ts, int c) {
    return (c == 0 && bit(rng)) ? 1 : (c == 1 ? 1 : 0);
  });
  auto set = build_windows(records, cols);
  auto split = split_and_normalize(set.samples, 0.8, 5);
  FlowModelConfig mc = toy_model_config();
  FlowModel model(mc, 1);
  zero_params(model);  // predicts class 0 everywhere
  auto table = accuracy_by_boundary(model, split.test, split.stats, cols);
  for (int c = 0; c < cols.count_columns(); ++c) {
    int64_t zeros = 0;
    for (const auto& s : split.test) {
      if (std::min(s.target.counts[c], mc.c_max) == 0) ++zeros;
    }
    CHECK(table.accuracy[c] ==
          doctest::Approx(static_cast<double>(zeros) / split.test.size()));
  }
  CHECK(table.mean_accuracy_at_radius(1) >= 0.0);
  CHECK_THROWS_AS(table.mean_accuracy_at_radius(5), Error);
}

TEST_CASE("sliding forecast equals manual unrolling") {
  auto cols = toy_columns();
  std::mt19937_64 rng(37);
  std::uniform_int_distribution<int> count(0, 3);
  auto records = grid_records(cols, 0, 60, [&](int64_t, int) {
    return count(rng);
  });
  auto set = build_windows(records, cols);
  auto split = split_and_normalize(set.samples, 0.8, 11);
  FlowModel model(toy_model_config(), 13);
  nn::SgdConfig cfg;
  cfg.learning_rate = 0.001;
  cfg.epochs = 2;
  cfg.batch_size = 8;
  train_flow(model, split.train, split.stats, cfg);

  std::vector<std::vector<double>> history;
  for (int r = 0; r < 13; ++r) {
    std::vector<double> row(5);
    for (int c = 0; c < 4; ++c) row[c] = count(rng);
    row[4] = 500.0 + r;
    history.push_back(row);
  }

  // H=1 equals a single prediction on the last 11 rows.
  FlowWindow last_window;
  for (size_t r = history.size() - kFlowRows; r < history.size(); ++r) {
    last_window.matrix.insert(last_window.matrix.end(), history[r].begin(),
                              history[r].end());
  }
  auto one = sliding_forecast(model, split.stats, history, 1);
  REQUIRE(one.size() == 1);
  CHECK(one[0] == model.predict(normalized_matrix(last_window, split.stats)));

  // H=5 equals manual unrolling.
  auto five = sliding_forecast(model, split.stats, history, 5);
  std::vector<std::vector<double>> rows(history.end() - kFlowRows,
                                        history.end());
  for (int step = 0; step < 5; ++step) {
    FlowWindow w;
    for (const auto& row : rows) {
      w.matrix.insert(w.matrix.end(), row.begin(), row.end());
    }
    auto pred = model.predict(normalized_matrix(w, split.stats));
    CHECK(five[step] == pred);
    std::vector<double> next(5);
    for (int c = 0; c < 4; ++c) next[c] = pred[c];
    next[4] = rows.back()[4] + 1.0;
    rows.erase(rows.begin());
    rows.push_back(next);
  }

  CHECK_THROWS_AS(
      sliding_forecast(model, split.stats,
                       std::vector<std::vector<double>>(5,
                                                        std::vector<double>(5)),
                       3),
      Error);
}

TEST_CASE("zero-predicting checkpoint keeps an all-zero history fixed") {
  auto cols = toy_columns();
  FlowModel model(toy_model_config(), 3);
  zero_params(model);
  NormalizationStats stats;
  stats.mean.assign(5, 0.0);
  stats.std_dev.assign(5, 1.0);
  std::vector<std::vector<double>> history(11, std::vector<double>(5, 0.0));
  for (int r = 0; r < 11; ++r) history[r][4] = r;
  auto forecast = sliding_forecast(model, stats, history, 4);
  for (const auto& row : forecast) {
    CHECK(row == std::vector<int>(4, 0));
  }
}

TEST_CASE("flow checkpoint round trip with sidecar") {
  auto cols = toy_columns();
  FlowModel model(toy_model_config(), 21);
  NormalizationStats stats;
  stats.mean = {0.1, 0.2, 0.3, 0.4, 500.0};
  stats.std_dev = {1.0, 2.0, 3.0, 4.0, 100.0};
  save_flow("/tmp/pedsense_flow_ckpt.bin", model, stats, cols);

  FlowModel other(toy_model_config(), 99);
  NormalizationStats stats2;
  FlowColumns cols2;
  load_flow("/tmp/pedsense_flow_ckpt.bin", other, stats2, cols2);
  CHECK(stats2.mean == stats.mean);
  CHECK(cols2.sensors == cols.sensors);
  CHECK(cols2.radii == cols.radii);
  auto a = model.params().snapshot_values();
  auto b = other.params().snapshot_values();
  REQUIRE(a.size() == b.size());
  for (size_t i = 0; i < a.size(); ++i) {
    for (size_t j = 0; j < a[i].size(); ++j) {
      CHECK(b[i][j] == doctest::Approx(a[i][j]).epsilon(1e-6));
    }
  }
}
