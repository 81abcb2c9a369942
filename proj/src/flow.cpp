#include "pedsense/flow.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <map>
#include <numeric>
#include <set>

#include <json.hpp>

#include "pedsense/error.hpp"

namespace pedsense {

using nn::Tensor;

WindowSet build_windows(const std::vector<LabelRecord>& records,
                        const FlowColumns& columns) {
  if (columns.sensors.empty() || columns.radii.empty()) {
    throw_input("flow.bad_columns", "empty sensor roster or radius list");
  }
  std::map<std::string, int> sensor_idx;
  for (size_t i = 0; i < columns.sensors.size(); ++i) {
    sensor_idx[columns.sensors[i]] = static_cast<int>(i);
  }
  std::map<int, int> radius_idx;
  for (size_t i = 0; i < columns.radii.size(); ++i) {
    radius_idx[columns.radii[i]] = static_cast<int>(i);
  }

  const int cc = columns.count_columns();
  std::map<int64_t, std::vector<int>> rows;
  for (const auto& r : records) {
    auto s = sensor_idx.find(r.sensor_id);
    auto rad = radius_idx.find(r.radius_m);
    if (s == sensor_idx.end() || rad == radius_idx.end()) continue;
    auto [it, inserted] = rows.try_emplace(r.timestamp, cc, -1);
    it->second[columns.index(s->second, rad->second)] = r.count;
  }

  // A second counts as present only when its full grid is present.
  std::set<int64_t> present;
  for (const auto& [ts, counts] : rows) {
    if (std::all_of(counts.begin(), counts.end(),
                    [](int c) { return c >= 0; })) {
      present.insert(ts);
    }
  }

  WindowSet out;
  out.columns = columns;
  if (present.empty()) return out;

  const int total = columns.total_columns();
  const int64_t first = *present.begin();
  const int64_t last = *present.rbegin();
  for (int64_t t = first; t + kFlowRows <= last; ++t) {
    bool complete = true;
    for (int64_t s = t; s <= t + kFlowRows; ++s) {
      if (!present.count(s)) {
        complete = false;
        break;
      }
    }
    if (!complete) {
      ++out.skipped_gap_positions;
      continue;
    }
    FlowSample sample;
    sample.window.matrix.resize(static_cast<size_t>(kFlowRows) * total);
    bool any_nonzero = false;
    for (int r = 0; r < kFlowRows; ++r) {
      const auto& counts = rows.at(t + r);
      for (int c = 0; c < cc; ++c) {
        sample.window.matrix[r * total + c] = counts[c];
        if (counts[c] != 0) any_nonzero = true;
      }
      sample.window.matrix[r * total + cc] = static_cast<double>(t + r);
    }
    sample.window.last_ts = t + kFlowRows - 1;
    if (!any_nonzero) {
      ++out.excluded_all_zero;
      continue;
    }
    sample.target.ts = t + kFlowRows;
    sample.target.counts = rows.at(t + kFlowRows);
    out.samples.push_back(std::move(sample));
  }
  return out;
}

FlowSplit split_and_normalize(const std::vector<FlowSample>& samples,
                              double train_ratio, uint64_t seed) {
  const size_t n = samples.size();
  if (n < 2) {
    throw_input("flow.too_few_windows", "need at least 2 windows to split");
  }
  std::vector<size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::mt19937_64 rng(seed);
  std::shuffle(order.begin(), order.end(), rng);

  size_t n_train = static_cast<size_t>(std::llround(train_ratio * n));
  n_train = std::min(std::max<size_t>(n_train, 1), n - 1);

  FlowSplit split;
  for (size_t i = 0; i < n; ++i) {
    (i < n_train ? split.train : split.test).push_back(samples[order[i]]);
  }

  const size_t total = split.train[0].window.matrix.size() / kFlowRows;
  split.stats.mean.assign(total, 0.0);
  split.stats.std_dev.assign(total, 0.0);
  const double count = static_cast<double>(split.train.size() * kFlowRows);
  for (const auto& s : split.train) {
    for (int r = 0; r < kFlowRows; ++r) {
      for (size_t c = 0; c < total; ++c) {
        split.stats.mean[c] += s.window.matrix[r * total + c];
      }
    }
  }
  for (auto& m : split.stats.mean) m /= count;
  for (const auto& s : split.train) {
    for (int r = 0; r < kFlowRows; ++r) {
      for (size_t c = 0; c < total; ++c) {
        const double d = s.window.matrix[r * total + c] - split.stats.mean[c];
        split.stats.std_dev[c] += d * d;
      }
    }
  }
  for (auto& v : split.stats.std_dev) {
    v = std::max(std::sqrt(v / count), 1e-8);
  }
  return split;
}

std::vector<double> normalized_matrix(const FlowWindow& window,
                                      const NormalizationStats& stats) {
  const size_t total = stats.mean.size();
  if (window.matrix.size() != total * kFlowRows) {
    throw_input("flow.shape_mismatch", "window/stats column mismatch");
  }
  std::vector<double> out(window.matrix.size());
  for (int r = 0; r < kFlowRows; ++r) {
    for (size_t c = 0; c < total; ++c) {
      out[r * total + c] =
          (window.matrix[r * total + c] - stats.mean[c]) / stats.std_dev[c];
    }
  }
  return out;
}

FlowModel::FlowModel(FlowModelConfig cfg, uint64_t seed) : cfg_(std::move(cfg)) {
  if (cfg_.channels.size() != 4) {
    throw_input("flow.bad_config", "flow model needs four conv stages");
  }
  std::mt19937_64 rng(seed);
  const int k = cfg_.kernel;
  int c_in = 1;
  for (size_t s = 0; s < cfg_.channels.size(); ++s) {
    const int c_out = cfg_.channels[s];
    const std::string prefix = "conv" + std::to_string(s + 1);
    params_.add(prefix + ".w", {c_out, c_in, k, k}, nn::Init::kaiming_uniform,
                c_in * k * k, c_out, rng);
    params_.add_zeros(prefix + ".b", {c_out});
    c_in = c_out;
  }
  // Padding keeps spatial dims; the single 2x2 pool after conv2 shrinks them.
  const int ph = (cfg_.rows - 2) / 2 + 1;
  const int pw = (cfg_.cols - 2) / 2 + 1;
  const int flat = cfg_.channels.back() * ph * pw;
  params_.add("fc1.w", {flat, cfg_.fc_hidden}, nn::Init::kaiming_uniform, flat,
              cfg_.fc_hidden, rng);
  params_.add_zeros("fc1.b", {cfg_.fc_hidden});
  const int out = cfg_.targets * cfg_.classes();
  params_.add("fc2.w", {cfg_.fc_hidden, out}, nn::Init::xavier_uniform,
              cfg_.fc_hidden, out, rng);
  params_.add_zeros("fc2.b", {out});
}

Tensor FlowModel::forward(const Tensor& x) {
  if (x.shape().size() != 4 || x.shape()[1] != 1 ||
      x.shape()[2] != cfg_.rows || x.shape()[3] != cfg_.cols) {
    throw_input("flow.shape_mismatch",
                "expected [N,1," + std::to_string(cfg_.rows) + "," +
                    std::to_string(cfg_.cols) + "], got " +
                    nn::shape_str(x.shape()));
  }
  const int pad = cfg_.kernel / 2;
  Tensor h = x;
  for (size_t s = 0; s < cfg_.channels.size(); ++s) {
    const std::string prefix = "conv" + std::to_string(s + 1);
    h = nn::relu(nn::conv2d(h, params_.find(prefix + ".w").tensor,
                            params_.find(prefix + ".b").tensor, 1, pad));
    if (s == 1) h = nn::maxpool2d(h, 2, 2);
  }
  const int n = x.shape()[0];
  const int flat = nn::shape_size(h.shape()) / n;
  h = nn::reshape(h, {n, flat});
  h = nn::relu(nn::linear(h, params_.find("fc1.w").tensor,
                          params_.find("fc1.b").tensor));
  return nn::linear(h, params_.find("fc2.w").tensor,
                    params_.find("fc2.b").tensor);
}

std::vector<std::vector<double>> FlowModel::scores(
    const std::vector<double>& matrix) {
  Tensor x = Tensor::from_data({1, 1, cfg_.rows, cfg_.cols}, matrix);
  Tensor logits = forward(x);
  const int classes = cfg_.classes();
  std::vector<std::vector<double>> out(cfg_.targets,
                                       std::vector<double>(classes));
  for (int t = 0; t < cfg_.targets; ++t) {
    double max_logit = logits.data()[t * classes];
    for (int c = 1; c < classes; ++c) {
      max_logit = std::max(max_logit, logits.data()[t * classes + c]);
    }
    double denom = 0.0;
    for (int c = 0; c < classes; ++c) {
      out[t][c] = std::exp(logits.data()[t * classes + c] - max_logit);
      denom += out[t][c];
    }
    for (int c = 0; c < classes; ++c) out[t][c] /= denom;
  }
  return out;
}

std::vector<int> FlowModel::predict(const std::vector<double>& matrix) {
  auto s = scores(matrix);
  std::vector<int> out(cfg_.targets);
  for (int t = 0; t < cfg_.targets; ++t) {
    int best = 0;
    for (int c = 1; c < cfg_.classes(); ++c) {
      if (s[t][c] > s[t][best]) best = c;  // ties keep the smaller index
    }
    out[t] = best;
  }
  return out;
}

FlowTrainResult train_flow(FlowModel& model,
                           const std::vector<FlowSample>& train,
                           const NormalizationStats& stats,
                           const nn::SgdConfig& cfg) {
  FlowTrainResult result;
  if (cfg.epochs == 0) return result;
  if (train.empty()) throw_input("flow.empty", "no training windows");

  const FlowModelConfig& mc = model.config();
  const int classes = mc.classes();
  std::mt19937_64 rng(cfg.seed);
  std::vector<size_t> order(train.size());
  std::iota(order.begin(), order.end(), 0);
  nn::SgdOptimizer opt(model.params(), cfg.learning_rate, cfg.momentum);

  for (int epoch = 1; epoch <= cfg.epochs; ++epoch) {
    std::shuffle(order.begin(), order.end(), rng);
    double loss_sum = 0.0;
    int batches = 0;
    for (size_t begin = 0; begin < order.size();
         begin += static_cast<size_t>(cfg.batch_size)) {
      const size_t end = std::min(order.size(),
                                  begin + static_cast<size_t>(cfg.batch_size));
      const int b = static_cast<int>(end - begin);
      Tensor x = Tensor::zeros({b, 1, mc.rows, mc.cols});
      std::vector<std::vector<int>> targets(mc.targets, std::vector<int>(b));
      for (int i = 0; i < b; ++i) {
        const FlowSample& s = train[order[begin + i]];
        auto norm = normalized_matrix(s.window, stats);
        std::copy(norm.begin(), norm.end(),
                  x.data().begin() + static_cast<size_t>(i) * norm.size());
        for (int t = 0; t < mc.targets; ++t) {
          targets[t][i] = std::min(s.target.counts[t], mc.c_max);
        }
      }
      model.params().zero_grad();
      Tensor logits = model.forward(x);
      Tensor loss;
      for (int t = 0; t < mc.targets; ++t) {
        Tensor ce = nn::cross_entropy_rows(
            nn::slice_cols(logits, t * classes, (t + 1) * classes),
            targets[t]);
        loss = loss.defined() ? nn::add(loss, ce) : ce;
      }
      loss = nn::scale(loss, 1.0 / mc.targets);
      if (!std::isfinite(loss.item())) {
        throw_divergence("flow.non_finite_loss",
                         "epoch " + std::to_string(epoch));
      }
      loss.backward();
      opt.step();
      loss_sum += loss.item();
      ++batches;
    }
    result.log.push_back({epoch, batches ? loss_sum / batches : 0.0});
  }
  return result;
}

double BoundaryTable::mean_accuracy() const {
  double sum = 0.0;
  for (double a : accuracy) sum += a;
  return accuracy.empty() ? 0.0 : sum / accuracy.size();
}

double BoundaryTable::mean_accuracy_at_radius(int radius) const {
  int idx = -1;
  for (size_t i = 0; i < columns.radii.size(); ++i) {
    if (columns.radii[i] == radius) idx = static_cast<int>(i);
  }
  if (idx < 0) throw_input("flow.bad_radius", "radius not in column map");
  double sum = 0.0;
  int n = 0;
  for (size_t s = 0; s < columns.sensors.size(); ++s) {
    sum += accuracy[columns.index(static_cast<int>(s), idx)];
    ++n;
  }
  return n ? sum / n : 0.0;
}

namespace {

BoundaryTable make_table(const FlowColumns& columns) {
  BoundaryTable table;
  table.columns = columns;
  table.accuracy.assign(columns.count_columns(), 0.0);
  table.support.assign(columns.count_columns(), 0);
  return table;
}

void finalize_table(BoundaryTable& table, const std::vector<int64_t>& hits) {
  for (size_t c = 0; c < table.accuracy.size(); ++c) {
    table.accuracy[c] = table.support[c]
                            ? static_cast<double>(hits[c]) / table.support[c]
                            : 0.0;
  }
}

}  // namespace

BoundaryTable accuracy_by_boundary(FlowModel& model,
                                   const std::vector<FlowSample>& test,
                                   const NormalizationStats& stats,
                                   const FlowColumns& columns) {
  BoundaryTable table = make_table(columns);
  std::vector<int64_t> hits(columns.count_columns(), 0);
  const int c_max = model.config().c_max;
  for (const auto& s : test) {
    auto predicted = model.predict(normalized_matrix(s.window, stats));
    for (int c = 0; c < columns.count_columns(); ++c) {
      ++table.support[c];
      if (predicted[c] == std::min(s.target.counts[c], c_max)) ++hits[c];
    }
  }
  finalize_table(table, hits);
  return table;
}

BoundaryTable persistence_by_boundary(const std::vector<FlowSample>& test,
                                      const FlowColumns& columns) {
  BoundaryTable table = make_table(columns);
  std::vector<int64_t> hits(columns.count_columns(), 0);
  const int total = columns.total_columns();
  for (const auto& s : test) {
    for (int c = 0; c < columns.count_columns(); ++c) {
      ++table.support[c];
      const int last = static_cast<int>(
          s.window.matrix[(kFlowRows - 1) * total + c]);
      if (last == s.target.counts[c]) ++hits[c];
    }
  }
  finalize_table(table, hits);
  return table;
}

std::vector<std::vector<int>> sliding_forecast(
    FlowModel& model, const NormalizationStats& stats,
    const std::vector<std::vector<double>>& history, int horizon) {
  if (horizon < 1) throw_input("flow.bad_horizon", "horizon must be >= 1");
  if (static_cast<int>(history.size()) < kFlowRows) {
    throw_input("flow.short_history",
                "need at least " + std::to_string(kFlowRows) + " frames");
  }
  const size_t total = stats.mean.size();
  for (const auto& row : history) {
    if (row.size() != total) {
      throw_input("flow.shape_mismatch", "history row width mismatch");
    }
  }
  std::vector<std::vector<double>> rows(history.end() - kFlowRows,
                                        history.end());
  std::vector<std::vector<int>> out;
  for (int step = 0; step < horizon; ++step) {
    FlowWindow window;
    window.matrix.reserve(kFlowRows * total);
    for (const auto& row : rows) {
      window.matrix.insert(window.matrix.end(), row.begin(), row.end());
    }
    auto counts = model.predict(normalized_matrix(window, stats));
    std::vector<double> next(total);
    for (size_t c = 0; c + 1 < total; ++c) next[c] = counts[c];
    next[total - 1] = rows.back()[total - 1] + 1.0;  // timestamp advances 1 s
    rows.erase(rows.begin());
    rows.push_back(std::move(next));
    out.push_back(std::move(counts));
  }
  return out;
}

void write_boundary_csv(const std::string& path, const BoundaryTable& table) {
  std::ofstream out(path);
  if (!out) throw_input("flow.write_failed", path);
  const auto& cols = table.columns;
  auto header = [&](const char* prefix) {
    out << "sensor";
    for (int r : cols.radii) out << ',' << prefix << "_r" << r;
    out << '\n';
  };
  header("acc");
  for (size_t s = 0; s < cols.sensors.size(); ++s) {
    out << cols.sensors[s];
    for (size_t r = 0; r < cols.radii.size(); ++r) {
      out << ',' << table.accuracy[cols.index(static_cast<int>(s),
                                              static_cast<int>(r))];
    }
    out << '\n';
  }
  header("support");
  for (size_t s = 0; s < cols.sensors.size(); ++s) {
    out << cols.sensors[s];
    for (size_t r = 0; r < cols.radii.size(); ++r) {
      out << ',' << table.support[cols.index(static_cast<int>(s),
                                             static_cast<int>(r))];
    }
    out << '\n';
  }
}

void write_forecast_csv(const std::string& path, const FlowColumns& columns,
                        int64_t first_ts,
                        const std::vector<std::vector<int>>& forecast) {
  std::ofstream out(path);
  if (!out) throw_input("flow.write_failed", path);
  out << "timestamp";
  for (size_t s = 0; s < columns.sensors.size(); ++s) {
    for (int r : columns.radii) {
      out << ',' << columns.sensors[s] << "_r" << r;
    }
  }
  out << '\n';
  for (size_t i = 0; i < forecast.size(); ++i) {
    out << (first_ts + static_cast<int64_t>(i));
    for (int c : forecast[i]) out << ',' << c;
    out << '\n';
  }
}

void save_flow(const std::string& path, const FlowModel& model,
               const NormalizationStats& stats, const FlowColumns& columns) {
  save_checkpoint(path, model.params());
  const FlowModelConfig& cfg = model.config();
  nlohmann::json j{
      {"stats", {{"mean", stats.mean}, {"std", stats.std_dev}}},
      {"columns", {{"sensors", columns.sensors}, {"radii", columns.radii}}},
      {"config",
       {{"channels", cfg.channels},
        {"kernel", cfg.kernel},
        {"fc_hidden", cfg.fc_hidden},
        {"c_max", cfg.c_max},
        {"rows", cfg.rows},
        {"cols", cfg.cols},
        {"targets", cfg.targets}}}};
  std::ofstream out(path + ".json");
  if (!out) throw_input("flow.write_failed", path + ".json");
  out << j.dump(2) << '\n';
}

void load_flow(const std::string& path, FlowModel& model,
               NormalizationStats& stats, FlowColumns& columns) {
  std::ifstream in(path + ".json");
  if (!in) throw_input("flow.sidecar_missing", path + ".json");
  nlohmann::json j;
  try {
    in >> j;
  } catch (const std::exception& e) {
    throw_input("flow.sidecar_parse", e.what());
  }
  stats.mean = j.at("stats").at("mean").get<std::vector<double>>();
  stats.std_dev = j.at("stats").at("std").get<std::vector<double>>();
  columns.sensors = j.at("columns").at("sensors").get<std::vector<std::string>>();
  columns.radii = j.at("columns").at("radii").get<std::vector<int>>();
  const auto& cfg = j.at("config");
  if (cfg.at("channels").get<std::vector<int>>() != model.config().channels ||
      cfg.at("c_max").get<int>() != model.config().c_max ||
      cfg.at("rows").get<int>() != model.config().rows ||
      cfg.at("cols").get<int>() != model.config().cols) {
    throw_input("flow.config_mismatch",
                "checkpoint was written with a different model plan");
  }
  load_checkpoint(path, model.params());
}

}  // namespace pedsense
