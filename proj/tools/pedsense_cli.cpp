#include <chrono>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "pedsense/audio.hpp"
#include "pedsense/detector.hpp"
#include "pedsense/error.hpp"
#include "pedsense/flow.hpp"
#include "pedsense/geometry.hpp"
#include "pedsense/labels.hpp"
#include "pedsense/melspec.hpp"
#include "pedsense/synth.hpp"
#include "pedsense/training.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace pedsense;

namespace {

constexpr const char* kToolkitVersion = "1.0.0";
constexpr int kCheckpointFormatVersion = 1;

uint64_t fnv1a(const std::string& s) {
  uint64_t h = 14695981039346656037ull;
  for (unsigned char c : s) {
    h ^= c;
    h *= 1099511628211ull;
  }
  return h;
}

std::string read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw_input("cli.config_missing", path);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

json load_config(const std::string& path) {
  try {
    return json::parse(read_file(path));
  } catch (const json::exception& e) {
    throw_input("cli.config_parse", e.what());
  }
}

struct RunContext {
  std::string command;
  std::string config_path;
  std::string out_dir = ".";
  int64_t seed_override = -1;  // < 0 means "use the config value"
  std::chrono::steady_clock::time_point started =
      std::chrono::steady_clock::now();
  std::vector<std::string> inputs;
  std::vector<std::string> outputs;

  fs::path out(const std::string& name) {
    fs::create_directories(out_dir);
    fs::path p = fs::path(out_dir) / name;
    outputs.push_back(p.string());
    return p;
  }

  uint64_t seed_or(uint64_t config_seed) const {
    return seed_override >= 0 ? static_cast<uint64_t>(seed_override)
                              : config_seed;
  }

  void write_manifest(uint64_t seed) {
    const double wall =
        std::chrono::duration<double>(std::chrono::steady_clock::now() -
                                      started)
            .count();
    json m{{"command", command},
           {"config_hash", fnv1a(read_file(config_path))},
           {"seed", seed},
           {"inputs", inputs},
           {"outputs", outputs},
           {"wall_time_s", wall},
           {"toolkit_version", kToolkitVersion},
           {"checkpoint_format_version", kCheckpointFormatVersion}};
    fs::create_directories(out_dir);
    std::ofstream out(fs::path(out_dir) / "manifest.json");
    out << m.dump(2) << '\n';
  }
};

std::string require_str(const json& j, const char* key) {
  if (!j.contains(key)) {
    throw_input("cli.config_key", std::string("missing config key: ") + key);
  }
  return j.at(key).get<std::string>();
}

// Per-second counts for one sensor/radius aligned to the feature timeline.
std::vector<int> counts_for(const std::vector<LabelRecord>& records,
                            const std::string& sensor_id, int radius,
                            const std::vector<int64_t>& timestamps) {
  std::map<int64_t, int> by_ts;
  for (const auto& r : records) {
    if (r.sensor_id == sensor_id && r.radius_m == radius) {
      by_ts[r.timestamp] = r.count;
    }
  }
  std::vector<int> counts;
  counts.reserve(timestamps.size());
  for (int64_t ts : timestamps) {
    auto it = by_ts.find(ts);
    if (it == by_ts.end()) {
      throw_input("cli.label_gap",
                  "no label for sensor " + sensor_id + " at " +
                      std::to_string(ts));
    }
    counts.push_back(it->second);
  }
  return counts;
}

ConvEncoderConfig encoder_from_json(const json& j) {
  ConvEncoderConfig cfg;
  if (j.contains("encoder_channels")) {
    cfg.channels = j["encoder_channels"].get<std::vector<int>>();
  }
  return cfg;
}

AggregatorConfig aggregator_from_json(const json& j) {
  AggregatorConfig cfg;
  if (j.contains("context_seconds")) {
    cfg.context_seconds = j["context_seconds"].get<int>();
  }
  return cfg;
}

void save_detector(const std::string& path, DetectorModel& model,
                   const ThresholdConfig& thresholds,
                   const std::string& sensor_id) {
  save_checkpoint(path, model.params());
  const auto& e = model.encoder_config();
  const auto& a = model.aggregator_config();
  json j{{"encoder",
          {{"channels", e.channels},
           {"kernel", e.kernel},
           {"pool_after", e.pool_after},
           {"embedding_dim", e.embedding_dim},
           {"in_frames", e.in_frames},
           {"in_bands", e.in_bands}}},
         {"aggregator",
          {{"layers", a.layers},
           {"heads", a.heads},
           {"model_dim", a.model_dim},
           {"ffn_dim", a.ffn_dim},
           {"context_seconds", a.context_seconds},
           {"positional_encoding", a.positional_encoding}}},
         {"radius", thresholds.radius_m},
         {"train_threshold", thresholds.train_threshold},
         {"sensor_id", sensor_id}};
  std::ofstream out(path + ".json");
  out << j.dump(2) << '\n';
}

DetectorModel load_detector(const std::string& path, ThresholdConfig* thresholds,
                            std::string* sensor_id) {
  std::ifstream in(path + ".json");
  if (!in) throw_input("cli.sidecar_missing", path + ".json");
  json j;
  try {
    in >> j;
  } catch (const json::exception& e) {
    throw_input("cli.sidecar_parse", e.what());
  }
  ConvEncoderConfig e;
  e.channels = j.at("encoder").at("channels").get<std::vector<int>>();
  e.kernel = j.at("encoder").at("kernel").get<int>();
  e.pool_after = j.at("encoder").at("pool_after").get<std::vector<int>>();
  e.embedding_dim = j.at("encoder").at("embedding_dim").get<int>();
  e.in_frames = j.at("encoder").at("in_frames").get<int>();
  e.in_bands = j.at("encoder").at("in_bands").get<int>();
  AggregatorConfig a;
  a.layers = j.at("aggregator").at("layers").get<int>();
  a.heads = j.at("aggregator").at("heads").get<int>();
  a.model_dim = j.at("aggregator").at("model_dim").get<int>();
  a.ffn_dim = j.at("aggregator").at("ffn_dim").get<int>();
  a.context_seconds = j.at("aggregator").at("context_seconds").get<int>();
  a.positional_encoding = j.at("aggregator").at("positional_encoding").get<bool>();
  if (thresholds) {
    thresholds->radius_m = j.at("radius").get<int>();
    thresholds->train_threshold = j.at("train_threshold").get<int>();
    thresholds->test_threshold = thresholds->train_threshold;
  }
  if (sensor_id) *sensor_id = j.at("sensor_id").get<std::string>();
  DetectorModel model(e, a, 0);
  load_checkpoint(path, model.params());
  return model;
}

void write_eval_report(const fs::path& json_path, const fs::path& csv_path,
                       const EvalReport& r) {
  json j{{"recall_pos", r.recall_pos},
         {"recall_neg", r.recall_neg},
         {"macro_accuracy", r.macro_accuracy},
         {"tp", r.tp},
         {"fn", r.fn},
         {"tn", r.tn},
         {"fp", r.fp},
         {"support_pos", r.support_pos},
         {"support_neg", r.support_neg},
         {"pos_defined", r.pos_defined},
         {"neg_defined", r.neg_defined}};
  std::ofstream out(json_path);
  out << j.dump(2) << '\n';
  std::ofstream csv(csv_path);
  csv << "recall_pos,recall_neg,macro_acc,support_pos,support_neg\n"
      << r.recall_pos << ',' << r.recall_neg << ',' << r.macro_accuracy << ','
      << r.support_pos << ',' << r.support_neg << '\n';
}

FlowColumns columns_from_json(const json& j) {
  FlowColumns cols;
  if (!j.contains("sensors")) {
    throw_input("cli.config_key", "missing config key: sensors");
  }
  cols.sensors = j["sensors"].get<std::vector<std::string>>();
  if (j.contains("radii")) cols.radii = j["radii"].get<std::vector<int>>();
  return cols;
}

nn::SgdConfig sgd_from_json(const json& j, const nn::SgdConfig& defaults,
                            uint64_t seed) {
  nn::SgdConfig cfg;
  cfg.learning_rate = j.value("lr", defaults.learning_rate);
  cfg.momentum = j.value("momentum", defaults.momentum);
  cfg.lr_decay = j.value("lr_decay", defaults.lr_decay);
  cfg.batch_size = j.value("batch_size", defaults.batch_size);
  cfg.epochs = j.value("epochs", defaults.epochs);
  cfg.seed = seed;
  return cfg;
}

int cmd_annotate(RunContext& ctx, const json& cfg) {
  const std::string detections_path = require_str(cfg, "detections");
  const std::string calibration_path = require_str(cfg, "calibration");
  const std::string sites_path = require_str(cfg, "sites");
  ctx.inputs = {detections_path, calibration_path, sites_path};

  auto frames = load_detections(detections_path,
                                cfg.value("confidence_threshold", 0.7));
  auto calibrations = load_calibration(calibration_path);
  if (calibrations.empty()) {
    throw_numeric("cli.no_calibration", "calibration file has no cameras");
  }
  CameraCalibration calib = calibrations.front();
  if (cfg.contains("camera_id")) {
    const std::string id = cfg["camera_id"].get<std::string>();
    bool found = false;
    for (const auto& c : calibrations) {
      if (c.camera_id == id) {
        calib = c;
        found = true;
      }
    }
    if (!found) throw_input("cli.unknown_camera", id);
  }
  auto sites = load_sites(sites_path);
  StreamDiagnostics diag;
  auto labels = label_stream(frames, calib, sites, &diag);
  save_labels(ctx.out("labels.csv").string(), labels);
  std::cout << "annotate: " << labels.size() << " label rows, "
            << diag.skipped_boxes << " skipped boxes, " << diag.timestamp_gaps
            << " timestamp gaps\n";
  ctx.write_manifest(0);
  return 0;
}

int cmd_synth(RunContext& ctx, const json& cfg) {
  const std::string scene_path = require_str(cfg, "scene");
  ctx.inputs = {scene_path};
  SceneConfig scene = load_scene_config(scene_path);
  scene.seed = ctx.seed_or(scene.seed);

  auto walkers = generate_walkers(scene);
  auto labels = simulate_counts(scene, walkers);
  save_labels(ctx.out("labels.csv").string(), labels);
  if (cfg.value("render_audio", true)) {
    for (const auto& site : scene.sites) {
      AudioClip clip = render_audio(scene, walkers, site);
      write_wav(ctx.out(site.sensor_id + ".wav").string(), clip);
    }
  }
  std::cout << "synth: " << walkers.size() << " walkers, " << labels.size()
            << " label rows\n";
  ctx.write_manifest(scene.seed);
  return 0;
}

int cmd_train_detector(RunContext& ctx, const json& cfg) {
  const std::string audio_path = require_str(cfg, "audio");
  const std::string labels_path = require_str(cfg, "labels");
  const std::string sensor_id = require_str(cfg, "sensor_id");
  ctx.inputs = {audio_path, labels_path};
  const uint64_t seed = ctx.seed_or(cfg.value("seed", 1));

  ThresholdConfig thresholds;
  thresholds.radius_m = cfg.value("radius", 6);
  thresholds.train_threshold = cfg.value("threshold", 1);

  AudioClip clip = load_wav(audio_path);
  MelSequence features = clip_to_sequence(clip);
  auto records = load_labels(labels_path);
  auto counts = counts_for(records, sensor_id, thresholds.radius_m,
                           features.timestamps);
  std::vector<int> targets(counts.size());
  for (size_t i = 0; i < counts.size(); ++i) {
    targets[i] = counts[i] >= thresholds.train_threshold;
  }

  AggregatorConfig agg = aggregator_from_json(cfg);
  DetectorDataset dataset =
      make_detector_dataset(features, targets, agg.context_seconds);
  DatasetSplit split = time_block_split(dataset, cfg.value("train_fraction", 0.7),
                                        cfg.value("val_fraction", 0.15));

  DetectorModel model(encoder_from_json(cfg), agg, seed);
  nn::SgdConfig sgd = sgd_from_json(cfg, nn::SgdConfig{}, seed);
  TrainResult result = train_detector(model, split.train, split.validation, sgd);

  save_detector(ctx.out("detector.bin").string(), model, thresholds,
                sensor_id);
  ctx.outputs.push_back((fs::path(ctx.out_dir) / "detector.bin.json").string());
  std::ofstream log(ctx.out("train_log.csv"));
  log << "epoch,train_loss,val_macro\n";
  for (const auto& e : result.log) {
    log << e.epoch << ',' << e.train_loss << ',' << e.val_macro << '\n';
  }
  std::cout << "train-detector: best epoch " << result.best_epoch
            << ", validation macro " << result.best_val_macro << '\n';
  ctx.write_manifest(seed);
  return 0;
}

int cmd_eval_detector(RunContext& ctx, const json& cfg) {
  const std::string audio_path = require_str(cfg, "audio");
  const std::string labels_path = require_str(cfg, "labels");
  const std::string checkpoint = require_str(cfg, "checkpoint");
  ctx.inputs = {audio_path, labels_path, checkpoint};

  ThresholdConfig thresholds;
  std::string trained_sensor;
  DetectorModel model = load_detector(checkpoint, &thresholds, &trained_sensor);
  const std::string sensor_id = cfg.value("sensor_id", trained_sensor);
  thresholds.test_threshold =
      cfg.value("threshold", thresholds.train_threshold);

  AudioClip clip = load_wav(audio_path);
  MelSequence features = clip_to_sequence(clip);
  auto records = load_labels(labels_path);
  auto counts =
      counts_for(records, sensor_id, thresholds.radius_m, features.timestamps);
  std::vector<int> targets(counts.size());
  for (size_t i = 0; i < counts.size(); ++i) {
    targets[i] = counts[i] >= thresholds.test_threshold;
  }
  DetectorDataset dataset = make_detector_dataset(
      features, targets, model.aggregator_config().context_seconds);
  EvalReport report = evaluate(model, dataset);
  write_eval_report(ctx.out("eval.json"), ctx.out("eval.csv"), report);
  std::cout << "eval-detector: macro accuracy " << report.macro_accuracy
            << '\n';
  ctx.write_manifest(0);
  return 0;
}

int cmd_grid(RunContext& ctx, const json& cfg) {
  const std::string audio_path = require_str(cfg, "audio");
  const std::string labels_path = require_str(cfg, "labels");
  const std::string sensor_id = require_str(cfg, "sensor_id");
  ctx.inputs = {audio_path, labels_path};

  ExperimentConfig exp = load_experiment_config(ctx.config_path);
  exp.seed = ctx.seed_or(exp.seed);
  exp.encoder = encoder_from_json(cfg);
  exp.aggregator = aggregator_from_json(cfg);

  AudioClip clip = load_wav(audio_path);
  ExperimentData data;
  data.features = clip_to_sequence(clip);
  auto records = load_labels(labels_path);
  const std::vector<int> radii_needed =
      cfg.value("mode", std::string("threshold")) == "radius"
          ? exp.radii
          : std::vector<int>{exp.grid_radius};
  for (int r : radii_needed) {
    data.counts[r] = counts_for(records, sensor_id, r, data.features.timestamps);
  }

  std::vector<GridCell> cells;
  if (cfg.value("mode", std::string("threshold")) == "radius") {
    cells = radius_experiment(data, exp, cfg.value("threshold", 1));
  } else {
    cells = threshold_grid(data, exp);
  }
  write_cells_csv(ctx.out("grid.csv").string(), cells);
  write_cells_json(ctx.out("grid.json").string(), cells);
  std::cout << "grid: " << cells.size() << " cells\n";
  ctx.write_manifest(exp.seed);
  return 0;
}

int cmd_train_flow(RunContext& ctx, const json& cfg) {
  const std::string labels_path = require_str(cfg, "labels");
  ctx.inputs = {labels_path};
  const uint64_t seed = ctx.seed_or(cfg.value("seed", 1));

  FlowColumns columns = columns_from_json(cfg);
  auto records = load_labels(labels_path, columns.radii);
  WindowSet set = build_windows(records, columns);
  if (set.samples.size() < 2) {
    throw_input("cli.too_few_windows", "not enough flow windows to train");
  }
  FlowSplit split =
      split_and_normalize(set.samples, cfg.value("train_ratio", 0.8), seed);

  FlowModelConfig mc;
  if (cfg.contains("channels")) {
    mc.channels = cfg["channels"].get<std::vector<int>>();
  }
  mc.fc_hidden = cfg.value("fc_hidden", mc.fc_hidden);
  mc.c_max = cfg.value("c_max", mc.c_max);
  mc.cols = columns.total_columns();
  mc.targets = columns.count_columns();

  FlowModel model(mc, seed);
  nn::SgdConfig flow_defaults;
  flow_defaults.learning_rate = 0.001;
  flow_defaults.lr_decay = 1.0;
  flow_defaults.batch_size = 32;
  flow_defaults.epochs = 25;
  nn::SgdConfig sgd = sgd_from_json(cfg, flow_defaults, seed);
  FlowTrainResult result = train_flow(model, split.train, split.stats, sgd);

  save_flow(ctx.out("flow.bin").string(), model, split.stats, columns);
  ctx.outputs.push_back((fs::path(ctx.out_dir) / "flow.bin.json").string());
  std::ofstream log(ctx.out("flow_log.csv"));
  log << "epoch,train_loss\n";
  for (const auto& e : result.log) {
    log << e.epoch << ',' << e.train_loss << '\n';
  }
  std::cout << "train-flow: " << set.samples.size() << " windows ("
            << set.excluded_all_zero << " all-zero excluded, "
            << set.skipped_gap_positions << " gap positions skipped)\n";
  ctx.write_manifest(seed);
  return 0;
}

// Rebuilds the model and sidecar state from a flow checkpoint path.
struct LoadedFlow {
  FlowModel model;
  NormalizationStats stats;
  FlowColumns columns;
};

LoadedFlow load_flow_bundle(const std::string& path) {
  std::ifstream in(path + ".json");
  if (!in) throw_input("cli.sidecar_missing", path + ".json");
  json j;
  try {
    in >> j;
  } catch (const json::exception& e) {
    throw_input("cli.sidecar_parse", e.what());
  }
  FlowModelConfig mc;
  mc.channels = j.at("config").at("channels").get<std::vector<int>>();
  mc.kernel = j.at("config").at("kernel").get<int>();
  mc.fc_hidden = j.at("config").at("fc_hidden").get<int>();
  mc.c_max = j.at("config").at("c_max").get<int>();
  mc.rows = j.at("config").at("rows").get<int>();
  mc.cols = j.at("config").at("cols").get<int>();
  mc.targets = j.at("config").at("targets").get<int>();
  LoadedFlow bundle{FlowModel(mc, 0), {}, {}};
  load_flow(path, bundle.model, bundle.stats, bundle.columns);
  return bundle;
}

int cmd_forecast(RunContext& ctx, const json& cfg) {
  const std::string labels_path = require_str(cfg, "labels");
  const std::string checkpoint = require_str(cfg, "checkpoint");
  const int horizon = cfg.value("horizon", 5);
  ctx.inputs = {labels_path, checkpoint};

  LoadedFlow bundle = load_flow_bundle(checkpoint);
  auto records = load_labels(labels_path, bundle.columns.radii);
  WindowSet set = build_windows(records, bundle.columns);
  if (set.samples.empty()) {
    throw_input("cli.too_few_windows", "no complete window in the labels");
  }
  // History = the most recent window's raw rows.
  const FlowSample& last = set.samples.back();
  const int total = bundle.columns.total_columns();
  std::vector<std::vector<double>> history;
  for (int r = 0; r < kFlowRows; ++r) {
    history.emplace_back(last.window.matrix.begin() + r * total,
                         last.window.matrix.begin() + (r + 1) * total);
  }
  auto forecast = sliding_forecast(bundle.model, bundle.stats, history, horizon);
  write_forecast_csv(ctx.out("forecast.csv").string(), bundle.columns,
                     last.window.last_ts + 1, forecast);
  std::cout << "forecast: " << horizon << " steps from "
            << last.window.last_ts << '\n';
  ctx.write_manifest(0);
  return 0;
}

int cmd_flow_report(RunContext& ctx, const json& cfg) {
  const std::string labels_path = require_str(cfg, "labels");
  const std::string checkpoint = require_str(cfg, "checkpoint");
  ctx.inputs = {labels_path, checkpoint};
  const uint64_t seed = ctx.seed_or(cfg.value("seed", 1));

  LoadedFlow bundle = load_flow_bundle(checkpoint);
  auto records = load_labels(labels_path, bundle.columns.radii);
  WindowSet set = build_windows(records, bundle.columns);
  if (set.samples.size() < 2) {
    throw_input("cli.too_few_windows", "not enough flow windows to evaluate");
  }
  // Reproduces the training split so the report covers held-out windows.
  FlowSplit split =
      split_and_normalize(set.samples, cfg.value("train_ratio", 0.8), seed);
  BoundaryTable table = accuracy_by_boundary(bundle.model, split.test,
                                             bundle.stats, bundle.columns);
  BoundaryTable baseline = persistence_by_boundary(split.test, bundle.columns);
  write_boundary_csv(ctx.out("flow_report.csv").string(), table);
  write_boundary_csv(ctx.out("persistence_report.csv").string(), baseline);
  std::cout << "flow-report: mean accuracy " << table.mean_accuracy()
            << " vs persistence " << baseline.mean_accuracy() << '\n';
  ctx.write_manifest(seed);
  return 0;
}

int cmd_stats(RunContext& ctx, const json& cfg) {
  const std::string labels_path = require_str(cfg, "labels");
  ctx.inputs = {labels_path};
  const int radius = cfg.value("radius", 6);
  const int utc_offset = cfg.value("utc_offset_hours", 0);

  auto records = load_labels(labels_path);
  json fractions = json::object();
  for (int r : default_radii()) {
    fractions[std::to_string(r)] = pedestrian_fraction(records, r);
  }
  std::ofstream out(ctx.out("stats.json"));
  out << json{{"pedestrian_fraction", fractions}}.dump(2) << '\n';

  HourlyHistogram hist = hourly_fraction(records, radius, utc_offset);
  std::ofstream csv(ctx.out("hourly.csv"));
  csv << "hour,fraction,support\n";
  for (int h = 0; h < 24; ++h) {
    csv << h << ',' << hist.fraction[h] << ',' << hist.support[h] << '\n';
  }
  std::cout << "stats: fraction at r=" << radius << " is "
            << pedestrian_fraction(records, radius) << '\n';
  ctx.write_manifest(0);
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"pedestrian sensing toolkit"};
  app.set_version_flag("--version",
                       std::string("pedsense ") + kToolkitVersion +
                           " (checkpoint format " +
                           std::to_string(kCheckpointFormatVersion) + ")");

  struct CommandSpec {
    const char* name;
    const char* description;
    int (*run)(RunContext&, const json&);
  };
  const std::vector<CommandSpec> commands{
      {"annotate", "detections + calibration + sites -> label CSV",
       cmd_annotate},
      {"synth", "scene config -> WAV + labels", cmd_synth},
      {"train-detector", "audio + labels -> detector checkpoint",
       cmd_train_detector},
      {"eval-detector", "checkpoint + audio + labels -> recall report",
       cmd_eval_detector},
      {"grid", "threshold/radius experiment grid -> CSV matrix", cmd_grid},
      {"train-flow", "label CSV -> flow checkpoint", cmd_train_flow},
      {"forecast", "flow checkpoint + labels -> multi-step forecast",
       cmd_forecast},
      {"flow-report", "flow checkpoint + labels -> accuracy by boundary",
       cmd_flow_report},
      {"stats", "label CSV -> fractions and hourly histogram", cmd_stats},
  };

  struct ParsedArgs {
    std::string config;
    std::string out = ".";
    int64_t seed = -1;
    int (*run)(RunContext&, const json&) = nullptr;
    const char* name = nullptr;
  } parsed;

  for (const auto& spec : commands) {
    CLI::App* sub = app.add_subcommand(spec.name, spec.description);
    sub->add_option("config", parsed.config, "JSON config file")->required();
    sub->add_option("--out", parsed.out, "output directory");
    sub->add_option("--seed", parsed.seed, "override the config seed");
    sub->callback([&parsed, spec] {
      parsed.run = spec.run;
      parsed.name = spec.name;
    });
  }
  app.require_subcommand(0, 1);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e) == 0 ? 0 : 2;
  }
  if (!parsed.run) {
    std::cerr << app.help();
    return 2;
  }

  RunContext ctx;
  ctx.command = parsed.name;
  ctx.config_path = parsed.config;
  ctx.out_dir = parsed.out;
  ctx.seed_override = parsed.seed;
  try {
    return parsed.run(ctx, load_config(parsed.config));
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << '\n';
    switch (e.kind()) {
      case ErrorKind::input:
        return 2;
      case ErrorKind::numeric:
        return 3;
      case ErrorKind::divergence:
        return 4;
    }
    return 3;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 3;
  }
}
