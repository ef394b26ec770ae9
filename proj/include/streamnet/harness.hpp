#pragma once

#include <chrono>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "streamnet/dataio.hpp"
#include "streamnet/error.hpp"
#include "streamnet/imaging.hpp"
#include "streamnet/model.hpp"
#include "streamnet/optim.hpp"
#include "streamnet/rng.hpp"

// Experiment runner: train for E epochs on clean data, after each epoch
// evaluate test accuracy at every configured noise level (0.0 = clean),
// append metrics records, keep a checkpoint per epoch.

namespace streamnet::harness {

// Seed derivation salts. Every random stream of a run comes from the master
// seed through these, so a config reproduces bit-identically.
inline constexpr std::uint64_t kSaltInit = 1;      // weight initialization
inline constexpr std::uint64_t kSaltShuffle = 2;   // epoch shuffles (then by epoch)
inline constexpr std::uint64_t kSaltNoise = 3;     // noise realizations (then by level*10)
inline constexpr std::uint64_t kSaltSubsetTrain = 4;
inline constexpr std::uint64_t kSaltSubsetTest = 5;

struct DatasetConfig {
  std::string kind;  // "cifar10" | "sndt" | "synth"
  std::string path;                    // cifar10 batch directory
  std::string train_path, test_path;   // sndt containers
  std::size_t classes = 4, per_class = 10, side = 32;  // synth
  std::uint64_t synth_seed = 1;
  std::size_t train_subset = 0, test_subset = 0;  // 0 = use everything
};

struct ModelConfig {
  std::string variant;  // "simple" | "wide" | "streaming"
  std::size_t streams = 5;
  bool include_full_band_stream = false;  // extra whole-image stream
  std::size_t final_conv_filters = 0;     // 0 = dataset default (10 for cifar10, else 4)
  std::size_t width_multiplier = 0;       // 0 = variant default (simple 1, wide 5)
  std::vector<std::size_t> hidden_dense;
};

struct ExperimentConfig {
  DatasetConfig dataset;
  ModelConfig model;
  AdamConfig adam;
  std::size_t epochs = 100;
  std::size_t batch_size = 64;
  std::vector<double> noise_levels;  // subset of {0.0, 0.1, ..., 0.9}; 0.0 = clean
  std::uint64_t seed = 1;
  std::string output_dir;

  void validate() const {
    if (epochs < 1) throw ConfigError("epochs must be >= 1");
    if (batch_size < 1) throw ConfigError("batch_size must be >= 1");
    if (noise_levels.empty()) throw ConfigError("noise_levels must not be empty");
    for (double r : noise_levels) {
      const double tenths = r * 10.0;
      if (!(r >= 0.0 && r <= 0.9) || std::abs(tenths - std::round(tenths)) > 1e-9) {
        throw ConfigError("noise level " + std::to_string(r) +
                          " is not in {0.0, 0.1, ..., 0.9}");
      }
    }
    adam.validate();
    if (model.variant != "simple" && model.variant != "wide" &&
        model.variant != "streaming") {
      throw ConfigError("model.variant must be simple, wide, or streaming");
    }
    if (dataset.kind != "cifar10" && dataset.kind != "sndt" && dataset.kind != "synth") {
      throw ConfigError("dataset.kind must be cifar10, sndt, or synth");
    }
  }
};

// ---------------------------------------------------------------------------
// Config file parsing. The schema is strict: unknown keys are errors, so a
// typo in a hyperparameter name cannot silently fall back to a default.

namespace detail {

inline void reject_unknown_keys(const nlohmann::json& j,
                                std::initializer_list<const char*> known,
                                const std::string& where) {
  for (const auto& [key, _] : j.items()) {
    bool ok = false;
    for (const char* k : known) {
      if (key == k) { ok = true; break; }
    }
    if (!ok) {
      throw ConfigError("unknown key '" + key + "' in " + where);
    }
  }
}

template <typename T>
void read_if(const nlohmann::json& j, const char* key, T& out) {
  if (j.contains(key)) out = j.at(key).get<T>();
}

}  // namespace detail

inline ExperimentConfig parse_experiment_config(const nlohmann::json& j) {
  ExperimentConfig config;
  detail::reject_unknown_keys(j,
                              {"dataset", "model", "optimizer", "epochs",
                               "batch_size", "noise_levels", "seed", "output_dir"},
                              "config");
  if (!j.contains("dataset") || !j.contains("model")) {
    throw ConfigError("config needs 'dataset' and 'model' sections");
  }

  const auto& d = j.at("dataset");
  detail::reject_unknown_keys(d,
                              {"kind", "path", "train_path", "test_path", "classes",
                               "per_class", "side", "synth_seed", "train_subset",
                               "test_subset"},
                              "dataset");
  config.dataset.kind = d.at("kind").get<std::string>();
  detail::read_if(d, "path", config.dataset.path);
  detail::read_if(d, "train_path", config.dataset.train_path);
  detail::read_if(d, "test_path", config.dataset.test_path);
  detail::read_if(d, "classes", config.dataset.classes);
  detail::read_if(d, "per_class", config.dataset.per_class);
  detail::read_if(d, "side", config.dataset.side);
  detail::read_if(d, "synth_seed", config.dataset.synth_seed);
  detail::read_if(d, "train_subset", config.dataset.train_subset);
  detail::read_if(d, "test_subset", config.dataset.test_subset);

  const auto& m = j.at("model");
  detail::reject_unknown_keys(m,
                              {"variant", "streams", "include_full_band_stream",
                               "final_conv_filters", "width_multiplier",
                               "hidden_dense"},
                              "model");
  config.model.variant = m.at("variant").get<std::string>();
  detail::read_if(m, "streams", config.model.streams);
  detail::read_if(m, "include_full_band_stream", config.model.include_full_band_stream);
  detail::read_if(m, "final_conv_filters", config.model.final_conv_filters);
  detail::read_if(m, "width_multiplier", config.model.width_multiplier);
  detail::read_if(m, "hidden_dense", config.model.hidden_dense);

  if (j.contains("optimizer")) {
    const auto& o = j.at("optimizer");
    detail::reject_unknown_keys(o, {"learning_rate", "beta1", "beta2", "epsilon"},
                                "optimizer");
    detail::read_if(o, "learning_rate", config.adam.learning_rate);
    detail::read_if(o, "beta1", config.adam.beta1);
    detail::read_if(o, "beta2", config.adam.beta2);
    detail::read_if(o, "epsilon", config.adam.epsilon);
  }
  detail::read_if(j, "epochs", config.epochs);
  detail::read_if(j, "batch_size", config.batch_size);
  if (j.contains("noise_levels")) {
    config.noise_levels = j.at("noise_levels").get<std::vector<double>>();
  } else {
    config.noise_levels = {0.0};
  }
  detail::read_if(j, "seed", config.seed);
  detail::read_if(j, "output_dir", config.output_dir);
  config.validate();
  return config;
}

inline ExperimentConfig load_experiment_config(const std::filesystem::path& path) {
  std::ifstream file(path);
  if (!file) throw IoError("cannot open config " + path.string());
  nlohmann::json j;
  try {
    file >> j;
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError("config " + path.string() + ": " + e.what());
  }
  return parse_experiment_config(j);
}

/// Canonical JSON form of a config (defaults filled in, keys sorted).
inline nlohmann::json config_to_json(const ExperimentConfig& c) {
  nlohmann::json j;
  j["dataset"] = {{"kind", c.dataset.kind},
                  {"path", c.dataset.path},
                  {"train_path", c.dataset.train_path},
                  {"test_path", c.dataset.test_path},
                  {"classes", c.dataset.classes},
                  {"per_class", c.dataset.per_class},
                  {"side", c.dataset.side},
                  {"synth_seed", c.dataset.synth_seed},
                  {"train_subset", c.dataset.train_subset},
                  {"test_subset", c.dataset.test_subset}};
  j["model"] = {{"variant", c.model.variant},
                {"streams", c.model.streams},
                {"include_full_band_stream", c.model.include_full_band_stream},
                {"final_conv_filters", c.model.final_conv_filters},
                {"width_multiplier", c.model.width_multiplier},
                {"hidden_dense", c.model.hidden_dense}};
  j["optimizer"] = {{"learning_rate", c.adam.learning_rate},
                    {"beta1", c.adam.beta1},
                    {"beta2", c.adam.beta2},
                    {"epsilon", c.adam.epsilon}};
  j["epochs"] = c.epochs;
  j["batch_size"] = c.batch_size;
  j["noise_levels"] = c.noise_levels;
  j["seed"] = c.seed;
  j["output_dir"] = c.output_dir;
  return j;
}

/// FNV-1a 64-bit hash of the canonical serialized config, as a hex string.
inline std::string config_fingerprint(const ExperimentConfig& c) {
  const std::string dump = config_to_json(c).dump();
  std::uint64_t hash = 0xcbf29ce484222325ull;
  for (unsigned char byte : dump) {
    hash ^= byte;
    hash *= 0x100000001b3ull;
  }
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(hash));
  return std::string(buf);
}

// ---------------------------------------------------------------------------
// Metrics

struct MetricsRecord {
  std::size_t epoch = 0;   // 1-based
  double noise = 0.0;      // 0.0 = clean
  double accuracy = 0.0;   // correct/total, exact
  double loss = 0.0;       // mean training loss of the epoch
  double seconds = 0.0;    // wall clock of the epoch (excluded from determinism)
  std::string config_fingerprint;
};

inline nlohmann::json record_to_json(const MetricsRecord& r) {
  return {{"epoch", r.epoch},
          {"noise", r.noise},
          {"accuracy", r.accuracy},
          {"loss", r.loss},
          {"seconds", r.seconds},
          {"config_fingerprint", r.config_fingerprint}};
}

inline MetricsRecord record_from_json(const nlohmann::json& j) {
  MetricsRecord r;
  r.epoch = j.at("epoch").get<std::size_t>();
  r.noise = j.at("noise").get<double>();
  r.accuracy = j.at("accuracy").get<double>();
  r.loss = j.at("loss").get<double>();
  r.seconds = j.at("seconds").get<double>();
  r.config_fingerprint = j.at("config_fingerprint").get<std::string>();
  return r;
}

inline std::vector<MetricsRecord> read_metrics(const std::filesystem::path& path) {
  std::ifstream file(path);
  if (!file) throw IoError("cannot open metrics " + path.string());
  std::vector<MetricsRecord> records;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(file, line)) {
    ++line_no;
    if (line.empty()) continue;
    try {
      records.push_back(record_from_json(nlohmann::json::parse(line)));
    } catch (const nlohmann::json::exception& e) {
      throw FormatError("metrics " + path.string() + " line " +
                        std::to_string(line_no) + ": " + e.what());
    }
  }
  return records;
}

// ---------------------------------------------------------------------------
// Evaluation

/// Argmax-of-logits accuracy over a test set. With a NoiseSpec, every image
/// is corrupted under a per-image sub-seed derived from the spec seed and the
/// image id, so the realization is fixed for a given (level seed, dataset).
inline double evaluate(const model::ModelSpec& spec, const model::ModelState& state,
                       std::span<const dataio::Sample> testset,
                       std::optional<imaging::NoiseSpec> noise = std::nullopt,
                       std::size_t eval_batch = 256) {
  if (testset.empty()) throw ConfigError("evaluate: empty test set");
  if (noise) noise->validate();
  std::size_t correct = 0;
  const std::size_t channels = spec.in_channels;
  const std::size_t height = spec.in_height, width = spec.in_width;
  const std::size_t image_size = channels * height * width;
  for (std::size_t start = 0; start < testset.size(); start += eval_batch) {
    const std::size_t n = std::min(eval_batch, testset.size() - start);
    Tensor batch({n, channels, height, width});
    for (std::size_t i = 0; i < n; ++i) {
      const dataio::Sample& s = testset[start + i];
      if (s.image.size() != image_size) {
        throw ShapeError("evaluate: sample " + std::to_string(s.id) +
                         " does not match the model input shape");
      }
      double* dst = batch.data() + i * image_size;
      for (std::size_t j = 0; j < image_size; ++j) {
        dst[j] = static_cast<double>(s.image[j]) / 255.0;
      }
      if (noise && noise->ratio > 0.0) {
        imaging::NoiseSpec per_image{noise->ratio, derive_seed(noise->seed, s.id)};
        for (std::size_t loc : imaging::corruption_mask(per_image, height, width)) {
          for (std::size_t c = 0; c < channels; ++c) {
            dst[c * height * width + loc] = 0.0;
          }
        }
      }
    }
    const Tensor logits = model::forward(spec, state, batch);
    const std::size_t classes = logits.dim(1);
    for (std::size_t i = 0; i < n; ++i) {
      const double* row = logits.data() + i * classes;
      std::size_t best = 0;
      for (std::size_t k = 1; k < classes; ++k) {
        if (row[k] > row[best]) best = k;
      }
      if (best == testset[start + i].label) ++correct;
    }
  }
  return static_cast<double>(correct) / static_cast<double>(testset.size());
}

// ---------------------------------------------------------------------------
// Smoothing

/// Centered moving average; windows shrink (clip) at the boundaries so the
/// output length equals the input length. Window must be odd.
inline std::vector<double> moving_average(std::span<const double> series,
                                          std::size_t window = 7) {
  if (window < 1 || window % 2 == 0) {
    throw ConfigError("moving_average: window must be odd and >= 1, got " +
                      std::to_string(window));
  }
  const std::size_t half = window / 2;
  std::vector<double> out(series.size());
  for (std::size_t i = 0; i < series.size(); ++i) {
    const std::size_t lo = i >= half ? i - half : 0;
    const std::size_t hi = std::min(series.size(), i + half + 1);
    double sum = 0.0;
    for (std::size_t j = lo; j < hi; ++j) sum += series[j];
    out[i] = sum / static_cast<double>(hi - lo);
  }
  return out;
}

// ---------------------------------------------------------------------------
// Experiment runner

struct RunResult {
  std::filesystem::path metrics_path;
  std::filesystem::path checkpoint_path;
  model::ModelSpec spec;
  std::vector<MetricsRecord> records;
};

namespace detail {

inline dataio::Dataset load_dataset(const DatasetConfig& d) {
  if (d.kind == "cifar10") return dataio::load_cifar10(d.path);
  if (d.kind == "sndt") {
    return dataio::load_sndt_dataset(d.train_path, d.test_path, "sndt");
  }
  return dataio::synth_dataset(d.classes, d.per_class, d.side, d.synth_seed);
}

inline model::ModelSpec build_model(const ModelConfig& m,
                                    const dataio::DatasetManifest& manifest) {
  const std::array<std::size_t, 3> input = {manifest.channels, manifest.height,
                                            manifest.width};
  std::size_t final_filters = m.final_conv_filters;
  if (final_filters == 0) {
    final_filters = manifest.name == "cifar10" ? 10 : 4;
  }
  if (m.variant == "simple" || m.variant == "wide") {
    std::size_t mult = m.width_multiplier;
    if (mult == 0) mult = m.variant == "wide" ? 5 : 1;
    return model::build_simple_convnet(input, manifest.class_count(),
                                       final_filters, mult);
  }
  std::vector<imaging::SliceBand> bands = imaging::make_bands(m.streams);
  if (m.include_full_band_stream) bands.push_back({0.0, 1.1});
  return model::build_streaming_net(input, manifest.class_count(),
                                    std::move(bands), final_filters,
                                    m.hidden_dense);
}

}  // namespace detail

/// Trains per the config (clean data only) and evaluates after each epoch at
/// every configured noise level with one fixed corruption realization per
/// level. Metrics are appended record by record (crash-safe); the checkpoint
/// is rewritten at each epoch boundary, so a later abort leaves the last good
/// epoch on disk. `log` (optional) receives one line per epoch.
inline RunResult run_experiment(const ExperimentConfig& config,
                                const std::function<void(const std::string&)>& log = {}) {
  config.validate();
  if (config.output_dir.empty()) throw ConfigError("output_dir must be set");
  const std::filesystem::path out_dir = config.output_dir;
  std::filesystem::create_directories(out_dir);

  dataio::Dataset dataset = detail::load_dataset(config.dataset);
  if (config.dataset.train_subset > 0) {
    dataset.train = dataio::stratified_subset(
        dataset.train, config.dataset.train_subset,
        dataset.manifest.class_count(), derive_seed(config.seed, kSaltSubsetTrain));
  }
  if (config.dataset.test_subset > 0) {
    dataset.test = dataio::stratified_subset(
        dataset.test, config.dataset.test_subset, dataset.manifest.class_count(),
        derive_seed(config.seed, kSaltSubsetTest));
  }

  const model::ModelSpec spec = detail::build_model(config.model, dataset.manifest);
  model::ModelState state = model::init_state(spec, derive_seed(config.seed, kSaltInit));

  const std::string fingerprint = config_fingerprint(config);
  {
    std::ofstream resolved(out_dir / "resolved_config.json", std::ios::trunc);
    nlohmann::json j = config_to_json(config);
    j["fingerprint"] = fingerprint;
    j["dataset_manifest"] = {{"name", dataset.manifest.name},
                             {"classes", dataset.manifest.class_count()},
                             {"train_count", dataset.train.size()},
                             {"test_count", dataset.test.size()}};
    resolved << j.dump(2) << "\n";
  }

  // Sorted, deduplicated noise grid; one fixed realization seed per level.
  std::vector<double> levels = config.noise_levels;
  std::sort(levels.begin(), levels.end());
  levels.erase(std::unique(levels.begin(), levels.end()), levels.end());
  std::map<std::size_t, std::uint64_t> level_seeds;
  for (double level : levels) {
    const auto tenths = static_cast<std::size_t>(std::lround(level * 10.0));
    level_seeds[tenths] = derive_seed(derive_seed(config.seed, kSaltNoise), tenths);
  }

  const std::filesystem::path metrics_path = out_dir / "metrics.jsonl";
  std::ofstream metrics(metrics_path, std::ios::trunc);
  if (!metrics) throw IoError("cannot write " + metrics_path.string());
  const std::filesystem::path checkpoint_path = out_dir / "checkpoint.snet";

  AdamState adam_state;
  std::vector<Tensor*> param_ptrs;
  std::vector<std::string> param_keys;
  for (auto& p : state.params) {
    param_ptrs.push_back(&p.value);
    param_keys.push_back(p.key);
  }

  RunResult result{metrics_path, checkpoint_path, spec, {}};
  const std::uint64_t shuffle_base = derive_seed(config.seed, kSaltShuffle);

  for (std::size_t epoch = 1; epoch <= config.epochs; ++epoch) {
    const auto epoch_start = std::chrono::steady_clock::now();
    double loss_sum = 0.0;
    std::size_t loss_count = 0;

    const auto batches = dataio::shuffle_and_batch(
        dataset.train.size(), config.batch_size, derive_seed(shuffle_base, epoch));
    for (const auto& batch_indices : batches) {
      dataio::Batch batch = dataio::make_batch(
          dataset.train, batch_indices, spec.in_channels, spec.in_height,
          spec.in_width);
      if (batch.corrupted) {
        throw Error("harness", "training batch is flagged corrupted; training must see clean data only");
      }
      model::ForwardPass fp = model::build_forward(spec, state, batch.images);
      Graph::SoftmaxLoss sm = fp.graph.softmax_cross_entropy(fp.logits, batch.labels);
      const double loss = fp.graph.value(sm.loss)[0];
      if (!std::isfinite(loss)) {
        throw NumericError("non-finite training loss at epoch " +
                           std::to_string(epoch) + "; last good checkpoint: " +
                           checkpoint_path.string());
      }
      loss_sum += loss * static_cast<double>(batch.labels.size());
      loss_count += batch.labels.size();
      fp.graph.backward(sm.loss);
      std::vector<Tensor> grads;
      grads.reserve(fp.param_nodes.size());
      for (NodeId id : fp.param_nodes) grads.push_back(fp.graph.grad(id));
      adam_step(config.adam, adam_state, param_ptrs, grads, param_keys);
    }
    const double mean_loss = loss_sum / static_cast<double>(loss_count);

    model::save_checkpoint(spec, state, checkpoint_path);

    std::string log_line = "epoch " + std::to_string(epoch) +
                           " loss " + std::to_string(mean_loss);
    const auto epoch_seconds = [&epoch_start] {
      return std::chrono::duration<double>(std::chrono::steady_clock::now() -
                                           epoch_start).count();
    };
    for (double level : levels) {
      const auto tenths = static_cast<std::size_t>(std::lround(level * 10.0));
      std::optional<imaging::NoiseSpec> noise;
      if (tenths > 0) {
        noise = imaging::NoiseSpec{level, level_seeds[tenths]};
      }
      MetricsRecord record;
      record.epoch = epoch;
      record.noise = level;
      record.accuracy = evaluate(spec, state, dataset.test, noise);
      record.loss = mean_loss;
      record.seconds = epoch_seconds();
      record.config_fingerprint = fingerprint;
      metrics << record_to_json(record).dump() << "\n";
      metrics.flush();
      result.records.push_back(record);
      char acc[32];
      std::snprintf(acc, sizeof acc, " acc@%.1f %.4f", level, record.accuracy);
      log_line += acc;
    }
    if (log) log(log_line);
  }
  return result;
}

// ---------------------------------------------------------------------------
// Plot and CSV emission. The SVG is a pure function of the CSV table:
// re-rendering a parsed CSV reproduces the bytes.

struct CurveTable {
  // rows sorted by (noise asc, epoch asc); smooth values are the 7-point
  // moving average within each noise level's series
  struct Row {
    std::size_t epoch;
    double noise;
    double accuracy;
    double accuracy_smooth7;
    double loss;
  };
  std::vector<Row> rows;
};

inline CurveTable curve_table_from_records(std::vector<MetricsRecord> records) {
  if (records.empty()) throw FormatError("plot: no metrics records");
  std::stable_sort(records.begin(), records.end(),
                   [](const MetricsRecord& a, const MetricsRecord& b) {
                     if (a.noise != b.noise) return a.noise < b.noise;
                     return a.epoch < b.epoch;
                   });
  CurveTable table;
  std::size_t start = 0;
  while (start < records.size()) {
    std::size_t end = start;
    while (end < records.size() && records[end].noise == records[start].noise) ++end;
    std::vector<double> series;
    for (std::size_t i = start; i < end; ++i) series.push_back(records[i].accuracy);
    const std::vector<double> smooth = moving_average(series, 7);
    for (std::size_t i = start; i < end; ++i) {
      table.rows.push_back({records[i].epoch, records[i].noise,
                            records[i].accuracy, smooth[i - start],
                            records[i].loss});
    }
    start = end;
  }
  return table;
}

namespace detail {

inline std::string format_double(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

inline double parse_double(const std::string& s, const char* what) {
  try {
    std::size_t used = 0;
    const double v = std::stod(s, &used);
    if (used != s.size()) throw std::invalid_argument(s);
    return v;
  } catch (const std::exception&) {
    throw FormatError(std::string("csv: bad ") + what + " value '" + s + "'");
  }
}

}  // namespace detail

inline std::string curve_table_to_csv(const CurveTable& table) {
  std::string out = "epoch,noise,accuracy,accuracy_smooth7,loss\n";
  for (const auto& row : table.rows) {
    out += std::to_string(row.epoch);
    out += ',';
    out += detail::format_double(row.noise);
    out += ',';
    out += detail::format_double(row.accuracy);
    out += ',';
    out += detail::format_double(row.accuracy_smooth7);
    out += ',';
    out += detail::format_double(row.loss);
    out += '\n';
  }
  return out;
}

inline CurveTable curve_table_from_csv(const std::string& csv) {
  CurveTable table;
  std::size_t pos = 0;
  bool header = true;
  while (pos < csv.size()) {
    std::size_t eol = csv.find('\n', pos);
    if (eol == std::string::npos) eol = csv.size();
    const std::string line = csv.substr(pos, eol - pos);
    pos = eol + 1;
    if (line.empty()) continue;
    if (header) {
      if (line != "epoch,noise,accuracy,accuracy_smooth7,loss") {
        throw FormatError("csv: unexpected header '" + line + "'");
      }
      header = false;
      continue;
    }
    std::vector<std::string> fields;
    std::size_t field_start = 0;
    for (std::size_t i = 0; i <= line.size(); ++i) {
      if (i == line.size() || line[i] == ',') {
        fields.push_back(line.substr(field_start, i - field_start));
        field_start = i + 1;
      }
    }
    if (fields.size() != 5) {
      throw FormatError("csv: expected 5 fields, got " +
                        std::to_string(fields.size()));
    }
    table.rows.push_back({static_cast<std::size_t>(
                              detail::parse_double(fields[0], "epoch")),
                          detail::parse_double(fields[1], "noise"),
                          detail::parse_double(fields[2], "accuracy"),
                          detail::parse_double(fields[3], "accuracy_smooth7"),
                          detail::parse_double(fields[4], "loss")});
  }
  if (table.rows.empty()) throw FormatError("csv: no data rows");
  return table;
}

/// Renders accuracy-vs-epoch curves: per noise level a dotted raw series and
/// a solid 7-point-smoothed series; the clean (0.0) series additionally gets
/// a horizontal mean reference line.
inline std::string render_svg(const CurveTable& table) {
  if (table.rows.empty()) throw FormatError("plot: empty table");
  const double width = 960, height = 600;
  const double ml = 70, mr = 220, mt = 40, mb = 50;
  std::size_t max_epoch = 1;
  for (const auto& r : table.rows) max_epoch = std::max(max_epoch, r.epoch);

  auto sx = [&](double epoch) {
    return ml + (width - ml - mr) * (max_epoch == 1 ? 0.5 : (epoch - 1) / static_cast<double>(max_epoch - 1));
  };
  auto sy = [&](double acc) { return mt + (height - mt - mb) * (1.0 - acc); };

  static const char* kPalette[] = {"#2c7fb8", "#d95f0e", "#31a354", "#756bb1",
                                   "#c51b8a", "#636363", "#1c9099", "#cc4c02",
                                   "#74c476", "#fb6a4a"};
  std::string svg;
  svg += "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" +
         detail::format_double(width) + "\" height=\"" +
         detail::format_double(height) + "\" viewBox=\"0 0 " +
         detail::format_double(width) + " " + detail::format_double(height) + "\">\n";
  svg += "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
  // axes and gridlines at 0.0..1.0
  for (int tick = 0; tick <= 10; ++tick) {
    const double acc = tick / 10.0;
    svg += "<line x1=\"" + detail::format_double(ml) + "\" y1=\"" +
           detail::format_double(sy(acc)) + "\" x2=\"" +
           detail::format_double(width - mr) + "\" y2=\"" +
           detail::format_double(sy(acc)) + "\" stroke=\"#dddddd\"/>\n";
    svg += "<text x=\"" + detail::format_double(ml - 8) + "\" y=\"" +
           detail::format_double(sy(acc) + 4) +
           "\" text-anchor=\"end\" font-size=\"12\">" + detail::format_double(acc) +
           "</text>\n";
  }
  svg += "<text x=\"" + detail::format_double((ml + width - mr) / 2) + "\" y=\"" +
         detail::format_double(height - 12) +
         "\" text-anchor=\"middle\" font-size=\"13\">epoch</text>\n";
  svg += "<text x=\"18\" y=\"" + detail::format_double((mt + height - mb) / 2) +
         "\" font-size=\"13\" transform=\"rotate(-90 18 " +
         detail::format_double((mt + height - mb) / 2) +
         ")\" text-anchor=\"middle\">test accuracy</text>\n";

  // group rows by noise level (already sorted)
  std::size_t start = 0, series_index = 0;
  double legend_y = mt + 10;
  while (start < table.rows.size()) {
    std::size_t end = start;
    while (end < table.rows.size() &&
           table.rows[end].noise == table.rows[start].noise) {
      ++end;
    }
    const char* color = kPalette[series_index % 10];
    const double noise = table.rows[start].noise;

    auto polyline = [&](bool smooth, const char* dash) {
      std::string points;
      for (std::size_t i = start; i < end; ++i) {
        const auto& r = table.rows[i];
        points += detail::format_double(sx(static_cast<double>(r.epoch))) + "," +
                  detail::format_double(sy(smooth ? r.accuracy_smooth7 : r.accuracy)) + " ";
      }
      svg += "<polyline fill=\"none\" stroke=\"" + std::string(color) +
             "\" stroke-width=\"" + (smooth ? "2" : "1") + "\"" +
             (dash[0] ? " stroke-dasharray=\"" + std::string(dash) + "\"" : "") +
             " points=\"" + points + "\"/>\n";
    };
    polyline(false, "2,3");
    polyline(true, "");

    if (noise == 0.0) {
      double mean = 0.0;
      for (std::size_t i = start; i < end; ++i) mean += table.rows[i].accuracy;
      mean /= static_cast<double>(end - start);
      svg += "<line x1=\"" + detail::format_double(ml) + "\" y1=\"" +
             detail::format_double(sy(mean)) + "\" x2=\"" +
             detail::format_double(width - mr) + "\" y2=\"" +
             detail::format_double(sy(mean)) + "\" stroke=\"" + color +
             "\" stroke-width=\"1\" stroke-dasharray=\"8,4\"/>\n";
      svg += "<text x=\"" + detail::format_double(width - mr + 10) + "\" y=\"" +
             detail::format_double(legend_y) + "\" font-size=\"12\" fill=\"" +
             color + "\">mean clean accuracy " + detail::format_double(mean) +
             "</text>\n";
      legend_y += 18;
    }
    char label[64];
    std::snprintf(label, sizeof label, "noise %.1f (raw dotted, smooth solid)", noise);
    svg += "<text x=\"" + detail::format_double(width - mr + 10) + "\" y=\"" +
           detail::format_double(legend_y) + "\" font-size=\"12\" fill=\"" + color +
           "\">" + label + "</text>\n";
    legend_y += 18;

    start = end;
    ++series_index;
  }
  svg += "</svg>\n";
  return svg;
}

/// Reads a metrics JSONL file and writes `<out>.svg`-style plot plus a CSV
/// mirroring the plotted numbers exactly (same stem, .csv extension).
inline void emit_plot(const std::filesystem::path& metrics_path,
                      const std::filesystem::path& out_svg) {
  const std::vector<MetricsRecord> records = read_metrics(metrics_path);
  if (records.empty()) {
    throw FormatError("plot: metrics file " + metrics_path.string() + " is empty");
  }
  const CurveTable table = curve_table_from_records(records);
  const std::string csv = curve_table_to_csv(table);
  const std::string svg = render_svg(curve_table_from_csv(csv));

  std::filesystem::path csv_path = out_svg;
  csv_path.replace_extension(".csv");
  std::ofstream csv_file(csv_path, std::ios::trunc | std::ios::binary);
  if (!csv_file) throw IoError("cannot write " + csv_path.string());
  csv_file << csv;
  std::ofstream svg_file(out_svg, std::ios::trunc | std::ios::binary);
  if (!svg_file) throw IoError("cannot write " + out_svg.string());
  svg_file << svg;
}

}  // namespace streamnet::harness
