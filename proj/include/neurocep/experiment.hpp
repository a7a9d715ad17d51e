#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json.hpp>

#include "neurocep/datagen.hpp"
#include "neurocep/trainer.hpp"

namespace ncep {

/// Everything a command needs. `window` and `noise` describe a single run;
/// `windows` and `noises` span a sweep. Replicate r uses seed `seed + r`.
struct ExperimentConfig {
  std::string rules;  // rule file path; empty selects the built-in rules
  std::int64_t window = 2;
  double noise = 0.0;
  std::vector<std::int64_t> windows = {2, 3, 4, 5};
  std::vector<double> noises = {0.0, 0.2, 0.4, 0.6};
  int replicates = 3;
  std::uint64_t seed = 1;
  std::uint64_t model_seed = kDefaultModelSeed;
  double sigma = kDefaultSigma;
  std::array<std::size_t, 3> events = {24000, 3000, 3000};
  std::size_t train_points = 1000;
  int max_epochs = 100;
  int patience = 10;
  double learning_rate = 1e-3;
  std::size_t batch_size = 1;
  bool keep_datasets = false;  // sweeps write dataset files only when set
  bool timing = false;         // fill the seconds column of history.csv
  std::string out = "out";

  /// Throws ValidationError on out-of-range values.
  void check() const;

  DatasetConfig dataset(std::int64_t window, double noise, std::uint64_t seed) const;
  TrainConfig training(std::int64_t window, std::uint64_t seed) const;
  std::vector<std::uint64_t> replicate_seeds() const;
};

nlohmann::json to_json(const ExperimentConfig& config);

/// Overlays the keys present in `j` onto `base`. Unknown keys and wrong
/// types raise ValidationError.
ExperimentConfig config_from_json(const nlohmann::json& j, ExperimentConfig base = {});

/// Reads a JSON config file (IoError / ValidationError).
ExperimentConfig load_config(const std::string& path, ExperimentConfig base = {});

/// Named settings: `base-wN`, `noise-wN-fF`, `sweep-base` (W = 2..5, clean)
/// and `sweep-noise` (W = 2, every noise fraction).
ExperimentConfig apply_preset(std::string_view name, ExperimentConfig base = {});

/// The configured rule file, or the built-in rules.
Program load_rules(const ExperimentConfig& config);

/// Initial network weights for a replicate seed.
MLPParams initial_network(std::uint64_t seed);

/// Writes `text` to `path`, creating parent directories (IoError on failure).
void write_text(const std::string& path, const std::string& text);

// ---------------------------------------------------------------------------
// Single runs

struct RunRecord {
  std::int64_t window = 0;
  double noise = 0.0;
  std::uint64_t seed = 0;
  bool ok = false;
  std::string error;
  Metrics metrics;
  int best_epoch = 0;
  int epochs = 0;
};

/// metrics.csv: header plus one row per record.
std::string metrics_csv(const std::vector<RunRecord>& records);
/// Metrics with the confusion matrix, labelled by outcome name.
nlohmann::json metrics_json(const RunRecord& record, const std::vector<std::string>& outcome_names);

struct TrainOutput {
  TrainResult result;
  std::int64_t window = 0;
  double noise = 0.0;
  std::uint64_t seed = 0;
};

/// Trains on a dataset directory and writes checkpoint.json and history.csv
/// into `out_dir`. Without an explicit seed the dataset's replicate seed is used.
TrainOutput train_on_directory(const Program& program, const std::string& data_dir,
                               const ExperimentConfig& config, std::optional<std::uint64_t> seed,
                               const std::string& out_dir, bool verbose = false);

/// Evaluates a checkpoint on the test split of a dataset directory.
RunRecord evaluate_directory(const Program& program, const std::string& checkpoint,
                             const std::string& data_dir);

/// gen, train and eval in memory for one (window, noise, seed). Writes
/// checkpoint.json, history.csv and metrics.csv under `dir` (plus the
/// dataset when keep_datasets is set). Failures are captured in the record.
RunRecord run_pipeline(const Program& program, const ExperimentConfig& config, std::int64_t window,
                       double noise, std::uint64_t seed, const std::string& dir);

// ---------------------------------------------------------------------------
// Sweeps

struct AggregateRow {
  std::int64_t window = 0;
  double noise = 0.0;
  std::size_t runs = 0;
  double ce_mean = 0.0, ce_std = 0.0;
  double simple_mean = 0.0, simple_std = 0.0;
  double natural_mean = 0.0, natural_std = 0.0;
};

/// Mean and sample standard deviation of the successful runs per
/// (window, noise), ordered by window then noise.
std::vector<AggregateRow> aggregate(const std::vector<RunRecord>& records);

std::string aggregate_csv(const std::vector<AggregateRow>& rows);

/// Whitespace-separated curve data. When several noise fractions are present
/// the x column is the noise fraction and each window is its own block;
/// otherwise x is the window size.
std::string curve_data(const std::vector<AggregateRow>& rows);

/// Runs the cross product windows x noises x replicates under `config.out`
/// and writes runs.csv, aggregate.csv, curve.dat and config.json there.
std::vector<RunRecord> run_sweep(const ExperimentConfig& config, bool verbose = false);

}  // namespace ncep
