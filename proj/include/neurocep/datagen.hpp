#pragma once

#include <array>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

namespace ncep {

constexpr std::size_t kFeatureDim = 128;
constexpr int kFeatureMin = 1;
constexpr int kFeatureMax = 255;

/// Complex-event label of one timestamp: a CE class id, or kNullLabel.
constexpr int kNullLabel = -1;
using CELabeling = std::vector<int>;

/// "ce_3" or "null".
std::string label_name(int label);
/// Inverse of label_name. Throws SchemaError.
int parse_label(const std::string& text);

/// Synthetic stand-in for extracted audio features: one centroid per class,
/// spherical Gaussian spread, values rounded and clipped to [1,255].
struct FeatureModel {
  std::vector<std::vector<double>> centroids;
  double sigma = 1.0;

  /// Centroids uniform over [1,255]^dim.
  static FeatureModel make(std::uint64_t seed, double sigma, std::size_t classes = 10,
                           std::size_t dim = kFeatureDim);
  std::size_t classes() const { return centroids.size(); }
};

/// Default spread of the shipped feature model (see README for the calibration).
constexpr double kDefaultSigma = 170.0;
constexpr std::uint64_t kDefaultModelSeed = 20230601;

struct SimpleEvent {
  std::int64_t timestamp = 0;
  std::vector<int> feature;
  std::optional<int> true_class;
};

/// Events with contiguous timestamps 0..size-1.
struct EventStream {
  std::vector<SimpleEvent> events;

  std::size_t size() const { return events.size(); }
  /// True classes in timestamp order. Throws SchemaError if any is missing.
  std::vector<int> classes() const;
};

/// Shuffles `counts[c]` events of every class c into one stream.
EventStream synth_stream(std::span<const std::size_t> counts, const FeatureModel& model, std::uint64_t seed);

/// CE label per timestamp, equal to label_oracle everywhere.
CELabeling label_ce(const EventStream& stream, std::int64_t window);
CELabeling label_ce(std::span<const int> classes, std::int64_t window);

struct NoiseConfig {
  double fraction = 0.0;
  std::uint64_t seed = 0;
};

/// Each non-null label is, with probability `fraction`, replaced by a label
/// drawn uniformly from all `classes` CE classes (the original included).
CELabeling inject_noise(const CELabeling& labeling, const NoiseConfig& config, std::size_t classes = 10);

struct TrainingPoint {
  std::int64_t timestamp = 0;
  int label = kNullLabel;
  bool operator==(const TrainingPoint&) const = default;
};

/// Uniform subsample with classes+1 equally represented label classes (null
/// last). The first total % (classes+1) classes get one extra point.
/// Timestamp 0 is never chosen. Output is sorted by timestamp.
/// Throws BalanceError naming the first deficient class.
std::vector<TrainingPoint> balance(const CELabeling& labeling, std::size_t total, std::uint64_t seed,
                                   std::size_t classes = 10);

struct DatasetConfig {
  std::int64_t window = 2;
  double noise = 0.0;
  std::uint64_t seed = 1;  // replicate seed; split, noise and balance seeds derive from it
  std::uint64_t model_seed = kDefaultModelSeed;
  double sigma = kDefaultSigma;
  std::array<std::size_t, 3> events = {24000, 3000, 3000};
  std::size_t train_points = 1000;
};

/// Seeds actually used for a config, recorded in meta.json.
struct DatasetSeeds {
  std::uint64_t train = 0, validation = 0, test = 0, noise = 0, balance = 0;
};
DatasetSeeds dataset_seeds(const DatasetConfig& config);

struct Split {
  std::string name;
  EventStream stream;           // true classes kept in memory; the train file omits them
  CELabeling clean;             // label_ce of the stream
  std::vector<TrainingPoint> points;  // train: balanced noisy points; others: every timestamp
};

struct Dataset {
  DatasetConfig config;
  Split train, validation, test;
};

/// Three independent streams in the configured size ratio. Training labels
/// are noised and balanced; validation and test keep clean labels.
Dataset make_splits(const DatasetConfig& config);

/// Writes <dir>/{train,validation,test}/{features.csv,labels.csv,meta.json}.
void write_dataset(const std::string& dir, const Dataset& dataset);

/// A split read back from disk. `stream` events carry true classes when the
/// file has them; `points` come from labels.csv.
struct LoadedSplit {
  EventStream stream;
  std::vector<TrainingPoint> points;
  std::int64_t window = 0;
  double noise = 0.0;
  std::uint64_t seed = 0;
  std::vector<std::string> class_names;
};

LoadedSplit read_split(const std::string& dir);

/// Reads a features.csv (our own or a third-party extractor's).
EventStream read_features(const std::string& path);

}  // namespace ncep
