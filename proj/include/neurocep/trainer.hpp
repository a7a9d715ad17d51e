#pragma once

#include <cstdint>
#include <memory>
#include <string>
#include <vector>

#include "neurocep/circuit.hpp"
#include "neurocep/datagen.hpp"
#include "neurocep/engine.hpp"
#include "neurocep/neural.hpp"

namespace ncep {

/// Probabilities of the complex events ce_0..ce_{n-1} at one timestamp,
/// followed by null = 1 - sum.
struct OutcomeDistribution {
  std::vector<double> p;

  std::size_t events() const { return p.size() - 1; }
  double null() const { return p.back(); }
  /// Index of the largest entry, lowest index on ties; events() means null.
  std::size_t argmax() const;
  /// Argmax as a label (kNullLabel for null).
  int label() const;
};

/// Grounded queries happensAt(ce_i, t) for every complex event of a program
/// over one stream. The complex events are listed by the program's
/// `complex_events` directive; the program must declare one neural predicate.
class ComplexEventModel {
 public:
  ComplexEventModel(const Program& program, StreamContext context, bool use_cache = true);

  /// Circuits of all complex-event queries at one timestamp, in relative
  /// coordinates (evaluate with shift = t).
  struct Point {
    std::int64_t t = 0;
    std::vector<std::shared_ptr<const Circuit>> circuits;
    std::vector<std::int64_t> timestamps;  // absolute, sorted: what must be perceived
  };

  Point prepare(std::int64_t t);

  static OutcomeDistribution distribution(const Point& point, const BeliefTable& beliefs);

  const std::vector<std::string>& event_names() const { return names_; }
  std::size_t classes() const { return classes_; }
  const StreamContext& context() const { return solver_.context(); }
  const CircuitCache& cache() const { return cache_; }

 private:
  std::vector<std::string> names_;
  std::size_t classes_ = 0;
  std::uint64_t hash_ = 0;
  bool use_cache_ = true;
  Solver solver_;
  CircuitCache cache_;
};

/// One-off convenience: distribution of every complex event at `t`.
OutcomeDistribution ce_distribution(const Program& program, const StreamContext& context,
                                    const BeliefTable& beliefs, std::int64_t t);

constexpr double kProbabilityFloor = 1e-12;

struct LossResult {
  double value = 0.0;
  std::vector<double> grad;  // d(loss)/d(P(ce_i)), one entry per complex event
};

/// Negative log-likelihood of `label` (kNullLabel for null), with the
/// probability floored at kProbabilityFloor.
LossResult nll_loss(const OutcomeDistribution& dist, int label);

struct TrainConfig {
  int max_epochs = 100;
  int patience = 10;
  double learning_rate = 1e-3;
  std::uint64_t seed = 1;
  std::size_t batch_size = 1;
  std::int64_t window = 2;
  bool timing = false;           // fill the seconds column of the history
  std::string diagnostics_dir;   // where a belief snapshot goes on a numeric abort
  bool verbose = false;
};

/// Patience-based early stopping on a score that should increase.
class EarlyStopping {
 public:
  explicit EarlyStopping(int patience) : patience_(patience) {}

  /// Records one epoch; true if it is a new best (strictly better).
  bool update(double score);
  bool should_stop() const { return stale_ >= patience_; }
  int best_epoch() const { return best_epoch_; }  // 1-based, 0 before any update
  double best_score() const { return best_; }

 private:
  int patience_;
  int epoch_ = 0;
  int best_epoch_ = 0;
  int stale_ = 0;
  double best_ = 0.0;
};

struct EpochRecord {
  int epoch = 0;
  double train_loss = 0.0;
  double val_ce_accuracy = 0.0;
  double val_simple_accuracy = 0.0;
  double seconds = -1.0;  // negative when not measured
};

struct TrainHistory {
  std::vector<EpochRecord> epochs;
  int best_epoch = 0;
};

/// history.csv with columns epoch, train_loss, val_ce_acc, val_simple_acc, seconds.
std::string history_csv(const TrainHistory& history);

struct Metrics {
  double ce_accuracy = 0.0;          // mean per-class recall over the 11 outcomes present
  double natural_ce_accuracy = 0.0;  // fraction of points classified correctly
  double simple_accuracy = 0.0;      // MLP argmax vs true class, over all events
  std::size_t points = 0;
  std::size_t events = 0;
  std::vector<std::vector<std::size_t>> confusion;  // [true][predicted], null last
};

/// Evaluation data: a stream, its labelled points and the grounded circuits.
class EvalSet {
 public:
  EvalSet(const Program& program, const EventStream& stream, std::vector<TrainingPoint> points,
          std::int64_t window);

  const EventStream& stream() const { return stream_; }
  const std::vector<TrainingPoint>& points() const { return points_; }
  const std::vector<Eigen::VectorXd>& inputs() const { return inputs_; }
  const std::vector<ComplexEventModel::Point>& grounded() const { return grounded_; }
  std::size_t classes() const { return classes_; }

 private:
  EventStream stream_;
  std::vector<TrainingPoint> points_;
  std::vector<Eigen::VectorXd> inputs_;
  std::vector<ComplexEventModel::Point> grounded_;
  std::size_t classes_ = 0;
};

Metrics evaluate(const MLPParams& net, const EvalSet& set);

/// Loss of training point `i` of `set`, adding d(loss)/d(parameters) into
/// `grads`. `beliefs` receives the belief table the loss was computed from.
double point_gradient(const MLPParams& params, const EvalSet& set, std::size_t i, MLPParams& grads,
                      BeliefTable* beliefs = nullptr);

struct TrainResult {
  MLPParams best;
  TrainHistory history;
};

/// End-to-end training from complex-event labels. Throws NumericError if the
/// loss becomes non-finite.
TrainResult train(const MLPParams& initial, const EvalSet& train_set,
                  const EvalSet& validation, const TrainConfig& config);

/// Fully supervised reference: trains a fresh network on the true classes of
/// the first `n` events of `train` and returns its accuracy on `test`.
double supervised_probe(const EventStream& train, std::size_t n, const EventStream& test, std::uint64_t seed,
                        int epochs = 30);

}  // namespace ncep
