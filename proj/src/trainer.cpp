#include "neurocep/trainer.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <numeric>
#include <set>

#include <nlohmann/json.hpp>

#include "neurocep/error.hpp"
#include "neurocep/random.hpp"

namespace ncep {

std::size_t OutcomeDistribution::argmax() const {
  return static_cast<std::size_t>(std::max_element(p.begin(), p.end()) - p.begin());
}

int OutcomeDistribution::label() const {
  const auto k = argmax();
  return k == events() ? kNullLabel : static_cast<int>(k);
}

// ---------------------------------------------------------------------------
// Grounding

namespace {

std::vector<std::string> complex_event_names(const Program& program) {
  const auto it = program.directives.find("complex_events");
  if (it == program.directives.end() || !it->second.is_list() || it->second.tail())
    throw ValidationError("the rule file needs a ':- complex_events([...]).' directive");
  std::vector<std::string> names;
  for (const auto& t : it->second.args()) {
    if (!t.is_constant()) throw ValidationError("complex_events must list constants");
    names.push_back(t.name());
  }
  if (names.empty()) throw ValidationError("complex_events is empty");
  return names;
}

}  // namespace

ComplexEventModel::ComplexEventModel(const Program& program, StreamContext context, bool use_cache)
    : names_(complex_event_names(program)),
      hash_(program_hash(program)),
      use_cache_(use_cache),
      solver_(program, std::move(context)) {
  if (program.neural.size() != 1) throw ValidationError("exactly one neural predicate is required");
  classes_ = program.neural.front().domain.size();
}

ComplexEventModel::Point ComplexEventModel::prepare(std::int64_t t) {
  Point pt;
  pt.t = t;
  std::set<std::int64_t> stamps;
  for (const auto& name : names_) {
    const Atom query{"happensAt", {Term::constant(name), Term::integer(t)}};
    const auto proofs = solver_.solve(query);
    const auto key = make_circuit_key(hash_, solver_.context().window, query, t, proofs);
    auto circuit = use_cache_ ? cache_.get_or_compile(key)
                              : std::make_shared<const Circuit>(compile(ProofSet{key.relative, key.annotated}));
    for (auto rel : circuit->timestamps()) stamps.insert(rel + t);
    pt.circuits.push_back(std::move(circuit));
  }
  pt.timestamps.assign(stamps.begin(), stamps.end());
  return pt;
}

OutcomeDistribution ComplexEventModel::distribution(const Point& point, const BeliefTable& beliefs) {
  OutcomeDistribution d;
  d.p.reserve(point.circuits.size() + 1);
  double sum = 0.0;
  for (const auto& c : point.circuits) {
    d.p.push_back(c->evaluate(beliefs, point.t));
    sum += d.p.back();
  }
  d.p.push_back(1.0 - sum);
  return d;
}

OutcomeDistribution ce_distribution(const Program& program, const StreamContext& context,
                                    const BeliefTable& beliefs, std::int64_t t) {
  ComplexEventModel model(program, context, false);
  return ComplexEventModel::distribution(model.prepare(t), beliefs);
}

LossResult nll_loss(const OutcomeDistribution& dist, int label) {
  LossResult r;
  const auto n = dist.events();
  r.grad.assign(n, 0.0);
  if (label == kNullLabel) {
    const double p = std::max(dist.null(), kProbabilityFloor);
    r.value = -std::log(p);
    std::fill(r.grad.begin(), r.grad.end(), 1.0 / p);
  } else {
    if (label < 0 || static_cast<std::size_t>(label) >= n) throw ValidationError("label out of range");
    const double p = std::max(dist.p[static_cast<std::size_t>(label)], kProbabilityFloor);
    r.value = -std::log(p);
    r.grad[static_cast<std::size_t>(label)] = -1.0 / p;
  }
  return r;
}

// ---------------------------------------------------------------------------
// Bookkeeping

bool EarlyStopping::update(double score) {
  ++epoch_;
  if (epoch_ == 1 || score > best_) {
    best_ = score;
    best_epoch_ = epoch_;
    stale_ = 0;
    return true;
  }
  ++stale_;
  return false;
}

std::string history_csv(const TrainHistory& history) {
  std::string out = "epoch,train_loss,val_ce_acc,val_simple_acc,seconds\n";
  char buf[160];
  for (const auto& e : history.epochs) {
    std::snprintf(buf, sizeof buf, "%d,%.10f,%.10f,%.10f,", e.epoch, e.train_loss, e.val_ce_accuracy,
                  e.val_simple_accuracy);
    out += buf;
    if (e.seconds >= 0.0) {
      std::snprintf(buf, sizeof buf, "%.3f", e.seconds);
      out += buf;
    }
    out += '\n';
  }
  return out;
}

EvalSet::EvalSet(const Program& program, const EventStream& stream, std::vector<TrainingPoint> points,
                 std::int64_t window)
    : stream_(stream), points_(std::move(points)) {
  ComplexEventModel model(program, StreamContext::contiguous(stream.size(), window));
  classes_ = model.classes();
  if (model.event_names().size() != classes_)
    throw ValidationError("the number of complex events must equal the number of simple-event classes");
  inputs_.reserve(stream.size());
  for (const auto& e : stream.events) inputs_.push_back(scale_features(e.feature));
  grounded_.reserve(points_.size());
  for (const auto& p : points_) grounded_.push_back(model.prepare(p.timestamp));
}

namespace {

std::size_t argmax_of(const Eigen::VectorXd& v) {
  Eigen::Index best = 0;
  for (Eigen::Index i = 1; i < v.size(); ++i) {
    if (v[i] > v[best]) best = i;
  }
  return static_cast<std::size_t>(best);
}

}  // namespace

Metrics evaluate(const MLPParams& net, const EvalSet& set) {
  const auto classes = set.classes();
  if (net.outputs() != classes) throw SchemaError("network outputs do not match the class count");
  const auto n = set.stream().size();
  BeliefTable beliefs(0, n, classes);
  Metrics m;
  std::size_t simple_hits = 0;
  for (std::size_t t = 0; t < n; ++t) {
    const auto y = predict(net, set.inputs()[t]);
    std::copy(y.data(), y.data() + y.size(), beliefs.row(static_cast<std::int64_t>(t)).begin());
    if (const auto& c = set.stream().events[t].true_class) {
      ++m.events;
      simple_hits += argmax_of(y) == static_cast<std::size_t>(*c);
    }
  }
  m.confusion.assign(classes + 1, std::vector<std::size_t>(classes + 1, 0));
  std::size_t hits = 0;
  for (std::size_t i = 0; i < set.points().size(); ++i) {
    const auto dist = ComplexEventModel::distribution(set.grounded()[i], beliefs);
    const auto predicted = dist.argmax();
    const int label = set.points()[i].label;
    const auto truth = label == kNullLabel ? classes : static_cast<std::size_t>(label);
    ++m.confusion[truth][predicted];
    hits += truth == predicted;
  }
  m.points = set.points().size();
  double recall_sum = 0.0;
  std::size_t present = 0;
  for (std::size_t k = 0; k <= classes; ++k) {
    const auto total = std::accumulate(m.confusion[k].begin(), m.confusion[k].end(), std::size_t{0});
    if (total == 0) continue;
    ++present;
    recall_sum += static_cast<double>(m.confusion[k][k]) / static_cast<double>(total);
  }
  m.ce_accuracy = present ? recall_sum / static_cast<double>(present) : 0.0;
  m.natural_ce_accuracy = m.points ? static_cast<double>(hits) / static_cast<double>(m.points) : 0.0;
  m.simple_accuracy = m.events ? static_cast<double>(simple_hits) / static_cast<double>(m.events) : 0.0;
  return m;
}

// ---------------------------------------------------------------------------
// Training

namespace {

std::string snapshot_beliefs(const std::string& dir, int epoch, std::size_t point, const BeliefTable& b) {
  if (dir.empty()) return "(no diagnostics directory configured)";
  namespace fs = std::filesystem;
  std::error_code ec;
  fs::create_directories(dir, ec);
  const auto path = (fs::path(dir) / ("nonfinite_epoch" + std::to_string(epoch) + "_point" +
                                      std::to_string(point) + ".json"))
                        .string();
  nlohmann::json j;
  j["first"] = b.first;
  j["classes"] = b.classes;
  j["data"] = b.data;
  std::ofstream f(path);
  f << j.dump(2) << '\n';
  return path;
}

void scale(MLPParams& g, double s) {
  for (auto& w : g.weights) w *= s;
  for (auto& b : g.biases) b *= s;
}

}  // namespace

double point_gradient(const MLPParams& params, const EvalSet& set, std::size_t i, MLPParams& grads,
                      BeliefTable* beliefs_out) {
  const auto classes = set.classes();
  const auto& point = set.grounded()[i];
  const int label = set.points()[i].label;
  if (point.timestamps.empty()) {
    // Nothing to perceive: the distribution is fixed.
    BeliefTable none(point.t, 1, classes);
    if (beliefs_out) *beliefs_out = none;
    return nll_loss(ComplexEventModel::distribution(point, none), label).value;
  }
  const auto lo = point.timestamps.front();
  const auto hi = point.timestamps.back();
  BeliefTable beliefs = BeliefTable::uniform(lo, static_cast<std::size_t>(hi - lo + 1), classes);
  std::vector<ForwardTrace> traces;
  traces.reserve(point.timestamps.size());
  for (auto ts : point.timestamps) {
    traces.push_back(forward(params, set.inputs()[static_cast<std::size_t>(ts)]));
    const auto& y = traces.back().output();
    std::copy(y.data(), y.data() + y.size(), beliefs.row(ts).begin());
  }
  const auto loss = nll_loss(ComplexEventModel::distribution(point, beliefs), label);
  if (std::isfinite(loss.value)) {
    BeliefTable g(beliefs.first, beliefs.rows(), classes);
    for (std::size_t k = 0; k < point.circuits.size(); ++k) {
      if (loss.grad[k] != 0.0) point.circuits[k]->accumulate_gradient(beliefs, loss.grad[k], g, point.t);
    }
    for (std::size_t j = 0; j < point.timestamps.size(); ++j) {
      const auto row = g.row(point.timestamps[j]);
      const Eigen::Map<const Eigen::VectorXd> grad_out(row.data(), static_cast<Eigen::Index>(row.size()));
      backward_accumulate(traces[j], params, grad_out, grads);
    }
  }
  if (beliefs_out) *beliefs_out = std::move(beliefs);
  return loss.value;
}

TrainResult train(const MLPParams& initial, const EvalSet& train_set,
                  const EvalSet& validation, const TrainConfig& config) {
  if (config.max_epochs < 1 || config.patience < 1 || config.batch_size < 1)
    throw ValidationError("max_epochs, patience and batch_size must be >= 1");
  MLPParams params = initial;
  AdamConfig adam;
  adam.learning_rate = config.learning_rate;
  OptimizerState opt = OptimizerState::for_params(params, adam);
  EarlyStopping stopper(config.patience);
  TrainResult result{params, {}};

  std::vector<std::size_t> order(train_set.points().size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  Rng order_rng(derive_seed(config.seed, 100));

  MLPParams grads = params.zeros_like();
  std::size_t in_batch = 0;
  BeliefTable beliefs;

  for (int epoch = 1; epoch <= config.max_epochs; ++epoch) {
    const auto started = std::chrono::steady_clock::now();
    shuffle(std::span<std::size_t>(order), order_rng);
    double loss_sum = 0.0;
    for (std::size_t i : order) {
      const double loss = point_gradient(params, train_set, i, grads, &beliefs);
      if (!std::isfinite(loss)) {
        const auto path = snapshot_beliefs(config.diagnostics_dir, epoch, i, beliefs);
        throw NumericError("non-finite loss at epoch " + std::to_string(epoch) + ", point " + std::to_string(i) +
                           " (timestamp " + std::to_string(train_set.points()[i].timestamp) + "); beliefs: " + path);
      }
      loss_sum += loss;
      if (++in_batch == config.batch_size) {
        if (config.batch_size > 1) scale(grads, 1.0 / static_cast<double>(config.batch_size));
        adam_step(opt, params, grads);
        grads = params.zeros_like();
        in_batch = 0;
      }
    }
    if (in_batch > 0) {
      scale(grads, 1.0 / static_cast<double>(in_batch));
      adam_step(opt, params, grads);
      grads = params.zeros_like();
      in_batch = 0;
    }

    const auto metrics = evaluate(params, validation);
    EpochRecord rec;
    rec.epoch = epoch;
    rec.train_loss = order.empty() ? 0.0 : loss_sum / static_cast<double>(order.size());
    rec.val_ce_accuracy = metrics.ce_accuracy;
    rec.val_simple_accuracy = metrics.simple_accuracy;
    if (config.timing)
      rec.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - started).count();
    result.history.epochs.push_back(rec);
    if (config.verbose)
      std::fprintf(stderr, "epoch %3d  loss %.4f  val_ce %.4f  val_simple %.4f\n", epoch, rec.train_loss,
                   rec.val_ce_accuracy, rec.val_simple_accuracy);
    if (stopper.update(metrics.ce_accuracy)) result.best = params;
    if (stopper.should_stop()) break;
  }
  result.history.best_epoch = stopper.best_epoch();
  return result;
}

double supervised_probe(const EventStream& train, std::size_t n, const EventStream& test, std::uint64_t seed,
                        int epochs) {
  n = std::min(n, train.size());
  std::vector<Eigen::VectorXd> inputs;
  std::vector<int> labels;
  for (std::size_t i = 0; i < n; ++i) {
    inputs.push_back(scale_features(train.events[i].feature));
    labels.push_back(train.events[i].true_class.value());
  }
  MLPParams params = init_mlp(derive_seed(seed, 200));
  OptimizerState opt = OptimizerState::for_params(params);
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  Rng rng(derive_seed(seed, 201));
  for (int e = 0; e < epochs; ++e) {
    shuffle(std::span<std::size_t>(order), rng);
    for (auto i : order) {
      const auto trace = forward(params, inputs[i]);
      Eigen::VectorXd g = Eigen::VectorXd::Zero(trace.output().size());
      const auto c = static_cast<Eigen::Index>(labels[i]);
      g[c] = -1.0 / std::max(trace.output()[c], kProbabilityFloor);
      adam_step(opt, params, backward(trace, params, g));
    }
  }
  std::size_t hits = 0;
  for (const auto& e : test.events) hits += argmax_of(predict(params, scale_features(e.feature))) == static_cast<std::size_t>(e.true_class.value());
  return test.size() ? static_cast<double>(hits) / static_cast<double>(test.size()) : 0.0;
}

}  // namespace ncep
