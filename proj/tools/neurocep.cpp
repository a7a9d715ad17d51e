// neurocep: dataset generation, training, evaluation, inference and sweeps.
//
// Exit codes: 0 success, 1 usage or config error, 2 numeric abort, 3 I/O or
// schema error.

#include <CLI11.hpp>

#include <algorithm>
#include <cstdio>
#include <fstream>
#include <filesystem>
#include <iostream>
#include <optional>
#include <string>

#include <nlohmann/json.hpp>

#include "neurocep/circuit.hpp"
#include "neurocep/error.hpp"
#include "neurocep/experiment.hpp"
#include "neurocep/stdlib.hpp"

using namespace ncep;
namespace fs = std::filesystem;

namespace {

enum Exit { kOk = 0, kUsage = 1, kNumeric = 2, kIo = 3 };

struct UsageError : Error {
  using Error::Error;
};

/// Options shared by every subcommand. Unset flags leave the config alone.
struct CommonFlags {
  std::string config;
  std::string preset;
  std::string rules;
  std::optional<std::uint64_t> seed;
  std::optional<std::int64_t> window;
  std::optional<double> noise;
  std::optional<std::string> out;

  void attach(CLI::App& cmd) {
    cmd.add_option("--config", config, "JSON config file");
    cmd.add_option("--preset", preset, "base-wN, noise-wN-fF, sweep-base or sweep-noise");
    cmd.add_option("--rules", rules, "rule file (default: built-in rules)");
    cmd.add_option("--seed", seed, "replicate seed");
    cmd.add_option("--window", window, "window size");
    cmd.add_option("--noise", noise, "training label noise fraction");
    cmd.add_option("--out", out, "output directory");
  }

  ExperimentConfig resolve() const {
    ExperimentConfig c;
    if (!config.empty()) c = load_config(config, c);
    if (!preset.empty()) c = apply_preset(preset, c);
    if (!rules.empty()) c.rules = rules;
    if (seed) c.seed = *seed;
    if (window) {
      c.window = *window;
      c.windows = {*window};
    }
    if (noise) {
      c.noise = *noise;
      c.noises = {*noise};
    }
    if (out) c.out = *out;
    c.check();
    return c;
  }

  bool seed_given() const {
    if (seed) return true;
    if (config.empty()) return false;
    std::ifstream in(config);
    return nlohmann::json::parse(in, nullptr, false).contains("seed");
  }
};

std::string path_in(const std::string& dir, const char* name) { return (fs::path(dir) / name).string(); }

void persist(const ExperimentConfig& c, const std::string& dir) {
  write_text(path_in(dir, "config.json"), to_json(c).dump(2) + "\n");
}

int cmd_gen(const CommonFlags& flags) {
  const auto c = flags.resolve();
  const auto data = make_splits(c.dataset(c.window, c.noise, c.seed));
  write_dataset(c.out, data);
  persist(c, c.out);
  const auto seeds = dataset_seeds(data.config);
  nlohmann::ordered_json manifest = {
      {"out", c.out},
      {"window", c.window},
      {"noise", c.noise},
      {"seed", c.seed},
      {"seeds",
       {{"train", seeds.train}, {"validation", seeds.validation}, {"test", seeds.test}, {"noise", seeds.noise},
        {"balance", seeds.balance}}},
      {"events", {{"train", data.train.stream.size()}, {"validation", data.validation.stream.size()},
                  {"test", data.test.stream.size()}}},
      {"points", {{"train", data.train.points.size()}, {"validation", data.validation.points.size()},
                  {"test", data.test.points.size()}}}};
  std::cout << manifest.dump(2) << "\n";
  return kOk;
}

int cmd_train(const CommonFlags& flags, const std::string& data, bool timing, bool quiet) {
  auto c = flags.resolve();
  c.timing = c.timing || timing;
  const Program program = load_rules(c);
  const std::optional<std::uint64_t> seed = flags.seed_given() ? std::optional(c.seed) : std::nullopt;
  const auto out = train_on_directory(program, data, c, seed, c.out, !quiet);
  auto persisted = c;
  persisted.seed = out.seed;
  persisted.window = out.window;
  persisted.noise = out.noise;
  persist(persisted, c.out);
  std::printf("best epoch %d of %zu, validation ce_accuracy %.4f; wrote %s and %s\n", out.result.history.best_epoch,
              out.result.history.epochs.size(),
              out.result.history.epochs[static_cast<std::size_t>(out.result.history.best_epoch - 1)].val_ce_accuracy,
              path_in(c.out, "checkpoint.json").c_str(), path_in(c.out, "history.csv").c_str());
  return kOk;
}

int cmd_eval(const CommonFlags& flags, const std::string& checkpoint, const std::string& data) {
  const auto c = flags.resolve();
  const auto r = evaluate_directory(load_rules(c), checkpoint, data);
  std::vector<std::string> names;
  for (std::size_t k = 0; k + 1 < r.metrics.confusion.size(); ++k) names.push_back(label_name(static_cast<int>(k)));
  names.push_back(label_name(kNullLabel));
  write_text(path_in(c.out, "metrics.csv"), metrics_csv({r}));
  write_text(path_in(c.out, "metrics.json"), metrics_json(r, names).dump(2) + "\n");
  std::printf("window %lld noise %.2f seed %llu: ce_accuracy %.4f natural_ce_accuracy %.4f simple_accuracy %.4f (%zu points)\n",
              static_cast<long long>(r.window), r.noise, static_cast<unsigned long long>(r.seed),
              r.metrics.ce_accuracy, r.metrics.natural_ce_accuracy, r.metrics.simple_accuracy, r.metrics.points);
  return kOk;
}

int cmd_infer(const CommonFlags& flags, const std::string& checkpoint, const std::string& features, std::int64_t t) {
  const auto c = flags.resolve();
  const Program program = load_rules(c);
  const auto stream = read_features(features);
  if (stream.events.empty()) throw UsageError("the feature file has no events");
  const auto first = stream.events.front().timestamp;
  const auto last = stream.events.back().timestamp;
  if (t < first || t > last)
    throw UsageError("t = " + std::to_string(t) + " is outside the stream [" + std::to_string(first) + ", " +
                     std::to_string(last) + "]");
  const auto ck = load_checkpoint(checkpoint);
  if (ck.params.inputs() != kFeatureDim) throw SchemaError("checkpoint expects a different feature dimension");

  StreamContext ctx;
  ctx.window = c.window;
  for (const auto& e : stream.events) ctx.timestamps.push_back(e.timestamp);
  ComplexEventModel model(program, ctx);
  if (ck.params.outputs() != model.classes()) throw SchemaError("checkpoint outputs do not match the rule domain");
  const auto point = model.prepare(t);
  BeliefTable beliefs(first, stream.size(), model.classes());
  for (auto ts : point.timestamps) {
    const auto p = predict(ck.params, scale_features(stream.events[static_cast<std::size_t>(ts - first)].feature));
    for (std::size_t k = 0; k < model.classes(); ++k) beliefs.at(ts, k) = p[static_cast<Eigen::Index>(k)];
  }
  const auto dist = ComplexEventModel::distribution(point, beliefs);
  nlohmann::ordered_json probs = nlohmann::ordered_json::object();
  for (std::size_t k = 0; k < model.event_names().size(); ++k) probs[model.event_names()[k]] = dist.p[k];
  probs["null"] = dist.null();
  const int label = dist.label();
  nlohmann::ordered_json out = {{"t", t},
                        {"window", c.window},
                        {"distribution", probs},
                        {"argmax", label == kNullLabel ? std::string("null")
                                                       : model.event_names()[static_cast<std::size_t>(label)]}};
  std::cout << out.dump(2) << "\n";
  return kOk;
}

int cmd_inspect(const CommonFlags& flags, const std::string& ce, std::int64_t t, std::int64_t length) {
  const auto c = flags.resolve();
  const Program program = load_rules(c);
  if (t < 0) throw UsageError("t must be non-negative");
  if (length <= 0) length = t + 1;
  if (t >= length) throw UsageError("t must lie inside the stream");
  const auto ctx = StreamContext::contiguous(static_cast<std::size_t>(length), c.window);
  ComplexEventModel model(program, ctx);
  std::string name = ce;
  const auto& names = model.event_names();
  if (std::find(names.begin(), names.end(), name) == names.end()) {
    try {
      const int k = parse_label(ce);
      if (k < 0 || static_cast<std::size_t>(k) >= names.size()) throw SchemaError("");
      name = names[static_cast<std::size_t>(k)];
    } catch (const SchemaError&) {
      throw UsageError("unknown complex event `" + ce + "`");
    }
  }
  const Atom query{"happensAt", {Term::constant(name), Term::integer(t)}};
  const auto proofs = solve(program, ctx, query);
  nlohmann::ordered_json listed = nlohmann::ordered_json::array();
  for (const auto& p : proofs.proofs) listed.push_back(to_string(p));
  nlohmann::ordered_json out = {{"query", to_string(query)},
                        {"window", c.window},
                        {"proofs", listed},
                        {"circuit", nlohmann::ordered_json::parse(compile(proofs).to_json())}};
  std::cout << out.dump(2) << "\n";
  return kOk;
}

int cmd_sweep(const CommonFlags& flags, bool quiet) {
  const auto c = flags.resolve();
  const auto records = run_sweep(c, !quiet);
  std::cout << aggregate_csv(aggregate(records));
  std::size_t failed = 0;
  for (const auto& r : records) failed += r.ok ? 0 : 1;
  if (failed) std::fprintf(stderr, "%zu of %zu runs failed; see %s\n", failed, records.size(),
                           path_in(c.out, "runs.csv").c_str());
  return kOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Neuro-symbolic complex event processing"};
  app.require_subcommand(1);

  CommonFlags gen_flags, train_flags, eval_flags, infer_flags, inspect_flags, sweep_flags;
  std::string data, checkpoint, features, ce;
  std::int64_t t = 0, length = 0;
  bool timing = false, quiet = false;

  auto* gen = app.add_subcommand("gen", "generate train/validation/test splits");
  gen_flags.attach(*gen);

  auto* trn = app.add_subcommand("train", "train a network on a dataset directory");
  train_flags.attach(*trn);
  trn->add_option("--data", data, "dataset directory")->required();
  trn->add_flag("--timing", timing, "record wall-clock seconds per epoch");
  trn->add_flag("--quiet", quiet, "no per-epoch progress");

  auto* ev = app.add_subcommand("eval", "evaluate a checkpoint on the test split");
  eval_flags.attach(*ev);
  ev->add_option("--checkpoint", checkpoint, "checkpoint.json")->required();
  ev->add_option("--data", data, "dataset directory")->required();

  auto* inf = app.add_subcommand("infer", "complex-event distribution at one timestamp");
  infer_flags.attach(*inf);
  inf->add_option("--checkpoint", checkpoint, "checkpoint.json")->required();
  inf->add_option("--features", features, "features.csv")->required();
  inf->add_option("--t", t, "timestamp")->required();

  auto* ins = app.add_subcommand("inspect-circuit", "proofs and circuit of happensAt(CE, T)");
  inspect_flags.attach(*ins);
  ins->add_option("--ce", ce, "complex event, e.g. ceSiren or ce_8")->required();
  ins->add_option("--t", t, "timestamp")->required();
  ins->add_option("--length", length, "stream length (default t + 1)");

  auto* sw = app.add_subcommand("sweep", "gen, train and eval over windows x noises x replicates");
  sweep_flags.attach(*sw);
  sw->add_flag("--quiet", quiet, "no per-run progress");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return e.get_exit_code() == 0 ? kOk : kUsage;
  }

  try {
    if (*gen) return cmd_gen(gen_flags);
    if (*trn) return cmd_train(train_flags, data, timing, quiet);
    if (*ev) return cmd_eval(eval_flags, checkpoint, data);
    if (*inf) return cmd_infer(infer_flags, checkpoint, features, t);
    if (*ins) return cmd_inspect(inspect_flags, ce, t, length);
    if (*sw) return cmd_sweep(sweep_flags, quiet);
  } catch (const NumericError& e) {
    std::fprintf(stderr, "numeric error: %s\n", e.what());
    return kNumeric;
  } catch (const IoError& e) {
    std::fprintf(stderr, "I/O error: %s\n", e.what());
    return kIo;
  } catch (const SchemaError& e) {
    std::fprintf(stderr, "schema error: %s\n", e.what());
    return kIo;
  } catch (const Error& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return kUsage;
  }
  return kUsage;
}
