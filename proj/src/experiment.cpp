#include "neurocep/experiment.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <numeric>
#include <regex>
#include <sstream>

#include "neurocep/error.hpp"
#include "neurocep/random.hpp"
#include "neurocep/rulelang.hpp"
#include "neurocep/stdlib.hpp"

namespace ncep {

namespace fs = std::filesystem;

namespace {

std::string fixed(double v, int digits) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.*f", digits, v);
  return buf;
}

std::string read_text(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot read " + path);
  std::ostringstream os;
  os << in.rdbuf();
  return os.str();
}

template <typename T>
void take(const nlohmann::json& j, const char* key, T& field) {
  if (!j.contains(key)) return;
  try {
    field = j.at(key).get<T>();
  } catch (const nlohmann::json::exception&) {
    throw ValidationError(std::string("config key `") + key + "` has the wrong type");
  }
}

}  // namespace

void ExperimentConfig::check() const {
  auto fail = [](const std::string& m) { throw ValidationError("config: " + m); };
  if (window < 2) fail("window must be at least 2");
  if (windows.empty()) fail("windows must not be empty");
  for (auto w : windows) {
    if (w < 2) fail("window sizes must be at least 2");
  }
  if (noises.empty()) fail("noises must not be empty");
  if (!(noise >= 0.0 && noise <= 1.0)) fail("noise must lie in [0, 1]");
  for (double f : noises) {
    if (!(f >= 0.0 && f <= 1.0)) fail("noise fractions must lie in [0, 1]");
  }
  if (replicates < 1) fail("replicates must be at least 1");
  if (!(sigma > 0.0)) fail("sigma must be positive");
  for (auto n : events) {
    if (n == 0) fail("every split needs at least one event");
  }
  if (train_points == 0) fail("train_points must be positive");
  if (max_epochs < 1) fail("max_epochs must be at least 1");
  if (patience < 1) fail("patience must be at least 1");
  if (!(learning_rate > 0.0)) fail("learning_rate must be positive");
  if (batch_size < 1) fail("batch_size must be at least 1");
}

DatasetConfig ExperimentConfig::dataset(std::int64_t w, double f, std::uint64_t s) const {
  DatasetConfig d;
  d.window = w;
  d.noise = f;
  d.seed = s;
  d.model_seed = model_seed;
  d.sigma = sigma;
  d.events = events;
  d.train_points = train_points;
  return d;
}

TrainConfig ExperimentConfig::training(std::int64_t w, std::uint64_t s) const {
  TrainConfig t;
  t.max_epochs = max_epochs;
  t.patience = patience;
  t.learning_rate = learning_rate;
  t.batch_size = batch_size;
  t.window = w;
  t.seed = s;
  t.timing = timing;
  return t;
}

std::vector<std::uint64_t> ExperimentConfig::replicate_seeds() const {
  std::vector<std::uint64_t> out;
  for (int r = 0; r < replicates; ++r) out.push_back(seed + static_cast<std::uint64_t>(r));
  return out;
}

nlohmann::json to_json(const ExperimentConfig& c) {
  return {{"rules", c.rules},
          {"window", c.window},
          {"noise", c.noise},
          {"windows", c.windows},
          {"noises", c.noises},
          {"replicates", c.replicates},
          {"seed", c.seed},
          {"model_seed", c.model_seed},
          {"sigma", c.sigma},
          {"events", c.events},
          {"train_points", c.train_points},
          {"max_epochs", c.max_epochs},
          {"patience", c.patience},
          {"learning_rate", c.learning_rate},
          {"batch_size", c.batch_size},
          {"keep_datasets", c.keep_datasets},
          {"timing", c.timing},
          {"out", c.out}};
}

ExperimentConfig config_from_json(const nlohmann::json& j, ExperimentConfig c) {
  if (!j.is_object()) throw ValidationError("config must be a JSON object");
  const auto known = to_json(c);
  for (const auto& [key, value] : j.items()) {
    if (!known.contains(key)) throw ValidationError("unknown config key `" + key + "`");
  }
  take(j, "rules", c.rules);
  take(j, "window", c.window);
  take(j, "noise", c.noise);
  take(j, "windows", c.windows);
  take(j, "noises", c.noises);
  take(j, "replicates", c.replicates);
  take(j, "seed", c.seed);
  take(j, "model_seed", c.model_seed);
  take(j, "sigma", c.sigma);
  take(j, "events", c.events);
  take(j, "train_points", c.train_points);
  take(j, "max_epochs", c.max_epochs);
  take(j, "patience", c.patience);
  take(j, "learning_rate", c.learning_rate);
  take(j, "batch_size", c.batch_size);
  take(j, "keep_datasets", c.keep_datasets);
  take(j, "timing", c.timing);
  take(j, "out", c.out);
  return c;
}

ExperimentConfig load_config(const std::string& path, ExperimentConfig base) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(read_text(path));
  } catch (const nlohmann::json::parse_error& e) {
    throw ValidationError(path + ": " + e.what());
  }
  return config_from_json(j, std::move(base));
}

ExperimentConfig apply_preset(std::string_view name, ExperimentConfig c) {
  static const std::regex base_re(R"(base-w(\d+))");
  static const std::regex noise_re(R"(noise-w(\d+)-f([0-9]*\.?[0-9]+))");
  const std::string text(name);
  std::smatch m;
  if (std::regex_match(text, m, base_re)) {
    c.window = std::stoll(m[1]);
    c.noise = 0.0;
    c.windows = {c.window};
    c.noises = {c.noise};
  } else if (std::regex_match(text, m, noise_re)) {
    c.window = std::stoll(m[1]);
    c.noise = std::stod(m[2]);
    c.windows = {c.window};
    c.noises = {c.noise};
  } else if (text == "sweep-base") {
    c.windows = {2, 3, 4, 5};
    c.noises = {0.0};
  } else if (text == "sweep-noise") {
    c.windows = {2};
    c.noises = {0.0, 0.2, 0.4, 0.6};
  } else {
    throw ValidationError("unknown preset `" + text + "`");
  }
  return c;
}

Program load_rules(const ExperimentConfig& config) {
  if (config.rules.empty()) return default_rules();
  return parse_program(read_text(config.rules));
}

MLPParams initial_network(std::uint64_t seed) { return init_mlp(derive_seed(seed, 7)); }

void write_text(const std::string& path, const std::string& text) {
  const fs::path p(path);
  std::error_code ec;
  if (p.has_parent_path()) fs::create_directories(p.parent_path(), ec);
  std::ofstream out(p, std::ios::binary);
  if (!out) throw IoError("cannot write " + path);
  out << text;
  if (!out) throw IoError("cannot write " + path);
}

// ---------------------------------------------------------------------------

std::string metrics_csv(const std::vector<RunRecord>& records) {
  std::string out = "window,noise,seed,ce_accuracy,simple_accuracy,natural_ce_accuracy\n";
  for (const auto& r : records) {
    out += std::to_string(r.window) + "," + fixed(r.noise, 2) + "," + std::to_string(r.seed) + ",";
    if (r.ok) {
      out += fixed(r.metrics.ce_accuracy, 6) + "," + fixed(r.metrics.simple_accuracy, 6) + "," +
             fixed(r.metrics.natural_ce_accuracy, 6);
    } else {
      out += ",,";
    }
    out += "\n";
  }
  return out;
}

nlohmann::json metrics_json(const RunRecord& r, const std::vector<std::string>& names) {
  nlohmann::json confusion = nlohmann::json::object();
  for (std::size_t i = 0; i < r.metrics.confusion.size(); ++i) {
    nlohmann::json row = nlohmann::json::object();
    for (std::size_t k = 0; k < r.metrics.confusion[i].size(); ++k) row[names.at(k)] = r.metrics.confusion[i][k];
    confusion[names.at(i)] = row;
  }
  nlohmann::json j = {{"window", r.window},
                      {"noise", r.noise},
                      {"seed", r.seed},
                      {"ce_accuracy", r.metrics.ce_accuracy},
                      {"natural_ce_accuracy", r.metrics.natural_ce_accuracy},
                      {"simple_accuracy", r.metrics.simple_accuracy},
                      {"points", r.metrics.points},
                      {"events", r.metrics.events},
                      {"confusion", confusion}};
  if (r.best_epoch > 0) j["best_epoch"] = r.best_epoch;
  return j;
}

namespace {

std::vector<std::string> outcome_names(std::size_t classes) {
  std::vector<std::string> names;
  for (std::size_t k = 0; k < classes; ++k) names.push_back(label_name(static_cast<int>(k)));
  names.push_back(label_name(kNullLabel));
  return names;
}

void write_training(const std::string& dir, const TrainResult& result, std::uint64_t seed,
                    const TrainConfig& tc) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  Checkpoint ck;
  ck.params = result.best;
  ck.optimizer.learning_rate = tc.learning_rate;
  ck.seed = seed;
  save_checkpoint((fs::path(dir) / "checkpoint.json").string(), ck);
  write_text((fs::path(dir) / "history.csv").string(), history_csv(result.history));
}

void write_metrics(const std::string& dir, const RunRecord& r) {
  write_text((fs::path(dir) / "metrics.csv").string(), metrics_csv({r}));
  if (r.ok) {
    const auto names = outcome_names(r.metrics.confusion.empty() ? 10 : r.metrics.confusion.size() - 1);
    write_text((fs::path(dir) / "metrics.json").string(), metrics_json(r, names).dump(2) + "\n");
  }
}

}  // namespace

TrainOutput train_on_directory(const Program& program, const std::string& data_dir,
                               const ExperimentConfig& config, std::optional<std::uint64_t> seed_override,
                               const std::string& out_dir, bool verbose) {
  const auto tr = read_split((fs::path(data_dir) / "train").string());
  const auto va = read_split((fs::path(data_dir) / "validation").string());
  if (tr.window != va.window) throw SchemaError("train and validation splits disagree on the window");
  const std::uint64_t seed = seed_override.value_or(tr.seed);
  TrainConfig tc = config.training(tr.window, seed);
  tc.diagnostics_dir = out_dir;
  tc.verbose = verbose;
  const EvalSet train_set(program, tr.stream, tr.points, tr.window);
  const EvalSet validation(program, va.stream, va.points, va.window);
  TrainOutput out;
  out.window = tr.window;
  out.noise = tr.noise;
  out.seed = seed;
  out.result = train(initial_network(seed), train_set, validation, tc);
  write_training(out_dir, out.result, seed, tc);
  return out;
}

RunRecord evaluate_directory(const Program& program, const std::string& checkpoint,
                             const std::string& data_dir) {
  const auto ck = load_checkpoint(checkpoint);
  const auto tr_meta = read_split((fs::path(data_dir) / "train").string());
  const auto te = read_split((fs::path(data_dir) / "test").string());
  if (ck.params.inputs() != kFeatureDim) throw SchemaError("checkpoint expects a different feature dimension");
  if (ck.params.outputs() != te.class_names.size())
    throw SchemaError("checkpoint has " + std::to_string(ck.params.outputs()) + " outputs but the dataset has " +
                      std::to_string(te.class_names.size()) + " classes");
  RunRecord r;
  r.window = te.window;
  r.noise = tr_meta.noise;
  r.seed = tr_meta.seed;
  r.metrics = evaluate(ck.params, EvalSet(program, te.stream, te.points, te.window));
  r.ok = true;
  return r;
}

RunRecord run_pipeline(const Program& program, const ExperimentConfig& config, std::int64_t window,
                       double noise, std::uint64_t seed, const std::string& dir) {
  RunRecord r;
  r.window = window;
  r.noise = noise;
  r.seed = seed;
  try {
    const auto data = make_splits(config.dataset(window, noise, seed));
    if (config.keep_datasets) write_dataset((fs::path(dir) / "data").string(), data);
    const EvalSet tr(program, data.train.stream, data.train.points, window);
    const EvalSet va(program, data.validation.stream, data.validation.points, window);
    const EvalSet te(program, data.test.stream, data.test.points, window);
    TrainConfig tc = config.training(window, seed);
    tc.diagnostics_dir = dir;
    const auto result = train(initial_network(seed), tr, va, tc);
    write_training(dir, result, seed, tc);
    r.metrics = evaluate(result.best, te);
    r.best_epoch = result.history.best_epoch;
    r.epochs = static_cast<int>(result.history.epochs.size());
    r.ok = true;
  } catch (const Error& e) {
    r.error = e.what();
  }
  write_metrics(dir, r);
  return r;
}

// ---------------------------------------------------------------------------

std::vector<AggregateRow> aggregate(const std::vector<RunRecord>& records) {
  std::map<std::pair<std::int64_t, double>, std::vector<const RunRecord*>> groups;
  for (const auto& r : records) {
    if (r.ok) groups[{r.window, r.noise}].push_back(&r);
  }
  auto stats = [](const std::vector<double>& xs, double& mean, double& sd) {
    mean = std::accumulate(xs.begin(), xs.end(), 0.0) / static_cast<double>(xs.size());
    double ss = 0.0;
    for (double x : xs) ss += (x - mean) * (x - mean);
    sd = xs.size() > 1 ? std::sqrt(ss / static_cast<double>(xs.size() - 1)) : 0.0;
  };
  std::vector<AggregateRow> rows;
  for (const auto& [key, runs] : groups) {
    AggregateRow a;
    a.window = key.first;
    a.noise = key.second;
    a.runs = runs.size();
    std::vector<double> ce, simple, natural;
    for (const auto* r : runs) {
      ce.push_back(r->metrics.ce_accuracy);
      simple.push_back(r->metrics.simple_accuracy);
      natural.push_back(r->metrics.natural_ce_accuracy);
    }
    stats(ce, a.ce_mean, a.ce_std);
    stats(simple, a.simple_mean, a.simple_std);
    stats(natural, a.natural_mean, a.natural_std);
    rows.push_back(a);
  }
  return rows;
}

std::string aggregate_csv(const std::vector<AggregateRow>& rows) {
  std::string out =
      "window,noise,runs,ce_mean,ce_std,simple_mean,simple_std,natural_ce_mean,natural_ce_std\n";
  for (const auto& a : rows) {
    out += std::to_string(a.window) + "," + fixed(a.noise, 2) + "," + std::to_string(a.runs) + "," +
           fixed(a.ce_mean, 6) + "," + fixed(a.ce_std, 6) + "," + fixed(a.simple_mean, 6) + "," +
           fixed(a.simple_std, 6) + "," + fixed(a.natural_mean, 6) + "," + fixed(a.natural_std, 6) + "\n";
  }
  return out;
}

std::string curve_data(const std::vector<AggregateRow>& rows) {
  std::map<std::int64_t, int> per_window;
  for (const auto& a : rows) ++per_window[a.window];
  const bool by_noise = std::any_of(per_window.begin(), per_window.end(), [](auto& p) { return p.second > 1; });
  auto line = [](double x, const AggregateRow& a) {
    return fixed(x, 2) + " " + fixed(a.ce_mean, 6) + " " + fixed(a.ce_std, 6) + " " + fixed(a.simple_mean, 6) +
           " " + fixed(a.simple_std, 6) + " " + fixed(a.natural_mean, 6) + " " + fixed(a.natural_std, 6) + "\n";
  };
  std::string out;
  if (by_noise) {
    bool first = true;
    for (const auto& [w, count] : per_window) {
      if (!first) out += "\n\n";
      first = false;
      out += "# window " + std::to_string(w) +
             "\n# noise ce_mean ce_std simple_mean simple_std natural_ce_mean natural_ce_std\n";
      for (const auto& a : rows) {
        if (a.window == w) out += line(a.noise, a);
      }
    }
  } else {
    out += "# window ce_mean ce_std simple_mean simple_std natural_ce_mean natural_ce_std\n";
    for (const auto& a : rows) out += line(static_cast<double>(a.window), a);
  }
  return out;
}

std::vector<RunRecord> run_sweep(const ExperimentConfig& config, bool verbose) {
  config.check();
  const Program program = load_rules(config);
  const fs::path root(config.out);
  write_text((root / "config.json").string(), to_json(config).dump(2) + "\n");
  std::vector<RunRecord> records;
  for (auto w : config.windows) {
    for (double f : config.noises) {
      for (auto s : config.replicate_seeds()) {
        const auto name = "w" + std::to_string(w) + "-f" + fixed(f, 2) + "-s" + std::to_string(s);
        records.push_back(run_pipeline(program, config, w, f, s, (root / "runs" / name).string()));
        if (verbose) {
          const auto& r = records.back();
          if (r.ok) {
            std::fprintf(stderr, "%s  ce %.4f  natural %.4f  simple %.4f  best epoch %d\n", name.c_str(),
                         r.metrics.ce_accuracy, r.metrics.natural_ce_accuracy, r.metrics.simple_accuracy,
                         r.best_epoch);
          } else {
            std::fprintf(stderr, "%s  failed: %s\n", name.c_str(), r.error.c_str());
          }
        }
      }
    }
  }
  std::string runs = metrics_csv(records);
  // Failed runs keep their row; the reason goes in a trailing column.
  std::istringstream in(runs);
  std::string line, out;
  std::getline(in, line);
  out = line + ",status\n";
  for (const auto& r : records) {
    std::getline(in, line);
    std::string reason = r.error;
    std::replace(reason.begin(), reason.end(), ',', ';');
    std::replace(reason.begin(), reason.end(), '\n', ' ');
    out += line + "," + (r.ok ? std::string("ok") : "error: " + reason) + "\n";
  }
  write_text((root / "runs.csv").string(), out);
  const auto rows = aggregate(records);
  write_text((root / "aggregate.csv").string(), aggregate_csv(rows));
  write_text((root / "curve.dat").string(), curve_data(rows));
  return records;
}

}  // namespace ncep
