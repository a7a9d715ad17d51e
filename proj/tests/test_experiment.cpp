#include <doctest.h>

#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>

#include <nlohmann/json.hpp>

#include "neurocep/error.hpp"
#include "neurocep/experiment.hpp"
#include "neurocep/rulelang.hpp"
#include "neurocep/stdlib.hpp"

using namespace ncep;
namespace fs = std::filesystem;

namespace {

fs::path scratch(const std::string& name) {
  const auto p = fs::temp_directory_path() / ("neurocep_test_" + name);
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream os;
  os << in.rdbuf();
  return os.str();
}

/// Runs the CLI, capturing stdout into `out`; returns the exit status.
int cli(const std::string& args, std::string* out = nullptr) {
  const auto capture = fs::temp_directory_path() / "neurocep_test_cli_stdout.txt";
  const std::string line = std::string(NEUROCEP_CLI) + " " + args + " > " + capture.string() + " 2>/dev/null";
  const int status = std::system(line.c_str());
  if (out) *out = slurp(capture);
  return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

RunRecord record(std::int64_t w, double f, std::uint64_t seed, double ce, double simple, double natural) {
  RunRecord r;
  r.window = w;
  r.noise = f;
  r.seed = seed;
  r.ok = true;
  r.metrics.ce_accuracy = ce;
  r.metrics.simple_accuracy = simple;
  r.metrics.natural_ce_accuracy = natural;
  return r;
}

}  // namespace

TEST_CASE("shipped rule file matches the built-in rules") {
  const auto text = slurp(fs::path(NEUROCEP_SOURCE_DIR) / "rules" / "sound_repeats.pl");
  CHECK(parse_program(text) == default_rules());
}

TEST_CASE("config JSON") {
  ExperimentConfig c;
  c.windows = {3, 5};
  c.sigma = 120.0;
  c.events = {100, 10, 10};
  c.out = "elsewhere";
  const auto back = config_from_json(to_json(c));
  CHECK(to_json(back) == to_json(c));

  const auto partial = config_from_json(nlohmann::json{{"window", 4}, {"patience", 3}});
  CHECK(partial.window == 4);
  CHECK(partial.patience == 3);
  CHECK(partial.max_epochs == 100);

  CHECK_THROWS_AS(config_from_json(nlohmann::json{{"windw", 4}}), ValidationError);
  CHECK_THROWS_AS(config_from_json(nlohmann::json{{"window", "four"}}), ValidationError);
  CHECK_THROWS_AS(config_from_json(nlohmann::json::array()), ValidationError);

  ExperimentConfig bad;
  bad.windows = {1};
  CHECK_THROWS_AS(bad.check(), ValidationError);
  bad = {};
  bad.replicates = 0;
  CHECK_THROWS_AS(bad.check(), ValidationError);
  bad = {};
  bad.noise = 1.5;
  CHECK_THROWS_AS(bad.check(), ValidationError);
  CHECK_NOTHROW(ExperimentConfig{}.check());
}

TEST_CASE("presets") {
  const auto b = apply_preset("base-w2");
  CHECK(b.window == 2);
  CHECK(b.noise == 0.0);
  const auto n = apply_preset("noise-w5-f0.4");
  CHECK(n.window == 5);
  CHECK(n.noise == doctest::Approx(0.4));
  CHECK(n.windows == std::vector<std::int64_t>{5});
  const auto sb = apply_preset("sweep-base");
  CHECK(sb.windows.size() * sb.noises.size() * static_cast<std::size_t>(sb.replicates) == 12);
  const auto sn = apply_preset("sweep-noise");
  CHECK(sn.windows.size() * sn.noises.size() * static_cast<std::size_t>(sn.replicates) == 12);
  CHECK_THROWS_AS(apply_preset("base-wx"), ValidationError);

  // Training labels of a noise preset are noisy; test labels stay clean.
  auto small = n;
  small.events = {6000, 300, 300};
  small.train_points = 110;
  const auto d = make_splits(small.dataset(small.window, small.noise, small.seed));
  CHECK(d.test.clean == label_ce(d.test.stream, 5));
}

TEST_CASE("aggregate rows recompute from runs") {
  const std::vector<RunRecord> runs = {record(2, 0.0, 1, 0.9, 0.95, 0.97), record(2, 0.0, 2, 0.8, 0.85, 0.96),
                                       record(2, 0.0, 3, 0.7, 0.90, 0.98), record(3, 0.0, 1, 0.6, 0.9, 0.9)};
  auto failed = record(3, 0.0, 2, 0.0, 0.0, 0.0);
  failed.ok = false;
  auto with_failure = runs;
  with_failure.push_back(failed);
  const auto rows = aggregate(with_failure);
  REQUIRE(rows.size() == 2);
  CHECK(rows[0].runs == 3);
  CHECK(rows[0].ce_mean == doctest::Approx(0.8));
  CHECK(rows[0].ce_std == doctest::Approx(0.1));  // sample standard deviation
  CHECK(rows[0].simple_mean == doctest::Approx(0.9));
  CHECK(rows[0].natural_std == doctest::Approx(0.01));
  CHECK(rows[1].runs == 1);
  CHECK(rows[1].ce_std == 0.0);

  const auto csv = aggregate_csv(rows);
  CHECK(csv.rfind("window,noise,runs,ce_mean,ce_std,", 0) == 0);
  CHECK(csv.find("\n2,0.00,3,0.800000,0.100000,") != std::string::npos);

  // Order of the runs does not matter.
  auto reversed = with_failure;
  std::reverse(reversed.begin(), reversed.end());
  CHECK(aggregate_csv(aggregate(reversed)) == csv);

  const auto table = metrics_csv(with_failure);
  CHECK(table.rfind("window,noise,seed,ce_accuracy,simple_accuracy,natural_ce_accuracy\n", 0) == 0);
  CHECK(table.find("\n3,0.00,2,,,\n") != std::string::npos);
}

TEST_CASE("curve data") {
  std::vector<AggregateRow> by_noise(2);
  by_noise[0].window = 2;
  by_noise[1].window = 2;
  by_noise[1].noise = 0.2;
  const auto a = curve_data(by_noise);
  CHECK(a.find("# window 2\n# noise ce_mean") != std::string::npos);
  CHECK(a.find("\n0.20 ") != std::string::npos);

  std::vector<AggregateRow> by_window(2);
  by_window[0].window = 2;
  by_window[1].window = 3;
  const auto b = curve_data(by_window);
  CHECK(b.rfind("# window ce_mean", 0) == 0);
  CHECK(b.find("\n3.00 ") != std::string::npos);
}

TEST_CASE("CLI usage errors") {
  CHECK(cli("") == 1);
  CHECK(cli("frobnicate") == 1);
  CHECK(cli("gen --preset nope") == 1);
  CHECK(cli("gen --window 1") == 1);
  CHECK(cli("eval --checkpoint /nonexistent/ck.json --data /nonexistent") == 3);
  CHECK(cli("--help") == 0);
}

TEST_CASE("CLI infer and inspect-circuit") {
  const auto dir = scratch("infer");
  // Class c shows as feature c = 255; the network reads it off directly.
  const std::vector<int> classes = {3, 8, 8, 1, 8};
  std::string csv = "timestamp";
  for (std::size_t k = 0; k < kFeatureDim; ++k) csv += ",f" + std::to_string(k);
  csv += ",trueClass\n";
  for (std::size_t t = 0; t < classes.size(); ++t) {
    csv += std::to_string(t);
    for (std::size_t k = 0; k < kFeatureDim; ++k) csv += static_cast<int>(k) == classes[t] ? ",255" : ",1";
    csv += "," + std::to_string(classes[t]) + "\n";
  }
  write_text((dir / "features.csv").string(), csv);
  Checkpoint ck;
  ck.params.widths = {128, 10};
  ck.params.weights = {Eigen::MatrixXd::Zero(10, 128)};
  for (int c = 0; c < 10; ++c) ck.params.weights[0](c, c) = 2000.0;
  ck.params.biases = {Eigen::VectorXd::Zero(10)};
  save_checkpoint((dir / "ck.json").string(), ck);

  const std::string base = "infer --checkpoint " + (dir / "ck.json").string() + " --features " +
                           (dir / "features.csv").string() + " --window 2 --t ";
  auto run = [&](int t) {
    std::string out;
    REQUIRE(cli(base + std::to_string(t), &out) == 0);
    return nlohmann::json::parse(out);
  };
  const auto at2 = run(2);
  CHECK(at2["argmax"] == "ceSiren");
  double sum = 0.0;
  for (const auto& [k, v] : at2["distribution"].items()) sum += v.get<double>();
  CHECK(sum == doctest::Approx(1.0).epsilon(1e-9));
  CHECK(run(0)["argmax"] == "null");
  CHECK(run(4)["argmax"] == "null");  // sirens two apart, window 2
  CHECK(cli(base + "5") == 1);

  std::string out;
  REQUIRE(cli("inspect-circuit --ce ceSiren --t 3 --window 3", &out) == 0);
  const auto j = nlohmann::json::parse(out);
  CHECK(j["proofs"].size() == 2);
  CHECK(j["circuit"]["nodes"].size() > 0);
  CHECK(cli("inspect-circuit --ce ceNothing --t 3") == 1);
}

TEST_CASE("CLI gen, train, eval pipeline") {
  const auto dir = scratch("pipeline");
  const auto cfg = dir / "cfg.json";
  write_text(cfg.string(),
             R"({"events": [6000, 300, 300], "train_points": 110, "max_epochs": 2, "patience": 1})" "\n");
  const std::string c = " --config " + cfg.string();
  std::string manifest;
  REQUIRE(cli("gen" + c + " --preset noise-w3-f0.2 --seed 9 --out " + (dir / "data").string(), &manifest) == 0);
  const auto m = nlohmann::json::parse(manifest);
  CHECK(m["points"]["train"] == 110);
  CHECK(m["window"] == 3);
  CHECK(fs::exists(dir / "data" / "config.json"));
  const auto meta = nlohmann::json::parse(slurp(dir / "data" / "train" / "meta.json"));
  CHECK(meta["noise"] == 0.2);
  CHECK(meta["seed"] == 9);

  REQUIRE(cli("train" + c + " --quiet --data " + (dir / "data").string() + " --out " + (dir / "m").string()) == 0);
  const auto history = slurp(dir / "m" / "history.csv");
  CHECK(history.rfind("epoch,train_loss,val_ce_acc,val_simple_acc,seconds\n", 0) == 0);
  // The training seed defaults to the dataset's.
  CHECK(nlohmann::json::parse(slurp(dir / "m" / "config.json"))["seed"] == 9);

  REQUIRE(cli("eval" + c + " --checkpoint " + (dir / "m" / "checkpoint.json").string() + " --data " +
              (dir / "data").string() + " --out " + (dir / "m").string()) == 0);
  const auto metrics = slurp(dir / "m" / "metrics.csv");
  CHECK(metrics.find("\n3,0.20,9,") != std::string::npos);
  const auto mj = nlohmann::json::parse(slurp(dir / "m" / "metrics.json"));
  std::size_t total = 0;
  for (const auto& [k, row] : mj["confusion"].items()) {
    for (const auto& [kk, v] : row.items()) total += v.get<std::size_t>();
  }
  CHECK(total == 300);
  CHECK(mj["ce_accuracy"].get<double>() >= 0.0);
  CHECK(mj["ce_accuracy"].get<double>() <= 1.0);

  // A checkpoint with the wrong class count is a schema error.
  Checkpoint wrong;
  wrong.params = init_mlp(1, {128, 7});
  save_checkpoint((dir / "wrong.json").string(), wrong);
  CHECK(cli("eval --checkpoint " + (dir / "wrong.json").string() + " --data " + (dir / "data").string() +
            " --out " + (dir / "w").string()) == 3);
}

TEST_CASE("sweep records every run") {
  ExperimentConfig c;
  c.windows = {2, 3};
  c.noises = {0.0};
  c.replicates = 2;
  c.events = {6000, 300, 300};
  c.train_points = 110;
  c.max_epochs = 1;
  c.patience = 1;
  c.out = scratch("sweep").string();
  const auto runs = run_sweep(c);
  CHECK(runs.size() == 4);
  const auto table = slurp(fs::path(c.out) / "runs.csv");
  CHECK(std::count(table.begin(), table.end(), '\n') == 5);
  CHECK(fs::exists(fs::path(c.out) / "curve.dat"));
  CHECK(fs::exists(fs::path(c.out) / "config.json"));
  CHECK(slurp(fs::path(c.out) / "aggregate.csv") == aggregate_csv(aggregate(runs)));

  // A run whose dataset cannot be balanced fails alone.
  c.events = {50, 300, 300};
  c.windows = {2};
  c.replicates = 1;
  c.out = scratch("sweep_fail").string();
  const auto failed = run_sweep(c);
  REQUIRE(failed.size() == 1);
  CHECK_FALSE(failed[0].ok);
  CHECK(slurp(fs::path(c.out) / "runs.csv").find("error: ") != std::string::npos);
}
