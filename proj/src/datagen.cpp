#include "neurocep/datagen.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <sstream>

#include <nlohmann/json.hpp>

#include "neurocep/engine.hpp"
#include "neurocep/error.hpp"
#include "neurocep/random.hpp"
#include "neurocep/stdlib.hpp"

namespace ncep {

std::string label_name(int label) { return label == kNullLabel ? "null" : "ce_" + std::to_string(label); }

int parse_label(const std::string& text) {
  if (text == "null") return kNullLabel;
  if (text.size() > 3 && text.compare(0, 3, "ce_") == 0) {
    try {
      std::size_t used = 0;
      const int v = std::stoi(text.substr(3), &used);
      if (used == text.size() - 3 && v >= 0) return v;
    } catch (const std::exception&) {
    }
  }
  throw SchemaError("bad complex-event label '" + text + "'");
}

FeatureModel FeatureModel::make(std::uint64_t seed, double sigma, std::size_t classes, std::size_t dim) {
  if (!(sigma >= 0.0)) throw ValidationError("sigma must be nonnegative");
  Rng rng(seed);
  FeatureModel m;
  m.sigma = sigma;
  m.centroids.assign(classes, std::vector<double>(dim));
  for (auto& c : m.centroids) {
    for (auto& x : c) x = uniform_real(rng, kFeatureMin, kFeatureMax);
  }
  return m;
}

std::vector<int> EventStream::classes() const {
  std::vector<int> out;
  out.reserve(events.size());
  for (const auto& e : events) {
    if (!e.true_class) throw SchemaError("event " + std::to_string(e.timestamp) + " has no true class");
    out.push_back(*e.true_class);
  }
  return out;
}

EventStream synth_stream(std::span<const std::size_t> counts, const FeatureModel& model, std::uint64_t seed) {
  if (counts.size() > model.classes()) throw ValidationError("more class counts than feature classes");
  std::vector<int> order;
  for (std::size_t c = 0; c < counts.size(); ++c) order.insert(order.end(), counts[c], static_cast<int>(c));
  Rng shuffle_rng(derive_seed(seed, 0));
  shuffle(std::span<int>(order), shuffle_rng);

  Rng noise_rng(derive_seed(seed, 1));
  EventStream s;
  s.events.reserve(order.size());
  for (std::size_t i = 0; i < order.size(); ++i) {
    SimpleEvent e;
    e.timestamp = static_cast<std::int64_t>(i);
    e.true_class = order[i];
    const auto& centroid = model.centroids[static_cast<std::size_t>(order[i])];
    e.feature.resize(centroid.size());
    for (std::size_t k = 0; k < centroid.size(); ++k) {
      const double v = model.sigma > 0.0 ? centroid[k] + model.sigma * standard_normal(noise_rng) : centroid[k];
      e.feature[k] = static_cast<int>(std::clamp(std::round(v), double{kFeatureMin}, double{kFeatureMax}));
    }
    s.events.push_back(std::move(e));
  }
  return s;
}

CELabeling label_ce(std::span<const int> classes, std::int64_t window) {
  CELabeling out(classes.size(), kNullLabel);
  for (std::size_t t = 0; t < classes.size(); ++t) {
    if (auto c = label_oracle(classes, window, t)) out[t] = *c;
  }
  return out;
}

CELabeling label_ce(const EventStream& stream, std::int64_t window) {
  const auto classes = stream.classes();
  return label_ce(classes, window);
}

CELabeling inject_noise(const CELabeling& labeling, const NoiseConfig& config, std::size_t classes) {
  if (!(config.fraction >= 0.0 && config.fraction <= 1.0)) throw ValidationError("noise fraction must be in [0,1]");
  Rng rng(config.seed);
  CELabeling out = labeling;
  for (auto& l : out) {
    if (l == kNullLabel) continue;
    // Both draws happen for every CE label so the stream of randomness does
    // not depend on earlier outcomes.
    const bool flip = uniform01(rng) < config.fraction;
    const auto drawn = static_cast<int>(uniform_index(rng, classes));
    if (flip) l = drawn;
  }
  return out;
}

std::vector<TrainingPoint> balance(const CELabeling& labeling, std::size_t total, std::uint64_t seed,
                                   std::size_t classes) {
  const std::size_t buckets = classes + 1;
  std::vector<std::vector<std::int64_t>> by_class(buckets);
  for (std::size_t t = 1; t < labeling.size(); ++t) {
    const int l = labeling[t];
    const auto b = l == kNullLabel ? classes : static_cast<std::size_t>(l);
    by_class[b].push_back(static_cast<std::int64_t>(t));
  }
  Rng rng(seed);
  std::vector<TrainingPoint> out;
  out.reserve(total);
  for (std::size_t b = 0; b < buckets; ++b) {
    const std::size_t want = total / buckets + (b < total % buckets ? 1 : 0);
    auto& pool = by_class[b];
    const int label = b == classes ? kNullLabel : static_cast<int>(b);
    if (pool.size() < want)
      throw BalanceError("class " + label_name(label) + " has " + std::to_string(pool.size()) +
                         " candidate points but " + std::to_string(want) + " are needed");
    shuffle(std::span<std::int64_t>(pool), rng);
    for (std::size_t i = 0; i < want; ++i) out.push_back({pool[i], label});
  }
  std::sort(out.begin(), out.end(), [](const TrainingPoint& a, const TrainingPoint& b) { return a.timestamp < b.timestamp; });
  return out;
}

DatasetSeeds dataset_seeds(const DatasetConfig& config) {
  return {derive_seed(config.seed, 1), derive_seed(config.seed, 2), derive_seed(config.seed, 3),
          derive_seed(config.seed, 4), derive_seed(config.seed, 5)};
}

namespace {

std::vector<std::size_t> even_counts(std::size_t total, std::size_t classes) {
  std::vector<std::size_t> counts(classes, total / classes);
  for (std::size_t c = 0; c < total % classes; ++c) ++counts[c];
  return counts;
}

Split make_eval_split(std::string name, std::size_t events, const FeatureModel& model, std::uint64_t seed,
                      std::int64_t window) {
  Split s;
  s.name = std::move(name);
  const auto counts = even_counts(events, model.classes());
  s.stream = synth_stream(counts, model, seed);
  s.clean = label_ce(s.stream, window);
  for (std::size_t t = 0; t < s.clean.size(); ++t) s.points.push_back({static_cast<std::int64_t>(t), s.clean[t]});
  return s;
}

}  // namespace

Dataset make_splits(const DatasetConfig& config) {
  if (config.window < 1) throw ValidationError("window must be >= 1");
  const auto seeds = dataset_seeds(config);
  const auto model = FeatureModel::make(config.model_seed, config.sigma);
  Dataset d;
  d.config = config;
  d.train = make_eval_split("train", config.events[0], model, seeds.train, config.window);
  const auto noisy = inject_noise(d.train.clean, {config.noise, seeds.noise}, model.classes());
  try {
    d.train.points = balance(noisy, config.train_points, seeds.balance, model.classes());
  } catch (const BalanceError& e) {
    throw BalanceError(std::string(e.what()) + "; increase the training stream size");
  }
  d.validation = make_eval_split("validation", config.events[1], model, seeds.validation, config.window);
  d.test = make_eval_split("test", config.events[2], model, seeds.test, config.window);
  return d;
}

// ---------------------------------------------------------------------------
// Files

namespace {

void write_file(const std::filesystem::path& path, const std::string& content) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw IoError("cannot write " + path.string());
  f << content;
  if (!f) throw IoError("cannot write " + path.string());
}

std::string read_file(const std::filesystem::path& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw IoError("cannot read " + path.string());
  std::stringstream ss;
  ss << f.rdbuf();
  return ss.str();
}

std::vector<std::string> split_csv(const std::string& line) {
  std::vector<std::string> out;
  std::string cell;
  std::istringstream in(line);
  while (std::getline(in, cell, ',')) out.push_back(cell);
  if (!line.empty() && line.back() == ',') out.emplace_back();
  return out;
}

std::int64_t parse_int(const std::string& s, const std::string& where) {
  try {
    std::size_t used = 0;
    const auto v = std::stoll(s, &used);
    if (used == s.size()) return v;
  } catch (const std::exception&) {
  }
  throw SchemaError("expected an integer in " + where + ", found '" + s + "'");
}

std::vector<std::string> lines_of(const std::string& text) {
  std::vector<std::string> lines;
  std::istringstream in(text);
  std::string line;
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (!line.empty()) lines.push_back(line);
  }
  return lines;
}

std::string features_csv(const EventStream& stream, bool with_class) {
  std::string out = "timestamp";
  for (std::size_t k = 0; k < kFeatureDim; ++k) out += ",f" + std::to_string(k);
  out += ",trueClass\n";
  for (const auto& e : stream.events) {
    out += std::to_string(e.timestamp);
    for (int v : e.feature) {
      out += ',';
      out += std::to_string(v);
    }
    out += ',';
    if (with_class && e.true_class) out += std::to_string(*e.true_class);
    out += '\n';
  }
  return out;
}

std::string labels_csv(const std::vector<TrainingPoint>& points) {
  std::string out = "timestamp,ceLabel\n";
  for (const auto& p : points) out += std::to_string(p.timestamp) + "," + label_name(p.label) + "\n";
  return out;
}

}  // namespace

void write_dataset(const std::string& dir, const Dataset& dataset) {
  namespace fs = std::filesystem;
  const auto seeds = dataset_seeds(dataset.config);
  const auto& c = dataset.config;
  for (const Split* s : {&dataset.train, &dataset.validation, &dataset.test}) {
    const fs::path root = fs::path(dir) / s->name;
    std::error_code ec;
    fs::create_directories(root, ec);
    if (ec) throw IoError("cannot create " + root.string() + ": " + ec.message());
    const bool train = s->name == "train";
    write_file(root / "features.csv", features_csv(s->stream, !train));
    write_file(root / "labels.csv", labels_csv(s->points));
    nlohmann::json meta;
    meta["split"] = s->name;
    meta["window"] = c.window;
    meta["noise"] = train ? c.noise : 0.0;
    meta["seed"] = c.seed;
    meta["seeds"] = {{"train", seeds.train}, {"validation", seeds.validation}, {"test", seeds.test},
                     {"noise", seeds.noise}, {"balance", seeds.balance}, {"model", c.model_seed}};
    meta["sigma"] = c.sigma;
    meta["events"] = s->stream.size();
    meta["points"] = s->points.size();
    meta["class_names"] = sound_class_names();
    write_file(root / "meta.json", meta.dump(2) + "\n");
  }
}

EventStream read_features(const std::string& path) {
  const auto lines = lines_of(read_file(path));
  if (lines.empty()) throw SchemaError(path + " is empty");
  const auto header = split_csv(lines.front());
  if (header.size() < 2 || header.front() != "timestamp")
    throw SchemaError(path + ": header must start with 'timestamp'");
  const bool has_class = header.back() == "trueClass";
  const std::size_t dim = header.size() - 1 - (has_class ? 1 : 0);
  EventStream s;
  for (std::size_t i = 1; i < lines.size(); ++i) {
    const auto cells = split_csv(lines[i]);
    const std::string where = path + " line " + std::to_string(i + 1);
    if (cells.size() != header.size())
      throw SchemaError(where + ": expected " + std::to_string(header.size()) + " columns, found " +
                        std::to_string(cells.size()));
    SimpleEvent e;
    e.timestamp = parse_int(cells[0], where);
    if (e.timestamp != static_cast<std::int64_t>(s.events.size()))
      throw SchemaError(where + ": timestamps must be contiguous from 0");
    e.feature.reserve(dim);
    for (std::size_t k = 0; k < dim; ++k) {
      const auto v = parse_int(cells[k + 1], where);
      if (v < kFeatureMin || v > kFeatureMax) throw SchemaError(where + ": feature outside [1,255]");
      e.feature.push_back(static_cast<int>(v));
    }
    if (has_class && !cells.back().empty()) e.true_class = static_cast<int>(parse_int(cells.back(), where));
    s.events.push_back(std::move(e));
  }
  return s;
}

LoadedSplit read_split(const std::string& dir) {
  namespace fs = std::filesystem;
  LoadedSplit out;
  out.stream = read_features((fs::path(dir) / "features.csv").string());
  const auto label_path = (fs::path(dir) / "labels.csv").string();
  const auto lines = lines_of(read_file(label_path));
  if (lines.empty() || lines.front() != "timestamp,ceLabel")
    throw SchemaError(label_path + ": header must be 'timestamp,ceLabel'");
  for (std::size_t i = 1; i < lines.size(); ++i) {
    const auto cells = split_csv(lines[i]);
    const std::string where = label_path + " line " + std::to_string(i + 1);
    if (cells.size() != 2) throw SchemaError(where + ": expected 2 columns");
    TrainingPoint p{parse_int(cells[0], where), parse_label(cells[1])};
    if (p.timestamp < 0 || p.timestamp >= static_cast<std::int64_t>(out.stream.size()))
      throw SchemaError(where + ": timestamp outside the stream");
    out.points.push_back(p);
  }
  const auto meta_path = fs::path(dir) / "meta.json";
  try {
    const auto meta = nlohmann::json::parse(read_file(meta_path));
    out.window = meta.at("window").get<std::int64_t>();
    out.noise = meta.at("noise").get<double>();
    out.seed = meta.at("seed").get<std::uint64_t>();
    out.class_names = meta.at("class_names").get<std::vector<std::string>>();
  } catch (const nlohmann::json::exception& e) {
    throw SchemaError(meta_path.string() + ": " + e.what());
  }
  return out;
}

}  // namespace ncep
