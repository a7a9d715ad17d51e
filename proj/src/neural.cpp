#include "neurocep/neural.hpp"

#include <cmath>
#include <fstream>
#include <sstream>

#include <nlohmann/json.hpp>

#include "neurocep/error.hpp"
#include "neurocep/random.hpp"

namespace ncep {

MLPParams MLPParams::zeros_like() const {
  MLPParams z;
  z.widths = widths;
  for (std::size_t l = 0; l < layers(); ++l) {
    z.weights.push_back(Eigen::MatrixXd::Zero(weights[l].rows(), weights[l].cols()));
    z.biases.push_back(Eigen::VectorXd::Zero(biases[l].size()));
  }
  return z;
}

bool MLPParams::operator==(const MLPParams& other) const {
  if (widths != other.widths || layers() != other.layers()) return false;
  for (std::size_t l = 0; l < layers(); ++l) {
    if (weights[l] != other.weights[l] || biases[l] != other.biases[l]) return false;
  }
  return true;
}

MLPParams init_mlp(std::uint64_t seed, const std::vector<std::size_t>& widths) {
  if (widths.size() < 2) throw ShapeError("a network needs at least an input and an output width");
  Rng rng(seed);
  MLPParams p;
  p.widths = widths;
  for (std::size_t l = 0; l + 1 < widths.size(); ++l) {
    const auto in = widths[l];
    const auto out = widths[l + 1];
    const double limit = std::sqrt(6.0 / static_cast<double>(in + out));
    Eigen::MatrixXd w(out, in);
    for (Eigen::Index r = 0; r < w.rows(); ++r) {
      for (Eigen::Index c = 0; c < w.cols(); ++c) w(r, c) = uniform_real(rng, -limit, limit);
    }
    p.weights.push_back(std::move(w));
    p.biases.push_back(Eigen::VectorXd::Zero(static_cast<Eigen::Index>(out)));
  }
  return p;
}

Eigen::VectorXd scale_features(std::span<const int> raw) {
  Eigen::VectorXd x(static_cast<Eigen::Index>(raw.size()));
  for (std::size_t i = 0; i < raw.size(); ++i) x[static_cast<Eigen::Index>(i)] = raw[i] / 255.0;
  return x;
}

namespace {

void softmax_in_place(Eigen::VectorXd& z) {
  const double m = z.maxCoeff();
  z = (z.array() - m).exp();
  z /= z.sum();
}

void check_input(const MLPParams& params, const Eigen::VectorXd& input) {
  if (static_cast<std::size_t>(input.size()) != params.inputs())
    throw ShapeError("expected " + std::to_string(params.inputs()) + " features, got " +
                     std::to_string(input.size()));
}

}  // namespace

ForwardTrace forward(const MLPParams& params, const Eigen::VectorXd& input) {
  check_input(params, input);
  ForwardTrace trace;
  trace.activations.reserve(params.layers() + 1);
  trace.pre.reserve(params.layers());
  trace.activations.push_back(input);
  for (std::size_t l = 0; l < params.layers(); ++l) {
    Eigen::VectorXd z = params.weights[l] * trace.activations.back() + params.biases[l];
    trace.pre.push_back(z);
    if (l + 1 < params.layers()) {
      z = z.cwiseMax(0.0);
    } else {
      softmax_in_place(z);
    }
    trace.activations.push_back(std::move(z));
  }
  return trace;
}

Eigen::VectorXd predict(const MLPParams& params, const Eigen::VectorXd& input) {
  check_input(params, input);
  Eigen::VectorXd a = input;
  for (std::size_t l = 0; l < params.layers(); ++l) {
    Eigen::VectorXd z = params.weights[l] * a + params.biases[l];
    if (l + 1 < params.layers()) {
      a = z.cwiseMax(0.0);
    } else {
      softmax_in_place(z);
      a = std::move(z);
    }
  }
  return a;
}

void backward_accumulate(const ForwardTrace& trace, const MLPParams& params, const Eigen::VectorXd& grad_out,
                         MLPParams& grads) {
  const auto layers = params.layers();
  if (trace.pre.size() != layers || trace.activations.size() != layers + 1 || grads.layers() != layers)
    throw ShapeError("trace does not match the network");
  if (static_cast<std::size_t>(grad_out.size()) != params.outputs())
    throw ShapeError("output gradient has the wrong length");
  const Eigen::VectorXd& y = trace.output();
  // Softmax Jacobian-vector product.
  Eigen::VectorXd delta = y.cwiseProduct(grad_out.array().matrix() - Eigen::VectorXd::Constant(y.size(), grad_out.dot(y)));
  for (std::size_t l = layers; l-- > 0;) {
    grads.weights[l].noalias() += delta * trace.activations[l].transpose();
    grads.biases[l] += delta;
    if (l == 0) break;
    Eigen::VectorXd back = params.weights[l].transpose() * delta;
    const Eigen::VectorXd& z = trace.pre[l - 1];
    for (Eigen::Index i = 0; i < back.size(); ++i) {
      if (z[i] <= 0.0) back[i] = 0.0;
    }
    delta = std::move(back);
  }
}

MLPParams backward(const ForwardTrace& trace, const MLPParams& params, const Eigen::VectorXd& grad_out) {
  MLPParams grads = params.zeros_like();
  backward_accumulate(trace, params, grad_out, grads);
  return grads;
}

OptimizerState OptimizerState::for_params(const MLPParams& params, AdamConfig config) {
  OptimizerState s;
  s.config = config;
  s.m = params.zeros_like();
  s.v = params.zeros_like();
  return s;
}

void adam_step(OptimizerState& state, MLPParams& params, const MLPParams& grads) {
  if (grads.layers() != params.layers() || state.m.layers() != params.layers())
    throw ShapeError("optimizer state does not match the network");
  for (std::size_t l = 0; l < grads.layers(); ++l) {
    if (!grads.weights[l].allFinite() || !grads.biases[l].allFinite())
      throw NumericError("non-finite gradient in layer " + std::to_string(l + 1));
  }
  const auto& c = state.config;
  ++state.step;
  const double t = static_cast<double>(state.step);
  const double correct1 = 1.0 - std::pow(c.beta1, t);
  const double correct2 = 1.0 - std::pow(c.beta2, t);
  auto update = [&](auto& param, auto& m, auto& v, const auto& g) {
    m = c.beta1 * m + (1.0 - c.beta1) * g;
    v = c.beta2 * v + (1.0 - c.beta2) * g.cwiseProduct(g);
    param.array() -= c.learning_rate * (m.array() / correct1) / ((v.array() / correct2).sqrt() + c.epsilon);
  };
  for (std::size_t l = 0; l < params.layers(); ++l) {
    update(params.weights[l], state.m.weights[l], state.v.weights[l], grads.weights[l]);
    update(params.biases[l], state.m.biases[l], state.v.biases[l], grads.biases[l]);
  }
}

// ---------------------------------------------------------------------------
// Checkpoints

std::string checkpoint_to_json(const Checkpoint& checkpoint) {
  const auto& p = checkpoint.params;
  nlohmann::json j;
  j["widths"] = p.widths;
  j["weights"] = nlohmann::json::array();
  j["biases"] = nlohmann::json::array();
  for (std::size_t l = 0; l < p.layers(); ++l) {
    std::vector<double> flat;
    flat.reserve(static_cast<std::size_t>(p.weights[l].size()));
    for (Eigen::Index r = 0; r < p.weights[l].rows(); ++r) {
      for (Eigen::Index c = 0; c < p.weights[l].cols(); ++c) flat.push_back(p.weights[l](r, c));
    }
    j["weights"].push_back(flat);
    j["biases"].push_back(std::vector<double>(p.biases[l].data(), p.biases[l].data() + p.biases[l].size()));
  }
  j["optimizer"] = {{"name", "adam"},
                    {"learning_rate", checkpoint.optimizer.learning_rate},
                    {"beta1", checkpoint.optimizer.beta1},
                    {"beta2", checkpoint.optimizer.beta2},
                    {"epsilon", checkpoint.optimizer.epsilon}};
  j["seed"] = checkpoint.seed;
  return j.dump() + "\n";
}

Checkpoint checkpoint_from_json(const std::string& text) {
  Checkpoint out;
  try {
    const auto j = nlohmann::json::parse(text);
    auto& p = out.params;
    p.widths = j.at("widths").get<std::vector<std::size_t>>();
    if (p.widths.size() < 2) throw SchemaError("checkpoint needs at least two widths");
    const auto& weights = j.at("weights");
    const auto& biases = j.at("biases");
    if (weights.size() + 1 != p.widths.size() || biases.size() + 1 != p.widths.size())
      throw SchemaError("checkpoint layer count does not match its widths");
    for (std::size_t l = 0; l + 1 < p.widths.size(); ++l) {
      const auto rows = static_cast<Eigen::Index>(p.widths[l + 1]);
      const auto cols = static_cast<Eigen::Index>(p.widths[l]);
      const auto flat = weights[l].get<std::vector<double>>();
      const auto bias = biases[l].get<std::vector<double>>();
      if (flat.size() != static_cast<std::size_t>(rows * cols) || bias.size() != static_cast<std::size_t>(rows))
        throw SchemaError("checkpoint layer " + std::to_string(l + 1) + " has the wrong size");
      Eigen::MatrixXd w(rows, cols);
      for (Eigen::Index r = 0; r < rows; ++r) {
        for (Eigen::Index c = 0; c < cols; ++c) w(r, c) = flat[static_cast<std::size_t>(r * cols + c)];
      }
      p.weights.push_back(std::move(w));
      p.biases.push_back(Eigen::Map<const Eigen::VectorXd>(bias.data(), rows));
    }
    const auto& o = j.at("optimizer");
    out.optimizer.learning_rate = o.at("learning_rate").get<double>();
    out.optimizer.beta1 = o.at("beta1").get<double>();
    out.optimizer.beta2 = o.at("beta2").get<double>();
    out.optimizer.epsilon = o.at("epsilon").get<double>();
    out.seed = j.at("seed").get<std::uint64_t>();
  } catch (const nlohmann::json::exception& e) {
    throw SchemaError(std::string("malformed checkpoint: ") + e.what());
  }
  return out;
}

void save_checkpoint(const std::string& path, const Checkpoint& checkpoint) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw IoError("cannot write " + path);
  f << checkpoint_to_json(checkpoint);
  if (!f) throw IoError("cannot write " + path);
}

Checkpoint load_checkpoint(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw IoError("cannot read " + path);
  std::stringstream ss;
  ss << f.rdbuf();
  return checkpoint_from_json(ss.str());
}

}  // namespace ncep
