#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Dense>

namespace ncep {

/// Layer widths of the perception network, input first.
inline const std::vector<std::size_t> kDefaultWidths = {128, 100, 80, 50, 25, 10};

/// Weights and biases of a fully connected ReLU network with a softmax head.
/// Layer l maps widths[l] inputs to widths[l+1] outputs.
struct MLPParams {
  std::vector<std::size_t> widths;
  std::vector<Eigen::MatrixXd> weights;  // widths[l+1] x widths[l]
  std::vector<Eigen::VectorXd> biases;

  std::size_t layers() const { return weights.size(); }
  std::size_t inputs() const { return widths.front(); }
  std::size_t outputs() const { return widths.back(); }

  /// Same shapes, every entry zero.
  MLPParams zeros_like() const;
  bool operator==(const MLPParams& other) const;
};

/// Glorot-uniform weights in +-sqrt(6 / (fan_in + fan_out)), zero biases.
MLPParams init_mlp(std::uint64_t seed, const std::vector<std::size_t>& widths = kDefaultWidths);

/// Raw feature values (1..255) divided by 255.
Eigen::VectorXd scale_features(std::span<const int> raw);

struct ForwardTrace {
  std::vector<Eigen::VectorXd> activations;  // input, hidden ReLU outputs, softmax output
  std::vector<Eigen::VectorXd> pre;          // affine outputs per layer
  const Eigen::VectorXd& output() const { return activations.back(); }
};

/// Throws ShapeError on a wrong input length.
ForwardTrace forward(const MLPParams& params, const Eigen::VectorXd& input);

/// Softmax output only.
Eigen::VectorXd predict(const MLPParams& params, const Eigen::VectorXd& input);

/// Adds d(loss)/d(parameters) into `grads` given d(loss)/d(softmax output).
void backward_accumulate(const ForwardTrace& trace, const MLPParams& params, const Eigen::VectorXd& grad_out,
                         MLPParams& grads);

MLPParams backward(const ForwardTrace& trace, const MLPParams& params, const Eigen::VectorXd& grad_out);

struct AdamConfig {
  double learning_rate = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
};

struct OptimizerState {
  AdamConfig config;
  MLPParams m;
  MLPParams v;
  std::int64_t step = 0;

  static OptimizerState for_params(const MLPParams& params, AdamConfig config = {});
};

/// One Adam update. Throws NumericError naming the layer if a gradient is not finite;
/// nothing is modified in that case.
void adam_step(OptimizerState& state, MLPParams& params, const MLPParams& grads);

struct Checkpoint {
  MLPParams params;
  AdamConfig optimizer;
  std::uint64_t seed = 0;
};

std::string checkpoint_to_json(const Checkpoint& checkpoint);
/// Throws SchemaError on malformed or inconsistent content.
Checkpoint checkpoint_from_json(const std::string& text);

void save_checkpoint(const std::string& path, const Checkpoint& checkpoint);
Checkpoint load_checkpoint(const std::string& path);

}  // namespace ncep
