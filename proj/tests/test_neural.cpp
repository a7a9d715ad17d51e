#include <doctest.h>

#include <cmath>
#include <cstdio>

#include "neurocep/error.hpp"
#include "neurocep/neural.hpp"
#include "neurocep/random.hpp"

using namespace ncep;

namespace {

Eigen::VectorXd random_input(Rng& rng, std::size_t n) {
  Eigen::VectorXd x(static_cast<Eigen::Index>(n));
  for (Eigen::Index i = 0; i < x.size(); ++i) x[i] = uniform_real(rng, 0.0, 1.0);
  return x;
}

double loss(const MLPParams& p, const Eigen::VectorXd& x, const Eigen::VectorXd& g) {
  return g.dot(predict(p, x));
}

}  // namespace

TEST_CASE("init") {
  const auto a = init_mlp(42);
  const auto b = init_mlp(42);
  CHECK(a == b);
  CHECK_FALSE(a == init_mlp(43));
  REQUIRE(a.layers() == 5);
  const std::pair<long, long> shapes[] = {{100, 128}, {80, 100}, {50, 80}, {25, 50}, {10, 25}};
  for (std::size_t l = 0; l < 5; ++l) {
    CHECK(a.weights[l].rows() == shapes[l].first);
    CHECK(a.weights[l].cols() == shapes[l].second);
    CHECK(a.biases[l].isZero(0.0));
    const double limit = std::sqrt(6.0 / static_cast<double>(shapes[l].first + shapes[l].second));
    CHECK(a.weights[l].cwiseAbs().maxCoeff() <= limit);
    CHECK(std::abs(a.weights[l].mean()) < limit / 5);
  }
}

TEST_CASE("forward produces a distribution") {
  const auto p = init_mlp(1);
  Rng rng(2);
  for (int i = 0; i < 20; ++i) {
    const auto trace = forward(p, random_input(rng, 128));
    CHECK(std::abs(trace.output().sum() - 1.0) <= 1e-9);
    CHECK((trace.output().array() > 0.0).all());
    CHECK(trace.output() == predict(p, trace.activations.front()));
  }
  const auto zero = p.zeros_like();
  const auto y = predict(zero, random_input(rng, 128));
  for (Eigen::Index k = 0; k < 10; ++k) CHECK(y[k] == doctest::Approx(0.1).epsilon(1e-15));
  CHECK_THROWS_AS(forward(p, Eigen::VectorXd::Zero(127)), ShapeError);

  // Extreme weights still give a valid softmax.
  auto big = p;
  big.weights.back() *= 1e4;
  const auto yb = predict(big, random_input(rng, 128));
  CHECK(yb.allFinite());
  CHECK(std::abs(yb.sum() - 1.0) <= 1e-9);
}

TEST_CASE("feature scaling") {
  const std::vector<int> raw = {1, 255, 51};
  const auto x = scale_features(raw);
  CHECK(x[0] == 1.0 / 255.0);
  CHECK(x[1] == 1.0);
  CHECK(x[2] == 0.2);
}

TEST_CASE("backward matches central differences") {
  Rng rng(7);
  const double h = 1e-5;
  for (int trial = 0; trial < 20; ++trial) {
    auto p = init_mlp(100 + static_cast<std::uint64_t>(trial));
    for (auto& b : p.biases) {
      for (Eigen::Index i = 0; i < b.size(); ++i) b[i] = uniform_real(rng, -0.1, 0.1);
    }
    const auto x = random_input(rng, 128);
    Eigen::VectorXd g(10);
    for (Eigen::Index i = 0; i < 10; ++i) g[i] = uniform_real(rng, -1.0, 1.0);
    const auto grads = backward(forward(p, x), p, g);
    // A sample of entries in every layer.
    for (std::size_t l = 0; l < p.layers(); ++l) {
      for (int s = 0; s < 15; ++s) {
        const auto r = static_cast<Eigen::Index>(uniform_index(rng, static_cast<std::uint64_t>(p.weights[l].rows())));
        const auto c = static_cast<Eigen::Index>(uniform_index(rng, static_cast<std::uint64_t>(p.weights[l].cols())));
        const double saved = p.weights[l](r, c);
        p.weights[l](r, c) = saved + h;
        const double up = loss(p, x, g);
        p.weights[l](r, c) = saved - h;
        const double down = loss(p, x, g);
        p.weights[l](r, c) = saved;
        const double fd = (up - down) / (2 * h);
        CHECK(std::abs(fd - grads.weights[l](r, c)) <= 1e-4 * std::max(1e-4, std::abs(fd)));
      }
      const auto r = static_cast<Eigen::Index>(uniform_index(rng, static_cast<std::uint64_t>(p.biases[l].size())));
      const double saved = p.biases[l][r];
      p.biases[l][r] = saved + h;
      const double up = loss(p, x, g);
      p.biases[l][r] = saved - h;
      const double down = loss(p, x, g);
      p.biases[l][r] = saved;
      const double fd = (up - down) / (2 * h);
      CHECK(std::abs(fd - grads.biases[l][r]) <= 1e-4 * std::max(1e-4, std::abs(fd)));
    }
  }
}

TEST_CASE("zero output gradient and dead units") {
  const auto p = init_mlp(5);
  Rng rng(6);
  const auto x = random_input(rng, 128);
  const auto trace = forward(p, x);
  const auto zero = backward(trace, p, Eigen::VectorXd::Zero(10));
  CHECK(zero == p.zeros_like());

  const auto g = backward(trace, p, Eigen::VectorXd::LinSpaced(10, -1.0, 1.0));
  for (Eigen::Index i = 0; i < trace.pre[0].size(); ++i) {
    if (trace.pre[0][i] <= 0.0) {
      CHECK(g.weights[0].row(i).isZero(0.0));
      CHECK(g.biases[0][i] == 0.0);
    }
  }
}

TEST_CASE("adam") {
  SUBCASE("single scalar, first step") {
    MLPParams p;
    p.widths = {1, 1};
    p.weights = {Eigen::MatrixXd::Constant(1, 1, 0.5)};
    p.biases = {Eigen::VectorXd::Zero(1)};
    auto g = p.zeros_like();
    g.weights[0](0, 0) = 1.0;
    auto state = OptimizerState::for_params(p);
    adam_step(state, p, g);
    CHECK(p.weights[0](0, 0) == doctest::Approx(0.5 - 0.001).epsilon(1e-9));
    CHECK(p.biases[0][0] == 0.0);
    CHECK(state.step == 1);
  }
  SUBCASE("zero gradients leave parameters unchanged") {
    auto p = init_mlp(3);
    const auto before = p;
    auto state = OptimizerState::for_params(p);
    adam_step(state, p, p.zeros_like());
    CHECK(p == before);
    CHECK(state.step == 1);
  }
  SUBCASE("deterministic") {
    auto p1 = init_mlp(3);
    auto p2 = init_mlp(3);
    Rng rng(1);
    const auto g = backward(forward(p1, random_input(rng, 128)), p1, Eigen::VectorXd::Ones(10));
    auto s1 = OptimizerState::for_params(p1);
    auto s2 = OptimizerState::for_params(p2);
    adam_step(s1, p1, g);
    adam_step(s2, p2, g);
    CHECK(p1 == p2);
    CHECK(s1.m == s2.m);
    CHECK(s1.v == s2.v);
  }
  SUBCASE("non-finite gradient names the layer") {
    auto p = init_mlp(3);
    auto g = p.zeros_like();
    g.weights[2](0, 0) = std::nan("");
    auto state = OptimizerState::for_params(p);
    try {
      adam_step(state, p, g);
      FAIL("expected a numeric error");
    } catch (const NumericError& e) {
      CHECK(std::string(e.what()) == "non-finite gradient in layer 3");
    }
    CHECK(state.step == 0);
  }
}

TEST_CASE("checkpoint round trip is bit exact") {
  Checkpoint c{init_mlp(9), {2e-3, 0.8, 0.99, 1e-7}, 9};
  Rng rng(1);
  for (auto& b : c.params.biases) {
    for (Eigen::Index i = 0; i < b.size(); ++i) b[i] = uniform_real(rng, -1, 1) / 3.0;
  }
  const auto text = checkpoint_to_json(c);
  const auto back = checkpoint_from_json(text);
  CHECK(back.params == c.params);
  CHECK(back.optimizer.learning_rate == 2e-3);
  CHECK(back.optimizer.beta2 == 0.99);
  CHECK(back.seed == 9);
  CHECK(checkpoint_to_json(back) == text);

  const std::string path = "test_neural_checkpoint.json";
  save_checkpoint(path, c);
  CHECK(load_checkpoint(path).params == c.params);
  std::remove(path.c_str());

  CHECK_THROWS_AS(checkpoint_from_json("{}"), SchemaError);
  CHECK_THROWS_AS(checkpoint_from_json("not json"), SchemaError);
  CHECK_THROWS_AS(load_checkpoint("/nonexistent/x.json"), IoError);
}
