#include <doctest.h>

#include <cmath>

#include <nlohmann/json.hpp>

#include "neurocep/circuit.hpp"
#include "neurocep/error.hpp"
#include "neurocep/rulelang.hpp"
#include "neurocep/stdlib.hpp"
#include "support/beliefs.hpp"

using namespace ncep;
using ncep::testing::random_beliefs;

namespace {

Literal d(std::int64_t t, int k) { return {{VariableKey::Kind::Neural, 0, t}, k}; }

Atom happens(int cls, std::int64_t t) {
  return {"happensAt",
          {Term::constant(complex_event_name(sound_class_names()[static_cast<std::size_t>(cls)])),
           Term::integer(t)}};
}

constexpr int kSiren = 8;

}  // namespace

TEST_CASE("empty proof set is the constant-0 circuit") {
  const Circuit c = compile(std::vector<Proof>{});
  Rng rng(1);
  const auto b = random_beliefs(rng, 0, 4, 10);
  CHECK(c.evaluate(b) == 0.0);
  const auto g = c.gradient(b);
  CHECK(std::all_of(g.data.begin(), g.data.end(), [](double x) { return x == 0.0; }));
  CHECK(brute_force_prob(std::vector<Proof>{}, b) == 0.0);
}

TEST_CASE("single conjunction") {
  const Circuit c = compile(std::vector<Proof>{{d(4, kSiren), d(5, kSiren)}});
  Rng rng(2);
  const auto b = random_beliefs(rng, 0, 8, 10);
  CHECK(c.evaluate(b) == doctest::Approx(b.at(5, kSiren) * b.at(4, kSiren)).epsilon(1e-15));
  const auto g = c.gradient(b);
  CHECK(g.at(5, kSiren) == doctest::Approx(b.at(4, kSiren)).epsilon(1e-15));
  CHECK(g.at(4, kSiren) == doctest::Approx(b.at(5, kSiren)).epsilon(1e-15));
  CHECK(g.at(3, kSiren) == 0.0);
  CHECK(g.at(5, 0) == 0.0);
}

TEST_CASE("overlapping proofs are not double counted") {
  const std::vector<Proof> proofs = {{d(4, 0), d(5, 0)}, {d(3, 0), d(5, 0)}};
  BeliefTable b = BeliefTable::uniform(3, 3, 10);
  auto set = [&](std::int64_t t, double p) {
    for (std::size_t k = 0; k < 10; ++k) b.at(t, k) = (1.0 - p) / 9.0;
    b.at(t, 0) = p;
  };
  set(5, 0.5);
  set(4, 0.2);
  set(3, 0.3);
  CHECK(compile(proofs).evaluate(b) == doctest::Approx(0.22).epsilon(1e-12));
  CHECK(brute_force_prob(proofs, b) == doctest::Approx(0.22).epsilon(1e-12));
}

TEST_CASE("uniform beliefs at window 2") {
  const Program p = default_rules();
  Solver s(p, StreamContext::contiguous(10, 2));
  const auto b = BeliefTable::uniform(0, 10, 10);
  for (int c = 0; c < 10; ++c)
    CHECK(compile(s.solve(happens(c, 6))).evaluate(b) == doctest::Approx(0.01).epsilon(1e-12));
}

TEST_CASE("one-hot beliefs reproduce the oracle") {
  const Program p = default_rules();
  Rng rng(5);
  for (std::int64_t w = 2; w <= 5; ++w) {
    std::vector<int> labels(30);
    for (auto& l : labels) l = static_cast<int>(uniform_index(rng, 4));  // few classes: many repeats
    const auto b = BeliefTable::one_hot(0, labels, 10);
    Solver s(p, StreamContext::contiguous(labels.size(), w));
    for (std::size_t t = 0; t < labels.size(); ++t) {
      const auto oracle = label_oracle(labels, w, t);
      for (int c = 0; c < 10; ++c) {
        const double v = compile(s.solve(happens(c, static_cast<std::int64_t>(t)))).evaluate(b);
        CHECK(v == (oracle == c ? 1.0 : 0.0));
      }
    }
  }
}

TEST_CASE("compile matches enumeration") {
  const Program p = default_rules();
  Rng rng(11);
  for (int trial = 0; trial < 100; ++trial) {
    const auto w = 2 + static_cast<std::int64_t>(trial % 4);
    const std::size_t len = 8;
    Solver s(p, StreamContext::contiguous(len, w));
    const auto b = random_beliefs(rng, 0, len, 10);
    const auto t = static_cast<std::int64_t>(uniform_index(rng, len));
    const int c = static_cast<int>(uniform_index(rng, 10));
    const auto proofs = s.solve(happens(c, t));
    CHECK(std::abs(compile(proofs).evaluate(b) - brute_force_prob(proofs, b)) <= 1e-9);
  }
}

TEST_CASE("compile matches enumeration on arbitrary proof sets") {
  // Random DNFs over 3 classes and up to 5 timestamps, including several
  // outcomes of one variable across proofs.
  Rng rng(12);
  for (int trial = 0; trial < 200; ++trial) {
    std::vector<Proof> proofs;
    const auto n = uniform_index(rng, 5);
    for (std::size_t i = 0; i < n; ++i) {
      std::map<std::int64_t, int> lits;
      const auto m = uniform_index(rng, 4);
      for (std::size_t j = 0; j < m; ++j)
        lits[static_cast<std::int64_t>(uniform_index(rng, 5))] = static_cast<int>(uniform_index(rng, 3));
      Proof pr;
      for (auto [t, k] : lits) pr.push_back(d(t, k));
      proofs.push_back(pr);
    }
    const auto b = random_beliefs(rng, 0, 5, 3);
    const Circuit c = compile(proofs);
    CHECK(std::abs(c.evaluate(b) - brute_force_prob(proofs, b)) <= 1e-12);
  }
}

TEST_CASE("annotated disjunctions compile to constants") {
  const Program p = parse_program(
      "nn(net, [T], C, [x, y]) :: d(T, C).\n"
      "0.3::heads.\n"
      "0.2::red; 0.5::green; 0.3::blue.\n"
      "q :- heads, d(1, x).\n"
      "q :- green, d(2, y).\n"
      "q :- red, heads.\n");
  const auto proofs = solve(p, StreamContext::contiguous(3, 2), {"q", {}});
  Rng rng(4);
  for (int i = 0; i < 10; ++i) {
    const auto b = random_beliefs(rng, 0, 3, 2);
    CHECK(compile(proofs).evaluate(b) == doctest::Approx(brute_force_prob(proofs, b)).epsilon(1e-12));
  }
}

TEST_CASE("gradient matches central differences") {
  const Program p = default_rules();
  Rng rng(21);
  const double h = 1e-5;
  for (int trial = 0; trial < 100; ++trial) {
    const auto w = 2 + static_cast<std::int64_t>(trial % 4);
    Solver s(p, StreamContext::contiguous(8, w));
    const int cls = static_cast<int>(uniform_index(rng, 10));
    const Circuit c = compile(s.solve(happens(cls, 7)));
    auto b = random_beliefs(rng, 0, 8, 10);
    const auto g = c.gradient(b);
    for (std::int64_t t = 0; t < 8; ++t) {
      for (std::size_t k = 0; k < 10; ++k) {
        const double saved = b.at(t, k);
        b.at(t, k) = saved + h;
        const double up = c.evaluate(b);
        b.at(t, k) = saved - h;
        const double down = c.evaluate(b);
        b.at(t, k) = saved;
        const double fd = (up - down) / (2 * h);
        CHECK(std::abs(fd - g.at(t, k)) <= 1e-4 * std::max(1e-3, std::abs(fd)));
      }
    }
  }
}

TEST_CASE("circuits are multilinear and monotone") {
  const Program p = default_rules();
  Rng rng(31);
  Solver s(p, StreamContext::contiguous(8, 5));
  const Circuit c = compile(s.solve(happens(3, 6)));
  for (int trial = 0; trial < 20; ++trial) {
    auto b = random_beliefs(rng, 0, 8, 10);
    for (std::int64_t t = 2; t <= 6; ++t) {
      const double saved = b.at(t, 3);
      b.at(t, 3) = 0.2;
      const double a0 = c.evaluate(b);
      b.at(t, 3) = 0.5;
      const double a1 = c.evaluate(b);
      b.at(t, 3) = 0.8;
      const double a2 = c.evaluate(b);
      b.at(t, 3) = saved;
      CHECK(std::abs(a2 - 2 * a1 + a0) <= 1e-9);
      CHECK(a1 >= a0);
      CHECK(a2 >= a1);
    }
  }
}

TEST_CASE("node count stays linear in the window") {
  const Program p = default_rules();
  for (std::int64_t w = 2; w <= 5; ++w) {
    Solver s(p, StreamContext::contiguous(20, w));
    const Circuit c = compile(s.solve(happens(0, 10)));
    CHECK(c.size() <= static_cast<std::size_t>(5 * w));
    CHECK(c.timestamps().size() == static_cast<std::size_t>(w));
  }
}

TEST_CASE("missing beliefs raise a binding error") {
  const Circuit c = compile(std::vector<Proof>{{d(4, 0), d(9, 0)}});
  const auto b = BeliefTable::uniform(0, 6, 10);
  try {
    c.evaluate(b);
    FAIL("expected a binding error");
  } catch (const BindingError& e) {
    CHECK(std::string(e.what()).find("timestamp 9") != std::string::npos);
  }
  CHECK_THROWS_AS(c.gradient(b), BindingError);
}

TEST_CASE("enumeration guard") {
  Proof big;
  for (int t = 0; t < 8; ++t) big.push_back(d(t, 0));
  CHECK_THROWS_AS(brute_force_prob(std::vector<Proof>{big}, BeliefTable::uniform(0, 8, 2)), ResourceError);
  CHECK(brute_force_prob(std::vector<Proof>{Proof{}}, BeliefTable::uniform(0, 1, 2)) == 1.0);
  CHECK(compile(std::vector<Proof>{Proof{}}).evaluate(BeliefTable::uniform(0, 1, 2)) == 1.0);
}

TEST_CASE("translated circuits and the cache") {
  const Program p = default_rules();
  const auto hash = program_hash(p);
  Solver s(p, StreamContext::contiguous(30, 5));
  Rng rng(41);
  const auto b = random_beliefs(rng, 0, 30, 10);

  const auto q5 = happens(kSiren, 5);
  const auto q17 = happens(kSiren, 17);
  const auto p5 = s.solve(q5);
  const auto p17 = s.solve(q17);
  const auto k5 = make_circuit_key(hash, 5, q5, 5, p5);
  const auto k17 = make_circuit_key(hash, 5, q17, 17, p17);
  CHECK(k5 == k17);
  CHECK(compile(p5).translated(12).evaluate(b) == compile(p17).evaluate(b));

  CircuitCache cache;
  const auto first = cache.get_or_compile(k5);
  const auto again = cache.get_or_compile(k17);
  CHECK(first == again);
  CHECK(cache.hits() == 1);
  CHECK(cache.misses() == 1);
  CHECK(again->evaluate(b, 17) == compile(p17).evaluate(b));

  // Near the stream start fewer predecessors exist.
  const auto q2 = happens(kSiren, 2);
  const auto k2 = make_circuit_key(hash, 5, q2, 2, s.solve(q2));
  CHECK_FALSE(k2 == k5);
  CHECK(cache.lookup(k2) == nullptr);

  // Different class, different key.
  const auto q5b = happens(0, 5);
  CHECK_FALSE(make_circuit_key(hash, 5, q5b, 5, s.solve(q5b)) == k5);

  // Cached and fresh evaluation agree bit for bit at every timestamp.
  for (std::int64_t t = 0; t < 30; ++t) {
    const auto q = happens(kSiren, t);
    const auto proofs = s.solve(q);
    const double fresh = compile(proofs).evaluate(b);
    const double cached = cache.get_or_compile(make_circuit_key(hash, 5, q, t, proofs))->evaluate(b, t);
    CHECK(fresh == cached);
  }
}

TEST_CASE("json dump") {
  const Circuit c = compile(std::vector<Proof>{{d(4, 0), d(5, 0)}, {d(3, 0), d(5, 0)}});
  const auto j = nlohmann::json::parse(c.to_json());
  CHECK(j["nodes"].size() == c.size());
  CHECK(j["root"] == c.size() - 1);
  bool leaf = false;
  for (const auto& n : j["nodes"]) leaf |= n["kind"] == "leaf" && n["timestamp"] == 5;
  CHECK(leaf);
}

TEST_CASE("belief table checks") {
  CHECK_NOTHROW(BeliefTable::uniform(0, 3, 10).check());
  BeliefTable b = BeliefTable::uniform(0, 2, 2);
  b.at(1, 0) = 0.7;
  CHECK_THROWS_AS(b.check(), ValidationError);
}
