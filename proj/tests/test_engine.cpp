#include <doctest.h>

#include <algorithm>

#include "neurocep/engine.hpp"
#include "neurocep/error.hpp"
#include "neurocep/random.hpp"
#include "neurocep/rulelang.hpp"
#include "neurocep/stdlib.hpp"

using namespace ncep;

namespace {

Program pair_rules(const std::vector<std::string>& classes) {
  Program p = stdlib();
  p.append(parse_program(repeat_rules_source(classes)));
  return p;
}

Atom happens(const std::string& cls, std::int64_t t) {
  return {"happensAt", {Term::constant(complex_event_name(cls)), Term::integer(t)}};
}

Literal neural(std::int64_t t, int outcome) {
  return {{VariableKey::Kind::Neural, 0, t}, outcome};
}

bool satisfied(const Proof& proof, const std::vector<int>& classes) {
  return std::all_of(proof.begin(), proof.end(), [&](const Literal& l) {
    return classes[static_cast<std::size_t>(l.variable.input)] == l.outcome;
  });
}

}  // namespace

TEST_CASE("unify") {
  auto s = unify(Term::variable("X"), Term::constant("siren"));
  REQUIRE(s);
  CHECK(s->size() == 1);
  CHECK(s->at("X") == Term::constant("siren"));

  s = unify(parse_term("f(X, b)"), parse_term("f(a, Y)"));
  REQUIRE(s);
  CHECK(s->at("X") == Term::constant("a"));
  CHECK(s->at("Y") == Term::constant("b"));

  CHECK_FALSE(unify(Term::constant("a"), Term::constant("b")));
  CHECK_FALSE(unify(parse_term("X"), parse_term("f(X)")));
  CHECK_FALSE(unify(parse_term("[a, b]"), parse_term("[a]")));

  s = unify(parse_term("[X | L]"), parse_term("[1, 2, 3]"));
  REQUIRE(s);
  CHECK(s->at("L") == parse_term("[2, 3]"));

  // Idempotent: chained bindings are fully resolved.
  s = unify(parse_term("f(X, Y, Z)"), parse_term("f(Y, Z, g(1))"));
  REQUIRE(s);
  for (const auto& [name, value] : *s) {
    CHECK(ncep::apply(*s, value) == value);
    CHECK(value == parse_term("g(1)"));
  }
}

TEST_CASE("proofs for a repeated siren") {
  const Program p = pair_rules({"siren", "dog_bark"});
  SUBCASE("window 5") {
    const auto r = solve(p, StreamContext::contiguous(8, 5), happens("siren", 5));
    REQUIRE(r.proofs.size() == 4);
    for (int i = 0; i < 4; ++i) {
      Proof expected{neural(i + 1, 0), neural(5, 0)};
      CHECK(r.proofs[static_cast<std::size_t>(i)] == expected);
    }
  }
  SUBCASE("window 2") {
    const auto r = solve(p, StreamContext::contiguous(8, 2), happens("siren", 5));
    REQUIRE(r.proofs.size() == 1);
    CHECK(r.proofs[0] == Proof{neural(4, 0), neural(5, 0)});
  }
  SUBCASE("first timestamp has no predecessor") {
    CHECK(solve(p, StreamContext::contiguous(8, 5), happens("siren", 0)).proofs.empty());
  }
  SUBCASE("stream start") {
    const auto r = solve(p, StreamContext::contiguous(8, 5), happens("siren", 2));
    CHECK(r.proofs.size() == 2);
    const auto one = solve(p, StreamContext::contiguous(8, 2), happens("siren", 1));
    REQUIRE(one.proofs.size() == 1);
    CHECK(one.proofs[0] == Proof{neural(0, 0), neural(1, 0)});
  }
  SUBCASE("other class") {
    const auto r = solve(p, StreamContext::contiguous(8, 3), happens("dog_bark", 6));
    REQUIRE(r.proofs.size() == 2);
    CHECK(r.proofs[0] == Proof{neural(4, 1), neural(6, 1)});
  }
}

TEST_CASE("label oracle") {
  // Sirens at 3 and 5, engine idling at 2 and 7.
  const std::vector<int> classes = {0, 1, 5, 8, 4, 8, 9, 5};
  CHECK(label_oracle(classes, 5, 5) == 8);
  CHECK(label_oracle(classes, 5, 7) == std::nullopt);
  CHECK(label_oracle(classes, 5, 0) == std::nullopt);
  CHECK(label_oracle(classes, 6, 7) == 5);
  const std::vector<int> same = {3, 3, 3};
  CHECK(label_oracle(same, 2, 0) == std::nullopt);
  CHECK(label_oracle(same, 2, 1) == 3);
  CHECK(label_oracle(same, 2, 2) == 3);
  CHECK(label_oracle(same, 1, 2) == std::nullopt);
}

TEST_CASE("proofs agree with deterministic facts and with the oracle") {
  // Soundness and completeness: stream length 6, domain of 3 classes.
  const std::vector<std::string> classes = {"a", "b", "c"};
  const Program p = pair_rules(classes);
  const Program facts_base = [&] {
    Program base = stdlib();
    std::string text;
    for (const auto& c : classes)
      text += "happensAt(" + complex_event_name(c) + ", T) :- window(Window), sequence([" + c +
              ", " + c + "], Window, T).\n";
    base.append(parse_program(text));
    return base;
  }();
  for (std::int64_t w = 2; w <= 5; ++w) {
    Solver solver(p, StreamContext::contiguous(6, w));
    std::vector<std::vector<Proof>> proofs(6 * 3);
    for (std::int64_t t = 0; t < 6; ++t) {
      for (int c = 0; c < 3; ++c) proofs[static_cast<std::size_t>(t * 3 + c)] =
          solver.solve(happens(classes[static_cast<std::size_t>(c)], t)).proofs;
    }
    for (int code = 0; code < 729; code += (w == 2 ? 1 : 7)) {
      std::vector<int> assignment(6);
      int rest = code;
      for (auto& a : assignment) {
        a = rest % 3;
        rest /= 3;
      }
      Program world = facts_base;
      for (std::size_t t = 0; t < 6; ++t)
        world.clauses.push_back({{"digit", {Term::integer(static_cast<std::int64_t>(t)),
                                            Term::constant(classes[static_cast<std::size_t>(assignment[t])])}},
                                 {}});
      Solver deterministic(world, StreamContext::contiguous(6, w));
      for (std::int64_t t = 0; t < 6; ++t) {
        for (int c = 0; c < 3; ++c) {
          const auto& ps = proofs[static_cast<std::size_t>(t * 3 + c)];
          const bool by_proofs =
              std::any_of(ps.begin(), ps.end(), [&](const Proof& pr) { return satisfied(pr, assignment); });
          const bool by_facts =
              !deterministic.solve(happens(classes[static_cast<std::size_t>(c)], t)).proofs.empty();
          const auto oracle = label_oracle(assignment, w, static_cast<std::size_t>(t));
          CHECK(by_proofs == by_facts);
          CHECK(by_proofs == (oracle == c));
        }
      }
    }
  }
}

TEST_CASE("native helpers agree with the clause definitions") {
  const Program p = default_rules();
  Rng rng(3);
  for (int trial = 0; trial < 20; ++trial) {
    StreamContext ctx;
    ctx.window = 2 + static_cast<std::int64_t>(uniform_index(rng, 4));
    std::int64_t t = static_cast<std::int64_t>(uniform_index(rng, 3));
    for (int i = 0; i < 12; ++i) {
      ctx.timestamps.push_back(t);
      t += 1 + static_cast<std::int64_t>(uniform_index(rng, 2));
    }
    Solver native(p, ctx);
    Solver clauses(p, ctx, {.native_helpers = false});
    for (auto ts : ctx.timestamps) {
      const auto q = happens("siren", ts);
      CHECK(native.solve(q).proofs == clauses.solve(q).proofs);
    }
  }
}

TEST_CASE("reverse and previousTimeStamp") {
  const Program lib = stdlib();
  const Program p = [&] {
    Program q = lib;
    q.append(parse_program("rev_ok :- reverse([a, b, c], [c, b, a]).\n"
                           "prev(T, P) :- allTimeStamps(L), previousTimeStamp(T, L, P).\n"
                           "prev_list(P) :- previousTimeStamp(5, [1, 3, 4, 7], P).\n"
                           "none :- previousTimeStamp(1, [1, 3], _).\n"));
    return q;
  }();
  for (bool native : {true, false}) {
    Solver s(p, StreamContext::contiguous(5, 2), {.native_helpers = native});
    CHECK(s.solve({"rev_ok", {}}).proofs.size() == 1);
    CHECK(s.solve({"prev", {Term::integer(3), Term::integer(2)}}).proofs.size() == 1);
    CHECK(s.solve({"prev", {Term::integer(0), Term::integer(-1)}}).proofs.size() == 1);
    CHECK(s.solve({"prev_list", {Term::integer(4)}}).proofs.size() == 1);
    CHECK(s.solve({"prev_list", {Term::integer(3)}}).proofs.empty());
    CHECK(s.solve({"none", {}}).proofs.empty());
  }
}

TEST_CASE("proofs are consistent, deduplicated and minimal") {
  const Program p = parse_program(
      "nn(net, [T], C, [x, y]) :: d(T, C).\n"
      "q :- d(1, x), d(1, y).\n"   // inconsistent
      "q :- d(1, x), d(2, x).\n"
      "q :- d(2, x), d(1, x).\n"   // duplicate
      "q :- d(1, x), d(2, x), d(3, y).\n"  // subsumed
      "q :- d(3, C), C = y.\n");
  const auto r = solve(p, StreamContext::contiguous(4, 2), {"q", {}});
  REQUIRE(r.proofs.size() == 2);
  CHECK(r.proofs[0] == Proof{neural(1, 0), neural(2, 0)});
  CHECK(r.proofs[1] == Proof{neural(3, 1)});
}

TEST_CASE("annotated disjunctions become categorical choices") {
  const Program p = parse_program(
      "0.3::heads.\n"
      "0.2::red; 0.5::green; 0.3::blue.\n"
      "q :- heads.\n"
      "q :- green.\n"
      "both :- red, green.\n");
  const auto r = solve(p, StreamContext::contiguous(1, 1), {"q", {}});
  REQUIRE(r.proofs.size() == 2);
  REQUIRE(r.annotated.size() == 2);
  CHECK(r.annotated.at(0) == std::vector<double>{0.3, 0.7});
  CHECK(r.annotated.at(1) == std::vector<double>{0.2, 0.5, 0.3});
  CHECK(solve(p, StreamContext::contiguous(1, 1), {"both", {}}).proofs.empty());
}

TEST_CASE("evaluation errors name the clause") {
  const Program p = parse_program("q(X) :- Y is X + Z, Y > 0.\n");
  try {
    solve(p, StreamContext::contiguous(2, 2), {"q", {Term::integer(1)}});
    FAIL("expected an evaluation error");
  } catch (const EvaluationError& e) {
    CHECK(std::string(e.what()).find("q(X) :- Y is X + Z") != std::string::npos);
  }
  const Program neural_unbound = parse_program("nn(n, [T], C, [a]) :: d(T, C).\nq :- d(T, a).\n");
  CHECK_THROWS_AS(solve(neural_unbound, StreamContext::contiguous(2, 2), {"q", {}}), EvaluationError);
}

TEST_CASE("the step bound stops runaway rules") {
  const Program p = parse_program("loop(X) :- loop(X).\n");
  CHECK_THROWS_AS(solve(p, StreamContext::contiguous(2, 2), {"loop", {Term::integer(1)}}), ResourceError);
  const Program count = parse_program("down(0).\ndown(N) :- N > 0, M is N - 1, down(M).\n");
  CHECK_NOTHROW(solve(count, StreamContext::contiguous(1, 1), {"down", {Term::integer(100)}}));
  CHECK_THROWS_AS(solve(count, StreamContext::contiguous(1, 1), {"down", {Term::integer(100)}}, {.max_steps = 50}),
                  ResourceError);
}

TEST_CASE("stream context invariants") {
  StreamContext bad;
  bad.timestamps = {0, 2, 2};
  CHECK_THROWS_AS(bad.check(), ValidationError);
  CHECK_THROWS_AS(StreamContext::contiguous(3, 0).check(), ValidationError);
  const Program p = default_rules();
  CHECK_THROWS_AS(Solver(p, bad), ValidationError);
}

TEST_CASE("solve is pure") {
  const Program p = default_rules();
  Solver s(p, StreamContext::contiguous(30, 4));
  const auto a = s.solve(happens("siren", 10));
  s.solve(happens("dog_bark", 20));
  CHECK(s.solve(happens("siren", 10)).proofs == a.proofs);
  CHECK(solve(p, StreamContext::contiguous(30, 4), happens("siren", 10)).proofs == a.proofs);
}
