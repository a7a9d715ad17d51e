#pragma once

#include <compare>
#include <cstdint>
#include <map>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "neurocep/term.hpp"

namespace ncep {

// ---------------------------------------------------------------------------
// Unification over syntax trees

/// Variable bindings. Always idempotent: no bound variable occurs in any value.
using Substitution = std::map<std::string, Term>;

/// Most general unifier of `a` and `b` (with occurs check), or nullopt.
std::optional<Substitution> unify(const Term& a, const Term& b);

Term apply(const Substitution& s, const Term& t);

// ---------------------------------------------------------------------------
// Proofs

/// Timestamps of the stream and the detection window.
struct StreamContext {
  std::vector<std::int64_t> timestamps;  // strictly increasing
  std::int64_t window = 1;               // >= 1

  /// Timestamps 0..length-1.
  static StreamContext contiguous(std::size_t length, std::int64_t window);

  /// Throws ValidationError if an invariant is broken.
  void check() const;
};

/// A categorical random variable: one neural prediction (network, timestamp)
/// or one ground annotated disjunction.
struct VariableKey {
  enum class Kind : std::uint8_t { Neural, Annotated };
  Kind kind = Kind::Neural;
  int source = 0;            // neural declaration index or AD index
  std::int64_t input = 0;    // timestamp for neural variables, 0 otherwise

  auto operator<=>(const VariableKey&) const = default;
};

struct Literal {
  VariableKey variable;
  int outcome = 0;

  auto operator<=>(const Literal&) const = default;
};

/// Conjunction of choices. Sorted, and never assigns one variable twice.
using Proof = std::vector<Literal>;

struct ProofSet {
  /// Sorted, duplicate-free, and no proof is a superset of another.
  std::vector<Proof> proofs;
  /// Outcome distribution of each annotated-disjunction variable referenced
  /// by `proofs`. A probabilistic fact `p::f` gets outcomes {p, 1-p}.
  std::map<int, std::vector<double>> annotated;
};

struct SolveOptions {
  /// Resolution steps allowed per query before a ResourceError.
  std::size_t max_steps = 10000;
  /// Evaluate reverse/2 and previousTimeStamp/3 natively. When false the
  /// program's own clauses for them are used.
  bool native_helpers = true;
};

/// SLD resolution (depth first, leftmost goal) collecting the neural and
/// AD choices each derivation depends on.
///
/// The engine asserts `window(W)` and `allTimeStamps(L)`, where `L` is the
/// context timestamps preceded by the stream origin `first - 1`. The origin
/// lets `previousTimeStamp/3` step back from the first timestamp; the
/// `T >= 0` guards of the sequence rules stop there, so the first event can
/// open a pattern but is never itself preceded by one.
///
/// A Solver is cheap to reuse across queries on the same context but is not
/// thread safe; use one per thread.
class Solver {
 public:
  Solver(const Program& program, StreamContext context, SolveOptions options = {});
  ~Solver();
  Solver(Solver&&) noexcept;
  Solver& operator=(Solver&&) noexcept;

  /// All minimal consistent proofs of the ground `query`.
  /// Throws EvaluationError or ResourceError.
  ProofSet solve(const Atom& query);

  /// Resolution steps used by the last call to solve().
  std::size_t last_steps() const;

  const StreamContext& context() const;

 private:
  struct Impl;
  std::unique_ptr<Impl> impl_;
};

ProofSet solve(const Program& program, const StreamContext& context, const Atom& query,
               const SolveOptions& options = {});

/// Symbolic labeller: class of `t` if the same class occurs at some P with
/// t - window < P < t, else nullopt.
std::optional<int> label_oracle(std::span<const int> classes, std::int64_t window, std::size_t t);

std::string to_string(const Proof& proof);

}  // namespace ncep
