#pragma once

#include <cstdint>
#include <functional>
#include <map>
#include <memory>
#include <mutex>
#include <span>
#include <string>
#include <vector>

#include "neurocep/engine.hpp"

namespace ncep {

/// Per-timestamp class distributions for a contiguous run of timestamps
/// starting at `first`.
struct BeliefTable {
  std::int64_t first = 0;
  std::size_t classes = 0;
  std::vector<double> data;  // row-major, one row per timestamp

  BeliefTable() = default;
  BeliefTable(std::int64_t first, std::size_t rows, std::size_t classes, double fill = 0.0);

  static BeliefTable uniform(std::int64_t first, std::size_t rows, std::size_t classes);
  /// Row i puts all mass on labels[i].
  static BeliefTable one_hot(std::int64_t first, std::span<const int> labels, std::size_t classes);

  std::size_t rows() const { return classes == 0 ? 0 : data.size() / classes; }
  bool contains(std::int64_t t) const { return t >= first && t < first + static_cast<std::int64_t>(rows()); }
  double& at(std::int64_t t, std::size_t k) {
    return data[static_cast<std::size_t>(t - first) * classes + k];
  }
  double at(std::int64_t t, std::size_t k) const {
    return data[static_cast<std::size_t>(t - first) * classes + k];
  }
  std::span<double> row(std::int64_t t) {
    return {data.data() + static_cast<std::size_t>(t - first) * classes, classes};
  }
  std::span<const double> row(std::int64_t t) const {
    return {data.data() + static_cast<std::size_t>(t - first) * classes, classes};
  }

  /// Throws ValidationError unless every entry is in [0,1] and rows sum to 1 (1e-9).
  void check() const;
};

/// Arithmetic circuit over categorical leaves. Nodes are stored children
/// first, so the last node is the root.
class Circuit {
 public:
  enum class Kind : std::uint8_t { Leaf, Constant, Sum, Product, Complement };

  struct Node {
    Kind kind = Kind::Constant;
    std::int64_t timestamp = 0;  // Leaf
    int outcome = 0;             // Leaf
    double value = 0.0;          // Constant
    std::vector<std::uint32_t> children;
  };

  /// The constant-0 circuit.
  Circuit();

  const std::vector<Node>& nodes() const { return nodes_; }
  std::size_t size() const { return nodes_.size(); }

  /// Root value with every leaf timestamp moved by `shift`.
  /// Throws BindingError if a shifted leaf is missing from `beliefs`.
  double evaluate(const BeliefTable& beliefs, std::int64_t shift = 0) const;

  /// Adds `scale * d(root)/d(leaf)` into `grad` (same layout as `beliefs`)
  /// and returns the root value. One forward and one reverse pass.
  double accumulate_gradient(const BeliefTable& beliefs, double scale, BeliefTable& grad,
                             std::int64_t shift = 0) const;

  /// d(root)/d(belief entry); zero where no leaf exists.
  BeliefTable gradient(const BeliefTable& beliefs, std::int64_t shift = 0) const;

  /// Sorted distinct leaf timestamps (before shifting).
  std::vector<std::int64_t> timestamps() const;

  /// Copy with every leaf timestamp moved by `offset`.
  Circuit translated(std::int64_t offset) const;

  /// Node list as JSON: id, kind, children and leaf binding or constant value.
  std::string to_json() const;

 private:
  friend class CircuitBuilder;
  void check_bindings(const BeliefTable& beliefs, std::int64_t shift) const;

  std::vector<Node> nodes_;
};

/// Exact circuit for "at least one proof holds" by Shannon expansion, latest
/// timestamp first. Annotated-disjunction choices become constants.
/// All neural literals must come from one network.
Circuit compile(const ProofSet& proofs);
Circuit compile(const std::vector<Proof>& proofs);

/// Exact probability by enumerating every joint assignment of the mentioned
/// variables. Throws ResourceError beyond 7 distinct timestamps.
double brute_force_prob(const ProofSet& proofs, const BeliefTable& beliefs);
double brute_force_prob(const std::vector<Proof>& proofs, const BeliefTable& beliefs);

/// Identifies a proof set up to translation of the query timestamp.
struct CircuitKey {
  std::uint64_t program = 0;
  std::int64_t window = 0;
  std::string query;                 // query text with the timestamp abstracted
  std::vector<Proof> relative;       // proofs with neural inputs relative to t
  std::map<int, std::vector<double>> annotated;

  auto operator<=>(const CircuitKey&) const = default;
};

/// Builds the key of `proofs` for `query` at timestamp `t`. Every top-level
/// integer argument of the query equal to `t` is abstracted.
CircuitKey make_circuit_key(std::uint64_t program_hash, std::int64_t window, const Atom& query,
                            std::int64_t t, const ProofSet& proofs);

/// Memo of compiled circuits in relative coordinates (evaluate with shift = t).
/// Lookups and stores are serialised by a mutex, so one cache may be shared
/// between threads.
class CircuitCache {
 public:
  std::shared_ptr<const Circuit> lookup(const CircuitKey& key) const;
  void store(const CircuitKey& key, std::shared_ptr<const Circuit> circuit);

  /// Compiles the relative proofs of `key` on a miss.
  std::shared_ptr<const Circuit> get_or_compile(const CircuitKey& key);

  std::size_t size() const;
  std::size_t hits() const;
  std::size_t misses() const;

 private:
  mutable std::mutex mutex_;
  std::map<CircuitKey, std::shared_ptr<const Circuit>> entries_;
  std::size_t hits_ = 0;
  std::size_t misses_ = 0;
};

}  // namespace ncep
