#include "neurocep/circuit.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <set>
#include <tuple>

#include <nlohmann/json.hpp>

#include "neurocep/error.hpp"

namespace ncep {

// ---------------------------------------------------------------------------
// BeliefTable

BeliefTable::BeliefTable(std::int64_t first_, std::size_t rows, std::size_t classes_, double fill)
    : first(first_), classes(classes_), data(rows * classes_, fill) {}

BeliefTable BeliefTable::uniform(std::int64_t first, std::size_t rows, std::size_t classes) {
  return BeliefTable(first, rows, classes, 1.0 / static_cast<double>(classes));
}

BeliefTable BeliefTable::one_hot(std::int64_t first, std::span<const int> labels, std::size_t classes) {
  BeliefTable b(first, labels.size(), classes);
  for (std::size_t i = 0; i < labels.size(); ++i) b.data[i * classes + static_cast<std::size_t>(labels[i])] = 1.0;
  return b;
}

void BeliefTable::check() const {
  if (classes == 0 || data.size() % classes != 0) throw ValidationError("belief table has a ragged shape");
  for (std::size_t r = 0; r < rows(); ++r) {
    double sum = 0.0;
    for (std::size_t k = 0; k < classes; ++k) {
      const double p = data[r * classes + k];
      if (!(p >= 0.0 && p <= 1.0))
        throw ValidationError("belief for timestamp " + std::to_string(first + static_cast<std::int64_t>(r)) +
                              " is outside [0,1]");
      sum += p;
    }
    if (std::abs(sum - 1.0) > 1e-9)
      throw ValidationError("beliefs for timestamp " + std::to_string(first + static_cast<std::int64_t>(r)) +
                            " do not sum to 1");
  }
}

// ---------------------------------------------------------------------------
// Construction

class CircuitBuilder {
 public:
  explicit CircuitBuilder(const std::map<int, std::vector<double>>& annotated) : annotated_(annotated) {}

  std::uint32_t build(std::vector<Proof> proofs) {
    normalise(proofs);
    if (auto it = memo_.find(proofs); it != memo_.end()) return it->second;
    const auto id = expand(proofs);
    memo_.emplace(std::move(proofs), id);
    return id;
  }

  Circuit finish(std::uint32_t root) {
    // Keep only nodes reachable from the root; ids are already topological.
    std::vector<bool> live(nodes_.size(), false);
    live[root] = true;
    for (auto i = static_cast<std::int64_t>(root); i >= 0; --i) {
      if (!live[static_cast<std::size_t>(i)]) continue;
      for (auto c : nodes_[static_cast<std::size_t>(i)].children) live[c] = true;
    }
    std::vector<std::uint32_t> remap(nodes_.size(), 0);
    Circuit out;
    out.nodes_.clear();
    for (std::uint32_t i = 0; i <= root; ++i) {
      if (!live[i]) continue;
      Circuit::Node n = nodes_[i];
      for (auto& c : n.children) c = remap[c];
      remap[i] = static_cast<std::uint32_t>(out.nodes_.size());
      out.nodes_.push_back(std::move(n));
    }
    return out;
  }

  std::uint32_t constant(double v) {
    Circuit::Node n;
    n.kind = Circuit::Kind::Constant;
    n.value = v;
    return intern(std::move(n));
  }

 private:
  static void normalise(std::vector<Proof>& proofs) {
    std::sort(proofs.begin(), proofs.end());
    proofs.erase(std::unique(proofs.begin(), proofs.end()), proofs.end());
  }

  bool is_zero(std::uint32_t id) const {
    return nodes_[id].kind == Circuit::Kind::Constant && nodes_[id].value == 0.0;
  }
  bool is_one(std::uint32_t id) const {
    return nodes_[id].kind == Circuit::Kind::Constant && nodes_[id].value == 1.0;
  }

  std::uint32_t intern(Circuit::Node n) {
    auto key = std::make_tuple(static_cast<int>(n.kind), n.timestamp, n.outcome,
                               std::bit_cast<std::uint64_t>(n.value), n.children);
    if (auto it = index_.find(key); it != index_.end()) return it->second;
    const auto id = static_cast<std::uint32_t>(nodes_.size());
    nodes_.push_back(std::move(n));
    index_.emplace(std::move(key), id);
    return id;
  }

  std::uint32_t leaf(const VariableKey& v, int outcome) {
    if (v.kind == VariableKey::Kind::Annotated) return constant(ad_probability(v.source, outcome));
    Circuit::Node n;
    n.kind = Circuit::Kind::Leaf;
    n.timestamp = v.input;
    n.outcome = outcome;
    return intern(std::move(n));
  }

  double ad_probability(int source, int outcome) const {
    const auto it = annotated_.find(source);
    if (it == annotated_.end() || outcome < 0 || static_cast<std::size_t>(outcome) >= it->second.size())
      throw ValidationError("no distribution for annotated disjunction " + std::to_string(source));
    return it->second[static_cast<std::size_t>(outcome)];
  }

  std::uint32_t product(std::uint32_t a, std::uint32_t b) {
    if (is_zero(a) || is_zero(b)) return constant(0.0);
    if (is_one(a)) return b;
    if (is_one(b)) return a;
    if (nodes_[a].kind == Circuit::Kind::Constant && nodes_[b].kind == Circuit::Kind::Constant)
      return constant(nodes_[a].value * nodes_[b].value);
    Circuit::Node n;
    n.kind = Circuit::Kind::Product;
    n.children = {a, b};
    return intern(std::move(n));
  }

  std::uint32_t sum(std::vector<std::uint32_t> terms) {
    std::erase_if(terms, [&](std::uint32_t t) { return is_zero(t); });
    if (terms.empty()) return constant(0.0);
    if (terms.size() == 1) return terms.front();
    Circuit::Node n;
    n.kind = Circuit::Kind::Sum;
    n.children = std::move(terms);
    return intern(std::move(n));
  }

  std::uint32_t complement(std::uint32_t a) {
    if (nodes_[a].kind == Circuit::Kind::Constant) return constant(1.0 - nodes_[a].value);
    Circuit::Node n;
    n.kind = Circuit::Kind::Complement;
    n.children = {a};
    return intern(std::move(n));
  }

  /// Latest neural timestamp first; annotated choices after all neural ones.
  static bool before(const VariableKey& a, const VariableKey& b) {
    if (a.kind != b.kind) return a.kind == VariableKey::Kind::Neural;
    if (a.kind == VariableKey::Kind::Neural) return a.input > b.input;
    return a.source < b.source;
  }

  std::uint32_t expand(const std::vector<Proof>& proofs) {
    if (proofs.empty()) return constant(0.0);
    if (proofs.front().empty()) return constant(1.0);  // sorted: an empty proof comes first

    VariableKey top = proofs.front().front().variable;
    for (const auto& p : proofs) {
      for (const auto& l : p) {
        if (before(l.variable, top)) top = l.variable;
      }
    }

    std::map<int, std::vector<Proof>> with;  // outcome -> residual proofs
    std::vector<Proof> without;
    for (const auto& p : proofs) {
      auto it = std::find_if(p.begin(), p.end(), [&](const Literal& l) { return l.variable == top; });
      if (it == p.end()) {
        without.push_back(p);
      } else {
        Proof rest = p;
        rest.erase(rest.begin() + (it - p.begin()));
        with[it->outcome].push_back(std::move(rest));
      }
    }

    std::vector<std::uint32_t> terms;
    std::vector<std::uint32_t> mentioned;
    for (auto& [outcome, residual] : with) {
      residual.insert(residual.end(), without.begin(), without.end());
      const auto l = leaf(top, outcome);
      mentioned.push_back(l);
      terms.push_back(product(l, build(std::move(residual))));
    }
    if (!without.empty()) {
      const auto rest = build(without);
      if (!is_zero(rest)) terms.push_back(product(complement(sum(mentioned)), rest));
    }
    return sum(std::move(terms));
  }

  const std::map<int, std::vector<double>>& annotated_;
  std::vector<Circuit::Node> nodes_;
  std::map<std::tuple<int, std::int64_t, int, std::uint64_t, std::vector<std::uint32_t>>, std::uint32_t>
      index_;
  std::map<std::vector<Proof>, std::uint32_t> memo_;
};

namespace {

void check_single_network(const std::vector<Proof>& proofs) {
  std::optional<int> source;
  for (const auto& p : proofs) {
    for (const auto& l : p) {
      if (l.variable.kind != VariableKey::Kind::Neural) continue;
      if (source && *source != l.variable.source)
        throw ValidationError("circuits over several neural networks are not supported");
      source = l.variable.source;
    }
  }
}

}  // namespace

Circuit compile(const ProofSet& proofs) {
  check_single_network(proofs.proofs);
  CircuitBuilder builder(proofs.annotated);
  const auto root = builder.build(proofs.proofs);
  return builder.finish(root);
}

Circuit compile(const std::vector<Proof>& proofs) { return compile(ProofSet{proofs, {}}); }

// ---------------------------------------------------------------------------
// Evaluation

Circuit::Circuit() {
  Node zero;
  zero.kind = Kind::Constant;
  nodes_.push_back(zero);
}

void Circuit::check_bindings(const BeliefTable& beliefs, std::int64_t shift) const {
  for (const auto& n : nodes_) {
    if (n.kind != Kind::Leaf) continue;
    const auto t = n.timestamp + shift;
    if (!beliefs.contains(t))
      throw BindingError("no beliefs for timestamp " + std::to_string(t));
    if (n.outcome < 0 || static_cast<std::size_t>(n.outcome) >= beliefs.classes)
      throw BindingError("class " + std::to_string(n.outcome) + " out of range at timestamp " + std::to_string(t));
  }
}

namespace {

void forward(const std::vector<Circuit::Node>& nodes, const BeliefTable& beliefs, std::int64_t shift,
             std::vector<double>& values) {
  values.resize(nodes.size());
  for (std::size_t i = 0; i < nodes.size(); ++i) {
    const auto& n = nodes[i];
    switch (n.kind) {
      case Circuit::Kind::Leaf:
        values[i] = beliefs.at(n.timestamp + shift, static_cast<std::size_t>(n.outcome));
        break;
      case Circuit::Kind::Constant:
        values[i] = n.value;
        break;
      case Circuit::Kind::Sum: {
        double s = 0.0;
        for (auto c : n.children) s += values[c];
        values[i] = s;
        break;
      }
      case Circuit::Kind::Product: {
        double p = 1.0;
        for (auto c : n.children) p *= values[c];
        values[i] = p;
        break;
      }
      case Circuit::Kind::Complement:
        values[i] = 1.0 - values[n.children.front()];
        break;
    }
  }
}

}  // namespace

double Circuit::evaluate(const BeliefTable& beliefs, std::int64_t shift) const {
  check_bindings(beliefs, shift);
  std::vector<double> values;
  forward(nodes_, beliefs, shift, values);
  return values.back();
}

double Circuit::accumulate_gradient(const BeliefTable& beliefs, double scale, BeliefTable& grad,
                                    std::int64_t shift) const {
  check_bindings(beliefs, shift);
  if (grad.classes != beliefs.classes || grad.first != beliefs.first || grad.data.size() != beliefs.data.size())
    throw ShapeError("gradient table does not match the belief table");
  std::vector<double> values;
  forward(nodes_, beliefs, shift, values);
  std::vector<double> adjoint(nodes_.size(), 0.0);
  adjoint.back() = scale;
  std::vector<double> prefix;
  for (std::size_t i = nodes_.size(); i-- > 0;) {
    const double a = adjoint[i];
    if (a == 0.0) continue;
    const auto& n = nodes_[i];
    switch (n.kind) {
      case Kind::Leaf:
        grad.at(n.timestamp + shift, static_cast<std::size_t>(n.outcome)) += a;
        break;
      case Kind::Constant:
        break;
      case Kind::Sum:
        for (auto c : n.children) adjoint[c] += a;
        break;
      case Kind::Complement:
        adjoint[n.children.front()] -= a;
        break;
      case Kind::Product: {
        // Prefix/suffix products so zero-valued children are handled exactly.
        const auto m = n.children.size();
        prefix.assign(m + 1, 1.0);
        for (std::size_t k = 0; k < m; ++k) prefix[k + 1] = prefix[k] * values[n.children[k]];
        double suffix = 1.0;
        for (std::size_t k = m; k-- > 0;) {
          adjoint[n.children[k]] += a * prefix[k] * suffix;
          suffix *= values[n.children[k]];
        }
        break;
      }
    }
  }
  return values.back();
}

BeliefTable Circuit::gradient(const BeliefTable& beliefs, std::int64_t shift) const {
  BeliefTable grad(beliefs.first, beliefs.rows(), beliefs.classes);
  accumulate_gradient(beliefs, 1.0, grad, shift);
  return grad;
}

std::vector<std::int64_t> Circuit::timestamps() const {
  std::set<std::int64_t> ts;
  for (const auto& n : nodes_) {
    if (n.kind == Kind::Leaf) ts.insert(n.timestamp);
  }
  return {ts.begin(), ts.end()};
}

Circuit Circuit::translated(std::int64_t offset) const {
  Circuit c = *this;
  for (auto& n : c.nodes_) {
    if (n.kind == Kind::Leaf) n.timestamp += offset;
  }
  return c;
}

std::string Circuit::to_json() const {
  static const char* const kinds[] = {"leaf", "constant", "sum", "product", "complement"};
  nlohmann::json nodes = nlohmann::json::array();
  for (std::size_t i = 0; i < nodes_.size(); ++i) {
    const auto& n = nodes_[i];
    nlohmann::json j;
    j["id"] = i;
    j["kind"] = kinds[static_cast<int>(n.kind)];
    j["children"] = n.children;
    if (n.kind == Kind::Leaf) {
      j["timestamp"] = n.timestamp;
      j["class"] = n.outcome;
    } else if (n.kind == Kind::Constant) {
      j["value"] = n.value;
    }
    nodes.push_back(std::move(j));
  }
  nlohmann::json out;
  out["root"] = nodes_.size() - 1;
  out["nodes"] = std::move(nodes);
  return out.dump(2);
}

// ---------------------------------------------------------------------------
// Enumeration oracle

double brute_force_prob(const ProofSet& proofs, const BeliefTable& beliefs) {
  std::vector<VariableKey> vars;
  std::size_t neural = 0;
  for (const auto& p : proofs.proofs) {
    for (const auto& l : p) {
      if (std::find(vars.begin(), vars.end(), l.variable) == vars.end()) {
        vars.push_back(l.variable);
        neural += l.variable.kind == VariableKey::Kind::Neural;
      }
    }
  }
  if (neural > 7) throw ResourceError("enumeration guard: more than 7 timestamps");

  std::vector<std::vector<double>> dist;
  for (const auto& v : vars) {
    if (v.kind == VariableKey::Kind::Neural) {
      if (!beliefs.contains(v.input)) throw BindingError("no beliefs for timestamp " + std::to_string(v.input));
      const auto row = beliefs.row(v.input);
      dist.emplace_back(row.begin(), row.end());
    } else {
      dist.push_back(proofs.annotated.at(v.source));
    }
  }

  std::vector<std::size_t> assignment(vars.size(), 0);
  auto holds = [&](const Proof& p) {
    return std::all_of(p.begin(), p.end(), [&](const Literal& l) {
      const auto i = static_cast<std::size_t>(std::find(vars.begin(), vars.end(), l.variable) - vars.begin());
      return assignment[i] == static_cast<std::size_t>(l.outcome);
    });
  };
  double total = 0.0;
  for (;;) {
    if (std::any_of(proofs.proofs.begin(), proofs.proofs.end(), holds)) {
      double w = 1.0;
      for (std::size_t i = 0; i < vars.size(); ++i) w *= dist[i][assignment[i]];
      total += w;
    }
    std::size_t i = 0;
    while (i < vars.size() && ++assignment[i] == dist[i].size()) assignment[i++] = 0;
    if (i == vars.size()) break;
  }
  return total;
}

double brute_force_prob(const std::vector<Proof>& proofs, const BeliefTable& beliefs) {
  return brute_force_prob(ProofSet{proofs, {}}, beliefs);
}

// ---------------------------------------------------------------------------
// Cache

CircuitKey make_circuit_key(std::uint64_t program_hash, std::int64_t window, const Atom& query,
                            std::int64_t t, const ProofSet& proofs) {
  CircuitKey key;
  key.program = program_hash;
  key.window = window;
  Atom pattern = query;
  for (auto& a : pattern.args) {
    if (a.is_integer() && a.value() == t) a = Term::variable("T");
  }
  key.query = to_string(pattern);
  key.relative = proofs.proofs;
  for (auto& p : key.relative) {
    for (auto& l : p) {
      if (l.variable.kind == VariableKey::Kind::Neural) l.variable.input -= t;
    }
  }
  key.annotated = proofs.annotated;
  return key;
}

std::shared_ptr<const Circuit> CircuitCache::lookup(const CircuitKey& key) const {
  std::lock_guard lock(mutex_);
  auto it = entries_.find(key);
  return it == entries_.end() ? nullptr : it->second;
}

void CircuitCache::store(const CircuitKey& key, std::shared_ptr<const Circuit> circuit) {
  std::lock_guard lock(mutex_);
  entries_.insert_or_assign(key, std::move(circuit));
}

std::shared_ptr<const Circuit> CircuitCache::get_or_compile(const CircuitKey& key) {
  {
    std::lock_guard lock(mutex_);
    if (auto it = entries_.find(key); it != entries_.end()) {
      ++hits_;
      return it->second;
    }
    ++misses_;
  }
  auto circuit = std::make_shared<const Circuit>(compile(ProofSet{key.relative, key.annotated}));
  std::lock_guard lock(mutex_);
  return entries_.emplace(key, std::move(circuit)).first->second;
}

std::size_t CircuitCache::size() const {
  std::lock_guard lock(mutex_);
  return entries_.size();
}
std::size_t CircuitCache::hits() const {
  std::lock_guard lock(mutex_);
  return hits_;
}
std::size_t CircuitCache::misses() const {
  std::lock_guard lock(mutex_);
  return misses_;
}

}  // namespace ncep
