#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <vector>

namespace ncep {

/// A first-order term of the rule language.
///
/// Lists keep their elements flat; a list may carry a tail term (`[X | L]`)
/// which, once instantiated, is itself a list. Lists built by the parser are
/// normalised so `[a | [b]]` and `[a, b]` produce the same value.
class Term {
 public:
  enum class Kind { Variable, Constant, Integer, List, Compound };

  static Term variable(std::string name);
  static Term constant(std::string name);
  static Term integer(std::int64_t value);
  static Term list(std::vector<Term> elements, std::optional<Term> tail = std::nullopt);
  static Term compound(std::string functor, std::vector<Term> args);

  Kind kind() const { return kind_; }
  bool is_variable() const { return kind_ == Kind::Variable; }
  bool is_constant() const { return kind_ == Kind::Constant; }
  bool is_integer() const { return kind_ == Kind::Integer; }
  bool is_list() const { return kind_ == Kind::List; }
  bool is_compound() const { return kind_ == Kind::Compound; }

  /// Variable name, constant name or compound functor.
  const std::string& name() const { return name_; }
  std::int64_t value() const { return value_; }
  /// Compound arguments or list elements.
  const std::vector<Term>& args() const { return args_; }
  /// List tail, or nullptr for a nil-terminated list.
  const Term* tail() const { return tail_.empty() ? nullptr : &tail_.front(); }

  bool is_ground() const;
  void collect_variables(std::vector<std::string>& out) const;

  bool operator==(const Term&) const = default;

 private:
  Kind kind_ = Kind::Constant;
  std::string name_;
  std::int64_t value_ = 0;
  std::vector<Term> args_;
  std::vector<Term> tail_;  // zero or one element
};

struct Atom {
  std::string predicate;
  std::vector<Term> args;

  std::size_t arity() const { return args.size(); }
  bool is_ground() const;
  Term as_term() const;
  bool operator==(const Atom&) const = default;
};

/// `head :- body.`; an empty body makes the clause a fact.
struct Clause {
  Atom head;
  std::vector<Atom> body;

  bool is_fact() const { return body.empty(); }
  bool operator==(const Clause&) const = default;
};

struct Alternative {
  double probability = 0.0;
  Atom head;
  bool operator==(const Alternative&) const = default;
};

/// `p1::h1; ...; pn::hn :- body.` A single alternative is a probabilistic fact.
struct AnnotatedDisjunction {
  std::vector<Alternative> alternatives;
  std::vector<Atom> body;

  double total_probability() const;
  bool operator==(const AnnotatedDisjunction&) const = default;
};

/// `nn(network, [X1..Xk], Out, [y1..yn]) :: predicate(X1..Xk, Out).`
struct NeuralDeclaration {
  std::string network;
  std::vector<std::string> inputs;
  std::string output;
  std::vector<std::string> domain;
  std::string predicate;

  std::size_t arity() const { return inputs.size() + 1; }
  /// Index of `outcome` in the domain, if declared.
  std::optional<int> outcome_index(const std::string& outcome) const;
  bool operator==(const NeuralDeclaration&) const = default;
};

/// Parsed rule base. Immutable once built; safe to share between threads.
struct Program {
  std::vector<Clause> clauses;
  std::vector<AnnotatedDisjunction> ads;
  std::vector<NeuralDeclaration> neural;
  std::map<std::string, Term> directives;

  /// Concatenates `other` onto this program. Directive keys of `other` win.
  void append(const Program& other);
  const NeuralDeclaration* find_neural(const std::string& predicate) const;
  bool operator==(const Program&) const = default;
};

// Pretty printing. Output re-parses to a structurally equal value.
std::string to_string(const Term& term);
std::string to_string(const Atom& atom);
std::string to_string(const Clause& clause);
std::string to_string(const AnnotatedDisjunction& ad);
std::string to_string(const NeuralDeclaration& decl);
std::string pretty_print(const Program& program);

/// Shortest decimal that reads back to exactly `value`.
std::string format_real(double value);

/// True if `name` can be written without quotes as a constant.
bool is_plain_constant(const std::string& name);

/// 64-bit FNV-1a over the pretty-printed program.
std::uint64_t program_hash(const Program& program);

}  // namespace ncep
