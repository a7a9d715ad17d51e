#pragma once

#include <set>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "neurocep/term.hpp"

namespace ncep {

/// Predicates that need no clause definition: name and arity.
using PredicateSet = std::set<std::pair<std::string, std::size_t>>;

/// Built-ins evaluated natively by the engine: comparisons, `is`, `=`,
/// `\=`, `true`, `fail`, `reverse/2` and `previousTimeStamp/3`.
PredicateSet default_builtins();

/// Facts the engine asserts from the stream context: `window/1`, `allTimeStamps/1`.
PredicateSet context_predicates();

/// `default_builtins()` plus `context_predicates()`.
PredicateSet engine_predicates();

struct Diagnostic {
  std::string code;  // "ad-sum", "undefined-predicate", ...
  std::string message;
  bool operator==(const Diagnostic&) const = default;
};

struct ParseOptions {
  /// Reject programs with invalid AD probabilities or duplicate neural
  /// declarations. Undefined predicates are left to validate().
  bool check = true;
};

/// Parses rule text. Throws SyntaxError (with position) or ValidationError.
Program parse_program(std::string_view text, const ParseOptions& options = {});

/// Parses a single term, e.g. a query. Throws SyntaxError.
Term parse_term(std::string_view text);

/// Parses a single atom such as `happensAt(ceSiren, 5)`.
Atom parse_atom(std::string_view text);

/// Checks every program invariant. An empty result means the program is valid.
std::vector<Diagnostic> validate(const Program& program,
                                 const PredicateSet& builtins = engine_predicates());

}  // namespace ncep
