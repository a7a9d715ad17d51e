#include "neurocep/term.hpp"

#include <algorithm>
#include <array>
#include <cctype>
#include <charconv>
#include <numeric>
#include <sstream>

#include "operators.hpp"

namespace ncep {

Term Term::variable(std::string name) {
  Term t;
  t.kind_ = Kind::Variable;
  t.name_ = std::move(name);
  return t;
}

Term Term::constant(std::string name) {
  Term t;
  t.kind_ = Kind::Constant;
  t.name_ = std::move(name);
  return t;
}

Term Term::integer(std::int64_t value) {
  Term t;
  t.kind_ = Kind::Integer;
  t.value_ = value;
  return t;
}

Term Term::list(std::vector<Term> elements, std::optional<Term> tail) {
  // Flatten `[a | [b, c | T]]` into `[a, b, c | T]`.
  while (tail && tail->is_list()) {
    Term inner = std::move(*tail);
    for (auto& e : inner.args_) elements.push_back(std::move(e));
    if (inner.tail_.empty()) {
      tail.reset();
    } else {
      tail = std::move(inner.tail_.front());
    }
  }
  if (elements.empty() && tail) return std::move(*tail);
  Term t;
  t.kind_ = Kind::List;
  t.args_ = std::move(elements);
  if (tail) t.tail_.push_back(std::move(*tail));
  return t;
}

Term Term::compound(std::string functor, std::vector<Term> args) {
  Term t;
  t.kind_ = Kind::Compound;
  t.name_ = std::move(functor);
  t.args_ = std::move(args);
  return t;
}

bool Term::is_ground() const {
  if (kind_ == Kind::Variable) return false;
  for (const auto& a : args_) {
    if (!a.is_ground()) return false;
  }
  for (const auto& a : tail_) {
    if (!a.is_ground()) return false;
  }
  return true;
}

void Term::collect_variables(std::vector<std::string>& out) const {
  if (kind_ == Kind::Variable) {
    if (std::find(out.begin(), out.end(), name_) == out.end()) out.push_back(name_);
    return;
  }
  for (const auto& a : args_) a.collect_variables(out);
  for (const auto& a : tail_) a.collect_variables(out);
}

bool Atom::is_ground() const {
  return std::all_of(args.begin(), args.end(), [](const Term& t) { return t.is_ground(); });
}

Term Atom::as_term() const {
  if (args.empty()) return Term::constant(predicate);
  return Term::compound(predicate, args);
}

double AnnotatedDisjunction::total_probability() const {
  return std::accumulate(alternatives.begin(), alternatives.end(), 0.0,
                         [](double acc, const Alternative& a) { return acc + a.probability; });
}

std::optional<int> NeuralDeclaration::outcome_index(const std::string& outcome) const {
  for (std::size_t i = 0; i < domain.size(); ++i) {
    if (domain[i] == outcome) return static_cast<int>(i);
  }
  return std::nullopt;
}

void Program::append(const Program& other) {
  clauses.insert(clauses.end(), other.clauses.begin(), other.clauses.end());
  ads.insert(ads.end(), other.ads.begin(), other.ads.end());
  neural.insert(neural.end(), other.neural.begin(), other.neural.end());
  for (const auto& [key, value] : other.directives) directives.insert_or_assign(key, value);
}

const NeuralDeclaration* Program::find_neural(const std::string& predicate) const {
  for (const auto& d : neural) {
    if (d.predicate == predicate) return &d;
  }
  return nullptr;
}

// ---------------------------------------------------------------------------
// Printing

bool is_plain_constant(const std::string& name) {
  if (name.empty() || !std::islower(static_cast<unsigned char>(name.front()))) return false;
  if (name == "is" || name == "mod" || name == "nn") return false;
  return std::all_of(name.begin(), name.end(), [](char c) {
    return std::isalnum(static_cast<unsigned char>(c)) || c == '_';
  });
}

namespace {

std::string quoted(const std::string& name) {
  if (is_plain_constant(name)) return name;
  std::string out = "'";
  for (char c : name) {
    if (c == '\'' || c == '\\') out.push_back('\\');
    out.push_back(c);
  }
  out.push_back('\'');
  return out;
}

void print_term(std::ostringstream& os, const Term& t, int max_priority);

void print_args(std::ostringstream& os, const std::vector<Term>& args) {
  for (std::size_t i = 0; i < args.size(); ++i) {
    if (i) os << ", ";
    print_term(os, args[i], detail::kArgumentPriority);
  }
}

void print_term(std::ostringstream& os, const Term& t, int max_priority) {
  switch (t.kind()) {
    case Term::Kind::Variable:
      os << t.name();
      return;
    case Term::Kind::Constant:
      os << quoted(t.name());
      return;
    case Term::Kind::Integer:
      os << t.value();
      return;
    case Term::Kind::List:
      os << '[';
      print_args(os, t.args());
      if (const Term* tail = t.tail()) {
        os << " | ";
        print_term(os, *tail, detail::kArgumentPriority);
      }
      os << ']';
      return;
    case Term::Kind::Compound:
      break;
  }
  if (t.args().size() == 2) {
    if (auto op = detail::find_infix(t.name())) {
      const bool wrap = op->priority > max_priority;
      if (wrap) os << '(';
      const int left = op->assoc == detail::Assoc::Yfx ? op->priority : op->priority - 1;
      print_term(os, t.args()[0], left);
      os << ' ' << op->symbol << ' ';
      print_term(os, t.args()[1], op->priority - 1);
      if (wrap) os << ')';
      return;
    }
  }
  os << quoted(t.name()) << '(';
  print_args(os, t.args());
  os << ')';
}

void print_atom(std::ostringstream& os, const Atom& atom, int max_priority) {
  print_term(os, atom.as_term(), max_priority);
}

void print_body(std::ostringstream& os, const std::vector<Atom>& body) {
  if (body.empty()) return;
  os << " :- ";
  for (std::size_t i = 0; i < body.size(); ++i) {
    if (i) os << ", ";
    print_atom(os, body[i], detail::kArgumentPriority);
  }
}

}  // namespace

std::string format_real(double value) {
  std::array<char, 64> buf{};
  auto [end, ec] = std::to_chars(buf.data(), buf.data() + buf.size(), value);
  return std::string(buf.data(), end);
}

std::string to_string(const Term& term) {
  std::ostringstream os;
  print_term(os, term, detail::kMaxPriority);
  return os.str();
}

std::string to_string(const Atom& atom) {
  std::ostringstream os;
  print_atom(os, atom, detail::kMaxPriority);
  return os.str();
}

std::string to_string(const Clause& clause) {
  std::ostringstream os;
  print_atom(os, clause.head, detail::kArgumentPriority);
  print_body(os, clause.body);
  os << '.';
  return os.str();
}

std::string to_string(const AnnotatedDisjunction& ad) {
  std::ostringstream os;
  for (std::size_t i = 0; i < ad.alternatives.size(); ++i) {
    if (i) os << "; ";
    os << format_real(ad.alternatives[i].probability) << "::";
    print_atom(os, ad.alternatives[i].head, detail::kArgumentPriority);
  }
  print_body(os, ad.body);
  os << '.';
  return os.str();
}

std::string to_string(const NeuralDeclaration& decl) {
  std::ostringstream os;
  os << "nn(" << quoted(decl.network) << ", [";
  for (std::size_t i = 0; i < decl.inputs.size(); ++i) {
    if (i) os << ", ";
    os << decl.inputs[i];
  }
  os << "], " << decl.output << ", [";
  for (std::size_t i = 0; i < decl.domain.size(); ++i) {
    if (i) os << ", ";
    os << quoted(decl.domain[i]);
  }
  os << "]) :: " << quoted(decl.predicate) << '(';
  for (const auto& v : decl.inputs) os << v << ", ";
  os << decl.output << ").";
  return os.str();
}

std::string pretty_print(const Program& program) {
  std::ostringstream os;
  for (const auto& [key, value] : program.directives) {
    os << ":- " << quoted(key) << '(' << to_string(value) << ").\n";
  }
  for (const auto& d : program.neural) os << to_string(d) << '\n';
  for (const auto& ad : program.ads) os << to_string(ad) << '\n';
  for (const auto& c : program.clauses) os << to_string(c) << '\n';
  return os.str();
}

std::uint64_t program_hash(const Program& program) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : pretty_print(program)) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

}  // namespace ncep
