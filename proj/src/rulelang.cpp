#include "neurocep/rulelang.hpp"

#include <algorithm>
#include <cctype>
#include <charconv>
#include <cmath>
#include <cstdio>
#include <optional>

#include "neurocep/error.hpp"
#include "operators.hpp"

namespace ncep {

PredicateSet default_builtins() {
  return {{"=", 2},  {"\\=", 2}, {"is", 2},    {"=:=", 2},    {"=\\=", 2},
          {"<", 2},  {">", 2},   {"=<", 2},    {">=", 2},     {"true", 0},
          {"fail", 0}, {"reverse", 2}, {"previousTimeStamp", 3}};
}

PredicateSet context_predicates() { return {{"window", 1}, {"allTimeStamps", 1}}; }

PredicateSet engine_predicates() {
  auto all = default_builtins();
  all.merge(context_predicates());
  return all;
}

namespace {

enum class Tok { Name, Var, Int, Real, Symbol, LParen, RParen, LBracket, RBracket, Bar, Comma, End, Eof };

struct Token {
  Tok kind = Tok::Eof;
  std::string text;
  std::int64_t int_value = 0;
  double real_value = 0.0;
  bool quoted = false;
  bool space_before = false;
  std::size_t line = 1;
  std::size_t column = 1;
};

std::string describe(const Token& t) {
  switch (t.kind) {
    case Tok::Eof:
      return "end of input";
    case Tok::End:
      return "'.'";
    default:
      return "'" + t.text + "'";
  }
}

constexpr std::string_view kSymbols[] = {"=:=", "=\\=", ":-", "::", "\\=", "=<", ">=", "//",
                                         "=",   "<",    ">",  "+",  "-",   "*",  "/",  ";"};

class Lexer {
 public:
  explicit Lexer(std::string_view text) : text_(text) {}

  std::vector<Token> run() {
    std::vector<Token> tokens;
    for (;;) {
      const bool space = skip_space();
      Token t = next();
      t.space_before = space;
      tokens.push_back(t);
      if (t.kind == Tok::Eof) break;
    }
    return tokens;
  }

 private:
  char peek(std::size_t ahead = 0) const {
    return pos_ + ahead < text_.size() ? text_[pos_ + ahead] : '\0';
  }

  void advance() {
    if (text_[pos_] == '\n') {
      ++line_;
      column_ = 1;
    } else {
      ++column_;
    }
    ++pos_;
  }

  bool skip_space() {
    const std::size_t start = pos_;
    while (pos_ < text_.size()) {
      const char c = peek();
      if (std::isspace(static_cast<unsigned char>(c))) {
        advance();
      } else if (c == '%') {
        while (pos_ < text_.size() && peek() != '\n') advance();
      } else {
        break;
      }
    }
    return pos_ != start || pos_ == 0;
  }

  [[noreturn]] void fail(const std::string& message) const {
    throw SyntaxError(message, line_, column_);
  }

  Token next() {
    Token t;
    t.line = line_;
    t.column = column_;
    if (pos_ >= text_.size()) {
      t.kind = Tok::Eof;
      return t;
    }
    const char c = peek();
    const auto start = pos_;
    auto take = [&](Tok kind) {
      advance();
      t.kind = kind;
      t.text = std::string(1, c);
      return t;
    };
    if (std::isalpha(static_cast<unsigned char>(c)) || c == '_') {
      while (std::isalnum(static_cast<unsigned char>(peek())) || peek() == '_') advance();
      t.text = std::string(text_.substr(start, pos_ - start));
      t.kind = (std::isupper(static_cast<unsigned char>(c)) || c == '_') ? Tok::Var : Tok::Name;
      return t;
    }
    if (std::isdigit(static_cast<unsigned char>(c))) return number(t);
    if (c == '\'') return quoted_name(t);
    switch (c) {
      case '(':
        return take(Tok::LParen);
      case ')':
        return take(Tok::RParen);
      case '[':
        return take(Tok::LBracket);
      case ']':
        return take(Tok::RBracket);
      case '|':
        return take(Tok::Bar);
      case ',':
        return take(Tok::Comma);
      case '.': {
        const char n = peek(1);
        if (n == '\0' || n == '%' || std::isspace(static_cast<unsigned char>(n))) return take(Tok::End);
        break;
      }
      default:
        break;
    }
    for (auto sym : kSymbols) {
      if (text_.substr(pos_, sym.size()) == sym) {
        for (std::size_t i = 0; i < sym.size(); ++i) advance();
        t.kind = Tok::Symbol;
        t.text = std::string(sym);
        return t;
      }
    }
    fail(std::string("unexpected character '") + c + "'");
  }

  Token number(Token t) {
    const auto start = pos_;
    bool real = false;
    while (std::isdigit(static_cast<unsigned char>(peek()))) advance();
    if (peek() == '.' && std::isdigit(static_cast<unsigned char>(peek(1)))) {
      real = true;
      advance();
      while (std::isdigit(static_cast<unsigned char>(peek()))) advance();
    }
    if ((peek() == 'e' || peek() == 'E') &&
        (std::isdigit(static_cast<unsigned char>(peek(1))) ||
         ((peek(1) == '-' || peek(1) == '+') && std::isdigit(static_cast<unsigned char>(peek(2)))))) {
      real = true;
      advance();
      if (peek() == '-' || peek() == '+') advance();
      while (std::isdigit(static_cast<unsigned char>(peek()))) advance();
    }
    t.text = std::string(text_.substr(start, pos_ - start));
    const char* first = t.text.data();
    const char* last = first + t.text.size();
    if (real) {
      t.kind = Tok::Real;
      auto [p, ec] = std::from_chars(first, last, t.real_value);
      if (ec != std::errc()) fail("malformed number '" + t.text + "'");
    } else {
      t.kind = Tok::Int;
      auto [p, ec] = std::from_chars(first, last, t.int_value);
      if (ec != std::errc()) fail("integer out of range '" + t.text + "'");
      t.real_value = static_cast<double>(t.int_value);
    }
    return t;
  }

  Token quoted_name(Token t) {
    advance();
    std::string out;
    for (;;) {
      if (pos_ >= text_.size()) fail("unterminated quoted atom");
      const char c = peek();
      if (c == '\'') {
        advance();
        break;
      }
      if (c == '\\') {
        advance();
        if (pos_ >= text_.size()) fail("unterminated quoted atom");
      }
      out.push_back(peek());
      advance();
    }
    t.kind = Tok::Name;
    t.quoted = true;
    t.text = std::move(out);
    return t;
  }

  std::string_view text_;
  std::size_t pos_ = 0;
  std::size_t line_ = 1;
  std::size_t column_ = 1;
};

class Parser {
 public:
  explicit Parser(std::string_view text) : tokens_(Lexer(text).run()) {}

  Program program() {
    Program p;
    while (peek().kind != Tok::Eof) statement(p);
    return p;
  }

  Term single_term() {
    Term t = expr(detail::kMaxPriority).first;
    if (peek().kind == Tok::End) next();
    expect(Tok::Eof, "end of input");
    return t;
  }

 private:
  const Token& peek(std::size_t ahead = 0) const {
    return tokens_[std::min(pos_ + ahead, tokens_.size() - 1)];
  }
  const Token& next() {
    const Token& t = tokens_[pos_];
    if (pos_ + 1 < tokens_.size()) ++pos_;
    return t;
  }
  bool at_symbol(std::string_view s) const {
    return peek().kind == Tok::Symbol && peek().text == s;
  }

  [[noreturn]] void fail_at(const Token& t, const std::string& expected) const {
    throw SyntaxError("expected " + expected + " but found " + describe(t), t.line, t.column);
  }

  const Token& expect(Tok kind, const std::string& what) {
    if (peek().kind != kind) fail_at(peek(), what);
    return next();
  }
  void expect_symbol(std::string_view s) {
    if (!at_symbol(s)) fail_at(peek(), "'" + std::string(s) + "'");
    next();
  }

  void statement(Program& p) {
    if (at_symbol(":-")) {
      next();
      const Token& at = peek();
      Term t = expr(detail::kMaxPriority).first;
      if (!t.is_compound() || t.args().size() != 1) fail_at(at, "a directive of the form key(value)");
      expect(Tok::End, "'.'");
      p.directives.insert_or_assign(t.name(), t.args().front());
      return;
    }
    if ((peek().kind == Tok::Int || peek().kind == Tok::Real) && peek(1).kind == Tok::Symbol &&
        peek(1).text == "::") {
      p.ads.push_back(annotated_disjunction());
      return;
    }
    const Token& start = peek();
    Term head = expr(detail::kArgumentPriority).first;
    if (at_symbol("::")) {
      next();
      p.neural.push_back(neural_declaration(head, start));
      return;
    }
    Clause c;
    c.head = to_atom(head, start);
    if (at_symbol(":-")) {
      next();
      c.body = body();
    }
    expect(Tok::End, "'.' or ':-'");
    p.clauses.push_back(std::move(c));
  }

  AnnotatedDisjunction annotated_disjunction() {
    AnnotatedDisjunction ad;
    for (;;) {
      const Token& num = peek();
      if (num.kind != Tok::Int && num.kind != Tok::Real) fail_at(num, "a probability");
      next();
      expect_symbol("::");
      const Token& at = peek();
      ad.alternatives.push_back({num.real_value, to_atom(expr(detail::kArgumentPriority).first, at)});
      if (!at_symbol(";")) break;
      next();
    }
    if (at_symbol(":-")) {
      next();
      ad.body = body();
    }
    expect(Tok::End, "'.', ';' or ':-'");
    return ad;
  }

  NeuralDeclaration neural_declaration(const Term& spec, const Token& at) {
    if (!spec.is_compound() || spec.name() != "nn" || spec.args().size() != 4)
      fail_at(at, "nn(Network, [Inputs], Output, [Domain]) before '::'");
    const auto& a = spec.args();
    NeuralDeclaration d;
    if (!a[0].is_constant()) fail_at(at, "a network identifier");
    d.network = a[0].name();
    if (!a[1].is_list() || a[1].tail()) fail_at(at, "a list of input variables");
    for (const auto& v : a[1].args()) {
      if (!v.is_variable()) fail_at(at, "input variables");
      d.inputs.push_back(v.name());
    }
    if (!a[2].is_variable()) fail_at(at, "an output variable");
    d.output = a[2].name();
    if (!a[3].is_list() || a[3].tail()) fail_at(at, "a domain list");
    for (const auto& c : a[3].args()) {
      if (!c.is_constant()) fail_at(at, "domain constants");
      d.domain.push_back(c.name());
    }
    const Token& head_at = peek();
    Atom head = to_atom(expr(detail::kArgumentPriority).first, head_at);
    d.predicate = head.predicate;
    std::vector<Term> expected;
    for (const auto& v : d.inputs) expected.push_back(Term::variable(v));
    expected.push_back(Term::variable(d.output));
    if (head.args != expected)
      fail_at(head_at, "a head whose arguments are the input variables followed by the output");
    expect(Tok::End, "'.'");
    return d;
  }

  std::vector<Atom> body() {
    std::vector<Atom> goals;
    for (;;) {
      const Token& at = peek();
      goals.push_back(to_atom(expr(detail::kArgumentPriority).first, at));
      if (peek().kind != Tok::Comma) break;
      next();
    }
    return goals;
  }

  Atom to_atom(const Term& t, const Token& at) const {
    if (t.is_constant()) return {t.name(), {}};
    if (t.is_compound()) return {t.name(), t.args()};
    fail_at(at, "an atom");
  }

  std::optional<detail::InfixOperator> infix_here() const {
    const Token& t = peek();
    if (t.kind == Tok::Symbol || (t.kind == Tok::Name && !t.quoted)) return detail::find_infix(t.text);
    return std::nullopt;
  }

  // Returns the term and the priority of its principal operator.
  std::pair<Term, int> expr(int max_priority) {
    auto [left, left_priority] = primary(max_priority);
    for (;;) {
      auto op = infix_here();
      if (!op || op->priority > max_priority) break;
      const int left_max = op->assoc == detail::Assoc::Yfx ? op->priority : op->priority - 1;
      if (left_priority > left_max) break;
      next();
      Term right = expr(op->priority - 1).first;
      left = Term::compound(std::string(op->symbol), {std::move(left), std::move(right)});
      left_priority = op->priority;
    }
    return {std::move(left), left_priority};
  }

  std::vector<Term> arguments(Tok close, const std::string& what) {
    std::vector<Term> args;
    for (;;) {
      args.push_back(expr(detail::kArgumentPriority).first);
      if (peek().kind != Tok::Comma) break;
      next();
    }
    expect(close, what);
    return args;
  }

  std::pair<Term, int> primary(int max_priority) {
    const Token& t = peek();
    switch (t.kind) {
      case Tok::Var:
        next();
        return {Term::variable(t.text), 0};
      case Tok::Int:
        next();
        return {Term::integer(t.int_value), 0};
      case Tok::Name: {
        next();
        if (peek().kind == Tok::LParen && !peek().space_before) {
          next();
          auto args = arguments(Tok::RParen, "',' or ')'");
          return {Term::compound(t.text, std::move(args)), 0};
        }
        return {Term::constant(t.text), 0};
      }
      case Tok::LBracket: {
        next();
        if (peek().kind == Tok::RBracket) {
          next();
          return {Term::list({}), 0};
        }
        std::vector<Term> elems;
        for (;;) {
          elems.push_back(expr(detail::kArgumentPriority).first);
          if (peek().kind != Tok::Comma) break;
          next();
        }
        std::optional<Term> tail;
        if (peek().kind == Tok::Bar) {
          next();
          tail = expr(detail::kArgumentPriority).first;
        }
        expect(Tok::RBracket, "',', '|' or ']'");
        return {Term::list(std::move(elems), std::move(tail)), 0};
      }
      case Tok::LParen: {
        next();
        Term inner = expr(detail::kMaxPriority).first;
        expect(Tok::RParen, "')'");
        return {std::move(inner), 0};
      }
      case Tok::Symbol:
        if (t.text == "-") {
          const Token& n = peek(1);
          if (n.kind == Tok::Int && !n.space_before) {
            next();
            next();
            return {Term::integer(-n.int_value), 0};
          }
          if (200 <= max_priority) {
            next();
            Term operand = expr(200).first;
            return {Term::compound("-", {std::move(operand)}), 200};
          }
        }
        break;
      case Tok::Real:
        fail_at(t, "a term (real numbers are only allowed as probabilities)");
      default:
        break;
    }
    fail_at(t, "a term");
  }

  std::vector<Token> tokens_;
  std::size_t pos_ = 0;
};

std::string format_sum(double value) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.10g", value);
  return buf;
}

void check_term(const Term& t, std::vector<Diagnostic>& out) {
  switch (t.kind()) {
    case Term::Kind::Variable: {
      const char c = t.name().empty() ? '\0' : t.name().front();
      if (!(std::isupper(static_cast<unsigned char>(c)) || c == '_'))
        out.push_back({"bad-variable", "variable name '" + t.name() + "' must start uppercase or '_'"});
      return;
    }
    case Term::Kind::Constant:
      if (t.name().empty()) out.push_back({"bad-constant", "empty constant name"});
      return;
    default:
      for (const auto& a : t.args()) check_term(a, out);
      if (t.tail()) {
        const Term& tail = *t.tail();
        if (!tail.is_variable() && !tail.is_list())
          out.push_back({"improper-list", "list tail " + to_string(tail) + " is not a list"});
        check_term(tail, out);
      }
  }
}

std::string signature(const std::string& name, std::size_t arity) {
  return name + "/" + std::to_string(arity);
}

}  // namespace

Program parse_program(std::string_view text, const ParseOptions& options) {
  Program p = Parser(text).program();
  if (options.check) {
    for (const auto& d : validate(p)) {
      if (d.code == "ad-sum" || d.code == "ad-probability" || d.code == "nn-duplicate" ||
          d.code == "nn-domain")
        throw ValidationError(d.message);
    }
  }
  return p;
}

Term parse_term(std::string_view text) { return Parser(text).single_term(); }

Atom parse_atom(std::string_view text) {
  Term t = parse_term(text);
  if (t.is_constant()) return {t.name(), {}};
  if (t.is_compound()) return {t.name(), t.args()};
  throw SyntaxError("expected an atom but found " + to_string(t), 1, 1);
}

std::vector<Diagnostic> validate(const Program& program, const PredicateSet& builtins) {
  std::vector<Diagnostic> out;

  PredicateSet defined = builtins;
  std::set<std::string> neural_names;
  for (const auto& d : program.neural) {
    if (!neural_names.insert(d.predicate).second)
      out.push_back({"nn-duplicate", "duplicate neural declaration for " + d.predicate});
    defined.insert({d.predicate, d.arity()});
    std::set<std::string> seen;
    for (const auto& y : d.domain) {
      if (!seen.insert(y).second)
        out.push_back({"nn-domain", "neural domain of " + d.predicate + " repeats " + y});
    }
    if (d.domain.empty()) out.push_back({"nn-domain", "neural domain of " + d.predicate + " is empty"});
    std::set<std::string> vars(d.inputs.begin(), d.inputs.end());
    vars.insert(d.output);
    if (vars.size() != d.arity())
      out.push_back({"nn-variables", "neural declaration for " + d.predicate + " reuses a variable"});
  }
  for (const auto& c : program.clauses) defined.insert({c.head.predicate, c.head.arity()});
  for (const auto& ad : program.ads) {
    for (const auto& alt : ad.alternatives) defined.insert({alt.head.predicate, alt.head.arity()});
  }

  auto check_head = [&](const Atom& head) {
    if (neural_names.count(head.predicate))
      out.push_back({"nn-conflict", "clause head " + signature(head.predicate, head.arity()) +
                                        " redefines a neural predicate"});
    for (const auto& a : head.args) check_term(a, out);
  };
  auto check_body = [&](const std::vector<Atom>& body) {
    for (const auto& goal : body) {
      for (const auto& a : goal.args) check_term(a, out);
      if (!defined.count({goal.predicate, goal.arity()}))
        out.push_back({"undefined-predicate",
                       "undefined predicate " + signature(goal.predicate, goal.arity())});
    }
  };

  for (const auto& c : program.clauses) {
    check_head(c.head);
    check_body(c.body);
  }
  for (const auto& ad : program.ads) {
    for (const auto& alt : ad.alternatives) {
      check_head(alt.head);
      if (!(alt.probability >= 0.0 && alt.probability <= 1.0))
        out.push_back({"ad-probability", "AD probability " + format_sum(alt.probability) +
                                             " is outside [0, 1]"});
      if (!alt.head.is_ground())
        out.push_back({"ad-nonground", "AD head " + to_string(alt.head) + " is not ground"});
    }
    check_body(ad.body);
    for (const auto& b : ad.body) {
      if (!b.is_ground()) out.push_back({"ad-nonground", "AD body " + to_string(b) + " is not ground"});
    }
    const double sum = ad.total_probability();
    if (ad.alternatives.size() > 1 && std::abs(sum - 1.0) > 1e-9)
      out.push_back({"ad-sum", "AD probabilities sum to " + format_sum(sum)});
  }
  return out;
}

}  // namespace ncep
