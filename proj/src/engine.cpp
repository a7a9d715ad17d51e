#include "neurocep/engine.hpp"

#include <algorithm>
#include <set>
#include <sstream>
#include <unordered_map>

#include "neurocep/error.hpp"
#include "neurocep/rulelang.hpp"

namespace ncep {

// ---------------------------------------------------------------------------
// Syntax-level unification

namespace {

const Term* walk(const Substitution& s, const Term* t) {
  while (t->is_variable()) {
    auto it = s.find(t->name());
    if (it == s.end()) break;
    t = &it->second;
  }
  return t;
}

Term list_rest(const Term& list, std::size_t from) {
  std::vector<Term> rest(list.args().begin() + static_cast<std::ptrdiff_t>(from), list.args().end());
  std::optional<Term> tail;
  if (list.tail()) tail = *list.tail();
  return Term::list(std::move(rest), std::move(tail));
}

bool occurs(const Substitution& s, const std::string& var, const Term& t) {
  const Term* w = walk(s, &t);
  if (w->is_variable()) return w->name() == var;
  for (const auto& a : w->args()) {
    if (occurs(s, var, a)) return true;
  }
  if (w->tail()) return occurs(s, var, *w->tail());
  return false;
}

bool unify_into(Substitution& s, const Term& a, const Term& b) {
  const Term* x = walk(s, &a);
  const Term* y = walk(s, &b);
  if (x->is_variable() && y->is_variable() && x->name() == y->name()) return true;
  if (x->is_variable() || y->is_variable()) {
    if (!x->is_variable()) std::swap(x, y);
    if (occurs(s, x->name(), *y)) return false;
    s.insert_or_assign(x->name(), *y);
    return true;
  }
  if (x->kind() != y->kind()) return false;
  switch (x->kind()) {
    case Term::Kind::Constant:
      return x->name() == y->name();
    case Term::Kind::Integer:
      return x->value() == y->value();
    case Term::Kind::Compound:
      if (x->name() != y->name() || x->args().size() != y->args().size()) return false;
      for (std::size_t i = 0; i < x->args().size(); ++i) {
        if (!unify_into(s, x->args()[i], y->args()[i])) return false;
      }
      return true;
    case Term::Kind::List: {
      // Both non-empty (an empty tail-less list is [] and compares below).
      if (x->args().empty() || y->args().empty()) return x->args().empty() && y->args().empty();
      if (!unify_into(s, x->args().front(), y->args().front())) return false;
      // Copy the rests before recursing: `s` may be mutated.
      const Term xr = list_rest(*x, 1);
      const Term yr = list_rest(*y, 1);
      return unify_into(s, xr, yr);
    }
    default:
      return false;
  }
}

}  // namespace

Term apply(const Substitution& s, const Term& t) {
  const Term* w = walk(s, &t);
  switch (w->kind()) {
    case Term::Kind::Variable:
    case Term::Kind::Constant:
    case Term::Kind::Integer:
      return *w;
    case Term::Kind::Compound: {
      std::vector<Term> args;
      for (const auto& a : w->args()) args.push_back(ncep::apply(s, a));
      return Term::compound(w->name(), std::move(args));
    }
    case Term::Kind::List: {
      std::vector<Term> elems;
      for (const auto& a : w->args()) elems.push_back(ncep::apply(s, a));
      std::optional<Term> tail;
      if (w->tail()) tail = ncep::apply(s, *w->tail());
      return Term::list(std::move(elems), std::move(tail));
    }
  }
  return *w;
}

std::optional<Substitution> unify(const Term& a, const Term& b) {
  Substitution s;
  if (!unify_into(s, a, b)) return std::nullopt;
  Substitution resolved;
  for (const auto& [name, value] : s) resolved.emplace(name, ncep::apply(s, value));
  return resolved;
}

// ---------------------------------------------------------------------------
// Stream context

StreamContext StreamContext::contiguous(std::size_t length, std::int64_t window) {
  StreamContext c;
  c.window = window;
  c.timestamps.resize(length);
  for (std::size_t i = 0; i < length; ++i) c.timestamps[i] = static_cast<std::int64_t>(i);
  return c;
}

void StreamContext::check() const {
  if (window < 1) throw ValidationError("window must be >= 1");
  for (std::size_t i = 1; i < timestamps.size(); ++i) {
    if (timestamps[i] <= timestamps[i - 1])
      throw ValidationError("timestamps must be strictly increasing");
  }
}

std::optional<int> label_oracle(std::span<const int> classes, std::int64_t window, std::size_t t) {
  const auto lo = static_cast<std::int64_t>(t) - window + 1;
  for (auto p = std::max<std::int64_t>(lo, 0); p < static_cast<std::int64_t>(t); ++p) {
    if (classes[static_cast<std::size_t>(p)] == classes[t]) return classes[t];
  }
  return std::nullopt;
}

std::string to_string(const Proof& proof) {
  std::ostringstream os;
  os << '{';
  for (std::size_t i = 0; i < proof.size(); ++i) {
    const auto& l = proof[i];
    if (i) os << ", ";
    if (l.variable.kind == VariableKey::Kind::Neural) {
      os << "nn" << l.variable.source << '(' << l.variable.input << ")=" << l.outcome;
    } else {
      os << "ad" << l.variable.source << '=' << l.outcome;
    }
  }
  os << '}';
  return os.str();
}

// ---------------------------------------------------------------------------
// Solver

namespace {

enum class Tag : std::uint8_t { Ref, Con, Int, Str, Fun, Var };

struct Cell {
  Tag tag;
  std::uint32_t arity;  // Fun only
  std::int64_t v;       // address, symbol, integer or template variable number
};

enum class Builtin : std::uint8_t {
  Unify, NotUnify, Is, ArithEq, ArithNe, Less, Greater, LessEq, GreaterEq,
  True, Fail, Reverse, PreviousTimestamp, Window, AllTimestamps
};

struct ClauseTemplate {
  std::vector<Cell> block;
  std::int64_t head = 0;            // block offset of the head slot
  std::vector<std::int64_t> body;   // block offsets of goal slots
  std::int64_t variables = 0;
  Cell first_arg{Tag::Var, 0, 0};   // indexing key
  int ad = -1;                      // AD index when the clause is an AD alternative
  int outcome = 0;
  std::string text;
};

enum class ProcKind : std::uint8_t { User, Neural, Builtin };

struct Procedure {
  ProcKind kind = ProcKind::User;
  std::vector<int> clauses;
  int neural = -1;
  Builtin builtin = Builtin::True;
  std::string name;
};

struct Frame {
  std::int64_t goal;
  std::int32_t next;
  std::int32_t origin;  // clause template that introduced the goal, -1 for the query
};

enum class CpKind : std::uint8_t { Clauses, Neural };

struct ChoicePoint {
  CpKind kind;
  std::size_t heap, trail, frames, literals;
  std::int32_t cont;
  std::int64_t goal;
  int proc;
  int next;  // next clause position or outcome
  VariableKey var;  // neural choice points only
  std::int64_t out_addr;
};

std::uint64_t proc_key(std::int64_t symbol, std::size_t arity) {
  return (static_cast<std::uint64_t>(symbol) << 8) | static_cast<std::uint64_t>(arity);
}

}  // namespace

struct Solver::Impl {
  Impl(const Program& p, StreamContext c, SolveOptions o)
      : program(p), context(std::move(c)), options(o) {
    context.check();
    nil = intern("[]");
    dot = intern(".");
    for (const char* op : {"+", "-", "*", "//", "/", "mod", "abs", "min", "max"}) intern(op);
    build_procedures();
    build_context();
  }

  // -- symbols -------------------------------------------------------------
  std::int64_t intern(const std::string& s) {
    auto [it, inserted] = symbol_ids.emplace(s, static_cast<std::int64_t>(symbols.size()));
    if (inserted) symbols.push_back(s);
    return it->second;
  }

  // -- compilation of syntax trees into cell blocks -------------------------
  using VarNames = std::unordered_map<std::string, std::int64_t>;

  Cell build(const Term& t, std::vector<Cell>& block, VarNames& vars, std::int64_t& nvars) {
    switch (t.kind()) {
      case Term::Kind::Variable: {
        if (t.name() == "_") return {Tag::Var, 0, nvars++};
        auto [it, inserted] = vars.emplace(t.name(), nvars);
        if (inserted) ++nvars;
        return {Tag::Var, 0, it->second};
      }
      case Term::Kind::Constant:
        return {Tag::Con, 0, intern(t.name())};
      case Term::Kind::Integer:
        return {Tag::Int, 0, t.value()};
      case Term::Kind::Compound: {
        const auto at = static_cast<std::int64_t>(block.size());
        const auto n = t.args().size();
        block.push_back({Tag::Fun, static_cast<std::uint32_t>(n), intern(t.name())});
        block.resize(block.size() + n);
        for (std::size_t i = 0; i < n; ++i) {
          const Cell c = build(t.args()[i], block, vars, nvars);
          block[static_cast<std::size_t>(at) + 1 + i] = c;
        }
        return {Tag::Str, 0, at};
      }
      case Term::Kind::List:
        return build_list(t, 0, block, vars, nvars);
    }
    return {Tag::Con, 0, nil};
  }

  Cell build_list(const Term& t, std::size_t i, std::vector<Cell>& block, VarNames& vars,
                  std::int64_t& nvars) {
    if (i == t.args().size()) {
      if (t.tail()) return build(*t.tail(), block, vars, nvars);
      return {Tag::Con, 0, nil};
    }
    const auto at = static_cast<std::int64_t>(block.size());
    block.push_back({Tag::Fun, 2, dot});
    block.resize(block.size() + 2);
    const Cell head = build(t.args()[i], block, vars, nvars);
    block[static_cast<std::size_t>(at) + 1] = head;
    const Cell tail = build_list(t, i + 1, block, vars, nvars);
    block[static_cast<std::size_t>(at) + 2] = tail;
    return {Tag::Str, 0, at};
  }

  std::int64_t slot(const Term& t, std::vector<Cell>& block, VarNames& vars, std::int64_t& nvars) {
    const auto at = static_cast<std::int64_t>(block.size());
    block.push_back({});
    const Cell c = build(t, block, vars, nvars);
    block[static_cast<std::size_t>(at)] = c;
    return at;
  }

  int add_template(const Atom& head, const std::vector<Atom>& body, std::string text) {
    ClauseTemplate ct;
    VarNames vars;
    ct.head = slot(head.as_term(), ct.block, vars, ct.variables);
    for (const auto& g : body) ct.body.push_back(slot(g.as_term(), ct.block, vars, ct.variables));
    if (!head.args.empty()) {
      const Cell h = ct.block[static_cast<std::size_t>(ct.head)];
      ct.first_arg = ct.block[static_cast<std::size_t>(h.v) + 1];
      if (ct.first_arg.tag == Tag::Str) {
        const Cell f = ct.block[static_cast<std::size_t>(ct.first_arg.v)];
        ct.first_arg = {Tag::Fun, f.arity, f.v};
      }
    }
    ct.text = std::move(text);
    templates.push_back(std::move(ct));
    return static_cast<int>(templates.size()) - 1;
  }

  Procedure& procedure(const std::string& name, std::size_t arity) {
    const auto key = proc_key(intern(name), arity);
    auto [it, inserted] = proc_index.emplace(key, static_cast<int>(procs.size()));
    if (inserted) {
      procs.push_back({});
      procs.back().name = name + "/" + std::to_string(arity);
    }
    return procs[static_cast<std::size_t>(it->second)];
  }

  void build_procedures() {
    for (const auto& c : program.clauses) {
      const int id = add_template(c.head, c.body, to_string(c));
      procedure(c.head.predicate, c.head.arity()).clauses.push_back(id);
    }
    for (std::size_t k = 0; k < program.ads.size(); ++k) {
      const auto& ad = program.ads[k];
      std::vector<double> dist;
      for (std::size_t j = 0; j < ad.alternatives.size(); ++j) {
        const auto& alt = ad.alternatives[j];
        const int id = add_template(alt.head, ad.body, to_string(ad));
        templates[static_cast<std::size_t>(id)].ad = static_cast<int>(k);
        templates[static_cast<std::size_t>(id)].outcome = static_cast<int>(j);
        procedure(alt.head.predicate, alt.head.arity()).clauses.push_back(id);
        dist.push_back(alt.probability);
      }
      if (ad.alternatives.size() == 1) dist.push_back(1.0 - dist.front());
      ad_distributions.push_back(std::move(dist));
    }
    for (std::size_t k = 0; k < program.neural.size(); ++k) {
      const auto& d = program.neural[k];
      if (d.inputs.size() != 1)
        throw ValidationError("neural predicate " + d.predicate +
                              " must take exactly one timestamp input");
      Procedure& p = procedure(d.predicate, d.arity());
      p.kind = ProcKind::Neural;
      p.neural = static_cast<int>(k);
      std::vector<std::int64_t> domain;
      for (const auto& y : d.domain) domain.push_back(intern(y));
      neural_domains.push_back(std::move(domain));
    }
    const std::pair<const char*, std::pair<std::size_t, Builtin>> builtins[] = {
        {"=", {2, Builtin::Unify}},        {"\\=", {2, Builtin::NotUnify}},
        {"is", {2, Builtin::Is}},          {"=:=", {2, Builtin::ArithEq}},
        {"=\\=", {2, Builtin::ArithNe}},   {"<", {2, Builtin::Less}},
        {">", {2, Builtin::Greater}},      {"=<", {2, Builtin::LessEq}},
        {">=", {2, Builtin::GreaterEq}},   {"true", {0, Builtin::True}},
        {"fail", {0, Builtin::Fail}},      {"window", {1, Builtin::Window}},
        {"allTimeStamps", {1, Builtin::AllTimestamps}},
    };
    for (const auto& [name, spec] : builtins) {
      Procedure& p = procedure(name, spec.first);
      p.kind = ProcKind::Builtin;
      p.builtin = spec.second;
    }
    if (options.native_helpers) {
      Procedure& r = procedure("reverse", 2);
      r.kind = ProcKind::Builtin;
      r.builtin = Builtin::Reverse;
      Procedure& pt = procedure("previousTimeStamp", 3);
      pt.kind = ProcKind::Builtin;
      pt.builtin = Builtin::PreviousTimestamp;
    }
  }

  void build_context() {
    const std::int64_t origin = context.timestamps.empty() ? -1 : context.timestamps.front() - 1;
    stamps.reserve(context.timestamps.size() + 1);
    stamps.push_back(origin);
    stamps.insert(stamps.end(), context.timestamps.begin(), context.timestamps.end());
    // Cons cells laid out back to front so each tail is already built.
    Cell tail{Tag::Con, 0, nil};
    for (auto it = stamps.rbegin(); it != stamps.rend(); ++it) {
      const auto at = static_cast<std::int64_t>(heap.size());
      heap.push_back({Tag::Fun, 2, dot});
      heap.push_back({Tag::Int, 0, *it});
      heap.push_back(tail);
      tail = {Tag::Str, 0, at};
    }
    stamps_list = static_cast<std::int64_t>(heap.size());
    heap.push_back(tail);
    heap_base = heap.size();
  }

  // -- heap machinery -------------------------------------------------------
  std::int64_t deref(std::int64_t a) const {
    for (;;) {
      const Cell& c = heap[static_cast<std::size_t>(a)];
      if (c.tag != Tag::Ref || c.v == a) return a;
      a = c.v;
    }
  }

  bool unbound(std::int64_t a) const {
    const Cell& c = heap[static_cast<std::size_t>(a)];
    return c.tag == Tag::Ref && c.v == a;
  }

  void bind(std::int64_t var, std::int64_t value) {
    heap[static_cast<std::size_t>(var)].v = value;
    trail.push_back(var);
  }

  bool unify_cells(std::int64_t a, std::int64_t b) {
    pairs.clear();
    pairs.emplace_back(a, b);
    while (!pairs.empty()) {
      auto [x, y] = pairs.back();
      pairs.pop_back();
      x = deref(x);
      y = deref(y);
      if (x == y) continue;
      const Cell cx = heap[static_cast<std::size_t>(x)];
      const Cell cy = heap[static_cast<std::size_t>(y)];
      if (cx.tag == Tag::Ref) {
        if (cy.tag == Tag::Ref && y > x) {
          bind(y, x);
        } else {
          bind(x, y);
        }
        continue;
      }
      if (cy.tag == Tag::Ref) {
        bind(y, x);
        continue;
      }
      if (cx.tag != cy.tag) return false;
      if (cx.tag == Tag::Str) {
        const Cell fx = heap[static_cast<std::size_t>(cx.v)];
        const Cell fy = heap[static_cast<std::size_t>(cy.v)];
        if (fx.v != fy.v || fx.arity != fy.arity) return false;
        for (std::uint32_t i = 1; i <= fx.arity; ++i) pairs.emplace_back(cx.v + i, cy.v + i);
      } else if (cx.v != cy.v) {
        return false;
      }
    }
    return true;
  }

  /// Copies a template onto the heap with fresh variables; returns the base.
  std::int64_t instantiate(const ClauseTemplate& ct) {
    const auto base = static_cast<std::int64_t>(heap.size());
    varmap.assign(static_cast<std::size_t>(ct.variables), -1);
    heap.resize(heap.size() + ct.block.size());
    for (std::size_t i = 0; i < ct.block.size(); ++i) {
      Cell c = ct.block[i];
      const auto at = base + static_cast<std::int64_t>(i);
      if (c.tag == Tag::Str) {
        c.v += base;
      } else if (c.tag == Tag::Var) {
        auto& m = varmap[static_cast<std::size_t>(c.v)];
        if (m < 0) {
          m = at;
          c = {Tag::Ref, 0, at};
        } else {
          c = {Tag::Ref, 0, m};
        }
      }
      heap[static_cast<std::size_t>(at)] = c;
    }
    return base;
  }

  Term to_term(std::int64_t a) const {
    a = deref(a);
    const Cell& c = heap[static_cast<std::size_t>(a)];
    switch (c.tag) {
      case Tag::Ref:
        return Term::variable("_G" + std::to_string(a));
      case Tag::Con:
        return c.v == nil ? Term::list({}) : Term::constant(symbols[static_cast<std::size_t>(c.v)]);
      case Tag::Int:
        return Term::integer(c.v);
      default:
        break;
    }
    const Cell& f = heap[static_cast<std::size_t>(c.v)];
    if (f.v == dot && f.arity == 2) {
      return Term::list({to_term(c.v + 1)}, to_term(c.v + 2));
    }
    std::vector<Term> args;
    for (std::uint32_t i = 1; i <= f.arity; ++i) args.push_back(to_term(c.v + i));
    return Term::compound(symbols[static_cast<std::size_t>(f.v)], std::move(args));
  }

  std::string describe_origin(std::int32_t origin) const {
    if (origin < 0) return "the query";
    return "clause `" + templates[static_cast<std::size_t>(origin)].text + "`";
  }

  // -- arithmetic -----------------------------------------------------------
  std::int64_t eval(std::int64_t a, std::int32_t origin) const {
    a = deref(a);
    const Cell& c = heap[static_cast<std::size_t>(a)];
    switch (c.tag) {
      case Tag::Int:
        return c.v;
      case Tag::Ref:
        throw EvaluationError("unbound variable in arithmetic expression in " + describe_origin(origin));
      case Tag::Str:
        break;
      default:
        throw EvaluationError("non-numeric term " + to_string(to_term(a)) +
                              " in arithmetic expression in " + describe_origin(origin));
    }
    const Cell& f = heap[static_cast<std::size_t>(c.v)];
    const std::string& op = symbols[static_cast<std::size_t>(f.v)];
    if (f.arity == 1) {
      const auto x = eval(c.v + 1, origin);
      if (op == "-") return -x;
      if (op == "abs") return x < 0 ? -x : x;
    } else if (f.arity == 2) {
      const auto x = eval(c.v + 1, origin);
      const auto y = eval(c.v + 2, origin);
      if (op == "+") return x + y;
      if (op == "-") return x - y;
      if (op == "*") return x * y;
      if (op == "min") return std::min(x, y);
      if (op == "max") return std::max(x, y);
      if (op == "//" || op == "/" || op == "mod") {
        if (y == 0) throw EvaluationError("division by zero in " + describe_origin(origin));
        if (op == "mod") return ((x % y) + y) % y;
        return x / y;
      }
    }
    throw EvaluationError("unknown arithmetic function " + op + "/" + std::to_string(f.arity) +
                          " in " + describe_origin(origin));
  }

  // -- built-ins ------------------------------------------------------------
  bool proper_list(std::int64_t a, std::vector<std::int64_t>& elems) const {
    elems.clear();
    for (;;) {
      a = deref(a);
      const Cell& c = heap[static_cast<std::size_t>(a)];
      if (c.tag == Tag::Con && c.v == nil) return true;
      if (c.tag != Tag::Str) return false;
      const Cell& f = heap[static_cast<std::size_t>(c.v)];
      if (f.v != dot || f.arity != 2) return false;
      elems.push_back(c.v + 1);
      a = c.v + 2;
    }
  }

  std::int64_t push_list(const std::vector<std::int64_t>& elems, bool reversed) {
    Cell tail{Tag::Con, 0, nil};
    const auto n = elems.size();
    for (std::size_t k = 0; k < n; ++k) {
      const auto e = reversed ? elems[k] : elems[n - 1 - k];
      const auto at = static_cast<std::int64_t>(heap.size());
      heap.push_back({Tag::Fun, 2, dot});
      heap.push_back({Tag::Ref, 0, e});
      heap.push_back(tail);
      tail = {Tag::Str, 0, at};
    }
    const auto at = static_cast<std::int64_t>(heap.size());
    heap.push_back(tail);
    return at;
  }

  std::int64_t push_int(std::int64_t v) {
    const auto at = static_cast<std::int64_t>(heap.size());
    heap.push_back({Tag::Int, 0, v});
    return at;
  }

  bool run_builtin(Builtin b, std::int64_t args, std::int32_t origin) {
    switch (b) {
      case Builtin::True:
        return true;
      case Builtin::Fail:
        return false;
      case Builtin::Unify:
        return unify_cells(args + 1, args + 2);
      case Builtin::NotUnify: {
        const auto heap_top = heap.size();
        const auto trail_top = trail.size();
        const bool ok = unify_cells(args + 1, args + 2);
        undo(trail_top);
        heap.resize(heap_top);
        return !ok;
      }
      case Builtin::Is:
        return unify_cells(args + 1, push_int(eval(args + 2, origin)));
      case Builtin::ArithEq:
        return eval(args + 1, origin) == eval(args + 2, origin);
      case Builtin::ArithNe:
        return eval(args + 1, origin) != eval(args + 2, origin);
      case Builtin::Less:
        return eval(args + 1, origin) < eval(args + 2, origin);
      case Builtin::Greater:
        return eval(args + 1, origin) > eval(args + 2, origin);
      case Builtin::LessEq:
        return eval(args + 1, origin) <= eval(args + 2, origin);
      case Builtin::GreaterEq:
        return eval(args + 1, origin) >= eval(args + 2, origin);
      case Builtin::Window:
        return unify_cells(args + 1, push_int(context.window));
      case Builtin::AllTimestamps:
        return unify_cells(args + 1, stamps_list);
      case Builtin::Reverse: {
        if (proper_list(args + 1, scratch)) return unify_cells(args + 2, push_list(scratch, true));
        if (proper_list(args + 2, scratch)) return unify_cells(args + 1, push_list(scratch, true));
        throw EvaluationError("reverse/2 called with unbound list in " + describe_origin(origin));
      }
      case Builtin::PreviousTimestamp:
        return previous_timestamp(args, origin);
    }
    return false;
  }

  bool previous_timestamp(std::int64_t args, std::int32_t origin) {
    const auto t_addr = deref(args + 1);
    const Cell& tc = heap[static_cast<std::size_t>(t_addr)];
    if (tc.tag != Tag::Int)
      throw EvaluationError("previousTimeStamp/3 needs an integer timestamp in " + describe_origin(origin));
    const std::int64_t t = tc.v;
    std::optional<std::int64_t> prev;
    if (deref(args + 2) == deref(stamps_list)) {
      auto it = std::lower_bound(stamps.begin(), stamps.end(), t);
      if (it != stamps.begin()) prev = *(it - 1);
    } else {
      if (!proper_list(args + 2, scratch))
        throw EvaluationError("previousTimeStamp/3 needs a proper list in " + describe_origin(origin));
      for (auto e : scratch) {
        const Cell& c = heap[static_cast<std::size_t>(deref(e))];
        if (c.tag != Tag::Int)
          throw EvaluationError("previousTimeStamp/3 list holds a non-integer in " +
                                describe_origin(origin));
        if (c.v >= t) break;
        prev = c.v;
      }
    }
    if (!prev) return false;
    return unify_cells(args + 3, push_int(*prev));
  }

  // -- search ---------------------------------------------------------------
  void undo(std::size_t trail_top) {
    while (trail.size() > trail_top) {
      const auto a = trail.back();
      trail.pop_back();
      heap[static_cast<std::size_t>(a)].v = a;
    }
  }

  void restore(const ChoicePoint& cp) {
    undo(cp.trail);
    heap.resize(cp.heap);
    frames.resize(cp.frames);
    literals.resize(cp.literals);
  }

  /// Returns -1 if consistent and absent, -2 if conflicting, else the index.
  int find_literal(const VariableKey& var, int outcome) const {
    for (std::size_t i = 0; i < literals.size(); ++i) {
      if (literals[i].variable == var) return literals[i].outcome == outcome ? static_cast<int>(i) : -2;
    }
    return -1;
  }

  std::optional<int> decided(const VariableKey& var) const {
    for (const auto& l : literals) {
      if (l.variable == var) return l.outcome;
    }
    return std::nullopt;
  }

  bool matches_first_arg(const ClauseTemplate& ct, std::int64_t goal_args) const {
    if (ct.first_arg.tag == Tag::Var) return true;
    const auto a = deref(goal_args + 1);
    const Cell& c = heap[static_cast<std::size_t>(a)];
    switch (c.tag) {
      case Tag::Ref:
        return true;
      case Tag::Str: {
        if (ct.first_arg.tag != Tag::Fun) return false;
        const Cell& f = heap[static_cast<std::size_t>(c.v)];
        return f.v == ct.first_arg.v && f.arity == ct.first_arg.arity;
      }
      default:
        return c.tag == ct.first_arg.tag && c.v == ct.first_arg.v;
    }
  }

  int next_clause(const Procedure& p, int from, std::int64_t goal_args, std::uint32_t arity) const {
    for (int i = from; i < static_cast<int>(p.clauses.size()); ++i) {
      if (arity == 0 || matches_first_arg(templates[static_cast<std::size_t>(p.clauses[static_cast<std::size_t>(i)])], goal_args))
        return i;
    }
    return -1;
  }

  /// Resolves `goal` against clause `pos` of `proc`, pushing its body onto `goals`.
  bool try_clause(const Procedure& p, int pos, std::int64_t goal, std::int32_t& goals) {
    const int id = p.clauses[static_cast<std::size_t>(pos)];
    const ClauseTemplate& ct = templates[static_cast<std::size_t>(id)];
    const auto base = instantiate(ct);
    if (!unify_cells(goal, base + ct.head)) return false;
    if (ct.ad >= 0) {
      const VariableKey var{VariableKey::Kind::Annotated, ct.ad, 0};
      const int found = find_literal(var, ct.outcome);
      if (found == -2) return false;
      if (found == -1) literals.push_back({var, ct.outcome});
    }
    for (auto it = ct.body.rbegin(); it != ct.body.rend(); ++it) {
      frames.push_back({base + *it, goals, id});
      goals = static_cast<std::int32_t>(frames.size()) - 1;
    }
    return true;
  }

  bool bind_outcome(std::int64_t out_addr, int neural, int k) {
    const auto sym = neural_domains[static_cast<std::size_t>(neural)][static_cast<std::size_t>(k)];
    const auto at = static_cast<std::int64_t>(heap.size());
    heap.push_back({Tag::Con, 0, sym});
    return unify_cells(out_addr, at);
  }

  bool call_neural(const Procedure& p, std::int64_t args, std::int32_t origin, std::int32_t goals,
                   std::int64_t goal) {
    const auto in = deref(args + 1);
    const Cell& ic = heap[static_cast<std::size_t>(in)];
    if (ic.tag == Tag::Ref)
      throw EvaluationError("neural predicate " + p.name + " called with unbound input in " +
                            describe_origin(origin));
    if (ic.tag != Tag::Int)
      throw EvaluationError("neural predicate " + p.name + " needs an integer timestamp input in " +
                            describe_origin(origin));
    const VariableKey var{VariableKey::Kind::Neural, p.neural, ic.v};
    const auto& domain = neural_domains[static_cast<std::size_t>(p.neural)];
    const auto out = deref(args + 2);
    const Cell oc = heap[static_cast<std::size_t>(out)];
    if (oc.tag != Tag::Ref) {
      if (oc.tag != Tag::Con) return false;
      const auto it = std::find(domain.begin(), domain.end(), oc.v);
      if (it == domain.end()) return false;
      const int k = static_cast<int>(it - domain.begin());
      const int found = find_literal(var, k);
      if (found == -2) return false;
      if (found == -1) literals.push_back({var, k});
      return true;
    }
    if (auto k = decided(var)) return bind_outcome(out, p.neural, *k);
    if (domain.size() > 1) {
      cps.push_back({CpKind::Neural, heap.size(), trail.size(), frames.size(), literals.size(), goals,
                     goal, p.neural, 1, var, out});
    }
    literals.push_back({var, 0});
    return bind_outcome(out, p.neural, 0);
  }

  bool call(std::int64_t goal, std::int32_t origin, std::int32_t& goals) {
    const auto g = deref(goal);
    const Cell& c = heap[static_cast<std::size_t>(g)];
    std::int64_t symbol;
    std::uint32_t arity;
    std::int64_t args;
    if (c.tag == Tag::Con) {
      symbol = c.v;
      arity = 0;
      args = g;
    } else if (c.tag == Tag::Str) {
      const Cell& f = heap[static_cast<std::size_t>(c.v)];
      symbol = f.v;
      arity = f.arity;
      args = c.v;
    } else if (c.tag == Tag::Ref) {
      throw EvaluationError("unbound goal in " + describe_origin(origin));
    } else {
      throw EvaluationError("goal is not callable in " + describe_origin(origin));
    }
    const auto it = proc_index.find(proc_key(symbol, arity));
    if (it == proc_index.end())
      throw EvaluationError("undefined predicate " + symbols[static_cast<std::size_t>(symbol)] + "/" +
                            std::to_string(arity) + " in " + describe_origin(origin));
    const Procedure& p = procs[static_cast<std::size_t>(it->second)];
    switch (p.kind) {
      case ProcKind::Builtin:
        return run_builtin(p.builtin, args, origin);
      case ProcKind::Neural:
        return call_neural(p, args, origin, goals, goal);
      case ProcKind::User:
        break;
    }
    const int first = next_clause(p, 0, args, arity);
    if (first < 0) return false;
    const int second = next_clause(p, first + 1, args, arity);
    if (second >= 0) {
      cps.push_back({CpKind::Clauses, heap.size(), trail.size(), frames.size(), literals.size(), goals,
                     goal, it->second, second, {}, 0});
    }
    return try_clause(p, first, goal, goals);
  }

  bool backtrack(std::int32_t& goals) {
    while (!cps.empty()) {
      ChoicePoint& cp = cps.back();
      restore(cp);
      goals = cp.cont;
      if (cp.kind == CpKind::Clauses) {
        const Procedure& p = procs[static_cast<std::size_t>(cp.proc)];
        const auto g = deref(cp.goal);
        const Cell& c = heap[static_cast<std::size_t>(g)];
        const std::int64_t args = c.tag == Tag::Str ? c.v : g;
        const std::uint32_t arity = c.tag == Tag::Str ? heap[static_cast<std::size_t>(c.v)].arity : 0;
        const int pos = cp.next;
        const int after = next_clause(p, pos + 1, args, arity);
        const auto goal = cp.goal;
        if (after < 0) {
          cps.pop_back();
        } else {
          cp.next = after;
        }
        if (try_clause(p, pos, goal, goals)) return true;
      } else {
        const int k = cp.next;
        const auto var = cp.var;
        const auto out = cp.out_addr;
        const int neural = cp.proc;
        if (k + 1 < static_cast<int>(neural_domains[static_cast<std::size_t>(neural)].size())) {
          cp.next = k + 1;
        } else {
          cps.pop_back();
        }
        literals.push_back({var, k});
        if (bind_outcome(out, neural, k)) return true;
      }
    }
    return false;
  }

  ProofSet solve(const Atom& query) {
    heap.resize(heap_base);
    trail.clear();
    frames.clear();
    cps.clear();
    literals.clear();
    steps = 0;

    std::vector<Cell> block;
    VarNames vars;
    std::int64_t nvars = 0;
    const auto q = slot(query.as_term(), block, vars, nvars);
    ClauseTemplate ct;
    ct.block = std::move(block);
    ct.variables = nvars;
    const auto base = instantiate(ct);
    frames.push_back({base + q, -1, -1});
    std::int32_t goals = 0;

    std::set<Proof> found;
    for (;;) {
      if (goals < 0) {
        Proof proof = literals;
        std::sort(proof.begin(), proof.end());
        found.insert(std::move(proof));
        if (!backtrack(goals)) break;
        continue;
      }
      const Frame f = frames[static_cast<std::size_t>(goals)];
      goals = f.next;
      if (++steps > options.max_steps)
        throw ResourceError("resolution step bound of " + std::to_string(options.max_steps) +
                            " exceeded for query " + to_string(query));
      if (!call(f.goal, f.origin, goals)) {
        if (!backtrack(goals)) break;
      }
    }

    ProofSet result;
    std::vector<Proof> by_size(found.begin(), found.end());
    std::stable_sort(by_size.begin(), by_size.end(),
                     [](const Proof& a, const Proof& b) { return a.size() < b.size(); });
    std::vector<Proof> minimal;
    for (auto& p : by_size) {
      const bool subsumed = std::any_of(minimal.begin(), minimal.end(), [&](const Proof& m) {
        return std::includes(p.begin(), p.end(), m.begin(), m.end());
      });
      if (!subsumed) minimal.push_back(std::move(p));
    }
    std::sort(minimal.begin(), minimal.end());
    for (const auto& p : minimal) {
      for (const auto& l : p) {
        if (l.variable.kind == VariableKey::Kind::Annotated)
          result.annotated.emplace(l.variable.source,
                                   ad_distributions[static_cast<std::size_t>(l.variable.source)]);
      }
    }
    result.proofs = std::move(minimal);
    return result;
  }

  const Program& program;
  StreamContext context;
  SolveOptions options;

  std::vector<std::string> symbols;
  std::unordered_map<std::string, std::int64_t> symbol_ids;
  std::int64_t nil = 0, dot = 0;

  std::vector<ClauseTemplate> templates;
  std::vector<Procedure> procs;
  std::unordered_map<std::uint64_t, int> proc_index;
  std::vector<std::vector<std::int64_t>> neural_domains;
  std::vector<std::vector<double>> ad_distributions;

  std::vector<std::int64_t> stamps;  // origin followed by the context timestamps
  std::int64_t stamps_list = 0;
  std::size_t heap_base = 0;

  std::vector<Cell> heap;
  std::vector<std::int64_t> trail;
  std::vector<Frame> frames;
  std::vector<ChoicePoint> cps;
  std::vector<Literal> literals;
  std::vector<std::int64_t> varmap;
  std::vector<std::int64_t> scratch;
  std::vector<std::pair<std::int64_t, std::int64_t>> pairs;
  std::size_t steps = 0;
};

Solver::Solver(const Program& program, StreamContext context, SolveOptions options)
    : impl_(std::make_unique<Impl>(program, std::move(context), options)) {}
Solver::~Solver() = default;
Solver::Solver(Solver&&) noexcept = default;
Solver& Solver::operator=(Solver&&) noexcept = default;

ProofSet Solver::solve(const Atom& query) { return impl_->solve(query); }
std::size_t Solver::last_steps() const { return impl_->steps; }
const StreamContext& Solver::context() const { return impl_->context; }

ProofSet solve(const Program& program, const StreamContext& context, const Atom& query,
               const SolveOptions& options) {
  return Solver(program, context, options).solve(query);
}

}  // namespace ncep
