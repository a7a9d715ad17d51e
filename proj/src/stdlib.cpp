#include "neurocep/stdlib.hpp"

#include <cctype>
#include <sstream>

#include "neurocep/rulelang.hpp"

namespace ncep {

namespace {

constexpr std::string_view kSequenceFramework = R"(% Sequence framework.
sequence(S, W, T) :-
    reverse(S, S2),
    sequenceEndingAt(S2, W, T).
sequenceWithin([], _, _).
sequenceWithin(S, W, T) :-
    sequenceEndingAt(S, W, T).
sequenceWithin(S, W, T) :-
    W > 0, T >= 0,
    NextW is W - 1,
    allTimeStamps(Timestamps),
    previousTimeStamp(T, Timestamps, Tprev),
    sequenceWithin(S, NextW, Tprev).
sequenceEndingAt([X | L], W, T) :-
    W > 0, T >= 0,
    digit(T, X),
    NextW is W - 1,
    allTimeStamps(Timestamps),
    previousTimeStamp(T, Timestamps, Tprev),
    sequenceWithin(L, NextW, Tprev).
)";

constexpr std::string_view kHelpers = R"(
% Helpers. The engine evaluates reverse/2 and previousTimeStamp/3 natively;
% these clauses are the reference definitions.
reverse(L, R) :- reverseAcc(L, [], R).
reverseAcc([], Acc, Acc).
reverseAcc([X | Xs], Acc, R) :- reverseAcc(Xs, [X | Acc], R).

% Largest element of the ascending list strictly below T.
previousTimeStamp(T, [P], P) :- P < T.
previousTimeStamp(T, [P, N | _], P) :- P < T, N >= T.
previousTimeStamp(T, [_, N | Rest], Tp) :- N < T, previousTimeStamp(T, [N | Rest], Tp).
)";

}  // namespace

std::string_view sequence_framework_source() { return kSequenceFramework; }

const std::string& stdlib_source() {
  static const std::string source = std::string(kSequenceFramework) + std::string(kHelpers);
  return source;
}

Program stdlib() { return parse_program(stdlib_source()); }

const std::vector<std::string>& sound_class_names() {
  static const std::vector<std::string> names = {
      "air_conditioner", "car_horn",  "children_playing", "dog_bark", "drilling",
      "enginge_idling",  "gun_shot",  "jackhammer",       "siren",    "street_music"};
  return names;
}

std::string complex_event_name(std::string_view class_name) {
  std::string out = "ce";
  bool upper = true;
  for (char c : class_name) {
    if (c == '_') {
      upper = true;
      continue;
    }
    out.push_back(upper ? static_cast<char>(std::toupper(static_cast<unsigned char>(c))) : c);
    upper = false;
  }
  return out;
}

std::string repeat_rules_source(const std::vector<std::string>& classes) {
  std::ostringstream os;
  os << "nn(audioNN, [T], C, [";
  for (std::size_t i = 0; i < classes.size(); ++i) os << (i ? ", " : "") << classes[i];
  os << "]) :: digit(T, C).\n\n:- complex_events([";
  for (std::size_t i = 0; i < classes.size(); ++i)
    os << (i ? ", " : "") << complex_event_name(classes[i]);
  os << "]).\n\n";
  for (const auto& c : classes) {
    os << "happensAt(" << complex_event_name(c) << ", T) :- window(Window), sequence([" << c << ", "
       << c << "], Window, T).\n";
  }
  return os.str();
}

Program default_rules() {
  Program p = stdlib();
  p.append(parse_program(repeat_rules_source(sound_class_names())));
  return p;
}

}  // namespace ncep
