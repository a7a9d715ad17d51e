#pragma once

// Operator table shared by the parser and the pretty printer.

#include <optional>
#include <string_view>

namespace ncep::detail {

enum class Assoc { Xfx, Yfx };

struct InfixOperator {
  std::string_view symbol;
  int priority;
  Assoc assoc;
};

inline constexpr InfixOperator kInfixOperators[] = {
    {"=", 700, Assoc::Xfx},   {"\\=", 700, Assoc::Xfx}, {"is", 700, Assoc::Xfx},
    {"=:=", 700, Assoc::Xfx}, {"=\\=", 700, Assoc::Xfx}, {"<", 700, Assoc::Xfx},
    {">", 700, Assoc::Xfx},   {"=<", 700, Assoc::Xfx},  {">=", 700, Assoc::Xfx},
    {"+", 500, Assoc::Yfx},   {"-", 500, Assoc::Yfx},   {"*", 400, Assoc::Yfx},
    {"/", 400, Assoc::Yfx},   {"//", 400, Assoc::Yfx},  {"mod", 400, Assoc::Yfx},
};

inline std::optional<InfixOperator> find_infix(std::string_view symbol) {
  for (const auto& op : kInfixOperators) {
    if (op.symbol == symbol) return op;
  }
  return std::nullopt;
}

inline constexpr int kArgumentPriority = 999;
inline constexpr int kMaxPriority = 1200;

}  // namespace ncep::detail
