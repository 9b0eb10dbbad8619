#pragma once

#include <cstdint>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

namespace convkit {

// Base of every error thrown by the library.
struct Error : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Operand shapes incompatible (names both shapes in the message).
struct ShapeError : Error {
  using Error::Error;
};

// Invalid argument value (axis out of range, p outside (0,1), bad label, ...).
struct ValueError : Error {
  using Error::Error;
};

// Text input rejected; carries the 1-based line number.
struct ParseError : Error {
  int line;
  ParseError(int line_, const std::string& msg)
      : Error("line " + std::to_string(line_) + ": " + msg), line(line_) {}
};

// File format / I/O failures (bad magic, truncation, unwritable path).
struct IoError : Error {
  using Error::Error;
};

// Run configuration problems (unknown key, missing required entry).
struct ConfigError : Error {
  using Error::Error;
};

// Dataset-level problems (missing files, empty dataset, label mismatch).
struct DataError : Error {
  using Error::Error;
};

// Training aborted on non-finite loss.
struct DivergenceError : Error {
  using Error::Error;
};

// Op tag not present in the autodiff op registry.
struct UnknownOpError : Error {
  using Error::Error;
};

// Work estimate exceeds an enforced cap (gradcheck parameter budget).
struct BudgetError : Error {
  using Error::Error;
};

inline std::string shape_str(const std::vector<std::int64_t>& shape) {
  std::ostringstream os;
  os << "(";
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) os << ",";
    os << shape[i];
  }
  os << ")";
  return os.str();
}

}  // namespace convkit
