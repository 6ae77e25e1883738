#pragma once

#include <stdexcept>
#include <string>

namespace aff {

// Error taxonomy shared by every module. All public entry points validate
// their inputs and throw one of these; nothing is silently ignored.
struct Error : std::runtime_error {
  explicit Error(const std::string& msg) : std::runtime_error(msg) {}
};

struct ShapeError : Error {
  using Error::Error;
};
struct TypeError : Error {
  using Error::Error;
};
struct RankError : Error {
  using Error::Error;
};
struct AxisError : Error {
  using Error::Error;
};
struct PlanError : Error {
  using Error::Error;
};
struct SizeError : Error {
  using Error::Error;
};
struct ConfigError : Error {
  using Error::Error;
};
struct FormatError : Error {
  using Error::Error;
};
struct IoError : Error {
  using Error::Error;
};
// Non-finite values where the contract requires finite ones (overflow in a
// tensor op, NaN loss or gradient during training).
struct NumericError : Error {
  using Error::Error;
};
// Two evaluations of the same function at the same point disagreed.
struct DeterminismError : Error {
  using Error::Error;
};

}  // namespace aff
