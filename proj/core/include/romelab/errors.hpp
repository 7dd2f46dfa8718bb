#pragma once

#include <stdexcept>
#include <string>

namespace romelab {

// Base class for every error raised by this library.
struct Error : std::runtime_error {
  explicit Error(const std::string& msg) : std::runtime_error(msg) {}
};

struct DimensionMismatch : Error {
  explicit DimensionMismatch(const std::string& msg) : Error(msg) {}
};

struct NotPositiveDefinite : Error {
  explicit NotPositiveDefinite(const std::string& msg) : Error(msg) {}
};

struct DegenerateSpread : Error {
  explicit DegenerateSpread(const std::string& msg) : Error(msg) {}
};

struct EmptyInput : Error {
  explicit EmptyInput(const std::string& msg) : Error(msg) {}
};

struct SequenceTooLong : Error {
  explicit SequenceTooLong(const std::string& msg) : Error(msg) {}
};

struct SequenceTooShort : Error {
  explicit SequenceTooShort(const std::string& msg) : Error(msg) {}
};

struct TokenOutOfRange : Error {
  explicit TokenOutOfRange(const std::string& msg) : Error(msg) {}
};

struct CorpusTooSmall : Error {
  explicit CorpusTooSmall(const std::string& msg) : Error(msg) {}
};

struct NonFiniteLoss : Error {
  explicit NonFiniteLoss(const std::string& msg) : Error(msg) {}
};

struct DenominatorBelowFloor : Error {
  DenominatorBelowFloor(const std::string& msg, double denominator)
      : Error(msg), denominator(denominator) {}
  double denominator;
};

struct ConfigInvalid : Error {
  explicit ConfigInvalid(const std::string& msg) : Error(msg) {}
};

struct IoError : Error {
  explicit IoError(const std::string& msg) : Error(msg) {}
};

}  // namespace romelab
