#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>

namespace cpgan {

// Raised when a caller breaks a documented precondition (shape mismatch,
// out-of-range argument, ...).
class ContractViolation : public std::logic_error {
 public:
  using std::logic_error::logic_error;
};

class IoError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class ParseError : public std::runtime_error {
 public:
  ParseError(const std::string& what, std::uint64_t offset)
      : std::runtime_error(what + " (at byte offset " + std::to_string(offset) + ")"), offset_(offset) {}

  std::uint64_t offset() const noexcept { return offset_; }

 private:
  std::uint64_t offset_;
};

class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Training produced a NaN/Inf loss.
class DivergenceError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

#define CPGAN_EXPECT(cond, msg)                    \
  do {                                             \
    if (!(cond)) throw ::cpgan::ContractViolation(msg); \
  } while (0)

}  // namespace cpgan
