#pragma once

#include <stdexcept>
#include <string>

namespace dpm {

// Shape algebra violation: operands whose shapes cannot be combined.
class DimensionError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Input outside an operation's mathematical domain (e.g. log of x <= 0).
class DomainError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// A softmax slice with every entry masked out.
class DegenerateMaskError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Caller broke an API precondition (non-scalar loss, empty tape, ...).
class ContractError : public std::logic_error {
 public:
  using std::logic_error::logic_error;
};

// Bad dataset content: malformed JSONL, unknown token id, label out of range.
class DataError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Invalid run or model configuration. `field()` names the offending key.
class ConfigError : public std::runtime_error {
 public:
  ConfigError(std::string field, const std::string& message)
      : std::runtime_error(message), field_(std::move(field)) {}
  const std::string& field() const { return field_; }

 private:
  std::string field_;
};

// Training produced a non-finite loss.
class DivergenceError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

}  // namespace dpm
