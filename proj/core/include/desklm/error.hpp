#pragma once

#include <stdexcept>
#include <string>

namespace desklm {

// Shape or extent disagreement between operands.
class DimensionError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

// A loss or metric was asked to reduce over zero selected elements.
class DegenerateBatchError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

// Misuse of the autodiff tape (double backward, foreign loss, ...).
class GraphError : public std::logic_error {
 public:
  using std::logic_error::logic_error;
};

// Malformed file contents: vocab, checkpoint, JSON-lines records.
class FormatError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Invalid run configuration; carries the offending field name.
class ConfigError : public std::runtime_error {
 public:
  ConfigError(std::string field, const std::string& message)
      : std::runtime_error(field + ": " + message), field_(std::move(field)) {}

  const std::string& field() const noexcept { return field_; }

 private:
  std::string field_;
};

}  // namespace desklm
