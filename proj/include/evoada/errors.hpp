#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace evoada {

/// Tensor or parameter shapes that do not line up.
class ShapeError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// A genome code vector entry outside the per-slot choice range.
class DecodeError : public std::invalid_argument {
 public:
  DecodeError(std::size_t slot, long long code, std::size_t choices)
      : std::invalid_argument("slot " + std::to_string(slot) + ": code " + std::to_string(code) +
                              " out of range [0, " + std::to_string(choices) + ")"),
        slot_(slot) {}
  std::size_t slot() const { return slot_; }

 private:
  std::size_t slot_;
};

/// Bad run configuration. line is 0 when the problem is not tied to a line.
class ConfigError : public std::runtime_error {
 public:
  ConfigError(const std::string& field, const std::string& message, std::size_t line = 0)
      : std::runtime_error((line ? "line " + std::to_string(line) + ": " : std::string()) + field +
                           ": " + message),
        field_(field),
        line_(line) {}
  const std::string& field() const { return field_; }
  std::size_t line() const { return line_; }

 private:
  std::string field_;
  std::size_t line_;
};

/// Corrupt or incompatible file (checkpoint, weight blob, log).
class FormatError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

}  // namespace evoada
