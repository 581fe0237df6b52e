#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>

namespace wombet {

// A documented precondition of an operation does not hold.
class PreconditionError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

// Malformed persisted file. offset is the byte position of the problem.
class ParseError : public std::runtime_error {
 public:
  ParseError(const std::string& what, std::uint64_t offset)
      : std::runtime_error(what + " (byte offset " + std::to_string(offset) + ")"), offset_(offset) {}
  std::uint64_t offset() const { return offset_; }

 private:
  std::uint64_t offset_;
};

class UnsupportedVersion : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Environment produced a non-finite state.
class EnvironmentFault : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Every CEM candidate evaluated to -inf.
class PlannerFailure : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Non-finite training loss; carries the gradient step that produced it.
class DivergenceError : public std::runtime_error {
 public:
  DivergenceError(const std::string& what, long batch_id)
      : std::runtime_error(what + " (batch " + std::to_string(batch_id) + ")"), batch_id_(batch_id) {}
  long batch_id() const { return batch_id_; }

 private:
  long batch_id_;
};

class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

}  // namespace wombet
