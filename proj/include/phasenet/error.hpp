#pragma once

#include <stdexcept>
#include <string>

namespace phasenet {

// Error categories map one-to-one onto CLI exit codes.
enum class ErrorKind {
  usage = 1,
  config = 2,
  io = 3,
  numeric = 4,
};

class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& what)
      : std::runtime_error(what), kind_(kind) {}
  ErrorKind kind() const noexcept { return kind_; }
  int exit_code() const noexcept { return static_cast<int>(kind_); }

 private:
  ErrorKind kind_;
};

struct ConfigError : Error {
  explicit ConfigError(const std::string& what) : Error(ErrorKind::config, what) {}
};

struct IoError : Error {
  explicit IoError(const std::string& what) : Error(ErrorKind::io, what) {}
};

struct NumericError : Error {
  explicit NumericError(const std::string& what) : Error(ErrorKind::numeric, what) {}
};

// Tensor/grid dimensions that do not line up.
struct ShapeError : Error {
  explicit ShapeError(const std::string& what) : Error(ErrorKind::config, what) {}
};

// Rejection sampler hit its retry cap.
struct PlacementExhausted : Error {
  explicit PlacementExhausted(const std::string& what) : Error(ErrorKind::config, what) {}
};

// An atom sphere would reach the outer face of the grid.
struct BoundaryViolation : Error {
  explicit BoundaryViolation(const std::string& what) : Error(ErrorKind::config, what) {}
};

}  // namespace phasenet
