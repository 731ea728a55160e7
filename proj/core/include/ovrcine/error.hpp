#pragma once

#include <stdexcept>
#include <string>

namespace ovrcine {

// Invalid arguments, shapes, or configuration values supplied by a caller.
class ConfigError : public std::invalid_argument
{
public:
  using std::invalid_argument::invalid_argument;
};

// Non-finite values, divergence, or other failures of the numerics.
class NumericalError : public std::runtime_error
{
public:
  using std::runtime_error::runtime_error;
};

// A pipeline stage could not run (missing upstream artifacts, I/O failures).
class StageError : public std::runtime_error
{
public:
  StageError(std::string stage, std::string const &what)
    : std::runtime_error("[" + stage + "] " + what)
    , stage_(std::move(stage))
  {
  }
  std::string const &stage() const { return stage_; }

private:
  std::string stage_;
};

} // namespace ovrcine
