#pragma once

#include <stdexcept>
#include <string>

namespace dgsan {

/// Bad configuration, unreadable input file, or mismatched checkpoint.
struct ConfigError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

/// A training loss or model value became non-finite.
struct NumericDivergence : std::runtime_error {
  using std::runtime_error::runtime_error;
};

/// An argument lies outside the domain of a function (f, f*, log, ...).
struct DomainError : std::domain_error {
  DomainError(const std::string& what, long coordinate = -1)
      : std::domain_error(what), coordinate_(coordinate) {}
  /// Offending coordinate, or -1 when the error is not tied to one.
  long coordinate() const noexcept { return coordinate_; }

 private:
  long coordinate_;
};

}  // namespace dgsan
