#pragma once

#include <stdexcept>
#include <string>

namespace cvst {

// Caller passed something outside an operation's domain.
class InvalidArgument : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

// Malformed or inconsistent input data (CSV, grid files, datasets).
class DataError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// A test plan or budget that cannot be constructed for the requested levels.
class InfeasiblePlan : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// A learner could not produce a model (singular system, divergence).
class LearnerFailure : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

namespace detail {

inline void require(bool ok, const std::string& what) {
  if (!ok) throw InvalidArgument(what);
}

}  // namespace detail
}  // namespace cvst
