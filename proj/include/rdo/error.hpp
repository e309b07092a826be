#pragma once

#include <stdexcept>
#include <string>

namespace rdo {

/// Base class for every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// A caller-supplied value violates a documented precondition.
class InvalidArgument : public Error {
 public:
  using Error::Error;
};

/// A numerical procedure could not produce a usable result.
class NumericalError : public Error {
 public:
  using Error::Error;
};

/// The black-box response model failed for a specific input.
class ModelEvaluationError : public Error {
 public:
  ModelEvaluationError(const std::string& what, std::size_t sample_index)
      : Error(what + " (sample " + std::to_string(sample_index) + ")"), sample_index_(sample_index) {}

  std::size_t sample_index() const noexcept { return sample_index_; }

 private:
  std::size_t sample_index_;
};

namespace detail {

inline void require(bool condition, const std::string& message) {
  if (!condition) throw InvalidArgument(message);
}

}  // namespace detail
}  // namespace rdo
