#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace compose {

// Base for every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Input violated a documented precondition (shape, range, symmetry...).
class InvalidArgument : public Error {
 public:
  using Error::Error;
};

// A vector whose norm is at or below the normalization epsilon.
// `index` identifies the offending row/slot when the caller knows it.
class DegenerateVector : public Error {
 public:
  explicit DegenerateVector(const std::string& what, std::size_t index = npos)
      : Error(what), index_(index) {}

  static constexpr std::size_t npos = static_cast<std::size_t>(-1);
  std::size_t index() const noexcept { return index_; }

 private:
  std::size_t index_;
};

// NaN/Inf reached a place where it must not (loss blowup, bad oracle input).
class NumericError : public Error {
 public:
  using Error::Error;
};

}  // namespace compose
