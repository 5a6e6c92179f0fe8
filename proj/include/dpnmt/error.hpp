#pragma once

#include <stdexcept>
#include <string>

namespace dpnmt {

// Base of all library errors. The CLI maps the concrete subclasses onto
// distinct exit codes.
class Error : public std::runtime_error {
  public:
    using std::runtime_error::runtime_error;
};

// Incompatible tensor shapes or malformed parameter sets.
class ShapeError : public Error {
  public:
    using Error::Error;
};

// Invalid input data: out-of-range ids, empty corpora, bad files.
class DataError : public Error {
  public:
    using Error::Error;
};

// NaN/Inf produced during computation.
class NumericError : public Error {
  public:
    using Error::Error;
};

}  // namespace dpnmt
