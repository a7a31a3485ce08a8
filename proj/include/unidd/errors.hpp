#pragma once

#include <stdexcept>
#include <string>

namespace unidd {

// Base class for all library errors. Subclasses mirror the failure modes of
// the numerical kernels and the artifact I/O layer; the CLI maps them onto
// exit codes (1 = numerical failure, 2 = configuration or format failure).
struct Error : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// --- numerical failures -----------------------------------------------------

struct NotSymmetric : Error {
  using Error::Error;
};

struct NotPsd : Error {
  using Error::Error;
};

struct NoConvergence : Error {
  using Error::Error;
};

// Raised when a polynomial filter is applied outside its convergent range,
// i.e. the step size times the top eigenvalue reaches 1.
struct UnstableFilter : Error {
  using Error::Error;
};

struct SingularSystem : Error {
  using Error::Error;
};

struct ShapeMismatch : Error {
  using Error::Error;
};

struct NonFiniteActivation : Error {
  using Error::Error;
};

struct NonFiniteGradient : Error {
  using Error::Error;
};

struct DegenerateBatch : Error {
  using Error::Error;
};

struct OutOfRange : Error {
  using Error::Error;
};

// --- configuration / artifact failures --------------------------------------

struct InvalidConfig : Error {
  using Error::Error;
};

struct ConfigError : Error {
  using Error::Error;
};

struct FormatError : Error {
  using Error::Error;
};

struct ChecksumMismatch : Error {
  using Error::Error;
};

}  // namespace unidd
