// Copyright 2026 The einlin Authors
// SPDX-License-Identifier: Apache-2.0

#ifndef EINLIN_ERRORS_HPP
#define EINLIN_ERRORS_HPP

#include <stdexcept>
#include <string>

namespace einlin {

/// Base class for every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// A θ-vector violates a range or sum constraint.
class ConstraintViolation : public Error {
 public:
  using Error::Error;
};

class ShapeMismatch : public Error {
 public:
  using Error::Error;
};

class InfeasibleFactorization : public Error {
 public:
  using Error::Error;
};

/// Dense materialization would exceed the configured entry cap.
class CapExceeded : public Error {
 public:
  using Error::Error;
};

class EmptyInput : public Error {
 public:
  using Error::Error;
};

class InsufficientData : public Error {
 public:
  using Error::Error;
};

class DegenerateFit : public Error {
 public:
  using Error::Error;
};

class OutOfRange : public Error {
 public:
  using Error::Error;
};

class NonFiniteLoss : public Error {
 public:
  using Error::Error;
};

/// Malformed configuration document or file.
class ConfigError : public Error {
 public:
  using Error::Error;
};

}  // namespace einlin

#endif  // EINLIN_ERRORS_HPP
