// SPDX-FileCopyrightText: © 2026 BABN contributors
//
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <stdexcept>
#include <string>
#include <utility>

namespace babn {

class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Operand shapes are incompatible.
class DimensionError : public Error {
 public:
  using Error::Error;
};

/// Argument outside the mathematical domain of a function.
class DomainError : public Error {
 public:
  using Error::Error;
};

/// Invalid configuration or call parameter.
class ParameterError : public Error {
 public:
  using Error::Error;
};

/// A computation produced non-finite values.
class NumericalError : public Error {
 public:
  using Error::Error;
};

/// Malformed user data (token ids, files).
class InputError : public Error {
 public:
  using Error::Error;
};

class ConversionError : public Error {
 public:
  using Error::Error;
};

/// Experiment config failed schema validation; path() names the field, as in
/// "train.steps".
class ConfigError : public Error {
 public:
  ConfigError(std::string path, const std::string& msg)
      : Error(path + ": " + msg), path_(std::move(path)) {}
  const std::string& path() const { return path_; }

 private:
  std::string path_;
};

/// Training loss stayed non-finite; the history has been written.
class DivergenceError : public Error {
 public:
  using Error::Error;
};

}  // namespace babn
