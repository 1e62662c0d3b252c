// SPDX-License-Identifier: Apache-2.0
//
// Exception hierarchy shared by every bmoe module. The CLI maps these onto
// its exit codes, so keep the categories coarse.

#pragma once

#include <stdexcept>
#include <string>

namespace bmoe {

class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Operand shapes do not line up.
class DimensionError : public Error {
 public:
  using Error::Error;
};

// A documented precondition was violated by the caller.
class ContractError : public Error {
 public:
  using Error::Error;
};

class ConfigError : public Error {
 public:
  using Error::Error;
};

class DataError : public Error {
 public:
  using Error::Error;
};

// Training produced a non-finite value.
class NumericError : public Error {
 public:
  using Error::Error;
};

}  // namespace bmoe
