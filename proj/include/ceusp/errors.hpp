// Copyright 2026 The CEUSP Authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     https://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#pragma once

#include <stdexcept>
#include <string>

namespace ceusp {

// Error taxonomy. The CLI maps these onto exit codes (see tools/ceusp.cpp).

class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Incompatible tensor shapes or ranks.
class ShapeError : public Error {
 public:
  using Error::Error;
};

/// Value outside an operation's mathematical domain (e.g. log of x <= 0).
class DomainError : public Error {
 public:
  using Error::Error;
};

/// Caller broke a documented precondition.
class ContractError : public Error {
 public:
  using Error::Error;
};

/// NaN/Inf encountered where finite values are required.
class NumericError : public Error {
 public:
  using Error::Error;
};

/// Index or parameter outside its admissible range.
class RangeError : public Error {
 public:
  using Error::Error;
};

/// Invalid configuration (bad key, bad value, inconsistent settings).
class ConfigError : public Error {
 public:
  using Error::Error;
};

/// Malformed or inconsistent data on disk.
class DataError : public Error {
 public:
  using Error::Error;
};

/// Checkpoint does not match the requested configuration or format.
class VersionError : public Error {
 public:
  using Error::Error;
};

}  // namespace ceusp
