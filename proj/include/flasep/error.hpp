// Copyright 2026 The flasep Authors
// SPDX-License-Identifier: Apache-2.0
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

#ifndef FLASEP_ERROR_HPP_
#define FLASEP_ERROR_HPP_

#include <stdexcept>
#include <string>

namespace flasep {

// Base class of every error thrown by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Operand shapes are incompatible.
class DimensionError : public Error {
 public:
  using Error::Error;
};

// A hyperparameter or configuration value is out of its domain.
class ConfigError : public Error {
 public:
  using Error::Error;
};

// A NaN or Inf was produced, or a probe point was not finite.
class NumericError : public Error {
 public:
  using Error::Error;
};

// An API precondition was violated (e.g. backward from a non-scalar).
class ContractError : public Error {
 public:
  using Error::Error;
};

// A value outside a function's mathematical domain (e.g. log of a
// nonpositive number).
class DomainError : public Error {
 public:
  using Error::Error;
};

class InputTooShortError : public Error {
 public:
  using Error::Error;
};

// SI-SNR against an all-zero reference.
class UndefinedReferenceError : public Error {
 public:
  using Error::Error;
};

class TrainingDivergedError : public Error {
 public:
  TrainingDivergedError(const std::string& what, long step)
      : Error(what), step_(step) {}
  long step() const noexcept { return step_; }

 private:
  long step_;
};

// Raised by the tracked allocator when an allocation would exceed the
// configured live-element budget.
class OutOfMemoryError : public Error {
 public:
  using Error::Error;
};

// Malformed model file or raw-audio stream.
class FormatError : public Error {
 public:
  using Error::Error;
};

}  // namespace flasep

#endif  // FLASEP_ERROR_HPP_
