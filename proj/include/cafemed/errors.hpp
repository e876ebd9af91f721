/*
 * Copyright 2026 The CafeMed Authors.
 * Licensed under the Apache License, Version 2.0 (the "License");
 * you may not use this file except in compliance with the License.
 * You may obtain a copy of the License at
 *
 *     https://www.apache.org/licenses/LICENSE-2.0
 *
 * Unless required by applicable law or agreed to in writing, software
 * distributed under the License is distributed on an "AS IS" BASIS,
 * WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
 * See the License for the specific language governing permissions and
 * limitations under the License.
 */

#pragma once

#include <stdexcept>
#include <string>

namespace cafemed {

// Error hierarchy. The CLI maps each category onto a stable exit code.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Incompatible tensor shapes.
class DimensionError : public Error {
 public:
  using Error::Error;
};

// Malformed or out-of-range input data.
class DataError : public Error {
 public:
  using Error::Error;
};

// Infeasible synthetic-generator specification.
class SpecError : public Error {
 public:
  using Error::Error;
};

// Invalid or conflicting configuration.
class ConfigError : public Error {
 public:
  using Error::Error;
};

// NaN/Inf encountered, or a failed gradient check.
class NumericError : public Error {
 public:
  using Error::Error;
};

// Missing or contradictory command-line arguments.
class UsageError : public Error {
 public:
  using Error::Error;
};

}  // namespace cafemed
