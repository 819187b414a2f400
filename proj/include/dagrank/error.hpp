// Copyright 2026 The dagrank Authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.
#pragma once

#include <stdexcept>
#include <string>

namespace dagrank {

/// Base class for every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Operand shapes do not fit the primitive or layer they were passed to.
class ShapeError : public Error {
 public:
  using Error::Error;
};

/// A loss or gradient left the finite range.
class NumericalError : public Error {
 public:
  using Error::Error;
};

/// Malformed, truncated or version-incompatible file contents.
class FormatError : public Error {
 public:
  using Error::Error;
};

/// Invalid configuration, argument or precondition.
class ConfigError : public Error {
 public:
  using Error::Error;
};

}  // namespace dagrank
