// Copyright 2026 The GPTM Authors
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
/// \file
/// \brief Exception hierarchy shared by all gptm modules.

#ifndef GPTM__ERROR_HPP_
#define GPTM__ERROR_HPP_

#include <stdexcept>
#include <string>

namespace gptm
{

/// Base class of every error thrown by the library.
class Error : public std::runtime_error
{
public:
  using std::runtime_error::runtime_error;
};

/// Malformed or inconsistent user input (files, arguments, dimensions).
/// The command line front end maps this to exit code 2.
class ValidationError : public Error
{
public:
  using Error::Error;
};

/// A file could not be parsed. Messages carry "path:line: reason".
class LoadError : public ValidationError
{
public:
  using ValidationError::ValidationError;
};

/// Numerical failure at run time: lost positive definiteness, residual
/// too large, NaN in the bound.
class NumericalError : public Error
{
public:
  using Error::Error;
};

/// A kernel cannot be built for this corpus (for example k >= D).
/// Maps to exit code 1: the arguments parse but the construction fails.
class KernelConstructionError : public Error
{
public:
  using Error::Error;
};

/// Cholesky factorization hit a non-positive pivot.
class NotPositiveDefinite : public NumericalError
{
public:
  NotPositiveDefinite(const std::string & what, long pivot)
  : NumericalError(what), pivot_(pivot) {}

  long pivot() const noexcept {return pivot_;}

private:
  long pivot_;
};

}  // namespace gptm

#endif  // GPTM__ERROR_HPP_
