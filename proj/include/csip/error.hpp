/* Copyright 2026 The CSIP Authors. All Rights Reserved.

Licensed under the Apache License, Version 2.0 (the "License");
you may not use this file except in compliance with the License.
You may obtain a copy of the License at

    http://www.apache.org/licenses/LICENSE-2.0

Unless required by applicable law or agreed to in writing, software
distributed under the License is distributed on an "AS IS" BASIS,
WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
See the License for the specific language governing permissions and
limitations under the License.
==============================================================================*/

#ifndef CSIP_ERROR_HPP_
#define CSIP_ERROR_HPP_

#include <stdexcept>
#include <string>

namespace csip {

// Failure categories. The CLI maps them onto process exit codes.
enum class ErrorKind {
  kConfig,
  kValidation,
  kShape,
  kContract,
  kData,
  kPairing,
  kSchema,
  kModality,
  kParameter,
  kIndexing,
  kPath,
  kIo,
  kCorruption,
  kNumerical,
};

const char* ErrorKindName(ErrorKind kind);

class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& message);

  ErrorKind kind() const { return kind_; }

  // 2 for configuration/validation problems, 3 for I/O, 4 for numerical
  // failure.
  int exit_code() const;

 private:
  ErrorKind kind_;
};

[[noreturn]] void Fail(ErrorKind kind, const std::string& message);

}  // namespace csip

#endif  // CSIP_ERROR_HPP_
