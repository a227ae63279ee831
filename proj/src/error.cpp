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

#include "csip/error.hpp"

namespace csip {

const char* ErrorKindName(ErrorKind kind) {
  switch (kind) {
    case ErrorKind::kConfig: return "configuration error";
    case ErrorKind::kValidation: return "validation error";
    case ErrorKind::kShape: return "shape error";
    case ErrorKind::kContract: return "contract error";
    case ErrorKind::kData: return "data error";
    case ErrorKind::kPairing: return "pairing error";
    case ErrorKind::kSchema: return "schema error";
    case ErrorKind::kModality: return "modality error";
    case ErrorKind::kParameter: return "parameter error";
    case ErrorKind::kIndexing: return "indexing error";
    case ErrorKind::kPath: return "path error";
    case ErrorKind::kIo: return "I/O error";
    case ErrorKind::kCorruption: return "corruption error";
    case ErrorKind::kNumerical: return "numerical error";
  }
  return "error";
}

Error::Error(ErrorKind kind, const std::string& message)
    : std::runtime_error(std::string(ErrorKindName(kind)) + ": " + message),
      kind_(kind) {}

int Error::exit_code() const {
  switch (kind_) {
    case ErrorKind::kIndexing:
    case ErrorKind::kPath:
    case ErrorKind::kIo:
    case ErrorKind::kCorruption:
      return 3;
    case ErrorKind::kNumerical:
      return 4;
    default:
      return 2;
  }
}

void Fail(ErrorKind kind, const std::string& message) {
  throw Error(kind, message);
}

}  // namespace csip
