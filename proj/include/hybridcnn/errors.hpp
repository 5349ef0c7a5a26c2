// Copyright 2026 The hybridcnn Authors.
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
#include <string_view>

namespace hybridcnn {

enum class ErrorCode {
  kNonDivisible,
  kBatchIndivisible,
  kOutOfBounds,
  kShapeMismatch,
  kDeadlock,
  kLengthMismatch,
  kIoError,
  kBadMagic,
  kBadVersion,
  kCacheNotEmpty,
  kBadBatch,
  kMissingSample,
  kLayoutMismatch,
  kInsufficientData,
  kDegenerateFit,
  kNoComparableEntry,
  kUnsupportedWidth,
  kConfigError,
  kParseError,
};

inline std::string_view to_string(ErrorCode code) {
  switch (code) {
    case ErrorCode::kNonDivisible: return "NonDivisible";
    case ErrorCode::kBatchIndivisible: return "BatchIndivisible";
    case ErrorCode::kOutOfBounds: return "OutOfBounds";
    case ErrorCode::kShapeMismatch: return "ShapeMismatch";
    case ErrorCode::kDeadlock: return "Deadlock";
    case ErrorCode::kLengthMismatch: return "LengthMismatch";
    case ErrorCode::kIoError: return "IoError";
    case ErrorCode::kBadMagic: return "BadMagic";
    case ErrorCode::kBadVersion: return "BadVersion";
    case ErrorCode::kCacheNotEmpty: return "CacheNotEmpty";
    case ErrorCode::kBadBatch: return "BadBatch";
    case ErrorCode::kMissingSample: return "MissingSample";
    case ErrorCode::kLayoutMismatch: return "LayoutMismatch";
    case ErrorCode::kInsufficientData: return "InsufficientData";
    case ErrorCode::kDegenerateFit: return "DegenerateFit";
    case ErrorCode::kNoComparableEntry: return "NoComparableEntry";
    case ErrorCode::kUnsupportedWidth: return "UnsupportedWidth";
    case ErrorCode::kConfigError: return "ConfigError";
    case ErrorCode::kParseError: return "ParseError";
  }
  return "Unknown";
}

/// Single exception type for the library; callers branch on code().
class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& what)
      : std::runtime_error(std::string(to_string(code)) + ": " + what), code_(code), detail_(what) {}

  ErrorCode code() const noexcept { return code_; }
  /// The message without the code prefix.
  const std::string& detail() const noexcept { return detail_; }

 private:
  ErrorCode code_;
  std::string detail_;
};

[[noreturn]] inline void fail(ErrorCode code, const std::string& what) { throw Error(code, what); }

inline void require(bool ok, ErrorCode code, const std::string& what) {
  if (!ok) fail(code, what);
}

}  // namespace hybridcnn
