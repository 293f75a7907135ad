// Copyright 2026 The ROAD Authors
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

namespace road {

enum class ErrorCode {
  InvalidArgument,
  MissingColumn,
  BadValue,
  DegenerateCohort,
  EmptyStratum,
  SingleClass,
  TooSmall,
  DimensionMismatch,
  OutOfRange,
  NotAdjacent,
  EmptyArm,
  NoMatchableBucket,
  RewardOutOfRange,
  TreatedRecordPresent,
  EmptyGrid,
  InvalidConfig,
  Io,
};

// Coarse classes used to pick a process exit code.
enum class ErrorClass { Config, Data, Numeric };

constexpr std::string_view to_string(ErrorCode code) {
  switch (code) {
    case ErrorCode::InvalidArgument: return "InvalidArgument";
    case ErrorCode::MissingColumn: return "MissingColumn";
    case ErrorCode::BadValue: return "BadValue";
    case ErrorCode::DegenerateCohort: return "DegenerateCohort";
    case ErrorCode::EmptyStratum: return "EmptyStratum";
    case ErrorCode::SingleClass: return "SingleClass";
    case ErrorCode::TooSmall: return "TooSmall";
    case ErrorCode::DimensionMismatch: return "DimensionMismatch";
    case ErrorCode::OutOfRange: return "OutOfRange";
    case ErrorCode::NotAdjacent: return "NotAdjacent";
    case ErrorCode::EmptyArm: return "EmptyArm";
    case ErrorCode::NoMatchableBucket: return "NoMatchableBucket";
    case ErrorCode::RewardOutOfRange: return "RewardOutOfRange";
    case ErrorCode::TreatedRecordPresent: return "TreatedRecordPresent";
    case ErrorCode::EmptyGrid: return "EmptyGrid";
    case ErrorCode::InvalidConfig: return "InvalidConfig";
    case ErrorCode::Io: return "Io";
  }
  return "Unknown";
}

constexpr ErrorClass classify(ErrorCode code) {
  switch (code) {
    case ErrorCode::InvalidArgument:
    case ErrorCode::InvalidConfig:
    case ErrorCode::EmptyGrid:
      return ErrorClass::Config;
    case ErrorCode::MissingColumn:
    case ErrorCode::BadValue:
    case ErrorCode::DimensionMismatch:
    case ErrorCode::OutOfRange:
    case ErrorCode::TreatedRecordPresent:
    case ErrorCode::Io:
      return ErrorClass::Data;
    default:
      return ErrorClass::Numeric;
  }
}

class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& message)
      : std::runtime_error(std::string(to_string(code)) + ": " + message), code_(code) {}

  ErrorCode code() const noexcept { return code_; }

 private:
  ErrorCode code_;
};

inline void require(bool condition, ErrorCode code, const std::string& message) {
  if (!condition) throw Error(code, message);
}

}  // namespace road
