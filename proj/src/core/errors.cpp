// Copyright 2026 The vecforge Authors.
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

#include "vecforge/errors.hpp"

namespace vecforge {

std::string_view error_name(ErrorCode code) noexcept {
  switch (code) {
    case ErrorCode::kMalformedHeader: return "MalformedHeader";
    case ErrorCode::kShapeMismatch: return "ShapeMismatch";
    case ErrorCode::kDuplicateName: return "DuplicateName";
    case ErrorCode::kIoFailure: return "IoFailure";
    case ErrorCode::kInvariantViolation: return "InvariantViolation";
    case ErrorCode::kNonFinite: return "NonFinite";
    case ErrorCode::kNoConvergence: return "NoConvergence";
    case ErrorCode::kRankOutOfRange: return "RankOutOfRange";
    case ErrorCode::kNotPositiveDefinite: return "NotPositiveDefinite";
    case ErrorCode::kDimensionMismatch: return "DimensionMismatch";
    case ErrorCode::kEmptyStream: return "EmptyStream";
    case ErrorCode::kDegenerate: return "Degenerate";
    case ErrorCode::kIncompatibleTopology: return "IncompatibleTopology";
    case ErrorCode::kInvalidRate: return "InvalidRate";
    case ErrorCode::kMissingCovariance: return "MissingCovariance";
    case ErrorCode::kInvalidBudget: return "InvalidBudget";
    case ErrorCode::kAllExempt: return "AllExempt";
    case ErrorCode::kInvalidRecipe: return "InvalidRecipe";
    case ErrorCode::kInvalidArgument: return "InvalidArgument";
  }
  return "Unknown";
}

ErrorClass error_class(ErrorCode code) noexcept {
  switch (code) {
    case ErrorCode::kMalformedHeader:
    case ErrorCode::kShapeMismatch:
    case ErrorCode::kDuplicateName:
    case ErrorCode::kIoFailure:
      return ErrorClass::kIo;
    case ErrorCode::kNonFinite:
    case ErrorCode::kNoConvergence:
    case ErrorCode::kNotPositiveDefinite:
    case ErrorCode::kDegenerate:
      return ErrorClass::kNumerical;
    default:
      return ErrorClass::kValidation;
  }
}

}  // namespace vecforge
