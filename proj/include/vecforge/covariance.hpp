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

#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "vecforge/matrix.hpp"
#include "vecforge/tensor_store.hpp"

namespace vecforge {

// Layer-input activations for one linear layer: each batch is n x b with one
// column per token/sample.
struct ActivationStream {
  std::string layer_name;
  std::vector<Matrix> batches;
  std::string source_task;

  std::uint64_t sample_count() const noexcept;
};

/// Sum of X X^T over the batches, in float64. diag_boost starts at zero.
CovarianceEntry build_covariance(const ActivationStream& stream);

struct Regularized {
  Matrix matrix;
  double boost = 0.0;
};

struct RegularizeOptions {
  // With a zero-trace input, keep walking the schedule from the 1e-12 floor
  // instead of raising kDegenerate.
  bool identity_fallback = false;
  // Upper bound on schedule doublings before giving up.
  int max_doublings = 200;
};

/// Smallest boost in {0, eps, 2 eps, 4 eps, ...} with eps = 1e-6 trace/n
/// (floored at 1e-12) such that C + boost I factors with every pivot above
/// the numerical floor from `cholesky_pivot_floor`.
Regularized regularize_invertible(const Matrix& c, RegularizeOptions options = {});

/// The boost schedule value at `step` (0 -> 0, 1 -> eps, 2 -> 2 eps, ...).
double boost_schedule(double eps, int step) noexcept;
double boost_unit(const Matrix& c) noexcept;

/// Pivot threshold treated as "Cholesky succeeded": 1e-12 times the largest
/// diagonal entry. Pivots at or below it count as rank deficiency.
double cholesky_pivot_floor(const Matrix& c) noexcept;

/// Regularizes every entry in place, accumulating into diag_boost.
void regularize_set(CovarianceSet& covs, RegularizeOptions options = {});

/// Streams stored as "<layer>.acts.<batch_index>" tensors in a container.
/// At most `max_samples` columns are taken per layer (0 = all).
std::vector<ActivationStream> streams_from_container(const Container& c,
                                                     std::uint64_t max_samples = 0);
Container streams_to_container(const std::vector<ActivationStream>& streams);

/// build_covariance + regularize_invertible for every stream.
CovarianceSet build_covariance_set(const std::vector<ActivationStream>& streams,
                                   const std::string& task_id,
                                   RegularizeOptions options = {});

}  // namespace vecforge
