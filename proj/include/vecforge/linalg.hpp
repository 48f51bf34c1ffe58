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

#include <cstddef>
#include <vector>

#include "vecforge/matrix.hpp"

namespace vecforge::linalg {

/// Thin SVD factors of an m x n matrix, k = min(m, n).
///
/// U is m x k with orthonormal columns, S holds k non-increasing,
/// non-negative singular values and Vt is k x n with orthonormal rows.
/// Each column of U has its first nonzero entry non-negative.
struct SvdFactors {
  Matrix u;
  std::vector<double> s;
  Matrix vt;

  std::size_t rank_capacity() const noexcept { return s.size(); }
};

struct SvdOptions {
  // 0 selects the default cap of 100 * min(m, n) sweeps.
  std::size_t max_sweeps = 0;
};

/// One-sided (Hestenes) Jacobi SVD in float64.
///
/// Throws kNonFinite on NaN/Inf input and kNoConvergence when the sweep cap
/// is exhausted before every column pair is orthogonal to working precision.
SvdFactors svd(const Matrix& a, SvdOptions options = {});

/// Rank-r reconstruction sum_{i<r} s_i u_i v_i^T. r = 0 yields zeros.
Matrix truncate(const SvdFactors& f, std::size_t r);

/// Sum of squared singular values past index r.
double discarded_energy(const SvdFactors& f, std::size_t r);

/// Lower-triangular L with C = L L^T. A pivot <= pivot_floor raises
/// kNotPositiveDefinite.
Matrix cholesky(const Matrix& c, double pivot_floor = 0.0);

// Solves L X = B for lower-triangular L.
Matrix forward_substitute(const Matrix& l, const Matrix& b);
// Solves L^T X = B for lower-triangular L.
Matrix back_substitute_transposed(const Matrix& l, const Matrix& b);

/// Solves C X = B for symmetric positive definite C.
Matrix cholesky_solve(const Matrix& c, const Matrix& b);

/// Returns T C^{-1} for SPD C, computed as (C^{-1} T^T)^T so the inverse is
/// never formed.
Matrix right_solve_spd(const Matrix& t, const Matrix& c);

/// Solves A X = B with partial pivoting. Pivots with magnitude <= pivot_floor
/// raise kNotPositiveDefinite (used as the generic "not invertible" signal).
Matrix lu_solve(const Matrix& a, const Matrix& b, double pivot_floor = 0.0);

/// acc + X X^T, computing the lower triangle and mirroring it.
Matrix accumulate_covariance(const Matrix& acc, const Matrix& x_batch);

struct SymmetricEigen {
  std::vector<double> values;  // descending
  Matrix vectors;              // column j pairs with values[j]
};

/// Cyclic Jacobi eigendecomposition of a symmetric matrix.
SymmetricEigen symmetric_eigen(const Matrix& c);

}  // namespace vecforge::linalg
