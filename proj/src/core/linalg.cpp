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

#include "vecforge/linalg.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

#include "vecforge/errors.hpp"

namespace vecforge::linalg {
namespace {

constexpr double kEps = std::numeric_limits<double>::epsilon();

double dot(std::span<const double> a, std::span<const double> b) noexcept {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}

// Completes rows [filled, k) of `basis` (row vectors of length m) to an
// orthonormal set using canonical unit vectors, two Gram-Schmidt passes each.
void complete_orthonormal_rows(Matrix& basis, std::size_t filled) {
  const std::size_t m = basis.cols();
  std::size_t candidate = 0;
  for (std::size_t row = filled; row < basis.rows(); ++row) {
    while (true) {
      if (candidate >= m) {
        fail(ErrorCode::kNoConvergence, "cannot complete orthonormal basis");
      }
      std::vector<double> v(m, 0.0);
      v[candidate++] = 1.0;
      for (int pass = 0; pass < 2; ++pass) {
        for (std::size_t j = 0; j < row; ++j) {
          const double proj = dot(v, basis.row(j));
          auto bj = basis.row(j);
          for (std::size_t i = 0; i < m; ++i) v[i] -= proj * bj[i];
        }
      }
      const double norm = std::sqrt(dot(v, v));
      if (norm > 0.5) {
        auto dst = basis.row(row);
        for (std::size_t i = 0; i < m; ++i) dst[i] = v[i] / norm;
        break;
      }
    }
  }
}

// Jacobi on the rows of `g` (each row is a column of the original tall
// matrix); accumulates the right rotations into `v` (rows = columns of V).
void hestenes_sweeps(Matrix& g, Matrix& v, std::size_t max_sweeps) {
  const std::size_t n = g.rows();
  const double tol = kEps * static_cast<double>(std::max<std::size_t>(g.cols(), 1));
  for (std::size_t sweep = 0; sweep < max_sweeps; ++sweep) {
    bool rotated = false;
    for (std::size_t p = 0; p + 1 < n; ++p) {
      for (std::size_t q = p + 1; q < n; ++q) {
        auto gp = g.row(p);
        auto gq = g.row(q);
        const double alpha = dot(gp, gp);
        const double beta = dot(gq, gq);
        const double gamma = dot(gp, gq);
        if (gamma == 0.0 || std::abs(gamma) <= tol * std::sqrt(alpha * beta)) continue;
        rotated = true;
        const double zeta = (beta - alpha) / (2.0 * gamma);
        const double t = std::copysign(1.0, zeta) / (std::abs(zeta) + std::sqrt(1.0 + zeta * zeta));
        const double c = 1.0 / std::sqrt(1.0 + t * t);
        const double s = c * t;
        for (std::size_t i = 0; i < gp.size(); ++i) {
          const double x = gp[i];
          const double y = gq[i];
          gp[i] = c * x - s * y;
          gq[i] = s * x + c * y;
        }
        auto vp = v.row(p);
        auto vq = v.row(q);
        for (std::size_t i = 0; i < vp.size(); ++i) {
          const double x = vp[i];
          const double y = vq[i];
          vp[i] = c * x - s * y;
          vq[i] = s * x + c * y;
        }
      }
    }
    if (!rotated) return;
  }
  fail(ErrorCode::kNoConvergence, "Jacobi SVD hit the sweep cap");
}

// Thin SVD for m >= n, returned with U^T (k x m) for cache-friendly rows.
void svd_tall(const Matrix& a, std::size_t max_sweeps, Matrix& ut, std::vector<double>& s,
              Matrix& vt) {
  const std::size_t n = a.cols();
  Matrix g = a.transposed();  // n x m, row j = column j of A
  Matrix v = Matrix::identity(n);
  hestenes_sweeps(g, v, max_sweeps);

  std::vector<double> norms(n);
  for (std::size_t j = 0; j < n; ++j) norms[j] = std::sqrt(dot(g.row(j), g.row(j)));
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t x, std::size_t y) { return norms[x] > norms[y]; });

  const std::size_t m = a.rows();
  ut = Matrix(n, m);
  vt = Matrix(n, n);
  s.assign(n, 0.0);
  const double floor = std::numeric_limits<double>::min() * 1e6;
  std::size_t filled = 0;
  for (std::size_t idx = 0; idx < n; ++idx) {
    const std::size_t j = order[idx];
    s[idx] = norms[j];
    std::copy(v.row(j).begin(), v.row(j).end(), vt.row(idx).begin());
    if (norms[j] > floor) {
      auto src = g.row(j);
      auto dst = ut.row(idx);
      for (std::size_t i = 0; i < m; ++i) dst[i] = src[i] / norms[j];
      ++filled;
    } else {
      s[idx] = 0.0;
    }
  }
  // Zero singular values sort last, so the unfilled rows form a suffix.
  complete_orthonormal_rows(ut, filled);

  for (std::size_t idx = 0; idx < n; ++idx) {
    auto u_row = ut.row(idx);
    for (double x : u_row) {
      if (std::abs(x) > 1e-12) {
        if (x < 0.0) {
          for (double& y : u_row) y = -y;
          for (double& y : vt.row(idx)) y = -y;
        }
        break;
      }
    }
  }
}

}  // namespace

SvdFactors svd(const Matrix& a, SvdOptions options) {
  if (!all_finite(a)) fail(ErrorCode::kNonFinite, "svd input contains NaN or Inf");
  const std::size_t m = a.rows();
  const std::size_t n = a.cols();
  const std::size_t k = std::min(m, n);
  SvdFactors out;
  if (k == 0) {
    out.u = Matrix(m, 0);
    out.vt = Matrix(0, n);
    return out;
  }
  const std::size_t cap = options.max_sweeps ? options.max_sweeps : 100 * k;
  Matrix ut;
  Matrix vt;
  if (m >= n) {
    svd_tall(a, cap, ut, out.s, vt);
    out.u = ut.transposed();
    out.vt = std::move(vt);
  } else {
    // A^T = U' S V'^T, so A = V' S U'^T.
    svd_tall(a.transposed(), cap, ut, out.s, vt);
    out.u = vt.transposed();
    out.vt = std::move(ut);
    for (std::size_t idx = 0; idx < k; ++idx) {
      for (std::size_t i = 0; i < m; ++i) {
        const double x = out.u(i, idx);
        if (std::abs(x) > 1e-12) {
          if (x < 0.0) {
            for (std::size_t r = 0; r < m; ++r) out.u(r, idx) = -out.u(r, idx);
            for (double& y : out.vt.row(idx)) y = -y;
          }
          break;
        }
      }
    }
  }
  return out;
}

Matrix truncate(const SvdFactors& f, std::size_t r) {
  if (r > f.s.size()) {
    fail(ErrorCode::kRankOutOfRange,
         "rank " + std::to_string(r) + " exceeds " + std::to_string(f.s.size()));
  }
  const std::size_t m = f.u.rows();
  const std::size_t n = f.vt.cols();
  Matrix out(m, n);
  for (std::size_t i = 0; i < m; ++i) {
    auto dst = out.row(i);
    for (std::size_t c = 0; c < r; ++c) {
      const double w = f.u(i, c) * f.s[c];
      if (w == 0.0) continue;
      auto v_row = f.vt.row(c);
      for (std::size_t j = 0; j < n; ++j) dst[j] += w * v_row[j];
    }
  }
  return out;
}

double discarded_energy(const SvdFactors& f, std::size_t r) {
  if (r > f.s.size()) fail(ErrorCode::kRankOutOfRange, "rank exceeds spectrum length");
  double e = 0.0;
  for (std::size_t j = r; j < f.s.size(); ++j) e += f.s[j] * f.s[j];
  return e;
}

Matrix cholesky(const Matrix& c, double pivot_floor) {
  if (c.rows() != c.cols()) fail(ErrorCode::kDimensionMismatch, "cholesky needs a square matrix");
  const std::size_t n = c.rows();
  Matrix l(n, n);
  for (std::size_t j = 0; j < n; ++j) {
    double d = c(j, j);
    auto lj = l.row(j);
    for (std::size_t k = 0; k < j; ++k) d -= lj[k] * lj[k];
    if (!(d > pivot_floor)) {
      fail(ErrorCode::kNotPositiveDefinite,
           "pivot " + std::to_string(j) + " is " + std::to_string(d));
    }
    const double ljj = std::sqrt(d);
    lj[j] = ljj;
    for (std::size_t i = j + 1; i < n; ++i) {
      auto li = l.row(i);
      double s = c(i, j);
      for (std::size_t k = 0; k < j; ++k) s -= li[k] * lj[k];
      li[j] = s / ljj;
    }
  }
  return l;
}

Matrix forward_substitute(const Matrix& l, const Matrix& b) {
  if (l.rows() != b.rows()) fail(ErrorCode::kDimensionMismatch, "forward_substitute rows differ");
  const std::size_t n = l.rows();
  Matrix x = b;
  for (std::size_t i = 0; i < n; ++i) {
    auto xi = x.row(i);
    for (std::size_t k = 0; k < i; ++k) {
      const double lik = l(i, k);
      if (lik == 0.0) continue;
      auto xk = x.row(k);
      for (std::size_t c = 0; c < x.cols(); ++c) xi[c] -= lik * xk[c];
    }
    for (double& v : xi) v /= l(i, i);
  }
  return x;
}

Matrix back_substitute_transposed(const Matrix& l, const Matrix& b) {
  if (l.rows() != b.rows()) {
    fail(ErrorCode::kDimensionMismatch, "back_substitute_transposed rows differ");
  }
  const std::size_t n = l.rows();
  Matrix x = b;
  for (std::size_t ii = n; ii-- > 0;) {
    auto xi = x.row(ii);
    for (std::size_t k = ii + 1; k < n; ++k) {
      const double lki = l(k, ii);  // (L^T)(ii, k)
      if (lki == 0.0) continue;
      auto xk = x.row(k);
      for (std::size_t c = 0; c < x.cols(); ++c) xi[c] -= lki * xk[c];
    }
    for (double& v : xi) v /= l(ii, ii);
  }
  return x;
}

Matrix cholesky_solve(const Matrix& c, const Matrix& b) {
  if (c.rows() != b.rows()) fail(ErrorCode::kDimensionMismatch, "cholesky_solve rows differ");
  const Matrix l = cholesky(c);
  return back_substitute_transposed(l, forward_substitute(l, b));
}

Matrix right_solve_spd(const Matrix& t, const Matrix& c) {
  return cholesky_solve(c, t.transposed()).transposed();
}

Matrix lu_solve(const Matrix& a, const Matrix& b, double pivot_floor) {
  if (a.rows() != a.cols() || a.rows() != b.rows()) {
    fail(ErrorCode::kDimensionMismatch, "lu_solve shape mismatch");
  }
  const std::size_t n = a.rows();
  Matrix lu = a;
  Matrix x = b;
  for (std::size_t k = 0; k < n; ++k) {
    std::size_t piv = k;
    for (std::size_t i = k + 1; i < n; ++i) {
      if (std::abs(lu(i, k)) > std::abs(lu(piv, k))) piv = i;
    }
    if (!(std::abs(lu(piv, k)) > pivot_floor)) {
      fail(ErrorCode::kNotPositiveDefinite, "matrix is singular to working precision");
    }
    if (piv != k) {
      std::swap_ranges(lu.row(k).begin(), lu.row(k).end(), lu.row(piv).begin());
      std::swap_ranges(x.row(k).begin(), x.row(k).end(), x.row(piv).begin());
    }
    for (std::size_t i = k + 1; i < n; ++i) {
      const double f = lu(i, k) / lu(k, k);
      if (f == 0.0) continue;
      lu(i, k) = f;
      for (std::size_t j = k + 1; j < n; ++j) lu(i, j) -= f * lu(k, j);
      auto xi = x.row(i);
      auto xk = x.row(k);
      for (std::size_t c = 0; c < x.cols(); ++c) xi[c] -= f * xk[c];
    }
  }
  for (std::size_t ii = n; ii-- > 0;) {
    auto xi = x.row(ii);
    for (std::size_t k = ii + 1; k < n; ++k) {
      const double u = lu(ii, k);
      auto xk = x.row(k);
      for (std::size_t c = 0; c < x.cols(); ++c) xi[c] -= u * xk[c];
    }
    for (double& v : xi) v /= lu(ii, ii);
  }
  return x;
}

Matrix accumulate_covariance(const Matrix& acc, const Matrix& x_batch) {
  const std::size_t n = acc.rows();
  if (acc.cols() != n || x_batch.rows() != n) {
    fail(ErrorCode::kDimensionMismatch, "covariance accumulator and batch disagree on width");
  }
  if (x_batch.cols() == 0) fail(ErrorCode::kDimensionMismatch, "empty activation batch");
  Matrix out = acc;
  for (std::size_t i = 0; i < n; ++i) {
    auto xi = x_batch.row(i);
    for (std::size_t j = 0; j <= i; ++j) {
      out(i, j) += dot(xi, x_batch.row(j));
    }
  }
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = i + 1; j < n; ++j) out(i, j) = out(j, i);
  }
  return out;
}

SymmetricEigen symmetric_eigen(const Matrix& c) {
  if (c.rows() != c.cols()) fail(ErrorCode::kDimensionMismatch, "eigen needs a square matrix");
  if (!all_finite(c)) fail(ErrorCode::kNonFinite, "eigen input contains NaN or Inf");
  const std::size_t n = c.rows();
  Matrix a = c;
  Matrix v = Matrix::identity(n);
  const std::size_t cap = 100 * std::max<std::size_t>(n, 1);
  bool converged = n < 2;
  for (std::size_t sweep = 0; sweep < cap && !converged; ++sweep) {
    double off = 0.0;
    double diag = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      diag += a(i, i) * a(i, i);
      for (std::size_t j = i + 1; j < n; ++j) off += a(i, j) * a(i, j);
    }
    if (off <= kEps * kEps * diag || off == 0.0) {
      converged = true;
      break;
    }
    for (std::size_t p = 0; p + 1 < n; ++p) {
      for (std::size_t q = p + 1; q < n; ++q) {
        const double apq = a(p, q);
        if (apq == 0.0) continue;
        const double theta = (a(q, q) - a(p, p)) / (2.0 * apq);
        const double t =
            std::copysign(1.0, theta) / (std::abs(theta) + std::sqrt(theta * theta + 1.0));
        const double cs = 1.0 / std::sqrt(t * t + 1.0);
        const double sn = t * cs;
        for (std::size_t k = 0; k < n; ++k) {
          const double akp = a(k, p);
          const double akq = a(k, q);
          a(k, p) = cs * akp - sn * akq;
          a(k, q) = sn * akp + cs * akq;
        }
        for (std::size_t k = 0; k < n; ++k) {
          const double apk = a(p, k);
          const double aqk = a(q, k);
          a(p, k) = cs * apk - sn * aqk;
          a(q, k) = sn * apk + cs * aqk;
        }
        for (std::size_t k = 0; k < n; ++k) {
          const double vkp = v(k, p);
          const double vkq = v(k, q);
          v(k, p) = cs * vkp - sn * vkq;
          v(k, q) = sn * vkp + cs * vkq;
        }
      }
    }
  }
  if (!converged) fail(ErrorCode::kNoConvergence, "Jacobi eigensolver hit the sweep cap");

  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t x, std::size_t y) { return a(x, x) > a(y, y); });
  SymmetricEigen out;
  out.values.resize(n);
  out.vectors = Matrix(n, n);
  for (std::size_t idx = 0; idx < n; ++idx) {
    out.values[idx] = a(order[idx], order[idx]);
    for (std::size_t k = 0; k < n; ++k) out.vectors(k, idx) = v(k, order[idx]);
  }
  return out;
}

}  // namespace vecforge::linalg
