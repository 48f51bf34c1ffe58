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

// Independent reference implementations for the unit tests. None of these
// call into the library's numerical code; they are deliberately naive.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <random>
#include <utility>
#include <vector>

#include "vecforge/matrix.hpp"

namespace oracle {

using vecforge::Matrix;

inline Matrix random_matrix(std::size_t r, std::size_t c, std::mt19937_64& rng, double lo = -1.0,
                            double hi = 1.0) {
  std::uniform_real_distribution<double> u(lo, hi);
  Matrix m(r, c);
  for (std::size_t i = 0; i < r; ++i) {
    for (std::size_t j = 0; j < c; ++j) m(i, j) = u(rng);
  }
  return m;
}

inline Matrix mul(const Matrix& a, const Matrix& b) {
  Matrix out(a.rows(), b.cols());
  for (std::size_t i = 0; i < a.rows(); ++i) {
    for (std::size_t j = 0; j < b.cols(); ++j) {
      long double s = 0.0L;
      for (std::size_t k = 0; k < a.cols(); ++k) s += static_cast<long double>(a(i, k)) * b(k, j);
      out(i, j) = static_cast<double>(s);
    }
  }
  return out;
}

inline Matrix transpose(const Matrix& a) {
  Matrix out(a.cols(), a.rows());
  for (std::size_t i = 0; i < a.rows(); ++i) {
    for (std::size_t j = 0; j < a.cols(); ++j) out(j, i) = a(i, j);
  }
  return out;
}

inline double frob(const Matrix& a) {
  long double s = 0.0L;
  for (std::size_t i = 0; i < a.rows(); ++i) {
    for (std::size_t j = 0; j < a.cols(); ++j) s += static_cast<long double>(a(i, j)) * a(i, j);
  }
  return std::sqrt(static_cast<double>(s));
}

inline double frob_diff(const Matrix& a, const Matrix& b) {
  long double s = 0.0L;
  for (std::size_t i = 0; i < a.rows(); ++i) {
    for (std::size_t j = 0; j < a.cols(); ++j) {
      const long double d = static_cast<long double>(a(i, j)) - b(i, j);
      s += d * d;
    }
  }
  return std::sqrt(static_cast<double>(s));
}

inline double rel_diff(const Matrix& a, const Matrix& b) {
  const double n = frob(b);
  return n == 0.0 ? frob(a) : frob_diff(a, b) / n;
}

// Gauss-Jordan inverse with full pivoting.
inline Matrix inverse(const Matrix& a) {
  const std::size_t n = a.rows();
  Matrix m = a;
  Matrix inv(n, n);
  for (std::size_t i = 0; i < n; ++i) inv(i, i) = 1.0;
  for (std::size_t col = 0; col < n; ++col) {
    std::size_t piv = col;
    for (std::size_t r = col + 1; r < n; ++r) {
      if (std::abs(m(r, col)) > std::abs(m(piv, col))) piv = r;
    }
    for (std::size_t j = 0; j < n; ++j) {
      std::swap(m(col, j), m(piv, j));
      std::swap(inv(col, j), inv(piv, j));
    }
    const double p = m(col, col);
    for (std::size_t j = 0; j < n; ++j) {
      m(col, j) /= p;
      inv(col, j) /= p;
    }
    for (std::size_t r = 0; r < n; ++r) {
      if (r == col) continue;
      const double f = m(r, col);
      if (f == 0.0) continue;
      for (std::size_t j = 0; j < n; ++j) {
        m(r, j) -= f * m(col, j);
        inv(r, j) -= f * inv(col, j);
      }
    }
  }
  return inv;
}

// Classical two-sided Jacobi eigenvalues of a symmetric matrix, descending.
inline std::vector<double> sym_eigenvalues(Matrix a) {
  const std::size_t n = a.rows();
  for (int sweep = 0; sweep < 200; ++sweep) {
    double off = 0.0;
    for (std::size_t p = 0; p < n; ++p) {
      for (std::size_t q = p + 1; q < n; ++q) off += a(p, q) * a(p, q);
    }
    if (off < 1e-30) break;
    for (std::size_t p = 0; p < n; ++p) {
      for (std::size_t q = p + 1; q < n; ++q) {
        if (a(p, q) == 0.0) continue;
        const double theta = (a(q, q) - a(p, p)) / (2.0 * a(p, q));
        const double t = (theta >= 0 ? 1.0 : -1.0) /
                         (std::abs(theta) + std::sqrt(theta * theta + 1.0));
        const double c = 1.0 / std::sqrt(t * t + 1.0);
        const double s = t * c;
        for (std::size_t k = 0; k < n; ++k) {
          const double akp = a(k, p);
          const double akq = a(k, q);
          a(k, p) = c * akp - s * akq;
          a(k, q) = s * akp + c * akq;
        }
        for (std::size_t k = 0; k < n; ++k) {
          const double apk = a(p, k);
          const double aqk = a(q, k);
          a(p, k) = c * apk - s * aqk;
          a(q, k) = s * apk + c * aqk;
        }
      }
    }
  }
  std::vector<double> ev(n);
  for (std::size_t i = 0; i < n; ++i) ev[i] = a(i, i);
  std::sort(ev.begin(), ev.end(), std::greater<>());
  return ev;
}

// Singular values as square roots of the eigenvalues of A^T A (or A A^T).
inline std::vector<double> singular_values(const Matrix& a) {
  const Matrix g = a.rows() >= a.cols() ? mul(transpose(a), a) : mul(a, transpose(a));
  auto ev = sym_eigenvalues(g);
  for (double& v : ev) v = std::sqrt(std::max(v, 0.0));
  return ev;
}

// Positive definiteness by naive elimination without pivoting: every pivot
// must stay above the given floor.
inline bool positive_definite(const Matrix& c, double floor) {
  Matrix m = c;
  const std::size_t n = m.rows();
  for (std::size_t k = 0; k < n; ++k) {
    if (!(m(k, k) > floor)) return false;
    for (std::size_t i = k + 1; i < n; ++i) {
      const double f = m(i, k) / m(k, k);
      for (std::size_t j = k; j < n; ++j) m(i, j) -= f * m(k, j);
    }
  }
  return true;
}

// Sum of squares of the discarded values s_i[j], j >= r_i, accumulated in
// ascending order so equal multisets give bit-identical sums.
inline double canonical_mass(const std::vector<std::vector<double>>& s,
                             const std::vector<std::size_t>& r) {
  std::vector<double> sq;
  for (std::size_t i = 0; i < s.size(); ++i) {
    for (std::size_t j = r[i]; j < s[i].size(); ++j) sq.push_back(s[i][j] * s[i][j]);
  }
  std::sort(sq.begin(), sq.end());
  double mass = 0.0;
  for (double v : sq) mass += v;
  return mass;
}

// Minimum canonical discarded mass over every rank tuple with r_i in
// [lo_i, R] and sum r_i == total.
inline double min_discarded_mass(const std::vector<std::vector<double>>& s,
                                 const std::vector<std::size_t>& lo, std::size_t total) {
  const std::size_t k = s.size();
  const std::size_t full = s.front().size();
  std::vector<std::size_t> r(lo);
  double best = INFINITY;
  while (true) {
    std::size_t sum = 0;
    for (auto x : r) sum += x;
    if (sum == total) {
      best = std::min(best, canonical_mass(s, r));
    }
    std::size_t i = 0;
    while (i < k && r[i] == full) {
      r[i] = lo[i];
      ++i;
    }
    if (i == k) break;
    ++r[i];
  }
  return best;
}

}  // namespace oracle
