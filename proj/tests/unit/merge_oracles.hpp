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

// Naive scalar-loop reimplementations of the Ties and EMR rules over flat
// per-tensor vectors, written independently of the library engines.

#include <cmath>
#include <cstddef>
#include <vector>

namespace oracle {

inline int sgn(double v) { return (v > 0.0) - (v < 0.0); }

// Entry i survives when fewer than k entries beat it: larger magnitude, or
// equal magnitude at a lower index.
inline std::vector<double> ties_trim(const std::vector<double>& v, std::size_t k) {
  std::vector<double> out(v.size(), 0.0);
  for (std::size_t i = 0; i < v.size(); ++i) {
    std::size_t beaten_by = 0;
    for (std::size_t j = 0; j < v.size(); ++j) {
      if (std::abs(v[j]) > std::abs(v[i]) || (std::abs(v[j]) == std::abs(v[i]) && j < i)) {
        ++beaten_by;
      }
    }
    if (beaten_by < k) out[i] = v[i];
  }
  return out;
}

// Merged Ties delta (already scaled by lambda) for one tensor.
inline std::vector<double> ties_delta(const std::vector<std::vector<double>>& taus, std::size_t k,
                                      double lambda) {
  const std::size_t n = taus.front().size();
  std::vector<std::vector<double>> t;
  for (const auto& tau : taus) t.push_back(ties_trim(tau, k));
  std::vector<double> out(n, 0.0);
  for (std::size_t c = 0; c < n; ++c) {
    double total = 0.0;
    for (std::size_t i = 0; i < t.size(); ++i) total += t[i][c];
    const int s = sgn(total);
    if (s == 0) continue;
    double acc = 0.0;
    int count = 0;
    for (std::size_t i = 0; i < t.size(); ++i) {
      if (sgn(t[i][c]) == s) {
        acc += t[i][c];
        ++count;
      }
    }
    if (count > 0) out[c] = lambda * (acc / count);
  }
  return out;
}

struct EmrTensor {
  std::vector<double> uni;
  std::vector<std::vector<double>> masks;
  std::vector<double> rescalers;
};

inline EmrTensor emr(const std::vector<std::vector<double>>& taus) {
  const std::size_t n = taus.front().size();
  EmrTensor out;
  out.uni.assign(n, 0.0);
  for (std::size_t c = 0; c < n; ++c) {
    double total = 0.0;
    for (const auto& tau : taus) total += tau[c];
    const int s = sgn(total);
    double best = 0.0;
    for (const auto& tau : taus) {
      if (s != 0 && sgn(tau[c]) == s && std::abs(tau[c]) > best) best = std::abs(tau[c]);
    }
    out.uni[c] = s * best;
  }
  for (const auto& tau : taus) {
    std::vector<double> mask(n, 0.0);
    double num = 0.0;
    double den = 0.0;
    for (std::size_t c = 0; c < n; ++c) {
      num += std::abs(tau[c]);
      if (sgn(tau[c]) != 0 && sgn(tau[c]) == sgn(out.uni[c])) {
        mask[c] = 1.0;
        den += std::abs(out.uni[c]);
      }
    }
    out.masks.push_back(mask);
    out.rescalers.push_back(den == 0.0 ? 1.0 : num / den);
  }
  return out;
}

}  // namespace oracle
