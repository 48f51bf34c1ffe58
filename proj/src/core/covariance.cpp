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

#include "vecforge/covariance.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>

#include "vecforge/errors.hpp"
#include "vecforge/linalg.hpp"

namespace vecforge {

namespace {
constexpr std::string_view kActsInfix = ".acts.";
}

std::uint64_t ActivationStream::sample_count() const noexcept {
  std::uint64_t n = 0;
  for (const auto& b : batches) n += b.cols();
  return n;
}

CovarianceEntry build_covariance(const ActivationStream& stream) {
  if (stream.batches.empty()) {
    fail(ErrorCode::kEmptyStream, "no activation batches for '" + stream.layer_name + "'");
  }
  const std::size_t n = stream.batches.front().rows();
  Matrix acc(n, n);
  std::uint64_t count = 0;
  for (const auto& batch : stream.batches) {
    if (batch.rows() != n) {
      fail(ErrorCode::kDimensionMismatch,
           "batches for '" + stream.layer_name + "' disagree on the input width");
    }
    if (batch.cols() == 0) continue;
    acc = linalg::accumulate_covariance(acc, batch);
    count += batch.cols();
  }
  if (count == 0) {
    fail(ErrorCode::kEmptyStream, "activation stream for '" + stream.layer_name + "' is empty");
  }
  return {std::move(acc), count, 0.0};
}

double boost_unit(const Matrix& c) noexcept {
  if (c.rows() == 0) return 1e-12;
  return std::max(1e-6 * trace(c) / static_cast<double>(c.rows()), 1e-12);
}

double boost_schedule(double eps, int step) noexcept {
  if (step <= 0) return 0.0;
  return std::ldexp(eps, step - 1);
}

double cholesky_pivot_floor(const Matrix& c) noexcept {
  double max_diag = 0.0;
  for (std::size_t i = 0; i < c.rows(); ++i) max_diag = std::max(max_diag, c(i, i));
  return 1e-12 * max_diag;
}

Regularized regularize_invertible(const Matrix& c, RegularizeOptions options) {
  if (c.rows() != c.cols()) fail(ErrorCode::kDimensionMismatch, "covariance must be square");
  if (!all_finite(c)) fail(ErrorCode::kNonFinite, "covariance contains NaN or Inf");
  const double tr = trace(c);
  if (tr == 0.0 && !options.identity_fallback) {
    fail(ErrorCode::kDegenerate, "covariance has zero trace (all-zero activations)");
  }
  const double eps = boost_unit(c);
  const double floor = cholesky_pivot_floor(c);
  for (int step = 0; step <= options.max_doublings + 1; ++step) {
    const double boost = boost_schedule(eps, step);
    Matrix candidate = c;
    for (std::size_t i = 0; i < c.rows(); ++i) candidate(i, i) += boost;
    try {
      (void)linalg::cholesky(candidate, floor);
      return {std::move(candidate), boost};
    } catch (const Error& e) {
      if (e.code() != ErrorCode::kNotPositiveDefinite) throw;
    }
  }
  fail(ErrorCode::kNotPositiveDefinite, "boost schedule exhausted without a valid Cholesky");
}

void regularize_set(CovarianceSet& covs, RegularizeOptions options) {
  for (auto& [layer, e] : covs.entries) {
    auto r = regularize_invertible(e.matrix, options);
    e.matrix = std::move(r.matrix);
    e.diag_boost += r.boost;
  }
}

std::vector<ActivationStream> streams_from_container(const Container& c,
                                                     std::uint64_t max_samples) {
  std::map<std::string, std::map<std::uint64_t, const TensorRecord*>> by_layer;
  for (const auto& [name, t] : c.tensors) {
    const auto pos = name.rfind(kActsInfix);
    if (pos == std::string::npos) continue;
    const std::string layer = name.substr(0, pos);
    const std::string idx_text = name.substr(pos + kActsInfix.size());
    std::uint64_t idx = 0;
    auto [ptr, ec] = std::from_chars(idx_text.data(), idx_text.data() + idx_text.size(), idx);
    if (ec != std::errc() || ptr != idx_text.data() + idx_text.size()) {
      fail(ErrorCode::kMalformedHeader, "activation tensor '" + name + "' has a bad batch index");
    }
    by_layer[layer][idx] = &t;
  }
  std::vector<ActivationStream> streams;
  auto task = c.metadata.find(std::string(kTaskIdKey));
  for (const auto& [layer, batches] : by_layer) {
    ActivationStream s;
    s.layer_name = layer;
    if (task != c.metadata.end()) s.source_task = task->second;
    std::uint64_t taken = 0;
    for (const auto& [idx, t] : batches) {
      if (max_samples != 0 && taken >= max_samples) break;
      Matrix m = t->to_matrix();
      if (max_samples != 0 && taken + m.cols() > max_samples) {
        const std::size_t keep = static_cast<std::size_t>(max_samples - taken);
        Matrix cut(m.rows(), keep);
        for (std::size_t r = 0; r < m.rows(); ++r) {
          std::copy_n(m.row(r).begin(), keep, cut.row(r).begin());
        }
        m = std::move(cut);
      }
      taken += m.cols();
      s.batches.push_back(std::move(m));
    }
    streams.push_back(std::move(s));
  }
  return streams;
}

Container streams_to_container(const std::vector<ActivationStream>& streams) {
  Container c;
  for (const auto& s : streams) {
    for (std::size_t i = 0; i < s.batches.size(); ++i) {
      auto t = TensorRecord::from_matrix(s.layer_name + std::string(kActsInfix) + std::to_string(i),
                                         DType::kF64, s.batches[i]);
      c.tensors.emplace(t.name, std::move(t));
    }
  }
  c.metadata[std::string(kKindKey)] = "activations";
  if (!streams.empty()) c.metadata[std::string(kTaskIdKey)] = streams.front().source_task;
  return c;
}

CovarianceSet build_covariance_set(const std::vector<ActivationStream>& streams,
                                   const std::string& task_id, RegularizeOptions options) {
  CovarianceSet covs;
  covs.task_id = task_id;
  for (const auto& s : streams) {
    auto entry = build_covariance(s);
    auto r = regularize_invertible(entry.matrix, options);
    entry.matrix = std::move(r.matrix);
    entry.diag_boost = r.boost;
    covs.entries.emplace(s.layer_name, std::move(entry));
  }
  return covs;
}

}  // namespace vecforge
