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

#include "vecforge/purify.hpp"

#include <algorithm>
#include <cmath>

#include <json.hpp>

#include "vecforge/covariance.hpp"
#include "vecforge/errors.hpp"
#include "vecforge/hash.hpp"
#include "vecforge/linalg.hpp"
#include "vecforge/parallel.hpp"

namespace vecforge {
namespace {

constexpr std::string_view kDeltaSuffix = ".delta";

struct VariantName {
  DecomposerVariant variant;
  std::string_view name;
};

constexpr VariantName kVariantNames[] = {
    {DecomposerVariant::kPlainSvd, "plain_svd"},
    {DecomposerVariant::kScaledSvd, "scaled_svd"},
    {DecomposerVariant::kWhitenedSvd, "whitened_svd"},
    {DecomposerVariant::kCoSvd, "co_svd"},
    {DecomposerVariant::kCoSvdRandom, "co_svd_random"},
    {DecomposerVariant::kCoSvdCrossTask, "co_svd_crosstask"},
};

Matrix scale_columns(Matrix m, const std::vector<double>& d, bool divide) {
  for (std::size_t i = 0; i < m.rows(); ++i) {
    auto row = m.row(i);
    for (std::size_t j = 0; j < m.cols(); ++j) row[j] = divide ? row[j] / d[j] : row[j] * d[j];
  }
  return m;
}

// Per-channel magnitude proxy sqrt(diag(C) / count), with the regularization
// boost removed and dead channels floored so D stays invertible.
std::vector<double> activation_scales(const CovarianceEntry& cov) {
  const std::size_t n = cov.matrix.rows();
  std::vector<double> d(n, 1.0);
  if (cov.sample_count == 0) return d;
  double max_d = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const double ms = std::max(cov.matrix(i, i) - cov.diag_boost, 0.0) /
                      static_cast<double>(cov.sample_count);
    d[i] = std::sqrt(ms);
    max_d = std::max(max_d, d[i]);
  }
  if (max_d == 0.0) return std::vector<double>(n, 1.0);
  for (double& v : d) v = std::max(v, 1e-8 * max_d);
  return d;
}

void require_cov(const CovarianceEntry* cov, const Matrix& w, std::string_view layer) {
  if (cov == nullptr) {
    fail(ErrorCode::kMissingCovariance, "decomposer needs a covariance for '" +
                                            std::string(layer) + "'");
  }
  if (cov->matrix.rows() != w.cols() || cov->matrix.cols() != w.cols()) {
    fail(ErrorCode::kDimensionMismatch,
         "covariance for '" + std::string(layer) + "' does not match the layer input width");
  }
}

}  // namespace

// ---------------------------------------------------------------------------

DenseTensor DenseTensor::from_record(const TensorRecord& t) { return {t.shape, t.to_doubles()}; }

DenseTensor DenseTensor::from_matrix(const Matrix& m) {
  return {{static_cast<std::int64_t>(m.rows()), static_cast<std::int64_t>(m.cols())},
          m.storage()};
}

Matrix DenseTensor::to_matrix() const {
  if (shape.size() != 2) fail(ErrorCode::kShapeMismatch, "tensor is not 2-D");
  return Matrix(static_cast<std::size_t>(shape[0]), static_cast<std::size_t>(shape[1]), values);
}

bool DecomposerKind::needs_covariance() const noexcept {
  return variant != DecomposerVariant::kPlainSvd && variant != DecomposerVariant::kCoSvdRandom;
}

std::string DecomposerKind::name() const {
  for (const auto& [v, n] : kVariantNames) {
    if (v == variant) return std::string(n);
  }
  return "unknown";
}

DecomposerKind DecomposerKind::parse(std::string_view text) {
  for (const auto& [v, n] : kVariantNames) {
    if (n == text) return DecomposerKind{v, {}, 0};
  }
  fail(ErrorCode::kInvalidArgument, "unknown decomposer '" + std::string(text) + "'");
}

Matrix random_context_matrix(std::size_t n, std::uint64_t seed, std::string_view layer_name) {
  Matrix r(n, n);
  const std::uint64_t stream = fnv1a(layer_name);
  for (std::size_t i = 0; i < n * n; ++i) {
    r.values()[i] = 2.0 * keyed_uniform(seed, stream, i) - 1.0;
  }
  // Same doubling schedule as the covariance path, with LU pivots as the
  // invertibility test since the surrogate is not symmetric.
  const double eps = std::max(1e-6 * frobenius_norm(r) / std::sqrt(static_cast<double>(n)), 1e-12);
  const double floor = 1e-12 * std::max(max_abs(r), 1.0);
  const Matrix probe(n, 1, 1.0);
  for (int step = 0; step <= 200; ++step) {
    Matrix candidate = r;
    const double boost = boost_schedule(eps, step);
    for (std::size_t i = 0; i < n; ++i) candidate(i, i) += boost;
    try {
      (void)linalg::lu_solve(candidate, probe, floor);
      return candidate;
    } catch (const Error& e) {
      if (e.code() != ErrorCode::kNotPositiveDefinite) throw;
    }
  }
  fail(ErrorCode::kNotPositiveDefinite, "random context matrix could not be made invertible");
}

Decomposition apply_decomposer(const Matrix& w, const CovarianceEntry* cov,
                               const DecomposerKind& kind, std::size_t r,
                               std::string_view layer_name) {
  const std::size_t full = std::min(w.rows(), w.cols());
  if (r > full) {
    fail(ErrorCode::kRankOutOfRange, "rank " + std::to_string(r) + " exceeds " +
                                         std::to_string(full) + " for '" +
                                         std::string(layer_name) + "'");
  }
  Decomposition out;
  out.rank_used = r;
  auto finish = [&](const linalg::SvdFactors& f) {
    out.spectrum = f.s;
    out.residual_energy = linalg::discarded_energy(f, r);
    return linalg::truncate(f, r);
  };

  switch (kind.variant) {
    case DecomposerVariant::kPlainSvd: {
      out.purified = finish(linalg::svd(w));
      break;
    }
    case DecomposerVariant::kScaledSvd: {
      require_cov(cov, w, layer_name);
      const auto d = activation_scales(*cov);
      const Matrix t = finish(linalg::svd(scale_columns(w, d, false)));
      out.purified = scale_columns(t, d, true);
      break;
    }
    case DecomposerVariant::kWhitenedSvd: {
      require_cov(cov, w, layer_name);
      const Matrix l = linalg::cholesky(cov->matrix);
      const Matrix t = finish(linalg::svd(matmul(w, l)));
      // X L = T  <=>  L^T X^T = T^T
      out.purified = linalg::back_substitute_transposed(l, t.transposed()).transposed();
      break;
    }
    case DecomposerVariant::kCoSvd:
    case DecomposerVariant::kCoSvdCrossTask: {
      require_cov(cov, w, layer_name);
      const Matrix t = finish(linalg::svd(matmul(w, cov->matrix)));
      out.purified = linalg::right_solve_spd(t, cov->matrix);
      break;
    }
    case DecomposerVariant::kCoSvdRandom: {
      const Matrix ctx = random_context_matrix(w.cols(), kind.random_seed, layer_name);
      const Matrix t = finish(linalg::svd(matmul(w, ctx)));
      // X R = T  <=>  R^T X^T = T^T
      out.purified = linalg::lu_solve(ctx.transposed(), t.transposed()).transposed();
      break;
    }
  }
  return out;
}

// ---------------------------------------------------------------------------

std::string_view task_vector_kind_name(TaskVectorKind kind) noexcept {
  switch (kind) {
    case TaskVectorKind::kPlain: return "plain";
    case TaskVectorKind::kDare: return "dare";
    case TaskVectorKind::kPave: return "pave";
  }
  return "unknown";
}

void TaskVectorSet::validate_against(const Checkpoint& base) const {
  for (const auto& [name, t] : layers) {
    auto it = base.tensors.find(name);
    if (it == base.tensors.end() || it->second.shape != t.shape) {
      fail(ErrorCode::kIncompatibleTopology,
           "task vector '" + task_id + "' tensor '" + name + "' does not match the base");
    }
  }
  for (const auto& [name, t] : base.tensors) {
    if (!layers.contains(name)) {
      fail(ErrorCode::kIncompatibleTopology,
           "task vector '" + task_id + "' lacks tensor '" + name + "'");
    }
  }
}

TaskVectorSet plain_task_vector(const Checkpoint& ft, const Checkpoint& base) {
  require_compatible(ft, base);
  TaskVectorSet tv;
  tv.task_id = ft.model_id();
  tv.kind = TaskVectorKind::kPlain;
  for (const auto& [name, b] : base.tensors) {
    auto it = ft.tensors.find(name);
    if (it == ft.tensors.end() || it->second.shape != b.shape) {
      fail(ErrorCode::kIncompatibleTopology, "tensor '" + name + "' differs from the base");
    }
    DenseTensor d = DenseTensor::from_record(it->second);
    const auto bv = b.to_doubles();
    for (std::size_t i = 0; i < bv.size(); ++i) d.values[i] -= bv[i];
    tv.layers.emplace(name, std::move(d));
  }
  return tv;
}

bool dare_keeps(std::uint64_t seed, std::string_view layer, std::uint64_t index,
                double p) noexcept {
  return keyed_uniform(seed, fnv1a(layer), index) >= p;
}

TaskVectorSet dare_task_vector(const TaskVectorSet& delta, double p, std::uint64_t seed) {
  if (!(p >= 0.0 && p < 1.0)) {
    fail(ErrorCode::kInvalidRate, "drop rate must lie in [0, 1), got " + std::to_string(p));
  }
  if (delta.kind != TaskVectorKind::kPlain) {
    fail(ErrorCode::kInvalidArgument, "DARE applies to plain task vectors only");
  }
  TaskVectorSet out = delta;
  out.kind = TaskVectorKind::kDare;
  out.provenance["dare_p"] = nlohmann::json(p).dump();
  out.provenance["dare_seed"] = std::to_string(seed);
  if (p == 0.0) return out;
  const double rescale = 1.0 / (1.0 - p);
  for (auto& [name, t] : out.layers) {
    for (std::size_t i = 0; i < t.values.size(); ++i) {
      t.values[i] = dare_keeps(seed, name, i, p) ? t.values[i] * rescale : 0.0;
    }
  }
  return out;
}

TaskVectorSet pave_purify(const Checkpoint& ft, const Checkpoint& base, const CovarianceSet& covs,
                          const LayerRanks& ranks, const DecomposerKind& decomposer) {
  if (decomposer.variant == DecomposerVariant::kCoSvdCrossTask &&
      covs.task_id != decomposer.cross_task_id) {
    fail(ErrorCode::kInvalidArgument, "co_svd_crosstask expects covariances of task '" +
                                          decomposer.cross_task_id + "', got '" + covs.task_id +
                                          "'");
  }
  TaskVectorSet tv = plain_task_vector(ft, base);
  tv.kind = TaskVectorKind::kPave;
  tv.provenance["decomposer"] = decomposer.name();

  const auto& layers = base.linear_layers;
  for (const auto& name : layers) {
    if (decomposer.needs_covariance()) (void)covs.entry(name);
    if (!ranks.contains(name)) {
      fail(ErrorCode::kRankOutOfRange, "no preserved rank for layer '" + name + "'");
    }
  }
  std::vector<PurifiedLayer> results(layers.size());
  parallel_for(layers.size(), [&](std::size_t i) {
    const auto& name = layers[i];
    const Matrix w_ft = ft.layer_matrix(name);
    const CovarianceEntry* cov =
        decomposer.needs_covariance() ? &covs.entry(name) : nullptr;
    auto dec = apply_decomposer(w_ft, cov, decomposer, ranks.at(name), name);
    Matrix delta = std::move(dec.purified);
    delta -= base.layer_matrix(name);
    results[i] = PurifiedLayer{name, TensorRecord::from_matrix(name, DType::kF64, delta),
                               dec.rank_used, dec.residual_energy};
  });

  nlohmann::json rank_record = nlohmann::json::object();
  for (auto& pl : results) {
    tv.layers[pl.layer_name] = DenseTensor::from_record(pl.delta);
    rank_record[pl.layer_name] = pl.rank_used;
    tv.purified.emplace(pl.layer_name, std::move(pl));
  }
  tv.provenance["ranks"] = rank_record.dump();
  return tv;
}

Container to_container(const TaskVectorSet& tv) {
  Container c;
  for (const auto& [name, t] : tv.layers) {
    auto rec = TensorRecord::from_doubles(name + std::string(kDeltaSuffix), DType::kF64, t.shape,
                                          t.values);
    c.tensors.emplace(rec.name, std::move(rec));
  }
  c.metadata[std::string(kKindKey)] = "task_vectors";
  c.metadata[std::string(kTaskIdKey)] = tv.task_id;
  c.metadata["vecforge.vector_kind"] = std::string(task_vector_kind_name(tv.kind));
  c.metadata["vecforge.provenance"] = nlohmann::json(tv.provenance).dump();
  return c;
}

TaskVectorSet task_vectors_from_container(const Container& c) {
  TaskVectorSet tv;
  auto get = [&](std::string_view key) -> std::string {
    auto it = c.metadata.find(std::string(key));
    return it == c.metadata.end() ? std::string() : it->second;
  };
  tv.task_id = get(kTaskIdKey);
  const std::string kind = get("vecforge.vector_kind");
  if (kind == "dare") {
    tv.kind = TaskVectorKind::kDare;
  } else if (kind == "pave") {
    tv.kind = TaskVectorKind::kPave;
  } else {
    tv.kind = TaskVectorKind::kPlain;
  }
  const std::string prov = get("vecforge.provenance");
  if (!prov.empty()) {
    try {
      tv.provenance = nlohmann::json::parse(prov).get<std::map<std::string, std::string>>();
    } catch (const nlohmann::json::exception&) {
      fail(ErrorCode::kMalformedHeader, "task vector provenance is not a string map");
    }
  }
  for (const auto& [name, t] : c.tensors) {
    if (name.size() <= kDeltaSuffix.size() ||
        name.compare(name.size() - kDeltaSuffix.size(), kDeltaSuffix.size(), kDeltaSuffix) != 0) {
      continue;
    }
    tv.layers.emplace(name.substr(0, name.size() - kDeltaSuffix.size()),
                      DenseTensor::from_record(t));
  }
  return tv;
}

}  // namespace vecforge
