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
#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "vecforge/matrix.hpp"
#include "vecforge/tensor_store.hpp"

namespace vecforge {

// Dense float64 tensor of arbitrary rank; used for task-vector deltas.
struct DenseTensor {
  std::vector<std::int64_t> shape;
  std::vector<double> values;

  static DenseTensor from_record(const TensorRecord& t);
  static DenseTensor from_matrix(const Matrix& m);
  Matrix to_matrix() const;

  bool operator==(const DenseTensor&) const = default;
};

enum class DecomposerVariant {
  kPlainSvd,
  kScaledSvd,
  kWhitenedSvd,
  kCoSvd,
  kCoSvdRandom,
  kCoSvdCrossTask,
};

struct DecomposerKind {
  DecomposerKind(DecomposerVariant v = DecomposerVariant::kCoSvd, std::string cross_task = {},
                 std::uint64_t seed = 0)
      : variant(v), cross_task_id(std::move(cross_task)), random_seed(seed) {}

  DecomposerVariant variant;
  // Task whose covariance co_svd_crosstask deliberately borrows.
  std::string cross_task_id;
  // Seed of the random surrogate used by co_svd_random.
  std::uint64_t random_seed;

  bool needs_covariance() const noexcept;
  std::string name() const;
  static DecomposerKind parse(std::string_view text);

  bool operator==(const DecomposerKind&) const = default;
};

struct Decomposition {
  Matrix purified;                       // W-dagger
  std::vector<double> spectrum;          // singular values of the decomposed product
  std::size_t rank_used = 0;
  double residual_energy = 0.0;          // sum of squared discarded singular values
};

/// Rank-r reconstruction of W through the chosen decomposer.
///
/// plain_svd      truncate(svd(W), r)
/// scaled_svd     truncate(svd(W D), r) D^-1, D = sqrt(diag(C) / count)
/// whitened_svd   truncate(svd(W L), r) L^-1, C = L L^T
/// co_svd         truncate(svd(W C), r) C^-1
/// co_svd_random  co_svd with C replaced by a seeded uniform [-1, 1] matrix
/// co_svd_crosstask  co_svd with another task's C (the caller passes it)
///
/// `layer_name` keys the random surrogate so each layer draws its own matrix.
Decomposition apply_decomposer(const Matrix& w, const CovarianceEntry* cov,
                               const DecomposerKind& kind, std::size_t r,
                               std::string_view layer_name = {});

/// Seeded uniform [-1, 1] square matrix, regularized until LU succeeds.
Matrix random_context_matrix(std::size_t n, std::uint64_t seed, std::string_view layer_name);

struct PurifiedLayer {
  std::string layer_name;
  TensorRecord delta;
  std::size_t rank_used = 0;
  double residual_energy = 0.0;
};

enum class TaskVectorKind { kPlain, kDare, kPave };

std::string_view task_vector_kind_name(TaskVectorKind kind) noexcept;

struct TaskVectorSet {
  std::string task_id;
  std::map<std::string, DenseTensor> layers;
  TaskVectorKind kind = TaskVectorKind::kPlain;
  // Recipe fragment: drop rate, seed, decomposer, per-layer ranks.
  std::map<std::string, std::string> provenance;
  // Per purified layer; empty for plain and DARE vectors.
  std::map<std::string, PurifiedLayer> purified;

  void validate_against(const Checkpoint& base) const;
};

using LayerRanks = std::map<std::string, std::size_t>;

/// W_FT - W_B for every tensor of the base checkpoint.
TaskVectorSet plain_task_vector(const Checkpoint& ft, const Checkpoint& base);

/// Drop-and-rescale with counter-based randomness keyed on
/// (seed, layer, element index).
TaskVectorSet dare_task_vector(const TaskVectorSet& delta, double p, std::uint64_t seed);

/// Keep-decision for one element; exposed so tests can audit the mask.
bool dare_keeps(std::uint64_t seed, std::string_view layer, std::uint64_t index, double p) noexcept;

/// Purified task vector per linear layer; every other tensor carries its
/// plain delta. For co_svd_crosstask, `covs` must be the borrowed task's set.
TaskVectorSet pave_purify(const Checkpoint& ft, const Checkpoint& base, const CovarianceSet& covs,
                          const LayerRanks& ranks, const DecomposerKind& decomposer);

Container to_container(const TaskVectorSet& tv);
TaskVectorSet task_vectors_from_container(const Container& c);

}  // namespace vecforge
