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
#include <map>
#include <optional>
#include <set>
#include <string>
#include <string_view>
#include <vector>

#include "vecforge/purify.hpp"
#include "vecforge/tensor_store.hpp"

namespace vecforge {

enum class MergeMethod { kAverage, kTaskArithmetic, kTies, kEmr };

std::string_view merge_method_name(MergeMethod m) noexcept;
MergeMethod parse_merge_method(std::string_view text);

struct PurificationSettings {
  DecomposerKind decomposer;
  double rho = 7.0 / 8.0;
  double gamma = 7.0 / 8.0 - (1.0 - 7.0 / 8.0) / 2.0;
  std::set<std::string> exempt;

  bool operator==(const PurificationSettings&) const = default;
};

struct MergeInput {
  std::string checkpoint;
  std::string covariance;  // may be empty when no purification is requested
  std::string task_id;

  bool operator==(const MergeInput&) const = default;
};

/// Declarative description of one merge run.
struct MergeRecipe {
  MergeMethod method = MergeMethod::kTaskArithmetic;
  double lambda = 0.3;
  double ties_trim_keep = 0.2;
  std::optional<double> dare_p;
  std::optional<PurificationSettings> purification;
  std::vector<MergeInput> inputs;
  std::string base;
  std::uint64_t seed = 0;

  /// Enumerates every schema violation; empty means valid.
  std::vector<std::string> violations() const;

  bool operator==(const MergeRecipe&) const = default;
};

/// Parses a recipe JSON document. Missing optional fields take defaults;
/// unknown fields and type errors are violations. Throws kInvalidRecipe with
/// every violation listed.
MergeRecipe parse_recipe(const std::string& json_text);
/// Serializes with every field materialized.
std::string recipe_to_json(const MergeRecipe& recipe);

struct EmrArtifacts {
  std::vector<std::string> task_order;
  std::map<std::string, DenseTensor> unified;  // tensor -> tau_uni
  // task -> tensor -> {0, 1} mask
  std::map<std::string, std::map<std::string, DenseTensor>> masks;
  // task -> tensor -> rescaler
  std::map<std::string, std::map<std::string, double>> rescalers;
};

struct MergedModel {
  Checkpoint weights;
  std::optional<EmrArtifacts> emr;
  std::optional<MergeRecipe> recipe;
};

/// W_B + mean of the deltas.
MergedModel merge_average(const std::vector<TaskVectorSet>& deltas, const Checkpoint& base);

/// Mean of the fine-tuned weights themselves, the same merge as
/// merge_average over plain deltas without the round trip through W_B, so a
/// single model comes back bit-exact. Output dtypes and metadata follow base.
MergedModel merge_average_weights(const std::vector<Checkpoint>& models, const Checkpoint& base);

/// W_B + lambda * sum of the deltas.
MergedModel merge_task_arithmetic(const std::vector<TaskVectorSet>& deltas, const Checkpoint& base,
                                  double lambda);

/// Trim each delta to its top ceil(keep * N) magnitudes per tensor, elect a
/// per-coordinate sign from the trimmed sum, average the agreeing entries and
/// add lambda times the result to the base.
MergedModel merge_ties(const std::vector<TaskVectorSet>& deltas, const Checkpoint& base,
                       double lambda, double keep);

/// Elect / mask / rescale. The returned weights hold W_B + tau_uni; per-task
/// models come from emr_reconstruct.
MergedModel merge_emr(const std::vector<TaskVectorSet>& deltas, const Checkpoint& base);

/// W_B + lambda_i * (M_i o tau_uni) for one task.
Checkpoint emr_reconstruct(const MergedModel& merged, const Checkpoint& base,
                           const std::string& task_id);

/// Number of entries the Ties trim keeps out of n.
std::size_t ties_keep_count(double keep, std::size_t n) noexcept;

/// "<layer>.uni", "<layer>.mask.<task>" (F32 {0,1}) and "<task>.lambda"
/// (one F64 entry per tensor, ordered like the "vecforge.emr_tensors" list).
Container emr_to_container(const EmrArtifacts& emr);
EmrArtifacts emr_from_container(const Container& c);

}  // namespace vecforge
