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

#include "vecforge/pipeline.hpp"

#include <fstream>

#include "vecforge/errors.hpp"
#include "vecforge/hash.hpp"
#include "vecforge/purify.hpp"

namespace vecforge {
namespace {

std::filesystem::path resolve(const std::filesystem::path& base_dir, const std::string& p) {
  std::filesystem::path path(p);
  if (path.is_relative() && !base_dir.empty()) return base_dir / path;
  return path;
}

}  // namespace

std::uint64_t dare_task_seed(std::uint64_t recipe_seed, const std::string& task_id) noexcept {
  return splitmix64(recipe_seed ^ fnv1a(task_id));
}

PipelineOutput run_recipe(const MergeRecipe& recipe, const std::filesystem::path& base_dir) {
  if (auto v = recipe.violations(); !v.empty()) {
    fail(ErrorCode::kInvalidRecipe, "recipe is invalid: " + v.front());
  }
  const Checkpoint base = read_checkpoint(resolve(base_dir, recipe.base));
  std::vector<Checkpoint> models;
  for (const auto& in : recipe.inputs) {
    models.push_back(read_checkpoint(resolve(base_dir, in.checkpoint)));
    require_compatible(base, models.back());
  }

  PipelineOutput out;
  std::vector<TaskVectorSet> deltas;
  if (recipe.purification) {
    const auto& p = *recipe.purification;
    std::vector<CovarianceSet> covs;
    for (const auto& in : recipe.inputs) {
      covs.push_back(read_covariance_set(resolve(base_dir, in.covariance)));
    }
    // Rank allocation always reads the activated spectra; a covariance is
    // required even for decomposers that do not use it during purification.
    auto profiles = build_profiles(models, covs);
    for (std::size_t i = 0; i < profiles.size(); ++i) profiles[i].model_id = recipe.inputs[i].task_id;
    out.allocation = allocate(profiles, p.rho, p.gamma, p.exempt);
    for (std::size_t i = 0; i < models.size(); ++i) {
      auto tv = pave_purify(models[i], base, covs[i],
                            out.allocation->ranks_for(recipe.inputs[i].task_id), p.decomposer);
      tv.task_id = recipe.inputs[i].task_id;
      deltas.push_back(std::move(tv));
    }
  } else {
    for (std::size_t i = 0; i < models.size(); ++i) {
      auto tv = plain_task_vector(models[i], base);
      tv.task_id = recipe.inputs[i].task_id;
      if (recipe.dare_p) {
        tv = dare_task_vector(tv, *recipe.dare_p, dare_task_seed(recipe.seed, tv.task_id));
      }
      deltas.push_back(std::move(tv));
    }
  }

  switch (recipe.method) {
    case MergeMethod::kAverage:
      out.merged = recipe.purification || recipe.dare_p ? merge_average(deltas, base)
                                                        : merge_average_weights(models, base);
      break;
    case MergeMethod::kTaskArithmetic:
      out.merged = merge_task_arithmetic(deltas, base, recipe.lambda);
      break;
    case MergeMethod::kTies:
      out.merged = merge_ties(deltas, base, recipe.lambda, recipe.ties_trim_keep);
      break;
    case MergeMethod::kEmr: out.merged = merge_emr(deltas, base); break;
  }
  out.merged.recipe = recipe;
  return out;
}

std::filesystem::path resolved_recipe_path(const std::filesystem::path& out) {
  return std::filesystem::path(out.string() + ".recipe.json");
}

std::filesystem::path emr_artifacts_path(const std::filesystem::path& out) {
  return std::filesystem::path(out.string() + ".emr.safetensors");
}

void write_merge_outputs(const PipelineOutput& result, const MergeRecipe& resolved,
                         const std::filesystem::path& out) {
  write_checkpoint(result.merged.weights, out);
  if (result.merged.emr) {
    write_container_file(emr_to_container(*result.merged.emr), emr_artifacts_path(out));
  }
  std::ofstream f(resolved_recipe_path(out), std::ios::binary | std::ios::trunc);
  if (!f) fail(ErrorCode::kIoFailure, "cannot write " + resolved_recipe_path(out).string());
  f << recipe_to_json(resolved);
  if (!f) fail(ErrorCode::kIoFailure, "write failed for " + resolved_recipe_path(out).string());
}

}  // namespace vecforge
