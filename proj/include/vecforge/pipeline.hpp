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

#include <filesystem>
#include <string>
#include <vector>

#include "vecforge/merge.hpp"
#include "vecforge/rank_alloc.hpp"

namespace vecforge {

struct PipelineOutput {
  MergedModel merged;
  // Present when the recipe asked for purification.
  std::optional<RankAllocation> allocation;
};

/// Per-task DARE seed derived from the recipe seed, so tasks draw
/// independent masks while the recipe stays a single integer.
std::uint64_t dare_task_seed(std::uint64_t recipe_seed, const std::string& task_id) noexcept;

/// Loads every input named by the recipe (relative paths resolve against
/// `base_dir`), builds the task vectors (plain, DARE or purified) and merges.
PipelineOutput run_recipe(const MergeRecipe& recipe, const std::filesystem::path& base_dir = {});

/// Companion paths of a merge output.
std::filesystem::path resolved_recipe_path(const std::filesystem::path& out);
std::filesystem::path emr_artifacts_path(const std::filesystem::path& out);

/// Writes the merged checkpoint, the resolved recipe and, for EMR, the
/// artifact container.
void write_merge_outputs(const PipelineOutput& result, const MergeRecipe& resolved,
                         const std::filesystem::path& out);

}  // namespace vecforge
