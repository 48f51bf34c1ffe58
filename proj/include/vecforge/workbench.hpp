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
#include <filesystem>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "vecforge/covariance.hpp"
#include "vecforge/merge.hpp"
#include "vecforge/purify.hpp"
#include "vecforge/rank_alloc.hpp"
#include "vecforge/tensor_store.hpp"

namespace vecforge::workbench {

inline constexpr const char* kHiddenLayer = "fc1.weight";
inline constexpr const char* kOutputLayer = "fc2.weight";

// Inputs are U diag(std) z + floor_std * e, with U an orthonormal basis of the
// task subspace whose first `shared_dim` columns come from a basis common to
// every task drawing on the same `shared_seed`. Per-direction std decays
// geometrically from 1 down to 1 / anisotropy.
struct ActivationDistribution {
  std::size_t subspace_dim = 8;
  double anisotropy = 1.0;
  std::size_t shared_dim = 0;
  std::uint64_t shared_seed = 0;
  double floor_std = 1e-3;
};

struct SyntheticTaskSpec {
  std::string task_id;
  std::size_t input_dim = 32;
  std::size_t hidden_dim = 48;
  std::size_t output_dim = 8;
  std::size_t planted_rank = 2;
  std::uint64_t seed = 0;
  double noise_scale = 0.02;
  double planted_scale = 1.0;
  ActivationDistribution activation;

  void validate() const;
};

struct SyntheticSuite {
  std::vector<SyntheticTaskSpec> specs;
  std::uint64_t base_seed = 0;
  Checkpoint base;
  std::vector<Checkpoint> finetuned;
  // Noise-free base + planted models; these label the evaluation inputs.
  std::vector<Checkpoint> references;
  // Per task: layer -> planted delta.
  std::vector<std::map<std::string, Matrix>> planted;
};

/// Base with N(0, 1/fan_in) entries; each task adds a planted rank-k
/// component of unit spectral norm times planted_scale plus N(0, noise^2).
SyntheticSuite synth_suite(const std::vector<SyntheticTaskSpec>& specs, std::uint64_t base_seed);

/// The default K-task suite: input 32, hidden 48, output 8, planted rank 2.
/// Tasks share part of their activation subspace, as layers of one network do.
std::vector<SyntheticTaskSpec> default_specs(std::uint64_t seed, double noise_scale,
                                             std::size_t tasks = 4);

/// Suite description as JSON: {"base_seed": s, "tasks": [spec, ...]}. The
/// parser also takes the shorthand {"seed": s, "noise_scale": x, "tasks": K}
/// for the default suite.
std::string suite_spec_json(const std::vector<SyntheticTaskSpec>& specs, std::uint64_t base_seed);
SyntheticSuite synth_suite_from_json(const std::string& text);

/// Directory layout: suite.json, base.safetensors, <task>.safetensors
/// (fine-tuned) and <task>.ref.safetensors (noise-free reference).
void write_suite(const SyntheticSuite& suite, const std::filesystem::path& dir);
SyntheticSuite read_suite(const std::filesystem::path& dir);

/// Index of a task id within the suite; throws kInvalidArgument.
std::size_t task_index(const SyntheticSuite& suite, const std::string& task_id);

/// input_dim x n matrix of seeded samples from the task's input distribution.
Matrix sample_inputs(const SyntheticTaskSpec& spec, std::size_t n, std::uint64_t seed);

/// Forward pass: ReLU(W1 x) for every column.
Matrix hidden_activations(const Checkpoint& model, const Matrix& inputs);
Matrix forward(const Checkpoint& model, const Matrix& inputs);

/// Layer-input streams of the toy model on n seeded inputs.
std::vector<ActivationStream> run_activations(const Checkpoint& model,
                                              const SyntheticTaskSpec& spec,
                                              std::size_t n_samples, std::uint64_t seed);

/// Argmax agreement between `weights` and `reference` on n_eval seeded inputs.
double eval_model(const Checkpoint& weights, const Checkpoint& reference,
                  const SyntheticTaskSpec& spec, std::size_t n_eval, std::uint64_t seed);

/// Pre-drawn evaluation inputs and reference labels for every task of a suite,
/// so many candidate models can be scored without re-running the references.
struct SuiteEvalSet {
  std::vector<Matrix> inputs;
  std::vector<std::vector<std::size_t>> labels;
};

SuiteEvalSet make_eval_set(const SyntheticSuite& suite, std::size_t n_eval, std::uint64_t seed);

/// Per-task agreement of one model with the stored labels, averaged.
double mean_score(const Checkpoint& model, const SuiteEvalSet& eval);

/// Covariance sets of every fine-tuned model on its own task distribution.
std::vector<CovarianceSet> suite_covariances(const SyntheticSuite& suite, std::size_t n_samples,
                                             std::uint64_t seed);

/// Cosine similarity of two equally-shaped matrices (0 if either is zero).
double cosine_similarity(const Matrix& a, const Matrix& b);

// ---------------------------------------------------------------------------
// Experiments

struct RankSweepRow {
  std::string decomposer;
  std::size_t rank = 0;  // pruned rank, relative to the widest layer
  std::string task;
  double score = 0.0;
  std::uint64_t seed = 0;
};

struct RankSweepOptions {
  std::vector<DecomposerVariant> variants = {
      DecomposerVariant::kCoSvd,       DecomposerVariant::kScaledSvd,
      DecomposerVariant::kWhitenedSvd, DecomposerVariant::kPlainSvd,
      DecomposerVariant::kCoSvdRandom, DecomposerVariant::kCoSvdCrossTask};
  std::size_t cov_samples = 1024;
  std::size_t eval_samples = 2000;
  std::uint64_t seed = 0;
};

/// Preserved rank of a layer with full rank `full` when `pruned` components
/// are removed from the widest layer (full rank `widest`).
std::size_t preserved_rank(std::size_t full, std::size_t widest, std::size_t pruned);

/// Purifies each fine-tuned model alone at every pruned rank and scores it on
/// its own task. co_svd_crosstask borrows the next task's covariance.
std::vector<RankSweepRow> rank_sweep(const SyntheticSuite& suite,
                                     const std::vector<std::size_t>& pruned_ranks,
                                     const RankSweepOptions& options = {});

std::string rank_sweep_csv(const std::vector<RankSweepRow>& rows);

/// Mean score of one decomposer at one pruned rank.
double rank_sweep_mean(const std::vector<RankSweepRow>& rows, const std::string& decomposer,
                       std::size_t rank);

struct MergeTrialOptions {
  std::vector<double> lambdas = {0.1, 0.3, 0.5, 0.7, 0.9};
  std::vector<double> rhos = default_ratio_grid();
  std::size_t cov_samples = 256;
  std::size_t eval_samples = 2000;
  std::uint64_t validation_seed = 1;
  std::uint64_t test_seed = 2;
  DecomposerKind decomposer{};
};

struct MergeTrialResult {
  double ta_score = 0.0;    // plain task arithmetic, test split
  double pave_score = 0.0;  // task arithmetic over purified vectors, test split
  double ta_lambda = 0.0;
  double pave_lambda = 0.0;
  double rho = 1.0;
  std::set<std::string> exempt;
};

/// Mean task score of W_B + lambda * sum(deltas).
double merged_mean_score(const SyntheticSuite& suite, const std::vector<TaskVectorSet>& deltas,
                         double lambda, const SuiteEvalSet& eval);

/// Both pipelines pick their hyper-parameters on the validation inputs and
/// report on the test inputs. PAVE candidates are the rho grid crossed with
/// progressively exempted tasks (ordered by their plain merging gap).
MergeTrialResult merge_trial(const SyntheticSuite& suite, std::uint64_t cov_seed,
                             const MergeTrialOptions& options = {});

struct SampleSizeOptions {
  std::vector<std::size_t> sample_counts = {16, 64, 256, 1024};
  std::size_t seeds = 12;
  double rho = 7.0 / 8.0;
  double lambda = 0.3;
  std::size_t eval_samples = 2000;
  std::uint64_t eval_seed = 7;
};

/// Cross-seed variance of the merged mean score for each covariance sample
/// count: the suite is fixed, the activation sample seed varies.
std::vector<double> sample_size_variances(const SyntheticSuite& suite,
                                          const SampleSizeOptions& options = {});

}  // namespace vecforge::workbench
