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

/* C interface to the vecforge model-merging toolkit.
 *
 * Every fallible call returns a vf_status. On failure the message of the
 * most recent error on the calling thread is available from
 * vf_last_error(). Objects are opaque handles released with their matching
 * *_destroy function; strings returned through char** are released with
 * vf_string_free. */
#ifndef VECFORGE_VECFORGE_H_
#define VECFORGE_VECFORGE_H_

#include <stddef.h>
#include <stdint.h>

#if defined(_WIN32)
#define VF_API __declspec(dllexport)
#else
#define VF_API __attribute__((visibility("default")))
#endif

#ifdef __cplusplus
extern "C" {
#endif

typedef enum vf_status {
  VF_OK = 0,
  VF_ERR_MALFORMED_HEADER = 1,
  VF_ERR_SHAPE_MISMATCH = 2,
  VF_ERR_DUPLICATE_NAME = 3,
  VF_ERR_IO_FAILURE = 4,
  VF_ERR_INVARIANT_VIOLATION = 5,
  VF_ERR_NON_FINITE = 6,
  VF_ERR_NO_CONVERGENCE = 7,
  VF_ERR_RANK_OUT_OF_RANGE = 8,
  VF_ERR_NOT_POSITIVE_DEFINITE = 9,
  VF_ERR_DIMENSION_MISMATCH = 10,
  VF_ERR_EMPTY_STREAM = 11,
  VF_ERR_DEGENERATE = 12,
  VF_ERR_INCOMPATIBLE_TOPOLOGY = 13,
  VF_ERR_INVALID_RATE = 14,
  VF_ERR_MISSING_COVARIANCE = 15,
  VF_ERR_INVALID_BUDGET = 16,
  VF_ERR_ALL_EXEMPT = 17,
  VF_ERR_INVALID_RECIPE = 18,
  VF_ERR_INVALID_ARGUMENT = 19,
  VF_ERR_INTERNAL = 99
} vf_status;

typedef struct vf_checkpoint vf_checkpoint;
typedef struct vf_covariance vf_covariance;
typedef struct vf_allocation vf_allocation;
typedef struct vf_recipe vf_recipe;
typedef struct vf_suite vf_suite;

/* Errors ------------------------------------------------------------------ */

VF_API const char* vf_last_error(void);
VF_API const char* vf_status_name(vf_status status);
/* Process exit code for a status: 0 ok, 2 validation, 3 numerical, 4 I/O. */
VF_API int vf_status_exit_code(vf_status status);
VF_API void vf_string_free(char* s);
VF_API const char* vf_version(void);

/* Worker threads for layer-level loops; 0 selects the hardware count. */
VF_API void vf_set_threads(unsigned n);
VF_API unsigned vf_get_threads(void);

/* Checkpoints ------------------------------------------------------------- */

VF_API vf_status vf_checkpoint_read(const char* path, vf_checkpoint** out);
VF_API vf_status vf_checkpoint_write(const vf_checkpoint* ckpt, const char* path);
VF_API void vf_checkpoint_destroy(vf_checkpoint* ckpt);
VF_API size_t vf_checkpoint_layer_count(const vf_checkpoint* ckpt);
VF_API const char* vf_checkpoint_layer_name(const vf_checkpoint* ckpt, size_t index);
/* Compatibility report, one "<kind> <layer>" line per issue; empty when the
 * linear layers agree. */
VF_API vf_status vf_checkpoint_compat(const vf_checkpoint* a, const vf_checkpoint* b,
                                      char** report);

/* Covariances ------------------------------------------------------------- */

/* Regularized covariances from an activation container ("<layer>.acts.<i>").
 * max_samples < 0 takes every column; 0 is an empty stream. Every linear
 * layer of `model` must have a stream of matching width. */
VF_API vf_status vf_covariance_from_activations(const vf_checkpoint* model, const char* acts_path,
                                                const char* task_id, int64_t max_samples,
                                                vf_covariance** out);
/* Regularized covariances of `model` on n seeded inputs of one suite task. */
VF_API vf_status vf_covariance_from_suite(const vf_checkpoint* model, const vf_suite* suite,
                                          const char* task_id, uint64_t n_samples, uint64_t seed,
                                          vf_covariance** out);
VF_API vf_status vf_covariance_read(const char* path, vf_covariance** out);
VF_API vf_status vf_covariance_write(const vf_covariance* covs, const char* path);
VF_API void vf_covariance_destroy(vf_covariance* covs);
VF_API size_t vf_covariance_layer_count(const vf_covariance* covs);
VF_API vf_status vf_covariance_layer_info(const vf_covariance* covs, size_t index,
                                          const char** name, uint64_t* sample_count,
                                          double* diag_boost);

/* Rank allocation --------------------------------------------------------- */

VF_API vf_status vf_allocation_compute(const vf_checkpoint* const* models,
                                       const vf_covariance* const* covs, size_t count, double rho,
                                       double gamma, const char* const* exempt, size_t exempt_count,
                                       vf_allocation** out);
VF_API vf_status vf_allocation_read(const char* path, vf_allocation** out);
VF_API vf_status vf_allocation_write(const vf_allocation* alloc, const char* path);
VF_API void vf_allocation_destroy(vf_allocation* alloc);
VF_API size_t vf_allocation_model_count(const vf_allocation* alloc);
/* Model id and sum(r) / sum(R) across its layers. */
VF_API vf_status vf_allocation_model_ratio(const vf_allocation* alloc, size_t index,
                                           const char** model_id, double* ratio);
VF_API vf_status vf_allocation_rank(const vf_allocation* alloc, const char* model_id,
                                    const char* layer, size_t* rank);

/* Recipes and merging ----------------------------------------------------- */

VF_API vf_status vf_recipe_parse(const char* json, vf_recipe** out);
VF_API vf_status vf_recipe_read(const char* path, vf_recipe** out);
VF_API void vf_recipe_destroy(vf_recipe* recipe);
/* The recipe with every default materialized. */
VF_API vf_status vf_recipe_resolved_json(const vf_recipe* recipe, char** json);
/* Runs the recipe and writes <out>, <out>.recipe.json and, for EMR,
 * <out>.emr.safetensors. Relative paths resolve against base_dir (may be
 * NULL or empty). */
VF_API vf_status vf_merge_run(const vf_recipe* recipe, const char* base_dir, const char* out_path);
/* Per-task model W_B + lambda_i (M_i o tau_uni) from EMR artifacts. */
VF_API vf_status vf_emr_reconstruct(const char* base_path, const char* artifacts_path,
                                    const char* task_id, vf_checkpoint** out);

/* Synthetic workbench ----------------------------------------------------- */

/* Builds a suite from its JSON description (see the README). */
VF_API vf_status vf_suite_synth(const char* spec_json, vf_suite** out);
VF_API vf_status vf_suite_write(const vf_suite* suite, const char* dir);
VF_API vf_status vf_suite_read(const char* dir, vf_suite** out);
VF_API void vf_suite_destroy(vf_suite* suite);
VF_API size_t vf_suite_task_count(const vf_suite* suite);
VF_API const char* vf_suite_task_id(const vf_suite* suite, size_t index);
/* Argmax agreement of `model` with the task's reference on n seeded inputs. */
VF_API vf_status vf_eval(const vf_checkpoint* model, const vf_suite* suite, const char* task_id,
                         uint64_t n_eval, uint64_t seed, double* score);
/* Per-decomposer scores at each pruned rank as CSV
 * ("decomposer,rank,task,score,seed"). */
VF_API vf_status vf_rank_sweep(const vf_suite* suite, const size_t* pruned_ranks,
                               size_t rank_count, uint64_t cov_samples, uint64_t eval_samples,
                               uint64_t seed, char** csv);

#ifdef __cplusplus
}
#endif

#endif /* VECFORGE_VECFORGE_H_ */
