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

#include "vecforge/vecforge.h"

#include <cstring>
#include <fstream>
#include <new>
#include <sstream>
#include <string>
#include <vector>

#include "vecforge/covariance.hpp"
#include "vecforge/errors.hpp"
#include "vecforge/merge.hpp"
#include "vecforge/parallel.hpp"
#include "vecforge/pipeline.hpp"
#include "vecforge/rank_alloc.hpp"
#include "vecforge/tensor_store.hpp"
#include "vecforge/workbench.hpp"

struct vf_checkpoint {
  vecforge::Checkpoint value;
};
struct vf_covariance {
  vecforge::CovarianceSet value;
};
struct vf_allocation {
  vecforge::RankAllocation value;
  std::vector<std::pair<std::string, double>> ratios;
};
struct vf_recipe {
  vecforge::MergeRecipe value;
};
struct vf_suite {
  vecforge::workbench::SyntheticSuite value;
};

namespace {

using vecforge::ErrorCode;

thread_local std::string g_last_error;

vf_status to_status(ErrorCode code) noexcept { return static_cast<vf_status>(static_cast<int>(code) + 1); }

// Runs `body`, translating exceptions into status codes and the thread-local
// error message.
template <typename Body>
vf_status guarded(Body&& body) noexcept {
  try {
    body();
    g_last_error.clear();
    return VF_OK;
  } catch (const vecforge::Error& e) {
    g_last_error = e.what();
    return to_status(e.code());
  } catch (const std::bad_alloc&) {
    g_last_error = "out of memory";
    return VF_ERR_INTERNAL;
  } catch (const std::exception& e) {
    g_last_error = e.what();
    return VF_ERR_INTERNAL;
  } catch (...) {
    g_last_error = "unknown error";
    return VF_ERR_INTERNAL;
  }
}

void require(bool ok, const char* what) {
  if (!ok) vecforge::fail(ErrorCode::kInvalidArgument, what);
}

char* dup_string(const std::string& s) {
  char* out = new char[s.size() + 1];
  std::memcpy(out, s.c_str(), s.size() + 1);
  return out;
}

std::string read_text(const char* path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) vecforge::fail(ErrorCode::kIoFailure, std::string("cannot open ") + path);
  std::ostringstream ss;
  ss << f.rdbuf();
  return ss.str();
}

// Every linear layer of the model needs a stream whose width matches.
void check_streams(const vecforge::Checkpoint& model,
                   const std::vector<vecforge::ActivationStream>& streams) {
  for (const auto& layer : model.linear_layers) {
    const auto& t = model.tensor(layer);
    bool found = false;
    for (const auto& s : streams) {
      if (s.layer_name != layer) continue;
      found = true;
      for (const auto& b : s.batches) {
        if (static_cast<std::int64_t>(b.rows()) != t.shape[1]) {
          vecforge::fail(ErrorCode::kDimensionMismatch,
                         "activations of '" + layer + "' have width " + std::to_string(b.rows()) +
                             ", layer expects " + std::to_string(t.shape[1]));
        }
      }
    }
    if (!found) {
      vecforge::fail(ErrorCode::kMissingCovariance, "no activations for layer '" + layer + "'");
    }
  }
}

}  // namespace

extern "C" {

const char* vf_last_error(void) { return g_last_error.c_str(); }

const char* vf_status_name(vf_status status) {
  if (status == VF_OK) return "Ok";
  if (status == VF_ERR_INTERNAL) return "Internal";
  const int idx = static_cast<int>(status) - 1;
  if (idx < 0 || idx > static_cast<int>(ErrorCode::kInvalidArgument)) return "Unknown";
  return vecforge::error_name(static_cast<ErrorCode>(idx)).data();
}

int vf_status_exit_code(vf_status status) {
  if (status == VF_OK) return 0;
  if (status == VF_ERR_INTERNAL) return 3;
  const int idx = static_cast<int>(status) - 1;
  if (idx < 0 || idx > static_cast<int>(ErrorCode::kInvalidArgument)) return 2;
  switch (vecforge::error_class(static_cast<ErrorCode>(idx))) {
    case vecforge::ErrorClass::kValidation: return 2;
    case vecforge::ErrorClass::kNumerical: return 3;
    case vecforge::ErrorClass::kIo: return 4;
  }
  return 2;
}

void vf_string_free(char* s) { delete[] s; }

const char* vf_version(void) { return "0.1.0"; }

void vf_set_threads(unsigned n) { vecforge::set_thread_count(n); }
unsigned vf_get_threads(void) { return vecforge::thread_count(); }

// --- checkpoints -------------------------------------------------------------

vf_status vf_checkpoint_read(const char* path, vf_checkpoint** out) {
  return guarded([&] {
    require(path != nullptr && out != nullptr, "null argument");
    auto h = std::make_unique<vf_checkpoint>();
    h->value = vecforge::read_checkpoint(path);
    *out = h.release();
  });
}

vf_status vf_checkpoint_write(const vf_checkpoint* ckpt, const char* path) {
  return guarded([&] {
    require(ckpt != nullptr && path != nullptr, "null argument");
    vecforge::write_checkpoint(ckpt->value, path);
  });
}

void vf_checkpoint_destroy(vf_checkpoint* ckpt) { delete ckpt; }

size_t vf_checkpoint_layer_count(const vf_checkpoint* ckpt) {
  return ckpt == nullptr ? 0 : ckpt->value.linear_layers.size();
}

const char* vf_checkpoint_layer_name(const vf_checkpoint* ckpt, size_t index) {
  if (ckpt == nullptr || index >= ckpt->value.linear_layers.size()) return nullptr;
  return ckpt->value.linear_layers[index].c_str();
}

vf_status vf_checkpoint_compat(const vf_checkpoint* a, const vf_checkpoint* b, char** report) {
  return guarded([&] {
    require(a != nullptr && b != nullptr && report != nullptr, "null argument");
    std::string text;
    for (const auto& issue : vecforge::check_compat(a->value, b->value)) {
      text += std::string(vecforge::compat_issue_name(issue.kind)) + " " + issue.layer + "\n";
    }
    *report = dup_string(text);
  });
}

// --- covariances -------------------------------------------------------------

vf_status vf_covariance_from_activations(const vf_checkpoint* model, const char* acts_path,
                                         const char* task_id, int64_t max_samples,
                                         vf_covariance** out) {
  return guarded([&] {
    require(model != nullptr && acts_path != nullptr && out != nullptr, "null argument");
    if (max_samples == 0) vecforge::fail(ErrorCode::kEmptyStream, "sample count is zero");
    const auto container = vecforge::read_container_file(acts_path);
    const auto streams = vecforge::streams_from_container(
        container, max_samples < 0 ? 0 : static_cast<std::uint64_t>(max_samples));
    check_streams(model->value, streams);
    std::string id = task_id != nullptr ? task_id : "";
    if (id.empty()) id = model->value.model_id();
    auto h = std::make_unique<vf_covariance>();
    h->value = vecforge::build_covariance_set(streams, id);
    *out = h.release();
  });
}

vf_status vf_covariance_from_suite(const vf_checkpoint* model, const vf_suite* suite,
                                   const char* task_id, uint64_t n_samples, uint64_t seed,
                                   vf_covariance** out) {
  return guarded([&] {
    require(model != nullptr && suite != nullptr && task_id != nullptr && out != nullptr,
            "null argument");
    const auto& s = suite->value;
    const auto& spec = s.specs[vecforge::workbench::task_index(s, task_id)];
    if (n_samples == 0) vecforge::fail(ErrorCode::kEmptyStream, "sample count is zero");
    auto h = std::make_unique<vf_covariance>();
    h->value = vecforge::build_covariance_set(
        vecforge::workbench::run_activations(model->value, spec, n_samples, seed), task_id);
    *out = h.release();
  });
}

vf_status vf_covariance_read(const char* path, vf_covariance** out) {
  return guarded([&] {
    require(path != nullptr && out != nullptr, "null argument");
    auto h = std::make_unique<vf_covariance>();
    h->value = vecforge::read_covariance_set(path);
    *out = h.release();
  });
}

vf_status vf_covariance_write(const vf_covariance* covs, const char* path) {
  return guarded([&] {
    require(covs != nullptr && path != nullptr, "null argument");
    vecforge::write_covariance_set(covs->value, path);
  });
}

void vf_covariance_destroy(vf_covariance* covs) { delete covs; }

size_t vf_covariance_layer_count(const vf_covariance* covs) {
  return covs == nullptr ? 0 : covs->value.entries.size();
}

vf_status vf_covariance_layer_info(const vf_covariance* covs, size_t index, const char** name,
                                   uint64_t* sample_count, double* diag_boost) {
  return guarded([&] {
    require(covs != nullptr, "null argument");
    if (index >= covs->value.entries.size()) {
      vecforge::fail(ErrorCode::kInvalidArgument, "layer index out of range");
    }
    auto it = std::next(covs->value.entries.begin(), static_cast<std::ptrdiff_t>(index));
    if (name != nullptr) *name = it->first.c_str();
    if (sample_count != nullptr) *sample_count = it->second.sample_count;
    if (diag_boost != nullptr) *diag_boost = it->second.diag_boost;
  });
}

// --- allocation --------------------------------------------------------------

namespace {
void fill_ratios(vf_allocation& a) {
  a.ratios.clear();
  const auto ratios = vecforge::per_model_ratios(a.value);
  for (const auto& id : a.value.model_order) a.ratios.emplace_back(id, ratios.at(id));
}
}  // namespace

vf_status vf_allocation_compute(const vf_checkpoint* const* models,
                                const vf_covariance* const* covs, size_t count, double rho,
                                double gamma, const char* const* exempt, size_t exempt_count,
                                vf_allocation** out) {
  return guarded([&] {
    require(models != nullptr && covs != nullptr && out != nullptr, "null argument");
    require(count > 0, "at least one model is required");
    std::vector<vecforge::Checkpoint> ckpts;
    std::vector<vecforge::CovarianceSet> sets;
    for (size_t i = 0; i < count; ++i) {
      require(models[i] != nullptr && covs[i] != nullptr, "null model or covariance");
      ckpts.push_back(models[i]->value);
      sets.push_back(covs[i]->value);
    }
    std::set<std::string> ex;
    for (size_t i = 0; i < exempt_count; ++i) ex.insert(exempt[i]);
    auto profiles = vecforge::build_profiles(ckpts, sets);
    auto h = std::make_unique<vf_allocation>();
    h->value = vecforge::allocate(profiles, rho, gamma, ex);
    fill_ratios(*h);
    *out = h.release();
  });
}

vf_status vf_allocation_read(const char* path, vf_allocation** out) {
  return guarded([&] {
    require(path != nullptr && out != nullptr, "null argument");
    auto h = std::make_unique<vf_allocation>();
    h->value = vecforge::read_allocation(path);
    fill_ratios(*h);
    *out = h.release();
  });
}

vf_status vf_allocation_write(const vf_allocation* alloc, const char* path) {
  return guarded([&] {
    require(alloc != nullptr && path != nullptr, "null argument");
    vecforge::write_allocation(alloc->value, path);
  });
}

void vf_allocation_destroy(vf_allocation* alloc) { delete alloc; }

size_t vf_allocation_model_count(const vf_allocation* alloc) {
  return alloc == nullptr ? 0 : alloc->ratios.size();
}

vf_status vf_allocation_model_ratio(const vf_allocation* alloc, size_t index,
                                    const char** model_id, double* ratio) {
  return guarded([&] {
    require(alloc != nullptr, "null argument");
    if (index >= alloc->ratios.size()) {
      vecforge::fail(ErrorCode::kInvalidArgument, "model index out of range");
    }
    if (model_id != nullptr) *model_id = alloc->ratios[index].first.c_str();
    if (ratio != nullptr) *ratio = alloc->ratios[index].second;
  });
}

vf_status vf_allocation_rank(const vf_allocation* alloc, const char* model_id, const char* layer,
                             size_t* rank) {
  return guarded([&] {
    require(alloc != nullptr && model_id != nullptr && layer != nullptr && rank != nullptr,
            "null argument");
    const auto& ranks = alloc->value.ranks_for(model_id);
    auto it = ranks.find(layer);
    if (it == ranks.end()) {
      vecforge::fail(ErrorCode::kInvalidArgument, std::string("no layer '") + layer + "'");
    }
    *rank = it->second;
  });
}

// --- recipes -----------------------------------------------------------------

vf_status vf_recipe_parse(const char* json, vf_recipe** out) {
  return guarded([&] {
    require(json != nullptr && out != nullptr, "null argument");
    auto h = std::make_unique<vf_recipe>();
    h->value = vecforge::parse_recipe(json);
    *out = h.release();
  });
}

vf_status vf_recipe_read(const char* path, vf_recipe** out) {
  return guarded([&] {
    require(path != nullptr && out != nullptr, "null argument");
    auto h = std::make_unique<vf_recipe>();
    h->value = vecforge::parse_recipe(read_text(path));
    *out = h.release();
  });
}

void vf_recipe_destroy(vf_recipe* recipe) { delete recipe; }

vf_status vf_recipe_resolved_json(const vf_recipe* recipe, char** json) {
  return guarded([&] {
    require(recipe != nullptr && json != nullptr, "null argument");
    *json = dup_string(vecforge::recipe_to_json(recipe->value));
  });
}

vf_status vf_merge_run(const vf_recipe* recipe, const char* base_dir, const char* out_path) {
  return guarded([&] {
    require(recipe != nullptr && out_path != nullptr, "null argument");
    const std::filesystem::path dir = base_dir != nullptr ? base_dir : "";
    const auto result = vecforge::run_recipe(recipe->value, dir);
    vecforge::write_merge_outputs(result, recipe->value, out_path);
  });
}

vf_status vf_emr_reconstruct(const char* base_path, const char* artifacts_path,
                             const char* task_id, vf_checkpoint** out) {
  return guarded([&] {
    require(base_path != nullptr && artifacts_path != nullptr && task_id != nullptr &&
                out != nullptr,
            "null argument");
    const auto base = vecforge::read_checkpoint(base_path);
    vecforge::MergedModel merged;
    merged.emr = vecforge::emr_from_container(vecforge::read_container_file(artifacts_path));
    auto h = std::make_unique<vf_checkpoint>();
    h->value = vecforge::emr_reconstruct(merged, base, task_id);
    *out = h.release();
  });
}

// --- workbench ---------------------------------------------------------------

vf_status vf_suite_synth(const char* spec_json, vf_suite** out) {
  return guarded([&] {
    require(spec_json != nullptr && out != nullptr, "null argument");
    auto h = std::make_unique<vf_suite>();
    h->value = vecforge::workbench::synth_suite_from_json(spec_json);
    *out = h.release();
  });
}

vf_status vf_suite_write(const vf_suite* suite, const char* dir) {
  return guarded([&] {
    require(suite != nullptr && dir != nullptr, "null argument");
    vecforge::workbench::write_suite(suite->value, dir);
  });
}

vf_status vf_suite_read(const char* dir, vf_suite** out) {
  return guarded([&] {
    require(dir != nullptr && out != nullptr, "null argument");
    auto h = std::make_unique<vf_suite>();
    h->value = vecforge::workbench::read_suite(dir);
    *out = h.release();
  });
}

void vf_suite_destroy(vf_suite* suite) { delete suite; }

size_t vf_suite_task_count(const vf_suite* suite) {
  return suite == nullptr ? 0 : suite->value.specs.size();
}

const char* vf_suite_task_id(const vf_suite* suite, size_t index) {
  if (suite == nullptr || index >= suite->value.specs.size()) return nullptr;
  return suite->value.specs[index].task_id.c_str();
}

vf_status vf_eval(const vf_checkpoint* model, const vf_suite* suite, const char* task_id,
                  uint64_t n_eval, uint64_t seed, double* score) {
  return guarded([&] {
    require(model != nullptr && suite != nullptr && task_id != nullptr && score != nullptr,
            "null argument");
    const auto& s = suite->value;
    const std::size_t t = vecforge::workbench::task_index(s, task_id);
    *score = vecforge::workbench::eval_model(model->value, s.references[t], s.specs[t], n_eval, seed);
  });
}

vf_status vf_rank_sweep(const vf_suite* suite, const size_t* pruned_ranks,
                        size_t rank_count, uint64_t cov_samples, uint64_t eval_samples,
                        uint64_t seed, char** csv) {
  return guarded([&] {
    require(suite != nullptr && csv != nullptr && (pruned_ranks != nullptr || rank_count == 0),
            "null argument");
    vecforge::workbench::RankSweepOptions options;
    options.cov_samples = cov_samples;
    options.eval_samples = eval_samples;
    options.seed = seed;
    if (cov_samples == 0) vecforge::fail(ErrorCode::kEmptyStream, "sample count is zero");
    const std::vector<std::size_t> ranks(pruned_ranks, pruned_ranks + rank_count);
    *csv = dup_string(vecforge::workbench::rank_sweep_csv(
        vecforge::workbench::rank_sweep(suite->value, ranks, options)));
  });
}

}  // extern "C"
