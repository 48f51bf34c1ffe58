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
#include <filesystem>
#include <map>
#include <set>
#include <string>
#include <utility>
#include <vector>

#include "vecforge/purify.hpp"
#include "vecforge/tensor_store.hpp"

namespace vecforge {

struct LayerSpectrum {
  std::string layer;
  std::vector<double> sigma;       // non-increasing singular values of W C
  std::vector<double> normalized;  // sigma / sigma_max, zeros for an all-zero spectrum

  std::size_t full_rank() const noexcept { return sigma.size(); }
};

struct SpectralProfile {
  std::string model_id;
  std::vector<LayerSpectrum> layers;  // in linear_layers order

  static LayerSpectrum make_layer(std::string layer, std::vector<double> sigma);
};

/// Full spectra of W_i C_i for every linear layer of every model.
std::vector<SpectralProfile> build_profiles(const std::vector<Checkpoint>& checkpoints,
                                            const std::vector<CovarianceSet>& covs);

struct RankAllocation {
  // model id -> layer -> preserved rank
  std::map<std::string, LayerRanks> ranks;
  // layer -> full rank R^l
  std::map<std::string, std::size_t> full_ranks;
  std::vector<std::string> model_order;
  double global_ratio = 1.0;
  double floor_ratio = 1.0;
  std::set<std::string> full_rank_models;

  const LayerRanks& ranks_for(const std::string& model_id) const;
};

/// Default stopping ratio for a preserved-rank ratio: rho - (1 - rho) / 2.
double default_floor_ratio(double rho) noexcept;

/// The preserved-rank ratio grid {7/8, 15/16, 31/32, 63/64}.
std::vector<double> default_ratio_grid();

/// Greedy per-layer allocation: starting from full rank, repeatedly drop the
/// smallest trailing normalized singular value among active models until the
/// layer meets the budget; a model leaves the active set once its rank falls
/// to gamma * R or below. Exempt models keep full rank and never enter the
/// active set. Ties go to the larger current rank, then the lower model index.
RankAllocation allocate(const std::vector<SpectralProfile>& profiles, double rho, double gamma,
                        const std::set<std::string>& exempt = {});

/// Order in which allocate removes components from one layer, as
/// (model index, rank after removal) pairs.
std::vector<std::pair<std::size_t, std::size_t>> removal_order(
    const std::vector<SpectralProfile>& profiles, std::size_t layer_index, double rho,
    double gamma, const std::set<std::string>& exempt = {});

/// sum over layers of r / sum over layers of R, per model.
std::map<std::string, double> per_model_ratios(const RankAllocation& alloc);

/// Sum of discarded squared normalized singular values for one layer.
double discarded_mass(const std::vector<SpectralProfile>& profiles, std::size_t layer_index,
                      const std::vector<std::size_t>& ranks);

struct TaskScore {
  double merged = 0.0;
  double individual = 0.0;
};

/// Exempts the not-yet-exempt task with the largest (individual - merged)
/// gap (ties to the lowest profile index) and re-runs the allocation.
RankAllocation progressive_full_rank(const std::vector<SpectralProfile>& profiles,
                                     const RankAllocation& current,
                                     const std::map<std::string, TaskScore>& scores);

void write_allocation(const RankAllocation& alloc, const std::filesystem::path& path);
RankAllocation read_allocation(const std::filesystem::path& path);
std::string format_allocation(const RankAllocation& alloc);
RankAllocation parse_allocation(const std::string& text);

}  // namespace vecforge
