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

#include "vecforge/rank_alloc.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>

#include "vecforge/errors.hpp"
#include "vecforge/linalg.hpp"
#include "vecforge/parallel.hpp"

namespace vecforge {
namespace {

std::string format_double(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

std::vector<std::string> split(const std::string& s, char sep) {
  std::vector<std::string> out;
  if (s.empty()) return out;
  std::string cur;
  std::istringstream in(s);
  while (std::getline(in, cur, sep)) out.push_back(cur);
  if (!s.empty() && s.back() == sep) out.emplace_back();
  return out;
}

std::string join(const std::vector<std::string>& items, char sep) {
  std::string out;
  for (std::size_t i = 0; i < items.size(); ++i) {
    if (i) out.push_back(sep);
    out += items[i];
  }
  return out;
}

void check_budget(double rho, double gamma) {
  if (!(rho > 0.0 && rho <= 1.0) || !(gamma > 0.0) || gamma > rho) {
    fail(ErrorCode::kInvalidBudget, "need 0 < gamma <= rho <= 1, got rho=" + format_double(rho) +
                                        " gamma=" + format_double(gamma));
  }
}

std::size_t layer_full_rank(const std::vector<SpectralProfile>& profiles, std::size_t layer_index) {
  const std::size_t full = profiles.front().layers.at(layer_index).full_rank();
  for (const auto& p : profiles) {
    if (p.layers.size() != profiles.front().layers.size() ||
        p.layers[layer_index].layer != profiles.front().layers[layer_index].layer ||
        p.layers[layer_index].full_rank() != full) {
      fail(ErrorCode::kIncompatibleTopology, "spectral profiles disagree on layer topology");
    }
  }
  return full;
}

// Greedy removal for one layer; returns final ranks and, when requested, the
// removal sequence.
std::vector<std::size_t> allocate_layer(const std::vector<SpectralProfile>& profiles,
                                        std::size_t layer_index, double rho, double gamma,
                                        const std::set<std::string>& exempt,
                                        std::vector<std::pair<std::size_t, std::size_t>>* order) {
  const std::size_t k = profiles.size();
  const std::size_t full = layer_full_rank(profiles, layer_index);
  std::vector<std::size_t> r(k, full);
  std::vector<bool> active(k);
  for (std::size_t i = 0; i < k; ++i) active[i] = !exempt.contains(profiles[i].model_id);

  const double floor_rank = gamma * static_cast<double>(full);
  const double budget = rho * static_cast<double>(k * full) * (1.0 + 1e-12);
  std::size_t total = k * full;
  while (static_cast<double>(total) > budget) {
    std::size_t pick = k;
    for (std::size_t i = 0; i < k; ++i) {
      if (!active[i] || r[i] == 0) continue;
      if (pick == k) {
        pick = i;
        continue;
      }
      const double si = profiles[i].layers[layer_index].normalized[r[i] - 1];
      const double sp = profiles[pick].layers[layer_index].normalized[r[pick] - 1];
      if (si < sp || (si == sp && r[i] > r[pick])) pick = i;
    }
    if (pick == k) break;  // every non-exempt model sits at its floor
    --r[pick];
    --total;
    if (order) order->emplace_back(pick, r[pick]);
    if (static_cast<double>(r[pick]) <= floor_rank) active[pick] = false;
  }
  return r;
}

}  // namespace

LayerSpectrum SpectralProfile::make_layer(std::string layer, std::vector<double> sigma) {
  LayerSpectrum ls;
  ls.layer = std::move(layer);
  ls.sigma = std::move(sigma);
  const double top = ls.sigma.empty() ? 0.0 : *std::max_element(ls.sigma.begin(), ls.sigma.end());
  ls.normalized.resize(ls.sigma.size(), 0.0);
  if (top > 0.0) {
    for (std::size_t j = 0; j < ls.sigma.size(); ++j) ls.normalized[j] = ls.sigma[j] / top;
  }
  return ls;
}

std::vector<SpectralProfile> build_profiles(const std::vector<Checkpoint>& checkpoints,
                                            const std::vector<CovarianceSet>& covs) {
  if (checkpoints.size() != covs.size()) {
    fail(ErrorCode::kMissingCovariance, "need exactly one covariance set per checkpoint");
  }
  std::vector<SpectralProfile> out(checkpoints.size());
  for (std::size_t i = 0; i < checkpoints.size(); ++i) {
    require_compatible(checkpoints.front(), checkpoints[i]);
    const auto& ckpt = checkpoints[i];
    out[i].model_id = ckpt.model_id().empty() ? covs[i].task_id : ckpt.model_id();
    const auto& layers = ckpt.linear_layers;
    for (const auto& name : layers) (void)covs[i].entry(name);
    out[i].layers.resize(layers.size());
    parallel_for(layers.size(), [&](std::size_t l) {
      const Matrix product = matmul(ckpt.layer_matrix(layers[l]), covs[i].entry(layers[l]).matrix);
      out[i].layers[l] = SpectralProfile::make_layer(layers[l], linalg::svd(product).s);
    });
  }
  return out;
}

const LayerRanks& RankAllocation::ranks_for(const std::string& model_id) const {
  auto it = ranks.find(model_id);
  if (it == ranks.end()) {
    fail(ErrorCode::kInvalidArgument, "allocation has no model '" + model_id + "'");
  }
  return it->second;
}

double default_floor_ratio(double rho) noexcept { return rho - (1.0 - rho) / 2.0; }

std::vector<double> default_ratio_grid() { return {7.0 / 8, 15.0 / 16, 31.0 / 32, 63.0 / 64}; }

RankAllocation allocate(const std::vector<SpectralProfile>& profiles, double rho, double gamma,
                        const std::set<std::string>& exempt) {
  check_budget(rho, gamma);
  RankAllocation alloc;
  alloc.global_ratio = rho;
  alloc.floor_ratio = gamma;
  alloc.full_rank_models = exempt;
  if (profiles.empty()) return alloc;
  for (const auto& p : profiles) {
    if (alloc.ranks.contains(p.model_id)) {
      fail(ErrorCode::kInvalidArgument, "duplicate model id '" + p.model_id + "'");
    }
    alloc.model_order.push_back(p.model_id);
    alloc.ranks[p.model_id];
  }
  const std::size_t n_layers = profiles.front().layers.size();
  std::vector<std::vector<std::size_t>> per_layer(n_layers);
  parallel_for(n_layers, [&](std::size_t l) {
    per_layer[l] = allocate_layer(profiles, l, rho, gamma, exempt, nullptr);
  });
  for (std::size_t l = 0; l < n_layers; ++l) {
    const auto& name = profiles.front().layers[l].layer;
    alloc.full_ranks[name] = profiles.front().layers[l].full_rank();
    for (std::size_t i = 0; i < profiles.size(); ++i) {
      alloc.ranks[profiles[i].model_id][name] = per_layer[l][i];
    }
  }
  return alloc;
}

std::vector<std::pair<std::size_t, std::size_t>> removal_order(
    const std::vector<SpectralProfile>& profiles, std::size_t layer_index, double rho,
    double gamma, const std::set<std::string>& exempt) {
  check_budget(rho, gamma);
  std::vector<std::pair<std::size_t, std::size_t>> order;
  if (!profiles.empty()) allocate_layer(profiles, layer_index, rho, gamma, exempt, &order);
  return order;
}

std::map<std::string, double> per_model_ratios(const RankAllocation& alloc) {
  std::map<std::string, double> out;
  for (const auto& [model, layers] : alloc.ranks) {
    double kept = 0.0;
    double full = 0.0;
    for (const auto& [layer, r] : layers) {
      kept += static_cast<double>(r);
      full += static_cast<double>(alloc.full_ranks.at(layer));
    }
    out[model] = full > 0.0 ? kept / full : 1.0;
  }
  return out;
}

double discarded_mass(const std::vector<SpectralProfile>& profiles, std::size_t layer_index,
                      const std::vector<std::size_t>& ranks) {
  double mass = 0.0;
  for (std::size_t i = 0; i < profiles.size(); ++i) {
    const auto& s = profiles[i].layers.at(layer_index).normalized;
    for (std::size_t j = ranks.at(i); j < s.size(); ++j) mass += s[j] * s[j];
  }
  return mass;
}

RankAllocation progressive_full_rank(const std::vector<SpectralProfile>& profiles,
                                     const RankAllocation& current,
                                     const std::map<std::string, TaskScore>& scores) {
  std::size_t pick = profiles.size();
  double best_gap = 0.0;
  for (std::size_t i = 0; i < profiles.size(); ++i) {
    const auto& id = profiles[i].model_id;
    if (current.full_rank_models.contains(id)) continue;
    auto it = scores.find(id);
    if (it == scores.end()) fail(ErrorCode::kInvalidArgument, "no score for task '" + id + "'");
    const double gap = it->second.individual - it->second.merged;
    if (pick == profiles.size() || gap > best_gap) {
      pick = i;
      best_gap = gap;
    }
  }
  if (pick == profiles.size()) fail(ErrorCode::kAllExempt, "every task already has full rank");
  auto exempt = current.full_rank_models;
  exempt.insert(profiles[pick].model_id);
  return allocate(profiles, current.global_ratio, current.floor_ratio, exempt);
}

std::string format_allocation(const RankAllocation& alloc) {
  std::ostringstream out;
  out << "# vecforge rank allocation\n";
  out << "rho=" << format_double(alloc.global_ratio) << "\n";
  out << "gamma=" << format_double(alloc.floor_ratio) << "\n";
  out << "models=" << join(alloc.model_order, ',') << "\n";
  out << "exempt="
      << join(std::vector<std::string>(alloc.full_rank_models.begin(),
                                       alloc.full_rank_models.end()),
              ',')
      << "\n";
  out << "model_id,layer,R,r\n";
  for (const auto& model : alloc.model_order) {
    for (const auto& [layer, r] : alloc.ranks.at(model)) {
      out << model << ',' << layer << ',' << alloc.full_ranks.at(layer) << ',' << r << '\n';
    }
  }
  return out.str();
}

RankAllocation parse_allocation(const std::string& text) {
  RankAllocation alloc;
  std::istringstream in(text);
  std::string line;
  bool in_records = false;
  auto bad = [](const std::string& why) {
    fail(ErrorCode::kMalformedHeader, "rank allocation file: " + why);
  };
  while (std::getline(in, line)) {
    if (line.empty() || line.front() == '#') continue;
    if (!in_records) {
      if (line == "model_id,layer,R,r") {
        in_records = true;
        continue;
      }
      const auto eq = line.find('=');
      if (eq == std::string::npos) bad("unexpected line '" + line + "'");
      const std::string key = line.substr(0, eq);
      const std::string value = line.substr(eq + 1);
      try {
        if (key == "rho") {
          alloc.global_ratio = std::stod(value);
        } else if (key == "gamma") {
          alloc.floor_ratio = std::stod(value);
        } else if (key == "models") {
          alloc.model_order = split(value, ',');
        } else if (key == "exempt") {
          for (auto& m : split(value, ',')) alloc.full_rank_models.insert(m);
        } else {
          bad("unknown key '" + key + "'");
        }
      } catch (const std::logic_error&) {
        bad("bad value for '" + key + "'");
      }
      continue;
    }
    const auto fields = split(line, ',');
    if (fields.size() != 4) bad("record '" + line + "' needs 4 fields");
    try {
      const std::size_t full = std::stoull(fields[2]);
      const std::size_t r = std::stoull(fields[3]);
      if (r > full) bad("rank exceeds full rank in '" + line + "'");
      auto [it, inserted] = alloc.full_ranks.emplace(fields[1], full);
      if (!inserted && it->second != full) bad("inconsistent full rank for " + fields[1]);
      alloc.ranks[fields[0]][fields[1]] = r;
    } catch (const std::logic_error&) {
      bad("non-numeric rank in '" + line + "'");
    }
  }
  if (!in_records) bad("missing record header");
  for (const auto& m : alloc.model_order) {
    if (!alloc.ranks.contains(m)) bad("model '" + m + "' has no records");
  }
  return alloc;
}

void write_allocation(const RankAllocation& alloc, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) fail(ErrorCode::kIoFailure, "cannot write '" + path.string() + "'");
  out << format_allocation(alloc);
  if (!out) fail(ErrorCode::kIoFailure, "write error on '" + path.string() + "'");
}

RankAllocation read_allocation(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) fail(ErrorCode::kIoFailure, "cannot open '" + path.string() + "'");
  std::stringstream buf;
  buf << in.rdbuf();
  return parse_allocation(buf.str());
}

}  // namespace vecforge
