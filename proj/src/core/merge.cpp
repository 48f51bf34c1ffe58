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

#include "vecforge/merge.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include <json.hpp>

#include "vecforge/errors.hpp"
#include "vecforge/rank_alloc.hpp"

namespace vecforge {
namespace {

using nlohmann::json;

void check_inputs(const std::vector<TaskVectorSet>& deltas, const Checkpoint& base) {
  if (deltas.empty()) fail(ErrorCode::kInvalidArgument, "merging needs at least one task vector");
  for (const auto& d : deltas) d.validate_against(base);
}

// Materializes base + merged delta in the base dtypes.
Checkpoint with_deltas(const Checkpoint& base, const std::map<std::string, DenseTensor>& merged) {
  Checkpoint out = base;
  for (auto& [name, t] : out.tensors) {
    auto values = t.to_doubles();
    const auto& d = merged.at(name).values;
    for (std::size_t i = 0; i < values.size(); ++i) values[i] += d[i];
    t = TensorRecord::from_doubles(name, t.dtype, t.shape, values);
  }
  return out;
}

double sign_of(double v) noexcept { return v > 0.0 ? 1.0 : (v < 0.0 ? -1.0 : 0.0); }

std::vector<double> trim_top_magnitude(const std::vector<double>& v, double keep) {
  const std::size_t k = ties_keep_count(keep, v.size());
  std::vector<std::size_t> idx(v.size());
  std::iota(idx.begin(), idx.end(), 0);
  std::stable_sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) {
    return std::abs(v[a]) > std::abs(v[b]);
  });
  std::vector<double> out(v.size(), 0.0);
  for (std::size_t i = 0; i < k; ++i) out[idx[i]] = v[idx[i]];
  return out;
}

json purification_to_json(const PurificationSettings& p) {
  return {{"decomposer", p.decomposer.name()},
          {"rho", p.rho},
          {"gamma", p.gamma},
          {"exempt", std::vector<std::string>(p.exempt.begin(), p.exempt.end())}};
}

}  // namespace

std::string_view merge_method_name(MergeMethod m) noexcept {
  switch (m) {
    case MergeMethod::kAverage: return "average";
    case MergeMethod::kTaskArithmetic: return "task_arithmetic";
    case MergeMethod::kTies: return "ties";
    case MergeMethod::kEmr: return "emr";
  }
  return "unknown";
}

MergeMethod parse_merge_method(std::string_view text) {
  for (auto m : {MergeMethod::kAverage, MergeMethod::kTaskArithmetic, MergeMethod::kTies,
                 MergeMethod::kEmr}) {
    if (merge_method_name(m) == text) return m;
  }
  fail(ErrorCode::kInvalidRecipe, "unknown merge method '" + std::string(text) + "'");
}

std::size_t ties_keep_count(double keep, std::size_t n) noexcept {
  if (n == 0) return 0;
  // Guard against keep * n landing a hair above an integer (2/3 * 3).
  const double raw = keep * static_cast<double>(n);
  auto k = static_cast<std::size_t>(std::ceil(raw - 1e-9 * std::max(1.0, raw)));
  return std::clamp<std::size_t>(k, 1, n);
}

// ---------------------------------------------------------------------------
// Engines

MergedModel merge_average(const std::vector<TaskVectorSet>& deltas, const Checkpoint& base) {
  check_inputs(deltas, base);
  std::map<std::string, DenseTensor> merged;
  const double inv_k = 1.0 / static_cast<double>(deltas.size());
  for (const auto& [name, t] : base.tensors) {
    DenseTensor acc{t.shape, std::vector<double>(t.numel(), 0.0)};
    for (const auto& d : deltas) {
      const auto& v = d.layers.at(name).values;
      for (std::size_t i = 0; i < v.size(); ++i) acc.values[i] += v[i];
    }
    for (double& x : acc.values) x *= inv_k;
    merged.emplace(name, std::move(acc));
  }
  return {with_deltas(base, merged), std::nullopt, std::nullopt};
}

MergedModel merge_average_weights(const std::vector<Checkpoint>& models, const Checkpoint& base) {
  if (models.empty()) fail(ErrorCode::kInvalidArgument, "merging needs at least one model");
  for (const auto& m : models) require_compatible(base, m);
  Checkpoint out = base;
  const double inv_k = 1.0 / static_cast<double>(models.size());
  for (auto& [name, t] : out.tensors) {
    std::vector<double> acc(t.numel(), 0.0);
    for (const auto& m : models) {
      const auto v = m.tensor(name).to_doubles();
      for (std::size_t i = 0; i < v.size(); ++i) acc[i] += v[i];
    }
    if (models.size() > 1) {
      for (double& x : acc) x *= inv_k;
    }
    t = TensorRecord::from_doubles(name, t.dtype, t.shape, acc);
  }
  return {out, std::nullopt, std::nullopt};
}

MergedModel merge_task_arithmetic(const std::vector<TaskVectorSet>& deltas, const Checkpoint& base,
                                  double lambda) {
  check_inputs(deltas, base);
  std::map<std::string, DenseTensor> merged;
  for (const auto& [name, t] : base.tensors) {
    DenseTensor acc{t.shape, std::vector<double>(t.numel(), 0.0)};
    for (const auto& d : deltas) {
      const auto& v = d.layers.at(name).values;
      for (std::size_t i = 0; i < v.size(); ++i) acc.values[i] += v[i];
    }
    for (double& x : acc.values) x *= lambda;
    merged.emplace(name, std::move(acc));
  }
  return {with_deltas(base, merged), std::nullopt, std::nullopt};
}

MergedModel merge_ties(const std::vector<TaskVectorSet>& deltas, const Checkpoint& base,
                       double lambda, double keep) {
  check_inputs(deltas, base);
  if (!(keep > 0.0 && keep <= 1.0)) {
    fail(ErrorCode::kInvalidArgument, "ties keep fraction must lie in (0, 1]");
  }
  std::map<std::string, DenseTensor> merged;
  for (const auto& [name, t] : base.tensors) {
    const std::size_t n = t.numel();
    std::vector<std::vector<double>> trimmed;
    trimmed.reserve(deltas.size());
    for (const auto& d : deltas) trimmed.push_back(trim_top_magnitude(d.layers.at(name).values, keep));
    DenseTensor out{t.shape, std::vector<double>(n, 0.0)};
    for (std::size_t c = 0; c < n; ++c) {
      double sum = 0.0;
      for (const auto& tr : trimmed) sum += tr[c];
      const double elected = sign_of(sum);
      if (elected == 0.0) continue;
      double agree_sum = 0.0;
      std::size_t agree = 0;
      for (const auto& tr : trimmed) {
        if (sign_of(tr[c]) == elected) {
          agree_sum += tr[c];
          ++agree;
        }
      }
      if (agree > 0) out.values[c] = lambda * (agree_sum / static_cast<double>(agree));
    }
    merged.emplace(name, std::move(out));
  }
  return {with_deltas(base, merged), std::nullopt, std::nullopt};
}

MergedModel merge_emr(const std::vector<TaskVectorSet>& deltas, const Checkpoint& base) {
  check_inputs(deltas, base);
  EmrArtifacts emr;
  for (const auto& d : deltas) {
    if (emr.masks.contains(d.task_id)) {
      fail(ErrorCode::kInvalidArgument, "duplicate task id '" + d.task_id + "'");
    }
    emr.task_order.push_back(d.task_id);
    emr.masks[d.task_id];
    emr.rescalers[d.task_id];
  }
  for (const auto& [name, t] : base.tensors) {
    const std::size_t n = t.numel();
    DenseTensor uni{t.shape, std::vector<double>(n, 0.0)};
    for (std::size_t c = 0; c < n; ++c) {
      double sum = 0.0;
      for (const auto& d : deltas) sum += d.layers.at(name).values[c];
      const double elected = sign_of(sum);
      if (elected == 0.0) continue;
      double mag = 0.0;
      for (const auto& d : deltas) {
        const double v = d.layers.at(name).values[c];
        if (sign_of(v) == elected) mag = std::max(mag, std::abs(v));
      }
      uni.values[c] = elected * mag;
    }
    for (const auto& d : deltas) {
      const auto& v = d.layers.at(name).values;
      DenseTensor mask{t.shape, std::vector<double>(n, 0.0)};
      double num = 0.0;
      double den = 0.0;
      for (std::size_t c = 0; c < n; ++c) {
        num += std::abs(v[c]);
        if (v[c] * uni.values[c] > 0.0) {
          mask.values[c] = 1.0;
          den += std::abs(uni.values[c]);
        }
      }
      emr.rescalers[d.task_id][name] = den > 0.0 ? num / den : 1.0;
      emr.masks[d.task_id].emplace(name, std::move(mask));
    }
    emr.unified.emplace(name, std::move(uni));
  }
  MergedModel out{with_deltas(base, emr.unified), std::move(emr), std::nullopt};
  return out;
}

Checkpoint emr_reconstruct(const MergedModel& merged, const Checkpoint& base,
                           const std::string& task_id) {
  if (!merged.emr) fail(ErrorCode::kInvalidArgument, "merged model carries no EMR artifacts");
  const auto& emr = *merged.emr;
  auto masks = emr.masks.find(task_id);
  if (masks == emr.masks.end()) fail(ErrorCode::kInvalidArgument, "unknown task '" + task_id + "'");
  std::map<std::string, DenseTensor> deltas;
  for (const auto& [name, uni] : emr.unified) {
    const auto& mask = masks->second.at(name).values;
    const double scale = emr.rescalers.at(task_id).at(name);
    DenseTensor d{uni.shape, std::vector<double>(uni.values.size(), 0.0)};
    for (std::size_t c = 0; c < d.values.size(); ++c) d.values[c] = scale * mask[c] * uni.values[c];
    deltas.emplace(name, std::move(d));
  }
  return with_deltas(base, deltas);
}

Container emr_to_container(const EmrArtifacts& emr) {
  Container c;
  std::vector<std::string> tensor_names;
  for (const auto& [name, uni] : emr.unified) {
    tensor_names.push_back(name);
    auto rec = TensorRecord::from_doubles(name + ".uni", DType::kF64, uni.shape, uni.values);
    c.tensors.emplace(rec.name, std::move(rec));
  }
  for (const auto& task : emr.task_order) {
    for (const auto& [name, mask] : emr.masks.at(task)) {
      auto rec = TensorRecord::from_doubles(name + ".mask." + task, DType::kF32, mask.shape,
                                            mask.values);
      c.tensors.emplace(rec.name, std::move(rec));
    }
    std::vector<double> lambdas;
    for (const auto& name : tensor_names) lambdas.push_back(emr.rescalers.at(task).at(name));
    auto rec = TensorRecord::from_doubles(task + ".lambda", DType::kF64,
                                          {static_cast<std::int64_t>(lambdas.size())}, lambdas);
    c.tensors.emplace(rec.name, std::move(rec));
  }
  c.metadata[std::string(kKindKey)] = "emr_artifacts";
  c.metadata["vecforge.emr_tasks"] = json(emr.task_order).dump();
  c.metadata["vecforge.emr_tensors"] = json(tensor_names).dump();
  return c;
}

EmrArtifacts emr_from_container(const Container& c) {
  EmrArtifacts emr;
  std::vector<std::string> tensor_names;
  try {
    emr.task_order = json::parse(c.metadata.at("vecforge.emr_tasks")).get<std::vector<std::string>>();
    tensor_names = json::parse(c.metadata.at("vecforge.emr_tensors")).get<std::vector<std::string>>();
  } catch (const std::exception&) {
    fail(ErrorCode::kMalformedHeader, "EMR container lacks its task/tensor lists");
  }
  auto get = [&](const std::string& name) -> const TensorRecord& {
    auto it = c.tensors.find(name);
    if (it == c.tensors.end()) fail(ErrorCode::kMalformedHeader, "EMR tensor '" + name + "' missing");
    return it->second;
  };
  for (const auto& name : tensor_names) {
    emr.unified.emplace(name, DenseTensor::from_record(get(name + ".uni")));
  }
  for (const auto& task : emr.task_order) {
    const auto lambdas = get(task + ".lambda").to_doubles();
    if (lambdas.size() != tensor_names.size()) {
      fail(ErrorCode::kShapeMismatch, "rescaler vector for '" + task + "' has the wrong length");
    }
    for (std::size_t i = 0; i < tensor_names.size(); ++i) {
      emr.masks[task].emplace(tensor_names[i],
                              DenseTensor::from_record(get(tensor_names[i] + ".mask." + task)));
      emr.rescalers[task][tensor_names[i]] = lambdas[i];
    }
  }
  return emr;
}

// ---------------------------------------------------------------------------
// Recipes

std::vector<std::string> MergeRecipe::violations() const {
  std::vector<std::string> v;
  if (!(lambda >= 0.0 && lambda <= 2.0)) v.push_back("lambda must lie in [0, 2]");
  if (!(ties_trim_keep > 0.0 && ties_trim_keep <= 1.0)) {
    v.push_back("ties_trim_keep must lie in (0, 1]");
  }
  if (dare_p && !(*dare_p >= 0.0 && *dare_p < 1.0)) v.push_back("dare_p must lie in [0, 1)");
  if (base.empty()) v.push_back("base checkpoint path is required");
  if (inputs.empty()) v.push_back("at least one input is required");
  std::set<std::string> ids;
  for (std::size_t i = 0; i < inputs.size(); ++i) {
    const auto& in = inputs[i];
    const std::string where = "inputs[" + std::to_string(i) + "]";
    if (in.checkpoint.empty()) v.push_back(where + ".checkpoint is required");
    if (in.task_id.empty()) v.push_back(where + ".task_id is required");
    if (!ids.insert(in.task_id).second) v.push_back(where + ".task_id is duplicated");
    if (purification && in.covariance.empty()) {
      v.push_back(where + ".covariance is required for purification");
    }
  }
  if (purification) {
    const auto& p = *purification;
    if (!(p.rho > 0.0 && p.rho <= 1.0)) v.push_back("purification.rho must lie in (0, 1]");
    if (!(p.gamma > 0.0 && p.gamma <= p.rho)) {
      v.push_back("purification.gamma must lie in (0, rho]");
    }
    if (p.decomposer.variant == DecomposerVariant::kCoSvdCrossTask) {
      v.push_back("purification.decomposer co_svd_crosstask is an ablation-only variant");
    }
    for (const auto& e : p.exempt) {
      if (!ids.contains(e)) v.push_back("purification.exempt names unknown task '" + e + "'");
    }
    if (dare_p) v.push_back("dare_p and purification cannot be combined");
  }
  return v;
}

MergeRecipe parse_recipe(const std::string& json_text) {
  json doc;
  try {
    doc = json::parse(json_text);
  } catch (const json::exception& e) {
    fail(ErrorCode::kInvalidRecipe, std::string("recipe is not valid JSON: ") + e.what());
  }
  std::vector<std::string> errors;
  MergeRecipe r;
  if (!doc.is_object()) fail(ErrorCode::kInvalidRecipe, "recipe must be a JSON object");

  static const std::set<std::string> kFields = {"method", "lambda", "ties_trim_keep",
                                                "dare_p", "purification", "inputs",
                                                "base", "seed"};
  for (const auto& [key, value] : doc.items()) {
    if (!kFields.contains(key)) errors.push_back("unknown field '" + key + "'");
  }
  auto number = [&](const char* key, double& dst) {
    if (!doc.contains(key) || doc[key].is_null()) return;
    if (!doc[key].is_number()) {
      errors.push_back(std::string(key) + " must be a number");
      return;
    }
    dst = doc[key].get<double>();
  };
  if (!doc.contains("method")) {
    errors.push_back("method is required");
  } else if (!doc["method"].is_string()) {
    errors.push_back("method must be a string");
  } else {
    const auto name = doc["method"].get<std::string>();
    bool known = false;
    for (auto m : {MergeMethod::kAverage, MergeMethod::kTaskArithmetic, MergeMethod::kTies,
                   MergeMethod::kEmr}) {
      if (merge_method_name(m) == name) {
        r.method = m;
        known = true;
      }
    }
    if (!known) errors.push_back("unknown merge method '" + name + "'");
  }
  number("lambda", r.lambda);
  number("ties_trim_keep", r.ties_trim_keep);
  if (doc.contains("dare_p") && !doc["dare_p"].is_null()) {
    double p = 0.0;
    number("dare_p", p);
    r.dare_p = p;
  }
  if (doc.contains("seed")) {
    if (!doc["seed"].is_number_unsigned()) {
      errors.push_back("seed must be a non-negative integer");
    } else {
      r.seed = doc["seed"].get<std::uint64_t>();
    }
  }
  if (doc.contains("base")) {
    if (doc["base"].is_string()) {
      r.base = doc["base"].get<std::string>();
    } else {
      errors.push_back("base must be a string");
    }
  }
  if (doc.contains("inputs")) {
    if (!doc["inputs"].is_array()) {
      errors.push_back("inputs must be an array");
    } else {
      for (const auto& item : doc["inputs"]) {
        MergeInput in;
        if (!item.is_object()) {
          errors.push_back("each input must be an object");
          continue;
        }
        for (const auto& [key, value] : item.items()) {
          if (key != "checkpoint" && key != "covariance" && key != "task_id") {
            errors.push_back("unknown input field '" + key + "'");
          } else if (!value.is_string() && !value.is_null()) {
            errors.push_back("input field '" + key + "' must be a string");
          }
        }
        auto str = [&](const char* key) {
          return item.contains(key) && item[key].is_string() ? item[key].get<std::string>()
                                                             : std::string();
        };
        in.checkpoint = str("checkpoint");
        in.covariance = str("covariance");
        in.task_id = str("task_id");
        r.inputs.push_back(std::move(in));
      }
    }
  }
  if (doc.contains("purification") && !doc["purification"].is_null()) {
    const auto& p = doc["purification"];
    if (!p.is_object()) {
      errors.push_back("purification must be an object or null");
    } else {
      PurificationSettings s;
      for (const auto& [key, value] : p.items()) {
        if (key != "decomposer" && key != "rho" && key != "gamma" && key != "exempt") {
          errors.push_back("unknown purification field '" + key + "'");
        }
      }
      if (p.contains("decomposer")) {
        if (!p["decomposer"].is_string()) {
          errors.push_back("purification.decomposer must be a string");
        } else {
          try {
            s.decomposer = DecomposerKind::parse(p["decomposer"].get<std::string>());
          } catch (const Error&) {
            errors.push_back("unknown purification.decomposer '" +
                             p["decomposer"].get<std::string>() + "'");
          }
        }
      }
      if (p.contains("rho")) {
        if (p["rho"].is_number()) {
          s.rho = p["rho"].get<double>();
        } else {
          errors.push_back("purification.rho must be a number");
        }
      }
      s.gamma = default_floor_ratio(s.rho);
      if (p.contains("gamma") && !p["gamma"].is_null()) {
        if (p["gamma"].is_number()) {
          s.gamma = p["gamma"].get<double>();
        } else {
          errors.push_back("purification.gamma must be a number");
        }
      }
      if (p.contains("exempt")) {
        if (!p["exempt"].is_array()) {
          errors.push_back("purification.exempt must be an array");
        } else {
          for (const auto& e : p["exempt"]) {
            if (e.is_string()) {
              s.exempt.insert(e.get<std::string>());
            } else {
              errors.push_back("purification.exempt entries must be strings");
            }
          }
        }
      }
      r.purification = std::move(s);
    }
  }
  for (auto& v : r.violations()) errors.push_back(std::move(v));
  if (!errors.empty()) {
    std::string msg;
    for (const auto& e : errors) msg += "\n  - " + e;
    fail(ErrorCode::kInvalidRecipe, "recipe has " + std::to_string(errors.size()) +
                                        " violation(s):" + msg);
  }
  if (r.purification && r.purification->decomposer.variant == DecomposerVariant::kCoSvdRandom) {
    r.purification->decomposer.random_seed = r.seed;
  }
  return r;
}

std::string recipe_to_json(const MergeRecipe& r) {
  json inputs = json::array();
  for (const auto& in : r.inputs) {
    inputs.push_back({{"checkpoint", in.checkpoint},
                      {"covariance", in.covariance},
                      {"task_id", in.task_id}});
  }
  json doc = {{"method", std::string(merge_method_name(r.method))},
              {"lambda", r.lambda},
              {"ties_trim_keep", r.ties_trim_keep},
              {"dare_p", r.dare_p ? json(*r.dare_p) : json(nullptr)},
              {"purification", r.purification ? purification_to_json(*r.purification)
                                              : json(nullptr)},
              {"inputs", inputs},
              {"base", r.base},
              {"seed", r.seed}};
  return doc.dump(2) + "\n";
}

}  // namespace vecforge
