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

// Small seeded checkpoints and covariances shared by the unit tests and the
// acceptance runner.

#include <random>
#include <string>
#include <utility>
#include <vector>

#include "oracles.hpp"
#include "vecforge/covariance.hpp"
#include "vecforge/tensor_store.hpp"

namespace fixture {

using namespace vecforge;

struct LayerShape {
  std::string name;
  std::size_t out;
  std::size_t in;
};

inline std::vector<LayerShape> default_layers() {
  return {{"l0.weight", 6, 5}, {"l1.weight", 4, 6}, {"l2.weight", 7, 4}};
}

inline Checkpoint random_checkpoint(const std::vector<LayerShape>& layers, std::mt19937_64& rng,
                                    double scale = 1.0) {
  Checkpoint c;
  for (const auto& l : layers) {
    Matrix m = oracle::random_matrix(l.out, l.in, rng, -scale, scale);
    c.tensors.emplace(l.name, TensorRecord::from_matrix(l.name, DType::kF64, m));
    c.linear_layers.push_back(l.name);
    const std::string bias = l.name.substr(0, l.name.find('.')) + ".bias";
    const Matrix b = oracle::random_matrix(1, l.out, rng, -scale, scale);
    c.tensors.emplace(bias, TensorRecord::from_doubles(bias, DType::kF64,
                                                       {static_cast<std::int64_t>(l.out)},
                                                       b.values()));
  }
  return c;
}

// base plus a perturbation of the given magnitude on every tensor.
inline Checkpoint perturbed(const Checkpoint& base, std::mt19937_64& rng, double scale) {
  Checkpoint ft = base;
  std::uniform_real_distribution<double> u(-scale, scale);
  for (auto& [name, t] : ft.tensors) {
    auto v = t.to_doubles();
    for (double& x : v) x += u(rng);
    t = TensorRecord::from_doubles(name, t.dtype, t.shape, v);
  }
  return ft;
}

// Regularized covariances from `samples` random activation columns per layer.
inline CovarianceSet random_covariances(const Checkpoint& ckpt, std::mt19937_64& rng,
                                        std::size_t samples, const std::string& task_id) {
  std::vector<ActivationStream> streams;
  for (const auto& name : ckpt.linear_layers) {
    const auto in = static_cast<std::size_t>(ckpt.tensor(name).shape[1]);
    streams.push_back({name, {oracle::random_matrix(in, samples, rng)}, task_id});
  }
  return build_covariance_set(streams, task_id);
}

}  // namespace fixture
