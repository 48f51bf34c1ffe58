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

#include "vecforge/workbench.hpp"

#include <algorithm>
#include <cmath>
#include <random>
#include <fstream>
#include <sstream>

#include <json.hpp>

#include "vecforge/errors.hpp"
#include "vecforge/hash.hpp"
#include "vecforge/linalg.hpp"
#include "vecforge/parallel.hpp"

namespace vecforge::workbench {
namespace {

std::mt19937_64 make_rng(std::uint64_t seed, std::string_view tag, std::uint64_t extra = 0) {
  return std::mt19937_64(splitmix64(splitmix64(seed ^ fnv1a(tag)) + extra));
}

Matrix gaussian(std::size_t rows, std::size_t cols, std::mt19937_64& rng, double scale = 1.0) {
  std::normal_distribution<double> n(0.0, 1.0);
  Matrix m(rows, cols);
  for (double& v : m.values()) v = scale * n(rng);
  return m;
}

// Modified Gram-Schmidt on the columns of `m`, after projecting out the
// columns of `against` (already orthonormal). Two passes for stability.
Matrix orthonormalize(Matrix m, const Matrix* against = nullptr) {
  const std::size_t rows = m.rows();
  auto project_out = [&](std::size_t j, const Matrix& basis, std::size_t upto) {
    for (std::size_t q = 0; q < upto; ++q) {
      double dot = 0.0;
      for (std::size_t i = 0; i < rows; ++i) dot += basis(i, q) * m(i, j);
      for (std::size_t i = 0; i < rows; ++i) m(i, j) -= dot * basis(i, q);
    }
  };
  for (std::size_t j = 0; j < m.cols(); ++j) {
    for (int pass = 0; pass < 2; ++pass) {
      if (against != nullptr) project_out(j, *against, against->cols());
      project_out(j, m, j);
    }
    double norm = 0.0;
    for (std::size_t i = 0; i < rows; ++i) norm += m(i, j) * m(i, j);
    norm = std::sqrt(norm);
    if (norm < 1e-12) fail(ErrorCode::kDegenerate, "could not orthonormalize a random basis");
    for (std::size_t i = 0; i < rows; ++i) m(i, j) /= norm;
  }
  return m;
}

Matrix hcat(const Matrix& a, const Matrix& b) {
  Matrix out(a.rows(), a.cols() + b.cols());
  for (std::size_t i = 0; i < a.rows(); ++i) {
    for (std::size_t j = 0; j < a.cols(); ++j) out(i, j) = a(i, j);
    for (std::size_t j = 0; j < b.cols(); ++j) out(i, a.cols() + j) = b(i, j);
  }
  return out;
}

// Orthonormal input_dim x subspace_dim basis of the task's input subspace.
Matrix task_basis(const SyntheticTaskSpec& spec) {
  const auto& act = spec.activation;
  auto shared_rng = make_rng(act.shared_seed, "shared-basis");
  const Matrix shared =
      orthonormalize(gaussian(spec.input_dim, act.shared_dim, shared_rng));
  auto own_rng = make_rng(spec.seed, "task-basis");
  const Matrix own =
      orthonormalize(gaussian(spec.input_dim, act.subspace_dim - act.shared_dim, own_rng), &shared);
  return hcat(shared, own);
}

std::vector<double> direction_scales(const ActivationDistribution& act) {
  std::vector<double> s(act.subspace_dim, 1.0);
  if (act.subspace_dim < 2) return s;
  for (std::size_t i = 0; i < s.size(); ++i) {
    s[i] = std::pow(act.anisotropy, -static_cast<double>(i) / static_cast<double>(s.size() - 1));
  }
  return s;
}

Checkpoint make_model(const Matrix& w1, const Matrix& w2, const std::string& id) {
  Checkpoint c;
  c.tensors.emplace(kHiddenLayer, TensorRecord::from_matrix(kHiddenLayer, DType::kF64, w1));
  c.tensors.emplace(kOutputLayer, TensorRecord::from_matrix(kOutputLayer, DType::kF64, w2));
  c.linear_layers = {kHiddenLayer, kOutputLayer};
  c.metadata["model_id"] = id;
  return c;
}

// Rank-k matrix A B^T with orthonormal A (rows x k) and B (cols x k), i.e.
// unit spectral norm.
Matrix planted_component(std::size_t rows, const Matrix& b_raw, std::mt19937_64& rng) {
  const Matrix a = orthonormalize(gaussian(rows, b_raw.cols(), rng));
  const Matrix b = orthonormalize(b_raw);
  return matmul_transposed(a, b);
}

std::vector<std::size_t> argmax_columns(const Matrix& m) {
  std::vector<std::size_t> out(m.cols(), 0);
  for (std::size_t j = 0; j < m.cols(); ++j) {
    for (std::size_t i = 1; i < m.rows(); ++i) {
      if (m(i, j) > m(out[j], j)) out[j] = i;
    }
  }
  return out;
}

void require_topology(const Checkpoint& model, const SyntheticTaskSpec& spec) {
  auto check = [&](const char* layer, std::size_t rows, std::size_t cols) {
    auto it = model.tensors.find(layer);
    if (it == model.tensors.end() ||
        it->second.shape != std::vector<std::int64_t>{static_cast<std::int64_t>(rows),
                                                      static_cast<std::int64_t>(cols)}) {
      fail(ErrorCode::kDimensionMismatch,
           std::string("model tensor '") + layer + "' does not match the task dimensions");
    }
  };
  check(kHiddenLayer, spec.hidden_dim, spec.input_dim);
  check(kOutputLayer, spec.output_dim, spec.hidden_dim);
}

double variance(const std::vector<double>& v) {
  if (v.size() < 2) return 0.0;
  double mean = 0.0;
  for (double x : v) mean += x;
  mean /= static_cast<double>(v.size());
  double ss = 0.0;
  for (double x : v) ss += (x - mean) * (x - mean);
  return ss / static_cast<double>(v.size() - 1);
}

}  // namespace

void SyntheticTaskSpec::validate() const {
  if (input_dim == 0 || hidden_dim == 0 || output_dim == 0) {
    fail(ErrorCode::kDimensionMismatch, "task '" + task_id + "' has a zero dimension");
  }
  const std::size_t max_rank =
      std::min({std::min(hidden_dim, input_dim), std::min(output_dim, hidden_dim)});
  if (planted_rank > max_rank) {
    fail(ErrorCode::kDimensionMismatch, "planted rank of '" + task_id + "' exceeds a layer rank");
  }
  if (activation.subspace_dim == 0 || activation.subspace_dim > input_dim ||
      activation.shared_dim > activation.subspace_dim) {
    fail(ErrorCode::kDimensionMismatch, "activation subspace of '" + task_id + "' is invalid");
  }
  if (planted_rank > activation.subspace_dim) {
    fail(ErrorCode::kDimensionMismatch,
         "planted rank of '" + task_id + "' exceeds its activation subspace");
  }
  if (!(activation.anisotropy >= 1.0) || !(noise_scale >= 0.0) || !(activation.floor_std >= 0.0)) {
    fail(ErrorCode::kInvalidArgument, "task '" + task_id + "' has an invalid scale parameter");
  }
}

SyntheticSuite synth_suite(const std::vector<SyntheticTaskSpec>& specs, std::uint64_t base_seed) {
  if (specs.empty()) fail(ErrorCode::kInvalidArgument, "a suite needs at least one task");
  for (const auto& s : specs) {
    s.validate();
    if (s.input_dim != specs[0].input_dim || s.hidden_dim != specs[0].hidden_dim ||
        s.output_dim != specs[0].output_dim) {
      fail(ErrorCode::kDimensionMismatch, "suite tasks must share dimensions");
    }
  }
  const auto& d = specs[0];
  SyntheticSuite suite;
  suite.specs = specs;
  suite.base_seed = base_seed;
  auto base_rng = make_rng(base_seed, "base");
  const Matrix w1 =
      gaussian(d.hidden_dim, d.input_dim, base_rng, 1.0 / std::sqrt(static_cast<double>(d.input_dim)));
  const Matrix w2 = gaussian(d.output_dim, d.hidden_dim, base_rng,
                             1.0 / std::sqrt(static_cast<double>(d.hidden_dim)));
  suite.base = make_model(w1, w2, "base");

  for (const auto& spec : specs) {
    std::map<std::string, Matrix> planted;
    Matrix p1(d.hidden_dim, d.input_dim);
    Matrix p2(d.output_dim, d.hidden_dim);
    if (spec.planted_rank > 0) {
      const Matrix u = task_basis(spec);
      auto rng = make_rng(spec.seed, "planted");
      p1 = planted_component(d.hidden_dim,
                             matmul(u, gaussian(u.cols(), spec.planted_rank, rng)), rng);
      // The output-layer component reads the hidden directions the task's
      // inputs actually reach.
      p2 = planted_component(
          d.output_dim, matmul(w1, matmul(u, gaussian(u.cols(), spec.planted_rank, rng))), rng);
      p1 *= spec.planted_scale;
      p2 *= spec.planted_scale;
    }
    planted.emplace(kHiddenLayer, p1);
    planted.emplace(kOutputLayer, p2);

    const Matrix r1 = w1 + p1;
    const Matrix r2 = w2 + p2;
    auto noise_rng = make_rng(spec.seed, "noise");
    const Matrix f1 = r1 + gaussian(d.hidden_dim, d.input_dim, noise_rng, spec.noise_scale);
    const Matrix f2 = r2 + gaussian(d.output_dim, d.hidden_dim, noise_rng, spec.noise_scale);

    suite.references.push_back(make_model(r1, r2, spec.task_id));
    suite.finetuned.push_back(make_model(f1, f2, spec.task_id));
    suite.planted.push_back(std::move(planted));
  }
  return suite;
}

std::vector<SyntheticTaskSpec> default_specs(std::uint64_t seed, double noise_scale,
                                             std::size_t tasks) {
  std::vector<SyntheticTaskSpec> specs;
  for (std::size_t t = 0; t < tasks; ++t) {
    SyntheticTaskSpec s;
    s.task_id = "task" + std::to_string(t);
    s.seed = splitmix64(seed * 1000003ull + t + 1);
    s.noise_scale = noise_scale;
    s.activation.subspace_dim = 12;
    s.activation.shared_dim = 8;
    s.activation.anisotropy = 10.0;
    s.activation.shared_seed = seed;
    specs.push_back(std::move(s));
  }
  return specs;
}

namespace {

using nlohmann::json;

json spec_to_json(const SyntheticTaskSpec& s) {
  return {{"task_id", s.task_id},
          {"input_dim", s.input_dim},
          {"hidden_dim", s.hidden_dim},
          {"output_dim", s.output_dim},
          {"planted_rank", s.planted_rank},
          {"seed", s.seed},
          {"noise_scale", s.noise_scale},
          {"planted_scale", s.planted_scale},
          {"activation",
           {{"subspace_dim", s.activation.subspace_dim},
            {"anisotropy", s.activation.anisotropy},
            {"shared_dim", s.activation.shared_dim},
            {"shared_seed", s.activation.shared_seed},
            {"floor_std", s.activation.floor_std}}}};
}

SyntheticTaskSpec spec_from_json(const json& j) {
  SyntheticTaskSpec s;
  s.task_id = j.at("task_id").get<std::string>();
  s.input_dim = j.value("input_dim", s.input_dim);
  s.hidden_dim = j.value("hidden_dim", s.hidden_dim);
  s.output_dim = j.value("output_dim", s.output_dim);
  s.planted_rank = j.value("planted_rank", s.planted_rank);
  s.seed = j.value("seed", s.seed);
  s.noise_scale = j.value("noise_scale", s.noise_scale);
  s.planted_scale = j.value("planted_scale", s.planted_scale);
  if (j.contains("activation")) {
    const auto& a = j["activation"];
    s.activation.subspace_dim = a.value("subspace_dim", s.activation.subspace_dim);
    s.activation.anisotropy = a.value("anisotropy", s.activation.anisotropy);
    s.activation.shared_dim = a.value("shared_dim", s.activation.shared_dim);
    s.activation.shared_seed = a.value("shared_seed", s.activation.shared_seed);
    s.activation.floor_std = a.value("floor_std", s.activation.floor_std);
  }
  return s;
}

std::string read_text(const std::filesystem::path& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) fail(ErrorCode::kIoFailure, "cannot open " + path.string());
  std::ostringstream ss;
  ss << f.rdbuf();
  return ss.str();
}

}  // namespace

std::string suite_spec_json(const std::vector<SyntheticTaskSpec>& specs, std::uint64_t base_seed) {
  json tasks = json::array();
  for (const auto& s : specs) tasks.push_back(spec_to_json(s));
  return json{{"base_seed", base_seed}, {"tasks", tasks}}.dump(2) + "\n";
}

SyntheticSuite synth_suite_from_json(const std::string& text) {
  try {
    const json j = json::parse(text);
    if (j.contains("tasks") && j["tasks"].is_array()) {
      std::vector<SyntheticTaskSpec> specs;
      for (const auto& t : j["tasks"]) specs.push_back(spec_from_json(t));
      return synth_suite(specs, j.value("base_seed", std::uint64_t{0}));
    }
    const auto seed = j.value("seed", std::uint64_t{0});
    return synth_suite(default_specs(seed, j.value("noise_scale", 0.02),
                                     j.value("tasks", std::size_t{4})),
                       seed);
  } catch (const json::exception& e) {
    fail(ErrorCode::kInvalidArgument, std::string("bad suite description: ") + e.what());
  }
}

void write_suite(const SyntheticSuite& suite, const std::filesystem::path& dir) {
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  if (ec) fail(ErrorCode::kIoFailure, "cannot create " + dir.string() + ": " + ec.message());
  write_checkpoint(suite.base, dir / "base.safetensors");
  for (std::size_t t = 0; t < suite.specs.size(); ++t) {
    const auto& id = suite.specs[t].task_id;
    write_checkpoint(suite.finetuned[t], dir / (id + ".safetensors"));
    write_checkpoint(suite.references[t], dir / (id + ".ref.safetensors"));
  }
  std::ofstream f(dir / "suite.json", std::ios::binary | std::ios::trunc);
  f << suite_spec_json(suite.specs, suite.base_seed);
  if (!f) fail(ErrorCode::kIoFailure, "cannot write " + (dir / "suite.json").string());
}

SyntheticSuite read_suite(const std::filesystem::path& dir) {
  SyntheticSuite suite;
  try {
    const json j = json::parse(read_text(dir / "suite.json"));
    suite.base_seed = j.at("base_seed").get<std::uint64_t>();
    for (const auto& t : j.at("tasks")) suite.specs.push_back(spec_from_json(t));
  } catch (const json::exception& e) {
    fail(ErrorCode::kMalformedHeader, "bad suite.json in " + dir.string() + ": " + e.what());
  }
  suite.base = read_checkpoint(dir / "base.safetensors");
  for (const auto& spec : suite.specs) {
    spec.validate();
    suite.finetuned.push_back(read_checkpoint(dir / (spec.task_id + ".safetensors")));
    suite.references.push_back(read_checkpoint(dir / (spec.task_id + ".ref.safetensors")));
    std::map<std::string, Matrix> planted;
    for (const auto& name : suite.base.linear_layers) {
      planted.emplace(name, suite.references.back().layer_matrix(name) - suite.base.layer_matrix(name));
    }
    suite.planted.push_back(std::move(planted));
  }
  return suite;
}

std::size_t task_index(const SyntheticSuite& suite, const std::string& task_id) {
  for (std::size_t t = 0; t < suite.specs.size(); ++t) {
    if (suite.specs[t].task_id == task_id) return t;
  }
  fail(ErrorCode::kInvalidArgument, "suite has no task '" + task_id + "'");
}

Matrix sample_inputs(const SyntheticTaskSpec& spec, std::size_t n, std::uint64_t seed) {
  const Matrix u = task_basis(spec);
  const auto scales = direction_scales(spec.activation);
  auto rng = make_rng(spec.seed, "inputs", seed);
  Matrix z = gaussian(u.cols(), n, rng);
  for (std::size_t i = 0; i < z.rows(); ++i) {
    for (double& v : z.row(i)) v *= scales[i];
  }
  Matrix x = matmul(u, z);
  if (spec.activation.floor_std > 0.0) x += gaussian(spec.input_dim, n, rng, spec.activation.floor_std);
  return x;
}

Matrix hidden_activations(const Checkpoint& model, const Matrix& inputs) {
  Matrix h = matmul(model.layer_matrix(kHiddenLayer), inputs);
  for (double& v : h.values()) v = std::max(v, 0.0);
  return h;
}

Matrix forward(const Checkpoint& model, const Matrix& inputs) {
  return matmul(model.layer_matrix(kOutputLayer), hidden_activations(model, inputs));
}

std::vector<ActivationStream> run_activations(const Checkpoint& model,
                                              const SyntheticTaskSpec& spec,
                                              std::size_t n_samples, std::uint64_t seed) {
  if (n_samples == 0) fail(ErrorCode::kEmptyStream, "run_activations needs at least one sample");
  require_topology(model, spec);
  Matrix x = sample_inputs(spec, n_samples, seed);
  Matrix h = hidden_activations(model, x);
  std::vector<ActivationStream> out(2);
  out[0].layer_name = kHiddenLayer;
  out[0].batches.push_back(std::move(x));
  out[0].source_task = spec.task_id;
  out[1].layer_name = kOutputLayer;
  out[1].batches.push_back(std::move(h));
  out[1].source_task = spec.task_id;
  return out;
}

namespace {

// Evaluation inputs use a seed stream disjoint from covariance sampling.
Matrix eval_inputs(const SyntheticTaskSpec& spec, std::size_t n_eval, std::uint64_t seed) {
  if (n_eval == 0) fail(ErrorCode::kInvalidArgument, "evaluation needs at least one input");
  return sample_inputs(spec, n_eval, splitmix64(seed) ^ 0xE7A1u);
}

double agreement(const std::vector<std::size_t>& got, const std::vector<std::size_t>& want) {
  std::size_t agree = 0;
  for (std::size_t j = 0; j < got.size(); ++j) agree += got[j] == want[j] ? 1 : 0;
  return static_cast<double>(agree) / static_cast<double>(got.size());
}

}  // namespace

double eval_model(const Checkpoint& weights, const Checkpoint& reference,
                  const SyntheticTaskSpec& spec, std::size_t n_eval, std::uint64_t seed) {
  require_topology(weights, spec);
  require_topology(reference, spec);
  const Matrix x = eval_inputs(spec, n_eval, seed);
  return agreement(argmax_columns(forward(weights, x)), argmax_columns(forward(reference, x)));
}

SuiteEvalSet make_eval_set(const SyntheticSuite& suite, std::size_t n_eval, std::uint64_t seed) {
  SuiteEvalSet out;
  for (std::size_t t = 0; t < suite.specs.size(); ++t) {
    require_topology(suite.references[t], suite.specs[t]);
    out.inputs.push_back(eval_inputs(suite.specs[t], n_eval, seed));
    out.labels.push_back(argmax_columns(forward(suite.references[t], out.inputs.back())));
  }
  return out;
}

double mean_score(const Checkpoint& model, const SuiteEvalSet& eval) {
  double sum = 0.0;
  for (std::size_t t = 0; t < eval.inputs.size(); ++t) {
    sum += agreement(argmax_columns(forward(model, eval.inputs[t])), eval.labels[t]);
  }
  return sum / static_cast<double>(eval.inputs.size());
}

std::vector<CovarianceSet> suite_covariances(const SyntheticSuite& suite, std::size_t n_samples,
                                             std::uint64_t seed) {
  std::vector<CovarianceSet> out(suite.specs.size());
  parallel_for(suite.specs.size(), [&](std::size_t i) {
    out[i] = build_covariance_set(run_activations(suite.finetuned[i], suite.specs[i], n_samples, seed),
                                  suite.specs[i].task_id);
  });
  return out;
}

double cosine_similarity(const Matrix& a, const Matrix& b) {
  const double na = frobenius_norm(a);
  const double nb = frobenius_norm(b);
  if (na == 0.0 || nb == 0.0) return 0.0;
  double dot = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) dot += a.values()[i] * b.values()[i];
  return dot / (na * nb);
}

// ---------------------------------------------------------------------------

std::size_t preserved_rank(std::size_t full, std::size_t widest, std::size_t pruned) {
  if (widest == 0) return full;
  const auto drop = static_cast<std::size_t>(
      std::llround(static_cast<double>(pruned) * static_cast<double>(full) /
                   static_cast<double>(widest)));
  return drop >= full ? 0 : full - drop;
}

std::vector<RankSweepRow> rank_sweep(const SyntheticSuite& suite,
                                     const std::vector<std::size_t>& pruned_ranks,
                                     const RankSweepOptions& options) {
  const std::size_t k = suite.specs.size();
  const auto covs = suite_covariances(suite, options.cov_samples, options.seed);
  const auto& layers = suite.base.linear_layers;
  std::map<std::string, std::size_t> full;
  std::size_t widest = 0;
  for (const auto& name : layers) {
    const auto& t = suite.base.tensor(name);
    full[name] = static_cast<std::size_t>(std::min(t.shape[0], t.shape[1]));
    widest = std::max(widest, full[name]);
  }
  for (std::size_t p : pruned_ranks) {
    if (p > widest) fail(ErrorCode::kRankOutOfRange, "pruned rank exceeds the widest layer");
  }

  const std::size_t per_task = pruned_ranks.size() * options.variants.size();
  std::vector<RankSweepRow> rows(k * per_task);
  parallel_for(k * per_task, [&](std::size_t job) {
    const std::size_t t = job / per_task;
    const std::size_t p = (job % per_task) / options.variants.size();
    const std::size_t v = job % options.variants.size();
    DecomposerKind kind{options.variants[v], {}, options.seed};
    const CovarianceSet* cov = &covs[t];
    if (kind.variant == DecomposerVariant::kCoSvdCrossTask) {
      cov = &covs[(t + 1) % k];
      kind.cross_task_id = cov->task_id;
    }
    LayerRanks ranks;
    for (const auto& name : layers) ranks[name] = preserved_rank(full[name], widest, pruned_ranks[p]);
    const auto tv = pave_purify(suite.finetuned[t], suite.base, *cov, ranks, kind);
    const auto model = merge_task_arithmetic({tv}, suite.base, 1.0).weights;
    rows[job] = RankSweepRow{kind.name(), pruned_ranks[p], suite.specs[t].task_id,
                        eval_model(model, suite.references[t], suite.specs[t],
                                   options.eval_samples, options.seed),
                        options.seed};
  });
  return rows;
}

std::string rank_sweep_csv(const std::vector<RankSweepRow>& rows) {
  std::ostringstream out;
  out.precision(17);
  out << "decomposer,rank,task,score,seed\n";
  for (const auto& r : rows) {
    out << r.decomposer << ',' << r.rank << ',' << r.task << ',' << r.score << ',' << r.seed << '\n';
  }
  return out.str();
}

double rank_sweep_mean(const std::vector<RankSweepRow>& rows, const std::string& decomposer,
                       std::size_t rank) {
  double sum = 0.0;
  std::size_t n = 0;
  for (const auto& r : rows) {
    if (r.decomposer == decomposer && r.rank == rank) {
      sum += r.score;
      ++n;
    }
  }
  if (n == 0) fail(ErrorCode::kInvalidArgument, "no rows for " + decomposer);
  return sum / static_cast<double>(n);
}

double merged_mean_score(const SyntheticSuite& suite, const std::vector<TaskVectorSet>& deltas,
                         double lambda, const SuiteEvalSet& eval) {
  return mean_score(merge_task_arithmetic(deltas, suite.base, lambda).weights, eval);
}

MergeTrialResult merge_trial(const SyntheticSuite& suite, std::uint64_t cov_seed,
                             const MergeTrialOptions& options) {
  const std::size_t k = suite.specs.size();
  MergeTrialResult result;
  const auto validation = make_eval_set(suite, options.eval_samples, options.validation_seed);
  const auto test = make_eval_set(suite, options.eval_samples, options.test_seed);

  std::vector<TaskVectorSet> plain(k);
  for (std::size_t t = 0; t < k; ++t) plain[t] = plain_task_vector(suite.finetuned[t], suite.base);

  auto pick_lambda = [&](const std::vector<TaskVectorSet>& deltas, double& best_score) {
    double best = options.lambdas.front();
    best_score = -1.0;
    for (double lambda : options.lambdas) {
      const double s = merged_mean_score(suite, deltas, lambda, validation);
      if (s > best_score) {
        best_score = s;
        best = lambda;
      }
    }
    return best;
  };

  double ta_val = 0.0;
  result.ta_lambda = pick_lambda(plain, ta_val);
  result.ta_score = merged_mean_score(suite, plain, result.ta_lambda, test);

  // Per-task gaps of plain merging decide the order of full-rank exemptions.
  const auto ta_merged = merge_task_arithmetic(plain, suite.base, result.ta_lambda).weights;
  std::map<std::string, TaskScore> gaps;
  for (std::size_t t = 0; t < k; ++t) {
    TaskScore s;
    s.merged = eval_model(ta_merged, suite.references[t], suite.specs[t], options.eval_samples,
                          options.validation_seed);
    s.individual = eval_model(suite.finetuned[t], suite.references[t], suite.specs[t],
                              options.eval_samples, options.validation_seed);
    gaps[suite.specs[t].task_id] = s;
  }

  const auto covs = suite_covariances(suite, options.cov_samples, cov_seed);
  const auto profiles = build_profiles(suite.finetuned, covs);

  std::vector<RankAllocation> candidates;
  for (double rho : options.rhos) {
    RankAllocation current = allocate(profiles, rho, default_floor_ratio(rho));
    for (std::size_t step = 0; step < k; ++step) {
      candidates.push_back(current);
      if (step + 1 < k) current = progressive_full_rank(profiles, current, gaps);
    }
  }

  struct Scored {
    double val = -1.0;
    double lambda = 0.0;
    std::vector<TaskVectorSet> deltas;
  };
  std::vector<Scored> scored(candidates.size());
  parallel_for(candidates.size(), [&](std::size_t c) {
    const auto& alloc = candidates[c];
    std::vector<TaskVectorSet> deltas(k);
    for (std::size_t t = 0; t < k; ++t) {
      const auto& id = suite.specs[t].task_id;
      deltas[t] = alloc.full_rank_models.contains(id)
                      ? plain[t]
                      : pave_purify(suite.finetuned[t], suite.base, covs[t], alloc.ranks_for(id),
                                    options.decomposer);
    }
    scored[c].lambda = pick_lambda(deltas, scored[c].val);
    scored[c].deltas = std::move(deltas);
  });

  std::size_t best = 0;
  for (std::size_t c = 1; c < scored.size(); ++c) {
    if (scored[c].val > scored[best].val) best = c;
  }
  result.pave_lambda = scored[best].lambda;
  result.rho = candidates[best].global_ratio;
  result.exempt = candidates[best].full_rank_models;
  result.pave_score = merged_mean_score(suite, scored[best].deltas, result.pave_lambda, test);
  return result;
}

std::vector<double> sample_size_variances(const SyntheticSuite& suite,
                                          const SampleSizeOptions& options) {
  const std::size_t k = suite.specs.size();
  const std::size_t counts = options.sample_counts.size();
  std::vector<std::vector<double>> scores(counts, std::vector<double>(options.seeds, 0.0));
  const auto eval = make_eval_set(suite, options.eval_samples, options.eval_seed);
  parallel_for(counts * options.seeds, [&](std::size_t job) {
    const std::size_t c = job / options.seeds;
    const std::size_t s = job % options.seeds;
    const auto covs = suite_covariances(suite, options.sample_counts[c], 1000 + s);
    const auto profiles = build_profiles(suite.finetuned, covs);
    const auto alloc = allocate(profiles, options.rho, default_floor_ratio(options.rho));
    std::vector<TaskVectorSet> deltas(k);
    for (std::size_t t = 0; t < k; ++t) {
      deltas[t] = pave_purify(suite.finetuned[t], suite.base, covs[t],
                              alloc.ranks_for(suite.specs[t].task_id), DecomposerKind{});
    }
    scores[c][s] = merged_mean_score(suite, deltas, options.lambda, eval);
  });
  std::vector<double> out;
  for (const auto& v : scores) out.push_back(variance(v));
  return out;
}

}  // namespace vecforge::workbench
