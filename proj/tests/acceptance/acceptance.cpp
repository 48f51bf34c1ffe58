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

// Acceptance runner: one PASS/FAIL line per criterion, followed by
// informational measurements. Exits nonzero when any criterion fails unless
// --report is given.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <functional>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "../unit/fixtures.hpp"
#include "../unit/merge_oracles.hpp"
#include "../unit/oracles.hpp"
#include "vecforge/linalg.hpp"
#include "vecforge/merge.hpp"
#include "vecforge/parallel.hpp"
#include "vecforge/purify.hpp"
#include "vecforge/rank_alloc.hpp"
#include "vecforge/workbench.hpp"

using namespace vecforge;
namespace wb = vecforge::workbench;

namespace {

struct Outcome {
  bool pass = false;
  std::string detail;
};

struct Criterion {
  std::string name;
  double budget_seconds;
  std::function<Outcome()> run;
  bool informational = false;
};

std::string fmt(const char* f, auto... args) {
  char buf[512];
  std::snprintf(buf, sizeof buf, f, args...);
  return buf;
}

LayerRanks full_ranks(const Checkpoint& c) {
  LayerRanks r;
  for (const auto& name : c.linear_layers) {
    const auto& s = c.tensor(name).shape;
    r[name] = static_cast<std::size_t>(std::min(s[0], s[1]));
  }
  return r;
}

// --- criteria ------------------------------------------------------------------

Outcome full_rank_identity() {
  double worst = 0.0;
  int layers = 0;
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    std::mt19937_64 rng(seed);
    const auto base = fixture::random_checkpoint(fixture::default_layers(), rng);
    const auto ft = fixture::perturbed(base, rng, 0.2);
    const auto covs = fixture::random_covariances(ft, rng, 64, "t");
    const auto plain = plain_task_vector(ft, base);
    const auto tv = pave_purify(ft, base, covs, full_ranks(base), DecomposerKind(DecomposerVariant::kCoSvd));
    for (const auto& name : base.linear_layers) {
      const Matrix got = tv.layers.at(name).to_matrix();
      const Matrix want = plain.layers.at(name).to_matrix();
      worst = std::max(worst, oracle::frob_diff(got, want) / oracle::frob(want));
      ++layers;
    }
  }
  return {worst <= 1e-5, fmt("%d layers, worst relative error %.2e (limit 1e-05)", layers, worst)};
}

Outcome covariance_scale_invariance() {
  double worst = 0.0;
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    std::mt19937_64 rng(100 + seed);
    const auto base = fixture::random_checkpoint({{"w", 8, 7}}, rng);
    const auto ft = fixture::perturbed(base, rng, 0.3);
    const auto covs = fixture::random_covariances(ft, rng, 40, "t");
    CovarianceSet scaled = covs;
    for (auto& [name, e] : scaled.entries) e.matrix = 7.0 * e.matrix;
    const LayerRanks ranks = {{"w", 3}};
    const auto a = pave_purify(ft, base, covs, ranks, DecomposerKind(DecomposerVariant::kCoSvd));
    const auto b = pave_purify(ft, base, scaled, ranks, DecomposerKind(DecomposerVariant::kCoSvd));
    const Matrix ma = a.layers.at("w").to_matrix();
    worst = std::max(worst, oracle::frob_diff(b.layers.at("w").to_matrix(), ma) / oracle::frob(ma));
  }
  return {worst <= 1e-6, fmt("10 layers, worst relative difference %.2e (limit 1e-06)", worst)};
}

Outcome eckart_young() {
  std::mt19937_64 rng(7);
  int trials = 0;
  int losses = 0;
  for (int m = 0; m < 50; ++m) {
    const Matrix a = oracle::random_matrix(6, 6, rng);
    const auto f = linalg::svd(a);
    for (std::size_t r = 1; r <= 5; ++r) {
      const double best = oracle::frob_diff(linalg::truncate(f, r), a);
      for (int c = 0; c < 200; ++c) {
        const Matrix comp =
            oracle::mul(oracle::random_matrix(6, r, rng), oracle::random_matrix(r, 6, rng));
        ++trials;
        if (!(best <= oracle::frob_diff(comp, a))) ++losses;
      }
    }
  }
  return {losses == 0, fmt("%d competitor comparisons, %d beat the truncation", trials, losses)};
}

std::vector<SpectralProfile> random_profiles(std::size_t k, const std::vector<std::size_t>& full,
                                             std::mt19937_64& rng) {
  std::uniform_real_distribution<double> u(0.01, 10.0);
  std::vector<SpectralProfile> out(k);
  for (std::size_t i = 0; i < k; ++i) {
    out[i].model_id = "m" + std::to_string(i);
    for (std::size_t l = 0; l < full.size(); ++l) {
      std::vector<double> s(full[l]);
      for (double& x : s) x = u(rng);
      std::sort(s.begin(), s.end(), std::greater<>());
      out[i].layers.push_back(SpectralProfile::make_layer("layer" + std::to_string(l), s));
    }
  }
  return out;
}

Outcome allocation_optimality() {
  std::mt19937_64 rng(11);
  std::uniform_int_distribution<std::size_t> kdist(1, 3), rdist(1, 6);
  std::uniform_real_distribution<double> u(0.05, 1.0);
  int matches = 0;
  for (int trial = 0; trial < 50; ++trial) {
    const std::size_t k = kdist(rng);
    const std::size_t full = rdist(rng);
    const auto p = random_profiles(k, {full}, rng);
    const double rho = u(rng);
    const double gamma = rho * u(rng);
    const auto alloc = allocate(p, rho, gamma);
    std::vector<std::size_t> r(k);
    std::vector<std::vector<double>> s(k);
    std::size_t total = 0;
    for (std::size_t i = 0; i < k; ++i) {
      r[i] = alloc.ranks.at(p[i].model_id).at("layer0");
      s[i] = p[i].layers[0].normalized;
      total += r[i];
    }
    const auto lo = static_cast<std::size_t>(std::floor(gamma * static_cast<double>(full)));
    if (oracle::canonical_mass(s, r) ==
        oracle::min_discarded_mass(s, std::vector<std::size_t>(k, lo), total)) {
      ++matches;
    }
  }
  return {matches == 50, fmt("%d/50 instances equal the exhaustive minimum", matches)};
}

Outcome allocation_invariants() {
  std::mt19937_64 rng(12);
  std::uniform_int_distribution<std::size_t> kdist(1, 6), rdist(1, 16), ldist(1, 4);
  std::uniform_real_distribution<double> u(0.05, 1.0);
  int violations = 0;
  for (int trial = 0; trial < 200; ++trial) {
    const std::size_t k = kdist(rng);
    std::vector<std::size_t> full(ldist(rng));
    for (auto& f : full) f = rdist(rng);
    const auto p = random_profiles(k, full, rng);
    const double rho = u(rng);
    const double gamma = rho * u(rng);
    std::set<std::string> exempt;
    if (k > 1 && rng() % 3 == 0) exempt.insert("m" + std::to_string(rng() % k));
    const auto alloc = allocate(p, rho, gamma, exempt);
    for (std::size_t l = 0; l < full.size(); ++l) {
      const std::string name = "layer" + std::to_string(l);
      const auto fl = static_cast<std::size_t>(std::floor(gamma * static_cast<double>(full[l])));
      std::size_t total = 0;
      bool all_at_floor = true;
      for (std::size_t i = 0; i < k; ++i) {
        const std::size_t r = alloc.ranks.at(p[i].model_id).at(name);
        total += r;
        if (r > full[l]) ++violations;
        if (exempt.contains(p[i].model_id)) {
          if (r != full[l]) ++violations;
        } else {
          if (r < fl) ++violations;
          all_at_floor = all_at_floor && r == fl;
        }
      }
      const auto budget =
          static_cast<std::size_t>(std::ceil(rho * static_cast<double>(k * full[l]) - 1e-9));
      if (total > budget && !all_at_floor) ++violations;
    }
  }
  return {violations == 0, fmt("200 allocations, %d violations", violations)};
}

Outcome dare_unbiasedness() {
  std::mt19937_64 rng(13);
  std::normal_distribution<double> g(0.0, 1.0);
  TaskVectorSet tv;
  tv.layers["w"] = DenseTensor{{64, 64}, std::vector<double>(64 * 64)};
  for (double& v : tv.layers["w"].values) v = g(rng);
  const auto& delta = tv.layers["w"].values;
  const std::size_t n = delta.size();
  const int masks = 1000;
  std::vector<double> sum(n, 0.0), sq(n, 0.0);
  for (int s = 0; s < masks; ++s) {
    const auto d = dare_task_vector(tv, 0.5, static_cast<std::uint64_t>(s));
    const auto& v = d.layers.at("w").values;
    for (std::size_t i = 0; i < n; ++i) {
      sum[i] += v[i];
      sq[i] += v[i] * v[i];
    }
  }
  // z_i = (mean_i - delta_i) / SE_i with the empirical per-element SE.
  int beyond = 0;
  double z_sum = 0.0;
  double z_max = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const double mean = sum[i] / masks;
    const double var = (sq[i] - masks * mean * mean) / (masks - 1);
    const double z = (mean - delta[i]) / std::sqrt(var / masks);
    z_sum += z;
    z_max = std::max(z_max, std::abs(z));
    if (std::abs(z) > 3.0) ++beyond;
  }
  // Under unbiasedness each |z| exceeds 3 with probability 0.0027; allow the
  // count up to the binomial mean plus 3 standard deviations. The pooled
  // mean deviation, in its own standard errors, must stay within 3.
  const double q = 0.0027;
  const double limit = n * q + 3.0 * std::sqrt(n * q * (1 - q));
  const double pooled = z_sum / std::sqrt(static_cast<double>(n));
  const bool pass = beyond <= limit && std::abs(pooled) <= 3.0;
  return {pass, fmt("%zu elements x %d masks: %d beyond 3 SE (null expectation %.1f, limit %.1f), "
                    "pooled deviation %.2f SE, max |z| %.2f",
                    n, masks, beyond, n * q, limit, pooled, z_max)};
}

Outcome decomposer_ordering() {
  int co_vs_plain = 0;
  int co_vs_cross = 0;
  double co_sum = 0.0, plain_sum = 0.0, cross_sum = 0.0;
  for (std::uint64_t s = 0; s < 100; ++s) {
    const auto suite = wb::synth_suite(wb::default_specs(s, 0.02), s);
    wb::RankSweepOptions opt;
    opt.variants = {DecomposerVariant::kCoSvd, DecomposerVariant::kPlainSvd,
                    DecomposerVariant::kCoSvdCrossTask};
    opt.seed = s;
    // Half of the widest layer's rank (32) is pruned.
    const auto rows = wb::rank_sweep(suite, {16}, opt);
    const double co = wb::rank_sweep_mean(rows, "co_svd", 16);
    const double plain = wb::rank_sweep_mean(rows, "plain_svd", 16);
    const double cross = wb::rank_sweep_mean(rows, "co_svd_crosstask", 16);
    co_vs_plain += co >= plain;
    co_vs_cross += co >= cross;
    co_sum += co;
    plain_sum += plain;
    cross_sum += cross;
  }
  return {co_vs_plain >= 90 && co_vs_cross >= 90,
          fmt("co_svd >= plain_svd in %d/100, co_svd >= co_svd_crosstask in %d/100 (need 90); "
              "mean scores co %.3f plain %.3f crosstask %.3f",
              co_vs_plain, co_vs_cross, co_sum / 100, plain_sum / 100, cross_sum / 100)};
}

constexpr double kNoiseBand[] = {0.01, 0.02, 0.04};

Outcome end_to_end_gain() {
  int wins = 0;
  double gain = 0.0;
  for (std::uint64_t s = 0; s < 100; ++s) {
    const auto suite = wb::synth_suite(wb::default_specs(s, kNoiseBand[s % 3]), s);
    const auto r = wb::merge_trial(suite, 500 + s);
    wins += r.pave_score >= r.ta_score;
    gain += r.pave_score - r.ta_score;
  }
  return {wins >= 70, fmt("PAVE >= plain task arithmetic in %d/100 suites (need 70); mean score "
                          "change %+.4f",
                          wins, gain / 100)};
}

Outcome sample_size_stability() {
  const wb::SampleSizeOptions opt;
  const std::size_t suites = 10;
  std::vector<double> mean_var(opt.sample_counts.size(), 0.0);
  int suites_ok = 0;
  for (std::uint64_t s = 0; s < suites; ++s) {
    const auto suite = wb::synth_suite(wb::default_specs(s, 0.02), s);
    const auto v = wb::sample_size_variances(suite, opt);
    int inv = 0;
    for (std::size_t i = 0; i < v.size(); ++i) {
      mean_var[i] += v[i] / suites;
      if (i > 0 && v[i] > v[i - 1]) ++inv;
    }
    suites_ok += inv <= 1;
  }
  int inversions = 0;
  std::string series;
  for (std::size_t i = 0; i < mean_var.size(); ++i) {
    if (i > 0 && mean_var[i] > mean_var[i - 1]) ++inversions;
    series += fmt("%s%zu:%.2e", i ? " " : "", opt.sample_counts[i], mean_var[i]);
  }
  return {inversions <= 1,
          fmt("mean cross-seed variance over %zu suites [%s], %d inversion(s); %d/%zu suites "
              "individually within one inversion",
              suites, series.c_str(), inversions, suites_ok, suites)};
}

Outcome baseline_oracles() {
  std::mt19937_64 rng(14);
  int ties_ok = 0;
  int emr_ok = 0;
  for (int trial = 0; trial < 50; ++trial) {
    const auto base = fixture::random_checkpoint(fixture::default_layers(), rng);
    std::vector<TaskVectorSet> deltas;
    const std::size_t k = 2 + trial % 3;
    for (std::size_t i = 0; i < k; ++i) {
      auto tv = plain_task_vector(fixture::perturbed(base, rng, 1.0), base);
      tv.task_id = "t" + std::to_string(i);
      deltas.push_back(std::move(tv));
    }
    const double keep = trial % 2 ? 0.5 : 0.2;
    const auto ties = merge_ties(deltas, base, 0.7, keep);
    const auto emr = merge_emr(deltas, base);
    bool t_ok = true;
    bool e_ok = true;
    for (const auto& [name, t] : base.tensors) {
      std::vector<std::vector<double>> taus;
      for (const auto& d : deltas) taus.push_back(d.layers.at(name).values);
      const auto want = oracle::ties_delta(taus, ties_keep_count(keep, t.numel()), 0.7);
      const auto b = t.to_doubles();
      const auto got = ties.weights.tensor(name).to_doubles();
      for (std::size_t i = 0; i < b.size(); ++i) t_ok = t_ok && got[i] == b[i] + want[i];
      const auto e = oracle::emr(taus);
      e_ok = e_ok && emr.emr->unified.at(name).values == e.uni;
      for (std::size_t i = 0; i < k; ++i) {
        const auto& id = deltas[i].task_id;
        e_ok = e_ok && emr.emr->masks.at(id).at(name).values == e.masks[i] &&
               emr.emr->rescalers.at(id).at(name) == e.rescalers[i];
      }
    }
    ties_ok += t_ok;
    emr_ok += e_ok;
  }
  return {ties_ok == 50 && emr_ok == 50,
          fmt("ties exact on %d/50, emr exact on %d/50", ties_ok, emr_ok)};
}

Outcome container_round_trip() {
  std::mt19937_64 rng(15);
  std::uniform_int_distribution<int> dim(1, 9), count(1, 6);
  std::normal_distribution<double> val(0.0, 1.0);
  int identical = 0;
  for (int i = 0; i < 100; ++i) {
    Checkpoint c;
    const int layers = count(rng);
    for (int l = 0; l < layers; ++l) {
      const std::string w = "block" + std::to_string(l) + ".weight";
      const std::string b = "block" + std::to_string(l) + ".bias";
      const std::int64_t out = dim(rng), in = dim(rng);
      std::vector<double> wv(static_cast<std::size_t>(out * in)), bv(static_cast<std::size_t>(out));
      for (double& x : wv) x = val(rng);
      for (double& x : bv) x = val(rng);
      const DType dt = rng() % 2 ? DType::kF32 : DType::kF64;
      c.tensors.emplace(w, TensorRecord::from_doubles(w, dt, {out, in}, wv));
      c.tensors.emplace(b, TensorRecord::from_doubles(b, dt, {out}, bv));
      c.linear_layers.push_back(w);
    }
    c.metadata["model_id"] = "model" + std::to_string(i);
    const auto first = encode_container(to_container(c));
    const auto back = checkpoint_from_container(decode_container(first));
    identical += encode_container(to_container(back)) == first && back == c;
  }
  return {identical == 100, fmt("%d/100 byte-identical after write-read-write", identical)};
}

// --- informational ---------------------------------------------------------------

Outcome ground_truth_recovery() {
  int wins = 0;
  for (std::uint64_t s = 0; s < 100; ++s) {
    const auto suite = wb::synth_suite(wb::default_specs(s, 0.02), s);
    const auto covs = wb::suite_covariances(suite, 1024, 900 + s);
    double pave_cos = 0.0;
    double plain_cos = 0.0;
    for (std::size_t t = 0; t < suite.specs.size(); ++t) {
      LayerRanks ranks;
      for (const auto& l : suite.base.linear_layers) ranks[l] = suite.specs[t].planted_rank;
      const auto pave = pave_purify(suite.finetuned[t], suite.base, covs[t], ranks,
                                    DecomposerKind(DecomposerVariant::kCoSvd));
      const auto plain = plain_task_vector(suite.finetuned[t], suite.base);
      for (const auto& [layer, planted] : suite.planted[t]) {
        pave_cos += wb::cosine_similarity(pave.layers.at(layer).to_matrix(), planted);
        plain_cos += wb::cosine_similarity(plain.layers.at(layer).to_matrix(), planted);
      }
    }
    wins += pave_cos > plain_cos;
  }
  return {wins >= 90, fmt("rank = planted rank: PAVE delta closer to the planted delta than the "
                          "plain delta in %d/100 suites (target 90)",
                          wins)};
}

Outcome clean_delta_bound() {
  int wins = 0;
  for (std::uint64_t s = 0; s < 20; ++s) {
    const auto suite = wb::synth_suite(wb::default_specs(s, kNoiseBand[s % 3]), s);
    const auto eval = wb::make_eval_set(suite, 2000, 2);
    std::vector<TaskVectorSet> plain, clean;
    for (std::size_t t = 0; t < suite.specs.size(); ++t) {
      plain.push_back(plain_task_vector(suite.finetuned[t], suite.base));
      clean.push_back(plain_task_vector(suite.references[t], suite.base));
    }
    double best_plain = 0.0, best_clean = 0.0;
    for (double l : {0.1, 0.3, 0.5, 0.7, 0.9}) {
      best_plain = std::max(best_plain, wb::merged_mean_score(suite, plain, l, eval));
      best_clean = std::max(best_clean, wb::merged_mean_score(suite, clean, l, eval));
    }
    wins += best_clean >= best_plain;
  }
  return {true, fmt("noise-free task vectors >= plain task vectors under task arithmetic in "
                    "%d/20 suites (upper bound on what denoising can gain)",
                    wins)};
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"vecforge acceptance criteria"};
  bool report = false;
  std::string only;
  unsigned threads = 0;
  app.add_flag("--report", report, "exit 0 once every criterion has run");
  app.add_option("--only", only, "run criteria whose name contains this text");
  app.add_option("--threads", threads, "worker threads (0 = all cores)");
  CLI11_PARSE(app, argc, argv);
  set_thread_count(threads);

  const std::vector<Criterion> criteria = {
      {"full-rank identity", 60, full_rank_identity},
      {"covariance-scale invariance", 10, covariance_scale_invariance},
      {"eckart-young spot check", 60, eckart_young},
      {"rank-allocation optimality", 60, allocation_optimality},
      {"budget and floor invariants", 60, allocation_invariants},
      {"dare unbiasedness", 60, dare_unbiasedness},
      {"decomposer ordering at half rank", 600, decomposer_ordering},
      {"end-to-end merging gain", 600, end_to_end_gain},
      {"sample-size stability", 600, sample_size_stability},
      {"baseline oracle equivalence", 60, baseline_oracles},
      {"container round-trip", 60, container_round_trip},
      {"ground-truth recovery", 600, ground_truth_recovery, true},
      {"noise-free merging bound", 600, clean_delta_bound, true},
  };

  int failed = 0;
  for (const auto& c : criteria) {
    if (!only.empty() && c.name.find(only) == std::string::npos) continue;
    const auto start = std::chrono::steady_clock::now();
    Outcome o;
    try {
      o = c.run();
    } catch (const std::exception& e) {
      o = {false, std::string("threw: ") + e.what()};
    }
    const double secs =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    const bool in_time = secs <= c.budget_seconds;
    const bool pass = o.pass && in_time;
    const char* tag = c.informational ? "INFO" : (pass ? "PASS" : "FAIL");
    std::printf("%s  %s: %s [%.1fs, limit %.0fs]\n", tag, c.name.c_str(), o.detail.c_str(), secs,
                c.budget_seconds);
    if (c.informational && !pass) std::printf("      (informational target not met)\n");
    std::fflush(stdout);
    if (!c.informational && !pass) ++failed;
  }
  std::printf("%d criterion(s) failed\n", failed);
  return failed == 0 || report ? 0 : 1;
}
