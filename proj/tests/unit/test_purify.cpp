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

#include <doctest.h>

#include <cmath>
#include <random>

#include "fixtures.hpp"
#include "oracles.hpp"
#include "vecforge/errors.hpp"
#include "vecforge/linalg.hpp"
#include "vecforge/purify.hpp"

using namespace vecforge;

namespace {

const DecomposerVariant kAllVariants[] = {
    DecomposerVariant::kPlainSvd,    DecomposerVariant::kScaledSvd,
    DecomposerVariant::kWhitenedSvd, DecomposerVariant::kCoSvd,
    DecomposerVariant::kCoSvdRandom, DecomposerVariant::kCoSvdCrossTask};

LayerRanks full_ranks(const Checkpoint& c) {
  LayerRanks r;
  for (const auto& name : c.linear_layers) {
    const auto& s = c.tensor(name).shape;
    r[name] = static_cast<std::size_t>(std::min(s[0], s[1]));
  }
  return r;
}

ErrorCode code_of(auto&& fn) {
  try {
    fn();
  } catch (const Error& e) {
    return e.code();
  }
  FAIL("expected an error");
  return ErrorCode::kInvalidArgument;
}

}  // namespace

TEST_CASE("plain task vector equals elementwise subtraction") {
  std::mt19937_64 rng(1);
  const auto base = fixture::random_checkpoint(fixture::default_layers(), rng);
  const auto ft = fixture::perturbed(base, rng, 0.3);
  const auto tv = plain_task_vector(ft, base);
  CHECK(tv.kind == TaskVectorKind::kPlain);
  REQUIRE(tv.layers.size() == base.tensors.size());
  for (const auto& [name, t] : base.tensors) {
    const auto a = ft.tensor(name).to_doubles();
    const auto b = t.to_doubles();
    const auto& d = tv.layers.at(name).values;
    for (std::size_t i = 0; i < d.size(); ++i) CHECK(d[i] == a[i] - b[i]);
  }
  const auto zero = plain_task_vector(base, base);
  for (const auto& [name, t] : zero.layers) {
    for (double v : t.values) CHECK(v == 0.0);
  }
}

TEST_CASE("mismatched topologies are rejected") {
  std::mt19937_64 rng(2);
  const auto base = fixture::random_checkpoint(fixture::default_layers(), rng);
  auto other = fixture::random_checkpoint({{"l0.weight", 5, 5}}, rng);
  CHECK(code_of([&] { (void)plain_task_vector(other, base); }) ==
        ErrorCode::kIncompatibleTopology);
}

TEST_CASE("decomposer examples") {
  const Matrix d3 = Matrix::diagonal(std::vector<double>{3, 2, 1});
  const auto out = apply_decomposer(d3, nullptr, {DecomposerVariant::kPlainSvd}, 2);
  CHECK(oracle::frob_diff(out.purified, Matrix::diagonal(std::vector<double>{3, 2, 0})) < 1e-14);
  CHECK(out.residual_energy == doctest::Approx(1.0));

  const CovarianceEntry cov{Matrix::diagonal(std::vector<double>{4, 1, 9}), 3, 0.0};
  for (auto v : kAllVariants) {
    const auto id = apply_decomposer(Matrix::identity(3), &cov, {v, "", 5}, 3, "x");
    CHECK(oracle::frob_diff(id.purified, Matrix::identity(3)) < 1e-12);
  }
  CHECK(code_of([&] {
          (void)apply_decomposer(d3, nullptr, {DecomposerVariant::kCoSvd}, 1);
        }) == ErrorCode::kMissingCovariance);
  CHECK(code_of([&] { (void)apply_decomposer(d3, &cov, {DecomposerVariant::kCoSvd}, 4); }) ==
        ErrorCode::kRankOutOfRange);
}

TEST_CASE("full rank reproduces the plain task vector for every variant") {
  std::mt19937_64 rng(3);
  for (int seed = 0; seed < 5; ++seed) {
    const auto base = fixture::random_checkpoint(fixture::default_layers(), rng);
    const auto ft = fixture::perturbed(base, rng, 0.2);
    auto covs = fixture::random_covariances(ft, rng, 40, "t");
    const auto plain = plain_task_vector(ft, base);
    for (auto v : kAllVariants) {
      DecomposerKind k{v, v == DecomposerVariant::kCoSvdCrossTask ? "t" : "", 9};
      const auto tv = pave_purify(ft, base, covs, full_ranks(base), k);
      for (const auto& name : base.linear_layers) {
        const Matrix got = tv.layers.at(name).to_matrix();
        const Matrix want = plain.layers.at(name).to_matrix();
        CHECK(oracle::frob_diff(got, want) <= 1e-5 * oracle::frob(ft.layer_matrix(name)));
      }
    }
  }
}

TEST_CASE("identity covariance makes co_svd equal plain_svd") {
  std::mt19937_64 rng(4);
  const Matrix w = oracle::random_matrix(6, 5, rng);
  const CovarianceEntry id{Matrix::identity(5), 1, 0.0};
  for (std::size_t r = 0; r <= 5; ++r) {
    const auto co = apply_decomposer(w, &id, {DecomposerVariant::kCoSvd}, r);
    const auto plain = apply_decomposer(w, nullptr, {DecomposerVariant::kPlainSvd}, r);
    CHECK(oracle::frob_diff(co.purified, plain.purified) < 1e-12);
  }
}

TEST_CASE("covariance scaling leaves every covariance-based variant unchanged") {
  std::mt19937_64 rng(5);
  for (int trial = 0; trial < 10; ++trial) {
    const Matrix w = oracle::random_matrix(7, 6, rng);
    const Matrix x = oracle::random_matrix(6, 30, rng);
    const CovarianceEntry c{oracle::mul(x, oracle::transpose(x)), 30, 0.0};
    for (double alpha : {0.1, 7.0, 10.0}) {
      const CovarianceEntry ac{alpha * c.matrix, 30, 0.0};
      for (auto v : {DecomposerVariant::kCoSvd, DecomposerVariant::kWhitenedSvd,
                     DecomposerVariant::kScaledSvd}) {
        const auto a = apply_decomposer(w, &c, {v}, 3);
        const auto b = apply_decomposer(w, &ac, {v}, 3);
        CHECK(oracle::rel_diff(b.purified, a.purified) < 1e-6);
      }
    }
  }
}

TEST_CASE("residual energy matches the spectrum and shrinks with rank") {
  std::mt19937_64 rng(6);
  const Matrix w = oracle::random_matrix(5, 6, rng);
  const Matrix x = oracle::random_matrix(6, 30, rng);
  const CovarianceEntry c{oracle::mul(x, oracle::transpose(x)), 30, 0.0};
  double prev = INFINITY;
  for (std::size_t r = 0; r <= 5; ++r) {
    const auto d = apply_decomposer(w, &c, {DecomposerVariant::kCoSvd}, r);
    double total = 0.0;
    double kept = 0.0;
    for (std::size_t j = 0; j < d.spectrum.size(); ++j) {
      total += d.spectrum[j] * d.spectrum[j];
      if (j < r) kept += d.spectrum[j] * d.spectrum[j];
    }
    CHECK(d.residual_energy >= 0.0);
    CHECK(d.residual_energy == doctest::Approx(total - kept).epsilon(1e-6).scale(total));
    CHECK(d.residual_energy <= prev);
    prev = d.residual_energy;
  }
}

TEST_CASE("co_svd recovers a planted direction better than plain_svd") {
  // W_FT = W_B + u v^T with activations concentrated along v.
  int wins = 0;
  for (std::uint64_t seed = 0; seed < 100; ++seed) {
    std::mt19937_64 rng(seed);
    const std::size_t m = 6, n = 6;
    const Matrix wb = oracle::random_matrix(m, n, rng);
    Matrix u = oracle::random_matrix(m, 1, rng);
    Matrix v = oracle::random_matrix(n, 1, rng);
    v *= 1.0 / oracle::frob(v);
    const Matrix planted = oracle::mul(u, oracle::transpose(v));
    const Matrix wft = wb + planted;
    std::normal_distribution<double> g(0.0, 1.0);
    Matrix x(n, 200);
    for (std::size_t s = 0; s < 200; ++s) {
      const double a = 3.0 * g(rng);
      for (std::size_t i = 0; i < n; ++i) x(i, s) = a * v(i, 0) + 0.05 * g(rng);
    }
    const CovarianceEntry c{oracle::mul(x, oracle::transpose(x)), 200, 0.0};
    const auto reg = regularize_invertible(c.matrix);
    const CovarianceEntry cr{reg.matrix, 200, reg.boost};
    const auto co = apply_decomposer(wft, &cr, {DecomposerVariant::kCoSvd}, 1);
    const auto pl = apply_decomposer(wft, nullptr, {DecomposerVariant::kPlainSvd}, 1);
    // Compare on the activation subspace, where the planted change acts.
    const double e_co = oracle::frob(oracle::mul(co.purified - wft, x));
    const double e_pl = oracle::frob(oracle::mul(pl.purified - wft, x));
    if (e_co < e_pl) ++wins;
  }
  CHECK(wins >= 90);
}

TEST_CASE("DARE semantics") {
  std::mt19937_64 rng(7);
  const auto base = fixture::random_checkpoint(fixture::default_layers(), rng);
  const auto ft = fixture::perturbed(base, rng, 0.5);
  const auto plain = plain_task_vector(ft, base);

  const auto same = dare_task_vector(plain, 0.0, 3);
  CHECK(same.kind == TaskVectorKind::kDare);
  CHECK(same.layers == plain.layers);

  const auto a = dare_task_vector(plain, 0.4, 11);
  const auto b = dare_task_vector(plain, 0.4, 11);
  CHECK(a.layers == b.layers);
  for (const auto& [name, t] : a.layers) {
    const auto& src = plain.layers.at(name).values;
    for (std::size_t i = 0; i < t.values.size(); ++i) {
      const double want = dare_keeps(11, name, i, 0.4) ? src[i] / 0.6 : 0.0;
      CHECK(t.values[i] == want);
    }
  }
  CHECK(code_of([&] { (void)dare_task_vector(plain, 1.0, 1); }) == ErrorCode::kInvalidRate);
  CHECK(code_of([&] { (void)dare_task_vector(plain, -0.1, 1); }) == ErrorCode::kInvalidRate);
  CHECK(code_of([&] { (void)dare_task_vector(a, 0.1, 1); }) == ErrorCode::kInvalidArgument);
}

TEST_CASE("DARE keeps the mean of unit entries") {
  TaskVectorSet tv;
  tv.layers["w"] = DenseTensor{{100000}, std::vector<double>(100000, 1.0)};
  const auto out = dare_task_vector(tv, 0.5, 99);
  double sum = 0.0;
  for (double v : out.layers.at("w").values) sum += v;
  const double mean = sum / 100000.0;
  CHECK(mean >= 0.98);
  CHECK(mean <= 1.02);
}

TEST_CASE("crosstask requires the named covariance and the container round-trips") {
  std::mt19937_64 rng(8);
  const auto base = fixture::random_checkpoint(fixture::default_layers(), rng);
  const auto ft = fixture::perturbed(base, rng, 0.2);
  const auto covs = fixture::random_covariances(ft, rng, 40, "other");
  LayerRanks ranks = full_ranks(base);
  for (auto& [name, r] : ranks) r -= 1;
  CHECK(code_of([&] {
          (void)pave_purify(ft, base, covs, ranks, {DecomposerVariant::kCoSvdCrossTask, "mine"});
        }) == ErrorCode::kInvalidArgument);
  auto tv = pave_purify(ft, base, covs, ranks, {DecomposerVariant::kCoSvdCrossTask, "other"});
  tv.task_id = "mine";
  CHECK(tv.kind == TaskVectorKind::kPave);
  CHECK(tv.purified.size() == base.linear_layers.size());
  for (const auto& [name, pl] : tv.purified) CHECK(pl.rank_used == ranks.at(name));

  const auto back = task_vectors_from_container(decode_container(encode_container(to_container(tv))));
  CHECK(back.task_id == tv.task_id);
  CHECK(back.kind == tv.kind);
  CHECK(back.layers == tv.layers);
  CHECK(back.provenance == tv.provenance);

  LayerRanks missing = ranks;
  missing.erase(missing.begin());
  CHECK(code_of([&] {
          (void)pave_purify(ft, base, covs, missing, {DecomposerVariant::kCoSvd});
        }) == ErrorCode::kRankOutOfRange);
}

TEST_CASE("decomposer names round-trip") {
  for (auto v : kAllVariants) {
    DecomposerKind k{v};
    CHECK(DecomposerKind::parse(k.name()).variant == v);
  }
  CHECK_THROWS_AS(DecomposerKind::parse("svd++"), Error);
  CHECK_FALSE(DecomposerKind{DecomposerVariant::kPlainSvd}.needs_covariance());
  CHECK(DecomposerKind{DecomposerVariant::kCoSvd}.needs_covariance());
}
