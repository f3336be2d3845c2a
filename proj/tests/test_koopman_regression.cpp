#include <catch2/catch_amalgamated.hpp>

#include <Eigen/Dense>

#include <random>

#include "dktv/koopman_regression.hpp"
#include "oracles.hpp"

using dktv::check_rank;
using dktv::component_losses;
using dktv::fit_batch;
using dktv::KoopmanMatrices;
using dktv::RecursiveCache;
using dktv::recursive_update;
using Eigen::MatrixXd;

namespace {

MatrixXd gaussian(int rows, int cols, std::mt19937_64& rng, double scale = 1.0) {
  std::normal_distribution<double> dist(0.0, scale);
  MatrixXd m(rows, cols);
  for (int i = 0; i < rows; ++i)
    for (int j = 0; j < cols; ++j) m(i, j) = dist(rng);
  return m;
}

struct LiftedBatch {
  MatrixXd g, g_bar, u, x;
};

LiftedBatch random_lifted(int r, int m, int n, int beta, std::mt19937_64& rng) {
  LiftedBatch b;
  b.g = gaussian(r, beta, rng);
  b.g_bar = gaussian(r, beta, rng);
  b.u = gaussian(m, beta, rng);
  b.x = gaussian(n, beta, rng);
  return b;
}

}  // namespace

TEST_CASE("fit_batch: recovers the generating matrices from consistent data") {
  std::mt19937_64 rng(1);
  const int r = 4, m = 2, n = 3, beta = r + m + 5;
  const MatrixXd a0 = gaussian(r, r, rng);
  const MatrixXd b0 = gaussian(r, m, rng);
  const MatrixXd c0 = gaussian(n, r, rng);
  const MatrixXd g = gaussian(r, beta, rng);
  const MatrixXd u = gaussian(m, beta, rng);
  const MatrixXd g_bar = a0 * g + b0 * u;
  const MatrixXd x = c0 * g;
  const KoopmanMatrices k = fit_batch(g, g_bar, u, x);
  REQUIRE((k.A - a0).norm() < 1e-10);
  REQUIRE((k.B - b0).norm() < 1e-10);
  REQUIRE((k.C - c0).norm() < 1e-10);

  // Residual orthogonality of the least-squares solution.
  MatrixXd chi(r + m, beta);
  chi << g, u;
  MatrixXd ab(r, r + m);
  ab << k.A, k.B;
  REQUIRE(((g_bar - ab * chi) * chi.transpose()).norm() < 1e-8);
}

TEST_CASE("fit_batch: noisy data matches the independent pseudoinverse oracle") {
  std::mt19937_64 rng(2);
  const int r = 5, m = 1, n = 4, beta = 20;
  const auto b = random_lifted(r, m, n, beta, rng);
  const KoopmanMatrices k = fit_batch(b.g, b.g_bar, b.u, b.x);

  MatrixXd chi(r + m, beta);
  chi << b.g, b.u;
  const MatrixXd ab_want = b.g_bar * oracles::jacobi_pinv(chi);
  const MatrixXd c_want = b.x * oracles::jacobi_pinv(b.g);
  MatrixXd ab(r, r + m);
  ab << k.A, k.B;
  REQUIRE(oracles::relative_error(ab, ab_want) < 1e-9);
  REQUIRE(oracles::relative_error(k.C, c_want) < 1e-9);
}

TEST_CASE("fit_batch: preconditions") {
  std::mt19937_64 rng(3);
  const int r = 4, m = 1;
  {
    const auto b = random_lifted(r, m, 2, r + m - 1, rng);
    REQUIRE_THROWS_AS(fit_batch(b.g, b.g_bar, b.u, b.x), std::invalid_argument);
  }
  {
    auto b = random_lifted(r, m, 2, r + m + 4, rng);
    b.g.row(2) = b.g.row(1);  // duplicated row: rank deficient
    try {
      fit_batch(b.g, b.g_bar, b.u, b.x);
      FAIL("expected RankError");
    } catch (const dktv::RankError& e) {
      REQUIRE_FALSE(e.report().satisfied);
      REQUIRE(e.report().rank_G < r);
    }
  }
}

TEST_CASE("solve_min_norm: minimum-Frobenius-norm solution on rank-deficient data") {
  std::mt19937_64 rng(4);
  const int r = 4, beta = 10;
  MatrixXd g = gaussian(r, beta, rng);
  g.row(3) = g.row(0) + g.row(1);  // rank 3
  const MatrixXd y = gaussian(2, beta, rng);
  const MatrixXd got = dktv::solve_min_norm(g, y);
  const MatrixXd want = y * oracles::jacobi_pinv(g);
  REQUIRE(oracles::relative_error(got, want) < 1e-9);
  // Any perturbation inside the null space of the normal equations raises the norm.
  REQUIRE(got.norm() <= want.norm() + 1e-9);
}

TEST_CASE("component_losses: zero on exact fit, raw norms on the zero model") {
  std::mt19937_64 rng(5);
  const int r = 3, m = 1, n = 2, beta = 8;
  const MatrixXd a0 = gaussian(r, r, rng);
  const MatrixXd b0 = gaussian(r, m, rng);
  const MatrixXd c0 = gaussian(n, r, rng);
  const MatrixXd g = gaussian(r, beta, rng);
  const MatrixXd u = gaussian(m, beta, rng);
  const MatrixXd g_bar = a0 * g + b0 * u;
  const MatrixXd x = c0 * g;

  const auto exact = component_losses(g, g_bar, u, x, {a0, b0, c0});
  REQUIRE(exact.l1 < 1e-24);
  REQUIRE(exact.l2 < 1e-24);

  const KoopmanMatrices zero{MatrixXd::Zero(r, r), MatrixXd::Zero(r, m), MatrixXd::Zero(n, r)};
  const auto z = component_losses(g, g_bar, u, x, zero);
  REQUIRE(z.l1 == Catch::Approx(g_bar.squaredNorm() / beta));
  REQUIRE(z.l2 == Catch::Approx(x.squaredNorm() / beta));
}

TEST_CASE("component_losses: matches the elementwise summation oracle") {
  std::mt19937_64 rng(6);
  const int r = 4, m = 2, n = 3, beta = 9;
  const auto b = random_lifted(r, m, n, beta, rng);
  const KoopmanMatrices k{gaussian(r, r, rng), gaussian(r, m, rng), gaussian(n, r, rng)};
  const auto got = component_losses(b.g, b.g_bar, b.u, b.x, k);

  double l1 = 0.0, l2 = 0.0;
  for (int j = 0; j < beta; ++j) {
    l1 += (b.g_bar.col(j) - k.A * b.g.col(j) - k.B * b.u.col(j)).squaredNorm();
    l2 += (b.x.col(j) - k.C * b.g.col(j)).squaredNorm();
  }
  REQUIRE(std::abs(got.l1 - l1 / beta) < 1e-12);
  REQUIRE(std::abs(got.l2 - l2 / beta) < 1e-12);
}

TEST_CASE("component_losses: invariant under column permutation") {
  std::mt19937_64 rng(7);
  const int r = 3, m = 1, n = 2, beta = 7;
  const auto b = random_lifted(r, m, n, beta, rng);
  const KoopmanMatrices k{gaussian(r, r, rng), gaussian(r, m, rng), gaussian(n, r, rng)};
  const auto base = component_losses(b.g, b.g_bar, b.u, b.x, k);
  std::vector<int> perm{3, 0, 6, 1, 5, 2, 4};
  MatrixXd g(r, beta), gb(r, beta), u(m, beta), x(n, beta);
  for (int j = 0; j < beta; ++j) {
    g.col(j) = b.g.col(perm[j]);
    gb.col(j) = b.g_bar.col(perm[j]);
    u.col(j) = b.u.col(perm[j]);
    x.col(j) = b.x.col(perm[j]);
  }
  const auto shuffled = component_losses(g, gb, u, x, k);
  REQUIRE(std::abs(base.l1 - shuffled.l1) < 1e-12);
  REQUIRE(std::abs(base.l2 - shuffled.l2) < 1e-12);
}

TEST_CASE("check_rank: duplicated rows, healthy data, and short batches") {
  std::mt19937_64 rng(8);
  const int r = 4, m = 1;
  MatrixXd g = gaussian(r, 10, rng);
  g.row(1) = 2.0 * g.row(0);
  const auto bad = check_rank(g, gaussian(m, 10, rng));
  REQUIRE(bad.rank_G < r);
  REQUIRE_FALSE(bad.satisfied);

  const auto good = check_rank(gaussian(r, r + m + 3, rng), gaussian(m, r + m + 3, rng));
  REQUIRE(good.satisfied);

  // Fewer columns than r+m can never reach full row rank.
  const auto narrow = check_rank(gaussian(r, r + m - 1, rng), gaussian(m, r + m - 1, rng));
  REQUIRE_FALSE(narrow.satisfied);
}

TEST_CASE("recursive_update: equals the concatenated closed-form fit") {
  std::mt19937_64 rng(9);
  for (int m : {0, 2}) {
    for (int trial = 0; trial < 4; ++trial) {
      const int r = 4, n = 3, beta = r + m + 5;
      const int batches = 2 + trial % 4;
      std::vector<LiftedBatch> data;
      for (int i = 0; i < batches; ++i) data.push_back(random_lifted(r, m, n, beta, rng));

      RecursiveCache cache =
          RecursiveCache::from_batch(data[0].g, data[0].g_bar, data[0].u, data[0].x);
      KoopmanMatrices k = fit_batch(data[0].g, data[0].g_bar, data[0].u, data[0].x);
      for (int i = 1; i < batches; ++i) {
        const auto res = recursive_update(cache, k, data[i].g, data[i].g_bar, data[i].u, data[i].x);
        k = res.matrices;
      }

      MatrixXd g(r, beta * batches), gb(r, beta * batches), u(m, beta * batches),
          x(n, beta * batches);
      for (int i = 0; i < batches; ++i) {
        g.middleCols(i * beta, beta) = data[i].g;
        gb.middleCols(i * beta, beta) = data[i].g_bar;
        if (m > 0) u.middleCols(i * beta, beta) = data[i].u;
        x.middleCols(i * beta, beta) = data[i].x;
      }
      const KoopmanMatrices want = fit_batch(g, gb, u, x);
      INFO("m=" << m << " batches=" << batches);
      REQUIRE(oracles::relative_error(k.A, want.A) < 1e-8);
      if (m > 0) REQUIRE(oracles::relative_error(k.B, want.B) < 1e-8);
      REQUIRE(oracles::relative_error(k.C, want.C) < 1e-8);
      REQUIRE(cache.batches_absorbed == batches);
      REQUIRE(cache.inverse_consistent());
    }
  }
}

TEST_CASE("recursive_update: re-absorbing identical data matches the reweighted oracle") {
  std::mt19937_64 rng(10);
  const int r = 3, m = 1, n = 2, beta = r + m + 5;
  const auto b = random_lifted(r, m, n, beta, rng);
  RecursiveCache cache = RecursiveCache::from_batch(b.g, b.g_bar, b.u, b.x);
  KoopmanMatrices k = fit_batch(b.g, b.g_bar, b.u, b.x);
  const auto res = recursive_update(cache, k, b.g, b.g_bar, b.u, b.x);

  MatrixXd g(r, 2 * beta), gb(r, 2 * beta), u(m, 2 * beta), x(n, 2 * beta);
  g << b.g, b.g;
  gb << b.g_bar, b.g_bar;
  u << b.u, b.u;
  x << b.x, b.x;
  const KoopmanMatrices want = fit_batch(g, gb, u, x);
  REQUIRE(oracles::relative_error(res.matrices.A, want.A) < 1e-8);
  REQUIRE(oracles::relative_error(res.matrices.C, want.C) < 1e-8);
}

TEST_CASE("recursive_update: corrupted cache inverse triggers an automatic rebuild") {
  std::mt19937_64 rng(11);
  const int r = 3, m = 0, n = 2, beta = r + 5;
  const auto b0 = random_lifted(r, m, n, beta, rng);
  const auto b1 = random_lifted(r, m, n, beta, rng);
  RecursiveCache cache = RecursiveCache::from_batch(b0.g, b0.g_bar, b0.u, b0.x);
  KoopmanMatrices k = fit_batch(b0.g, b0.g_bar, b0.u, b0.x);

  cache.G_ab_inv.array() += 0.5;  // forced drift
  const auto res = recursive_update(cache, k, b1.g, b1.g_bar, b1.u, b1.x);
  REQUIRE(res.fallback_used);
  REQUIRE(cache.rebuilds >= 1);
  REQUIRE(cache.inverse_consistent());

  MatrixXd g(r, 2 * beta), gb(r, 2 * beta), x(n, 2 * beta);
  g << b0.g, b1.g;
  gb << b0.g_bar, b1.g_bar;
  x << b0.x, b1.x;
  const KoopmanMatrices want = fit_batch(g, gb, MatrixXd(0, 2 * beta), x);
  REQUIRE(oracles::relative_error(res.matrices.A, want.A) < 1e-8);
}
