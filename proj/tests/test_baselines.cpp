#include <catch2/catch_amalgamated.hpp>

#include <Eigen/Dense>

#include <cmath>
#include <random>

#include "dktv/baselines.hpp"
#include "oracles.hpp"

using dktv::Activation;
using dktv::DataBatch;
using dktv::ObservableNet;
using Eigen::MatrixXd;
using Eigen::VectorXd;

namespace {

DataBatch make_batch(const MatrixXd& states, const MatrixXd& inputs, int tau = 0) {
  DataBatch b;
  b.tau = tau;
  b.k_start = 0;
  const int beta = static_cast<int>(states.cols()) - 1;
  b.X = states.leftCols(beta);
  b.X_bar = states.rightCols(beta);
  b.U = inputs.rows() > 0 ? MatrixXd(inputs.leftCols(beta)) : MatrixXd(0, beta);
  return b;
}

DataBatch linear_batch(const MatrixXd& a, const MatrixXd& b, int samples, unsigned seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> dist;
  const int n = static_cast<int>(a.rows()), m = static_cast<int>(b.cols());
  MatrixXd states(n, samples), inputs(m, samples - 1);
  for (int i = 0; i < n; ++i) states(i, 0) = dist(rng);
  for (int k = 0; k + 1 < samples; ++k) {
    for (int i = 0; i < m; ++i) inputs(i, k) = dist(rng);
    states.col(k + 1) = a * states.col(k) + (m > 0 ? (b * inputs.col(k)).eval()
                                                   : VectorXd::Zero(n).eval());
  }
  return make_batch(states, inputs);
}

}  // namespace

TEST_CASE("tvdmd_fit: exact recovery on linear data") {
  MatrixXd a(2, 2), b(2, 1);
  a << 0.9, 0.1, -0.2, 0.8;
  b << 0.5, 1.0;
  const auto batch = linear_batch(a, b, 12, 1);
  const auto model = dktv::tvdmd_fit(batch);
  REQUIRE((model.A_lin - a).norm() < 1e-10);
  REQUIRE((model.B_lin - b).norm() < 1e-10);
  REQUIRE(model.window == batch.beta());
}

TEST_CASE("tvdmd_fit: autonomous fit matches the pseudoinverse oracle") {
  std::mt19937_64 rng(2);
  std::normal_distribution<double> dist;
  MatrixXd states(2, 11);
  for (int k = 0; k < 11; ++k)
    for (int i = 0; i < 2; ++i) states(i, k) = dist(rng);
  const auto batch = make_batch(states, MatrixXd(0, 10));
  const auto model = dktv::tvdmd_fit(batch);
  const MatrixXd want = batch.X_bar * oracles::jacobi_pinv(batch.X);
  REQUIRE(oracles::relative_error(model.A_lin, want) < 1e-9);
}

TEST_CASE("tvdmd_fit: constant trajectory is rank deficient") {
  const MatrixXd states = MatrixXd::Ones(2, 8);
  REQUIRE_THROWS_AS(dktv::tvdmd_fit(make_batch(states, MatrixXd(0, 7))), dktv::RankError);
}

TEST_CASE("tvdmd_predict: zero model maps to zero") {
  dktv::TvdmdModel model{MatrixXd::Zero(3, 3), MatrixXd::Zero(3, 1), 5};
  VectorXd x(3), u(1);
  x << 1.0, -2.0, 0.5;
  u << 3.0;
  REQUIRE(dktv::tvdmd_predict(model, x, u).isZero(0.0));
}

TEST_CASE("tvdmd equals the identity-lift zero-epoch configuration") {
  MatrixXd a(2, 2), b(2, 1);
  a << 0.7, 0.2, -0.1, 0.9;
  b << 1.0, 0.3;
  const auto batch = linear_batch(a, b, 14, 3);

  const auto tvdmd = dktv::tvdmd_fit(batch);
  // Identity lift, matrices from the closed-form fit, no training.
  ObservableNet net({{2, 2, Activation::kIdentity}});
  net.weight(0) = MatrixXd::Identity(2, 2);
  const auto k = dktv::fit_batch(batch.X, batch.X_bar, batch.U, batch.X);
  dktv::DkrSnapshot snap{net, k, 0, {}};

  std::mt19937_64 rng(4);
  std::normal_distribution<double> dist;
  for (int trial = 0; trial < 10; ++trial) {
    VectorXd x(2), u(1);
    x << dist(rng), dist(rng);
    u << dist(rng);
    const VectorXd lhs = dktv::tvdmd_predict(tvdmd, x, u);
    const VectorXd rhs = dktv::predict_one(snap, x, u);
    REQUIRE((lhs - rhs).norm() < 1e-12);
  }
  // The windowed reconstructions coincide as well.
  REQUIRE((dktv::tvdmd_reconstruct(tvdmd, batch) - dktv::reconstruct_batch(snap, batch)).norm() <
          1e-10);
}

TEST_CASE("single_dnn: zero-epoch training leaves the model unchanged") {
  auto model = dktv::make_single_dnn(
      {{3, 16, Activation::kGaussianRBF}, {16, 2, Activation::kIdentity}}, 7);
  auto adam = dktv::AdamState::for_params(model.net.param_count());
  const VectorXd before = model.net.params();
  const auto batch = linear_batch(MatrixXd::Identity(2, 2) * 0.9, MatrixXd::Ones(2, 1), 8, 5);
  const auto result = dktv::single_dnn_train(model, adam, batch, 0);
  REQUIRE_FALSE(result.diverged);
  REQUIRE(result.loss_trace.empty());
  REQUIRE((model.net.params() - before).norm() == 0.0);
}

TEST_CASE("single_dnn: memorizes a single transition") {
  MatrixXd states(2, 2);
  states << 0.4, -0.9, -0.2, 0.7;
  MatrixXd inputs(1, 1);
  inputs << 0.5;
  const auto batch = make_batch(states, inputs);
  auto model = dktv::make_single_dnn(
      {{3, 16, Activation::kGaussianRBF}, {16, 2, Activation::kIdentity}}, 11);
  auto adam = dktv::AdamState::for_params(model.net.param_count(), 1e-2, 0.0);
  const auto result = dktv::single_dnn_train(model, adam, batch, 2000);
  REQUIRE_FALSE(result.diverged);
  const VectorXd pred = dktv::single_dnn_predict(model, states.col(0), inputs.col(0));
  REQUIRE((pred - states.col(1)).norm() < 1e-3);
}

TEST_CASE("single_dnn: drives the loss down on exactly linear data") {
  MatrixXd a(2, 2), b(2, 1);
  a << 0.8, 0.1, -0.1, 0.85;
  b << 0.4, 0.9;
  const auto batch = linear_batch(a, b, 16, 9);
  // A single linear layer can represent the map exactly.
  auto model = dktv::make_single_dnn({{3, 2, Activation::kIdentity}}, 13);
  auto adam = dktv::AdamState::for_params(model.net.param_count(), 3e-2, 0.0);
  const auto result = dktv::single_dnn_train(model, adam, batch, 4000);
  REQUIRE_FALSE(result.diverged);
  REQUIRE(result.loss_trace.back() < 1e-6);
}

TEST_CASE("single_dnn: seeded training is reproducible") {
  const auto batch = linear_batch(MatrixXd::Identity(2, 2) * 0.9, MatrixXd::Ones(2, 1), 10, 15);
  auto run = [&] {
    auto model = dktv::make_single_dnn(
        {{3, 8, Activation::kGaussianRBF}, {8, 2, Activation::kIdentity}}, 21);
    auto adam = dktv::AdamState::for_params(model.net.param_count());
    dktv::single_dnn_train(model, adam, batch, 50);
    return model.net.params();
  };
  REQUIRE((run() - run()).norm() == 0.0);
}
