// SPDX-License-Identifier: Apache-2.0
#include "latentkf/error.hpp"
#include "latentkf/filters.hpp"
#include "support/oracles.hpp"

#include <doctest.h>

#include <cmath>

using namespace latentkf;
using namespace latentkf::filters;
using models::Matrix;
using models::StateVector;

TEST_CASE("random-walk EKF converges to the Riccati fixed point") {
  const auto oracle = testing::riccati_oracle(1.0, 1.0, 1.0);
  const double golden = (1.0 + std::sqrt(5.0)) / 2.0;
  CHECK(std::abs(oracle.prior_variance - golden) < 1e-12);
  const auto ekf = testing::ekf_steady_state(1.0, 1.0);
  CHECK(std::abs(ekf.prior_variance - golden) < 1e-6);
  CHECK(std::abs(ekf.gain - 0.6180339887) < 1e-6);
}

TEST_CASE("scalar EKF matches the Riccati oracle across noise ratios") {
  for (double q2 : {0.01, 0.5, 3.0})
    for (double r2 : {0.1, 1.0, 10.0}) {
      const auto o = testing::riccati_oracle(1.0, q2, r2);
      const auto e = testing::ekf_steady_state(q2, r2, 5000);
      CHECK(e.prior_variance == doctest::Approx(o.prior_variance).epsilon(1e-8));
      CHECK(e.gain == doctest::Approx(o.gain).epsilon(1e-8));
    }
}

TEST_CASE("Joseph and standard covariance forms agree on well-conditioned updates") {
  Prediction pred{StateVector::Zero(2), Matrix::Identity(2, 2) * 2.0, Matrix::Identity(2, 2)};
  pred.sigma(0, 1) = pred.sigma(1, 0) = 0.3;
  Matrix h(1, 2);
  h << 1.0, 0.0;
  const Matrix r = Matrix::Constant(1, 1, 0.5);
  Eigen::VectorXd z(1);
  z << 0.7;
  const auto a = ekf_update(pred, z, h, r, nullptr, CovarianceForm::kJoseph);
  const auto b = ekf_update(pred, z, h, r, nullptr, CovarianceForm::kStandard);
  CHECK((a.x - b.x).norm() < 1e-12);
  CHECK((a.sigma - b.sigma).norm() < 1e-12);
  CHECK((a.sigma - a.sigma.transpose()).norm() == 0.0);
  // Closed form for the observed entry: x = s/(s+r) z.
  CHECK(a.x(0) == doctest::Approx(2.0 / 2.5 * 0.7));
}

TEST_CASE("update with a singular innovation covariance regularizes") {
  Prediction pred{StateVector::Zero(1), Matrix::Zero(1, 1), Matrix::Identity(1, 1)};
  UpdateReport rep;
  const auto s = ekf_update(pred, Eigen::VectorXd::Ones(1), Matrix::Identity(1, 1), Matrix::Zero(1, 1), &rep);
  CHECK((rep.regularized || rep.skipped));
  CHECK(s.x.allFinite());
}

TEST_CASE("predict propagates covariance through the Jacobian") {
  testing::ScalarLinearDynamics f(0.5);
  EKFState s{StateVector::Constant(1, 2.0), Matrix::Constant(1, 1, 4.0)};
  const auto p = ekf_predict(s, f, Matrix::Constant(1, 1, 0.1));
  CHECK(p.x(0) == doctest::Approx(1.0));
  CHECK(p.sigma(0, 0) == doctest::Approx(0.25 * 4.0 + 0.1));
}

TEST_CASE("latent EKF on a linear model reduces to the Kalman filter") {
  testing::ScalarLinearDynamics f(1.0);
  const models::SelectionMatrix sel = models::SelectionMatrix::identity(1);
  std::vector<double> zs{0.3, -0.2, 0.5, 0.1};
  LatentEkfConfig cfg{0.5, Matrix::Constant(1, 1, 2.0)};
  const auto est = latent_ekf_run(f, sel, StateVector::Zero(1), 5,
                                  [&](std::size_t t, const StateVector&) { return Eigen::VectorXd::Constant(1, zs[t - 1]); },
                                  cfg);
  REQUIRE(est.size() == 5);
  CHECK(est[0](0) == 0.0);
  double x = 0.0, p = 1.0;
  for (std::size_t t = 1; t < 5; ++t) {
    p += 0.5;
    const double k = p / (p + 2.0);
    x += k * (zs[t - 1] - x);
    p *= 1.0 - k;
    CHECK(est[t](0) == doctest::Approx(x).epsilon(1e-12));
  }
}

TEST_CASE("latent EKF takes periodic features on the branch nearest the prediction") {
  models::PendulumDynamics f;
  const models::SelectionMatrix sel({0}, 2);
  StateVector x0(2);
  x0 << 0.5, 0.0;
  LatentEkfConfig cfg{0.01, Matrix::Constant(1, 1, 0.01)};
  const double tau = 2.0 * std::numbers::pi;
  auto run = [&](double shift) {
    return latent_ekf_run(f, sel, x0, 6,
                          [&](std::size_t, const StateVector& prior) { return Eigen::VectorXd::Constant(1, prior(0) + 0.01 + shift); },
                          cfg);
  };
  const auto a = run(0.0), b = run(3.0 * tau);
  for (std::size_t t = 0; t < a.size(); ++t) CHECK((a[t] - b[t]).norm() < 1e-9);
}

TEST_CASE("latent EKF rejects features of the wrong width") {
  testing::ScalarLinearDynamics f(1.0);
  LatentEkfConfig cfg{0.5, Matrix::Constant(1, 1, 2.0)};
  CHECK_THROWS_AS(latent_ekf_run(f, models::SelectionMatrix::identity(1), StateVector::Zero(1), 3,
                                 [](std::size_t, const StateVector&) { return Eigen::VectorXd::Zero(2); }, cfg),
                  ShapeError);
}

TEST_CASE("q2 grid search picks the minimum with ties to the smaller variance") {
  const auto grid = default_q2_grid();
  REQUIRE(grid.size() == 6);
  CHECK(grid.front() == doctest::Approx(1e-4));
  CHECK(grid.back() == doctest::Approx(10.0));
  CHECK(tune_q2(grid, [](double q) { return std::abs(std::log10(q) + 2.0); }) == doctest::Approx(1e-2));
  CHECK(tune_q2({1.0, 0.1}, [](double) { return 3.0; }) == doctest::Approx(0.1));
}

TEST_CASE("initial estimate perturbs the true state with variance 0.1") {
  models::Rng rng(4);
  double sum = 0.0;
  const int n = 200000;
  for (int i = 0; i < n; ++i) sum += initial_estimate(StateVector::Zero(1), rng).squaredNorm();
  CHECK(sum / n == doctest::Approx(kInitialEstimateVariance).epsilon(0.02));
}
