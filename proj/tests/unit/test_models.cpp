// SPDX-License-Identifier: Apache-2.0
#include "latentkf/error.hpp"
#include "latentkf/ss_models.hpp"
#include "support/oracles.hpp"

#include <doctest.h>

#include <cmath>
#include <numbers>

using namespace latentkf;
using namespace latentkf::models;

TEST_CASE("lorenz transition matches the matrix exponential at J=5") {
  const auto states = testing::attractor_states(100, 11);
  CHECK(testing::max_transition_error(states, LorenzConfig{5, 0.02}) < 1e-4);
}

TEST_CASE("lorenz truncation error shrinks with the Taylor order") {
  const auto states = testing::attractor_states(20, 3);
  double prev = 1e9;
  for (int j = 1; j <= 6; ++j) {
    const double e = testing::max_transition_error(states, LorenzConfig{j, 0.02});
    CHECK(e < prev);
    prev = e;
  }
}

TEST_CASE("lorenz one-step map is locally second-order accurate") {
  // Freezing A(x) over one step leaves an O(dt^2) local error against the true flow.
  auto rk4 = [](const Eigen::Vector3d& x, double dt) {
    const Eigen::Vector3d k1 = testing::lorenz_field(x);
    const Eigen::Vector3d k2 = testing::lorenz_field(x + 0.5 * dt * k1);
    const Eigen::Vector3d k3 = testing::lorenz_field(x + 0.5 * dt * k2);
    const Eigen::Vector3d k4 = testing::lorenz_field(x + dt * k3);
    return Eigen::Vector3d(x + dt / 6.0 * (k1 + 2 * k2 + 2 * k3 + k4));
  };
  for (const auto& x : testing::attractor_states(10, 5)) {
    auto err = [&](double dt) { return (lorenz_evolve(x, LorenzConfig{5, dt}) - StateVector(rk4(x, dt))).norm(); };
    const double ratio = err(2e-3) / err(1e-3);
    CHECK(ratio > 3.5);
    CHECK(ratio < 4.5);
  }
}

TEST_CASE("analytic Jacobians agree with central differences") {
  LorenzDynamics lorenz;
  for (const auto& x : testing::attractor_states(10, 9)) {
    CHECK((lorenz.jacobian(x) - lorenz.numerical_jacobian(x)).norm() < 1e-6 * (1.0 + lorenz.jacobian(x).norm()));
  }
  PendulumDynamics pend;
  for (double phi : {-2.0, 0.1, 0.7, 3.0}) {
    StateVector x(2);
    x << phi, 0.4;
    CHECK((pend.jacobian(x) - pend.numerical_jacobian(x)).norm() < 1e-7);
  }
}

TEST_CASE("pendulum evolution is invariant under whole turns of the angle") {
  PendulumDynamics pend;
  StateVector x(2), y(2);
  x << 0.8, -1.2;
  y << 0.8 + 2.0 * std::numbers::pi, -1.2;
  const StateVector fx = pend.evolve(x), fy = pend.evolve(y);
  CHECK(fy(0) - fx(0) == doctest::Approx(2.0 * std::numbers::pi));
  CHECK(fy(1) == doctest::Approx(fx(1)));
  CHECK(pend.periods() == std::vector<double>{2.0 * std::numbers::pi, 0.0});
  CHECK(LorenzDynamics().periods() == std::vector<double>(3, 0.0));
}

TEST_CASE("pendulum single-step energy change is second order in dt") {
  auto energy = [](const StateVector& s) { return 0.5 * s(1) * s(1) - kGravity / kPendulumLength * std::cos(s(0)); };
  for (double phi : {0.3, 1.0, 2.0}) {
    StateVector x(2);
    x << phi, 0.5;
    auto change = [&](double dt) { return std::abs(energy(pendulum_evolve(x, dt, kGravity / kPendulumLength)) - energy(x)); };
    const double ratio = change(0.01) / change(0.005);
    CHECK(ratio > 3.0);
    CHECK(ratio < 5.0);
  }
}

TEST_CASE("wrap_near picks the branch nearest the reference") {
  const double tau = 2.0 * std::numbers::pi;
  CHECK(wrap_near(0.1 + 3 * tau, 0.0, tau) == doctest::Approx(0.1));
  CHECK(wrap_near(-0.1 - tau, 0.0, tau) == doctest::Approx(-0.1));
  CHECK(wrap_near(0.2, 6.0, tau) == doctest::Approx(0.2 + tau));
  CHECK(wrap_near(7.5, 0.0, 0.0) == 7.5);
  std::mt19937_64 rng(1);
  std::uniform_real_distribution<double> u(-50.0, 50.0);
  for (int i = 0; i < 1000; ++i) {
    const double x = u(rng), ref = u(rng);
    const double w = wrap_near(x, ref, tau);
    CHECK(std::abs(w - ref) <= tau / 2.0 + 1e-12);
    const double turns = (w - x) / tau;
    CHECK(std::abs(turns - std::round(turns)) < 1e-9);
  }
}

TEST_CASE("selection matrix picks the listed entries") {
  SelectionMatrix sel({0, 2}, 3);
  StateVector x(3);
  x << 1.0, 2.0, 3.0;
  CHECK(sel.apply(x) == Eigen::Vector2d(1.0, 3.0));
  CHECK(sel.dense() * x == sel.apply(x));
  CHECK_THROWS_AS(SelectionMatrix({3}, 3), InvalidArgument);
}

TEST_CASE("PSF peaks at 10 on the state location") {
  StateVector x(3);
  x << 12.0, 7.0, 1.5;
  const auto frame = render_psf(x);
  CHECK(frame.at(7, 12) == doctest::Approx(10.0).epsilon(1e-12));
  double peak = 0.0;
  for (double v : frame.pixels) peak = std::max(peak, v);
  CHECK(peak == frame.at(7, 12));
  CHECK(frame.at(7, 13) == doctest::Approx(10.0 * std::exp(-1.0 / 3.0)));
  x(2) = 0.0;
  CHECK_THROWS_AS(render_psf(x), InvalidArgument);
}

TEST_CASE("pendulum renderer draws a unit-profile rod from the pivot") {
  StateVector x(2);
  x << 0.0, 0.0;
  const auto frame = render_pendulum(x);
  double peak = 0.0;
  for (double v : frame.pixels) peak = std::max(peak, v);
  // Pixel centres lie within half a diagonal of the rod axis: exp(-0.25) <= peak <= 1.
  CHECK(peak <= 1.0);
  CHECK(peak >= std::exp(-0.25));
  // Hanging straight down the rod spans rows 7..18 on the centre line; far corners stay dark.
  CHECK(frame.at(15, 13) > 0.5);
  CHECK(frame.at(25, 2) < 1e-6);
  for (std::size_t r = 0; r < 28; ++r) CHECK(frame.at(r, 13) == doctest::Approx(frame.at(r, 14)));
  // Swinging to +90 degrees moves the tip to the right of the pivot.
  x(0) = std::numbers::pi / 2.0;
  const auto side = render_pendulum(x);
  CHECK(side.at(7, 22) > 0.5);
  CHECK(side.at(15, 14) < 1e-3);
}

TEST_CASE("salt-and-pepper corruption rate lies within the binomial band") {
  for (double p : {0.01, 0.1, 0.3}) {
    const auto s = testing::salt_pepper_stats(p, 1'000'000, 17);
    CHECK(s.fraction >= s.lo);
    CHECK(s.fraction <= s.hi);
  }
}

TEST_CASE("gaussian observation noise has the configured variance") {
  for (double r2 : {0.01, 1.0, 4.0}) {
    CHECK(std::abs(testing::gaussian_noise_variance(r2, 1'000'000, 23) / r2 - 1.0) < 0.02);
  }
}

TEST_CASE("noise level axes") {
  CHECK(ObservationNoise::gaussian_from_level(20.0).as_gaussian().variance == doctest::Approx(0.01));
  CHECK(ObservationNoise::salt_and_pepper_from_level(2.0).as_salt_and_pepper().probability == doctest::Approx(0.01));
  CHECK(noise_for_level(ModelKind::kLorenz, 2.0).is_gaussian() == false);
  CHECK(noise_for_level(ModelKind::kPendulum, 23.0).is_gaussian());
  CHECK(ObservationNoise::gaussian_from_level(13.0).level() == doctest::Approx(13.0));
}

TEST_CASE("apply_noise is deterministic for a fixed rng state") {
  ObservationFrame frame(4, 4);
  Rng a(5), b(5);
  const auto na = apply_noise(frame, ObservationNoise::gaussian(1.0), a);
  const auto nb = apply_noise(frame, ObservationNoise::gaussian(1.0), b);
  CHECK(na.pixels == nb.pixels);
}

TEST_CASE("invalid model inputs are rejected") {
  CHECK_THROWS_AS((LorenzConfig{0, 0.02}.validate()), InvalidArgument);
  CHECK_THROWS_AS((LorenzConfig{5, -1.0}.validate()), InvalidArgument);
  StateVector bad(3);
  bad << 1.0, std::nan(""), 0.0;
  CHECK_THROWS(lorenz_evolve(bad, LorenzConfig{}));
  CHECK_THROWS_AS(model_kind_from_string("cartpole"), InvalidArgument);
  CHECK(model_kind_from_string(to_string(ModelKind::kLorenz)) == ModelKind::kLorenz);
}
