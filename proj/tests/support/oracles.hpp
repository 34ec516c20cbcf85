// SPDX-License-Identifier: Apache-2.0
//
// Independent reference computations shared by unit and acceptance tests.
#pragma once

#include "latentkf/filters.hpp"
#include "latentkf/ss_models.hpp"

#include <Eigen/Dense>
#include <unsupported/Eigen/MatrixFunctions>

#include <cmath>
#include <random>
#include <vector>

namespace latentkf::testing {

/// x' = a x, the scalar random-walk family used for the Riccati oracle.
class ScalarLinearDynamics final : public models::Dynamics {
 public:
  explicit ScalarLinearDynamics(double a = 1.0) : a_(a) {}
  std::size_t state_dim() const override { return 1; }
  models::StateVector evolve(const models::StateVector& x) const override { return a_ * x; }
  models::Matrix jacobian(const models::StateVector&) const override { return models::Matrix::Constant(1, 1, a_); }
  std::string describe() const override { return "scalar-linear"; }

 private:
  double a_;
};

struct RiccatiFixedPoint {
  double prior_variance;
  double gain;
};

/// Scalar Riccati recursion iterated to a fixed point: P <- a^2 (P - P^2 / (P + r2)) + q2.
inline RiccatiFixedPoint riccati_oracle(double a, double q2, double r2) {
  double p = 1.0;
  for (int i = 0; i < 10000; ++i) {
    const double next = a * a * (p - p * p / (p + r2)) + q2;
    if (std::abs(next - p) < 1e-15) break;
    p = next;
  }
  return {p, p / (p + r2)};
}

/// Steady state reached by the library's EKF on the scalar random walk.
inline RiccatiFixedPoint ekf_steady_state(double q2, double r2, int steps = 200) {
  ScalarLinearDynamics f(1.0);
  filters::EKFState s{models::StateVector::Zero(1), models::Matrix::Identity(1, 1)};
  const models::Matrix q = models::Matrix::Constant(1, 1, q2);
  const models::Matrix h = models::Matrix::Identity(1, 1);
  const models::Matrix r = models::Matrix::Constant(1, 1, r2);
  RiccatiFixedPoint out{0.0, 0.0};
  for (int t = 0; t < steps; ++t) {
    const auto pred = filters::ekf_predict(s, f, q);
    filters::UpdateReport rep;
    s = filters::ekf_update(pred, Eigen::VectorXd::Zero(1), h, r, &rep);
    out = {pred.sigma(0, 0), rep.gain(0, 0)};
  }
  return out;
}

/// Continuous Lorenz vector field (sigma 10, rho 28, beta 8/3).
inline Eigen::Vector3d lorenz_field(const Eigen::Vector3d& x) {
  return {10.0 * (x(1) - x(0)), x(0) * (28.0 - x(2)) - x(1), x(0) * x(1) - 8.0 / 3.0 * x(2)};
}

/// States on the attractor: RK4 integration from a random start after a transient.
inline std::vector<models::StateVector> attractor_states(std::size_t count, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> n01(0.0, 1.0);
  Eigen::Vector3d x(1.0 + n01(rng), 1.0 + n01(rng), 1.0 + n01(rng));
  const double h = 0.005;
  auto rk4 = [&](const Eigen::Vector3d& s) {
    const Eigen::Vector3d k1 = lorenz_field(s);
    const Eigen::Vector3d k2 = lorenz_field(s + 0.5 * h * k1);
    const Eigen::Vector3d k3 = lorenz_field(s + 0.5 * h * k2);
    const Eigen::Vector3d k4 = lorenz_field(s + h * k3);
    return Eigen::Vector3d(s + h / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4));
  };
  for (int i = 0; i < 4000; ++i) x = rk4(x);
  std::vector<models::StateVector> out;
  std::uniform_int_distribution<int> gap(20, 200);
  while (out.size() < count) {
    for (int i = gap(rng); i > 0; --i) x = rk4(x);
    out.push_back(models::StateVector(x));
  }
  return out;
}

/// Largest Frobenius distance between the library's F(x) and exp(A(x) dt).
inline double max_transition_error(const std::vector<models::StateVector>& states, const models::LorenzConfig& cfg) {
  double worst = 0.0;
  for (const auto& x : states) {
    const models::Matrix a = models::lorenz_system_matrix(x) * cfg.dt;
    const models::Matrix exact = a.exp();
    worst = std::max(worst, (models::lorenz_transition_matrix(x, cfg) - exact).norm());
  }
  return worst;
}

struct SaltPepperStats {
  double fraction;
  double lo, hi;  // 3-sigma binomial band
};

/// Fraction of pixels changed by salt-and-pepper noise over `pixels` draws from a mid-gray frame.
inline SaltPepperStats salt_pepper_stats(double p, std::size_t pixels, std::uint64_t seed) {
  models::ObservationFrame frame(1, pixels);
  for (double& v : frame.pixels) v = 5.0;
  models::Rng rng(seed);
  const auto noisy = models::apply_noise(frame, models::ObservationNoise::salt_and_pepper(p), rng);
  std::size_t changed = 0;
  for (double v : noisy.pixels) changed += v != 5.0;
  const double n = static_cast<double>(pixels);
  const double sigma = std::sqrt(p * (1.0 - p) / n);
  return {static_cast<double>(changed) / n, p - 3.0 * sigma, p + 3.0 * sigma};
}

/// Sample variance of Gaussian observation noise added to a zero frame.
inline double gaussian_noise_variance(double r2, std::size_t pixels, std::uint64_t seed) {
  models::ObservationFrame frame(1, pixels);
  models::Rng rng(seed);
  const auto noisy = models::apply_noise(frame, models::ObservationNoise::gaussian(r2), rng);
  double mean = 0.0;
  for (double v : noisy.pixels) mean += v;
  mean /= static_cast<double>(pixels);
  double var = 0.0;
  for (double v : noisy.pixels) var += (v - mean) * (v - mean);
  return var / static_cast<double>(pixels - 1);
}

}  // namespace latentkf::testing
