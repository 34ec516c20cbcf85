// SPDX-License-Identifier: Apache-2.0
//
// State-space models used throughout the toolkit: the dynamics interface,
// the pendulum and Lorenz benchmark systems, their image renderers and the
// observation-noise models.
#pragma once

#include <Eigen/Dense>

#include <cmath>
#include <numbers>

#include <cstddef>
#include <cstdint>
#include <functional>
#include <memory>
#include <optional>
#include <random>
#include <string>
#include <variant>
#include <vector>

namespace latentkf::models {

using StateVector = Eigen::VectorXd;
using Matrix = Eigen::MatrixXd;
using Rng = std::mt19937_64;

/// Flattened row-major gray-scale image.
struct ObservationFrame {
  std::size_t height = 0;
  std::size_t width = 0;
  std::vector<double> pixels;

  ObservationFrame() = default;
  ObservationFrame(std::size_t h, std::size_t w) : height(h), width(w), pixels(h * w, 0.0) {}

  std::size_t size() const { return pixels.size(); }
  double& at(std::size_t row, std::size_t col) { return pixels[row * width + col]; }
  double at(std::size_t row, std::size_t col) const { return pixels[row * width + col]; }
};

/// p x m binary matrix picking the observable state entries.
class SelectionMatrix {
 public:
  SelectionMatrix(std::vector<std::size_t> indices, std::size_t state_dim);
  static SelectionMatrix identity(std::size_t state_dim);

  std::size_t rows() const { return indices_.size(); }
  std::size_t cols() const { return state_dim_; }
  const std::vector<std::size_t>& indices() const { return indices_; }

  Matrix dense() const;
  Eigen::VectorXd apply(const StateVector& x) const;

 private:
  std::vector<std::size_t> indices_;
  std::size_t state_dim_;
};

struct GaussianNoise {
  double variance;
};

struct SaltPepperNoise {
  double probability;
  double amplitude = 10.0;
};

class ObservationNoise {
 public:
  static ObservationNoise gaussian(double variance);
  static ObservationNoise salt_and_pepper(double probability, double amplitude = 10.0);

  /// Gaussian level axis: -10 log10(r^2).
  static ObservationNoise gaussian_from_level(double level);
  /// Salt-and-pepper level axis: -log10(p_r).
  static ObservationNoise salt_and_pepper_from_level(double level, double amplitude = 10.0);

  bool is_gaussian() const { return std::holds_alternative<GaussianNoise>(kind_); }
  const GaussianNoise& as_gaussian() const { return std::get<GaussianNoise>(kind_); }
  const SaltPepperNoise& as_salt_and_pepper() const { return std::get<SaltPepperNoise>(kind_); }
  double level() const;
  std::string describe() const;

 private:
  explicit ObservationNoise(std::variant<GaussianNoise, SaltPepperNoise> kind) : kind_(kind) {}
  std::variant<GaussianNoise, SaltPepperNoise> kind_;
};

/// Corrupts a frame in place-free fashion; deterministic for a fixed rng state.
ObservationFrame apply_noise(const ObservationFrame& frame, const ObservationNoise& noise, Rng& rng);

/// Noise-free state evolution f(x) and its Jacobian.
class Dynamics {
 public:
  virtual ~Dynamics() = default;
  virtual std::size_t state_dim() const = 0;
  virtual StateVector evolve(const StateVector& x) const = 0;
  /// Analytic Jacobian where the model provides one; falls back to central differences.
  virtual Matrix jacobian(const StateVector& x) const { return numerical_jacobian(x); }
  Matrix numerical_jacobian(const StateVector& x, double step = 1e-6) const;
  virtual std::string describe() const = 0;
  /// Period of each state entry; 0 marks a non-periodic entry. f is invariant under whole-period shifts.
  virtual std::vector<double> periods() const { return std::vector<double>(state_dim(), 0.0); }
};

/// x shifted by whole periods to lie within half a period of ref; x itself when period is 0.
inline double wrap_near(double x, double ref, double period) {
  return period > 0.0 ? x - period * std::round((x - ref) / period) : x;
}

// -- pendulum ---------------------------------------------------------------

inline constexpr double kGravity = 9.81;
inline constexpr double kPendulumLength = 1.0;
inline constexpr double kPendulumDt = 0.05;
inline constexpr double kPendulumQ2 = 0.1;

StateVector pendulum_evolve(const StateVector& x, double dt, double g_over_l);
Matrix pendulum_jacobian(const StateVector& x, double dt, double g_over_l);

class PendulumDynamics final : public Dynamics {
 public:
  explicit PendulumDynamics(double dt = kPendulumDt, double g_over_l = kGravity / kPendulumLength)
      : dt_(dt), g_over_l_(g_over_l) {}
  std::size_t state_dim() const override { return 2; }
  StateVector evolve(const StateVector& x) const override { return pendulum_evolve(x, dt_, g_over_l_); }
  Matrix jacobian(const StateVector& x) const override { return pendulum_jacobian(x, dt_, g_over_l_); }
  std::string describe() const override;
  /// The angle is periodic; the velocity is not.
  std::vector<double> periods() const override { return {2.0 * std::numbers::pi, 0.0}; }
  double dt() const { return dt_; }
  double g_over_l() const { return g_over_l_; }

 private:
  double dt_;
  double g_over_l_;
};

/// Rod of length 0.8*(W/2) hanging from (H/4, W/2), Gaussian line profile (sigma 1 px, peak 1).
ObservationFrame render_pendulum(const StateVector& x, std::size_t height = 28, std::size_t width = 28);

// -- Lorenz attractor ----------------------------------------------------------

inline constexpr double kLorenzQ2 = 0.005;

struct LorenzConfig {
  int taylor_order = 5;
  double dt = 0.02;
  void validate() const;
};

Matrix lorenz_system_matrix(const StateVector& x);
Matrix lorenz_transition_matrix(const StateVector& x, const LorenzConfig& cfg);
StateVector lorenz_evolve(const StateVector& x, const LorenzConfig& cfg);
/// d/dx [F(x) x], differentiating the truncated series termwise.
Matrix lorenz_jacobian(const StateVector& x, const LorenzConfig& cfg);

class LorenzDynamics final : public Dynamics {
 public:
  explicit LorenzDynamics(LorenzConfig cfg = {});
  std::size_t state_dim() const override { return 3; }
  StateVector evolve(const StateVector& x) const override { return lorenz_evolve(x, cfg_); }
  Matrix jacobian(const StateVector& x) const override { return lorenz_jacobian(x, cfg_); }
  std::string describe() const override;
  const LorenzConfig& config() const { return cfg_; }

 private:
  LorenzConfig cfg_;
};

/// Wraps another model and reports only central-difference Jacobians.
class NumericJacobianDynamics final : public Dynamics {
 public:
  explicit NumericJacobianDynamics(std::shared_ptr<const Dynamics> inner) : inner_(std::move(inner)) {}
  std::size_t state_dim() const override { return inner_->state_dim(); }
  StateVector evolve(const StateVector& x) const override { return inner_->evolve(x); }
  Matrix jacobian(const StateVector& x) const override { return numerical_jacobian(x); }
  std::string describe() const override { return inner_->describe() + "+numeric-jacobian"; }
  std::vector<double> periods() const override { return inner_->periods(); }

 private:
  std::shared_ptr<const Dynamics> inner_;
};

/// Raw Gaussian PSF on the pixel grid: pixel (row i, col j) sits at c = (j, i) and equals
/// 10 exp(-|c - (x1, x2)|^2 / (2 x3)).
ObservationFrame render_psf(const StateVector& x, std::size_t height = 28, std::size_t width = 28);

/// Affine viewport from attractor coordinates into the 28x28 grid plus variance shift.
struct LorenzViewport {
  double scale_x1 = 23.0 / 50.0;
  double scale_x2 = 23.0 / 60.0;
  double offset_x1 = 2.0 + 25.0 * (23.0 / 50.0);
  double offset_x2 = 2.0 + 30.0 * (23.0 / 60.0);
  double var_scale = 0.15;
  double var_offset = 1.0;

  StateVector to_psf(const StateVector& x) const;
};

ObservationFrame render_lorenz(const StateVector& x, std::size_t height = 28, std::size_t width = 28,
                               const LorenzViewport& viewport = {});

// -- assembled model -----------------------------------------------------------

enum class ModelKind { kPendulum, kLorenz };

std::string to_string(ModelKind kind);
ModelKind model_kind_from_string(const std::string& name);

/// The partially known model handed to generators and filters.
struct SSModelSpec {
  ModelKind kind = ModelKind::kPendulum;
  std::shared_ptr<const Dynamics> dynamics;
  std::function<ObservationFrame(const StateVector&)> sense;
  SelectionMatrix selection = SelectionMatrix::identity(1);
  double q2 = 0.0;
  std::optional<ObservationNoise> obs_noise;
  std::size_t height = 28;
  std::size_t width = 28;
  /// Brightest noise-free pixel value; encoders divide inputs by it.
  double pixel_peak = 1.0;

  std::size_t m() const { return dynamics->state_dim(); }
  std::size_t n() const { return height * width; }
  std::size_t p() const { return selection.rows(); }

  ObservationFrame observe(const StateVector& x, Rng& rng) const;
};

SSModelSpec make_pendulum_spec(std::optional<ObservationNoise> noise, double q2 = kPendulumQ2);
SSModelSpec make_lorenz_spec(std::optional<ObservationNoise> noise, LorenzConfig cfg = {},
                             double q2 = kLorenzQ2);

/// Same model with the dynamics swapped (Taylor-order or sampling mismatch).
SSModelSpec with_dynamics(const SSModelSpec& spec, std::shared_ptr<const Dynamics> dynamics);

/// Noise level on the axis each benchmark uses.
ObservationNoise noise_for_level(ModelKind kind, double level);

void require_finite(const StateVector& x, const char* what);

}  // namespace latentkf::models
