// SPDX-License-Identifier: Apache-2.0
#include "latentkf/ss_models.hpp"

#include "latentkf/error.hpp"

#include <algorithm>
#include <cmath>
#include <set>
#include <sstream>

namespace latentkf::models {

void require_finite(const StateVector& x, const char* what) {
  if (!x.allFinite()) {
    throw InvalidState(std::string(what) + ": non-finite state entry");
  }
}

// -- selection ---------------------------------------------------------------

SelectionMatrix::SelectionMatrix(std::vector<std::size_t> indices, std::size_t state_dim)
    : indices_(std::move(indices)), state_dim_(state_dim) {
  if (indices_.empty() || indices_.size() > state_dim_) {
    throw InvalidArgument("selection matrix needs 1 <= p <= m rows");
  }
  std::set<std::size_t> seen;
  for (std::size_t idx : indices_) {
    if (idx >= state_dim_) throw InvalidArgument("selection index out of range");
    if (!seen.insert(idx).second) throw InvalidArgument("selection rows must pick distinct states");
  }
}

SelectionMatrix SelectionMatrix::identity(std::size_t state_dim) {
  std::vector<std::size_t> idx(state_dim);
  for (std::size_t i = 0; i < state_dim; ++i) idx[i] = i;
  return SelectionMatrix(std::move(idx), state_dim);
}

Matrix SelectionMatrix::dense() const {
  Matrix p = Matrix::Zero(static_cast<Eigen::Index>(rows()), static_cast<Eigen::Index>(cols()));
  for (std::size_t r = 0; r < indices_.size(); ++r) {
    p(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(indices_[r])) = 1.0;
  }
  return p;
}

Eigen::VectorXd SelectionMatrix::apply(const StateVector& x) const {
  if (static_cast<std::size_t>(x.size()) != state_dim_) {
    throw ShapeError("selection expects a state of length " + std::to_string(state_dim_));
  }
  Eigen::VectorXd out(static_cast<Eigen::Index>(rows()));
  for (std::size_t r = 0; r < indices_.size(); ++r) {
    out(static_cast<Eigen::Index>(r)) = x(static_cast<Eigen::Index>(indices_[r]));
  }
  return out;
}

// -- noise -------------------------------------------------------------------

ObservationNoise ObservationNoise::gaussian(double variance) {
  if (!(variance > 0.0) || !std::isfinite(variance)) {
    throw InvalidArgument("gaussian observation noise needs r2 > 0");
  }
  return ObservationNoise(GaussianNoise{variance});
}

ObservationNoise ObservationNoise::salt_and_pepper(double probability, double amplitude) {
  if (!(probability > 0.0 && probability < 1.0)) {
    throw InvalidArgument("salt-and-pepper noise needs 0 < p_r < 1");
  }
  return ObservationNoise(SaltPepperNoise{probability, amplitude});
}

ObservationNoise ObservationNoise::gaussian_from_level(double level) {
  return gaussian(std::pow(10.0, -level / 10.0));
}

ObservationNoise ObservationNoise::salt_and_pepper_from_level(double level, double amplitude) {
  return salt_and_pepper(std::pow(10.0, -level), amplitude);
}

double ObservationNoise::level() const {
  if (is_gaussian()) return -10.0 * std::log10(as_gaussian().variance);
  return -std::log10(as_salt_and_pepper().probability);
}

std::string ObservationNoise::describe() const {
  std::ostringstream os;
  if (is_gaussian()) {
    os << "gaussian(r2=" << as_gaussian().variance << ")";
  } else {
    os << "salt_and_pepper(p=" << as_salt_and_pepper().probability
       << ",amplitude=" << as_salt_and_pepper().amplitude << ")";
  }
  return os.str();
}

ObservationFrame apply_noise(const ObservationFrame& frame, const ObservationNoise& noise, Rng& rng) {
  ObservationFrame out = frame;
  if (noise.is_gaussian()) {
    std::normal_distribution<double> normal(0.0, std::sqrt(noise.as_gaussian().variance));
    for (double& px : out.pixels) px += normal(rng);
  } else {
    const auto& sp = noise.as_salt_and_pepper();
    std::uniform_real_distribution<double> uniform(0.0, 1.0);
    for (double& px : out.pixels) {
      if (uniform(rng) < sp.probability) {
        px = uniform(rng) < 0.5 ? sp.amplitude : 0.0;
      }
    }
  }
  return out;
}

// -- dynamics -----------------------------------------------------------------

Matrix Dynamics::numerical_jacobian(const StateVector& x, double step) const {
  const auto m = x.size();
  Matrix jac(m, m);
  StateVector probe = x;
  for (Eigen::Index k = 0; k < m; ++k) {
    const double orig = probe(k);
    probe(k) = orig + step;
    const StateVector plus = evolve(probe);
    probe(k) = orig - step;
    const StateVector minus = evolve(probe);
    probe(k) = orig;
    jac.col(k) = (plus - minus) / (2.0 * step);
  }
  if (!jac.allFinite()) throw NumericalError("non-finite numerical Jacobian");
  return jac;
}

StateVector pendulum_evolve(const StateVector& x, double dt, double g_over_l) {
  if (x.size() != 2) throw ShapeError("pendulum state must have length 2");
  if (!(dt > 0.0)) throw InvalidArgument("pendulum dt must be positive");
  require_finite(x, "pendulum_evolve");
  const double s = std::sin(x(0));
  StateVector out(2);
  out(0) = x(0) + dt * x(1) - g_over_l * 0.5 * dt * dt * s;
  out(1) = x(1) - g_over_l * dt * s;
  return out;
}

Matrix pendulum_jacobian(const StateVector& x, double dt, double g_over_l) {
  if (x.size() != 2) throw ShapeError("pendulum state must have length 2");
  require_finite(x, "pendulum_jacobian");
  const double c = std::cos(x(0));
  Matrix jac(2, 2);
  jac << 1.0 - g_over_l * 0.5 * dt * dt * c, dt,
         -g_over_l * dt * c, 1.0;
  return jac;
}

std::string PendulumDynamics::describe() const {
  std::ostringstream os;
  os << "pendulum(dt=" << dt_ << ",g_over_l=" << g_over_l_ << ")";
  return os.str();
}

namespace {

double segment_distance_sq(double py, double px, double ay, double ax, double by, double bx) {
  const double dy = by - ay;
  const double dx = bx - ax;
  const double len2 = dy * dy + dx * dx;
  double t = len2 > 0.0 ? ((py - ay) * dy + (px - ax) * dx) / len2 : 0.0;
  t = std::clamp(t, 0.0, 1.0);
  const double ey = py - (ay + t * dy);
  const double ex = px - (ax + t * dx);
  return ey * ey + ex * ex;
}

}  // namespace

ObservationFrame render_pendulum(const StateVector& x, std::size_t height, std::size_t width) {
  if (x.size() != 2) throw ShapeError("pendulum state must have length 2");
  require_finite(x, "render_pendulum");
  constexpr double kSigma = 1.0;
  // Continuous coordinates with pixel centres at (i + 0.5, j + 0.5).
  const double pivot_y = static_cast<double>(height) / 4.0;
  const double pivot_x = static_cast<double>(width) / 2.0;
  const double length = 0.8 * static_cast<double>(width) / 2.0;
  const double tip_y = pivot_y + length * std::cos(x(0));
  const double tip_x = pivot_x + length * std::sin(x(0));
  ObservationFrame frame(height, width);
  for (std::size_t i = 0; i < height; ++i) {
    for (std::size_t j = 0; j < width; ++j) {
      const double d2 = segment_distance_sq(static_cast<double>(i) + 0.5, static_cast<double>(j) + 0.5,
                                            pivot_y, pivot_x, tip_y, tip_x);
      frame.at(i, j) = std::exp(-d2 / (2.0 * kSigma * kSigma));
    }
  }
  return frame;
}

// -- Lorenz --------------------------------------------------------------------

void LorenzConfig::validate() const {
  if (taylor_order < 1) throw InvalidArgument("Lorenz Taylor order must be >= 1");
  if (!(dt > 0.0)) throw InvalidArgument("Lorenz dt must be positive");
}

Matrix lorenz_system_matrix(const StateVector& x) {
  if (x.size() != 3) throw ShapeError("Lorenz state must have length 3");
  Matrix a(3, 3);
  a << -10.0, 10.0, 0.0,
       28.0, -1.0, -x(0),
       0.0, x(0), -8.0 / 3.0;
  return a;
}

Matrix lorenz_transition_matrix(const StateVector& x, const LorenzConfig& cfg) {
  cfg.validate();
  require_finite(x, "lorenz_transition_matrix");
  const Matrix adt = lorenz_system_matrix(x) * cfg.dt;
  Matrix f = Matrix::Identity(3, 3);
  Matrix term = Matrix::Identity(3, 3);
  for (int j = 1; j <= cfg.taylor_order; ++j) {
    term = term * adt / static_cast<double>(j);
    f += term;
  }
  return f;
}

StateVector lorenz_evolve(const StateVector& x, const LorenzConfig& cfg) {
  return lorenz_transition_matrix(x, cfg) * x;
}

Matrix lorenz_jacobian(const StateVector& x, const LorenzConfig& cfg) {
  cfg.validate();
  require_finite(x, "lorenz_jacobian");
  // A(x) = A0 + x1 E, so dF/dx1 = sum_j dt^j/j! sum_i A^i E A^(j-1-i).
  const Matrix a = lorenz_system_matrix(x);
  Matrix e = Matrix::Zero(3, 3);
  e(1, 2) = -1.0;
  e(2, 1) = 1.0;
  std::vector<Matrix> powers{Matrix::Identity(3, 3)};
  for (int j = 1; j < cfg.taylor_order; ++j) powers.push_back(powers.back() * a);
  Matrix f = Matrix::Identity(3, 3);
  Matrix df = Matrix::Zero(3, 3);
  double coeff = 1.0;
  for (int j = 1; j <= cfg.taylor_order; ++j) {
    coeff *= cfg.dt / static_cast<double>(j);
    f += coeff * powers[static_cast<std::size_t>(j - 1)] * a;
    Matrix d = Matrix::Zero(3, 3);
    for (int i = 0; i < j; ++i) {
      d += powers[static_cast<std::size_t>(i)] * e * powers[static_cast<std::size_t>(j - 1 - i)];
    }
    df += coeff * d;
  }
  Matrix jac = f;
  jac.col(0) += df * x;
  return jac;
}

LorenzDynamics::LorenzDynamics(LorenzConfig cfg) : cfg_(cfg) { cfg_.validate(); }

std::string LorenzDynamics::describe() const {
  std::ostringstream os;
  os << "lorenz(J=" << cfg_.taylor_order << ",dt=" << cfg_.dt << ")";
  return os.str();
}

ObservationFrame render_psf(const StateVector& x, std::size_t height, std::size_t width) {
  if (x.size() != 3) throw ShapeError("PSF state must have length 3");
  require_finite(x, "render_psf");
  if (!(x(2) > 0.0)) throw InvalidArgument("degenerate PSF spread: x3 must be positive");
  ObservationFrame frame(height, width);
  const double inv = 1.0 / (2.0 * x(2));
  for (std::size_t i = 0; i < height; ++i) {
    const double dy = static_cast<double>(i) - x(1);
    for (std::size_t j = 0; j < width; ++j) {
      const double dx = static_cast<double>(j) - x(0);
      frame.at(i, j) = 10.0 * std::exp(-(dx * dx + dy * dy) * inv);
    }
  }
  return frame;
}

StateVector LorenzViewport::to_psf(const StateVector& x) const {
  if (x.size() != 3) throw ShapeError("Lorenz state must have length 3");
  StateVector c(3);
  c(0) = scale_x1 * x(0) + offset_x1;
  c(1) = scale_x2 * x(1) + offset_x2;
  c(2) = var_scale * std::abs(x(2)) + var_offset;
  return c;
}

ObservationFrame render_lorenz(const StateVector& x, std::size_t height, std::size_t width,
                               const LorenzViewport& viewport) {
  require_finite(x, "render_lorenz");
  return render_psf(viewport.to_psf(x), height, width);
}

// -- assembled models -----------------------------------------------------------

std::string to_string(ModelKind kind) {
  return kind == ModelKind::kPendulum ? "pendulum" : "lorenz";
}

ModelKind model_kind_from_string(const std::string& name) {
  if (name == "pendulum") return ModelKind::kPendulum;
  if (name == "lorenz") return ModelKind::kLorenz;
  throw InvalidArgument("unknown model '" + name + "' (expected pendulum|lorenz)");
}

ObservationFrame SSModelSpec::observe(const StateVector& x, Rng& rng) const {
  ObservationFrame clean = sense(x);
  if (clean.size() != n()) throw ShapeError("sensing function produced wrong frame size");
  if (!obs_noise) return clean;
  return apply_noise(clean, *obs_noise, rng);
}

SSModelSpec make_pendulum_spec(std::optional<ObservationNoise> noise, double q2) {
  SSModelSpec spec;
  spec.kind = ModelKind::kPendulum;
  spec.dynamics = std::make_shared<PendulumDynamics>();
  spec.sense = [](const StateVector& x) { return render_pendulum(x, 28, 28); };
  spec.selection = SelectionMatrix({0}, 2);
  spec.q2 = q2;
  spec.obs_noise = noise;
  spec.pixel_peak = 1.0;
  return spec;
}

SSModelSpec make_lorenz_spec(std::optional<ObservationNoise> noise, LorenzConfig cfg, double q2) {
  SSModelSpec spec;
  spec.kind = ModelKind::kLorenz;
  spec.dynamics = std::make_shared<LorenzDynamics>(cfg);
  spec.sense = [](const StateVector& x) { return render_lorenz(x, 28, 28); };
  spec.selection = SelectionMatrix::identity(3);
  spec.q2 = q2;
  spec.obs_noise = noise;
  spec.pixel_peak = 10.0;
  return spec;
}

SSModelSpec with_dynamics(const SSModelSpec& spec, std::shared_ptr<const Dynamics> dynamics) {
  if (dynamics->state_dim() != spec.m()) throw ShapeError("replacement dynamics change the state size");
  SSModelSpec out = spec;
  out.dynamics = std::move(dynamics);
  return out;
}

ObservationNoise noise_for_level(ModelKind kind, double level) {
  return kind == ModelKind::kPendulum ? ObservationNoise::gaussian_from_level(level)
                                      : ObservationNoise::salt_and_pepper_from_level(level);
}

}  // namespace latentkf::models
