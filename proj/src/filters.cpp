// SPDX-License-Identifier: Apache-2.0
#include "latentkf/filters.hpp"

#include "latentkf/error.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

namespace latentkf::filters {

Prediction ekf_predict(const EKFState& state, const models::Dynamics& f, const Matrix& q) {
  const auto m = static_cast<Eigen::Index>(f.state_dim());
  if (state.x.size() != m || state.sigma.rows() != m || state.sigma.cols() != m || q.rows() != m || q.cols() != m) {
    throw ShapeError("ekf_predict: state, covariance and Q must match the model dimension");
  }
  Prediction pred;
  pred.jacobian = f.jacobian(state.x);
  if (!pred.jacobian.allFinite()) throw NumericalError("ekf_predict: non-finite Jacobian");
  pred.x = f.evolve(state.x);
  pred.sigma = pred.jacobian * state.sigma * pred.jacobian.transpose() + q;
  pred.sigma = 0.5 * (pred.sigma + pred.sigma.transpose());
  return pred;
}

EKFState ekf_update(const Prediction& pred, const Eigen::VectorXd& z, const Matrix& h, const Matrix& r,
                    UpdateReport* report, CovarianceForm form) {
  const Eigen::Index m = pred.x.size(), p = z.size();
  if (h.rows() != p || h.cols() != m || r.rows() != p || r.cols() != p) {
    throw ShapeError("ekf_update: H must be p x m and R p x p");
  }
  Matrix s = h * pred.sigma * h.transpose() + r;
  s = 0.5 * (s + s.transpose());
  Eigen::LDLT<Matrix> ldlt(s);
  auto usable = [&](const Eigen::LDLT<Matrix>& f) {
    if (f.info() != Eigen::Success || !f.isPositive()) return false;
    const auto d = f.vectorD();
    const double biggest = d.cwiseAbs().maxCoeff();
    return d.minCoeff() > biggest * 1e-14 && d.minCoeff() > 0.0;
  };
  bool regularized = false;
  if (!usable(ldlt)) {
    const double ridge = 1e-9 * std::max(s.trace(), 1e-300) / static_cast<double>(p);
    ldlt.compute(s + ridge * Matrix::Identity(p, p));
    regularized = true;
    if (!usable(ldlt)) {
      if (report) {
        report->gain = Matrix::Zero(m, p);
        report->regularized = true;
        report->skipped = true;
      }
      return {pred.x, pred.sigma};
    }
  }
  // K = Sigma H^T S^-1 computed as (S^-1 H Sigma)^T since S and Sigma are symmetric.
  const Matrix k = ldlt.solve(h * pred.sigma).transpose();
  EKFState out;
  out.x = pred.x + k * (z - h * pred.x);
  const Matrix ikh = Matrix::Identity(m, m) - k * h;
  if (form == CovarianceForm::kJoseph) {
    out.sigma = ikh * pred.sigma * ikh.transpose() + k * r * k.transpose();
  } else {
    out.sigma = ikh * pred.sigma;
  }
  out.sigma = 0.5 * (out.sigma + out.sigma.transpose());
  if (report) {
    report->gain = k;
    report->regularized = regularized;
    report->skipped = false;
  }
  return out;
}

StateVector initial_estimate(const StateVector& x0, models::Rng& rng) {
  std::normal_distribution<double> normal(0.0, std::sqrt(kInitialEstimateVariance));
  StateVector x = x0;
  for (Eigen::Index i = 0; i < x.size(); ++i) x(i) += normal(rng);
  return x;
}

std::vector<StateVector> latent_ekf_run(const models::Dynamics& f, const models::SelectionMatrix& selection,
                                        const StateVector& x0, std::size_t length, const FeatureFn& features,
                                        const LatentEkfConfig& cfg, std::size_t* regularized_steps) {
  const auto m = static_cast<Eigen::Index>(f.state_dim());
  const auto p = static_cast<Eigen::Index>(selection.rows());
  if (x0.size() != m) throw ShapeError("latent_ekf_run: x0 does not match the model dimension");
  if (cfg.r.rows() != p || cfg.r.cols() != p) throw ShapeError("latent_ekf_run: R must be p x p");
  if (!(cfg.q2 > 0.0)) throw InvalidArgument("latent_ekf_run: q2 must be positive");
  const Matrix h = selection.dense();
  const Matrix q = cfg.q2 * Matrix::Identity(m, m);
  const auto periods = f.periods();
  EKFState state{x0, Matrix::Identity(m, m)};
  std::vector<StateVector> out;
  out.reserve(length);
  out.push_back(x0);
  std::size_t regularized = 0;
  UpdateReport rep;
  for (std::size_t t = 1; t < length; ++t) {
    Prediction pred = ekf_predict(state, f, q);
    Eigen::VectorXd z = features(t, pred.x);
    if (z.size() != p) throw ShapeError("latent_ekf_run: feature length does not match the selection");
    // Innovations on periodic entries are taken on the nearest branch.
    for (Eigen::Index i = 0; i < p; ++i) {
      const auto j = static_cast<Eigen::Index>(selection.indices()[static_cast<std::size_t>(i)]);
      z(i) = models::wrap_near(z(i), pred.x(j), periods[static_cast<std::size_t>(j)]);
    }
    state = ekf_update(pred, z, h, cfg.r, &rep);
    if (rep.regularized) ++regularized;
    out.push_back(state.x);
  }
  if (regularized_steps) *regularized_steps = regularized;
  return out;
}

std::vector<double> default_q2_grid() {
  std::vector<double> grid;
  for (int k = -4; k <= 1; ++k) grid.push_back(std::pow(10.0, k));
  return grid;
}

double tune_q2(const std::vector<double>& candidates, const std::function<double(double)>& validation_score) {
  if (candidates.empty()) throw InvalidArgument("tune_q2: candidate list is empty");
  std::vector<double> sorted = candidates;
  std::sort(sorted.begin(), sorted.end());
  double best = sorted.front();
  double best_score = std::numeric_limits<double>::infinity();
  for (double q2 : sorted) {
    const double s = validation_score(q2);
    if (std::isfinite(s) && s < best_score) {
      best = q2;
      best_score = s;
    }
  }
  return best;
}

}  // namespace latentkf::filters
