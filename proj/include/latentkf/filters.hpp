// SPDX-License-Identifier: Apache-2.0
//
// Extended Kalman filtering: predict/update primitives, the latent-space
// variant driven by encoder features (H = P), and the process-noise grid search.
#pragma once

#include "latentkf/ss_models.hpp"

#include <functional>
#include <vector>

namespace latentkf::filters {

using models::Matrix;
using models::StateVector;

/// Variance of the perturbation applied to the true x_0 to initialize every filter.
inline constexpr double kInitialEstimateVariance = 0.1;

struct EKFState {
  StateVector x;
  Matrix sigma;
};

struct Prediction {
  StateVector x;
  Matrix sigma;
  Matrix jacobian;
};

enum class CovarianceForm { kJoseph, kStandard };

struct UpdateReport {
  Matrix gain;
  /// Ridge added to S before inversion succeeded.
  bool regularized = false;
  /// S stayed singular; the prediction was kept.
  bool skipped = false;
};

/// x_{t|t-1} = f(x), Sigma_{t|t-1} = F Sigma F^T + Q with F the model Jacobian at x.
Prediction ekf_predict(const EKFState& state, const models::Dynamics& f, const Matrix& q);

/// Update with a linear measurement model z ~ H x. The result covariance is symmetrized.
EKFState ekf_update(const Prediction& pred, const Eigen::VectorXd& z, const Matrix& h, const Matrix& r,
                    UpdateReport* report = nullptr, CovarianceForm form = CovarianceForm::kJoseph);

/// True x_0 plus N(0, kInitialEstimateVariance I).
StateVector initial_estimate(const StateVector& x0, models::Rng& rng);

/// z_t for frame t given the prior x_{t|t-1}.
using FeatureFn = std::function<Eigen::VectorXd(std::size_t t, const StateVector& prior)>;

struct LatentEkfConfig {
  double q2 = 1e-2;
  Matrix r;  // p x p
};

/// Runs over steps 1..length-1 starting from (x0, I). Element 0 of the result is x0.
std::vector<StateVector> latent_ekf_run(const models::Dynamics& f, const models::SelectionMatrix& selection,
                                        const StateVector& x0, std::size_t length, const FeatureFn& features,
                                        const LatentEkfConfig& cfg, std::size_t* regularized_steps = nullptr);

/// {10^k : k = -4..1}.
std::vector<double> default_q2_grid();

/// Candidate with the smallest validation score; ties go to the smaller variance.
double tune_q2(const std::vector<double>& candidates, const std::function<double(double)>& validation_score);

}  // namespace latentkf::filters
