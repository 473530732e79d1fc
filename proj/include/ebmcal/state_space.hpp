// Continuous and discretized linear-Gaussian state-space containers.
#pragma once

#include <utility>

#include <Eigen/Dense>

#include "ebmcal/linalg.hpp"

namespace ebmcal {

// dx/dt = A x + B f(t) + w(t), Cov(w) = Q per unit time.
struct ContinuousLGS {
  Eigen::MatrixXd A;
  Eigen::MatrixXd B;
  Eigen::MatrixXd Q;

  void validate() const {
    const Eigen::Index n = A.rows();
    if (A.cols() != n || B.rows() != n || Q.rows() != n || Q.cols() != n)
      throw NumericsError("ContinuousLGS: inconsistent dimensions");
    require_finite(A, "ContinuousLGS: A");
    require_finite(B, "ContinuousLGS: B");
    require_finite(Q, "ContinuousLGS: Q");
    if ((Q - Q.transpose()).cwiseAbs().maxCoeff() > 1e-12 * std::max(1.0, Q.cwiseAbs().maxCoeff()))
      throw NumericsError("ContinuousLGS: Q not symmetric");
  }
};

// x(t) = A_d x(t-1) + B_d f(t) + w_d(t),  y(t) = H_d x(t) + v(t).
// R_d is the baseline observation covariance; series-level per-time noise is
// added on top by the filter (see ObservationSeries).
struct LinearGaussianSSM {
  Eigen::MatrixXd A_d;
  Eigen::MatrixXd B_d;
  Eigen::MatrixXd Q_d;
  Eigen::MatrixXd H_d;
  Eigen::MatrixXd R_d;
  Eigen::VectorXd m0;
  Eigen::MatrixXd P0;

  Eigen::Index state_dim() const { return A_d.rows(); }
  Eigen::Index input_dim() const { return B_d.cols(); }
  Eigen::Index obs_dim() const { return H_d.rows(); }

  void validate() const {
    const Eigen::Index n = state_dim();
    const Eigen::Index q = obs_dim();
    if (A_d.cols() != n || B_d.rows() != n || Q_d.rows() != n || Q_d.cols() != n ||
        H_d.cols() != n || R_d.rows() != q || R_d.cols() != q || m0.size() != n ||
        P0.rows() != n || P0.cols() != n)
      throw NumericsError("LinearGaussianSSM: inconsistent dimensions");
    require_finite(A_d, "LinearGaussianSSM: A_d");
    require_finite(B_d, "LinearGaussianSSM: B_d");
    require_finite(Q_d, "LinearGaussianSSM: Q_d");
    require_finite(H_d, "LinearGaussianSSM: H_d");
    require_finite(R_d, "LinearGaussianSSM: R_d");
    require_finite(m0, "LinearGaussianSSM: m0");
    require_finite(P0, "LinearGaussianSSM: P0");
  }
};

// Discretize the continuous system and attach the observation model.
inline LinearGaussianSSM to_discrete(const ContinuousLGS& sys, double dt,
                                     Eigen::MatrixXd H_d, Eigen::MatrixXd R_d,
                                     Eigen::VectorXd m0, Eigen::MatrixXd P0) {
  sys.validate();
  DiscretizedLGS d = discretize(sys.A, sys.B, sys.Q, dt);
  LinearGaussianSSM out;
  out.A_d = std::move(d.A_d);
  out.B_d = std::move(d.B_d);
  out.Q_d = std::move(d.Q_d);
  out.H_d = std::move(H_d);
  out.R_d = std::move(R_d);
  out.m0 = std::move(m0);
  out.P0 = std::move(P0);
  out.validate();
  return out;
}

}  // namespace ebmcal
