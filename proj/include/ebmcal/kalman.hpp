// Kalman filtering with per-entry missing observations, exact Gaussian
// log-likelihood, and forward-filtering backward-sampling.
#pragma once

#include <cmath>
#include <limits>
#include <numbers>
#include <vector>

#include <Eigen/Dense>

#include "ebmcal/linalg.hpp"
#include "ebmcal/rng.hpp"
#include "ebmcal/state_space.hpp"

namespace ebmcal {

// Times t = 1..T. A row may be partially or fully missing; a fully missing
// row is a pure prediction step. `noise`, when non-empty, holds one q x q
// covariance per time which is added to the system R_d.
struct ObservationSeries {
  Eigen::MatrixXd values;                          // T x q
  Eigen::Array<bool, Eigen::Dynamic, Eigen::Dynamic> missing;  // T x q
  std::vector<Eigen::MatrixXd> noise;              // empty or size T

  Eigen::Index size() const { return values.rows(); }
  Eigen::Index obs_dim() const { return values.cols(); }

  bool fully_missing(Eigen::Index t) const { return missing.row(t).all(); }
  bool any_observed() const { return !missing.all(); }

  static ObservationSeries all_missing(Eigen::Index T, Eigen::Index q) {
    ObservationSeries s;
    s.values = Eigen::MatrixXd::Constant(T, q, std::numeric_limits<double>::quiet_NaN());
    s.missing.setConstant(T, q, true);
    return s;
  }

  static ObservationSeries fully_observed(Eigen::MatrixXd vals) {
    ObservationSeries s;
    s.missing.setConstant(vals.rows(), vals.cols(), false);
    s.values = std::move(vals);
    return s;
  }

  void validate() const {
    if (missing.rows() != values.rows() || missing.cols() != values.cols())
      throw NumericsError("ObservationSeries: mask/value shape mismatch");
    if (!noise.empty() && static_cast<Eigen::Index>(noise.size()) != values.rows())
      throw NumericsError("ObservationSeries: per-time noise length mismatch");
    for (Eigen::Index t = 0; t < values.rows(); ++t)
      for (Eigen::Index i = 0; i < values.cols(); ++i)
        if (!missing(t, i) && !std::isfinite(values(t, i)))
          throw NumericsError("ObservationSeries: non-finite value not marked missing");
  }
};

struct FilterResult {
  std::vector<Eigen::VectorXd> x_pred;   // prior state mean, t = 1..T
  std::vector<Eigen::MatrixXd> P_pred;
  std::vector<Eigen::VectorXd> x_filt;   // posterior state mean
  std::vector<Eigen::MatrixXd> P_filt;
  std::vector<Eigen::VectorXd> y_pred;   // full-dimension observation forecast
  std::vector<Eigen::MatrixXd> S_pred;   // full-dimension forecast covariance
  double loglik = 0.0;
  int singular_obs_fallbacks = 0;        // pseudo-inverse used in an update
};

namespace detail {

template <bool Store>
inline double run_filter(const LinearGaussianSSM& ssm, const Eigen::MatrixXd& inputs,
                         const ObservationSeries& obs, FilterResult* result) {
  const Eigen::Index n = ssm.state_dim();
  const Eigen::Index q = ssm.obs_dim();
  const Eigen::Index T = obs.size();
  if (obs.obs_dim() != q) throw NumericsError("kalman_filter: observation dimension mismatch");
  if (inputs.rows() != T || inputs.cols() != ssm.input_dim())
    throw NumericsError("kalman_filter: forcing shape mismatch");
  obs.validate();

  if constexpr (Store) {
    result->x_pred.resize(T); result->P_pred.resize(T);
    result->x_filt.resize(T); result->P_filt.resize(T);
    result->y_pred.resize(T); result->S_pred.resize(T);
    result->loglik = 0.0;
    result->singular_obs_fallbacks = 0;
  }

  double loglik = 0.0;
  int fallbacks = 0;
  Eigen::VectorXd m = ssm.m0;
  Eigen::MatrixXd V = ssm.P0;

  // Persistent workspaces; nothing below allocates once these are sized.
  Eigen::VectorXd x_pred(n), x_filt(n), innov(q), w(q), y(q);
  Eigen::MatrixXd P_pred(n, n), P_filt(n, n), AV(n, n), R_t(q, q);
  Eigen::MatrixXd H_t(q, n), R_sub(q, q), PHt(n, q), S(q, q), K(n, q), IKH(n, n), JP(n, n);
  Eigen::LLT<Eigen::MatrixXd> llt(q);
  std::vector<Eigen::Index> rows;
  rows.reserve(q);

  for (Eigen::Index t = 0; t < T; ++t) {
    x_pred.noalias() = ssm.A_d * m;
    x_pred.noalias() += ssm.B_d * inputs.row(t).transpose();
    AV.noalias() = ssm.A_d * V;
    P_pred.noalias() = AV * ssm.A_d.transpose();
    P_pred += ssm.Q_d;
    for (Eigen::Index a = 0; a < n; ++a)
      for (Eigen::Index b = 0; b < a; ++b) {
        const double avg = 0.5 * (P_pred(a, b) + P_pred(b, a));
        P_pred(a, b) = avg;
        P_pred(b, a) = avg;
      }

    R_t = ssm.R_d;
    if (!obs.noise.empty()) R_t += obs.noise[t];

    rows.clear();
    for (Eigen::Index i = 0; i < q; ++i)
      if (!obs.missing(t, i)) rows.push_back(i);
    const Eigen::Index k = static_cast<Eigen::Index>(rows.size());

    if (k == 0) {
      x_filt = x_pred;
      P_filt = P_pred;
    } else {
      for (Eigen::Index a = 0; a < k; ++a) {
        H_t.row(a).noalias() = ssm.H_d.row(rows[a]);
        y[a] = obs.values(t, rows[a]);
        for (Eigen::Index b = 0; b < k; ++b) R_sub(a, b) = R_t(rows[a], rows[b]);
      }
      const auto H = H_t.topRows(k);
      const auto R = R_sub.topLeftCorner(k, k);
      PHt.leftCols(k).noalias() = P_pred * H.transpose();
      S.topLeftCorner(k, k).noalias() = H * PHt.leftCols(k);
      S.topLeftCorner(k, k) += R;
      for (Eigen::Index a = 0; a < k; ++a)
        for (Eigen::Index b = 0; b < a; ++b) {
          const double avg = 0.5 * (S(a, b) + S(b, a));
          S(a, b) = avg;
          S(b, a) = avg;
        }

      innov.head(k) = y.head(k);
      innov.head(k).noalias() -= H * x_pred;

      double logdet = 0.0;
      double quad = 0.0;
      bool pseudo = false;
      llt.compute(S.topLeftCorner(k, k));
      if (llt.info() == Eigen::Success && llt.matrixLLT().diagonal().head(k).minCoeff() > 0.0) {
        K.leftCols(k).noalias() = PHt.leftCols(k);
        llt.solveInPlace(K.leftCols(k).transpose());
        for (Eigen::Index i = 0; i < k; ++i) logdet += 2.0 * std::log(llt.matrixLLT()(i, i));
        w.head(k) = innov.head(k);
        llt.matrixL().solveInPlace(w.head(k));
        quad = w.head(k).squaredNorm();
      } else {
        // Exact observation of a deterministic direction: drop the null space.
        pseudo = true;
        Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(S.topLeftCorner(k, k));
        const double tol = 1e-12 * std::max(eig.eigenvalues().cwiseAbs().maxCoeff(), 1e-300);
        Eigen::VectorXd inv_lam = Eigen::VectorXd::Zero(k);
        for (Eigen::Index i = 0; i < k; ++i) {
          if (eig.eigenvalues()[i] > tol) {
            inv_lam[i] = 1.0 / eig.eigenvalues()[i];
            logdet += std::log(eig.eigenvalues()[i]);
          }
        }
        const Eigen::MatrixXd S_pinv =
            eig.eigenvectors() * inv_lam.asDiagonal() * eig.eigenvectors().transpose();
        K.leftCols(k).noalias() = PHt.leftCols(k) * S_pinv;
        quad = innov.head(k).dot(S_pinv * innov.head(k));
      }

      x_filt = x_pred;
      x_filt.noalias() += K.leftCols(k) * innov.head(k);
      // Joseph form keeps exact (zero-noise) observations PSD.
      IKH.setIdentity(n, n);
      IKH.noalias() -= K.leftCols(k) * H;
      JP.noalias() = IKH * P_pred;
      P_filt.noalias() = JP * IKH.transpose();
      PHt.leftCols(k).noalias() = K.leftCols(k) * R;  // reuse as K R buffer
      P_filt.noalias() += PHt.leftCols(k) * K.leftCols(k).transpose();
      for (Eigen::Index a = 0; a < n; ++a)
        for (Eigen::Index b = 0; b < a; ++b) {
          const double avg = 0.5 * (P_filt(a, b) + P_filt(b, a));
          P_filt(a, b) = avg;
          P_filt(b, a) = avg;
        }

      loglik += -0.5 * (static_cast<double>(k) * std::log(2.0 * std::numbers::pi) +
                        logdet + quad);
      if (pseudo) ++fallbacks;
    }

    if constexpr (Store) {
      result->x_pred[t] = x_pred;
      result->P_pred[t] = P_pred;
      result->x_filt[t] = x_filt;
      result->P_filt[t] = P_filt;
      result->y_pred[t].noalias() = ssm.H_d * x_pred;
      result->S_pred[t].noalias() = ssm.H_d * P_pred * ssm.H_d.transpose();
      result->S_pred[t] += R_t;
    }

    m.swap(x_filt);
    V.swap(P_filt);
  }

  if constexpr (Store) {
    result->loglik = loglik;
    result->singular_obs_fallbacks = fallbacks;
  }
  if (std::isnan(loglik)) throw NumericsError("kalman_filter: log-likelihood is NaN");
  return loglik;
}

}  // namespace detail

inline FilterResult kalman_filter(const LinearGaussianSSM& ssm, const Eigen::MatrixXd& inputs,
                                  const ObservationSeries& obs) {
  FilterResult result;
  detail::run_filter<true>(ssm, inputs, obs, &result);
  return result;
}

// In-place variant: reuses the result's storage across calls of the same
// shape, which matters inside sampler loops.
inline void kalman_filter_into(const LinearGaussianSSM& ssm, const Eigen::MatrixXd& inputs,
                               const ObservationSeries& obs, FilterResult& result) {
  detail::run_filter<true>(ssm, inputs, obs, &result);
}

// Log-likelihood only; skips trajectory storage.
inline double kalman_loglik(const LinearGaussianSSM& ssm, const Eigen::MatrixXd& inputs,
                            const ObservationSeries& obs) {
  return detail::run_filter<false>(ssm, inputs, obs, nullptr);
}

// Joint posterior draw of the state trajectory (T x n, times 1..T).
// Backward gain G(t) = V(t) A_d' P_pred(t+1)^{-1}; a singular prediction
// covariance is ridged and counted.
inline Eigen::MatrixXd ffbs_sample(const FilterResult& filter, const LinearGaussianSSM& ssm,
                                   RngStream& rng, int* ridge_count = nullptr) {
  const Eigen::Index T = static_cast<Eigen::Index>(filter.x_filt.size());
  if (T == 0) throw NumericsError("ffbs_sample: empty filter result");
  const Eigen::Index n = ssm.state_dim();

  Eigen::MatrixXd draws(T, n);
  Eigen::VectorXd x = filter.x_filt[T - 1] +
                      safe_cholesky(filter.P_filt[T - 1]) * rng.normal_vector(n);
  draws.row(T - 1) = x.transpose();

  for (Eigen::Index t = T - 2; t >= 0; --t) {
    const Eigen::MatrixXd& Pp = filter.P_pred[t + 1];
    Eigen::MatrixXd W = ssm.A_d * filter.P_filt[t];  // = (V A')'
    Eigen::LLT<Eigen::MatrixXd> llt(Pp);
    if (llt.info() != Eigen::Success) {
      Eigen::MatrixXd ridged = Pp;
      ridged.diagonal().array() += 1e-12 * std::max(1.0, Pp.diagonal().maxCoeff());
      llt.compute(ridged);
      if (ridge_count) ++(*ridge_count);
      if (llt.info() != Eigen::Success)
        throw NumericsError("ffbs_sample: prediction covariance not factorizable");
    }
    const Eigen::MatrixXd G = llt.solve(W).transpose();  // V A' Pp^{-1}
    const Eigen::VectorXd mean =
        filter.x_filt[t] + G * (x - filter.x_pred[t + 1]);
    Eigen::MatrixXd cov = filter.P_filt[t] - G * Pp * G.transpose();
    symmetrize(cov);
    x = mean + safe_cholesky(cov) * rng.normal_vector(n);
    draws.row(t) = x.transpose();
  }
  return draws;
}

}  // namespace ebmcal
