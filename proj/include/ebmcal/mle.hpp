// Maximum-likelihood fitting of the basic EBM to step-forcing experiments,
// asymptotic parameter uncertainty from the observed information, projection
// under parameter uncertainty, and standardised prediction errors.
#pragma once

#include <cmath>
#include <functional>
#include <limits>
#include <vector>

#include <Eigen/Dense>

#include "ebmcal/ebm.hpp"
#include "ebmcal/kalman.hpp"
#include "ebmcal/nelder_mead.hpp"
#include "ebmcal/numdiff.hpp"
#include "ebmcal/projection_types.hpp"
#include "ebmcal/rng.hpp"

namespace ebmcal {

struct MleOptions {
  int restarts = 5;              // random restarts around the initialization
  double restart_spread = 0.25;  // log-space SD of restart perturbations
  long max_evals = 20000;
  double f_tol = 1e-8;
  double hessian_step = 1e-4;
  std::uint64_t seed = 20200101;
};

struct MleFit {
  EbmParams theta_hat;
  Eigen::MatrixXd log_theta_cov;  // 11 x 11
  double loglik_at_max = -std::numeric_limits<double>::infinity();
  long evals = 0;
  bool converged = false;
  bool hessian_pd = true;
  int restarts_used = 0;
};

// Kalman log-likelihood of the basic system at 11 log-parameters; -inf on
// numerical failure so the optimizer simply avoids the region.
inline double abrupt_loglik(const Eigen::VectorXd& log_theta11, const ScenarioData& data) {
  try {
    const EbmParams p = EbmParams::from_log_vector(log_theta11);
    const LinearGaussianSSM ssm = build_basic_system(p);
    return kalman_loglik(ssm, data.forcing.basic_inputs(), data.obs);
  } catch (const NumericsError&) {
    return -std::numeric_limits<double>::infinity();
  }
}

// Fit the 11-parameter basic EBM to an abrupt-style scenario by simplex
// search in log space with restarts; asymptotic covariance from the
// central-difference Hessian of the negative log-likelihood. Log-parameters
// are kept within +-3 log(10) of the prior means during the search.
inline MleFit fit_abrupt(const ScenarioData& data, const EbmParams& init,
                         const MleOptions& opts = MleOptions()) {
  data.validate();
  init.validate();
  const Eigen::VectorXd anchor = default_log_mu0().head(kNumBasicParams);
  const double box = 3.0 * std::log(10.0);

  NelderMeadOptions nm;
  nm.max_evals = opts.max_evals;
  nm.f_tol = opts.f_tol;
  nm.lower = anchor.array() - box;
  nm.upper = anchor.array() + box;

  const auto neg_ll = [&](const Eigen::VectorXd& lt) { return -abrupt_loglik(lt, data); };

  MleFit fit;
  RngStream rng(opts.seed);
  Eigen::VectorXd start = init.log_vector().head(kNumBasicParams);
  Eigen::VectorXd best_x;
  double best_f = std::numeric_limits<double>::infinity();
  bool any_converged = false;
  for (int r = 0; r < std::max(1, opts.restarts); ++r) {
    Eigen::VectorXd x0 = start;
    if (r > 0) x0 += opts.restart_spread * rng.normal_vector(kNumBasicParams);
    const NelderMeadResult res = nelder_mead(neg_ll, x0, nm);
    fit.evals += res.evals;
    any_converged = any_converged || res.converged;
    if (res.f < best_f) {
      best_f = res.f;
      best_x = res.x;
    }
    fit.restarts_used = r + 1;
  }
  if (!best_x.size()) throw NumericsError("fit_abrupt: optimizer produced no iterate");

  // Polish from the incumbent with a tight simplex, then damped Newton steps
  // on finite differences; the simplex alone stalls well short of a
  // stationary point.
  NelderMeadOptions polish = nm;
  polish.initial_step = 0.02;
  const NelderMeadResult polished = nelder_mead(neg_ll, best_x, polish);
  fit.evals += polished.evals;
  if (polished.f < best_f) {
    best_f = polished.f;
    best_x = polished.x;
  }

  for (int newton = 0; newton < 6; ++newton) {
    const Eigen::VectorXd g = central_difference_gradient(neg_ll, best_x, 1e-5);
    fit.evals += 2 * kNumBasicParams;
    if (g.norm() < 1e-4) break;
    const Eigen::MatrixXd H = central_difference_hessian(neg_ll, best_x, opts.hessian_step);
    const Eigen::MatrixXd Hinv = information_to_covariance(H, nullptr);
    Eigen::VectorXd step = -(Hinv * g);
    bool improved = false;
    for (int halving = 0; halving < 12; ++halving) {
      Eigen::VectorXd cand = (best_x + step).cwiseMax(nm.lower).cwiseMin(nm.upper);
      const double f = neg_ll(cand);
      fit.evals += 1;
      if (f < best_f) {
        best_f = f;
        best_x = cand;
        improved = true;
        break;
      }
      step *= 0.5;
    }
    if (!improved) break;
  }

  // A maximum pinned to the search box is a pathological fit, not a
  // converged one.
  bool interior = true;
  for (Eigen::Index i = 0; i < best_x.size(); ++i)
    if (best_x[i] <= nm.lower[i] + 1e-9 || best_x[i] >= nm.upper[i] - 1e-9) interior = false;

  fit.converged = any_converged && interior && std::isfinite(best_f);
  fit.loglik_at_max = -best_f;
  EbmParams theta = EbmParams::from_log_vector(best_x);
  theta.F_V = init.F_V;
  theta.sigma_delta = init.sigma_delta;
  fit.theta_hat = theta;

  Eigen::MatrixXd info = central_difference_hessian(neg_ll, best_x, opts.hessian_step);
  if (!info.allFinite()) {
    // A likelihood cliff next to the incumbent; a tighter stencil usually
    // stays on the feasible side.
    info = central_difference_hessian(neg_ll, best_x, 0.1 * opts.hessian_step);
  }
  if (info.allFinite()) {
    fit.log_theta_cov = information_to_covariance(info, &fit.hessian_pd);
  } else {
    fit.hessian_pd = false;
    fit.converged = false;
    fit.log_theta_cov = std::pow(std::log(10.0) / 3.0, 2) *
                        Eigen::MatrixXd::Identity(kNumBasicParams, kNumBasicParams);
  }
  return fit;
}

// Sample projection uncertainty: for each sample draw log-parameters from the
// asymptotic normal, start the state at pre-industrial equilibrium (zero) and
// simulate forward under the given CO2 forcing.
inline ProjectionEnsemble project_mle(const MleFit& fit, const ForcingSeries& forcing,
                                      int n_samples, RngStream& rng) {
  forcing.validate();
  const Eigen::VectorXd log_hat = fit.theta_hat.log_vector().head(kNumBasicParams);
  const Eigen::MatrixXd L = safe_cholesky(fit.log_theta_cov);
  const Eigen::MatrixXd inputs = forcing.basic_inputs();

  ProjectionEnsemble ens;
  ens.times = forcing.years;
  ens.samples.reserve(n_samples);
  for (int s = 0; s < n_samples; ++s) {
    RngStream stream = rng.split(s);
    const Eigen::VectorXd log_theta = log_hat + L * stream.normal_vector(kNumBasicParams);
    try {
      LinearGaussianSSM ssm = build_basic_system(EbmParams::from_log_vector(log_theta));
      ssm.m0.setZero();
      ssm.P0.setZero();
      ens.samples.push_back(simulate(ssm, inputs, stream).observations);
      ens.provenance.emplace_back(s, stream.key());
    } catch (const NumericsError&) {
      ens.skipped_draws += 1;
    }
  }
  if (ens.samples.empty()) throw NumericsError("project_mle: every draw failed");
  return ens;
}

// (truth - ensemble mean) / ensemble SD per time and variable. Missing truth
// stays NaN; a zero ensemble SD against a nonzero error returns +-inf and is
// counted through `degenerate_count`.
inline Eigen::MatrixXd standardised_errors(const ObservationSeries& truth,
                                           const ProjectionEnsemble& ens,
                                           int* degenerate_count = nullptr) {
  if (truth.size() != ens.horizon() || truth.obs_dim() != ens.obs_dim())
    throw NumericsError("standardised_errors: horizon mismatch");
  const Eigen::MatrixXd mean = ens.mean();
  const Eigen::MatrixXd sd = ens.sd();
  Eigen::MatrixXd z = Eigen::MatrixXd::Constant(truth.size(), truth.obs_dim(),
                                                std::numeric_limits<double>::quiet_NaN());
  for (Eigen::Index t = 0; t < truth.size(); ++t) {
    for (Eigen::Index i = 0; i < truth.obs_dim(); ++i) {
      if (truth.missing(t, i)) continue;
      const double err = truth.values(t, i) - mean(t, i);
      if (sd(t, i) > 0.0) {
        z(t, i) = err / sd(t, i);
      } else {
        z(t, i) = err == 0.0 ? 0.0
                             : std::copysign(std::numeric_limits<double>::infinity(), err);
        if (err != 0.0 && degenerate_count) ++(*degenerate_count);
      }
    }
  }
  return z;
}

}  // namespace ebmcal
