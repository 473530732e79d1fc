// Hierarchical ensemble model pieces: priors, sampler state, per-model
// likelihood evaluators, the conjugate hyperparameter draws, and the
// augmented-model sampler for the shared discrepancy.
#pragma once

#include <cmath>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "ebmcal/ebm.hpp"
#include "ebmcal/kalman.hpp"
#include "ebmcal/mcmc.hpp"

namespace ebmcal {

// Conjugate normal / inverse-Wishart priors on the ensemble distribution,
// log-normal prior on the shared discrepancy scale, and the co-exchangeable
// inflation kappa for the real world.
struct HierPriors {
  Eigen::VectorXd mu0;     // 13, prior mean of log-parameters
  Eigen::MatrixXd Sigma0;  // 13 x 13
  Eigen::MatrixXd Psi;     // 13 x 13 inverse-Wishart scale
  double dof = 13.0;
  double a_nu = std::log(0.1);                       // location of log(sigma_nu)
  double b_nu = std::pow(std::log(10.0) / 3.0, 2);   // variance of log(sigma_nu)
  double kappa = 1.0;
  double p0_delta = 1e-6;

  static HierPriors defaults() {
    HierPriors pr;
    pr.mu0 = default_log_mu0();
    pr.Sigma0 = std::pow(std::log(10.0) / 3.0, 2) *
                Eigen::MatrixXd::Identity(kNumParams, kNumParams);
    pr.Psi = 1000.0 * Eigen::MatrixXd::Identity(kNumParams, kNumParams);
    return pr;
  }

  void validate() const {
    if (mu0.size() != kNumParams || Sigma0.rows() != kNumParams || Psi.rows() != kNumParams)
      throw NumericsError("HierPriors: dimension mismatch");
    if (dof < kNumParams) throw NumericsError("HierPriors: dof below dimension");
    if (!(b_nu > 0.0)) throw NumericsError("HierPriors: b_nu must be > 0");
    if (kappa < 1.0) throw NumericsError("HierPriors: kappa must be >= 1");
    if (p0_delta < 0.0) throw NumericsError("HierPriors: p0_delta must be >= 0");
    Eigen::LLT<Eigen::MatrixXd> l0(Sigma0), lp(Psi);
    if (l0.info() != Eigen::Success || lp.info() != Eigen::Success)
      throw NumericsError("HierPriors: Sigma0/Psi must be positive definite");
  }
};

// All model scenarios plus the real-world record. Every histfut scenario and
// the observation scenario run over t = 1..tau_F (observation rows past the
// observed period are marked missing).
struct HierData {
  std::vector<ScenarioData> abrupt;
  std::vector<ScenarioData> histfut;
  ScenarioData observations;
  Eigen::Index tau_H = 0;
  Eigen::Index tau_F = 0;
  std::vector<std::string> labels;

  Eigen::Index n_models() const { return static_cast<Eigen::Index>(histfut.size()); }

  void validate() const {
    if (abrupt.size() != histfut.size()) throw NumericsError("HierData: member list mismatch");
    if (tau_F <= 0 || tau_H <= 0 || tau_H > tau_F) throw NumericsError("HierData: bad periods");
    for (const auto& sc : abrupt) sc.validate();
    for (const auto& sc : histfut) {
      sc.validate();
      if (sc.obs.size() != tau_F) throw NumericsError("HierData: histfut length != tau_F");
    }
    observations.validate();
    if (observations.obs.size() != tau_F)
      throw NumericsError("HierData: observation record must span tau_F (missing-padded)");
  }
};

// One Gibbs-sweep snapshot. The shared mean path mu(t) = cumsum(nu) is
// derived on demand, never stored.
struct EnsembleState {
  Eigen::MatrixXd log_theta;      // M x 13
  Eigen::MatrixXd delta;          // M x tau_F
  Eigen::VectorXd nu;             // tau_F
  Eigen::VectorXd mu_lambda;      // 13
  Eigen::MatrixXd sigma_lambda;   // 13 x 13
  double sigma_nu = 0.1;
  Eigen::VectorXd log_theta_obs;  // 13

  std::vector<RamProposal> prop_theta;  // M blocks
  RamProposal prop_theta_obs;
  RamProposal prop_sigma_nu;

  Eigen::Index n_models() const { return log_theta.rows(); }
};

namespace detail {

// Bounds applied to log-parameters before exponentiation into a state-space
// build. Variances are floored (degenerate Cholesky guard) and capped
// (overflow guard for prior-tail excursions); structural parameters are
// magnitude-limited only. Within any data-supported region these bounds are
// never active.
inline Eigen::VectorXd clamp_for_build(Eigen::VectorXd log_theta) {
  const double lim = std::log(1e75);
  const double sd_floor = std::log(1e-5);
  for (Eigen::Index i = 0; i < log_theta.size(); ++i)
    log_theta[i] = std::clamp(log_theta[i], -lim, lim);
  for (Eigen::Index i : {8, 9, 12})
    if (i < log_theta.size()) log_theta[i] = std::max(log_theta[i], sd_floor);
  return log_theta;
}

inline double floor_sd(double sd) { return std::clamp(sd, 1e-5, 1e75); }

}  // namespace detail

// Log-likelihood of a step-forcing scenario under the basic system.
inline double hier_abrupt_loglik(const Eigen::VectorXd& log_theta, const ScenarioData& sc) {
  if (!sc.obs.any_observed()) return 0.0;
  const EbmParams p =
      EbmParams::from_log_vector(detail::clamp_for_build(log_theta.head(kNumBasicParams)));
  return kalman_loglik(build_basic_system(p), sc.forcing.basic_inputs(), sc.obs);
}

inline LinearGaussianSSM build_extended_from_log(const Eigen::VectorXd& log_theta,
                                                 double p0_delta) {
  return build_extended_system(EbmParams::from_log_vector(detail::clamp_for_build(log_theta)),
                               1.0, p0_delta);
}

// Log-likelihood of a historical+future scenario with the individual
// discrepancy marginalized by the extended filter; nu enters as known input.
inline double hier_histfut_loglik(const LinearGaussianSSM& ext, const ScenarioData& sc,
                                  const Eigen::VectorXd& nu) {
  if (!sc.obs.any_observed()) return 0.0;
  return kalman_loglik(ext, sc.forcing.extended_inputs(nu), sc.obs);
}

// Random-walk log-likelihood of the shared-discrepancy increments.
inline double nu_increments_loglik(const Eigen::VectorXd& nu, double sigma_nu) {
  const double var = std::pow(detail::floor_sd(sigma_nu), 2);
  double ll = 0.0;
  for (Eigen::Index t = 0; t < nu.size(); ++t) ll += normal_logpdf(nu[t], 0.0, var);
  return ll;
}

// FFBS draw of the shared discrepancy through the augmented model: state
// (delta_1..delta_M, nu) with the delta paths observed exactly.
inline Eigen::VectorXd sample_shared_nu(const Eigen::MatrixXd& delta,
                                        const Eigen::VectorXd& sigma_delta, double sigma_nu,
                                        double p0_delta, RngStream& rng) {
  const Eigen::Index M = delta.rows();
  const Eigen::Index T = delta.cols();
  if (T == 0 || M == 0) throw NumericsError("sample_shared_nu: empty paths");
  if (sigma_delta.size() != M) throw NumericsError("sample_shared_nu: sigma_delta size");

  // A tiny floor keeps the augmented covariance factorizable while letting
  // sigma_nu -> 0 pin the draw to zero well below 1e-6.
  const double var_nu = std::pow(std::max(sigma_nu, 1e-8), 2);
  LinearGaussianSSM ssm;
  ssm.A_d = Eigen::MatrixXd::Identity(M + 1, M + 1);
  ssm.A_d(M, M) = 0.0;  // nu is white noise
  ssm.B_d = Eigen::MatrixXd::Zero(M + 1, 0);
  ssm.Q_d = Eigen::MatrixXd::Constant(M + 1, M + 1, var_nu);
  for (Eigen::Index m = 0; m < M; ++m)
    ssm.Q_d(m, m) += std::pow(detail::floor_sd(sigma_delta[m]), 2);
  ssm.H_d = Eigen::MatrixXd::Zero(M, M + 1);
  ssm.H_d.leftCols(M).setIdentity();
  ssm.R_d = Eigen::MatrixXd::Zero(M, M);
  ssm.m0 = Eigen::VectorXd::Zero(M + 1);
  ssm.P0 = p0_delta * Eigen::MatrixXd::Identity(M + 1, M + 1);
  ssm.P0(M, M) = var_nu;

  const ObservationSeries obs = ObservationSeries::fully_observed(delta.transpose());
  const FilterResult fr = kalman_filter(ssm, Eigen::MatrixXd::Zero(T, 0), obs);
  const Eigen::MatrixXd draw = ffbs_sample(fr, ssm, rng);
  return draw.col(M);
}

struct GaussianPosterior {
  Eigen::VectorXd mean;
  Eigen::MatrixXd cov;
};

// Full conditional of the ensemble mean: precision Sigma0^{-1} + M Sigma^{-1}.
inline GaussianPosterior mu_lambda_posterior(const Eigen::MatrixXd& log_thetas,
                                             const Eigen::MatrixXd& sigma_lambda,
                                             const HierPriors& priors) {
  const Eigen::Index M = log_thetas.rows();
  const Eigen::Index p = priors.mu0.size();
  const Eigen::MatrixXd id = Eigen::MatrixXd::Identity(p, p);
  const Eigen::MatrixXd prior_prec = priors.Sigma0.llt().solve(id);
  Eigen::MatrixXd prec = prior_prec;
  Eigen::VectorXd shift = prior_prec * priors.mu0;
  if (M > 0) {
    const Eigen::MatrixXd lam_prec = sigma_lambda.llt().solve(id);
    prec += static_cast<double>(M) * lam_prec;
    shift += lam_prec * log_thetas.colwise().sum().transpose();
  }
  GaussianPosterior post;
  post.cov = prec.llt().solve(id);
  symmetrize(post.cov);
  post.mean = post.cov * shift;
  return post;
}

inline Eigen::VectorXd sample_mu_lambda(const Eigen::MatrixXd& log_thetas,
                                        const Eigen::MatrixXd& sigma_lambda,
                                        const HierPriors& priors, RngStream& rng) {
  const GaussianPosterior post = mu_lambda_posterior(log_thetas, sigma_lambda, priors);
  return mvn_sample(post.mean, post.cov, rng);
}

struct IwPosterior {
  Eigen::MatrixXd scale;
  double dof = 0.0;
};

inline IwPosterior sigma_lambda_posterior(const Eigen::MatrixXd& log_thetas,
                                          const Eigen::VectorXd& mu_lambda,
                                          const HierPriors& priors) {
  IwPosterior post;
  post.scale = priors.Psi;
  for (Eigen::Index m = 0; m < log_thetas.rows(); ++m) {
    const Eigen::VectorXd r = log_thetas.row(m).transpose() - mu_lambda;
    post.scale += r * r.transpose();
  }
  post.dof = priors.dof + static_cast<double>(log_thetas.rows());
  return post;
}

inline Eigen::MatrixXd sample_sigma_lambda(const Eigen::MatrixXd& log_thetas,
                                           const Eigen::VectorXd& mu_lambda,
                                           const HierPriors& priors, RngStream& rng) {
  const IwPosterior post = sigma_lambda_posterior(log_thetas, mu_lambda, priors);
  return inverse_wishart_sample(post.scale, post.dof, rng);
}

// Convenience wrapper running both conjugate draws in sweep order.
inline void conjugate_mu_sigma(const Eigen::MatrixXd& log_thetas, const HierPriors& priors,
                               RngStream& rng, Eigen::VectorXd& mu_lambda,
                               Eigen::MatrixXd& sigma_lambda) {
  mu_lambda = sample_mu_lambda(log_thetas, sigma_lambda, priors, rng);
  sigma_lambda = sample_sigma_lambda(log_thetas, mu_lambda, priors, rng);
}

}  // namespace ebmcal
