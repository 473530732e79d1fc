// The partially collapsed Gibbs sampler over the hierarchical ensemble:
// per-model MH updates with the individual discrepancies marginalized, FFBS
// draws of individual and shared discrepancies, conjugate hyperparameter
// updates, the real-world conditional, dispersed initialization and
// split-chain convergence diagnostics.
#pragma once

#include <atomic>
#include <chrono>
#include <cmath>
#include <functional>
#include <limits>
#include <map>
#include <string>
#include <thread>
#include <vector>

#include <Eigen/Dense>

#include "ebmcal/hier_model.hpp"
#include "ebmcal/nelder_mead.hpp"
#include "ebmcal/numdiff.hpp"

namespace ebmcal {

struct McmcConfig {
  int n_chains = 4;
  long burn_in = 25000;
  long n_iter = 250000;
  long thin = 200;
  std::uint64_t seed = 0;
  int threads = 1;

  void validate() const {
    if (n_chains < 1 || burn_in < 0 || n_iter < 1 || thin < 1)
      throw NumericsError("McmcConfig: entries must be positive");
    if (n_iter % thin != 0)
      throw NumericsError("McmcConfig: n_iter must be a multiple of thin");
  }
};

struct PosteriorDraw {
  Eigen::MatrixXd log_theta;      // M x 13
  Eigen::VectorXd log_theta_obs;  // 13
  Eigen::VectorXd mu_lambda;      // 13
  Eigen::MatrixXd sigma_lambda;   // 13 x 13
  double sigma_nu = 0.0;
  Eigen::VectorXd nu;             // tau_F
};

struct AcceptCounters {
  Eigen::VectorXd theta_accept;   // per model
  Eigen::VectorXd theta_total;
  double obs_accept = 0.0, obs_total = 0.0;
  double sigma_nu_accept = 0.0, sigma_nu_total = 0.0;
  long filter_failures = 0;
  long ram_skipped = 0;

  void init(Eigen::Index M) {
    theta_accept = Eigen::VectorXd::Zero(M);
    theta_total = Eigen::VectorXd::Zero(M);
  }
};

struct ChainResult {
  std::vector<PosteriorDraw> draws;
  AcceptCounters counters;
  EnsembleState final_state;
  long completed_iterations = 0;
  bool failed = false;
  std::string failure;
};

struct ChainOutput {
  std::vector<ChainResult> chains;
  std::map<std::string, double> rhat;
  double wall_seconds = 0.0;

  double max_rhat() const {
    double m = 0.0;
    for (const auto& [k, v] : rhat)
      if (std::isfinite(v)) m = std::max(m, v);
    return m;
  }
  bool any_failed() const {
    for (const auto& c : chains)
      if (c.failed) return true;
    return false;
  }
};

// Per-chain rebuildable cache: extended systems and abrupt likelihoods for
// the current parameter values (deterministic functions of the state).
struct ChainScratch {
  std::vector<LinearGaussianSSM> ext;     // per model
  std::vector<double> abrupt_ll;          // per model
  LinearGaussianSSM ext_obs;
  FilterResult filter;                    // reused across sweeps

  static ChainScratch rebuild(const EnsembleState& st, const HierData& data,
                              const HierPriors& priors) {
    ChainScratch sc;
    const Eigen::Index M = st.n_models();
    sc.ext.resize(M);
    sc.abrupt_ll.resize(M);
    for (Eigen::Index m = 0; m < M; ++m) {
      sc.ext[m] = build_extended_from_log(st.log_theta.row(m), priors.p0_delta);
      sc.abrupt_ll[m] = hier_abrupt_loglik(st.log_theta.row(m), data.abrupt[m]);
    }
    sc.ext_obs = build_extended_from_log(st.log_theta_obs, priors.p0_delta);
    return sc;
  }
};

namespace detail {

inline double guarded(const std::function<double()>& fn, long* failures) {
  try {
    const double v = fn();
    return std::isnan(v) ? -std::numeric_limits<double>::infinity() : v;
  } catch (const NumericsError&) {
    if (failures) ++(*failures);
    return -std::numeric_limits<double>::infinity();
  }
}

}  // namespace detail

// One full sweep, steps in the mandatory order:
//  (1) MH update of each model's parameters (discrepancy marginalized)
//  (2) FFBS draw of each individual discrepancy path
//  (3) FFBS draw of the shared discrepancy via the augmented model
//  (4) conjugate draw of mu_lambda  (5) conjugate draw of Sigma_lambda
//  (6) MH update of sigma_nu       (7) MH update of the real-world parameters
// `trace`, when supplied, records the step labels as executed.
inline void gibbs_sweep(EnsembleState& st, ChainScratch& sc, const HierData& data,
                        const HierPriors& priors, RngStream sweep_rng, bool adapt,
                        AcceptCounters& cnt, std::vector<std::string>* trace = nullptr) {
  const Eigen::Index M = st.n_models();
  const Eigen::MatrixXd prior_chol = safe_cholesky(st.sigma_lambda);

  // (1) model parameters
  for (Eigen::Index m = 0; m < M; ++m) {
    if (trace) trace->push_back("theta[" + std::to_string(m) + "]");
    RngStream rng = sweep_rng.split(m);
    const Eigen::VectorXd cur = st.log_theta.row(m).transpose();
    const double lt_cur =
        mvn_logpdf_chol(cur, st.mu_lambda, prior_chol) + sc.abrupt_ll[m] +
        detail::guarded([&] { return hier_histfut_loglik(sc.ext[m], data.histfut[m], st.nu); },
                        &cnt.filter_failures);

    const Eigen::VectorXd z = rng.normal_vector(kNumParams);
    const Eigen::VectorXd cand = cur + st.prop_theta[m].chol * z;

    double ab_ll = 0.0;
    LinearGaussianSSM cand_sys;
    const double lt_prop =
        mvn_logpdf_chol(cand, st.mu_lambda, prior_chol) +
        detail::guarded(
            [&] {
              ab_ll = hier_abrupt_loglik(cand, data.abrupt[m]);
              cand_sys = build_extended_from_log(cand, priors.p0_delta);
              return ab_ll + hier_histfut_loglik(cand_sys, data.histfut[m], st.nu);
            },
            &cnt.filter_failures);

    const double log_alpha = lt_prop - lt_cur;
    const double alpha =
        std::isfinite(log_alpha) ? std::min(1.0, std::exp(log_alpha)) : 0.0;
    if (rng.uniform() <= alpha) {
      st.log_theta.row(m) = cand.transpose();
      sc.ext[m] = std::move(cand_sys);
      sc.abrupt_ll[m] = ab_ll;
      cnt.theta_accept[m] += 1.0;
    }
    cnt.theta_total[m] += 1.0;
    if (adapt) ram_adapt(st.prop_theta[m], z, alpha);
  }

  // (2) individual discrepancies
  for (Eigen::Index m = 0; m < M; ++m) {
    if (trace) trace->push_back("delta[" + std::to_string(m) + "]");
    RngStream rng = sweep_rng.split(1000 + m);
    if (!data.histfut[m].obs.any_observed()) {
      // No data: the conditional is the prior random walk.
      const double sd =
          detail::floor_sd(std::exp(st.log_theta(m, kNumParams - 1)));
      double d = std::sqrt(priors.p0_delta) * rng.normal();
      for (Eigen::Index t = 0; t < data.tau_F; ++t) {
        d += st.nu[t] + sd * rng.normal();
        st.delta(m, t) = d;
      }
      continue;
    }
    kalman_filter_into(sc.ext[m], data.histfut[m].forcing.extended_inputs(st.nu),
                       data.histfut[m].obs, sc.filter);
    const Eigen::MatrixXd draw = ffbs_sample(sc.filter, sc.ext[m], rng);
    st.delta.row(m) = draw.col(4).transpose();
  }

  // (3) shared discrepancy
  if (trace) trace->push_back("nu");
  {
    RngStream rng = sweep_rng.split(2000);
    Eigen::VectorXd sigma_delta(M);
    for (Eigen::Index m = 0; m < M; ++m)
      sigma_delta[m] = std::exp(st.log_theta(m, kNumParams - 1));
    st.nu = sample_shared_nu(st.delta, sigma_delta, st.sigma_nu, priors.p0_delta, rng);
  }

  // (4) ensemble mean
  if (trace) trace->push_back("mu_lambda");
  {
    RngStream rng = sweep_rng.split(2001);
    st.mu_lambda = sample_mu_lambda(st.log_theta, st.sigma_lambda, priors, rng);
  }

  // (5) ensemble covariance
  if (trace) trace->push_back("sigma_lambda");
  {
    RngStream rng = sweep_rng.split(2002);
    st.sigma_lambda = sample_sigma_lambda(st.log_theta, st.mu_lambda, priors, rng);
  }

  // (6) shared discrepancy scale
  if (trace) trace->push_back("sigma_nu");
  {
    RngStream rng = sweep_rng.split(2003);
    Eigen::VectorXd x(1);
    x[0] = std::log(st.sigma_nu);
    const auto target = [&](const Eigen::VectorXd& v) {
      return nu_increments_loglik(st.nu, std::exp(v[0])) +
             normal_logpdf(v[0], priors.a_nu, priors.b_nu);
    };
    double lt = target(x);
    const MhResult res = mh_step(x, lt, target, st.prop_sigma_nu, rng, adapt);
    st.sigma_nu = std::exp(x[0]);
    cnt.sigma_nu_accept += res.accepted ? 1.0 : 0.0;
    cnt.sigma_nu_total += 1.0;
  }

  // (7) real-world parameters
  if (trace) trace->push_back("theta_obs");
  {
    RngStream rng = sweep_rng.split(2004);
    const Eigen::MatrixXd obs_prior_chol = priors.kappa * prior_chol;
    const Eigen::VectorXd cur = st.log_theta_obs;
    const double lt_cur =
        mvn_logpdf_chol(cur, st.mu_lambda, obs_prior_chol) +
        detail::guarded(
            [&] { return hier_histfut_loglik(sc.ext_obs, data.observations, st.nu); },
            &cnt.filter_failures);

    const Eigen::VectorXd z = rng.normal_vector(kNumParams);
    const Eigen::VectorXd cand = cur + st.prop_theta_obs.chol * z;
    LinearGaussianSSM cand_sys;
    const double lt_prop =
        mvn_logpdf_chol(cand, st.mu_lambda, obs_prior_chol) +
        detail::guarded(
            [&] {
              cand_sys = build_extended_from_log(cand, priors.p0_delta);
              return hier_histfut_loglik(cand_sys, data.observations, st.nu);
            },
            &cnt.filter_failures);

    const double log_alpha = lt_prop - lt_cur;
    const double alpha =
        std::isfinite(log_alpha) ? std::min(1.0, std::exp(log_alpha)) : 0.0;
    if (rng.uniform() <= alpha) {
      st.log_theta_obs = cand;
      sc.ext_obs = std::move(cand_sys);
      cnt.obs_accept += 1.0;
    }
    cnt.obs_total += 1.0;
    if (adapt) ram_adapt(st.prop_theta_obs, z, alpha);
  }
}

// Deterministic per-run initialization work shared across chains: MAP
// estimates and information-matrix covariances for each model, conditional
// on zero shared discrepancy and the baseline priors.
struct InitCache {
  std::vector<Eigen::VectorXd> map_log_theta;
  std::vector<Eigen::MatrixXd> map_cov;
  std::vector<bool> map_ok;
};

inline InitCache compute_init_cache(const HierData& data, const HierPriors& priors) {
  const Eigen::Index M = data.n_models();
  const Eigen::VectorXd nu0 = Eigen::VectorXd::Zero(data.tau_F);
  const Eigen::MatrixXd prior_chol = safe_cholesky(priors.Sigma0);
  const double box = 3.0 * std::log(10.0);

  InitCache cache;
  cache.map_log_theta.resize(M);
  cache.map_cov.resize(M);
  cache.map_ok.assign(M, false);

  for (Eigen::Index m = 0; m < M; ++m) {
    long failures = 0;
    const auto neg_post = [&](const Eigen::VectorXd& lt) {
      const double ll = detail::guarded(
          [&] {
            return hier_abrupt_loglik(lt, data.abrupt[m]) +
                   hier_histfut_loglik(build_extended_from_log(lt, priors.p0_delta),
                                       data.histfut[m], nu0);
          },
          &failures);
      return -(mvn_logpdf_chol(lt, priors.mu0, prior_chol) + ll);
    };

    NelderMeadOptions nm;
    nm.max_evals = 6000;
    nm.f_tol = 1e-9;
    nm.lower = priors.mu0.array() - box;
    nm.upper = priors.mu0.array() + box;
    const NelderMeadResult res = nelder_mead(neg_post, priors.mu0, nm);

    if (std::isfinite(res.f)) {
      cache.map_log_theta[m] = res.x;
      const Eigen::MatrixXd H = central_difference_hessian(neg_post, res.x, 1e-4);
      bool pd = true;
      cache.map_cov[m] = H.allFinite() ? information_to_covariance(H, &pd) : priors.Sigma0;
      cache.map_ok[m] = res.converged && H.allFinite();
    } else {
      cache.map_log_theta[m] = priors.mu0;
      cache.map_cov[m] = priors.Sigma0;
      cache.map_ok[m] = false;
    }
  }
  return cache;
}

namespace detail {

// Cap covariance eigenvalues so a weakly identified direction cannot throw a
// starting draw far outside the prior's support.
inline Eigen::MatrixXd cap_eigenvalues(const Eigen::MatrixXd& cov, double max_eig) {
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(0.5 * (cov + cov.transpose()));
  const Eigen::VectorXd lam = eig.eigenvalues().cwiseMax(0.0).cwiseMin(max_eig);
  return eig.eigenvectors() * lam.asDiagonal() * eig.eigenvectors().transpose();
}

}  // namespace detail

// Dispersed, valid starting state for one chain.
inline EnsembleState initialize_chain(const HierData& data, const HierPriors& priors,
                                      const InitCache& cache, RngStream chain_rng) {
  const Eigen::Index M = data.n_models();
  const double ram_scale = 2.38 * 2.38 / static_cast<double>(kNumParams);
  const double prior_var = priors.Sigma0.diagonal().maxCoeff();
  const Eigen::VectorXd box_lo = priors.mu0.array() - 3.0 * std::log(10.0);
  const Eigen::VectorXd box_hi = priors.mu0.array() + 3.0 * std::log(10.0);

  EnsembleState st;
  st.log_theta.resize(M, kNumParams);
  st.delta = Eigen::MatrixXd::Zero(M, data.tau_F);
  st.nu = Eigen::VectorXd::Zero(data.tau_F);
  st.prop_theta.resize(M);

  // Model parameters: draws around the MAP estimates; proposal covariance
  // seeded at the Roberts-Rosenthal optimum 2.38^2 Sigma / d.
  for (Eigen::Index m = 0; m < M; ++m) {
    RngStream rng = chain_rng.split(10 + m);
    Eigen::MatrixXd cov = cache.map_cov[m];
    if (!cache.map_ok[m]) cov = 4.0 * priors.Sigma0;  // inflated fallback
    cov = detail::cap_eigenvalues(cov, prior_var);
    // Retry until the starting draw yields buildable systems.
    for (int attempt = 0; attempt < 32; ++attempt) {
      const Eigen::VectorXd draw =
          attempt + 1 < 32
              ? mvn_sample(cache.map_log_theta[m], cov, rng).cwiseMax(box_lo).cwiseMin(box_hi)
              : cache.map_log_theta[m];
      try {
        build_extended_from_log(draw, priors.p0_delta);
        hier_abrupt_loglik(draw, data.abrupt[m]);
        st.log_theta.row(m) = draw.transpose();
        break;
      } catch (const NumericsError&) {
      }
    }
    st.prop_theta[m] = RamProposal::from_covariance(ram_scale * cov, 0.26);
  }

  // Individual discrepancies given theta*, nu = 0; fall back to the prior
  // walk if the filter cannot be built at the starting draw.
  for (Eigen::Index m = 0; m < M; ++m) {
    RngStream rng = chain_rng.split(100 + m);
    bool drawn = false;
    if (data.histfut[m].obs.any_observed()) {
      try {
        const LinearGaussianSSM ext =
            build_extended_from_log(st.log_theta.row(m), priors.p0_delta);
        const FilterResult fr = kalman_filter(
            ext, data.histfut[m].forcing.extended_inputs(st.nu), data.histfut[m].obs);
        const Eigen::MatrixXd draw = ffbs_sample(fr, ext, rng);
        st.delta.row(m) = draw.col(4).transpose();
        drawn = true;
      } catch (const NumericsError&) {
      }
    }
    if (!drawn) {
      const double sd = detail::floor_sd(std::exp(st.log_theta(m, kNumParams - 1)));
      double d = std::sqrt(priors.p0_delta) * rng.normal();
      for (Eigen::Index t = 0; t < data.tau_F; ++t) {
        d += sd * rng.normal();
        st.delta(m, t) = d;
      }
    }
  }

  // Rough shared-discrepancy scale: SD of first differences of the mean path.
  const Eigen::VectorXd mean_path = st.delta.colwise().mean().transpose();
  double sq = 0.0;
  double prev = 0.0;
  std::vector<double> diffs;
  for (Eigen::Index t = 0; t < mean_path.size(); ++t) {
    diffs.push_back(mean_path[t] - prev);
    prev = mean_path[t];
  }
  double dm = 0.0;
  for (double d : diffs) dm += d;
  dm /= static_cast<double>(diffs.size());
  for (double d : diffs) sq += (d - dm) * (d - dm);
  const double sigma_nu_rough =
      detail::floor_sd(std::sqrt(sq / std::max<double>(1.0, diffs.size() - 1.0)));

  // Shared discrepancy given delta*, sigma_delta*, rough sigma_nu.
  {
    RngStream rng = chain_rng.split(200);
    Eigen::VectorXd sigma_delta(M);
    for (Eigen::Index m = 0; m < M; ++m)
      sigma_delta[m] = std::exp(st.log_theta(m, kNumParams - 1));
    st.nu = sample_shared_nu(st.delta, sigma_delta, sigma_nu_rough, priors.p0_delta, rng);
  }

  // Hyperparameters by conjugate draws.
  {
    RngStream rng = chain_rng.split(201);
    st.sigma_lambda = sample_sigma_lambda(st.log_theta, priors.mu0, priors, rng);
    conjugate_mu_sigma(st.log_theta, priors, rng, st.mu_lambda, st.sigma_lambda);
  }

  // Formal sigma_nu initialization: 1-d MAP + observed-information draw.
  {
    RngStream rng = chain_rng.split(202);
    const auto neg_post = [&](double ls) {
      return -(nu_increments_loglik(st.nu, std::exp(ls)) +
               normal_logpdf(ls, priors.a_nu, priors.b_nu));
    };
    // Golden-section search over the prior's effective support.
    double a = std::log(1e-5), b = std::log(1e3);
    const double golden = 0.5 * (std::sqrt(5.0) - 1.0);
    double c = b - golden * (b - a), d = a + golden * (b - a);
    double fc = neg_post(c), fd = neg_post(d);
    for (int it = 0; it < 200 && (b - a) > 1e-10; ++it) {
      if (fc < fd) {
        b = d; d = c; fd = fc;
        c = b - golden * (b - a);
        fc = neg_post(c);
      } else {
        a = c; c = d; fc = fd;
        d = a + golden * (b - a);
        fd = neg_post(d);
      }
    }
    const double map = 0.5 * (a + b);
    const double h = 1e-4;
    double info = (neg_post(map + h) - 2.0 * neg_post(map) + neg_post(map - h)) / (h * h);
    if (!(info > 0.0) || !std::isfinite(info)) info = 1.0 / priors.b_nu;
    const double sd = std::sqrt(1.0 / info);
    st.sigma_nu = std::exp(map + sd * rng.normal());
    Eigen::MatrixXd s2(1, 1);
    s2(0, 0) = 2.38 * 2.38 / info;
    st.prop_sigma_nu = RamProposal::from_covariance(s2, 0.44);
  }

  // Real-world parameters: MAP given nu*, mu_lambda*, Sigma_lambda*.
  {
    RngStream rng = chain_rng.split(203);
    const Eigen::MatrixXd obs_prior_cov = priors.kappa * priors.kappa * st.sigma_lambda;
    const Eigen::MatrixXd obs_prior_chol = safe_cholesky(obs_prior_cov);
    long failures = 0;
    const auto neg_post = [&](const Eigen::VectorXd& lt) {
      const double ll = detail::guarded(
          [&] {
            return hier_histfut_loglik(build_extended_from_log(lt, priors.p0_delta),
                                       data.observations, st.nu);
          },
          &failures);
      return -(mvn_logpdf_chol(lt, st.mu_lambda, obs_prior_chol) + ll);
    };
    NelderMeadOptions nm;
    nm.max_evals = 4000;
    nm.f_tol = 1e-9;
    nm.lower = priors.mu0.array() - 3.0 * std::log(10.0);
    nm.upper = priors.mu0.array() + 3.0 * std::log(10.0);
    const Eigen::VectorXd start =
        st.mu_lambda.cwiseMax(nm.lower).cwiseMin(nm.upper);
    const NelderMeadResult res = nelder_mead(neg_post, start, nm);

    Eigen::VectorXd center = priors.mu0;
    Eigen::MatrixXd cov = 4.0 * priors.Sigma0;
    if (std::isfinite(res.f)) {
      center = res.x;
      const Eigen::MatrixXd H = central_difference_hessian(neg_post, res.x, 1e-4);
      if (H.allFinite()) cov = information_to_covariance(H, nullptr);
    }
    cov = detail::cap_eigenvalues(cov, prior_var);
    for (int attempt = 0; attempt < 32; ++attempt) {
      const Eigen::VectorXd draw =
          attempt + 1 < 32 ? mvn_sample(center, cov, rng).cwiseMax(box_lo).cwiseMin(box_hi)
                           : center.cwiseMax(box_lo).cwiseMin(box_hi);
      try {
        build_extended_from_log(draw, priors.p0_delta);
        st.log_theta_obs = draw;
        break;
      } catch (const NumericsError&) {
      }
    }
    st.prop_theta_obs = RamProposal::from_covariance(ram_scale * cov, 0.26);
  }

  return st;
}

namespace detail {

inline void run_one_chain(ChainResult& out, const HierData& data, const HierPriors& priors,
                          const McmcConfig& config, const InitCache& cache, int chain_index,
                          const EnsembleState* resume_state, long resume_iter) {
  const RngStream root(config.seed);
  const RngStream chain_root = root.split(1 + chain_index);

  EnsembleState st;
  long start_iter = 0;
  if (resume_state) {
    st = *resume_state;
    start_iter = resume_iter;
  } else {
    st = initialize_chain(data, priors, cache, chain_root.split(0));
  }
  ChainScratch sc = ChainScratch::rebuild(st, data, priors);
  if (out.counters.theta_total.size() == 0) out.counters.init(st.n_models());

  const long total = config.burn_in + config.n_iter;
  for (long iter = start_iter; iter < total; ++iter) {
    const bool adapt = iter < config.burn_in;
    if (iter == config.burn_in) {
      for (auto& p : st.prop_theta) p.freeze();
      st.prop_theta_obs.freeze();
      st.prop_sigma_nu.freeze();
    }
    AcceptCounters& cnt = out.counters;
    // Burn-in acceptance is not reported; count sampling phase only.
    AcceptCounters scratch_cnt;
    scratch_cnt.init(st.n_models());
    gibbs_sweep(st, sc, data, priors, chain_root.split(1000000 + iter), adapt,
                adapt ? scratch_cnt : cnt);
    out.counters.filter_failures += scratch_cnt.filter_failures;

    if (!adapt && ((iter - config.burn_in + 1) % config.thin == 0)) {
      PosteriorDraw d;
      d.log_theta = st.log_theta;
      d.log_theta_obs = st.log_theta_obs;
      d.mu_lambda = st.mu_lambda;
      d.sigma_lambda = st.sigma_lambda;
      d.sigma_nu = st.sigma_nu;
      d.nu = st.nu;
      out.draws.push_back(std::move(d));
    }
    out.completed_iterations = iter + 1;
  }
  out.final_state = st;
  for (const auto& p : st.prop_theta) out.counters.ram_skipped += p.skipped_updates;
  out.counters.ram_skipped += st.prop_theta_obs.skipped_updates;
  out.counters.ram_skipped += st.prop_sigma_nu.skipped_updates;
}

}  // namespace detail

// Scalar summaries tracked for convergence diagnostics.
inline std::map<std::string, std::vector<std::vector<double>>> rhat_summaries(
    const std::vector<ChainResult>& chains) {
  std::map<std::string, std::vector<std::vector<double>>> out;
  for (const auto& c : chains) {
    if (c.failed || c.draws.empty()) continue;
    std::map<std::string, std::vector<double>> series;
    for (const auto& d : c.draws) {
      for (int j = 0; j < kNumParams; ++j) {
        series["mu_lambda[" + std::string(EbmParams::name(j)) + "]"].push_back(d.mu_lambda[j]);
        series["log_sigma_lambda[" + std::string(EbmParams::name(j)) + "]"].push_back(
            std::log(d.sigma_lambda(j, j)));
        series["log_theta_obs[" + std::string(EbmParams::name(j)) + "]"].push_back(
            d.log_theta_obs[j]);
      }
      series["log_sigma_nu"].push_back(std::log(d.sigma_nu));
    }
    for (auto& [k, v] : series) out[k].push_back(std::move(v));
  }
  return out;
}

struct ResumeInfo {
  std::vector<EnsembleState> states;
  long start_iteration = 0;
};

// Independent chains from dispersed starts; adaptation during burn-in only;
// every `thin`-th post-burn-in state retained. Chains run in parallel up to
// `config.threads`; results are identical at any thread count.
inline ChainOutput run_chains(const HierData& data, const HierPriors& priors,
                              const McmcConfig& config, const ResumeInfo* resume = nullptr) {
  data.validate();
  priors.validate();
  config.validate();
  if (resume && static_cast<int>(resume->states.size()) != config.n_chains)
    throw NumericsError("run_chains: resume state count != n_chains");

  const auto t0 = std::chrono::steady_clock::now();
  const InitCache cache =
      resume ? InitCache{} : compute_init_cache(data, priors);

  ChainOutput out;
  out.chains.resize(config.n_chains);

  std::atomic<int> next{0};
  const auto worker = [&] {
    for (;;) {
      const int c = next.fetch_add(1);
      if (c >= config.n_chains) return;
      try {
        detail::run_one_chain(out.chains[c], data, priors, config, cache, c,
                              resume ? &resume->states[c] : nullptr,
                              resume ? resume->start_iteration : 0);
      } catch (const std::exception& e) {
        out.chains[c].failed = true;
        out.chains[c].failure = e.what();
      }
    }
  };

  const int n_threads = std::max(1, std::min(config.threads, config.n_chains));
  if (n_threads == 1) {
    worker();
  } else {
    std::vector<std::thread> pool;
    for (int i = 0; i < n_threads; ++i) pool.emplace_back(worker);
    for (auto& t : pool) t.join();
  }

  for (const auto& [name, series] : rhat_summaries(out.chains))
    out.rhat[name] = split_rhat(series);
  out.wall_seconds =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  return out;
}

}  // namespace ebmcal
