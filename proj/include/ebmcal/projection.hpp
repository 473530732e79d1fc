// Posterior-predictive projection: filter the observed record to the end of
// the historical period under each retained draw, sample the terminal state,
// and simulate forward with the draw's shared-discrepancy path. Also the ECS
// posteriors for the real world and for a hypothetical new ensemble member.
#pragma once

#include <cstdint>
#include <vector>

#include <Eigen/Dense>

#include "ebmcal/hier_gibbs.hpp"
#include "ebmcal/projection_types.hpp"

namespace ebmcal {

struct ProjectionOptions {
  // Future observation noise: off by default (the projection targets the
  // state itself, not a future measurement); per-variable variances applied
  // when enabled.
  bool include_obs_noise = false;
  Eigen::VectorXd obs_noise_var;
  // Abort if more than this fraction of draws fails (per mille).
  int max_failed_per_mille = 1;
};

inline std::vector<const PosteriorDraw*> flatten_draws(const ChainOutput& post) {
  std::vector<const PosteriorDraw*> out;
  for (const auto& c : post.chains)
    for (const auto& d : c.draws) out.push_back(&d);
  return out;
}

namespace detail {

// One trajectory: condition on the scenario up to tau_H, then free-run.
inline Eigen::MatrixXd project_one_draw(const Eigen::VectorXd& log_theta,
                                        const Eigen::VectorXd& nu, const ScenarioData& sc,
                                        Eigen::Index tau_H, double p0_delta, RngStream& rng,
                                        const ProjectionOptions& opts) {
  const Eigen::Index tau_F = sc.obs.size();
  const LinearGaussianSSM ssm = build_extended_from_log(log_theta, p0_delta);

  // Historical segment: filter the observed record conditional on the draw.
  ScenarioData head;
  head.obs.values = sc.obs.values.topRows(tau_H);
  head.obs.missing = sc.obs.missing.topRows(tau_H);
  if (!sc.obs.noise.empty())
    head.obs.noise.assign(sc.obs.noise.begin(), sc.obs.noise.begin() + tau_H);
  Eigen::MatrixXd inputs = sc.forcing.extended_inputs(nu);
  inputs.col(1).tail(tau_F - tau_H).setZero();  // no volcanic forcing ahead

  const FilterResult fr = kalman_filter(ssm, inputs.topRows(tau_H), head.obs);

  Eigen::VectorXd x = fr.x_filt[tau_H - 1] +
                      safe_cholesky(fr.P_filt[tau_H - 1]) * rng.normal_vector(ssm.state_dim());

  const Eigen::MatrixXd Lq = safe_cholesky(ssm.Q_d);
  Eigen::MatrixXd traj(tau_F - tau_H, ssm.obs_dim());
  for (Eigen::Index t = tau_H; t < tau_F; ++t) {
    x = ssm.A_d * x + ssm.B_d * inputs.row(t).transpose() +
        Lq * rng.normal_vector(ssm.state_dim());
    Eigen::VectorXd y = ssm.H_d * x;
    if (opts.include_obs_noise && opts.obs_noise_var.size() == y.size())
      for (Eigen::Index i = 0; i < y.size(); ++i)
        y[i] += std::sqrt(opts.obs_noise_var[i]) * rng.normal();
    traj.row(t - tau_H) = y.transpose();
  }
  return traj;
}

inline ProjectionEnsemble project_draws(const ChainOutput& post, const ScenarioData& sc,
                                        Eigen::Index tau_H, double p0_delta, bool real_world,
                                        Eigen::Index member, RngStream& rng,
                                        const ProjectionOptions& opts) {
  sc.validate();
  const auto draws = flatten_draws(post);
  if (draws.empty()) throw NumericsError("projection: no posterior draws");
  const Eigen::Index tau_F = sc.obs.size();
  if (tau_H <= 0 || tau_H >= tau_F) throw NumericsError("projection: bad horizon split");

  ProjectionEnsemble ens;
  ens.times = sc.forcing.years.tail(tau_F - tau_H);
  ens.samples.reserve(draws.size());
  for (std::size_t i = 0; i < draws.size(); ++i) {
    RngStream stream = rng.split(i);
    const Eigen::VectorXd lt = real_world
                                   ? draws[i]->log_theta_obs
                                   : Eigen::VectorXd(draws[i]->log_theta.row(member));
    if (draws[i]->nu.size() < tau_F)
      throw NumericsError("projection: posterior nu path shorter than horizon");
    try {
      ens.samples.push_back(
          project_one_draw(lt, draws[i]->nu, sc, tau_H, p0_delta, stream, opts));
      ens.provenance.emplace_back(static_cast<int>(i), stream.key());
    } catch (const NumericsError&) {
      ens.skipped_draws += 1;
    }
  }
  const double failed_per_mille =
      1000.0 * ens.skipped_draws / static_cast<double>(draws.size());
  if (ens.samples.empty() || failed_per_mille > opts.max_failed_per_mille)
    throw NumericsError("projection: too many failed draws");
  return ens;
}

}  // namespace detail

// Real-world projection: one trajectory per retained (theta_Z, nu) draw.
inline ProjectionEnsemble project_real_world(const ChainOutput& post, const ScenarioData& obs,
                                             const HierPriors& priors, RngStream& rng,
                                             const ProjectionOptions& opts = {}) {
  return detail::project_draws(post, obs, obs.tau_H, priors.p0_delta, true, 0, rng, opts);
}

// Posterior-predictive projection of one ensemble member from its own record.
inline ProjectionEnsemble project_member(const ChainOutput& post, const ScenarioData& histfut,
                                         Eigen::Index member, const HierPriors& priors,
                                         RngStream& rng, const ProjectionOptions& opts = {}) {
  return detail::project_draws(post, histfut, histfut.tau_H, priors.p0_delta, false, member,
                               rng, opts);
}

enum class EcsPopulation { real_world, new_model };

// ECS samples: the forcing-to-feedback ratio per real-world draw, or for a
// fresh member drawn from the ensemble distribution of each retained draw.
inline std::vector<double> ecs_posterior(const ChainOutput& post, EcsPopulation population,
                                         RngStream& rng) {
  const auto draws = flatten_draws(post);
  std::vector<double> out;
  out.reserve(draws.size());
  constexpr int iFC = 10, ik1 = 4;
  for (std::size_t i = 0; i < draws.size(); ++i) {
    if (population == EcsPopulation::real_world) {
      out.push_back(std::exp(draws[i]->log_theta_obs[iFC] - draws[i]->log_theta_obs[ik1]));
    } else {
      RngStream stream = rng.split(i);
      const Eigen::VectorXd lt =
          mvn_sample(draws[i]->mu_lambda, draws[i]->sigma_lambda, stream);
      out.push_back(std::exp(lt[iFC] - lt[ik1]));
    }
  }
  return out;
}

}  // namespace ebmcal
