// Minimal library tour: simulate a step-forcing experiment from a known
// three-box configuration, refit it by maximum likelihood, and project the
// fitted model under a ramp scenario.

#include <iostream>

#include "ebmcal/mle.hpp"

int main() {
  using namespace ebmcal;

  EbmParams truth;
  truth.gamma = 2.0;
  truth.C1 = 4.2;
  truth.C2 = 12.0;
  truth.C3 = 90.0;
  truth.k1 = 1.1;
  truth.k2 = 2.1;
  truth.k3 = 0.9;
  truth.epsilon = 1.3;
  truth.sigma_F = 0.55;
  truth.sigma_T = 0.45;
  truth.F_C = 3.8;

  // 150 years of an abrupt quadrupling experiment (forcing factor 2).
  const int T = 150;
  ScenarioData abrupt;
  abrupt.forcing.years = Eigen::VectorXd::LinSpaced(T, 1, T);
  abrupt.forcing.f_co2 = Eigen::VectorXd::Constant(T, 2.0);
  abrupt.forcing.f_volc = Eigen::VectorXd::Zero(T);
  RngStream rng(7);
  abrupt.obs = ObservationSeries::fully_observed(
      simulate(build_basic_system(truth), abrupt.forcing.basic_inputs(), rng).observations);

  MleOptions opts;
  opts.restarts = 3;
  const MleFit fit = fit_abrupt(abrupt, EbmParams(), opts);
  std::cout << "log-likelihood at the maximum: " << fit.loglik_at_max
            << (fit.converged ? "" : "  (not converged)") << "\n";
  const Eigen::VectorXd est = fit.theta_hat.to_vector();
  const Eigen::VectorXd tru = truth.to_vector();
  for (int j = 0; j < kNumBasicParams; ++j)
    std::cout << "  " << EbmParams::name(j) << ": " << est[j] << "  (truth " << tru[j]
              << ", log-SD " << std::sqrt(fit.log_theta_cov(j, j)) << ")\n";
  std::cout << "equilibrium climate sensitivity: " << ecs(fit.theta_hat) << " K (truth "
            << ecs(truth) << " K)\n";

  // Project a gradual doubling with parameter and natural-variability spread.
  ForcingSeries ramp;
  ramp.years = Eigen::VectorXd::LinSpaced(100, 1, 100);
  ramp.f_co2 = Eigen::VectorXd::LinSpaced(100, 0.0, 1.0);
  ramp.f_volc = Eigen::VectorXd::Zero(100);
  RngStream proj_rng(8);
  const ProjectionEnsemble ens = project_mle(fit, ramp, 2000, proj_rng);
  std::cout << "year-100 warming quantiles: " << ensemble_quantile(ens, 99, 0, 0.05) << " / "
            << ensemble_quantile(ens, 99, 0, 0.5) << " / " << ensemble_quantile(ens, 99, 0, 0.95)
            << " K\n";
  return 0;
}
