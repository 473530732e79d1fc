#include <catch2/catch_amalgamated.hpp>

#include <Eigen/Dense>

#include "ebmcal/mle.hpp"
#include "test_util.hpp"

using Eigen::MatrixXd;
using Eigen::VectorXd;
using namespace ebmcal;

namespace {

EbmParams hadgem2_es() {
  EbmParams p;
  p.gamma = 1.96; p.C1 = 4.13; p.C2 = 10.0; p.C3 = 91.0;
  p.k1 = 0.62; p.k2 = 2.34; p.k3 = 0.66; p.epsilon = 1.37;
  p.sigma_F = 0.60; p.sigma_T = 0.40; p.F_C = 3.20; p.F_V = 14.8;
  p.sigma_delta = 0.031;
  return p;
}

ScenarioData synthetic_abrupt(const EbmParams& truth, int T, std::uint64_t seed) {
  const auto ssm = build_basic_system(truth);
  const MatrixXd inputs = MatrixXd::Constant(T, 1, 2.0);
  RngStream rng(seed);
  const auto sim = simulate(ssm, inputs, rng);

  ScenarioData sc;
  sc.label = "abrupt";
  sc.obs = ObservationSeries::fully_observed(sim.observations);
  sc.forcing.years = VectorXd::LinSpaced(T, 1, T);
  sc.forcing.f_co2 = VectorXd::Constant(T, 2.0);
  sc.forcing.f_volc = VectorXd::Zero(T);
  return sc;
}

}  // namespace

TEST_CASE("fit_abrupt beats the generating parameters") {
  const EbmParams truth = hadgem2_es();
  const ScenarioData data = synthetic_abrupt(truth, 80, 101);

  MleOptions opts;
  opts.restarts = 2;
  opts.max_evals = 6000;
  const MleFit fit = fit_abrupt(data, EbmParams(), opts);

  CHECK(fit.converged);
  const double ll_truth = abrupt_loglik(truth.log_vector().head(11), data);
  CHECK(fit.loglik_at_max >= ll_truth - 1e-6);
  CHECK(fit.log_theta_cov.rows() == 11);
  Eigen::SelfAdjointEigenSolver<MatrixXd> eig(fit.log_theta_cov);
  CHECK(eig.eigenvalues().minCoeff() > 0.0);
}

TEST_CASE("stationarity: finite-difference gradient is small at the maximum") {
  const ScenarioData data = synthetic_abrupt(hadgem2_es(), 120, 77);
  MleOptions opts;
  opts.restarts = 3;
  const MleFit fit = fit_abrupt(data, EbmParams(), opts);
  REQUIRE(fit.converged);

  const VectorXd x = fit.theta_hat.log_vector().head(11);
  VectorXd grad(11);
  const double h = 1e-5;
  for (int i = 0; i < 11; ++i) {
    VectorXd xp = x, xm = x;
    xp[i] += h;
    xm[i] -= h;
    grad[i] = (abrupt_loglik(xp, data) - abrupt_loglik(xm, data)) / (2.0 * h);
  }
  CHECK(grad.norm() < 1e-3);
}

TEST_CASE("degenerate all-zero input pins sigmas to the bound, flagged") {
  ScenarioData zeros;
  zeros.label = "zeros";
  const int T = 40;
  zeros.obs = ObservationSeries::fully_observed(MatrixXd::Zero(T, 2));
  zeros.forcing.years = VectorXd::LinSpaced(T, 1, T);
  zeros.forcing.f_co2 = VectorXd::Constant(T, 2.0);
  zeros.forcing.f_volc = VectorXd::Zero(T);

  MleOptions opts;
  opts.restarts = 1;
  opts.max_evals = 8000;
  const MleFit fit = fit_abrupt(zeros, EbmParams(), opts);
  CHECK_FALSE(fit.converged);
  const Eigen::VectorXd lower = (default_log_mu0().head(11).array() - 3.0 * std::log(10.0)).exp();
  const bool sigma_f_low = fit.theta_hat.sigma_F <= lower[8] * 1.001;
  const bool sigma_t_low = fit.theta_hat.sigma_T <= lower[9] * 1.001;
  CHECK((sigma_f_low || sigma_t_low));
}

TEST_CASE("project_mle: zero covariance and zero noise reproduce the ODE response") {
  EbmParams p = hadgem2_es();
  p.sigma_F = 1e-30;
  p.sigma_T = 1e-30;
  MleFit fit;
  fit.theta_hat = p;
  fit.log_theta_cov = MatrixXd::Zero(11, 11);
  fit.converged = true;

  const int T = 30;
  ForcingSeries forcing;
  forcing.years = VectorXd::LinSpaced(T, 1, T);
  forcing.f_co2 = VectorXd::LinSpaced(T, 0.0, 1.0);
  forcing.f_volc = VectorXd::Zero(T);

  RngStream rng(5);
  const auto ens = project_mle(fit, forcing, 4, rng);
  REQUIRE(ens.n_samples() == 4);

  const MatrixXd A = detail::basic_drift(p);
  MatrixXd B = MatrixXd::Zero(4, 1);
  B(0, 0) = p.gamma * p.F_C;
  VectorXd x = VectorXd::Zero(4);
  for (int t = 0; t < T; ++t) {
    VectorXd f(1);
    f << forcing.f_co2[t];
    x = testutil::rk4_mean_step(A, B, f, x, 1.0, 1e-4);
    for (const auto& s : ens.samples) {
      CHECK(std::abs(s(t, 0) - x[1]) < 1e-7);
    }
  }
}

TEST_CASE("project_mle is deterministic under seed reuse") {
  const ScenarioData data = synthetic_abrupt(hadgem2_es(), 50, 33);
  MleOptions opts;
  opts.restarts = 1;
  opts.max_evals = 3000;
  const MleFit fit = fit_abrupt(data, EbmParams(), opts);

  ForcingSeries forcing;
  const int T = 40;
  forcing.years = VectorXd::LinSpaced(T, 1, T);
  forcing.f_co2 = VectorXd::LinSpaced(T, 0.0, 1.5);
  forcing.f_volc = VectorXd::Zero(T);

  RngStream a(42), b(42);
  const auto e1 = project_mle(fit, forcing, 50, a);
  const auto e2 = project_mle(fit, forcing, 50, b);
  REQUIRE(e1.n_samples() == e2.n_samples());
  for (int s = 0; s < e1.n_samples(); ++s)
    CHECK((e1.samples[s] - e2.samples[s]).cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("standardised errors: exact mean and two-sigma cases") {
  ProjectionEnsemble ens;
  ens.times = VectorXd::LinSpaced(3, 1, 3);
  MatrixXd a(3, 1), b(3, 1);
  a << 1.0, 2.0, 3.0;
  b << 3.0, 4.0, 5.0;  // mean (2,3,4), sd sqrt(2)
  ens.samples = {a, b};

  ObservationSeries truth;
  truth.values.resize(3, 1);
  truth.values << 2.0, 3.0, 4.0;
  truth.missing.setConstant(3, 1, false);
  const MatrixXd z0 = standardised_errors(truth, ens);
  CHECK(z0.cwiseAbs().maxCoeff() < 1e-14);

  truth.values(1, 0) = 3.0 + 2.0 * std::sqrt(2.0);
  truth.missing(2, 0) = true;
  const MatrixXd z = standardised_errors(truth, ens);
  CHECK(z(1, 0) == Catch::Approx(2.0).epsilon(1e-12));
  CHECK(std::isnan(z(2, 0)));
}

TEST_CASE("standardised errors of a self-consistent ensemble are calibrated") {
  EbmParams p = hadgem2_es();
  const auto ssm = build_basic_system(p);
  const int T = 25;
  ForcingSeries forcing;
  forcing.years = VectorXd::LinSpaced(T, 1, T);
  forcing.f_co2 = VectorXd::Constant(T, 2.0);
  forcing.f_volc = VectorXd::Zero(T);

  MleFit fit;
  fit.theta_hat = p;
  fit.log_theta_cov = MatrixXd::Zero(11, 11);
  fit.converged = true;

  RngStream rng(9);
  const auto ens = project_mle(fit, forcing, 3000, rng);

  // Truths from the same generative law; start at the same zero state.
  auto truth_ssm = ssm;
  truth_ssm.m0.setZero();
  truth_ssm.P0.setZero();
  long within = 0, total = 0;
  double var_acc = 0.0;
  RngStream trng(10);
  for (int rep = 0; rep < 400; ++rep) {
    auto stream = trng.split(rep);
    const auto sim = simulate(truth_ssm, forcing.basic_inputs(), stream);
    const MatrixXd z = standardised_errors(ObservationSeries::fully_observed(sim.observations), ens);
    for (int t = 0; t < T; ++t)
      for (int i = 0; i < 2; ++i) {
        total += 1;
        if (std::abs(z(t, i)) <= 2.0) within += 1;
        var_acc += z(t, i) * z(t, i);
      }
  }
  const double coverage = static_cast<double>(within) / total;
  CHECK(coverage > 0.93);
  CHECK(coverage < 0.97);
  CHECK(var_acc / total > 0.9);
  CHECK(var_acc / total < 1.1);
}
