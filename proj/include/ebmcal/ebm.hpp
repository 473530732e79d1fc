// Three-box stochastic energy balance models in state-space form: the basic
// 4-state system (forcing + three boxes) fitted to step-forcing experiments,
// and the extended 5-state system with volcanic forcing and a random-walk
// forcing discrepancy driven by a shared input.
#pragma once

#include <cmath>
#include <string>
#include <utility>

#include <Eigen/Dense>

#include "ebmcal/kalman.hpp"
#include "ebmcal/linalg.hpp"
#include "ebmcal/rng.hpp"
#include "ebmcal/state_space.hpp"

namespace ebmcal {

constexpr int kNumParams = 13;       // full parameter vector
constexpr int kNumBasicParams = 11;  // subset identified by step-forcing runs

// All entries strictly positive; sampled on the log scale throughout.
struct EbmParams {
  double gamma = 2.0;        // forcing decay rate (1/yr)
  double C1 = 5.0;           // box heat capacities (W yr m^-2 K^-1)
  double C2 = 20.0;
  double C3 = 100.0;
  double k1 = 1.0;           // heat transfer coefficients (W m^-2 K^-1)
  double k2 = 2.0;
  double k3 = 1.0;
  double epsilon = 1.0;      // deep-ocean heat uptake efficacy
  double sigma_F = 0.5;      // forcing noise SD (W m^-2 yr^-1/2)
  double sigma_T = 0.5;      // temperature noise SD, enters Q as (sigma_T/C1)^2
  double F_C = 3.0;          // forcing per CO2 doubling (W m^-2)
  double F_V = 20.0;         // volcanic radiative coefficient (W m^-2 per unit AOD)
  double sigma_delta = 0.05; // discrepancy random-walk noise SD (W m^-2 yr^-1/2)

  Eigen::VectorXd to_vector() const {
    Eigen::VectorXd v(kNumParams);
    v << gamma, C1, C2, C3, k1, k2, k3, epsilon, sigma_F, sigma_T, F_C, F_V, sigma_delta;
    return v;
  }

  Eigen::VectorXd basic_subset() const { return to_vector().head(kNumBasicParams); }

  Eigen::VectorXd log_vector() const { return to_vector().array().log(); }

  static EbmParams from_vector(const Eigen::VectorXd& v) {
    if (v.size() != kNumParams && v.size() != kNumBasicParams)
      throw NumericsError("EbmParams: expected 11 or 13 entries");
    EbmParams p;
    p.gamma = v[0]; p.C1 = v[1]; p.C2 = v[2]; p.C3 = v[3];
    p.k1 = v[4]; p.k2 = v[5]; p.k3 = v[6]; p.epsilon = v[7];
    p.sigma_F = v[8]; p.sigma_T = v[9]; p.F_C = v[10];
    if (v.size() == kNumParams) { p.F_V = v[11]; p.sigma_delta = v[12]; }
    return p;
  }

  static EbmParams from_log_vector(const Eigen::VectorXd& lv) {
    return from_vector(lv.array().exp());
  }

  void validate() const {
    const Eigen::VectorXd v = to_vector();
    for (int i = 0; i < kNumParams; ++i)
      if (!(v[i] > 0.0) || !std::isfinite(v[i]))
        throw NumericsError("EbmParams: entries must be positive and finite");
  }

  static const char* name(int i) {
    static const char* names[kNumParams] = {"gamma", "C1", "C2", "C3", "k1", "k2", "k3",
                                            "epsilon", "sigma_F", "sigma_T", "F_C", "F_V",
                                            "sigma_delta"};
    return names[i];
  }
};

// Baseline log-parameter anchor used for priors and optimizer boxes. The
// printed hierarchical prior list runs one short of the parameter count; the
// efficacy entry is taken as 1.0 between k3 and sigma_F.
inline Eigen::VectorXd default_log_mu0() {
  Eigen::VectorXd mu(kNumParams);
  mu << std::log(2.0), std::log(5.0), std::log(20.0), std::log(100.0), std::log(1.0),
      std::log(2.0), std::log(1.0), std::log(1.0), std::log(0.5), std::log(0.5),
      std::log(3.0), std::log(20.0), std::log(0.05);
  return mu;
}

// Equilibrium climate sensitivity.
inline double ecs(const EbmParams& p) { return p.F_C / p.k1; }

// Dimensionless CO2 forcing factor: log2 of the concentration ratio.
inline double co2_forcing_factor(double co2_ratio) {
  if (!(co2_ratio > 0.0)) throw NumericsError("co2_forcing_factor: ratio must be > 0");
  return std::log2(co2_ratio);
}

// Aligned annual inputs. nu (the shared-discrepancy driver) may be empty when
// the series feeds the basic system.
struct ForcingSeries {
  Eigen::VectorXd years;
  Eigen::VectorXd f_co2;
  Eigen::VectorXd f_volc;
  Eigen::VectorXd nu;

  Eigen::Index size() const { return f_co2.size(); }

  void validate() const {
    if (years.size() != f_co2.size() || f_volc.size() != f_co2.size())
      throw NumericsError("ForcingSeries: length mismatch");
    if (nu.size() != 0 && nu.size() != f_co2.size())
      throw NumericsError("ForcingSeries: nu length mismatch");
    require_finite(f_co2, "ForcingSeries: f_co2");
    require_finite(f_volc, "ForcingSeries: f_volc");
    if (nu.size()) require_finite(nu, "ForcingSeries: nu");
  }

  // T x 1 input for the basic system.
  Eigen::MatrixXd basic_inputs() const { return f_co2; }

  // T x 3 input (f_C, f_V, nu) for the extended system.
  Eigen::MatrixXd extended_inputs(const Eigen::VectorXd& nu_override = Eigen::VectorXd()) const {
    const Eigen::VectorXd& use_nu = nu_override.size() ? nu_override : nu;
    Eigen::MatrixXd f = Eigen::MatrixXd::Zero(size(), 3);
    f.col(0) = f_co2;
    f.col(1) = f_volc;
    if (use_nu.size()) {
      if (use_nu.size() < size()) throw NumericsError("ForcingSeries: nu shorter than series");
      f.col(2) = use_nu.head(size());
    }
    return f;
  }
};

// One scenario's worth of data: bivariate (T1, N) observations plus aligned
// forcing. tau_H/tau_F are counts of historical/total years where relevant.
struct ScenarioData {
  std::string label;
  ObservationSeries obs;
  ForcingSeries forcing;
  Eigen::Index tau_H = 0;
  Eigen::Index tau_F = 0;

  void validate() const {
    obs.validate();
    forcing.validate();
    if (obs.size() != forcing.size())
      throw NumericsError("ScenarioData: observation/forcing length mismatch");
  }
};

namespace detail {

inline Eigen::MatrixXd basic_drift(const EbmParams& p) {
  Eigen::MatrixXd A = Eigen::MatrixXd::Zero(4, 4);
  A(0, 0) = -p.gamma;
  A(1, 0) = 1.0 / p.C1;
  A(1, 1) = -(p.k1 + p.k2) / p.C1;
  A(1, 2) = p.k2 / p.C1;
  A(2, 1) = p.k2 / p.C2;
  A(2, 2) = -(p.k2 + p.epsilon * p.k3) / p.C2;
  A(2, 3) = p.epsilon * p.k3 / p.C2;
  A(3, 2) = p.k3 / p.C3;
  A(3, 3) = -p.k3 / p.C3;
  return A;
}

inline Eigen::MatrixXd basic_diffusion(const EbmParams& p) {
  Eigen::MatrixXd Q = Eigen::MatrixXd::Zero(4, 4);
  Q(0, 0) = p.sigma_F * p.sigma_F;
  Q(1, 1) = (p.sigma_T / p.C1) * (p.sigma_T / p.C1);
  return Q;
}

inline Eigen::MatrixXd obs_rows(const EbmParams& p, bool extended) {
  Eigen::MatrixXd H = Eigen::MatrixXd::Zero(2, extended ? 5 : 4);
  H(0, 1) = 1.0;  // T1
  H(1, 0) = 1.0;  // N = F - k1 T1 + (1-eps) k3 (T2 - T3) [+ delta]
  H(1, 1) = -p.k1;
  H(1, 2) = (1.0 - p.epsilon) * p.k3;
  H(1, 3) = -(1.0 - p.epsilon) * p.k3;
  if (extended) H(1, 4) = 1.0;
  return H;
}

}  // namespace detail

// 4-state system for step-forcing experiments: state (F, T1, T2, T3), single
// CO2 input, initial mean (2 F_C, 0, 0, 0) and stationary initial covariance.
inline LinearGaussianSSM build_basic_system(const EbmParams& p, double dt = 1.0) {
  p.validate();
  ContinuousLGS sys;
  sys.A = detail::basic_drift(p);
  sys.B = Eigen::MatrixXd::Zero(4, 1);
  sys.B(0, 0) = p.gamma * p.F_C;
  sys.Q = detail::basic_diffusion(p);

  Eigen::VectorXd m0 = Eigen::VectorXd::Zero(4);
  m0[0] = 2.0 * p.F_C;

  DiscretizedLGS d = discretize(sys.A, sys.B, sys.Q, dt);
  LinearGaussianSSM out;
  out.A_d = d.A_d;
  out.B_d = d.B_d;
  out.Q_d = d.Q_d;
  out.H_d = detail::obs_rows(p, false);
  out.R_d = Eigen::MatrixXd::Zero(2, 2);
  out.m0 = m0;
  out.P0 = stationary_covariance(d.A_d, d.Q_d);
  return out;
}

// 5-state system with state (F, T1, T2, T3, delta) and inputs (f_C, f_V, nu).
// The discrepancy random walk has no stationary variance; its initial
// variance p0_delta anchors delta near zero at the start of the record.
inline LinearGaussianSSM build_extended_system(const EbmParams& p, double dt = 1.0,
                                               double p0_delta = 1e-6) {
  p.validate();
  if (p0_delta < 0.0) throw NumericsError("build_extended_system: p0_delta must be >= 0");

  Eigen::MatrixXd A = Eigen::MatrixXd::Zero(5, 5);
  A.topLeftCorner(4, 4) = detail::basic_drift(p);
  A(1, 4) = 1.0 / p.C1;

  Eigen::MatrixXd B = Eigen::MatrixXd::Zero(5, 3);
  B(0, 0) = p.gamma * p.F_C;
  // Volcanic channel: positive aerosol optical depth reduces the forcing, so
  // a unit AOD impulse produces an immediate negative radiation response.
  B(0, 1) = -p.gamma * p.F_V;
  B(4, 2) = 1.0;

  Eigen::MatrixXd Q = Eigen::MatrixXd::Zero(5, 5);
  Q.topLeftCorner(4, 4) = detail::basic_diffusion(p);
  Q(4, 4) = p.sigma_delta * p.sigma_delta;

  DiscretizedLGS d = discretize(A, B, Q, dt);

  // Stationary covariance of the stochastic (F, T) block only; the fifth row
  // of A is zero so the full A_d has a unit eigenvalue.
  DiscretizedLGS block =
      discretize(A.topLeftCorner(4, 4), Eigen::MatrixXd::Zero(4, 1), Q.topLeftCorner(4, 4), dt);
  Eigen::MatrixXd P0 = Eigen::MatrixXd::Zero(5, 5);
  P0.topLeftCorner(4, 4) = stationary_covariance(block.A_d, block.Q_d);
  P0(4, 4) = p0_delta;

  LinearGaussianSSM out;
  out.A_d = d.A_d;
  out.B_d = d.B_d;
  out.Q_d = d.Q_d;
  out.H_d = detail::obs_rows(p, true);
  out.R_d = Eigen::MatrixXd::Zero(2, 2);
  out.m0 = Eigen::VectorXd::Zero(5);
  out.P0 = P0;
  return out;
}

struct SimulationResult {
  Eigen::MatrixXd states;        // T x n
  Eigen::MatrixXd observations;  // T x q
};

// Forward simulation x(t) = A_d x(t-1) + B_d f(t) + w(t), y(t) = H x(t) + v(t),
// starting from a draw of the system's initial distribution.
inline SimulationResult simulate(const LinearGaussianSSM& ssm, const Eigen::MatrixXd& forcing,
                                 RngStream& rng) {
  ssm.validate();
  const Eigen::Index T = forcing.rows();
  const Eigen::Index n = ssm.state_dim();
  const Eigen::Index q = ssm.obs_dim();
  if (forcing.cols() != ssm.input_dim())
    throw NumericsError("simulate: forcing width mismatch");

  const Eigen::MatrixXd L0 = safe_cholesky(ssm.P0);
  const Eigen::MatrixXd Lq = safe_cholesky(ssm.Q_d);
  const bool noisy_obs = ssm.R_d.cwiseAbs().maxCoeff() > 0.0;
  const Eigen::MatrixXd Lr = noisy_obs ? safe_cholesky(ssm.R_d) : Eigen::MatrixXd();

  SimulationResult out;
  out.states.resize(T, n);
  out.observations.resize(T, q);

  Eigen::VectorXd x = ssm.m0 + L0 * rng.normal_vector(n);
  for (Eigen::Index t = 0; t < T; ++t) {
    x = ssm.A_d * x + ssm.B_d * forcing.row(t).transpose() + Lq * rng.normal_vector(n);
    Eigen::VectorXd y = ssm.H_d * x;
    if (noisy_obs) y += Lr * rng.normal_vector(q);
    out.states.row(t) = x.transpose();
    out.observations.row(t) = y.transpose();
  }
  return out;
}

}  // namespace ebmcal
