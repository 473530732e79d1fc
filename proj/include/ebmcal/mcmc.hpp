// Metropolis-Hastings machinery: random-walk proposals with robust adaptive
// scaling (Vihola-style rank-one Cholesky updates), multivariate normal and
// inverse-Wishart draws, and split-chain Gelman-Rubin diagnostics.
#pragma once

#include <cmath>
#include <functional>
#include <limits>
#include <numbers>
#include <vector>

#include <Eigen/Dense>

#include "ebmcal/linalg.hpp"
#include "ebmcal/rng.hpp"

namespace ebmcal {

// Rank-one update/downdate of a lower-triangular Cholesky factor:
// L L' + sign * x x'. Returns false (leaving L untouched) if the downdate
// would destroy positive definiteness.
inline bool cholesky_update(Eigen::MatrixXd& L, Eigen::VectorXd x, double sign) {
  const Eigen::Index n = L.rows();
  Eigen::MatrixXd work = L;
  for (Eigen::Index k = 0; k < n; ++k) {
    const double r2 = work(k, k) * work(k, k) + sign * x[k] * x[k];
    if (r2 <= 0.0) return false;
    const double r = std::sqrt(r2);
    const double c = r / work(k, k);
    const double s = x[k] / work(k, k);
    work(k, k) = r;
    if (k + 1 < n) {
      work.col(k).tail(n - k - 1) =
          (work.col(k).tail(n - k - 1) + sign * s * x.tail(n - k - 1)) / c;
      x.tail(n - k - 1) = c * x.tail(n - k - 1) - s * work.col(k).tail(n - k - 1);
    }
  }
  L = work;
  return true;
}

// Random-walk proposal state for one parameter block. `chol` is the lower
// Cholesky factor of the proposal covariance. Adaptation runs during burn-in
// only; freeze() pins the factor for the sampling period.
struct RamProposal {
  Eigen::MatrixXd chol;
  double target_rate = 0.26;
  long step = 0;
  bool frozen = false;
  int skipped_updates = 0;

  static RamProposal from_covariance(const Eigen::MatrixXd& cov, double target) {
    RamProposal p;
    p.chol = safe_cholesky(cov);
    // Guard against a degenerate seed covariance.
    const double floor = 1e-8;
    for (Eigen::Index i = 0; i < p.chol.rows(); ++i)
      if (p.chol(i, i) < floor) p.chol(i, i) = floor;
    p.target_rate = target;
    return p;
  }

  Eigen::Index dim() const { return chol.rows(); }
  void freeze() { frozen = true; }
};

// One Vihola-style adaptation step after a proposal with innovation z and
// realized acceptance probability alpha. No-op once frozen.
inline void ram_adapt(RamProposal& prop, const Eigen::VectorXd& z, double alpha) {
  if (prop.frozen) return;
  prop.step += 1;
  const double d = static_cast<double>(prop.dim());
  const double eta = std::min(1.0, d * std::pow(static_cast<double>(prop.step), -2.0 / 3.0));
  const double c = eta * (alpha - prop.target_rate);
  if (c == 0.0) return;
  const double zn = z.norm();
  if (!(zn > 0.0)) return;
  Eigen::VectorXd v = std::sqrt(std::abs(c)) / zn * (prop.chol * z);
  if (!cholesky_update(prop.chol, std::move(v), c > 0.0 ? 1.0 : -1.0))
    prop.skipped_updates += 1;
}

struct MhResult {
  bool accepted = false;
  double alpha = 0.0;      // acceptance probability actually used
  double log_alpha = -std::numeric_limits<double>::infinity();
};

// Random-walk Metropolis step on a parameter block. `log_target(x)` may
// return -inf (or throw) for invalid proposals, which auto-rejects. The
// current target value is kept alongside to avoid re-evaluation.
inline MhResult mh_step(Eigen::VectorXd& x, double& log_target_x,
                        const std::function<double(const Eigen::VectorXd&)>& log_target,
                        RamProposal& prop, RngStream& rng, bool adapt) {
  MhResult res;
  const Eigen::VectorXd z = rng.normal_vector(prop.dim());
  const Eigen::VectorXd candidate = x + prop.chol * z;

  double lt = -std::numeric_limits<double>::infinity();
  try {
    lt = log_target(candidate);
  } catch (const NumericsError&) {
    lt = -std::numeric_limits<double>::infinity();
  }
  if (std::isnan(lt)) lt = -std::numeric_limits<double>::infinity();

  res.log_alpha = lt - log_target_x;
  res.alpha = std::isfinite(res.log_alpha) ? std::min(1.0, std::exp(res.log_alpha))
                                           : (res.log_alpha > 0.0 ? 1.0 : 0.0);
  if (rng.uniform() <= res.alpha) {
    x = candidate;
    log_target_x = lt;
    res.accepted = true;
  }
  if (adapt) ram_adapt(prop, z, res.alpha);
  return res;
}

// log N(x; mean, Sigma) with Sigma given by its lower Cholesky factor.
inline double mvn_logpdf_chol(const Eigen::VectorXd& x, const Eigen::VectorXd& mean,
                              const Eigen::MatrixXd& chol_lower) {
  const Eigen::Index n = x.size();
  const Eigen::VectorXd w =
      chol_lower.triangularView<Eigen::Lower>().solve(x - mean);
  const double logdet = 2.0 * chol_lower.diagonal().array().log().sum();
  return -0.5 * (n * std::log(2.0 * std::numbers::pi) + logdet + w.squaredNorm());
}

inline double normal_logpdf(double x, double mean, double var) {
  const double d = x - mean;
  return -0.5 * (std::log(2.0 * std::numbers::pi * var) + d * d / var);
}

inline Eigen::VectorXd mvn_sample(const Eigen::VectorXd& mean, const Eigen::MatrixXd& cov,
                                  RngStream& rng) {
  return mean + safe_cholesky(cov) * rng.normal_vector(mean.size());
}

// Inverse-Wishart draw via the Bartlett decomposition of the Wishart inverse.
inline Eigen::MatrixXd inverse_wishart_sample(const Eigen::MatrixXd& scale, double dof,
                                              RngStream& rng) {
  const Eigen::Index p = scale.rows();
  if (dof < static_cast<double>(p))
    throw NumericsError("inverse_wishart_sample: dof below dimension");
  // X ~ Wishart(scale^{-1}, dof), X = (L A)(L A)' with scale^{-1} = L L'.
  Eigen::LLT<Eigen::MatrixXd> llt(scale);
  if (llt.info() != Eigen::Success)
    throw NumericsError("inverse_wishart_sample: scale not positive definite");
  // chol(scale^{-1}) = (chol(scale))^{-T} up to orientation; build it by
  // solving L_s' X = I, which is upper triangular, then transpose trick.
  const Eigen::MatrixXd Ls = llt.matrixL();
  Eigen::MatrixXd A = Eigen::MatrixXd::Zero(p, p);
  for (Eigen::Index i = 0; i < p; ++i) {
    A(i, i) = std::sqrt(rng.chi_squared(dof - static_cast<double>(i)));
    for (Eigen::Index j = 0; j < i; ++j) A(i, j) = rng.normal();
  }
  // M = L A where L = Ls^{-T} is the upper-triangular factor of scale^{-1}
  // viewed as L L' with L lower? Work with W = Ls^{-T} A (general matrix).
  const Eigen::MatrixXd W =
      Ls.transpose().triangularView<Eigen::Upper>().solve(A);
  const Eigen::MatrixXd X = W * W.transpose();  // Wishart(scale^{-1}, dof)
  Eigen::MatrixXd out = X.llt().solve(Eigen::MatrixXd::Identity(p, p));
  symmetrize(out);
  return out;
}

// Split-chain Gelman-Rubin statistic for one scalar summary.
inline double split_rhat(const std::vector<std::vector<double>>& chains) {
  std::vector<std::vector<double>> halves;
  for (const auto& c : chains) {
    const std::size_t half = c.size() / 2;
    if (half < 2) continue;
    halves.emplace_back(c.begin(), c.begin() + half);
    halves.emplace_back(c.begin() + half, c.begin() + 2 * half);
  }
  if (halves.size() < 2) return std::numeric_limits<double>::quiet_NaN();
  const double m = static_cast<double>(halves.size());
  const double n = static_cast<double>(halves.front().size());

  std::vector<double> means;
  std::vector<double> vars;
  for (const auto& h : halves) {
    double s = 0.0;
    for (double v : h) s += v;
    const double mu = s / n;
    double ss = 0.0;
    for (double v : h) ss += (v - mu) * (v - mu);
    means.push_back(mu);
    vars.push_back(ss / (n - 1.0));
  }
  double grand = 0.0;
  for (double mu : means) grand += mu;
  grand /= m;
  double b = 0.0;
  for (double mu : means) b += (mu - grand) * (mu - grand);
  b *= n / (m - 1.0);
  double w = 0.0;
  for (double v : vars) w += v;
  w /= m;
  if (w <= 0.0) return 1.0;  // constant chains
  const double var_plus = (n - 1.0) / n * w + b / n;
  return std::sqrt(var_plus / w);
}

}  // namespace ebmcal
