// Finite-difference derivatives and observed-information handling.
#pragma once

#include <functional>

#include <Eigen/Dense>

#include "ebmcal/linalg.hpp"

namespace ebmcal {

inline Eigen::VectorXd central_difference_gradient(
    const std::function<double(const Eigen::VectorXd&)>& fn, const Eigen::VectorXd& x,
    double h) {
  Eigen::VectorXd g(x.size());
  for (Eigen::Index i = 0; i < x.size(); ++i) {
    Eigen::VectorXd xp = x, xm = x;
    xp[i] += h;
    xm[i] -= h;
    g[i] = (fn(xp) - fn(xm)) / (2.0 * h);
  }
  return g;
}

// Central-difference Hessian of fn, symmetrized.
inline Eigen::MatrixXd central_difference_hessian(
    const std::function<double(const Eigen::VectorXd&)>& fn, const Eigen::VectorXd& x,
    double h) {
  const Eigen::Index n = x.size();
  Eigen::MatrixXd H(n, n);
  const double f0 = fn(x);
  for (Eigen::Index i = 0; i < n; ++i) {
    Eigen::VectorXd xp = x, xm = x;
    xp[i] += h;
    xm[i] -= h;
    H(i, i) = (fn(xp) - 2.0 * f0 + fn(xm)) / (h * h);
    for (Eigen::Index j = i + 1; j < n; ++j) {
      Eigen::VectorXd xpp = x, xpm = x, xmp = x, xmm = x;
      xpp[i] += h; xpp[j] += h;
      xpm[i] += h; xpm[j] -= h;
      xmp[i] -= h; xmp[j] += h;
      xmm[i] -= h; xmm[j] -= h;
      H(i, j) = (fn(xpp) - fn(xpm) - fn(xmp) + fn(xmm)) / (4.0 * h * h);
      H(j, i) = H(i, j);
    }
  }
  return H;
}

// Invert an information matrix after clamping it onto the PD cone; flips
// `pd` to false when clamping was required.
inline Eigen::MatrixXd information_to_covariance(Eigen::MatrixXd info, bool* pd) {
  symmetrize(info);
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(info);
  Eigen::VectorXd lam = eig.eigenvalues();
  const double floor = 1e-8 * std::max(1.0, lam.cwiseAbs().maxCoeff());
  bool clamped = false;
  for (Eigen::Index i = 0; i < lam.size(); ++i)
    if (lam[i] < floor) {
      lam[i] = floor;
      clamped = true;
    }
  if (pd) *pd = !clamped;
  Eigen::MatrixXd cov =
      eig.eigenvectors() * lam.cwiseInverse().asDiagonal() * eig.eigenvectors().transpose();
  symmetrize(cov);
  return cov;
}

}  // namespace ebmcal
