// Small dense-matrix numerics: matrix exponential, exact discretization of
// continuous-time linear-Gaussian systems, discrete Lyapunov solve and the
// PSD hygiene shared by everything downstream. Sized for n <= ~16.
#pragma once

#include <cmath>
#include <sstream>
#include <stdexcept>
#include <string>

#include <Eigen/Dense>
#include <Eigen/Eigenvalues>

namespace ebmcal {

class NumericsError : public std::runtime_error {
 public:
  explicit NumericsError(const std::string& what) : std::runtime_error(what) {}
};

inline void require_finite(const Eigen::MatrixXd& m, const char* name) {
  if (!m.allFinite()) {
    std::ostringstream os;
    os << name << " contains non-finite entries";
    throw NumericsError(os.str());
  }
}

inline void symmetrize(Eigen::MatrixXd& m) {
  m = 0.5 * (m + m.transpose()).eval();
}

// Scaling-and-squaring with the degree-13 Pade approximant.
inline Eigen::MatrixXd matrix_exponential(const Eigen::MatrixXd& m) {
  if (m.rows() != m.cols()) throw NumericsError("matrix_exponential: matrix must be square");
  require_finite(m, "matrix_exponential: input");

  static const double pade13[] = {
      64764752532480000.0, 32382376266240000.0, 7771770303897600.0,
      1187353796428800.0,  129060195264000.0,   10559470521600.0,
      670442572800.0,      33522128640.0,       1323241920.0,
      40840800.0,          960960.0,            16380.0,
      182.0,               1.0};
  const double theta13 = 5.371920351148152;

  const Eigen::Index n = m.rows();
  const double norm = m.cwiseAbs().colwise().sum().maxCoeff();  // 1-norm
  int squarings = 0;
  Eigen::MatrixXd a = m;
  if (norm > theta13) {
    squarings = static_cast<int>(std::ceil(std::log2(norm / theta13)));
    a /= std::ldexp(1.0, squarings);
  }

  const Eigen::MatrixXd a2 = a * a;
  const Eigen::MatrixXd a4 = a2 * a2;
  const Eigen::MatrixXd a6 = a4 * a2;
  const Eigen::MatrixXd id = Eigen::MatrixXd::Identity(n, n);

  Eigen::MatrixXd u = a * (a6 * (pade13[13] * a6 + pade13[11] * a4 + pade13[9] * a2) +
                           pade13[7] * a6 + pade13[5] * a4 + pade13[3] * a2 + pade13[1] * id);
  Eigen::MatrixXd v = a6 * (pade13[12] * a6 + pade13[10] * a4 + pade13[8] * a2) +
                      pade13[6] * a6 + pade13[4] * a4 + pade13[2] * a2 + pade13[0] * id;

  Eigen::MatrixXd r = (v - u).partialPivLu().solve(v + u);
  for (int i = 0; i < squarings; ++i) r = (r * r).eval();

  if (!r.allFinite()) {
    std::ostringstream os;
    os << "matrix_exponential: overflow (input 1-norm " << norm << ", " << squarings
       << " squarings)";
    throw NumericsError(os.str());
  }
  return r;
}

// Clamp a symmetric matrix onto the PSD cone. Eigenvalues in [-tol, 0) are
// zeroed; anything below -tol means the input was not a covariance.
inline Eigen::MatrixXd clamp_psd(const Eigen::MatrixXd& m, double tol = 1e-10) {
  Eigen::MatrixXd s = 0.5 * (m + m.transpose());
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(s);
  if (eig.info() != Eigen::Success) throw NumericsError("clamp_psd: eigendecomposition failed");
  Eigen::VectorXd lam = eig.eigenvalues();
  const double scale = std::max(1.0, lam.cwiseAbs().maxCoeff());
  for (Eigen::Index i = 0; i < lam.size(); ++i) {
    if (lam[i] < -tol * scale) {
      std::ostringstream os;
      os << "clamp_psd: eigenvalue " << lam[i] << " below tolerance";
      throw NumericsError(os.str());
    }
    if (lam[i] < 0.0) lam[i] = 0.0;
  }
  Eigen::MatrixXd out = eig.eigenvectors() * lam.asDiagonal() * eig.eigenvectors().transpose();
  symmetrize(out);
  return out;
}

// Factor L with M ~= L L', usable for sampling even when M is only PSD:
// Cholesky first, pivoted LDLT with clamped diagonal as the cheap fallback,
// symmetric eigendecomposition as the last resort.
inline Eigen::MatrixXd safe_cholesky(const Eigen::MatrixXd& m) {
  require_finite(m, "safe_cholesky: input");
  Eigen::LLT<Eigen::MatrixXd> llt(m);
  if (llt.info() == Eigen::Success) return llt.matrixL();
  Eigen::LDLT<Eigen::MatrixXd> ldlt(0.5 * (m + m.transpose()));
  if (ldlt.info() == Eigen::Success) {
    const Eigen::VectorXd d = ldlt.vectorD().cwiseMax(0.0).cwiseSqrt();
    Eigen::MatrixXd f = ldlt.matrixL();
    f = ldlt.transpositionsP().transpose() * Eigen::MatrixXd(f * d.asDiagonal());
    if (f.allFinite()) return f;
  }
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(0.5 * (m + m.transpose()));
  if (eig.info() != Eigen::Success) throw NumericsError("safe_cholesky: eigendecomposition failed");
  Eigen::VectorXd lam = eig.eigenvalues().cwiseMax(0.0).cwiseSqrt();
  return eig.eigenvectors() * lam.asDiagonal();
}

struct DiscretizedLGS {
  Eigen::MatrixXd A_d;
  Eigen::MatrixXd B_d;
  Eigen::MatrixXd Q_d;
};

// Exact one-step discretization over dt of dx = A x + B f + w, Cov(w) = Q:
//   A_d = exp(A dt)
//   B_d = phi1(A dt) B dt          (inversion-free; A may be singular)
//   Q_d = int_0^dt exp(A s) Q exp(A' s) ds   (Van Loan block exponential)
inline DiscretizedLGS discretize(const Eigen::MatrixXd& A, const Eigen::MatrixXd& B,
                                 const Eigen::MatrixXd& Q, double dt) {
  if (!(dt > 0.0)) throw NumericsError("discretize: dt must be > 0");
  const Eigen::Index n = A.rows();
  const Eigen::Index p = B.cols();
  if (A.cols() != n || B.rows() != n || Q.rows() != n || Q.cols() != n)
    throw NumericsError("discretize: inconsistent dimensions");
  require_finite(A, "discretize: A");
  require_finite(B, "discretize: B");
  require_finite(Q, "discretize: Q");

  DiscretizedLGS out;

  // exp([[A, B], [0, 0]] dt) = [[A_d, B_d], [0, I]].
  Eigen::MatrixXd aug = Eigen::MatrixXd::Zero(n + p, n + p);
  aug.topLeftCorner(n, n) = A * dt;
  aug.topRightCorner(n, p) = B * dt;
  const Eigen::MatrixXd e1 = matrix_exponential(aug);
  out.A_d = e1.topLeftCorner(n, n);
  out.B_d = e1.topRightCorner(n, p);

  // exp([[-A, Q], [0, A']] dt) = [[*, F12], [0, F22]],  Q_d = F22' F12.
  Eigen::MatrixXd vl = Eigen::MatrixXd::Zero(2 * n, 2 * n);
  vl.topLeftCorner(n, n) = -A * dt;
  vl.topRightCorner(n, n) = Q * dt;
  vl.bottomRightCorner(n, n) = A.transpose() * dt;
  const Eigen::MatrixXd e2 = matrix_exponential(vl);
  // Stiff drift matrices leave cancellation noise relative to the largest
  // eigenvalue; tolerate that scale when clamping onto the PSD cone.
  out.Q_d = clamp_psd(e2.bottomRightCorner(n, n).transpose() * e2.topRightCorner(n, n), 1e-7);
  return out;
}

// Solve P = A P A' + Q by doubling: P <- P + X P X', X <- X X'. Requires the
// spectral radius of A below one.
inline Eigen::MatrixXd stationary_covariance(const Eigen::MatrixXd& A_d,
                                             const Eigen::MatrixXd& Q_d,
                                             double tol = 1e-12, int max_iter = 200) {
  const Eigen::Index n = A_d.rows();
  if (A_d.cols() != n || Q_d.rows() != n || Q_d.cols() != n)
    throw NumericsError("stationary_covariance: inconsistent dimensions");
  require_finite(A_d, "stationary_covariance: A_d");
  require_finite(Q_d, "stationary_covariance: Q_d");

  Eigen::MatrixXd p = 0.5 * (Q_d + Q_d.transpose());
  Eigen::MatrixXd x = A_d;
  for (int it = 0; it < max_iter; ++it) {
    const Eigen::MatrixXd incr = x * p * x.transpose();
    const double scale = std::max(1.0, p.cwiseAbs().maxCoeff());
    if (!incr.allFinite() || !p.allFinite()) break;
    p += incr;
    symmetrize(p);
    if (incr.cwiseAbs().maxCoeff() <= tol * scale) return clamp_psd(p);
    x = (x * x).eval();
  }

  Eigen::EigenSolver<Eigen::MatrixXd> eig(A_d);
  Eigen::Index worst = 0;
  eig.eigenvalues().cwiseAbs().maxCoeff(&worst);
  std::ostringstream os;
  os << "stationary_covariance: no convergence; eigenvalue of largest modulus "
     << eig.eigenvalues()[worst] << " (|.| = " << std::abs(eig.eigenvalues()[worst]) << ")";
  throw NumericsError(os.str());
}

}  // namespace ebmcal
