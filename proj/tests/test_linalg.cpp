#include <catch2/catch_amalgamated.hpp>

#include <Eigen/Dense>

#include "ebmcal/ebm.hpp"
#include "ebmcal/linalg.hpp"
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

MatrixXd random_matrix(RngStream& rng, int n, double scale) {
  MatrixXd m(n, n);
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < n; ++j) m(i, j) = scale * rng.normal();
  return m;
}

}  // namespace

TEST_CASE("matrix exponential basics") {
  CHECK(matrix_exponential(MatrixXd::Zero(3, 3)).isApprox(MatrixXd::Identity(3, 3), 1e-15));

  MatrixXd d = MatrixXd::Zero(2, 2);
  d(0, 0) = -1.0;
  d(1, 1) = -2.0;
  const MatrixXd e = matrix_exponential(d);
  CHECK(e(0, 0) == Catch::Approx(std::exp(-1.0)).epsilon(1e-14));
  CHECK(e(1, 1) == Catch::Approx(std::exp(-2.0)).epsilon(1e-14));
  CHECK(std::abs(e(0, 1)) < 1e-15);
}

TEST_CASE("matrix exponential matches series oracle on random 5x5") {
  RngStream rng(71);
  for (int rep = 0; rep < 10; ++rep) {
    MatrixXd m = random_matrix(rng, 5, 0.2);
    m /= std::max(1.0, m.cwiseAbs().colwise().sum().maxCoeff());  // ||M|| <= 1
    const MatrixXd ours = matrix_exponential(m);
    const MatrixXd series = testutil::taylor_expm(m, 30);
    CHECK((ours - series).cwiseAbs().maxCoeff() < 1e-12);
  }
}

TEST_CASE("matrix exponential rejects non-finite input") {
  MatrixXd m = MatrixXd::Zero(2, 2);
  m(0, 1) = std::numeric_limits<double>::infinity();
  CHECK_THROWS_AS(matrix_exponential(m), NumericsError);
}

TEST_CASE("discretize: zero drift") {
  // A = 0 => A_d = I, B_d = B dt, Q_d = Q dt.
  MatrixXd A = MatrixXd::Zero(1, 1);
  MatrixXd B(1, 1); B << 0.7;
  MatrixXd Q(1, 1); Q << 0.3;
  const DiscretizedLGS d = discretize(A, B, Q, 1.0);
  CHECK(d.A_d(0, 0) == Catch::Approx(1.0).margin(1e-15));
  CHECK(d.B_d(0, 0) == Catch::Approx(0.7).margin(1e-14));
  CHECK(d.Q_d(0, 0) == Catch::Approx(0.3).margin(1e-14));
}

TEST_CASE("discretize: Ornstein-Uhlenbeck closed form") {
  MatrixXd A(1, 1); A << -2.0;
  MatrixXd B(1, 1); B << 1.0;
  MatrixXd Q(1, 1); Q << 0.25;
  const DiscretizedLGS d = discretize(A, B, Q, 1.0);
  CHECK(d.A_d(0, 0) == Catch::Approx(std::exp(-2.0)).epsilon(1e-13));
  CHECK(d.Q_d(0, 0) == Catch::Approx(0.25 * (1.0 - std::exp(-4.0)) / 4.0).epsilon(1e-12));

  // Cross-check Q_d against direct quadrature.
  const MatrixXd quad = testutil::quadrature_qd(A, Q, 1.0, 100000);
  CHECK(std::abs(d.Q_d(0, 0) - quad(0, 0)) < 1e-8);

  const MatrixXd P = stationary_covariance(d.A_d, d.Q_d);
  CHECK(P(0, 0) == Catch::Approx(0.0625).epsilon(1e-10));
}

TEST_CASE("discretize: one step matches fine ODE integration for the 4-state EBM") {
  const EbmParams p = hadgem2_es();
  const MatrixXd A = ebmcal::detail::basic_drift(p);
  MatrixXd B = MatrixXd::Zero(4, 1);
  B(0, 0) = p.gamma * p.F_C;
  const DiscretizedLGS d = discretize(A, B, ebmcal::detail::basic_diffusion(p), 1.0);

  VectorXd x(4);
  x << 2.0 * p.F_C, 0.0, 0.0, 0.0;
  VectorXd f(1); f << 2.0;
  const VectorXd discrete = d.A_d * x + d.B_d * f;
  const VectorXd ode = testutil::rk4_mean_step(A, B, f, x, 1.0, 1e-4);
  CHECK((discrete - ode).cwiseAbs().maxCoeff() < 1e-8);
}

TEST_CASE("phi1 identity: B_d equals A^{-1}(A_d - I)B for invertible A") {
  const EbmParams p = hadgem2_es();
  const MatrixXd A = ebmcal::detail::basic_drift(p);
  MatrixXd B = MatrixXd::Zero(4, 1);
  B(0, 0) = p.gamma * p.F_C;
  const DiscretizedLGS d = discretize(A, B, ebmcal::detail::basic_diffusion(p), 1.0);
  const MatrixXd direct = A.partialPivLu().solve((d.A_d - MatrixXd::Identity(4, 4)) * B);
  CHECK((d.B_d - direct).cwiseAbs().maxCoeff() < 1e-10);
}

TEST_CASE("Q_d equals quadrature of the noise integral (4-state EBM)") {
  const EbmParams p = hadgem2_es();
  const MatrixXd A = ebmcal::detail::basic_drift(p);
  const MatrixXd Q = ebmcal::detail::basic_diffusion(p);
  const DiscretizedLGS d = discretize(A, MatrixXd::Zero(4, 1), Q, 1.0);
  const MatrixXd quad = testutil::quadrature_qd(A, Q, 1.0, 100000);
  CHECK((d.Q_d - quad).cwiseAbs().maxCoeff() < 1e-8);
}

TEST_CASE("stationary covariance: white noise and residual check") {
  MatrixXd A = MatrixXd::Zero(3, 3);
  MatrixXd Q(3, 3);
  Q << 2.0, 0.3, 0.0, 0.3, 1.0, 0.1, 0.0, 0.1, 0.5;
  const MatrixXd P = stationary_covariance(A, Q);
  CHECK((P - Q).cwiseAbs().maxCoeff() < 1e-12);

  const EbmParams p = hadgem2_es();
  const DiscretizedLGS d = discretize(ebmcal::detail::basic_drift(p), MatrixXd::Zero(4, 1),
                                      ebmcal::detail::basic_diffusion(p), 1.0);
  const MatrixXd Ps = stationary_covariance(d.A_d, d.Q_d);
  const MatrixXd resid = Ps - d.A_d * Ps * d.A_d.transpose() - d.Q_d;
  CHECK(resid.cwiseAbs().maxCoeff() < 1e-10);
  CHECK((Ps - Ps.transpose()).cwiseAbs().maxCoeff() == 0.0);
  Eigen::SelfAdjointEigenSolver<MatrixXd> eig(Ps);
  CHECK(eig.eigenvalues().minCoeff() > -1e-10);
}

TEST_CASE("stationary covariance rejects unit-modulus transition") {
  MatrixXd A = MatrixXd::Identity(2, 2);
  MatrixXd Q = MatrixXd::Identity(2, 2);
  CHECK_THROWS_AS(stationary_covariance(A, Q), NumericsError);
}

TEST_CASE("covariance outputs are symmetric PSD after clamping") {
  RngStream rng(5);
  for (int rep = 0; rep < 20; ++rep) {
    MatrixXd m = random_matrix(rng, 4, 1.0);
    MatrixXd psd = m * m.transpose();
    psd(0, 1) += 1e-13;  // small asymmetry
    const MatrixXd c = clamp_psd(psd);
    CHECK((c - c.transpose()).cwiseAbs().maxCoeff() == 0.0);
    Eigen::SelfAdjointEigenSolver<MatrixXd> eig(c);
    CHECK(eig.eigenvalues().minCoeff() >= -1e-12);
  }
  MatrixXd indef(2, 2);
  indef << 1.0, 0.0, 0.0, -1.0;
  CHECK_THROWS_AS(clamp_psd(indef), NumericsError);
}
