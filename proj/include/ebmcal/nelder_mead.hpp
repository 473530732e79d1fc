// Derivative-free simplex minimizer with box projection and the adaptive
// coefficients of Gao & Han for moderate dimensions.
#pragma once

#include <algorithm>
#include <functional>
#include <limits>
#include <vector>

#include <Eigen/Dense>

namespace ebmcal {

struct NelderMeadOptions {
  long max_evals = 20000;
  double f_tol = 1e-8;
  double initial_step = 0.25;
  Eigen::VectorXd lower;  // optional box, empty = unbounded
  Eigen::VectorXd upper;
};

struct NelderMeadResult {
  Eigen::VectorXd x;
  double f = std::numeric_limits<double>::infinity();
  long evals = 0;
  bool converged = false;
};

inline NelderMeadResult nelder_mead(const std::function<double(const Eigen::VectorXd&)>& fn,
                                    const Eigen::VectorXd& x0, const NelderMeadOptions& opts) {
  const Eigen::Index n = x0.size();
  const double nd = static_cast<double>(n);
  const double alpha = 1.0;
  const double beta = 1.0 + 2.0 / nd;
  const double gamma = 0.75 - 0.5 / nd;
  const double delta = 1.0 - 1.0 / nd;

  const auto project = [&](Eigen::VectorXd v) {
    if (opts.lower.size()) v = v.cwiseMax(opts.lower);
    if (opts.upper.size()) v = v.cwiseMin(opts.upper);
    return v;
  };

  NelderMeadResult res;
  const auto eval = [&](const Eigen::VectorXd& v) {
    res.evals += 1;
    const double f = fn(v);
    return std::isnan(f) ? std::numeric_limits<double>::infinity() : f;
  };

  std::vector<Eigen::VectorXd> xs(n + 1);
  std::vector<double> fs(n + 1);
  xs[0] = project(x0);
  fs[0] = eval(xs[0]);
  for (Eigen::Index i = 0; i < n; ++i) {
    Eigen::VectorXd v = xs[0];
    v[i] += (v[i] == 0.0 ? opts.initial_step : opts.initial_step * std::max(1.0, std::abs(v[i])));
    xs[i + 1] = project(v);
    fs[i + 1] = eval(xs[i + 1]);
  }

  std::vector<Eigen::Index> order(n + 1);
  while (res.evals < opts.max_evals) {
    for (Eigen::Index i = 0; i <= n; ++i) order[i] = i;
    std::sort(order.begin(), order.end(),
              [&](Eigen::Index a, Eigen::Index b) { return fs[a] < fs[b]; });
    const Eigen::Index best = order[0], worst = order[n], second = order[n - 1];

    if (fs[worst] - fs[best] <= opts.f_tol * (std::abs(fs[best]) + opts.f_tol)) {
      res.converged = true;
      break;
    }

    Eigen::VectorXd centroid = Eigen::VectorXd::Zero(n);
    for (Eigen::Index i = 0; i <= n; ++i)
      if (i != worst) centroid += xs[i];
    centroid /= nd;

    const Eigen::VectorXd xr = project(centroid + alpha * (centroid - xs[worst]));
    const double fr = eval(xr);

    if (fr < fs[best]) {
      const Eigen::VectorXd xe = project(centroid + beta * (xr - centroid));
      const double fe = eval(xe);
      if (fe < fr) { xs[worst] = xe; fs[worst] = fe; }
      else { xs[worst] = xr; fs[worst] = fr; }
    } else if (fr < fs[second]) {
      xs[worst] = xr;
      fs[worst] = fr;
    } else {
      const bool outside = fr < fs[worst];
      const Eigen::VectorXd xc = outside ? project(centroid + gamma * (xr - centroid))
                                         : project(centroid - gamma * (centroid - xs[worst]));
      const double fc = eval(xc);
      if (fc < std::min(fr, fs[worst])) {
        xs[worst] = xc;
        fs[worst] = fc;
      } else {
        for (Eigen::Index i = 0; i <= n; ++i) {
          if (i == best) continue;
          xs[i] = project(xs[best] + delta * (xs[i] - xs[best]));
          fs[i] = eval(xs[i]);
        }
      }
    }
  }

  Eigen::Index best = 0;
  for (Eigen::Index i = 1; i <= n; ++i)
    if (fs[i] < fs[best]) best = i;
  res.x = xs[best];
  res.f = fs[best];
  return res;
}

}  // namespace ebmcal
