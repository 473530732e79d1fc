// Trajectory ensembles and the summary statistics derived from them:
// quantile tables, reference-period anomalies and threshold exceedance.
#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <utility>
#include <vector>

#include <Eigen/Dense>

#include "ebmcal/linalg.hpp"

namespace ebmcal {

// S trajectories of q observables over `times`. Each trajectory descends
// from exactly one posterior (or MLE) parameter draw.
struct ProjectionEnsemble {
  Eigen::VectorXd times;
  std::vector<Eigen::MatrixXd> samples;                    // each T x q
  std::vector<std::pair<int, std::uint64_t>> provenance;   // (draw index, stream key)
  int skipped_draws = 0;

  Eigen::Index horizon() const { return times.size(); }
  Eigen::Index n_samples() const { return static_cast<Eigen::Index>(samples.size()); }
  Eigen::Index obs_dim() const { return samples.empty() ? 0 : samples.front().cols(); }

  Eigen::MatrixXd mean() const {
    Eigen::MatrixXd m = Eigen::MatrixXd::Zero(horizon(), obs_dim());
    for (const auto& s : samples) m += s;
    return m / static_cast<double>(samples.size());
  }

  Eigen::MatrixXd sd() const {
    const Eigen::MatrixXd m = mean();
    Eigen::MatrixXd v = Eigen::MatrixXd::Zero(m.rows(), m.cols());
    for (const auto& s : samples) v += (s - m).cwiseAbs2();
    v /= std::max<double>(1.0, static_cast<double>(samples.size()) - 1.0);
    return v.cwiseSqrt();
  }
};

// Type-7 quantile (linear interpolation of order statistics).
inline double quantile_type7(std::vector<double> v, double p) {
  if (v.empty()) throw NumericsError("quantile_type7: empty sample");
  std::sort(v.begin(), v.end());
  const double h = (static_cast<double>(v.size()) - 1.0) * p;
  const auto lo = static_cast<std::size_t>(std::floor(h));
  if (lo + 1 >= v.size()) return v.back();
  return v[lo] + (h - static_cast<double>(lo)) * (v[lo + 1] - v[lo]);
}

// Ensemble quantile at one (time, variable) cell.
inline double ensemble_quantile(const ProjectionEnsemble& ens, Eigen::Index t, Eigen::Index var,
                                double p) {
  std::vector<double> v;
  v.reserve(ens.samples.size());
  for (const auto& s : ens.samples) v.push_back(s(t, var));
  return quantile_type7(std::move(v), p);
}

struct AnomalySummary {
  double mean = 0.0;
  double median = 0.0;
  double q05 = 0.0;
  double q95 = 0.0;
  std::vector<double> samples;
};

struct YearRange {
  double first = 0.0;
  double last = 0.0;
  bool contains(double year) const { return year >= first && year <= last; }
};

// Per-sample mean over `window` minus a reference level, summarized.
// If `reference_series` (aligned to `reference_times`) is supplied the
// reference level is its mean over `reference`, shared by all samples;
// otherwise each trajectory supplies its own reference mean, in which case
// `reference` must overlap the trajectory span.
inline AnomalySummary anomaly_stats(const ProjectionEnsemble& ens, Eigen::Index var,
                                    const YearRange& window, const YearRange& reference,
                                    const Eigen::VectorXd& reference_times = Eigen::VectorXd(),
                                    const Eigen::VectorXd& reference_series = Eigen::VectorXd()) {
  std::vector<Eigen::Index> win_idx;
  for (Eigen::Index t = 0; t < ens.horizon(); ++t)
    if (window.contains(ens.times[t])) win_idx.push_back(t);
  if (win_idx.empty()) throw NumericsError("anomaly_stats: empty window");

  double shared_ref = 0.0;
  bool have_shared = false;
  if (reference_series.size()) {
    if (reference_times.size() != reference_series.size())
      throw NumericsError("anomaly_stats: reference series misaligned");
    double sum = 0.0;
    int count = 0;
    for (Eigen::Index t = 0; t < reference_times.size(); ++t) {
      if (reference.contains(reference_times[t]) && std::isfinite(reference_series[t])) {
        sum += reference_series[t];
        ++count;
      }
    }
    if (count == 0) throw NumericsError("anomaly_stats: empty reference window");
    shared_ref = sum / count;
    have_shared = true;
  }

  std::vector<Eigen::Index> ref_idx;
  if (!have_shared) {
    for (Eigen::Index t = 0; t < ens.horizon(); ++t)
      if (reference.contains(ens.times[t])) ref_idx.push_back(t);
    if (ref_idx.empty()) throw NumericsError("anomaly_stats: empty reference window");
  }

  AnomalySummary out;
  out.samples.reserve(ens.samples.size());
  for (const auto& s : ens.samples) {
    double wm = 0.0;
    for (auto t : win_idx) wm += s(t, var);
    wm /= static_cast<double>(win_idx.size());
    double ref = shared_ref;
    if (!have_shared) {
      ref = 0.0;
      for (auto t : ref_idx) ref += s(t, var);
      ref /= static_cast<double>(ref_idx.size());
    }
    out.samples.push_back(wm - ref);
  }
  double sum = 0.0;
  for (double v : out.samples) sum += v;
  out.mean = sum / static_cast<double>(out.samples.size());
  out.median = quantile_type7(out.samples, 0.5);
  out.q05 = quantile_type7(out.samples, 0.05);
  out.q95 = quantile_type7(out.samples, 0.95);
  return out;
}

// Per-year fraction of trajectories whose anomaly relative to `reference_offset`
// exceeds the threshold. Raw empirical fractions, no smoothing.
inline Eigen::VectorXd exceedance_curve(const ProjectionEnsemble& ens, Eigen::Index var,
                                        double threshold, double reference_offset = 0.0) {
  if (!(threshold > 0.0)) throw NumericsError("exceedance_curve: threshold must be > 0");
  Eigen::VectorXd prob = Eigen::VectorXd::Zero(ens.horizon());
  for (const auto& s : ens.samples)
    for (Eigen::Index t = 0; t < ens.horizon(); ++t)
      if (s(t, var) - reference_offset > threshold) prob[t] += 1.0;
  return prob / std::max<double>(1.0, static_cast<double>(ens.samples.size()));
}

}  // namespace ebmcal
