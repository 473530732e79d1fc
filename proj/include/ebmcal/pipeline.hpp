// End-to-end stages shared by the command-line tool and the acceptance
// suite: data assembly from CSV files, synthetic-ensemble generation, the
// hierarchical fit with its posterior store, projection summaries,
// leave-one-out cross-validation, and the step-forcing bias demonstration.
#pragma once

#include <filesystem>
#include <fstream>
#include <iomanip>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "ebmcal/checkpoint.hpp"
#include "ebmcal/config.hpp"
#include "ebmcal/csv.hpp"
#include "ebmcal/mle.hpp"
#include "ebmcal/projection.hpp"

namespace ebmcal {

// ---------------------------------------------------------------------------
// Data assembly

inline ScenarioData load_scenario(const std::string& path, const ForcingSeries& forcing,
                                  Eigen::Index tau_H, Eigen::Index tau_F) {
  const SeriesFile s = read_series(path, {"tas", "rndt"}, true);
  ScenarioData sc;
  sc.label = std::filesystem::path(path).stem().string();
  sc.obs.values = s.values;
  sc.obs.missing = s.missing;
  sc.forcing = forcing;
  sc.tau_H = tau_H;
  sc.tau_F = tau_F;
  if (s.years.size() != forcing.size() || s.years[0] != forcing.years[0])
    throw ParseError(path + ": years do not match the forcing file");
  return sc;
}

inline ForcingSeries load_forcing(const std::string& path) {
  const SeriesFile s = read_series(path, {"fco2", "fvolc"}, false);
  ForcingSeries f;
  f.years = s.years;
  f.f_co2 = s.values.col(0);
  f.f_volc = s.values.col(1);
  return f;
}

// Observation record: tas plus its per-year standard deviation, padded with
// missing rows to tau_F so the scenario spans the projection horizon.
inline ScenarioData load_observations(const std::string& path, const ForcingSeries& forcing,
                                      Eigen::Index tau_H, Eigen::Index tau_F) {
  const SeriesFile s = read_series(path, {"tas", "sd"}, false);
  ScenarioData sc;
  sc.label = "observations";
  sc.forcing = forcing;
  sc.tau_H = tau_H;
  sc.tau_F = tau_F;
  sc.obs = ObservationSeries::all_missing(tau_F, 2);
  sc.obs.noise.assign(tau_F, Eigen::MatrixXd::Zero(2, 2));
  if (s.years[0] != forcing.years[0])
    throw ParseError(path + ": observation years must start with the forcing years");
  if (s.years.size() > tau_H)
    throw ParseError(path + ": observations extend past the historical period");
  for (Eigen::Index t = 0; t < s.years.size(); ++t) {
    sc.obs.values(t, 0) = s.values(t, 0);
    sc.obs.missing(t, 0) = false;
    sc.obs.noise[t](0, 0) = s.values(t, 1) * s.values(t, 1);
  }
  return sc;
}

inline HierData load_hier_data(const RunConfig& cfg) {
  if (cfg.forcing_file.empty()) throw ParseError("config: data.forcing is required");
  if (cfg.members.empty()) throw ParseError("config: at least one [member <label>] is required");

  const ForcingSeries forcing = load_forcing(cfg.resolve(cfg.forcing_file));
  const int year0 = static_cast<int>(forcing.years[0]);
  const Eigen::Index tau_F = forcing.size();
  const Eigen::Index tau_H = cfg.tau_H_year - year0 + 1;
  if (tau_H <= 0 || tau_H >= tau_F)
    throw ParseError("config: tau_H does not fall inside the forcing years");
  if (static_cast<int>(forcing.years[tau_F - 1]) != cfg.tau_F_year)
    throw ParseError("config: forcing file must end at tau_F");

  HierData data;
  data.tau_H = tau_H;
  data.tau_F = tau_F;

  // Abrupt forcing: a file if provided, otherwise the standard quadrupling.
  std::optional<ForcingSeries> abrupt_forcing;
  if (!cfg.forcing_abrupt_file.empty())
    abrupt_forcing = load_forcing(cfg.resolve(cfg.forcing_abrupt_file));

  for (const auto& m : cfg.members) {
    const SeriesFile ab = read_series(cfg.resolve(m.abrupt), {"tas", "rndt"}, true);
    ScenarioData abrupt;
    abrupt.label = m.label + ":abrupt";
    abrupt.obs.values = ab.values;
    abrupt.obs.missing = ab.missing;
    if (abrupt_forcing) {
      abrupt.forcing = *abrupt_forcing;
      if (abrupt.forcing.size() != ab.years.size())
        throw ParseError(cfg.resolve(m.abrupt) + ": length differs from abrupt forcing file");
    } else {
      abrupt.forcing.years = ab.years;
      abrupt.forcing.f_co2 = Eigen::VectorXd::Constant(ab.years.size(), 2.0);
      abrupt.forcing.f_volc = Eigen::VectorXd::Zero(ab.years.size());
    }
    data.abrupt.push_back(std::move(abrupt));
    data.histfut.push_back(load_scenario(cfg.resolve(m.histfut), forcing, tau_H, tau_F));
    data.histfut.back().label = m.label;
    data.labels.push_back(m.label);
  }

  if (!cfg.observations_file.empty()) {
    data.observations =
        load_observations(cfg.resolve(cfg.observations_file), forcing, tau_H, tau_F);
  } else {
    // No real-world record: the real-world block samples from its prior.
    data.observations.label = "observations";
    data.observations.forcing = forcing;
    data.observations.tau_H = tau_H;
    data.observations.tau_F = tau_F;
    data.observations.obs = ObservationSeries::all_missing(tau_F, 2);
  }
  data.validate();
  return data;
}

// ---------------------------------------------------------------------------
// Synthetic ensemble generation

struct SyntheticTruth {
  Eigen::MatrixXd log_theta;      // M x 13
  Eigen::VectorXd log_theta_obs;  // 13
  Eigen::VectorXd nu;             // tau_F
  Eigen::MatrixXd delta;          // M x tau_F (realized paths)
  HierData data;
};

// Draw an ensemble from the hierarchical generative model and simulate every
// scenario. Deterministic in (config, seed).
inline SyntheticTruth make_synthetic(const RunConfig& cfg) {
  const SyntheticConfig& s = cfg.synthetic;
  if (s.members < 1) throw ParseError("synthetic: members must be >= 1");
  const int year0 = s.start_year;
  const Eigen::Index tau_F = cfg.tau_F_year - year0 + 1;
  const Eigen::Index tau_H = cfg.tau_H_year - year0 + 1;
  if (tau_H <= 1 || tau_H >= tau_F)
    throw ParseError("synthetic: tau_H must fall strictly inside the record");

  RngStream root(cfg.seed);
  RngStream rng = root.split(7001);

  ForcingSeries forcing;
  forcing.years = Eigen::VectorXd::LinSpaced(tau_F, year0, cfg.tau_F_year);
  forcing.f_co2.resize(tau_F);
  for (Eigen::Index t = 0; t < tau_F; ++t) {
    const double x = static_cast<double>(t + 1) / static_cast<double>(tau_F);
    forcing.f_co2[t] = s.co2_final / (1.0 + std::exp(-(x - 0.75) / 0.12));
  }
  forcing.f_volc = Eigen::VectorXd::Zero(tau_F);
  for (const auto& [year, aod] : s.volcanic) {
    const Eigen::Index t = year - year0;
    // Short stratospheric residence: pulse decaying over three years.
    const double profile[3] = {1.0, 0.55, 0.2};
    for (int k = 0; k < 3; ++k)
      if (t + k >= 0 && t + k < tau_F) forcing.f_volc[t + k] += aod * profile[k];
  }

  SyntheticTruth truth;
  truth.nu.resize(tau_F);
  {
    RngStream nu_rng = rng.split(1);
    for (Eigen::Index t = 0; t < tau_F; ++t)
      truth.nu[t] = s.discrepancy_ramp + s.sigma_nu_truth * nu_rng.normal();
  }

  const Eigen::VectorXd center = s.truth_center.array().log();
  truth.log_theta.resize(s.members, kNumParams);
  truth.delta.resize(s.members, tau_F);
  truth.data.tau_H = tau_H;
  truth.data.tau_F = tau_F;

  for (int m = 0; m < s.members; ++m) {
    RngStream mrng = rng.split(100 + m);
    const Eigen::VectorXd lt = center + s.truth_logsd * mrng.normal_vector(kNumParams);
    truth.log_theta.row(m) = lt.transpose();
    const EbmParams theta = EbmParams::from_log_vector(lt);

    ScenarioData abrupt;
    abrupt.label = "m" + std::to_string(m) + ":abrupt";
    abrupt.forcing.years = Eigen::VectorXd::LinSpaced(s.t_abrupt, 1, s.t_abrupt);
    abrupt.forcing.f_co2 = Eigen::VectorXd::Constant(s.t_abrupt, 2.0);
    abrupt.forcing.f_volc = Eigen::VectorXd::Zero(s.t_abrupt);
    abrupt.obs = ObservationSeries::fully_observed(
        simulate(build_basic_system(theta), abrupt.forcing.basic_inputs(), mrng).observations);

    ScenarioData histfut;
    histfut.label = "m" + std::to_string(m);
    histfut.forcing = forcing;
    histfut.tau_H = tau_H;
    histfut.tau_F = tau_F;
    const auto sim = simulate(build_extended_system(theta, 1.0, cfg.priors.p0_delta),
                              forcing.extended_inputs(truth.nu), mrng);
    histfut.obs = ObservationSeries::fully_observed(sim.observations);
    truth.delta.row(m) = sim.states.col(4).transpose();

    truth.data.abrupt.push_back(std::move(abrupt));
    truth.data.histfut.push_back(std::move(histfut));
    truth.data.labels.push_back("m" + std::to_string(m));
  }

  // Real-world analogue sharing the same shared discrepancy.
  {
    RngStream orng = rng.split(9000);
    truth.log_theta_obs =
        center + cfg.priors.kappa * s.truth_logsd * orng.normal_vector(kNumParams);
    const EbmParams theta = EbmParams::from_log_vector(truth.log_theta_obs);
    const auto sim = simulate(build_extended_system(theta, 1.0, cfg.priors.p0_delta),
                              forcing.extended_inputs(truth.nu), orng);
    ScenarioData obs;
    obs.label = "observations";
    obs.forcing = forcing;
    obs.tau_H = tau_H;
    obs.tau_F = tau_F;
    obs.obs = ObservationSeries::all_missing(tau_F, 2);
    obs.obs.noise.assign(tau_F, Eigen::MatrixXd::Zero(2, 2));
    for (Eigen::Index t = 0; t < tau_H; ++t) {
      obs.obs.values(t, 0) = sim.observations(t, 0) + s.obs_noise_sd * orng.normal();
      obs.obs.missing(t, 0) = false;
      obs.obs.noise[t](0, 0) = s.obs_noise_sd * s.obs_noise_sd;
    }
    truth.data.observations = std::move(obs);
  }
  truth.data.validate();
  return truth;
}

// Write a synthetic ensemble as CSV files plus a ground-truth manifest and a
// ready-to-run configuration.
inline void write_synthetic(const RunConfig& cfg, const SyntheticTruth& truth,
                            const std::string& dir) {
  namespace fs = std::filesystem;
  fs::create_directories(dir);
  const auto path = [&](const std::string& name) { return (fs::path(dir) / name).string(); };

  const ForcingSeries& forcing = truth.data.histfut.front().forcing;
  {
    Eigen::MatrixXd f(forcing.size(), 3);
    f.col(0) = forcing.years;
    f.col(1) = forcing.f_co2;
    f.col(2) = forcing.f_volc;
    write_csv(path("forcing.csv"), {"year", "fco2", "fvolc"}, f);
  }
  for (Eigen::Index m = 0; m < truth.data.n_models(); ++m) {
    const auto& ab = truth.data.abrupt[m];
    Eigen::MatrixXd a(ab.obs.size(), 3);
    a.col(0) = ab.forcing.years;
    a.col(1) = ab.obs.values.col(0);
    a.col(2) = ab.obs.values.col(1);
    write_csv(path("m" + std::to_string(m) + "_abrupt.csv"), {"year", "tas", "rndt"}, a);

    const auto& hf = truth.data.histfut[m];
    Eigen::MatrixXd h(hf.obs.size(), 3);
    h.col(0) = hf.forcing.years;
    h.col(1) = hf.obs.values.col(0);
    h.col(2) = hf.obs.values.col(1);
    write_csv(path("m" + std::to_string(m) + "_histfut.csv"), {"year", "tas", "rndt"}, h);
  }
  if (cfg.synthetic.write_observations) {
    const auto& obs = truth.data.observations.obs;
    Eigen::MatrixXd o(truth.data.tau_H, 3);
    for (Eigen::Index t = 0; t < truth.data.tau_H; ++t) {
      o(t, 0) = forcing.years[t];
      o(t, 1) = obs.values(t, 0);
      o(t, 2) = std::sqrt(obs.noise[t](0, 0));
    }
    write_csv(path("observations.csv"), {"year", "tas", "sd"}, o);
  }

  // Ground-truth manifest.
  {
    nlohmann::json members = nlohmann::json::array();
    for (Eigen::Index m = 0; m < truth.data.n_models(); ++m) {
      nlohmann::json jm;
      jm["label"] = truth.data.labels[m];
      jm["log_theta"] = detail::vector_to_json(truth.log_theta.row(m).transpose());
      jm["delta"] = detail::vector_to_json(truth.delta.row(m).transpose());
      members.push_back(std::move(jm));
    }
    const nlohmann::json j = {
        {"format", "ebmcal-synthetic-truth"},
        {"seed", cfg.seed},
        {"members", std::move(members)},
        {"log_theta_obs", detail::vector_to_json(truth.log_theta_obs)},
        {"nu", detail::vector_to_json(truth.nu)}};
    std::ofstream out(path("truth.json"), std::ios::trunc);
    out << j.dump(1) << "\n";
  }

  // Ready-to-run configuration pointing at the generated files.
  {
    std::ofstream out(path("config.ini"), std::ios::trunc);
    out << "[run]\nout_dir = fit\nseed = " << cfg.seed << "\nthreads = " << cfg.threads
        << "\n\n[data]\nforcing = forcing.csv\n";
    if (cfg.synthetic.write_observations) out << "observations = observations.csv\n";
    out << "tau_H = " << cfg.tau_H_year << "\ntau_F = " << cfg.tau_F_year << "\n\n";
    for (Eigen::Index m = 0; m < truth.data.n_models(); ++m)
      out << "[member m" << m << "]\nabrupt = m" << m << "_abrupt.csv\nhistfut = m" << m
          << "_histfut.csv\n\n";
    out << "[mcmc]\nchains = " << cfg.mcmc.n_chains << "\nburn_in = " << cfg.mcmc.burn_in
        << "\niterations = " << cfg.mcmc.n_iter << "\nthin = " << cfg.mcmc.thin << "\n\n[cv]\n"
        << "chains = " << cfg.cv_mcmc.n_chains << "\nburn_in = " << cfg.cv_mcmc.burn_in
        << "\niterations = " << cfg.cv_mcmc.n_iter << "\nthin = " << cfg.cv_mcmc.thin << "\n\n";
    // Summary windows sized to this record's own horizon.
    const int y0 = cfg.synthetic.start_year;
    const int ref_last = std::min(y0 + 29, cfg.tau_H_year);
    out << "[projection]\nwindows = " << std::max(cfg.tau_H_year + 1, cfg.tau_F_year - 14) << "-"
        << cfg.tau_F_year << ":" << std::max(y0, cfg.tau_H_year - 19) << "-" << cfg.tau_H_year
        << "\nthresholds = 1.5 2.0\nreference = " << y0 << "-" << ref_last << "\n";
  }
}

// ---------------------------------------------------------------------------
// Posterior store

inline std::vector<std::string> posterior_columns(const std::vector<std::string>& labels) {
  std::vector<std::string> cols{"chain", "draw"};
  for (const auto& label : labels)
    for (int j = 0; j < kNumParams; ++j) cols.push_back(label + "." + EbmParams::name(j));
  for (int j = 0; j < kNumParams; ++j) cols.push_back(std::string("obs.") + EbmParams::name(j));
  cols.push_back("sigma_nu");
  return cols;
}

inline void write_posterior_store(const std::string& dir, const ChainOutput& out,
                                  const HierData& data, const RunConfig& cfg) {
  namespace fs = std::filesystem;
  fs::create_directories(dir);
  const auto path = [&](const std::string& name) { return (fs::path(dir) / name).string(); };

  const Eigen::Index M = data.n_models();
  std::size_t total = 0;
  for (const auto& c : out.chains) total += c.draws.size();

  // Natural-scale parameter draws.
  {
    Eigen::MatrixXd table(total, 2 + kNumParams * (M + 1) + 1);
    std::size_t r = 0;
    for (std::size_t c = 0; c < out.chains.size(); ++c) {
      for (std::size_t d = 0; d < out.chains[c].draws.size(); ++d, ++r) {
        const auto& dr = out.chains[c].draws[d];
        table(r, 0) = static_cast<double>(c);
        table(r, 1) = static_cast<double>(d);
        Eigen::Index col = 2;
        for (Eigen::Index m = 0; m < M; ++m)
          for (int j = 0; j < kNumParams; ++j)
            table(r, col++) = std::exp(dr.log_theta(m, j));
        for (int j = 0; j < kNumParams; ++j) table(r, col++) = std::exp(dr.log_theta_obs[j]);
        table(r, col++) = dr.sigma_nu;
      }
    }
    write_csv(path("posterior.csv"), posterior_columns(data.labels), table);
  }

  // Full shared-discrepancy paths (needed to reproject).
  {
    std::vector<std::string> cols{"chain", "draw"};
    for (Eigen::Index t = 0; t < data.tau_F; ++t)
      cols.push_back("nu_" + std::to_string(static_cast<long>(
                                 data.histfut.front().forcing.years[t])));
    Eigen::MatrixXd table(total, 2 + data.tau_F);
    std::size_t r = 0;
    for (std::size_t c = 0; c < out.chains.size(); ++c)
      for (std::size_t d = 0; d < out.chains[c].draws.size(); ++d, ++r) {
        table(r, 0) = static_cast<double>(c);
        table(r, 1) = static_cast<double>(d);
        table.row(r).tail(data.tau_F) = out.chains[c].draws[d].nu.transpose();
      }
    write_csv(path("nu_paths.csv"), cols, table);
  }

  // Hyperparameters: ensemble mean and covariance lower triangle.
  {
    std::vector<std::string> cols{"chain", "draw"};
    for (int j = 0; j < kNumParams; ++j)
      cols.push_back(std::string("mu.") + EbmParams::name(j));
    for (int a = 0; a < kNumParams; ++a)
      for (int b = 0; b <= a; ++b)
        cols.push_back("sigma." + std::to_string(a) + "_" + std::to_string(b));
    const int tri = kNumParams * (kNumParams + 1) / 2;
    Eigen::MatrixXd table(total, 2 + kNumParams + tri);
    std::size_t r = 0;
    for (std::size_t c = 0; c < out.chains.size(); ++c)
      for (std::size_t d = 0; d < out.chains[c].draws.size(); ++d, ++r) {
        const auto& dr = out.chains[c].draws[d];
        table(r, 0) = static_cast<double>(c);
        table(r, 1) = static_cast<double>(d);
        Eigen::Index col = 2;
        for (int j = 0; j < kNumParams; ++j) table(r, col++) = dr.mu_lambda[j];
        for (int a = 0; a < kNumParams; ++a)
          for (int b = 0; b <= a; ++b) table(r, col++) = dr.sigma_lambda(a, b);
      }
    write_csv(path("hyper.csv"), cols, table);
  }

  // Diagnostics: acceptance rates and split-Rhat table.
  {
    std::ofstream txt(path("diagnostics.txt"), std::ios::trunc);
    txt << "chains: " << out.chains.size() << "\nwall_seconds: " << out.wall_seconds << "\n";
    for (std::size_t c = 0; c < out.chains.size(); ++c) {
      const auto& cc = out.chains[c];
      txt << "chain " << c << ": "
          << (cc.failed ? ("FAILED: " + cc.failure) : "ok") << "\n";
      if (cc.failed) continue;
      txt << "  acceptance:";
      for (Eigen::Index m = 0; m < cc.counters.theta_accept.size(); ++m)
        txt << " theta[" << data.labels[m]
            << "]=" << cc.counters.theta_accept[m] / std::max(1.0, cc.counters.theta_total[m]);
      txt << " obs=" << cc.counters.obs_accept / std::max(1.0, cc.counters.obs_total)
          << " sigma_nu="
          << cc.counters.sigma_nu_accept / std::max(1.0, cc.counters.sigma_nu_total)
          << "\n  filter_failures=" << cc.counters.filter_failures
          << " ram_skipped=" << cc.counters.ram_skipped << "\n";
    }
    txt << "max_rhat: " << out.max_rhat() << "\n";
    for (const auto& [k, v] : out.rhat) txt << "rhat " << k << " " << v << "\n";
  }

  // Machine-readable metadata.
  {
    nlohmann::json j = {{"format", "ebmcal-posterior"},
                        {"labels", data.labels},
                        {"tau_H", data.tau_H},
                        {"tau_F", data.tau_F},
                        {"seed", cfg.seed},
                        {"max_rhat", out.max_rhat()}};
    std::ofstream meta(path("meta.json"), std::ios::trunc);
    meta << j.dump(1) << "\n";
  }

  // Checkpoint for bit-identical continuation.
  {
    Checkpoint ck;
    ck.seed = cfg.seed;
    ck.iteration = out.chains.empty() ? 0 : out.chains.front().completed_iterations;
    for (const auto& c : out.chains) ck.states.push_back(c.final_state);
    save_checkpoint(path("checkpoint.json"), ck);
  }
}

inline ChainOutput load_posterior_store(const std::string& dir) {
  namespace fs = std::filesystem;
  const auto path = [&](const std::string& name) { return (fs::path(dir) / name).string(); };

  std::ifstream meta_in(path("meta.json"));
  if (!meta_in) throw ParseError(dir + ": missing meta.json (not a posterior store)");
  nlohmann::json meta;
  meta_in >> meta;
  const std::vector<std::string> labels = meta.at("labels").get<std::vector<std::string>>();
  const Eigen::Index M = static_cast<Eigen::Index>(labels.size());
  const Eigen::Index tau_F = meta.at("tau_F").get<Eigen::Index>();

  const CsvTable post = read_csv(path("posterior.csv"));
  const CsvTable nu = read_csv(path("nu_paths.csv"));
  const CsvTable hyper = read_csv(path("hyper.csv"));
  if (post.values.rows() != nu.values.rows() || post.values.rows() != hyper.values.rows())
    throw ParseError(dir + ": posterior store files disagree on draw count");

  ChainOutput out;
  out.chains.resize(1);  // flattened store
  for (Eigen::Index r = 0; r < post.values.rows(); ++r) {
    PosteriorDraw d;
    d.log_theta.resize(M, kNumParams);
    Eigen::Index col = 2;
    for (Eigen::Index m = 0; m < M; ++m)
      for (int j = 0; j < kNumParams; ++j) d.log_theta(m, j) = std::log(post.values(r, col++));
    d.log_theta_obs.resize(kNumParams);
    for (int j = 0; j < kNumParams; ++j) d.log_theta_obs[j] = std::log(post.values(r, col++));
    d.sigma_nu = post.values(r, col++);
    d.nu = nu.values.row(r).tail(tau_F).transpose();
    d.mu_lambda.resize(kNumParams);
    d.sigma_lambda.resize(kNumParams, kNumParams);
    Eigen::Index hcol = 2;
    for (int j = 0; j < kNumParams; ++j) d.mu_lambda[j] = hyper.values(r, hcol++);
    for (int a = 0; a < kNumParams; ++a)
      for (int b = 0; b <= a; ++b) {
        d.sigma_lambda(a, b) = hyper.values(r, hcol);
        d.sigma_lambda(b, a) = hyper.values(r, hcol);
        ++hcol;
      }
    out.chains[0].draws.push_back(std::move(d));
  }
  return out;
}

// ---------------------------------------------------------------------------
// Projection outputs

inline void write_projection_outputs(const std::string& dir, const ProjectionEnsemble& ens,
                                     const RunConfig& cfg, const ScenarioData& obs_scenario,
                                     const ChainOutput& post, RngStream& rng) {
  namespace fs = std::filesystem;
  fs::create_directories(dir);
  const auto path = [&](const std::string& name) { return (fs::path(dir) / name).string(); };
  const std::vector<double> probs{0.05, 0.25, 0.5, 0.75, 0.95};

  {
    Eigen::MatrixXd table(ens.horizon(), 1 + 2 * probs.size());
    std::vector<std::string> cols{"year"};
    for (const char* var : {"t1", "n"})
      for (double p : probs)
        cols.push_back(std::string(var) + "_q" + std::to_string(static_cast<int>(p * 100)));
    for (Eigen::Index t = 0; t < ens.horizon(); ++t) {
      table(t, 0) = ens.times[t];
      Eigen::Index col = 1;
      for (int var = 0; var < 2; ++var)
        for (double p : probs) table(t, col++) = ensemble_quantile(ens, t, var, p);
    }
    write_csv(path("quantiles.csv"), cols, table);
  }

  // Reference series for windows that overlap the observed period.
  Eigen::VectorXd obs_years = obs_scenario.forcing.years.head(obs_scenario.tau_H);
  Eigen::VectorXd obs_tas(obs_scenario.tau_H);
  for (Eigen::Index t = 0; t < obs_scenario.tau_H; ++t)
    obs_tas[t] = obs_scenario.obs.missing(t, 0) ? std::numeric_limits<double>::quiet_NaN()
                                                : obs_scenario.obs.values(t, 0);

  {
    Eigen::MatrixXd table(static_cast<Eigen::Index>(cfg.windows.size()), 8);
    std::vector<std::string> cols{"window_first", "window_last", "ref_first", "ref_last",
                                  "mean",         "median",      "q05",       "q95"};
    for (std::size_t w = 0; w < cfg.windows.size(); ++w) {
      const auto& spec = cfg.windows[w];
      const bool external = spec.reference.last <= obs_years[obs_years.size() - 1] &&
                            spec.reference.first >= obs_years[0];
      const AnomalySummary summary =
          external ? anomaly_stats(ens, 0, spec.window, spec.reference, obs_years, obs_tas)
                   : anomaly_stats(ens, 0, spec.window, spec.reference);
      table(w, 0) = spec.window.first;
      table(w, 1) = spec.window.last;
      table(w, 2) = spec.reference.first;
      table(w, 3) = spec.reference.last;
      table(w, 4) = summary.mean;
      table(w, 5) = summary.median;
      table(w, 6) = summary.q05;
      table(w, 7) = summary.q95;
    }
    write_csv(path("anomalies.csv"), cols, table);
  }

  {
    // Exceedance relative to the pre-industrial reference mean.
    double ref_offset = 0.0;
    int count = 0;
    for (Eigen::Index t = 0; t < obs_years.size(); ++t)
      if (cfg.preindustrial.contains(obs_years[t]) && std::isfinite(obs_tas[t])) {
        ref_offset += obs_tas[t];
        ++count;
      }
    ref_offset = count > 0 ? ref_offset / count : 0.0;

    Eigen::MatrixXd table(ens.horizon(), 1 + cfg.thresholds.size());
    std::vector<std::string> cols{"year"};
    for (double thr : cfg.thresholds) {
      std::ostringstream os;
      os << "p_above_" << thr;
      cols.push_back(os.str());
    }
    table.col(0) = ens.times;
    for (std::size_t k = 0; k < cfg.thresholds.size(); ++k)
      table.col(1 + k) = exceedance_curve(ens, 0, cfg.thresholds[k], ref_offset);
    write_csv(path("exceedance.csv"), cols, table);
  }

  {
    const auto real = ecs_posterior(post, EcsPopulation::real_world, rng);
    const auto fresh = ecs_posterior(post, EcsPopulation::new_model, rng);
    Eigen::MatrixXd table(static_cast<Eigen::Index>(real.size()), 2);
    for (std::size_t i = 0; i < real.size(); ++i) {
      table(i, 0) = real[i];
      table(i, 1) = fresh[i];
    }
    write_csv(path("ecs.csv"), {"ecs_real_world", "ecs_new_model"}, table);
  }
}

// ---------------------------------------------------------------------------
// Leave-one-out cross-validation

struct CvFold {
  std::string label;
  Eigen::MatrixXd z;  // (tau_F - tau_H) x 2
  bool failed = false;
  std::string failure;
};

struct CvReport {
  std::vector<CvFold> folds;
  Eigen::MatrixXd coverage;  // per year x 2, fraction |z| <= 2 across folds
  Eigen::MatrixXd mean_z;    // per year x 2
  double overall_coverage = 0.0;

  void finalize(Eigen::Index horizon) {
    coverage = Eigen::MatrixXd::Zero(horizon, 2);
    mean_z = Eigen::MatrixXd::Zero(horizon, 2);
    Eigen::MatrixXd counts = Eigen::MatrixXd::Zero(horizon, 2);
    long within = 0, total = 0;
    for (const auto& f : folds) {
      if (f.failed) continue;
      for (Eigen::Index t = 0; t < horizon; ++t)
        for (int v = 0; v < 2; ++v) {
          const double z = f.z(t, v);
          if (!std::isfinite(z)) continue;
          counts(t, v) += 1.0;
          mean_z(t, v) += z;
          coverage(t, v) += std::abs(z) <= 2.0 ? 1.0 : 0.0;
          total += 1;
          within += std::abs(z) <= 2.0 ? 1 : 0;
        }
    }
    for (Eigen::Index t = 0; t < horizon; ++t)
      for (int v = 0; v < 2; ++v) {
        if (counts(t, v) > 0) {
          mean_z(t, v) /= counts(t, v);
          coverage(t, v) /= counts(t, v);
        }
      }
    overall_coverage = total > 0 ? static_cast<double>(within) / total : 0.0;
  }
};

// Hold each member out in turn: its historical surface temperature plays the
// real-world record (exact, no observation error), the remaining members form
// the ensemble, and the projection is scored against the held-out future.
inline CvReport cross_validate(const HierData& data, const HierPriors& priors,
                               const McmcConfig& cv_mcmc, const ProjectionOptions& popts = {}) {
  const Eigen::Index M = data.n_models();
  if (M < 2) throw NumericsError("cross_validate: need at least two members");
  const Eigen::Index horizon = data.tau_F - data.tau_H;

  CvReport report;
  for (Eigen::Index hold = 0; hold < M; ++hold) {
    CvFold fold;
    fold.label = data.labels[hold];
    try {
      HierData fold_data;
      fold_data.tau_H = data.tau_H;
      fold_data.tau_F = data.tau_F;
      for (Eigen::Index m = 0; m < M; ++m) {
        if (m == hold) continue;
        fold_data.abrupt.push_back(data.abrupt[m]);
        fold_data.histfut.push_back(data.histfut[m]);
        fold_data.labels.push_back(data.labels[m]);
      }
      ScenarioData pseudo;
      pseudo.label = "holdout:" + fold.label;
      pseudo.forcing = data.histfut[hold].forcing;
      pseudo.tau_H = data.tau_H;
      pseudo.tau_F = data.tau_F;
      pseudo.obs = ObservationSeries::all_missing(data.tau_F, 2);
      for (Eigen::Index t = 0; t < data.tau_H; ++t) {
        if (data.histfut[hold].obs.missing(t, 0)) continue;
        pseudo.obs.values(t, 0) = data.histfut[hold].obs.values(t, 0);
        pseudo.obs.missing(t, 0) = false;
      }
      fold_data.observations = pseudo;
      fold_data.validate();

      McmcConfig fold_cfg = cv_mcmc;
      fold_cfg.seed = cv_mcmc.seed + 7919 * static_cast<std::uint64_t>(hold + 1);
      const ChainOutput post = run_chains(fold_data, priors, fold_cfg);
      if (post.any_failed()) throw NumericsError("cross_validate: a chain failed");

      RngStream proj_rng = RngStream(fold_cfg.seed).split(424242);
      const ProjectionEnsemble ens =
          project_real_world(post, pseudo, priors, proj_rng, popts);

      ObservationSeries future;
      future.values = data.histfut[hold].obs.values.bottomRows(horizon);
      future.missing = data.histfut[hold].obs.missing.bottomRows(horizon);
      fold.z = standardised_errors(future, ens);
    } catch (const std::exception& e) {
      fold.failed = true;
      fold.failure = e.what();
      fold.z = Eigen::MatrixXd::Constant(horizon, 2, std::numeric_limits<double>::quiet_NaN());
    }
    report.folds.push_back(std::move(fold));
  }
  report.finalize(horizon);
  return report;
}

inline void write_cv_report(const std::string& dir, const CvReport& report,
                            const Eigen::VectorXd& future_years) {
  namespace fs = std::filesystem;
  fs::create_directories(dir);
  const auto path = [&](const std::string& name) { return (fs::path(dir) / name).string(); };

  for (const auto& fold : report.folds) {
    Eigen::MatrixXd table(fold.z.rows(), 3);
    table.col(0) = future_years;
    table.col(1) = fold.z.col(0);
    table.col(2) = fold.z.col(1);
    write_csv(path("cv_z_" + fold.label + ".csv"), {"year", "z_t1", "z_n"}, table);
  }
  Eigen::MatrixXd table(report.mean_z.rows(), 5);
  table.col(0) = future_years;
  table.col(1) = report.mean_z.col(0);
  table.col(2) = report.mean_z.col(1);
  table.col(3) = report.coverage.col(0);
  table.col(4) = report.coverage.col(1);
  write_csv(path("cv_summary.csv"),
            {"year", "mean_z_t1", "mean_z_n", "coverage_t1", "coverage_n"}, table);

  std::ofstream txt(path("cv_report.txt"), std::ios::trunc);
  txt << "folds: " << report.folds.size() << "\n";
  for (const auto& f : report.folds)
    txt << "  " << f.label << ": " << (f.failed ? ("FAILED: " + f.failure) : "ok") << "\n";
  txt << "overall |z|<=2 coverage: " << report.overall_coverage << "\n";
}

// ---------------------------------------------------------------------------
// Step-forcing bias demonstration

struct MleDemoResult {
  std::vector<std::string> labels;
  std::vector<Eigen::MatrixXd> z;  // per member, tau_F x 2
  Eigen::MatrixXd mean_z;          // tau_F x 2 over members
  std::vector<MleFit> fits;
};

// Fit each member to its step-forcing run only, project the historical+future
// scenario under parameter and natural-variability uncertainty, and report
// standardised errors against the member's actual output.
inline MleDemoResult mle_demo(const HierData& data, const MleOptions& opts, int n_samples,
                              std::uint64_t seed) {
  if (data.n_models() == 0) throw NumericsError("mle_demo: empty member list");
  MleDemoResult out;
  out.mean_z = Eigen::MatrixXd::Zero(data.tau_F, 2);
  Eigen::MatrixXd counts = Eigen::MatrixXd::Zero(data.tau_F, 2);

  for (Eigen::Index m = 0; m < data.n_models(); ++m) {
    const MleFit fit = fit_abrupt(data.abrupt[m], EbmParams(), opts);
    out.fits.push_back(fit);
    RngStream rng = RngStream(seed).split(m);
    const ProjectionEnsemble ens =
        project_mle(fit, data.histfut[m].forcing, n_samples, rng);
    const Eigen::MatrixXd z = standardised_errors(data.histfut[m].obs, ens);
    out.labels.push_back(data.labels[m]);
    out.z.push_back(z);
    for (Eigen::Index t = 0; t < data.tau_F; ++t)
      for (int v = 0; v < 2; ++v)
        if (std::isfinite(z(t, v))) {
          out.mean_z(t, v) += z(t, v);
          counts(t, v) += 1.0;
        }
  }
  for (Eigen::Index t = 0; t < data.tau_F; ++t)
    for (int v = 0; v < 2; ++v)
      if (counts(t, v) > 0) out.mean_z(t, v) /= counts(t, v);
  return out;
}

}  // namespace ebmcal
