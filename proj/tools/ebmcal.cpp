// Command-line driver for the EBM calibration toolkit.
//
// Subcommands: simulate-synthetic, fit-abrupt, mle-demo, fit-hier, project,
// cross-validate, diagnostics. Exit codes: 0 success, 2 validation failure,
// 3 convergence failure.

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <string>

#include <CLI11.hpp>

#include "ebmcal/pipeline.hpp"

namespace {

constexpr int kExitOk = 0;
constexpr int kExitValidation = 2;
constexpr int kExitConvergence = 3;

struct CliOptions {
  std::string config_path;
  std::string posterior_dir;
  std::optional<std::uint64_t> seed;
  std::optional<std::string> out_dir;
  std::optional<int> threads;
  bool dry_run = false;
};

ebmcal::RunConfig load_config(const CliOptions& cli) {
  ebmcal::RunConfig cfg = ebmcal::parse_config(cli.config_path);
  if (const char* env = std::getenv("EBMCAL_OUT_DIR")) cfg.out_dir = env;
  if (const char* env = std::getenv("EBMCAL_THREADS")) cfg.threads = std::atoi(env);
  if (cli.out_dir) cfg.out_dir = *cli.out_dir;
  if (cli.seed) cfg.seed = *cli.seed;
  if (cli.threads) cfg.threads = *cli.threads;
  cfg.mcmc.seed = cfg.seed;
  cfg.mcmc.threads = cfg.threads;
  cfg.cv_mcmc.seed = cfg.seed;
  cfg.cv_mcmc.threads = cfg.threads;
  return cfg;
}

std::string out_path(const ebmcal::RunConfig& cfg) { return cfg.resolve(cfg.out_dir); }

void print_plan(const ebmcal::RunConfig& cfg, const std::string& stage) {
  std::cout << "plan: " << stage << "\n"
            << "  out_dir: " << out_path(cfg) << "\n"
            << "  seed: " << cfg.seed << "  threads: " << cfg.threads << "\n"
            << "  members: " << cfg.members.size() << "\n"
            << "  period: tau_H=" << cfg.tau_H_year << " tau_F=" << cfg.tau_F_year << "\n"
            << "  mcmc: " << cfg.mcmc.n_chains << " chains, burn-in " << cfg.mcmc.burn_in
            << ", " << cfg.mcmc.n_iter << " iterations, thin " << cfg.mcmc.thin << " -> "
            << cfg.mcmc.n_chains * (cfg.mcmc.n_iter / cfg.mcmc.thin) << " retained draws\n"
            << "  cv: " << cfg.cv_mcmc.n_chains << " chains, burn-in " << cfg.cv_mcmc.burn_in
            << ", " << cfg.cv_mcmc.n_iter << " iterations, thin " << cfg.cv_mcmc.thin << "\n";
}

int cmd_simulate_synthetic(const CliOptions& cli) {
  ebmcal::RunConfig cfg = load_config(cli);
  if (cli.dry_run) {
    print_plan(cfg, "simulate-synthetic");
    std::cout << "  synthetic members: " << cfg.synthetic.members
              << ", abrupt years: " << cfg.synthetic.t_abrupt << "\n";
    return kExitOk;
  }
  const ebmcal::SyntheticTruth truth = ebmcal::make_synthetic(cfg);
  ebmcal::write_synthetic(cfg, truth, out_path(cfg));
  std::cout << "wrote synthetic ensemble (" << cfg.synthetic.members << " members) to "
            << out_path(cfg) << "\n";
  return kExitOk;
}

int cmd_fit_abrupt(const CliOptions& cli) {
  ebmcal::RunConfig cfg = load_config(cli);
  const ebmcal::HierData data = ebmcal::load_hier_data(cfg);
  if (cli.dry_run) {
    print_plan(cfg, "fit-abrupt");
    return kExitOk;
  }
  std::filesystem::create_directories(out_path(cfg));
  Eigen::MatrixXd table(data.n_models(), 2 * ebmcal::kNumBasicParams + 3);
  std::vector<std::string> cols{"member_index"};
  for (int j = 0; j < ebmcal::kNumBasicParams; ++j) cols.push_back(ebmcal::EbmParams::name(j));
  for (int j = 0; j < ebmcal::kNumBasicParams; ++j)
    cols.push_back(std::string("logsd_") + ebmcal::EbmParams::name(j));
  cols.push_back("loglik");
  cols.push_back("converged");

  bool all_converged = true;
  for (Eigen::Index m = 0; m < data.n_models(); ++m) {
    ebmcal::MleOptions opts = cfg.mle;
    const ebmcal::MleFit fit = ebmcal::fit_abrupt(data.abrupt[m], ebmcal::EbmParams(), opts);
    all_converged = all_converged && fit.converged;
    table(m, 0) = static_cast<double>(m);
    const Eigen::VectorXd v = fit.theta_hat.to_vector();
    for (int j = 0; j < ebmcal::kNumBasicParams; ++j) table(m, 1 + j) = v[j];
    for (int j = 0; j < ebmcal::kNumBasicParams; ++j)
      table(m, 1 + ebmcal::kNumBasicParams + j) = std::sqrt(fit.log_theta_cov(j, j));
    table(m, 1 + 2 * ebmcal::kNumBasicParams) = fit.loglik_at_max;
    table(m, 2 + 2 * ebmcal::kNumBasicParams) = fit.converged ? 1.0 : 0.0;
    std::cout << data.labels[m] << ": loglik " << fit.loglik_at_max
              << (fit.converged ? "" : " (not converged)") << "\n";
  }
  ebmcal::write_csv((std::filesystem::path(out_path(cfg)) / "fits.csv").string(), cols, table);
  return all_converged ? kExitOk : kExitConvergence;
}

int cmd_mle_demo(const CliOptions& cli) {
  ebmcal::RunConfig cfg = load_config(cli);
  const ebmcal::HierData data = ebmcal::load_hier_data(cfg);
  if (cli.dry_run) {
    print_plan(cfg, "mle-demo");
    return kExitOk;
  }
  const ebmcal::MleDemoResult demo =
      ebmcal::mle_demo(data, cfg.mle, cfg.mle_samples, cfg.seed);

  const std::string dir = out_path(cfg);
  std::filesystem::create_directories(dir);
  const Eigen::VectorXd years = data.histfut.front().forcing.years;
  for (std::size_t m = 0; m < demo.labels.size(); ++m) {
    Eigen::MatrixXd table(years.size(), 3);
    table.col(0) = years;
    table.col(1) = demo.z[m].col(0);
    table.col(2) = demo.z[m].col(1);
    ebmcal::write_csv((std::filesystem::path(dir) / ("mle_z_" + demo.labels[m] + ".csv")).string(),
                      {"year", "z_t1", "z_n"}, table);
  }
  Eigen::MatrixXd mean_table(years.size(), 3);
  mean_table.col(0) = years;
  mean_table.col(1) = demo.mean_z.col(0);
  mean_table.col(2) = demo.mean_z.col(1);
  ebmcal::write_csv((std::filesystem::path(dir) / "mle_z_mean.csv").string(),
                    {"year", "mean_z_t1", "mean_z_n"}, mean_table);
  std::cout << "wrote standardised-error series for " << demo.labels.size() << " members to "
            << dir << "\n";
  return kExitOk;
}

int cmd_fit_hier(const CliOptions& cli, const std::string& resume_path) {
  ebmcal::RunConfig cfg = load_config(cli);
  const ebmcal::HierData data = ebmcal::load_hier_data(cfg);
  if (cli.dry_run) {
    print_plan(cfg, "fit-hier");
    return kExitOk;
  }

  ebmcal::ChainOutput out;
  if (!resume_path.empty()) {
    const ebmcal::Checkpoint ck = ebmcal::load_checkpoint(resume_path);
    if (ck.seed != cfg.seed)
      throw ebmcal::ParseError("checkpoint seed differs from the configured seed");
    ebmcal::ResumeInfo resume;
    resume.states = ck.states;
    resume.start_iteration = ck.iteration;
    out = ebmcal::run_chains(data, cfg.priors, cfg.mcmc, &resume);
  } else {
    out = ebmcal::run_chains(data, cfg.priors, cfg.mcmc);
  }

  ebmcal::write_posterior_store(out_path(cfg), out, data, cfg);
  std::cout << "chains: " << out.chains.size() << ", max split-Rhat: " << out.max_rhat()
            << ", wall: " << out.wall_seconds << " s\n";
  for (const auto& c : out.chains)
    if (c.failed) std::cerr << "chain failed: " << c.failure << "\n";
  if (out.any_failed() || out.max_rhat() > 1.1) return kExitConvergence;
  return kExitOk;
}

int cmd_project(const CliOptions& cli) {
  ebmcal::RunConfig cfg = load_config(cli);
  const ebmcal::HierData data = ebmcal::load_hier_data(cfg);
  const std::string store =
      cli.posterior_dir.empty() ? out_path(cfg) : cli.posterior_dir;
  if (cli.dry_run) {
    print_plan(cfg, "project");
    std::cout << "  posterior store: " << store << "\n";
    return kExitOk;
  }
  const ebmcal::ChainOutput post = ebmcal::load_posterior_store(store);

  ebmcal::ProjectionOptions popts;
  popts.include_obs_noise = cfg.include_obs_noise;
  ebmcal::RngStream rng(cfg.seed);
  ebmcal::RngStream proj_rng = rng.split(31);
  const ebmcal::ProjectionEnsemble ens =
      ebmcal::project_real_world(post, data.observations, cfg.priors, proj_rng, popts);
  ebmcal::RngStream ecs_rng = rng.split(32);
  ebmcal::write_projection_outputs(out_path(cfg), ens, cfg, data.observations, post, ecs_rng);
  std::cout << "projected " << ens.n_samples() << " trajectories over " << ens.horizon()
            << " years (skipped " << ens.skipped_draws << ")\n";
  return kExitOk;
}

int cmd_cross_validate(const CliOptions& cli) {
  ebmcal::RunConfig cfg = load_config(cli);
  const ebmcal::HierData data = ebmcal::load_hier_data(cfg);
  if (cli.dry_run) {
    print_plan(cfg, "cross-validate");
    return kExitOk;
  }
  ebmcal::ProjectionOptions popts;
  popts.include_obs_noise = cfg.include_obs_noise;
  const ebmcal::CvReport report =
      ebmcal::cross_validate(data, cfg.priors, cfg.cv_mcmc, popts);
  const Eigen::VectorXd future_years =
      data.histfut.front().forcing.years.tail(data.tau_F - data.tau_H);
  ebmcal::write_cv_report(out_path(cfg), report, future_years);
  std::cout << "cross-validation coverage |z|<=2: " << report.overall_coverage << "\n";
  for (const auto& f : report.folds)
    if (f.failed) {
      std::cerr << "fold " << f.label << " failed: " << f.failure << "\n";
      return kExitConvergence;
    }
  return kExitOk;
}

int cmd_diagnostics(const CliOptions& cli) {
  ebmcal::RunConfig cfg = load_config(cli);
  const std::string store =
      cli.posterior_dir.empty() ? out_path(cfg) : cli.posterior_dir;
  const std::string path = (std::filesystem::path(store) / "diagnostics.txt").string();
  std::ifstream in(path);
  if (!in) throw ebmcal::ParseError(path + ": no diagnostics found (run fit-hier first)");
  std::cout << in.rdbuf();

  std::ifstream meta_in((std::filesystem::path(store) / "meta.json").string());
  nlohmann::json meta;
  meta_in >> meta;
  const double max_rhat = meta.value("max_rhat", 0.0);
  return max_rhat > 1.1 ? kExitConvergence : kExitOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Hierarchical energy-balance-model calibration and projection"};
  app.require_subcommand(1);

  CliOptions cli;
  std::string resume_path;

  const auto add_common = [&](CLI::App* sub, bool needs_config = true) {
    auto* opt = sub->add_option("--config", cli.config_path, "configuration file");
    if (needs_config) opt->required();
    sub->add_option("--seed", [&cli](const CLI::results_t& r) {
      cli.seed = std::stoull(r.front());
      return true;
    }, "override the configured RNG seed");
    sub->add_option("--out", [&cli](const CLI::results_t& r) {
      cli.out_dir = r.front();
      return true;
    }, "override the output directory");
    sub->add_option("--threads", [&cli](const CLI::results_t& r) {
      cli.threads = std::stoi(r.front());
      return true;
    }, "override the worker thread count");
    sub->add_flag("--dry-run", cli.dry_run, "validate inputs and print the plan");
  };

  auto* synth = app.add_subcommand("simulate-synthetic",
                                   "generate a synthetic ensemble with known truth");
  add_common(synth);
  auto* fit_ab = app.add_subcommand("fit-abrupt", "maximum-likelihood fits to step-forcing runs");
  add_common(fit_ab);
  auto* demo = app.add_subcommand("mle-demo",
                                  "step-forcing fit + projection reliability demonstration");
  add_common(demo);
  auto* hier = app.add_subcommand("fit-hier", "run the hierarchical Bayesian sampler");
  add_common(hier);
  hier->add_option("--resume", resume_path, "continue from a checkpoint file");
  auto* proj = app.add_subcommand("project", "posterior-predictive projection summaries");
  add_common(proj);
  proj->add_option("--posterior", cli.posterior_dir, "posterior store directory");
  auto* cv = app.add_subcommand("cross-validate", "leave-one-out reliability check");
  add_common(cv);
  auto* diag = app.add_subcommand("diagnostics", "print sampler diagnostics");
  add_common(diag);
  diag->add_option("--posterior", cli.posterior_dir, "posterior store directory");

  CLI11_PARSE(app, argc, argv);

  try {
    if (synth->parsed()) return cmd_simulate_synthetic(cli);
    if (fit_ab->parsed()) return cmd_fit_abrupt(cli);
    if (demo->parsed()) return cmd_mle_demo(cli);
    if (hier->parsed()) return cmd_fit_hier(cli, resume_path);
    if (proj->parsed()) return cmd_project(cli);
    if (cv->parsed()) return cmd_cross_validate(cli);
    if (diag->parsed()) return cmd_diagnostics(cli);
  } catch (const ebmcal::ParseError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitValidation;
  } catch (const ebmcal::NumericsError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitValidation;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitValidation;
  }
  return kExitOk;
}
