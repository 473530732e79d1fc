// Run configuration: a sectioned key/value text file, schema-validated, with
// every default pinned to the reference analysis (burn-in 25000, 250000
// iterations, thin 200, kappa 1.0, the standard priors, CV schedule
// 25000/100000/40).
#pragma once

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "ebmcal/csv.hpp"
#include "ebmcal/hier_gibbs.hpp"
#include "ebmcal/mle.hpp"
#include "ebmcal/projection_types.hpp"

namespace ebmcal {

struct MemberFiles {
  std::string label;
  std::string abrupt;
  std::string histfut;
};

struct WindowSpec {
  YearRange window;
  YearRange reference;
};

struct SyntheticConfig {
  int members = 5;
  int t_abrupt = 150;
  int start_year = 1861;
  double truth_logsd = 0.15;
  double sigma_nu_truth = 0.02;
  double obs_noise_sd = 0.05;
  double co2_final = 1.4;             // log2 concentration ratio reached at tau_F
  double discrepancy_ramp = 0.0;      // deterministic nu drift (W m^-2 per year)
  std::vector<std::pair<int, double>> volcanic;  // (year, aod)
  bool write_observations = true;
  Eigen::VectorXd truth_center;       // natural scale, 13 entries
};

struct RunConfig {
  std::string config_dir;
  std::string out_dir = "out";
  std::uint64_t seed = 0;
  int threads = 1;

  std::string observations_file;
  std::string forcing_file;
  std::string forcing_abrupt_file;
  int tau_H_year = 2020;
  int tau_F_year = 2100;
  std::vector<MemberFiles> members;

  McmcConfig mcmc;
  McmcConfig cv_mcmc;
  HierPriors priors = HierPriors::defaults();

  std::vector<WindowSpec> windows;
  std::vector<double> thresholds{1.5, 2.0};
  YearRange preindustrial{1850.0, 1900.0};
  bool include_obs_noise = false;

  MleOptions mle;
  int mle_samples = 10000;

  SyntheticConfig synthetic;

  RunConfig() {
    cv_mcmc.burn_in = 25000;
    cv_mcmc.n_iter = 100000;
    cv_mcmc.thin = 40;
    windows.push_back({{2081, 2100}, {1986, 2005}});
    synthetic.truth_center = default_log_mu0().array().exp();
  }

  std::string resolve(const std::string& path) const {
    if (path.empty() || std::filesystem::path(path).is_absolute()) return path;
    return (std::filesystem::path(config_dir) / path).string();
  }
};

namespace detail {

struct IniFile {
  // section -> key -> value; member sections keep insertion order separately.
  std::map<std::string, std::map<std::string, std::string>> sections;
  std::vector<std::pair<std::string, std::map<std::string, std::string>>> members;
};

inline IniFile parse_ini(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ParseError(path + ": cannot open config");
  IniFile ini;
  std::string line, section;
  std::map<std::string, std::string>* bucket = &ini.sections[""];
  long line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    std::string s = trim(line);
    const auto comment = s.find_first_of(";#");
    if (comment != std::string::npos) s = trim(s.substr(0, comment));
    if (s.empty()) continue;
    if (s.front() == '[') {
      if (s.back() != ']')
        throw ParseError(path + ":" + std::to_string(line_no) + ": malformed section header");
      section = trim(s.substr(1, s.size() - 2));
      if (section.rfind("member", 0) == 0) {
        const std::string label = trim(section.substr(6));
        if (label.empty())
          throw ParseError(path + ":" + std::to_string(line_no) + ": member needs a label");
        ini.members.emplace_back(label, std::map<std::string, std::string>{});
        bucket = &ini.members.back().second;
      } else {
        bucket = &ini.sections[section];
      }
      continue;
    }
    const auto eq = s.find('=');
    if (eq == std::string::npos)
      throw ParseError(path + ":" + std::to_string(line_no) + ": expected key = value");
    (*bucket)[trim(s.substr(0, eq))] = trim(s.substr(eq + 1));
  }
  return ini;
}

inline double to_double(const std::string& v, const std::string& what) {
  try {
    std::size_t used = 0;
    const double d = std::stod(v, &used);
    if (used != v.size()) throw std::invalid_argument(v);
    return d;
  } catch (const std::exception&) {
    throw ParseError("config: cannot parse '" + v + "' for " + what);
  }
}

inline long to_long(const std::string& v, const std::string& what) {
  const double d = to_double(v, what);
  if (d != std::floor(d)) throw ParseError("config: " + what + " must be an integer");
  return static_cast<long>(d);
}

inline bool to_bool(const std::string& v, const std::string& what) {
  if (v == "true" || v == "1" || v == "yes") return true;
  if (v == "false" || v == "0" || v == "no") return false;
  throw ParseError("config: cannot parse '" + v + "' as boolean for " + what);
}

inline std::vector<std::string> split_ws(const std::string& s) {
  std::istringstream is(s);
  std::vector<std::string> out;
  std::string tok;
  while (is >> tok) out.push_back(tok);
  return out;
}

inline YearRange parse_range(const std::string& s) {
  const auto dash = s.find('-');
  if (dash == std::string::npos)
    throw ParseError("config: expected a year range like 2081-2100, got '" + s + "'");
  YearRange r;
  r.first = to_double(s.substr(0, dash), "year range");
  r.last = to_double(s.substr(dash + 1), "year range");
  if (r.last < r.first) throw ParseError("config: reversed year range '" + s + "'");
  return r;
}

template <typename Map>
const std::string* find(const Map& m, const std::string& key) {
  const auto it = m.find(key);
  return it == m.end() ? nullptr : &it->second;
}

}  // namespace detail

inline RunConfig parse_config(const std::string& path) {
  const detail::IniFile ini = detail::parse_ini(path);
  RunConfig cfg;
  cfg.config_dir = std::filesystem::path(path).parent_path().string();

  const auto section = [&](const std::string& name)
      -> const std::map<std::string, std::string>* {
    const auto it = ini.sections.find(name);
    return it == ini.sections.end() ? nullptr : &it->second;
  };

  if (const auto* run = section("run")) {
    if (const auto* v = detail::find(*run, "out_dir")) cfg.out_dir = *v;
    if (const auto* v = detail::find(*run, "seed"))
      cfg.seed = static_cast<std::uint64_t>(detail::to_long(*v, "run.seed"));
    if (const auto* v = detail::find(*run, "threads"))
      cfg.threads = static_cast<int>(detail::to_long(*v, "run.threads"));
  }

  if (const auto* data = section("data")) {
    if (const auto* v = detail::find(*data, "observations")) cfg.observations_file = *v;
    if (const auto* v = detail::find(*data, "forcing")) cfg.forcing_file = *v;
    if (const auto* v = detail::find(*data, "forcing_abrupt")) cfg.forcing_abrupt_file = *v;
    if (const auto* v = detail::find(*data, "tau_H"))
      cfg.tau_H_year = static_cast<int>(detail::to_long(*v, "data.tau_H"));
    if (const auto* v = detail::find(*data, "tau_F"))
      cfg.tau_F_year = static_cast<int>(detail::to_long(*v, "data.tau_F"));
  }

  for (const auto& [label, kv] : ini.members) {
    MemberFiles m;
    m.label = label;
    if (const auto* v = detail::find(kv, "abrupt")) m.abrupt = *v;
    if (const auto* v = detail::find(kv, "histfut")) m.histfut = *v;
    if (m.abrupt.empty() || m.histfut.empty())
      throw ParseError("config: member '" + label + "' needs abrupt and histfut files");
    cfg.members.push_back(std::move(m));
  }

  const auto fill_mcmc = [&](const char* name, McmcConfig& mc) {
    if (const auto* s = section(name)) {
      if (const auto* v = detail::find(*s, "chains"))
        mc.n_chains = static_cast<int>(detail::to_long(*v, "chains"));
      if (const auto* v = detail::find(*s, "burn_in")) mc.burn_in = detail::to_long(*v, "burn_in");
      if (const auto* v = detail::find(*s, "iterations"))
        mc.n_iter = detail::to_long(*v, "iterations");
      if (const auto* v = detail::find(*s, "thin")) mc.thin = detail::to_long(*v, "thin");
    }
  };
  fill_mcmc("mcmc", cfg.mcmc);
  fill_mcmc("cv", cfg.cv_mcmc);

  if (const auto* pr = section("priors")) {
    if (const auto* v = detail::find(*pr, "prior_center")) {
      const auto toks = detail::split_ws(*v);
      if (toks.size() != kNumParams)
        throw ParseError("config: prior_center needs 13 entries");
      for (int i = 0; i < kNumParams; ++i)
        cfg.priors.mu0[i] = std::log(detail::to_double(toks[i], "prior_center"));
    }
    if (const auto* v = detail::find(*pr, "prior_logsd")) {
      const double sd = detail::to_double(*v, "prior_logsd");
      cfg.priors.Sigma0 = sd * sd * Eigen::MatrixXd::Identity(kNumParams, kNumParams);
    }
    if (const auto* v = detail::find(*pr, "psi_diag"))
      cfg.priors.Psi = detail::to_double(*v, "psi_diag") *
                       Eigen::MatrixXd::Identity(kNumParams, kNumParams);
    if (const auto* v = detail::find(*pr, "dof")) cfg.priors.dof = detail::to_double(*v, "dof");
    if (const auto* v = detail::find(*pr, "sigma_nu_median"))
      cfg.priors.a_nu = std::log(detail::to_double(*v, "sigma_nu_median"));
    if (const auto* v = detail::find(*pr, "sigma_nu_logsd")) {
      const double sd = detail::to_double(*v, "sigma_nu_logsd");
      cfg.priors.b_nu = sd * sd;
    }
    if (const auto* v = detail::find(*pr, "kappa"))
      cfg.priors.kappa = detail::to_double(*v, "kappa");
    if (const auto* v = detail::find(*pr, "p0_delta"))
      cfg.priors.p0_delta = detail::to_double(*v, "p0_delta");
  }

  if (const auto* pj = section("projection")) {
    if (const auto* v = detail::find(*pj, "windows")) {
      cfg.windows.clear();
      for (const auto& tok : detail::split_ws(*v)) {
        const auto colon = tok.find(':');
        if (colon == std::string::npos)
          throw ParseError("config: window spec needs window:reference, got '" + tok + "'");
        cfg.windows.push_back({detail::parse_range(tok.substr(0, colon)),
                               detail::parse_range(tok.substr(colon + 1))});
      }
    }
    if (const auto* v = detail::find(*pj, "thresholds")) {
      cfg.thresholds.clear();
      for (const auto& tok : detail::split_ws(*v))
        cfg.thresholds.push_back(detail::to_double(tok, "thresholds"));
    }
    if (const auto* v = detail::find(*pj, "reference"))
      cfg.preindustrial = detail::parse_range(*v);
    if (const auto* v = detail::find(*pj, "include_obs_noise"))
      cfg.include_obs_noise = detail::to_bool(*v, "include_obs_noise");
  }

  if (const auto* ml = section("mle")) {
    if (const auto* v = detail::find(*ml, "restarts"))
      cfg.mle.restarts = static_cast<int>(detail::to_long(*v, "mle.restarts"));
    if (const auto* v = detail::find(*ml, "max_evals"))
      cfg.mle.max_evals = detail::to_long(*v, "mle.max_evals");
    if (const auto* v = detail::find(*ml, "samples"))
      cfg.mle_samples = static_cast<int>(detail::to_long(*v, "mle.samples"));
  }

  if (const auto* sy = section("synthetic")) {
    auto& s = cfg.synthetic;
    if (const auto* v = detail::find(*sy, "members"))
      s.members = static_cast<int>(detail::to_long(*v, "synthetic.members"));
    if (const auto* v = detail::find(*sy, "t_abrupt"))
      s.t_abrupt = static_cast<int>(detail::to_long(*v, "synthetic.t_abrupt"));
    if (const auto* v = detail::find(*sy, "start_year"))
      s.start_year = static_cast<int>(detail::to_long(*v, "synthetic.start_year"));
    if (const auto* v = detail::find(*sy, "truth_logsd"))
      s.truth_logsd = detail::to_double(*v, "synthetic.truth_logsd");
    if (const auto* v = detail::find(*sy, "sigma_nu"))
      s.sigma_nu_truth = detail::to_double(*v, "synthetic.sigma_nu");
    if (const auto* v = detail::find(*sy, "obs_noise_sd"))
      s.obs_noise_sd = detail::to_double(*v, "synthetic.obs_noise_sd");
    if (const auto* v = detail::find(*sy, "co2_final"))
      s.co2_final = detail::to_double(*v, "synthetic.co2_final");
    if (const auto* v = detail::find(*sy, "discrepancy_ramp"))
      s.discrepancy_ramp = detail::to_double(*v, "synthetic.discrepancy_ramp");
    if (const auto* v = detail::find(*sy, "write_observations"))
      s.write_observations = detail::to_bool(*v, "synthetic.write_observations");
    if (const auto* v = detail::find(*sy, "truth_center")) {
      const auto toks = detail::split_ws(*v);
      if (toks.size() != kNumParams)
        throw ParseError("config: synthetic.truth_center needs 13 entries");
      s.truth_center.resize(kNumParams);
      for (int i = 0; i < kNumParams; ++i)
        s.truth_center[i] = detail::to_double(toks[i], "truth_center");
    }
    if (const auto* v = detail::find(*sy, "volcanic")) {
      s.volcanic.clear();
      for (const auto& tok : detail::split_ws(*v)) {
        const auto colon = tok.find(':');
        if (colon == std::string::npos)
          throw ParseError("config: volcanic events are year:aod, got '" + tok + "'");
        s.volcanic.emplace_back(
            static_cast<int>(detail::to_long(tok.substr(0, colon), "volcanic year")),
            detail::to_double(tok.substr(colon + 1), "volcanic aod"));
      }
    }
  }

  cfg.priors.validate();
  cfg.mcmc.validate();
  cfg.cv_mcmc.validate();
  if (cfg.tau_F_year <= cfg.tau_H_year)
    throw ParseError("config: tau_F must come after tau_H");
  return cfg;
}

}  // namespace ebmcal
