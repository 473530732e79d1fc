// Versioned JSON snapshots of sampler state. A checkpoint stores, per chain,
// the full Gibbs state, the (frozen or adapting) proposal factors and the
// iteration index; a resumed run continues bit-identically because sweep
// randomness is keyed by (seed, chain, iteration), never by history.
#pragma once

#include <fstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "ebmcal/csv.hpp"
#include "ebmcal/hier_gibbs.hpp"

namespace ebmcal {

constexpr int kCheckpointVersion = 1;

namespace detail {

inline nlohmann::json matrix_to_json(const Eigen::MatrixXd& m) {
  nlohmann::json rows = nlohmann::json::array();
  for (Eigen::Index r = 0; r < m.rows(); ++r) {
    nlohmann::json row = nlohmann::json::array();
    for (Eigen::Index c = 0; c < m.cols(); ++c) row.push_back(m(r, c));
    rows.push_back(std::move(row));
  }
  return rows;
}

inline Eigen::MatrixXd matrix_from_json(const nlohmann::json& j) {
  const Eigen::Index rows = static_cast<Eigen::Index>(j.size());
  const Eigen::Index cols = rows == 0 ? 0 : static_cast<Eigen::Index>(j.at(0).size());
  Eigen::MatrixXd m(rows, cols);
  for (Eigen::Index r = 0; r < rows; ++r)
    for (Eigen::Index c = 0; c < cols; ++c) m(r, c) = j.at(r).at(c).get<double>();
  return m;
}

inline nlohmann::json vector_to_json(const Eigen::VectorXd& v) {
  nlohmann::json arr = nlohmann::json::array();
  for (Eigen::Index i = 0; i < v.size(); ++i) arr.push_back(v[i]);
  return arr;
}

inline Eigen::VectorXd vector_from_json(const nlohmann::json& j) {
  Eigen::VectorXd v(static_cast<Eigen::Index>(j.size()));
  for (Eigen::Index i = 0; i < v.size(); ++i) v[i] = j.at(i).get<double>();
  return v;
}

inline nlohmann::json proposal_to_json(const RamProposal& p) {
  return {{"chol", matrix_to_json(p.chol)},
          {"target_rate", p.target_rate},
          {"step", p.step},
          {"frozen", p.frozen},
          {"skipped_updates", p.skipped_updates}};
}

inline RamProposal proposal_from_json(const nlohmann::json& j) {
  RamProposal p;
  p.chol = matrix_from_json(j.at("chol"));
  p.target_rate = j.at("target_rate").get<double>();
  p.step = j.at("step").get<long>();
  p.frozen = j.at("frozen").get<bool>();
  p.skipped_updates = j.at("skipped_updates").get<int>();
  return p;
}

inline nlohmann::json state_to_json(const EnsembleState& st) {
  nlohmann::json props = nlohmann::json::array();
  for (const auto& p : st.prop_theta) props.push_back(proposal_to_json(p));
  return {{"log_theta", matrix_to_json(st.log_theta)},
          {"delta", matrix_to_json(st.delta)},
          {"nu", vector_to_json(st.nu)},
          {"mu_lambda", vector_to_json(st.mu_lambda)},
          {"sigma_lambda", matrix_to_json(st.sigma_lambda)},
          {"sigma_nu", st.sigma_nu},
          {"log_theta_obs", vector_to_json(st.log_theta_obs)},
          {"prop_theta", std::move(props)},
          {"prop_theta_obs", proposal_to_json(st.prop_theta_obs)},
          {"prop_sigma_nu", proposal_to_json(st.prop_sigma_nu)}};
}

inline EnsembleState state_from_json(const nlohmann::json& j) {
  EnsembleState st;
  st.log_theta = matrix_from_json(j.at("log_theta"));
  st.delta = matrix_from_json(j.at("delta"));
  st.nu = vector_from_json(j.at("nu"));
  st.mu_lambda = vector_from_json(j.at("mu_lambda"));
  st.sigma_lambda = matrix_from_json(j.at("sigma_lambda"));
  st.sigma_nu = j.at("sigma_nu").get<double>();
  st.log_theta_obs = vector_from_json(j.at("log_theta_obs"));
  for (const auto& p : j.at("prop_theta")) st.prop_theta.push_back(proposal_from_json(p));
  st.prop_theta_obs = proposal_from_json(j.at("prop_theta_obs"));
  st.prop_sigma_nu = proposal_from_json(j.at("prop_sigma_nu"));
  return st;
}

}  // namespace detail

struct Checkpoint {
  std::uint64_t seed = 0;
  long iteration = 0;  // next sweep index to execute
  std::vector<EnsembleState> states;
};

inline void save_checkpoint(const std::string& path, const Checkpoint& ck) {
  nlohmann::json chains = nlohmann::json::array();
  for (const auto& st : ck.states) chains.push_back(detail::state_to_json(st));
  const nlohmann::json j = {{"format", "ebmcal-checkpoint"},
                            {"version", kCheckpointVersion},
                            {"seed", ck.seed},
                            {"iteration", ck.iteration},
                            {"chains", std::move(chains)}};
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw ParseError(path + ": cannot open for writing");
  out << j.dump(1) << "\n";
}

inline Checkpoint load_checkpoint(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ParseError(path + ": cannot open checkpoint");
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& e) {
    throw ParseError(path + ": invalid checkpoint: " + e.what());
  }
  if (j.value("format", "") != "ebmcal-checkpoint")
    throw ParseError(path + ": not an ebmcal checkpoint");
  if (j.value("version", -1) != kCheckpointVersion)
    throw ParseError(path + ": unsupported checkpoint version");
  Checkpoint ck;
  ck.seed = j.at("seed").get<std::uint64_t>();
  ck.iteration = j.at("iteration").get<long>();
  for (const auto& c : j.at("chains")) ck.states.push_back(detail::state_from_json(c));
  return ck;
}

}  // namespace ebmcal
