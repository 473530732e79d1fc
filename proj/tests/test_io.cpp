#include <catch2/catch_amalgamated.hpp>

#include <cstdio>
#include <filesystem>
#include <fstream>

#include "ebmcal/checkpoint.hpp"
#include "ebmcal/config.hpp"
#include "ebmcal/csv.hpp"

using Eigen::MatrixXd;
using Eigen::VectorXd;
using namespace ebmcal;

namespace {

struct TempDir {
  std::filesystem::path path;
  TempDir() {
    path = std::filesystem::temp_directory_path() /
           ("ebmcal_test_" + std::to_string(std::rand()));
    std::filesystem::create_directories(path);
  }
  ~TempDir() { std::filesystem::remove_all(path); }
  std::string file(const std::string& name) const { return (path / name).string(); }
};

void write_text(const std::string& path, const std::string& text) {
  std::ofstream out(path, std::ios::trunc);
  out << text;
}

}  // namespace

TEST_CASE("csv round trip preserves values and blanks") {
  TempDir dir;
  MatrixXd m(3, 2);
  m << 1.5, -0.25, 1e-17, 3.0, std::nan(""), 0.1;
  write_csv(dir.file("t.csv"), {"a", "b"}, m);

  const CsvTable t = read_csv(dir.file("t.csv"));
  REQUIRE(t.header == std::vector<std::string>{"a", "b"});
  CHECK(t.values(0, 0) == 1.5);
  CHECK(t.values(0, 1) == -0.25);
  CHECK(t.values(1, 0) == 1e-17);
  CHECK(t.blank(2, 0));
  CHECK(std::isnan(t.values(2, 0)));
  CHECK_FALSE(t.blank(1, 0));
}

TEST_CASE("format_cell emits shortest round-trip text") {
  for (double v : {1.5, 0.1, 1.0 / 3.0, 6.02e23, -1e-300, 123456.789}) {
    const std::string s = format_cell(v);
    CHECK(std::stod(s) == v);
  }
  CHECK(format_cell(1.5) == "1.5");
  CHECK(format_cell(std::nan("")).empty());
}

TEST_CASE("malformed csv rows are reported with file and line") {
  TempDir dir;
  write_text(dir.file("bad.csv"), "year,tas\n2000,1.0\n2001,oops\n");
  try {
    read_csv(dir.file("bad.csv"));
    FAIL("expected ParseError");
  } catch (const ParseError& e) {
    const std::string msg = e.what();
    CHECK(msg.find("bad.csv:3") != std::string::npos);
    CHECK(msg.find("oops") != std::string::npos);
  }

  write_text(dir.file("short.csv"), "year,tas\n2000\n");
  CHECK_THROWS_AS(read_csv(dir.file("short.csv")), ParseError);
  write_text(dir.file("empty.csv"), "");
  CHECK_THROWS_AS(read_csv(dir.file("empty.csv")), ParseError);
}

TEST_CASE("year contiguity is enforced") {
  TempDir dir;
  write_text(dir.file("gap.csv"), "year,tas,rndt\n2000,1,1\n2002,1,1\n");
  CHECK_THROWS_AS(read_series(dir.file("gap.csv"), {"tas", "rndt"}, true), ParseError);

  write_text(dir.file("ok.csv"), "year,tas,rndt\n2000,1,1\n2001,,2\n");
  const SeriesFile s = read_series(dir.file("ok.csv"), {"tas", "rndt"}, true);
  CHECK(s.missing(1, 0));
  CHECK_FALSE(s.missing(1, 1));

  CHECK_THROWS_AS(read_series(dir.file("ok.csv"), {"tas", "rndt"}, false), ParseError);
}

TEST_CASE("config parsing: sections, members, overrides") {
  TempDir dir;
  write_text(dir.file("run.ini"), R"(
[run]
out_dir = results
seed = 77
threads = 3

[data]
observations = obs.csv
forcing = forcing.csv
tau_H = 2020
tau_F = 2100

[member hadgem]
abrupt = hadgem_ab.csv
histfut = hadgem_hf.csv

[member miroc]
abrupt = miroc_ab.csv
histfut = miroc_hf.csv

[mcmc]
chains = 8
burn_in = 1000
iterations = 2000
thin = 10

[priors]
kappa = 1.2
sigma_nu_median = 0.2

[projection]
windows = 2081-2100:1986-2005 2091-2100:1850-1900
thresholds = 1.5 2.0 3.0
reference = 1850-1900
)");
  const RunConfig cfg = parse_config(dir.file("run.ini"));
  CHECK(cfg.out_dir == "results");
  CHECK(cfg.seed == 77);
  CHECK(cfg.threads == 3);
  CHECK(cfg.tau_H_year == 2020);
  REQUIRE(cfg.members.size() == 2);
  CHECK(cfg.members[0].label == "hadgem");
  CHECK(cfg.members[1].histfut == "miroc_hf.csv");
  CHECK(cfg.mcmc.n_chains == 8);
  CHECK(cfg.mcmc.thin == 10);
  // CV untouched by the mcmc section: keeps the reference defaults.
  CHECK(cfg.cv_mcmc.burn_in == 25000);
  CHECK(cfg.cv_mcmc.n_iter == 100000);
  CHECK(cfg.cv_mcmc.thin == 40);
  CHECK(cfg.priors.kappa == 1.2);
  CHECK(cfg.priors.a_nu == Catch::Approx(std::log(0.2)));
  REQUIRE(cfg.windows.size() == 2);
  CHECK(cfg.windows[1].window.first == 2091);
  CHECK(cfg.thresholds.size() == 3);
  // Paths resolve relative to the config file directory.
  CHECK(cfg.resolve(cfg.observations_file) == (dir.path / "obs.csv").string());
}

TEST_CASE("config parsing failures") {
  TempDir dir;
  write_text(dir.file("bad1.ini"), "[run]\nseed = notanumber\n");
  CHECK_THROWS_AS(parse_config(dir.file("bad1.ini")), ParseError);

  write_text(dir.file("bad2.ini"), "[member]\nabrupt = a.csv\n");
  CHECK_THROWS_AS(parse_config(dir.file("bad2.ini")), ParseError);

  write_text(dir.file("bad3.ini"), "[member x]\nabrupt = a.csv\n");
  CHECK_THROWS_AS(parse_config(dir.file("bad3.ini")), ParseError);  // histfut missing

  write_text(dir.file("bad4.ini"), "[priors]\nkappa = 0.5\n");
  CHECK_THROWS_AS(parse_config(dir.file("bad4.ini")), NumericsError);  // kappa < 1

  write_text(dir.file("bad5.ini"), "[data]\ntau_H = 2100\ntau_F = 2020\n");
  CHECK_THROWS_AS(parse_config(dir.file("bad5.ini")), ParseError);
}

TEST_CASE("checkpoint round trip is exact") {
  RngStream rng(3);
  const int M = 2, T = 12;
  EnsembleState st;
  st.log_theta = MatrixXd::Random(M, kNumParams);
  st.delta = MatrixXd::Random(M, T);
  st.nu = VectorXd::Random(T);
  st.mu_lambda = VectorXd::Random(kNumParams);
  MatrixXd g = MatrixXd::Random(kNumParams, kNumParams);
  st.sigma_lambda = g * g.transpose();
  st.sigma_nu = 0.0831718;
  st.log_theta_obs = VectorXd::Random(kNumParams);
  for (int m = 0; m < M; ++m)
    st.prop_theta.push_back(RamProposal::from_covariance(
        MatrixXd::Identity(kNumParams, kNumParams) * (1.0 + m), 0.26));
  st.prop_theta[1].step = 421;
  st.prop_theta[1].frozen = true;
  st.prop_theta_obs =
      RamProposal::from_covariance(0.3 * MatrixXd::Identity(kNumParams, kNumParams), 0.26);
  st.prop_sigma_nu = RamProposal::from_covariance(MatrixXd::Identity(1, 1), 0.44);

  Checkpoint ck;
  ck.seed = 987654321;
  ck.iteration = 5000;
  ck.states = {st, st};

  TempDir dir;
  save_checkpoint(dir.file("ck.json"), ck);
  const Checkpoint back = load_checkpoint(dir.file("ck.json"));

  CHECK(back.seed == ck.seed);
  CHECK(back.iteration == ck.iteration);
  REQUIRE(back.states.size() == 2);
  const EnsembleState& b = back.states[0];
  CHECK((b.log_theta - st.log_theta).cwiseAbs().maxCoeff() == 0.0);
  CHECK((b.delta - st.delta).cwiseAbs().maxCoeff() == 0.0);
  CHECK((b.nu - st.nu).cwiseAbs().maxCoeff() == 0.0);
  CHECK((b.sigma_lambda - st.sigma_lambda).cwiseAbs().maxCoeff() == 0.0);
  CHECK(b.sigma_nu == st.sigma_nu);
  CHECK(b.prop_theta[1].step == 421);
  CHECK(b.prop_theta[1].frozen);
  CHECK((b.prop_theta[0].chol - st.prop_theta[0].chol).cwiseAbs().maxCoeff() == 0.0);

  write_text(dir.file("junk.json"), "{\"format\": \"other\"}");
  CHECK_THROWS_AS(load_checkpoint(dir.file("junk.json")), ParseError);
}
