// Drives the installed command-line binary end to end on a small synthetic
// ensemble: generate, fit, diagnostics, project, mle-demo, plus the exit-code
// and determinism contracts.
#include <catch2/catch_amalgamated.hpp>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>

#ifndef EBMCAL_CLI_PATH
#error "EBMCAL_CLI_PATH must be defined"
#endif

namespace {

namespace fs = std::filesystem;

struct TempDir {
  fs::path path;
  TempDir() {
    path = fs::temp_directory_path() / ("ebmcal_cli_" + std::to_string(std::rand()));
    fs::create_directories(path);
  }
  ~TempDir() { fs::remove_all(path); }
  std::string file(const std::string& name) const { return (path / name).string(); }
};

int run(const std::string& args) {
  const std::string cmd = std::string(EBMCAL_CLI_PATH) + " " + args + " >/dev/null 2>&1";
  const int status = std::system(cmd.c_str());
  return WEXITSTATUS(status);
}

std::string slurp(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  std::ostringstream os;
  os << in.rdbuf();
  return os.str();
}

void write_text(const std::string& path, const std::string& text) {
  std::ofstream out(path, std::ios::trunc);
  out << text;
}

const char* kSynthConfig = R"(
[run]
out_dir = data
seed = 2024
threads = 2

[data]
tau_H = 1990
tau_F = 2025

[mcmc]
chains = 2
burn_in = 120
iterations = 240
thin = 10

[cv]
chains = 2
burn_in = 80
iterations = 160
thin = 10

[mle]
restarts = 2
max_evals = 6000
samples = 400

[synthetic]
members = 2
t_abrupt = 60
start_year = 1931
sigma_nu = 0.02
obs_noise_sd = 0.05
volcanic = 1942:0.1
)";

}  // namespace

TEST_CASE("cli pipeline: synthetic -> fit -> diagnostics -> project") {
  TempDir dir;
  write_text(dir.file("synth.ini"), kSynthConfig);

  REQUIRE(run("simulate-synthetic --config " + dir.file("synth.ini")) == 0);
  REQUIRE(fs::exists(dir.file("data/config.ini")));
  REQUIRE(fs::exists(dir.file("data/m1_histfut.csv")));

  // Tiny chains do not converge; exit code 3 signals that while still
  // writing the posterior store.
  const int fit_rc = run("fit-hier --config " + dir.file("data/config.ini"));
  CHECK((fit_rc == 0 || fit_rc == 3));
  REQUIRE(fs::exists(dir.file("data/fit/posterior.csv")));
  REQUIRE(fs::exists(dir.file("data/fit/checkpoint.json")));

  const int diag_rc = run("diagnostics --config " + dir.file("data/config.ini") +
                          " --posterior " + dir.file("data/fit"));
  CHECK(diag_rc == fit_rc);

  REQUIRE(run("project --config " + dir.file("data/config.ini") + " --posterior " +
              dir.file("data/fit") + " --out " + dir.file("proj")) == 0);
  CHECK(fs::exists(dir.file("proj/quantiles.csv")));
  CHECK(fs::exists(dir.file("proj/exceedance.csv")));
  CHECK(fs::exists(dir.file("proj/ecs.csv")));

  // Quantile rows are ordered.
  std::ifstream q(dir.file("proj/quantiles.csv"));
  std::string line;
  std::getline(q, line);  // header
  int rows = 0;
  while (std::getline(q, line)) {
    std::stringstream ss(line);
    std::vector<double> cells;
    std::string cell;
    while (std::getline(ss, cell, ',')) cells.push_back(std::stod(cell));
    REQUIRE(cells.size() == 11);
    for (int i = 1; i + 1 <= 5; ++i) CHECK(cells[i] <= cells[i + 1]);
    for (int i = 6; i + 1 <= 10; ++i) CHECK(cells[i] <= cells[i + 1]);
    ++rows;
  }
  CHECK(rows == 35);
}

TEST_CASE("cli determinism: identical bytes across reruns and thread counts") {
  TempDir dir;
  write_text(dir.file("synth.ini"), kSynthConfig);
  REQUIRE(run("simulate-synthetic --config " + dir.file("synth.ini")) == 0);

  run("fit-hier --config " + dir.file("data/config.ini") + " --out " + dir.file("f1") +
      " --threads 1");
  run("fit-hier --config " + dir.file("data/config.ini") + " --out " + dir.file("f2") +
      " --threads 2");
  for (const char* name : {"posterior.csv", "nu_paths.csv", "hyper.csv"})
    CHECK(slurp(dir.file(std::string("f1/") + name)) ==
          slurp(dir.file(std::string("f2/") + name)));
}

TEST_CASE("cli mle-demo and fit-abrupt write reports") {
  TempDir dir;
  write_text(dir.file("synth.ini"), kSynthConfig);
  REQUIRE(run("simulate-synthetic --config " + dir.file("synth.ini")) == 0);
  REQUIRE(run("mle-demo --config " + dir.file("data/config.ini") + " --out " +
              dir.file("demo")) == 0);
  CHECK(fs::exists(dir.file("demo/mle_z_m0.csv")));
  CHECK(fs::exists(dir.file("demo/mle_z_mean.csv")));

  const int rc = run("fit-abrupt --config " + dir.file("data/config.ini") + " --out " +
                     dir.file("fits"));
  CHECK((rc == 0 || rc == 3));
  CHECK(fs::exists(dir.file("fits/fits.csv")));
}

TEST_CASE("cli exit codes and dry-run") {
  TempDir dir;
  // Missing config file.
  CHECK(run("fit-hier --config " + dir.file("nope.ini")) == 2);

  // Config referencing missing data files fails validation.
  write_text(dir.file("bad.ini"),
             "[data]\nforcing = missing.csv\ntau_H = 2000\ntau_F = 2010\n"
             "[member a]\nabrupt = x.csv\nhistfut = y.csv\n");
  CHECK(run("fit-hier --config " + dir.file("bad.ini")) == 2);

  // Paper-scale configuration parses and dry-runs cleanly.
  write_text(dir.file("synth.ini"), kSynthConfig);
  REQUIRE(run("simulate-synthetic --config " + dir.file("synth.ini")) == 0);
  std::string cfg = slurp(dir.file("data/config.ini"));
  cfg.replace(cfg.find("burn_in = 120"), 13, "burn_in = 25000");
  cfg.replace(cfg.find("iterations = 240"), 16, "iterations = 250000");
  cfg.replace(cfg.find("thin = 10"), 9, "thin = 200");
  write_text(dir.file("data/paper.ini"), cfg);
  CHECK(run("fit-hier --dry-run --config " + dir.file("data/paper.ini")) == 0);
  CHECK(run("cross-validate --dry-run --config " + dir.file("data/paper.ini")) == 0);

  // Unknown subcommand is a usage error.
  CHECK(run("frobnicate") != 0);
}

TEST_CASE("cli checkpoint resume is bit-identical") {
  TempDir dir;
  write_text(dir.file("synth.ini"), kSynthConfig);
  REQUIRE(run("simulate-synthetic --config " + dir.file("synth.ini")) == 0);

  // Full run in one go.
  run("fit-hier --config " + dir.file("data/config.ini") + " --out " + dir.file("full"));

  // Two-stage run: halve the sampling period, checkpoint, resume.
  std::string cfg = slurp(dir.file("data/config.ini"));
  cfg.replace(cfg.find("iterations = 240"), 16, "iterations = 120");
  write_text(dir.file("data/half.ini"), cfg);
  run("fit-hier --config " + dir.file("data/half.ini") + " --out " + dir.file("part"));
  run("fit-hier --config " + dir.file("data/config.ini") + " --out " + dir.file("rest") +
      " --resume " + dir.file("part/checkpoint.json"));

  // The resumed store continues the full run's draws exactly. Draw counters
  // restart on resume, so compare everything after the chain/draw columns.
  const auto payload_lines = [](const std::string& text) {
    std::vector<std::string> out;
    std::stringstream ss(text);
    std::string line;
    std::getline(ss, line);  // header
    while (std::getline(ss, line)) {
      const auto c1 = line.find(',');
      const auto c2 = line.find(',', c1 + 1);
      out.push_back(line.substr(c2 + 1));
    }
    return out;
  };
  const auto full = payload_lines(slurp(dir.file("full/nu_paths.csv")));
  const auto part = payload_lines(slurp(dir.file("part/nu_paths.csv")));
  const auto rest = payload_lines(slurp(dir.file("rest/nu_paths.csv")));
  REQUIRE(full.size() == part.size() + rest.size());
  // Draws are grouped by chain; splice each chain's half-run blocks.
  const std::size_t part_per_chain = part.size() / 2;
  const std::size_t rest_per_chain = rest.size() / 2;
  const std::size_t full_per_chain = full.size() / 2;
  for (int c = 0; c < 2; ++c) {
    for (std::size_t i = 0; i < part_per_chain; ++i)
      CHECK(full[c * full_per_chain + i] == part[c * part_per_chain + i]);
    for (std::size_t i = 0; i < rest_per_chain; ++i)
      CHECK(full[c * full_per_chain + part_per_chain + i] == rest[c * rest_per_chain + i]);
  }
}
