#pragma once

#include <memory>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

#include <qbayes/simulators.hpp>
#include <qbayes/training.hpp>

namespace qbayes {

using Json = nlohmann::ordered_json;

struct ConfigError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct GaussianSimConfig {
  double mu0 = 0.0, sigma0 = 1.0, kappa = 2.0, nu0 = 25.0;
  int n_obs = 2;
};

struct BrockHommesSimConfig {
  double beta = 120.0, r = 1.01, sigma = 0.04;
  int horizon = 100, burn_in = 50;
};

struct SimConfig {
  std::string kind = "gaussian";
  GaussianSimConfig gaussian;
  BrockHommesSimConfig brock_hommes;
};

struct EvalConfig {
  std::vector<double> tau_levels{0.5, 0.8, 0.9};  // strictly ascending in (0, 1)
  double x_value = 0.5;                           // scalar observation, replicated
  int n_samples = 2000;
  int mmd_permutations = 200;
  int dtm_j = 100, dtm_i = 300;
  int hull_directions = 512;
};

struct ExperimentConfig {
  int schema_version = 1;
  SimConfig sim;
  NetworkConfig network;
  TrainConfig training;
  EvalConfig eval;
};

// Parsing is fail-closed: every object level rejects keys it does not know,
// schema_version must equal 1, and training.seed must be given explicitly.
ExperimentConfig parse_config(const std::string& text);
ExperimentConfig load_config_file(const std::string& path);

Json canonical_json(const ExperimentConfig& cfg);
std::string canonical_config(const ExperimentConfig& cfg);
std::string config_hash(const ExperimentConfig& cfg);

// Full-size run: wider potential networks, longer schedule, more restarts.
void apply_paper_scale(ExperimentConfig& cfg);

ExperimentConfig default_gaussian_config();
ExperimentConfig default_brock_hommes_config();

std::unique_ptr<Simulator> make_simulator(const SimConfig& sim);

}  // namespace qbayes
