#include <qbayes/config.hpp>

#include <fstream>
#include <sstream>

#include <qbayes/io.hpp>

namespace qbayes {

namespace {

void check_keys(const Json& obj, const std::string& where,
                std::initializer_list<const char*> allowed) {
  if (!obj.is_object()) throw ConfigError("config: " + where + " must be an object");
  for (auto it = obj.begin(); it != obj.end(); ++it) {
    bool known = false;
    for (const char* key : allowed)
      if (it.key() == key) {
        known = true;
        break;
      }
    if (!known) throw ConfigError("config: unknown key '" + it.key() + "' in " + where);
  }
}

double get_num(const Json& obj, const std::string& where, const char* key, double fallback) {
  if (!obj.contains(key)) return fallback;
  const Json& v = obj.at(key);
  if (!v.is_number()) throw ConfigError("config: " + where + "." + key + " must be a number");
  return v.get<double>();
}

int get_int(const Json& obj, const std::string& where, const char* key, int fallback) {
  if (!obj.contains(key)) return fallback;
  const Json& v = obj.at(key);
  if (!v.is_number_integer())
    throw ConfigError("config: " + where + "." + key + " must be an integer");
  return v.get<int>();
}

std::string get_str(const Json& obj, const std::string& where, const char* key,
                    const std::string& fallback) {
  if (!obj.contains(key)) return fallback;
  const Json& v = obj.at(key);
  if (!v.is_string()) throw ConfigError("config: " + where + "." + key + " must be a string");
  return v.get<std::string>();
}

void require_positive(double v, const std::string& what) {
  if (!(v > 0.0)) throw ConfigError("config: " + what + " must be positive");
}

void require_at_least(int v, int lo, const std::string& what) {
  if (v < lo) throw ConfigError("config: " + what + " must be >= " + std::to_string(lo));
}

void parse_sim(const Json& obj, SimConfig& sim) {
  sim.kind = get_str(obj, "sim", "kind", sim.kind);
  if (sim.kind == "gaussian") {
    check_keys(obj, "sim", {"kind", "gaussian"});
    if (obj.contains("gaussian")) {
      const Json& g = obj.at("gaussian");
      check_keys(g, "sim.gaussian", {"mu0", "sigma0", "kappa", "nu0", "n_obs"});
      sim.gaussian.mu0 = get_num(g, "sim.gaussian", "mu0", sim.gaussian.mu0);
      sim.gaussian.sigma0 = get_num(g, "sim.gaussian", "sigma0", sim.gaussian.sigma0);
      sim.gaussian.kappa = get_num(g, "sim.gaussian", "kappa", sim.gaussian.kappa);
      sim.gaussian.nu0 = get_num(g, "sim.gaussian", "nu0", sim.gaussian.nu0);
      sim.gaussian.n_obs = get_int(g, "sim.gaussian", "n_obs", sim.gaussian.n_obs);
    }
    require_positive(sim.gaussian.sigma0, "sim.gaussian.sigma0");
    require_positive(sim.gaussian.kappa, "sim.gaussian.kappa");
    require_positive(sim.gaussian.nu0, "sim.gaussian.nu0");
    require_at_least(sim.gaussian.n_obs, 1, "sim.gaussian.n_obs");
  } else if (sim.kind == "brock_hommes") {
    check_keys(obj, "sim", {"kind", "brock_hommes"});
    if (obj.contains("brock_hommes")) {
      const Json& b = obj.at("brock_hommes");
      check_keys(b, "sim.brock_hommes", {"beta", "r", "sigma", "horizon", "burn_in"});
      sim.brock_hommes.beta = get_num(b, "sim.brock_hommes", "beta", sim.brock_hommes.beta);
      sim.brock_hommes.r = get_num(b, "sim.brock_hommes", "r", sim.brock_hommes.r);
      sim.brock_hommes.sigma = get_num(b, "sim.brock_hommes", "sigma", sim.brock_hommes.sigma);
      sim.brock_hommes.horizon =
          get_int(b, "sim.brock_hommes", "horizon", sim.brock_hommes.horizon);
      sim.brock_hommes.burn_in =
          get_int(b, "sim.brock_hommes", "burn_in", sim.brock_hommes.burn_in);
    }
    require_positive(sim.brock_hommes.beta, "sim.brock_hommes.beta");
    require_positive(sim.brock_hommes.r, "sim.brock_hommes.r");
    require_positive(sim.brock_hommes.sigma, "sim.brock_hommes.sigma");
    require_at_least(sim.brock_hommes.horizon, 1, "sim.brock_hommes.horizon");
    require_at_least(sim.brock_hommes.burn_in, 0, "sim.brock_hommes.burn_in");
  } else {
    throw ConfigError("config: sim.kind must be 'gaussian' or 'brock_hommes', got '" + sim.kind +
                      "'");
  }
}

void parse_network(const Json& obj, NetworkConfig& net) {
  check_keys(obj, "network", {"q1", "q2", "icnn_width", "icnn_layers", "ds_width", "ds_pool"});
  net.q1 = get_int(obj, "network", "q1", net.q1);
  net.q2 = get_int(obj, "network", "q2", net.q2);
  net.icnn_width = get_int(obj, "network", "icnn_width", net.icnn_width);
  net.icnn_layers = get_int(obj, "network", "icnn_layers", net.icnn_layers);
  net.ds_width = get_int(obj, "network", "ds_width", net.ds_width);
  net.ds_pool = get_int(obj, "network", "ds_pool", net.ds_pool);
  require_at_least(net.q1, 0, "network.q1");
  require_at_least(net.q2, 0, "network.q2");
  if (net.q1 + net.q2 < 1) throw ConfigError("config: network.q1 + network.q2 must be >= 1");
  require_at_least(net.icnn_width, 1, "network.icnn_width");
  require_at_least(net.icnn_layers, 1, "network.icnn_layers");
  if (net.q1 > 0) {
    require_at_least(net.ds_width, 1, "network.ds_width");
    require_at_least(net.ds_pool, 1, "network.ds_pool");
  }
}

void parse_training(const Json& obj, TrainConfig& tr) {
  check_keys(obj, "training",
             {"epochs", "iters_per_epoch", "batch", "restarts", "lr0", "lr_decay", "seed",
              "checkpoint_every", "heldout_factor"});
  if (!obj.contains("seed")) throw ConfigError("config: training.seed is required");
  const Json& s = obj.at("seed");
  if (!s.is_number_unsigned() && !s.is_number_integer())
    throw ConfigError("config: training.seed must be a nonnegative integer");
  if (s.is_number_integer() && !s.is_number_unsigned() && s.get<long long>() < 0)
    throw ConfigError("config: training.seed must be a nonnegative integer");
  tr.seed = s.get<std::uint64_t>();
  tr.epochs = get_int(obj, "training", "epochs", tr.epochs);
  tr.iters_per_epoch = get_int(obj, "training", "iters_per_epoch", tr.iters_per_epoch);
  tr.batch = get_int(obj, "training", "batch", tr.batch);
  tr.restarts = get_int(obj, "training", "restarts", tr.restarts);
  tr.lr0 = get_num(obj, "training", "lr0", tr.lr0);
  tr.lr_decay = get_num(obj, "training", "lr_decay", tr.lr_decay);
  tr.checkpoint_every = get_int(obj, "training", "checkpoint_every", tr.checkpoint_every);
  tr.heldout_factor = get_int(obj, "training", "heldout_factor", tr.heldout_factor);
  require_at_least(tr.epochs, 1, "training.epochs");
  require_at_least(tr.iters_per_epoch, 1, "training.iters_per_epoch");
  require_at_least(tr.batch, 2, "training.batch");
  require_at_least(tr.restarts, 1, "training.restarts");
  require_positive(tr.lr0, "training.lr0");
  if (!(tr.lr_decay > 0.0 && tr.lr_decay <= 1.0))
    throw ConfigError("config: training.lr_decay must be in (0, 1]");
  require_at_least(tr.checkpoint_every, 0, "training.checkpoint_every");
  require_at_least(tr.heldout_factor, 1, "training.heldout_factor");
}

void parse_eval(const Json& obj, EvalConfig& ev) {
  check_keys(obj, "eval",
             {"tau_levels", "x_value", "n_samples", "mmd_permutations", "dtm_j", "dtm_i",
              "hull_directions"});
  if (obj.contains("tau_levels")) {
    const Json& arr = obj.at("tau_levels");
    if (!arr.is_array() || arr.empty())
      throw ConfigError("config: eval.tau_levels must be a non-empty array");
    ev.tau_levels.clear();
    for (const Json& v : arr) {
      if (!v.is_number()) throw ConfigError("config: eval.tau_levels entries must be numbers");
      ev.tau_levels.push_back(v.get<double>());
    }
  }
  double prev = 0.0;
  for (double t : ev.tau_levels) {
    if (!(t > 0.0 && t < 1.0))
      throw ConfigError("config: eval.tau_levels entries must lie strictly inside (0, 1)");
    if (!(t > prev)) throw ConfigError("config: eval.tau_levels must be strictly ascending");
    prev = t;
  }
  ev.x_value = get_num(obj, "eval", "x_value", ev.x_value);
  ev.n_samples = get_int(obj, "eval", "n_samples", ev.n_samples);
  ev.mmd_permutations = get_int(obj, "eval", "mmd_permutations", ev.mmd_permutations);
  ev.dtm_j = get_int(obj, "eval", "dtm_j", ev.dtm_j);
  ev.dtm_i = get_int(obj, "eval", "dtm_i", ev.dtm_i);
  ev.hull_directions = get_int(obj, "eval", "hull_directions", ev.hull_directions);
  require_at_least(ev.n_samples, 2, "eval.n_samples");
  require_at_least(ev.mmd_permutations, 1, "eval.mmd_permutations");
  require_at_least(ev.dtm_j, 1, "eval.dtm_j");
  require_at_least(ev.dtm_i, 1, "eval.dtm_i");
  require_at_least(ev.hull_directions, 3, "eval.hull_directions");
}

}  // namespace

ExperimentConfig parse_config(const std::string& text) {
  Json root;
  try {
    root = Json::parse(text);
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("config: invalid JSON: ") + e.what());
  }
  check_keys(root, "top level", {"schema_version", "sim", "network", "training", "eval"});
  if (!root.contains("schema_version"))
    throw ConfigError("config: schema_version is required");
  const Json& sv = root.at("schema_version");
  if (!sv.is_number_integer() || sv.get<int>() != 1)
    throw ConfigError("config: schema_version must be 1");

  ExperimentConfig cfg;
  if (root.contains("sim")) parse_sim(root.at("sim"), cfg.sim);
  if (root.contains("network")) parse_network(root.at("network"), cfg.network);
  if (!root.contains("training")) throw ConfigError("config: training.seed is required");
  parse_training(root.at("training"), cfg.training);
  if (root.contains("eval")) parse_eval(root.at("eval"), cfg.eval);
  return cfg;
}

ExperimentConfig load_config_file(const std::string& path) {
  return parse_config(read_text_file(path));
}

Json canonical_json(const ExperimentConfig& cfg) {
  Json sim;
  sim["kind"] = cfg.sim.kind;
  if (cfg.sim.kind == "gaussian") {
    sim["gaussian"] = Json{{"mu0", cfg.sim.gaussian.mu0},
                           {"sigma0", cfg.sim.gaussian.sigma0},
                           {"kappa", cfg.sim.gaussian.kappa},
                           {"nu0", cfg.sim.gaussian.nu0},
                           {"n_obs", cfg.sim.gaussian.n_obs}};
  } else {
    sim["brock_hommes"] = Json{{"beta", cfg.sim.brock_hommes.beta},
                               {"r", cfg.sim.brock_hommes.r},
                               {"sigma", cfg.sim.brock_hommes.sigma},
                               {"horizon", cfg.sim.brock_hommes.horizon},
                               {"burn_in", cfg.sim.brock_hommes.burn_in}};
  }
  Json root;
  root["schema_version"] = cfg.schema_version;
  root["sim"] = sim;
  root["network"] = Json{{"q1", cfg.network.q1},
                         {"q2", cfg.network.q2},
                         {"icnn_width", cfg.network.icnn_width},
                         {"icnn_layers", cfg.network.icnn_layers},
                         {"ds_width", cfg.network.ds_width},
                         {"ds_pool", cfg.network.ds_pool}};
  root["training"] = Json{{"epochs", cfg.training.epochs},
                          {"iters_per_epoch", cfg.training.iters_per_epoch},
                          {"batch", cfg.training.batch},
                          {"restarts", cfg.training.restarts},
                          {"lr0", cfg.training.lr0},
                          {"lr_decay", cfg.training.lr_decay},
                          {"seed", cfg.training.seed},
                          {"checkpoint_every", cfg.training.checkpoint_every},
                          {"heldout_factor", cfg.training.heldout_factor}};
  root["eval"] = Json{{"tau_levels", cfg.eval.tau_levels},
                      {"x_value", cfg.eval.x_value},
                      {"n_samples", cfg.eval.n_samples},
                      {"mmd_permutations", cfg.eval.mmd_permutations},
                      {"dtm_j", cfg.eval.dtm_j},
                      {"dtm_i", cfg.eval.dtm_i},
                      {"hull_directions", cfg.eval.hull_directions}};
  return root;
}

std::string canonical_config(const ExperimentConfig& cfg) { return canonical_json(cfg).dump(2); }

std::string config_hash(const ExperimentConfig& cfg) { return fnv1a_hex(canonical_config(cfg)); }

void apply_paper_scale(ExperimentConfig& cfg) {
  cfg.network.icnn_width = 512;
  cfg.training.epochs = 150;
  cfg.training.restarts = 10;
}

ExperimentConfig default_gaussian_config() {
  ExperimentConfig cfg;
  cfg.training.seed = 1;
  return cfg;
}

ExperimentConfig default_brock_hommes_config() {
  ExperimentConfig cfg;
  cfg.sim.kind = "brock_hommes";
  cfg.network.q1 = 2;
  cfg.network.q2 = 8;
  cfg.training.seed = 1;
  return cfg;
}

std::unique_ptr<Simulator> make_simulator(const SimConfig& sim) {
  if (sim.kind == "gaussian")
    return std::make_unique<GaussianConjugateSim>(sim.gaussian.mu0, sim.gaussian.sigma0,
                                                  sim.gaussian.kappa, sim.gaussian.nu0,
                                                  sim.gaussian.n_obs);
  if (sim.kind == "brock_hommes")
    return std::make_unique<BrockHommesSim>(sim.brock_hommes.beta, sim.brock_hommes.r,
                                            sim.brock_hommes.sigma, sim.brock_hommes.horizon,
                                            sim.brock_hommes.burn_in);
  throw ConfigError("config: unsupported simulator kind '" + sim.kind + "'");
}

}  // namespace qbayes
