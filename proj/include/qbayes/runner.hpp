#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include <qbayes/config.hpp>
#include <qbayes/quantile.hpp>

namespace qbayes {

struct SampleOptions {
  std::string model_path;
  std::string out_dir;
  double x_value = 0.5;
  std::string x_file;  // overrides x_value when non-empty
  int count = 2000;
  std::uint64_t seed = 1;
  std::vector<double> tau_levels{0.5, 0.8, 0.9};
  int hull_directions = 512;
};

// Each command writes its artifacts plus a manifest.json into out_dir and
// returns a process exit code. All randomness flows from the given seeds, so
// rerunning a command reproduces its outputs byte for byte.
int cmd_train(const std::string& config_path, const std::string& out_dir, bool paper_scale);
int cmd_sample(const SampleOptions& opt);
int cmd_eval(const std::string& model_path, const std::string& config_path,
             const std::string& out_dir, std::optional<std::uint64_t> seed_override);
int cmd_reproduce(const std::string& id, const std::string& out_dir,
                  const std::string& config_path, bool paper_scale);

Mat observation_from_scalar(const PotentialModel& m, double x_value);
Mat observation_from_file(const PotentialModel& m, const std::string& path);

Json hulls_json(const CredibleSet& set);

}  // namespace qbayes
