#include <cstdio>
#include <cstdlib>
#include <exception>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include <qbayes/runner.hpp>

namespace {

std::string default_out(const std::string& given, const std::string& command) {
  if (!given.empty()) return given;
  const char* root = std::getenv("QBAYES_OUT_ROOT");
  if (root && *root) return std::string(root) + "/" + command;
  throw CLI::ValidationError("--out", "pass --out or set QBAYES_OUT_ROOT");
}

void check_tau_levels(const std::vector<double>& taus) {
  double prev = 0.0;
  for (double t : taus) {
    if (!(t > 0.0 && t < 1.0))
      throw CLI::ValidationError("--tau", "levels must lie strictly inside (0, 1)");
    if (!(t > prev)) throw CLI::ValidationError("--tau", "levels must be strictly ascending");
    prev = t;
  }
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"posterior sampling through learned conditional quantile maps"};
  app.require_subcommand(1);

  std::string train_config, train_out;
  bool train_paper = false;
  CLI::App* train = app.add_subcommand("train", "fit a potential model from a JSON config");
  train->add_option("--config", train_config, "experiment config (JSON)")
      ->required()
      ->check(CLI::ExistingFile);
  train->add_option("--out", train_out, "output directory");
  train->add_flag("--paper-scale", train_paper, "full-size networks and schedule");

  qbayes::SampleOptions sopt;
  std::string sample_out;
  CLI::App* sample = app.add_subcommand("sample", "draw posterior samples and credible sets");
  sample->add_option("--model", sopt.model_path, "trained model file")
      ->required()
      ->check(CLI::ExistingFile);
  sample->add_option("--out", sample_out, "output directory");
  sample->add_option("--x", sopt.x_value, "scalar observation, replicated to the model shape");
  sample->add_option("--x-file", sopt.x_file,
                     "observation CSV (n_obs rows x x-dim columns); overrides --x")
      ->check(CLI::ExistingFile);
  sample->add_option("--count", sopt.count, "number of posterior draws")
      ->check(CLI::PositiveNumber);
  sample->add_option("--seed", sopt.seed, "sampling seed");
  sample->add_option("--tau", sopt.tau_levels, "credible levels, ascending in (0, 1)")
      ->delimiter(',');
  sample->add_option("--hull-directions", sopt.hull_directions,
                     "shared boundary directions per credible set")
      ->check(CLI::Range(3, 1 << 20));

  std::string eval_model, eval_config, eval_out;
  std::uint64_t eval_seed = 0;
  CLI::App* eval = app.add_subcommand("eval", "score a trained model against references");
  eval->add_option("--model", eval_model, "trained model file")
      ->required()
      ->check(CLI::ExistingFile);
  eval->add_option("--config", eval_config, "experiment config (JSON)")
      ->required()
      ->check(CLI::ExistingFile);
  eval->add_option("--out", eval_out, "output directory");
  CLI::Option* eval_seed_opt = eval->add_option("--seed", eval_seed, "override config seed");

  std::string repro_id, repro_config, repro_out;
  bool repro_paper = false;
  CLI::App* repro = app.add_subcommand("reproduce", "run a packaged experiment end to end");
  repro->add_option("--id", repro_id, "gaussian-shrinkage or brock-hommes-contours")->required();
  repro->add_option("--out", repro_out, "output directory");
  repro->add_option("--config", repro_config, "override the experiment config")
      ->check(CLI::ExistingFile);
  repro->add_flag("--paper-scale", repro_paper, "full-size networks and schedule");

  CLI11_PARSE(app, argc, argv);

  try {
    if (train->parsed())
      return qbayes::cmd_train(train_config, default_out(train_out, "train"), train_paper);
    if (sample->parsed()) {
      check_tau_levels(sopt.tau_levels);
      sopt.out_dir = default_out(sample_out, "sample");
      return qbayes::cmd_sample(sopt);
    }
    if (eval->parsed()) {
      std::optional<std::uint64_t> seed;
      if (eval_seed_opt->count() > 0) seed = eval_seed;
      return qbayes::cmd_eval(eval_model, eval_config, default_out(eval_out, "eval"), seed);
    }
    if (repro->parsed())
      return qbayes::cmd_reproduce(repro_id, default_out(repro_out, "reproduce"), repro_config,
                                   repro_paper);
  } catch (const CLI::Error& e) {
    return app.exit(e);
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 1;
  }
  return 0;
}
