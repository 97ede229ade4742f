#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include <qbayes/nets.hpp>
#include <qbayes/simulators.hpp>

namespace qbayes {

struct NetworkConfig {
  int q1 = 2, q2 = 0;
  int icnn_width = 64, icnn_layers = 3;
  int ds_width = 64, ds_pool = 8;
};

struct TrainConfig {
  int epochs = 30;
  int iters_per_epoch = 100;
  int batch = 128;
  int restarts = 3;
  double lr0 = 0.01;
  double lr_decay = 0.99;
  std::uint64_t seed = 0;
  int checkpoint_every = 0;  // epochs between checkpoints; 0 disables
  std::string checkpoint_dir;
  int heldout_factor = 10;  // held-out batch = factor * batch
};

struct EpochStat {
  int epoch = 0;
  double mean_loss = 0;
  double lr = 0;
};

struct TrainResult {
  PotentialModel model;
  std::vector<EpochStat> history;
  long rejected_draws = 0;
};

struct RestartResult {
  PotentialModel model;
  int best_index = 0;
  std::vector<double> heldout_losses;
  std::vector<std::vector<EpochStat>> histories;
  long rejected_draws = 0;
};

// Sample objective: mean_i phi(U_i) + mean_i max_j [ U_j . theta_i - phi(U_j)
// - b(U_j) . f(X_i) ], the inner max running over the same batch. Centering of
// f follows the model's mode (batch mean while training, frozen running mean
// otherwise).
double loss_L1(const PotentialModel& model, const TripleBatch& batch, const Mat& u);

TrainResult train(const NetworkConfig& net_cfg, const TrainConfig& cfg, const Simulator& sim);
RestartResult multi_restart_train(const NetworkConfig& net_cfg, const TrainConfig& cfg,
                                  const Simulator& sim);

}  // namespace qbayes
