#pragma once

#include <cstdint>
#include <functional>
#include <vector>

#include <qbayes/nets.hpp>
#include <qbayes/simulators.hpp>

namespace qbayes {

struct PinballNet {
  int cond_dim = 0, width = 64, hidden = 3;
  std::vector<Dense> layers;  // hidden + 1, CELU between, linear out
};

PinballNet make_pinball_net(int cond_dim, int width, int hidden, Rng& rng);
double pinball_net_eval(const PinballNet& net, double tau, const Vec& cond);
Mat pinball_net_eval_batch(const PinballNet& net, const Mat& inputs);  // rows [tau, cond...]

double pinball_loss(double q, double z, double tau);
// Monte Carlo CRPS: (2/K) sum_k pinball(quantile_at(tau_k), z, tau_k) with
// tau_k uniform on (0, 1).
double crps_mc(const std::function<double(double)>& quantile_at, double z, int k, Rng& rng);

enum class ChainFeatures { ManualMoments, Learned };

// Per-observation-row mean and standard deviation, stacked: the hand-built
// conditioning statistics for the manual chain variant.
Vec manual_moments(const Mat& x);

struct AutoRegChain {
  int d = 0;
  int cond_dim = 0;
  ChainFeatures features = ChainFeatures::ManualMoments;
  FeatureMap fmap;  // Learned variant only
  std::vector<PinballNet> nets;
};

struct ChainTrainConfig {
  int epochs = 10;
  int iters_per_epoch = 100;
  int batch = 128;
  double lr0 = 0.01;
  double lr_decay = 0.99;
  std::uint64_t seed = 0;
  int width = 64, hidden = 3;
  int q1 = 2, q2 = 0, ds_width = 64, ds_pool = 8;  // Learned variant
};

// Trains net k on quantile regression of theta_k given (tau, features,
// previously *sampled* coordinates): earlier coordinates are drawn from the
// already-trained nets with fresh tau draws, never taken from the simulator.
AutoRegChain train_autoregressive(const ChainTrainConfig& cfg, const Simulator& sim,
                                  ChainFeatures features);

Mat sample_autoregressive(const AutoRegChain& chain, const Mat& x, int count, Rng& rng);

// Low-level chain sampler over arbitrary conditional quantile functions;
// nets[k] maps (tau, [base_cond, theta_1..theta_k]) to the next coordinate.
Mat sample_chain(const std::vector<std::function<double(double, const Vec&)>>& nets,
                 const Vec& base_cond, int count, Rng& rng);

}  // namespace qbayes
