#include <qbayes/training.hpp>

#include <cmath>
#include <limits>

#include <qbayes/adam.hpp>

namespace qbayes {

namespace {

// Shared tape for the batch objective: built once per training run, re-run as
// the bound batch buffers and parameter tensors change in place.
struct LossGraphCtx {
  ad::Graph g;
  Mat theta, u, stacked;
  std::vector<Mat> steps;
  ad::NodeId loss = -1;
  ad::NodeId scores = -1;
  ad::NodeId batch_mean = -1;  // valid in training mode
};

void build_loss_graph(LossGraphCtx& ctx, const PotentialModel& model, int batch, int n) {
  ad::Graph& g = ctx.g;
  const int d = model.d;
  const int d_x = model.d_x;

  ctx.theta.setZero(batch, d);
  ctx.u.setZero(batch, d);
  ctx.stacked.setZero(batch * n, d_x);
  ad::NodeId theta_in = g.input("theta", batch, d);
  g.bind(theta_in, &ctx.theta);
  ad::NodeId u_in = g.input("u", batch, d);
  g.bind(u_in, &ctx.u);
  ad::NodeId stacked_in = g.input("x.stacked", batch * n, d_x);
  g.bind(stacked_in, &ctx.stacked);

  std::vector<ad::NodeId> step_ids;
  if (model.fmap.q2 > 0) {
    ctx.steps.assign(n, Mat::Zero(batch, d_x));
    for (int t = 0; t < n; ++t) {
      ad::NodeId s = g.input("x.step" + std::to_string(t), batch, d_x);
      g.bind(s, &ctx.steps[t]);
      step_ids.push_back(s);
    }
  }

  FeatureNodes fn = feature_forward(g, model.fmap, stacked_in, step_ids, n, "f");
  ctx.batch_mean = fn.batch_mean;

  ad::NodeId phi_out = icnn_forward(g, model.phi, u_in, "phi");  // N x 1
  ad::NodeId b_out = icnn_forward(g, model.bnet, u_in, "b");     // N x q

  // S(i,j) = theta_i . u_j - phi(u_j) - f(x_i) . b(u_j)
  ctx.scores = g.sub(
      g.add_rowvec(g.matmul(theta_in, u_in, false, true), g.scale(g.transpose(phi_out), -1.0)),
      g.matmul(fn.features, b_out, false, true));
  ctx.loss = g.add(g.mean(phi_out), g.mean(g.row_max(ctx.scores)));
}

void fill_batch(LossGraphCtx& ctx, const PotentialModel& model, const TripleBatch& batch,
                const Mat& u, int n) {
  const int count = static_cast<int>(batch.theta.rows());
  ctx.theta = batch.theta;
  ctx.u = u;
  for (int i = 0; i < count; ++i) {
    const Mat& x = batch.xs[i];
    for (int c = 0; c < n; ++c) ctx.stacked.row(i * n + c) = x.col(c).transpose();
  }
  if (model.fmap.q2 > 0)
    for (int t = 0; t < n; ++t)
      for (int i = 0; i < count; ++i) ctx.steps[t].row(i) = batch.xs[i].col(t).transpose();
}

void validate_batch(const PotentialModel& model, const TripleBatch& batch, const Mat& u) {
  const int count = static_cast<int>(batch.theta.rows());
  if (count < 1) throw std::invalid_argument("objective needs at least one triple");
  if (static_cast<int>(batch.xs.size()) != count || u.rows() != count)
    throw std::invalid_argument("objective needs matching theta, x, u counts");
  if (batch.theta.cols() != model.d || u.cols() != model.d)
    throw std::invalid_argument("theta and u must have the model's dimension");
  for (const Mat& x : batch.xs)
    if (x.rows() != model.d_x || x.cols() != batch.xs[0].cols())
      throw std::invalid_argument("x blocks must share the shape d_x x n");
}

}  // namespace

double loss_L1(const PotentialModel& model, const TripleBatch& batch, const Mat& u) {
  validate_batch(model, batch, u);
  const int n = static_cast<int>(batch.xs[0].cols());
  LossGraphCtx ctx;
  build_loss_graph(ctx, model, static_cast<int>(batch.theta.rows()), n);
  fill_batch(ctx, model, batch, u, n);
  ctx.g.forward();
  const double loss = ctx.g.value(ctx.loss)(0, 0);
  if (!std::isfinite(loss)) {
    const Mat& s = ctx.g.value(ctx.scores);
    for (int i = 0; i < s.rows(); ++i)
      for (int j = 0; j < s.cols(); ++j)
        if (!std::isfinite(s(i, j)))
          throw std::runtime_error("objective non-finite at score entry (" + std::to_string(i) +
                                   ", " + std::to_string(j) + ")");
    throw std::runtime_error("objective non-finite");
  }
  return loss;
}

TrainResult train(const NetworkConfig& net_cfg, const TrainConfig& cfg, const Simulator& sim) {
  if (cfg.batch < 2) throw std::invalid_argument("training batch must be >= 2");
  if (cfg.epochs < 0 || cfg.iters_per_epoch < 1)
    throw std::invalid_argument("training needs epochs >= 0 and iterations >= 1");
  if (net_cfg.q2 == 0 && net_cfg.q1 == 0)
    throw std::invalid_argument("network needs q1 + q2 >= 1");

  Rng init_rng = Rng::derive(cfg.seed, 0);
  Rng data_rng = Rng::derive(cfg.seed, 1);
  Rng source_rng = Rng::derive(cfg.seed, 2);

  TrainResult result;
  result.model = make_potential_model(sim.theta_dim(), sim.x_dim(), sim.n_obs(), net_cfg.q1,
                                      net_cfg.q2, net_cfg.icnn_width, net_cfg.icnn_layers,
                                      net_cfg.ds_width, net_cfg.ds_pool, sim.kind(), init_rng);
  PotentialModel& model = result.model;
  model.fmap.training = true;

  const int n = sim.n_obs();
  LossGraphCtx ctx;
  build_loss_graph(ctx, model, cfg.batch, n);

  std::vector<ParamRef> refs;
  std::vector<Mat*> nonneg;
  visit_params(model, [&](const std::string& name, Mat& value, bool clamp) {
    refs.push_back({name, &value, &ctx.g.node(ctx.g.find(name)).grad});
    if (clamp) nonneg.push_back(&value);
  });
  Adam opt(std::move(refs), AdamConfig{cfg.lr0});

  const long rejected_before = sim.rejected();
  int nonfinite_streak = 0;
  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    opt.lr() = lr_schedule(cfg.lr0, cfg.lr_decay, epoch);
    double loss_sum = 0.0;
    int loss_count = 0;
    for (int it = 0; it < cfg.iters_per_epoch; ++it) {
      TripleBatch batch = sim.simulate(cfg.batch, data_rng);
      Mat u = sample_source(cfg.batch, model.d, 1.0, source_rng);
      fill_batch(ctx, model, batch, u, n);
      ctx.g.forward();
      const double loss = ctx.g.value(ctx.loss)(0, 0);
      if (!std::isfinite(loss)) {
        if (++nonfinite_streak >= 10)
          throw std::runtime_error(
              "objective non-finite for 10 consecutive iterations (epoch " +
              std::to_string(epoch) + ", iteration " + std::to_string(it) + ", lr " +
              std::to_string(opt.lr()) + ")");
        continue;
      }
      nonfinite_streak = 0;
      loss_sum += loss;
      ++loss_count;
      ctx.g.backward(ctx.loss);
      opt.step();
      for (Mat* w : nonneg) *w = w->cwiseMax(0.0);
      model.fmap.update_running_mean(ctx.g.value(ctx.batch_mean));
    }
    result.history.push_back(
        {epoch, loss_count > 0 ? loss_sum / loss_count : std::numeric_limits<double>::quiet_NaN(),
         opt.lr()});
    if (cfg.checkpoint_every > 0 && !cfg.checkpoint_dir.empty() &&
        (epoch + 1) % cfg.checkpoint_every == 0)
      save_model(model, cfg.checkpoint_dir + "/checkpoint_epoch" + std::to_string(epoch + 1) +
                            ".qbm");
  }
  result.rejected_draws = sim.rejected() - rejected_before;
  model.fmap.training = false;
  return result;
}

RestartResult multi_restart_train(const NetworkConfig& net_cfg, const TrainConfig& cfg,
                                  const Simulator& sim) {
  if (cfg.restarts < 1) throw std::invalid_argument("restarts must be >= 1");

  Rng held_data_rng = Rng::derive(cfg.seed, 100);
  Rng held_source_rng = Rng::derive(cfg.seed, 101);
  const int held_count = cfg.heldout_factor * cfg.batch;
  TripleBatch held = sim.simulate(held_count, held_data_rng);
  Mat held_u = sample_source(held_count, sim.theta_dim(), 1.0, held_source_rng);

  RestartResult out;
  double best = std::numeric_limits<double>::infinity();
  for (int r = 0; r < cfg.restarts; ++r) {
    TrainConfig run_cfg = cfg;
    run_cfg.seed = cfg.seed + static_cast<std::uint64_t>(r);
    TrainResult res = train(net_cfg, run_cfg, sim);
    res.model.fmap.training = true;  // held-out objective uses batch centering
    const double held_loss = loss_L1(res.model, held, held_u);
    res.model.fmap.training = false;
    out.heldout_losses.push_back(held_loss);
    out.histories.push_back(std::move(res.history));
    out.rejected_draws += res.rejected_draws;
    if (held_loss < best) {
      best = held_loss;
      out.best_index = r;
      out.model = std::move(res.model);
    }
  }
  return out;
}

}  // namespace qbayes
