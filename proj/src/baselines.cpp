#include <qbayes/baselines.hpp>

#include <cmath>
#include <stdexcept>

#include <qbayes/adam.hpp>

namespace qbayes {

namespace {

Mat celu_mat(Mat z) {
  return z.unaryExpr([](double x) { return x >= 0.0 ? x : std::expm1(x); });
}

}  // namespace

PinballNet make_pinball_net(int cond_dim, int width, int hidden, Rng& rng) {
  if (cond_dim < 1 || width < 1 || hidden < 1)
    throw std::invalid_argument("pinball net needs cond_dim, width, hidden >= 1");
  PinballNet net;
  net.cond_dim = cond_dim;
  net.width = width;
  net.hidden = hidden;
  int in = 1 + cond_dim;  // tau is concatenated to the conditioning input
  for (int k = 0; k < hidden; ++k) {
    net.layers.push_back(make_dense(in, width, rng));
    in = width;
  }
  net.layers.push_back(make_dense(in, 1, rng));
  return net;
}

Mat pinball_net_eval_batch(const PinballNet& net, const Mat& inputs) {
  if (inputs.cols() != 1 + net.cond_dim)
    throw std::invalid_argument("pinball net expects " + std::to_string(1 + net.cond_dim) +
                                " input columns, got " + std::to_string(inputs.cols()));
  Mat z = inputs;
  for (std::size_t i = 0; i < net.layers.size(); ++i) {
    z = (z * net.layers[i].w).rowwise() + net.layers[i].b.row(0);
    if (i + 1 < net.layers.size()) z = celu_mat(std::move(z));
  }
  return z;
}

double pinball_net_eval(const PinballNet& net, double tau, const Vec& cond) {
  if (cond.size() != net.cond_dim) throw std::invalid_argument("conditioning has wrong dimension");
  Mat in(1, 1 + net.cond_dim);
  in(0, 0) = tau;
  in.block(0, 1, 1, net.cond_dim) = cond.transpose();
  return pinball_net_eval_batch(net, in)(0, 0);
}

double pinball_loss(double q, double z, double tau) {
  return (tau - (z < q ? 1.0 : 0.0)) * (z - q);
}

double crps_mc(const std::function<double(double)>& quantile_at, double z, int k, Rng& rng) {
  if (k < 1) throw std::invalid_argument("crps needs at least one quantile draw");
  double acc = 0.0;
  for (int i = 0; i < k; ++i) {
    const double tau = rng.uniform(0.0, 1.0);
    acc += pinball_loss(quantile_at(tau), z, tau);
  }
  return 2.0 * acc / k;
}

Vec manual_moments(const Mat& x) {
  if (x.rows() < 1 || x.cols() < 1) throw std::invalid_argument("moments need observations");
  Vec out(2 * x.rows());
  for (int r = 0; r < x.rows(); ++r) {
    const double mean = x.row(r).mean();
    double sd = 0.0;
    if (x.cols() > 1) {
      const double ss = (x.row(r).array() - mean).square().sum();
      sd = std::sqrt(ss / (x.cols() - 1));
    }
    out(2 * r) = mean;
    out(2 * r + 1) = sd;
  }
  return out;
}

namespace {

// Feature values for a whole batch under inference centering; used to build
// conditioning inputs for the already-trained earlier nets.
Mat feature_values_batch(const FeatureMap& f, const std::vector<Mat>& xs) {
  const int count = static_cast<int>(xs.size());
  const int n = static_cast<int>(xs[0].cols());
  const bool saved = f.training;
  const_cast<FeatureMap&>(f).training = false;
  ad::Graph g;
  Mat stacked(count * n, f.d_x);
  for (int i = 0; i < count; ++i)
    for (int c = 0; c < n; ++c) stacked.row(i * n + c) = xs[i].col(c).transpose();
  ad::NodeId stacked_in = g.input("x.stacked", count * n, f.d_x);
  g.bind(stacked_in, &stacked);
  std::vector<Mat> steps;
  std::vector<ad::NodeId> step_ids;
  if (f.q2 > 0) {
    steps.assign(n, Mat::Zero(count, f.d_x));
    for (int t = 0; t < n; ++t) {
      for (int i = 0; i < count; ++i) steps[t].row(i) = xs[i].col(t).transpose();
      ad::NodeId s = g.input("x.step" + std::to_string(t), count, f.d_x);
      g.bind(s, &steps[t]);
      step_ids.push_back(s);
    }
  }
  FeatureNodes fn = feature_forward(g, f, stacked_in, step_ids, n, "f");
  g.forward();
  Mat out = g.value(fn.features);
  const_cast<FeatureMap&>(f).training = saved;
  return out;
}

}  // namespace

AutoRegChain train_autoregressive(const ChainTrainConfig& cfg, const Simulator& sim,
                                  ChainFeatures features) {
  if (cfg.batch < 2) throw std::invalid_argument("chain training batch must be >= 2");
  Rng init_rng = Rng::derive(cfg.seed, 0);
  Rng data_rng = Rng::derive(cfg.seed, 1);
  Rng tau_rng = Rng::derive(cfg.seed, 2);
  Rng prev_rng = Rng::derive(cfg.seed, 3);

  AutoRegChain chain;
  chain.d = sim.theta_dim();
  chain.features = features;
  if (features == ChainFeatures::Learned) {
    chain.fmap = make_feature_map(sim.x_dim(), cfg.q1, cfg.q2, cfg.ds_width, cfg.ds_pool, init_rng);
    chain.fmap.training = true;
    chain.cond_dim = chain.fmap.q();
  } else {
    chain.cond_dim = 2 * sim.x_dim();
  }
  for (int k = 0; k < chain.d; ++k)
    chain.nets.push_back(make_pinball_net(chain.cond_dim + k, cfg.width, cfg.hidden, init_rng));

  const int n = sim.n_obs();
  const int batch = cfg.batch;

  for (int k = 0; k < chain.d; ++k) {
    PinballNet& net = chain.nets[k];
    ad::Graph g;
    Mat tau_col = Mat::Zero(batch, 1), om_col = Mat::Zero(batch, 1), target = Mat::Zero(batch, 1);
    ad::NodeId tau_in = g.input("tau", batch, 1);
    g.bind(tau_in, &tau_col);
    ad::NodeId om_in = g.input("one_minus_tau", batch, 1);
    g.bind(om_in, &om_col);
    ad::NodeId target_in = g.input("target", batch, 1);
    g.bind(target_in, &target);

    Mat cond = Mat::Zero(batch, chain.cond_dim);
    Mat prev = Mat::Zero(batch, std::max(k, 1));
    Mat stacked = Mat::Zero(batch * n, sim.x_dim());
    std::vector<Mat> steps;
    ad::NodeId cond_node = -1;
    ad::NodeId batch_mean = -1;
    if (features == ChainFeatures::Learned) {
      ad::NodeId stacked_in = g.input("x.stacked", batch * n, sim.x_dim());
      g.bind(stacked_in, &stacked);
      std::vector<ad::NodeId> step_ids;
      if (chain.fmap.q2 > 0) {
        steps.assign(n, Mat::Zero(batch, sim.x_dim()));
        for (int t = 0; t < n; ++t) {
          ad::NodeId s = g.input("x.step" + std::to_string(t), batch, sim.x_dim());
          g.bind(s, &steps[t]);
          step_ids.push_back(s);
        }
      }
      FeatureNodes fn = feature_forward(g, chain.fmap, stacked_in, step_ids, n, "f");
      cond_node = fn.features;
      batch_mean = fn.batch_mean;
    } else {
      cond_node = g.input("cond", batch, chain.cond_dim);
      g.bind(cond_node, &cond);
    }

    ad::NodeId in_node = g.concat_cols(tau_in, cond_node);
    if (k > 0) {
      ad::NodeId prev_in = g.input("prev", batch, k);
      g.bind(prev_in, &prev);
      in_node = g.concat_cols(in_node, prev_in);
    }
    std::vector<const Dense*> layer_ptrs;
    for (const Dense& l : net.layers) layer_ptrs.push_back(&l);
    ad::NodeId pred = mlp_forward(g, layer_ptrs, in_node, "net");
    ad::NodeId diff = g.sub(target_in, pred);
    ad::NodeId loss = g.scale(
        g.mean(g.add(g.mul(tau_in, g.relu(diff)), g.mul(om_in, g.relu(g.scale(diff, -1.0))))),
        2.0);

    std::vector<ParamRef> refs;
    auto collect = [&](const std::string& name, Mat& value, bool) {
      refs.push_back({name, &value, &g.node(g.find(name)).grad});
    };
    for (std::size_t i = 0; i < net.layers.size(); ++i) {
      collect("net." + std::to_string(i) + ".w", net.layers[i].w, false);
      collect("net." + std::to_string(i) + ".b", net.layers[i].b, false);
    }
    if (features == ChainFeatures::Learned) visit_params(chain.fmap, "f", collect);
    Adam opt(std::move(refs), AdamConfig{cfg.lr0});

    for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
      opt.lr() = lr_schedule(cfg.lr0, cfg.lr_decay, epoch);
      for (int it = 0; it < cfg.iters_per_epoch; ++it) {
        TripleBatch data = sim.simulate(batch, data_rng);
        for (int i = 0; i < batch; ++i) {
          tau_col(i, 0) = tau_rng.uniform(0.0, 1.0);
          om_col(i, 0) = 1.0 - tau_col(i, 0);
          target(i, 0) = data.theta(i, k);
        }
        Mat cond_values;
        if (features == ChainFeatures::Learned) {
          for (int i = 0; i < batch; ++i)
            for (int c = 0; c < n; ++c) stacked.row(i * n + c) = data.xs[i].col(c).transpose();
          if (chain.fmap.q2 > 0)
            for (int t = 0; t < n; ++t)
              for (int i = 0; i < batch; ++i) steps[t].row(i) = data.xs[i].col(t).transpose();
          if (k > 0) cond_values = feature_values_batch(chain.fmap, data.xs);
        } else {
          for (int i = 0; i < batch; ++i) cond.row(i) = manual_moments(data.xs[i]).transpose();
          cond_values = cond;
        }
        for (int j = 0; j < k; ++j) {
          Mat in_j(batch, 1 + chain.cond_dim + j);
          for (int i = 0; i < batch; ++i) in_j(i, 0) = prev_rng.uniform(0.0, 1.0);
          in_j.block(0, 1, batch, chain.cond_dim) = cond_values;
          if (j > 0) in_j.block(0, 1 + chain.cond_dim, batch, j) = prev.leftCols(j);
          prev.col(j) = pinball_net_eval_batch(chain.nets[j], in_j).col(0);
        }
        g.forward();
        g.backward(loss);
        opt.step();
        if (batch_mean >= 0) chain.fmap.update_running_mean(g.value(batch_mean));
      }
    }
  }
  if (features == ChainFeatures::Learned) chain.fmap.training = false;
  return chain;
}

Mat sample_chain(const std::vector<std::function<double(double, const Vec&)>>& nets,
                 const Vec& base_cond, int count, Rng& rng) {
  if (nets.empty()) throw std::invalid_argument("chain needs at least one net");
  if (count < 1) throw std::invalid_argument("sample count must be >= 1");
  const int d = static_cast<int>(nets.size());
  Mat out(count, d);
  Vec cond(base_cond.size() + d);
  for (int i = 0; i < count; ++i) {
    cond.head(base_cond.size()) = base_cond;
    for (int k = 0; k < d; ++k) {
      const double tau = rng.uniform(0.0, 1.0);
      const double value = nets[k](tau, cond.head(base_cond.size() + k));
      out(i, k) = value;
      cond(base_cond.size() + k) = value;
    }
  }
  return out;
}

Mat sample_autoregressive(const AutoRegChain& chain, const Mat& x, int count, Rng& rng) {
  Vec base = chain.features == ChainFeatures::Learned
                 ? Vec(feature_values(chain.fmap, x).row(0).transpose())
                 : manual_moments(x);
  std::vector<std::function<double(double, const Vec&)>> fns;
  for (int k = 0; k < chain.d; ++k)
    fns.push_back([&chain, k](double tau, const Vec& cond) {
      return pinball_net_eval(chain.nets[k], tau, cond);
    });
  return sample_chain(fns, base, count, rng);
}

}  // namespace qbayes
