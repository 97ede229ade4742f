#pragma once

#include <functional>
#include <string>
#include <vector>

#include <qbayes/graph.hpp>
#include <qbayes/rng.hpp>
#include <qbayes/tensor.hpp>

namespace qbayes {

struct Dense {
  Mat w;  // in x out
  Mat b;  // 1 x out
};

Dense make_dense(int in, int out, Rng& rng);

// Input-convex network: hidden pre-activations mix a nonnegative path from the
// previous layer with a fresh affine path from the input; CELU keeps the
// composition convex and the output layer is linear.
struct Icnn {
  int in_dim = 0, out_dim = 0, width = 0, hidden_layers = 0;
  std::vector<Mat> wu;    // hidden_layers+1 input-path weights
  std::vector<Mat> wz;    // hidden_layers nonnegative skip weights
  std::vector<Mat> bias;  // hidden_layers+1 row biases
};

Icnn make_icnn(int in_dim, int out_dim, int width, int hidden_layers, Rng& rng);

struct DeepSetNet {
  int d_x = 0, out_dim = 0, width = 0, pool_dim = 0;
  Dense enc1, enc2;    // per-observation encoder
  Dense post1, post2;  // applied after sum pooling
};

DeepSetNet make_deepset(int d_x, int out_dim, int width, int pool_dim, Rng& rng);

struct LstmNet {
  int d_x = 0, hidden = 0;
  Mat wi, ui, bi;
  Mat wf, uf, bf;
  Mat wg, ug, bg;
  Mat wo, uo, bo;
};

LstmNet make_lstm(int d_x, int hidden, Rng& rng);

// Summary network f = [deepset, lstm] with mean-zero centering: batch mean in
// training mode (tracked into running_mean with momentum), frozen running mean
// in inference mode.
struct FeatureMap {
  int d_x = 0, q1 = 0, q2 = 0;
  DeepSetNet ds;
  LstmNet lstm;
  Mat running_mean;  // 1 x q
  double momentum = 0.9;
  bool training = false;

  int q() const { return q1 + q2; }
  void update_running_mean(const Mat& batch_mean);
};

FeatureMap make_feature_map(int d_x, int q1, int q2, int width, int pool_dim, Rng& rng);

// psi(u, x) = phi(u) + b(u) . f(x); the posterior sampler is u -> grad_u psi.
struct PotentialModel {
  int d = 0, d_x = 0, n_obs = 0;
  std::string simulator_kind;
  Icnn phi;   // d -> 1
  Icnn bnet;  // d -> q
  FeatureMap fmap;

  int q() const { return fmap.q(); }
};

PotentialModel make_potential_model(int d, int d_x, int n_obs, int q1, int q2, int icnn_width,
                                    int icnn_layers, int ds_width, int ds_pool_dim,
                                    const std::string& simulator_kind, Rng& rng);

// Canonical parameter traversal; the optimizer, projection step, and
// serializer all rely on this declared order. nonneg marks tensors that are
// clamped elementwise >= 0 after each optimizer step.
using ParamVisitor = std::function<void(const std::string& name, Mat& value, bool nonneg)>;

void visit_params(Icnn& net, const std::string& prefix, const ParamVisitor& fn);
void visit_params(DeepSetNet& net, const std::string& prefix, const ParamVisitor& fn);
void visit_params(LstmNet& net, const std::string& prefix, const ParamVisitor& fn);
void visit_params(FeatureMap& f, const std::string& prefix, const ParamVisitor& fn);
void visit_params(PotentialModel& m, const ParamVisitor& fn);

// Graph builders. Each registers its weights as named params (prefix + field)
// bound to the model's storage, so one graph can be re-run as training updates
// the weights in place.
ad::NodeId mlp_forward(ad::Graph& g, const std::vector<const Dense*>& layers, ad::NodeId in,
                       const std::string& prefix);
ad::NodeId icnn_forward(ad::Graph& g, const Icnn& net, ad::NodeId u, const std::string& prefix);
ad::NodeId deepset_forward(ad::Graph& g, const DeepSetNet& net, ad::NodeId stacked, int n,
                           const std::string& prefix);
ad::NodeId lstm_forward(ad::Graph& g, const LstmNet& net, const std::vector<ad::NodeId>& steps,
                        const std::string& prefix);

struct FeatureNodes {
  ad::NodeId features = -1;    // B x q centered output
  ad::NodeId batch_mean = -1;  // 1 x q raw batch mean (training mode only)
};

// stacked: (B*n) x d_x rows grouped per sample for the deepset branch;
// steps: n nodes of B x d_x for the lstm branch (may be empty when q2 == 0).
FeatureNodes feature_forward(ad::Graph& g, const FeatureMap& f, ad::NodeId stacked,
                             const std::vector<ad::NodeId>& steps, int n,
                             const std::string& prefix);

Mat feature_values(const FeatureMap& f, const Mat& x);  // 1 x q, inference path

double potential_eval(const PotentialModel& m, const Vec& u, const Mat& x);
Vec potential_eval_batch(const PotentialModel& m, const Mat& x, const Mat& U);
Vec potential_grad_u(const PotentialModel& m, const Vec& u, const Mat& x);

// Gradient map applied to a whole batch of source points at one conditioning
// x: row i of the result is grad_u psi(U.row(i), x).
Mat push_through(const PotentialModel& m, const Mat& x, const Mat& U);

void save_model(const PotentialModel& m, const std::string& path);
PotentialModel load_model(const std::string& path);

}  // namespace qbayes
