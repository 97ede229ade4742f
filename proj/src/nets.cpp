#include <qbayes/nets.hpp>

#include <cmath>
#include <cstdint>
#include <fstream>
#include <stdexcept>

#include <json.hpp>

namespace qbayes {

namespace {

Mat uniform_mat(int rows, int cols, double bound, Rng& rng) {
  Mat m(rows, cols);
  for (int r = 0; r < rows; ++r)
    for (int c = 0; c < cols; ++c) m(r, c) = rng.uniform(-bound, bound);
  return m;
}

ad::NodeId pnode(ad::Graph& g, const std::string& name, const Mat& storage) {
  ad::NodeId id = g.param(name, static_cast<int>(storage.rows()), static_cast<int>(storage.cols()));
  g.bind(id, &storage);
  return id;
}

}  // namespace

Dense make_dense(int in, int out, Rng& rng) {
  const double bound = 1.0 / std::sqrt(static_cast<double>(in));
  return Dense{uniform_mat(in, out, bound, rng), uniform_mat(1, out, bound, rng)};
}

Icnn make_icnn(int in_dim, int out_dim, int width, int hidden_layers, Rng& rng) {
  if (in_dim < 1 || out_dim < 1 || width < 1 || hidden_layers < 1)
    throw std::invalid_argument("icnn dimensions must be positive");
  Icnn net;
  net.in_dim = in_dim;
  net.out_dim = out_dim;
  net.width = width;
  net.hidden_layers = hidden_layers;
  const double ub = 1.0 / std::sqrt(static_cast<double>(in_dim));
  const double zb = 1.0 / std::sqrt(static_cast<double>(width));
  const double bb = 1.0 / std::sqrt(static_cast<double>(in_dim + width));
  for (int k = 0; k <= hidden_layers; ++k) {
    const int out_k = k < hidden_layers ? width : out_dim;
    net.wu.push_back(uniform_mat(in_dim, out_k, ub, rng));
    if (k >= 1) net.wz.push_back(uniform_mat(width, out_k, zb, rng).cwiseAbs().cwiseMax(0.0));
    net.bias.push_back(uniform_mat(1, out_k, k == 0 ? ub : bb, rng));
  }
  return net;
}

DeepSetNet make_deepset(int d_x, int out_dim, int width, int pool_dim, Rng& rng) {
  DeepSetNet net;
  net.d_x = d_x;
  net.out_dim = out_dim;
  net.width = width;
  net.pool_dim = pool_dim;
  net.enc1 = make_dense(d_x, width, rng);
  net.enc2 = make_dense(width, pool_dim, rng);
  net.post1 = make_dense(pool_dim, width, rng);
  net.post2 = make_dense(width, out_dim, rng);
  return net;
}

LstmNet make_lstm(int d_x, int hidden, Rng& rng) {
  LstmNet net;
  net.d_x = d_x;
  net.hidden = hidden;
  const double wb = 1.0 / std::sqrt(static_cast<double>(d_x));
  const double ub = 1.0 / std::sqrt(static_cast<double>(hidden));
  const double bb = 1.0 / std::sqrt(static_cast<double>(d_x + hidden));
  auto gate = [&](Mat& w, Mat& u, Mat& b) {
    w = uniform_mat(d_x, hidden, wb, rng);
    u = uniform_mat(hidden, hidden, ub, rng);
    b = uniform_mat(1, hidden, bb, rng);
  };
  gate(net.wi, net.ui, net.bi);
  gate(net.wf, net.uf, net.bf);
  gate(net.wg, net.ug, net.bg);
  gate(net.wo, net.uo, net.bo);
  return net;
}

void FeatureMap::update_running_mean(const Mat& batch_mean) {
  running_mean = momentum * running_mean + (1.0 - momentum) * batch_mean;
}

FeatureMap make_feature_map(int d_x, int q1, int q2, int width, int pool_dim, Rng& rng) {
  if (q1 < 0 || q2 < 0 || q1 + q2 < 1)
    throw std::invalid_argument("feature map needs q1 + q2 >= 1 with q1, q2 >= 0");
  FeatureMap f;
  f.d_x = d_x;
  f.q1 = q1;
  f.q2 = q2;
  if (q1 > 0) f.ds = make_deepset(d_x, q1, width, pool_dim, rng);
  if (q2 > 0) f.lstm = make_lstm(d_x, q2, rng);
  f.running_mean = Mat::Zero(1, q1 + q2);
  return f;
}

PotentialModel make_potential_model(int d, int d_x, int n_obs, int q1, int q2, int icnn_width,
                                    int icnn_layers, int ds_width, int ds_pool_dim,
                                    const std::string& simulator_kind, Rng& rng) {
  PotentialModel m;
  m.d = d;
  m.d_x = d_x;
  m.n_obs = n_obs;
  m.simulator_kind = simulator_kind;
  m.phi = make_icnn(d, 1, icnn_width, icnn_layers, rng);
  m.bnet = make_icnn(d, q1 + q2, icnn_width, icnn_layers, rng);
  m.fmap = make_feature_map(d_x, q1, q2, ds_width, ds_pool_dim, rng);
  return m;
}

void visit_params(Icnn& net, const std::string& prefix, const ParamVisitor& fn) {
  for (int k = 0; k <= net.hidden_layers; ++k) {
    fn(prefix + ".wu" + std::to_string(k), net.wu[k], false);
    if (k >= 1) fn(prefix + ".wz" + std::to_string(k), net.wz[k - 1], true);
    fn(prefix + ".b" + std::to_string(k), net.bias[k], false);
  }
}

void visit_params(DeepSetNet& net, const std::string& prefix, const ParamVisitor& fn) {
  fn(prefix + ".enc1.w", net.enc1.w, false);
  fn(prefix + ".enc1.b", net.enc1.b, false);
  fn(prefix + ".enc2.w", net.enc2.w, false);
  fn(prefix + ".enc2.b", net.enc2.b, false);
  fn(prefix + ".post1.w", net.post1.w, false);
  fn(prefix + ".post1.b", net.post1.b, false);
  fn(prefix + ".post2.w", net.post2.w, false);
  fn(prefix + ".post2.b", net.post2.b, false);
}

void visit_params(LstmNet& net, const std::string& prefix, const ParamVisitor& fn) {
  fn(prefix + ".wi", net.wi, false);
  fn(prefix + ".ui", net.ui, false);
  fn(prefix + ".bi", net.bi, false);
  fn(prefix + ".wf", net.wf, false);
  fn(prefix + ".uf", net.uf, false);
  fn(prefix + ".bf", net.bf, false);
  fn(prefix + ".wg", net.wg, false);
  fn(prefix + ".ug", net.ug, false);
  fn(prefix + ".bg", net.bg, false);
  fn(prefix + ".wo", net.wo, false);
  fn(prefix + ".uo", net.uo, false);
  fn(prefix + ".bo", net.bo, false);
}

void visit_params(FeatureMap& f, const std::string& prefix, const ParamVisitor& fn) {
  if (f.q1 > 0) visit_params(f.ds, prefix + ".ds", fn);
  if (f.q2 > 0) visit_params(f.lstm, prefix + ".lstm", fn);
}

void visit_params(PotentialModel& m, const ParamVisitor& fn) {
  visit_params(m.phi, "phi", fn);
  visit_params(m.bnet, "b", fn);
  visit_params(m.fmap, "f", fn);
}

ad::NodeId mlp_forward(ad::Graph& g, const std::vector<const Dense*>& layers, ad::NodeId in,
                       const std::string& prefix) {
  ad::NodeId z = in;
  for (std::size_t i = 0; i < layers.size(); ++i) {
    const std::string tag = prefix + "." + std::to_string(i);
    z = g.add_rowvec(g.matmul(z, pnode(g, tag + ".w", layers[i]->w)),
                     pnode(g, tag + ".b", layers[i]->b));
    if (i + 1 < layers.size()) z = g.celu(z);
  }
  return z;
}

ad::NodeId icnn_forward(ad::Graph& g, const Icnn& net, ad::NodeId u, const std::string& prefix) {
  auto name = [&](const char* base, int k) { return prefix + "." + base + std::to_string(k); };
  ad::NodeId z = g.celu(g.add_rowvec(g.matmul(u, pnode(g, name("wu", 0), net.wu[0])),
                                     pnode(g, name("b", 0), net.bias[0])));
  for (int k = 1; k <= net.hidden_layers; ++k) {
    ad::NodeId pre = g.add_rowvec(g.add(g.matmul(z, pnode(g, name("wz", k), net.wz[k - 1])),
                                        g.matmul(u, pnode(g, name("wu", k), net.wu[k]))),
                                  pnode(g, name("b", k), net.bias[k]));
    z = k < net.hidden_layers ? g.celu(pre) : pre;
  }
  return z;
}

ad::NodeId deepset_forward(ad::Graph& g, const DeepSetNet& net, ad::NodeId stacked, int n,
                           const std::string& prefix) {
  ad::NodeId e = g.celu(g.add_rowvec(g.matmul(stacked, pnode(g, prefix + ".enc1.w", net.enc1.w)),
                                     pnode(g, prefix + ".enc1.b", net.enc1.b)));
  ad::NodeId enc = g.add_rowvec(g.matmul(e, pnode(g, prefix + ".enc2.w", net.enc2.w)),
                                pnode(g, prefix + ".enc2.b", net.enc2.b));
  ad::NodeId pooled = g.group_row_sum(enc, n);
  ad::NodeId p = g.celu(g.add_rowvec(g.matmul(pooled, pnode(g, prefix + ".post1.w", net.post1.w)),
                                     pnode(g, prefix + ".post1.b", net.post1.b)));
  return g.add_rowvec(g.matmul(p, pnode(g, prefix + ".post2.w", net.post2.w)),
                      pnode(g, prefix + ".post2.b", net.post2.b));
}

ad::NodeId lstm_forward(ad::Graph& g, const LstmNet& net, const std::vector<ad::NodeId>& steps,
                        const std::string& prefix) {
  if (steps.empty()) throw std::invalid_argument("lstm needs at least one step");
  ad::NodeId wi = pnode(g, prefix + ".wi", net.wi), ui = pnode(g, prefix + ".ui", net.ui),
             bi = pnode(g, prefix + ".bi", net.bi);
  ad::NodeId wf = pnode(g, prefix + ".wf", net.wf), uf = pnode(g, prefix + ".uf", net.uf),
             bf = pnode(g, prefix + ".bf", net.bf);
  ad::NodeId wg = pnode(g, prefix + ".wg", net.wg), ug = pnode(g, prefix + ".ug", net.ug),
             bg = pnode(g, prefix + ".bg", net.bg);
  ad::NodeId wo = pnode(g, prefix + ".wo", net.wo), uo = pnode(g, prefix + ".uo", net.uo),
             bo = pnode(g, prefix + ".bo", net.bo);
  ad::NodeId h = -1, c = -1;
  for (std::size_t t = 0; t < steps.size(); ++t) {
    auto pre = [&](ad::NodeId w, ad::NodeId u, ad::NodeId b) {
      ad::NodeId xw = g.matmul(steps[t], w);
      return g.add_rowvec(t == 0 ? xw : g.add(xw, g.matmul(h, u)), b);
    };
    ad::NodeId gi = g.sigmoid(pre(wi, ui, bi));
    ad::NodeId gf = g.sigmoid(pre(wf, uf, bf));
    ad::NodeId gg = g.tanh(pre(wg, ug, bg));
    ad::NodeId go = g.sigmoid(pre(wo, uo, bo));
    c = t == 0 ? g.mul(gi, gg) : g.add(g.mul(gf, c), g.mul(gi, gg));
    h = g.mul(go, g.tanh(c));
  }
  return h;
}

FeatureNodes feature_forward(ad::Graph& g, const FeatureMap& f, ad::NodeId stacked,
                             const std::vector<ad::NodeId>& steps, int n,
                             const std::string& prefix) {
  ad::NodeId raw = -1;
  if (f.q1 > 0) raw = deepset_forward(g, f.ds, stacked, n, prefix + ".ds");
  if (f.q2 > 0) {
    ad::NodeId l = lstm_forward(g, f.lstm, steps, prefix + ".lstm");
    raw = raw >= 0 ? g.concat_cols(raw, l) : l;
  }
  FeatureNodes out;
  if (f.training) {
    out.batch_mean = g.col_mean(raw);
    out.features = g.add_rowvec(raw, g.scale(out.batch_mean, -1.0));
  } else {
    ad::NodeId rm = g.input(prefix + ".rm", 1, f.q());
    g.bind(rm, &f.running_mean);
    out.features = g.add_rowvec(raw, g.scale(rm, -1.0));
  }
  return out;
}

namespace {

struct XBinding {
  Mat stacked;             // n x d_x
  std::vector<Mat> steps;  // n of 1 x d_x
};

// Lay one conditioning block x (d_x rows, n observation columns) out as the
// two shapes the feature branches consume, for a batch of size 1.
XBinding layout_single_x(const FeatureMap& f, const Mat& x) {
  if (x.rows() != f.d_x)
    throw std::invalid_argument("x has " + std::to_string(x.rows()) + " rows, model expects " +
                                std::to_string(f.d_x));
  if (x.cols() < 1) throw std::invalid_argument("x needs at least one observation column");
  XBinding bind;
  bind.stacked = x.transpose();
  if (f.q2 > 0) {
    bind.steps.reserve(x.cols());
    for (int t = 0; t < x.cols(); ++t) bind.steps.push_back(x.col(t).transpose());
  }
  return bind;
}

struct PsiGraph {
  ad::Graph g;
  ad::NodeId u_in = -1;
  ad::NodeId psi = -1;
  XBinding xb;
  Mat u_storage;
};

// psi over a batch of u rows at a single conditioning x, inference centering.
void build_psi(PsiGraph& pg, const PotentialModel& m, const Mat& x, const Mat& u, bool needs_grad) {
  const bool saved = m.fmap.training;
  const_cast<FeatureMap&>(m.fmap).training = false;
  pg.xb = layout_single_x(m.fmap, x);
  pg.u_storage = u;
  ad::Graph& g = pg.g;
  ad::NodeId stacked = g.input("x.stacked", static_cast<int>(pg.xb.stacked.rows()),
                               static_cast<int>(pg.xb.stacked.cols()));
  g.bind(stacked, &pg.xb.stacked);
  std::vector<ad::NodeId> steps;
  for (std::size_t t = 0; t < pg.xb.steps.size(); ++t) {
    ad::NodeId s = g.input("x.step" + std::to_string(t), 1, m.fmap.d_x);
    g.bind(s, &pg.xb.steps[t]);
    steps.push_back(s);
  }
  FeatureNodes fn = feature_forward(g, m.fmap, stacked, steps, static_cast<int>(x.cols()), "f");
  pg.u_in = g.input("u", static_cast<int>(u.rows()), static_cast<int>(u.cols()), needs_grad);
  g.bind(pg.u_in, &pg.u_storage);
  ad::NodeId phi_out = icnn_forward(g, m.phi, pg.u_in, "phi");
  ad::NodeId b_out = icnn_forward(g, m.bnet, pg.u_in, "b");
  pg.psi = g.add(phi_out, g.matmul(b_out, g.transpose(fn.features)));
  const_cast<FeatureMap&>(m.fmap).training = saved;
}

void check_unit_ball(const Mat& u) {
  for (int r = 0; r < u.rows(); ++r)
    if (u.row(r).norm() > 1.0 + 1e-9)
      throw std::invalid_argument("u lies outside the closed unit ball (|u| = " +
                                  std::to_string(u.row(r).norm()) + ")");
}

}  // namespace

Mat feature_values(const FeatureMap& f, const Mat& x) {
  const bool saved = f.training;
  const_cast<FeatureMap&>(f).training = false;
  XBinding xb = layout_single_x(f, x);
  ad::Graph g;
  ad::NodeId stacked =
      g.input("x.stacked", static_cast<int>(xb.stacked.rows()), static_cast<int>(xb.stacked.cols()));
  g.bind(stacked, &xb.stacked);
  std::vector<ad::NodeId> steps;
  for (std::size_t t = 0; t < xb.steps.size(); ++t) {
    ad::NodeId s = g.input("x.step" + std::to_string(t), 1, f.d_x);
    g.bind(s, &xb.steps[t]);
    steps.push_back(s);
  }
  FeatureNodes fn = feature_forward(g, f, stacked, steps, static_cast<int>(x.cols()), "f");
  g.forward();
  Mat out = g.value(fn.features);
  const_cast<FeatureMap&>(f).training = saved;
  return out;
}

double potential_eval(const PotentialModel& m, const Vec& u, const Mat& x) {
  if (u.size() != m.d) throw std::invalid_argument("u has wrong dimension");
  Mat urow = u.transpose();
  check_unit_ball(urow);
  PsiGraph pg;
  build_psi(pg, m, x, urow, false);
  pg.g.forward();
  return pg.g.value(pg.psi)(0, 0);
}

Vec potential_eval_batch(const PotentialModel& m, const Mat& x, const Mat& U) {
  if (U.cols() != m.d) throw std::invalid_argument("U has wrong column count");
  check_unit_ball(U);
  PsiGraph pg;
  build_psi(pg, m, x, U, false);
  pg.g.forward();
  return pg.g.value(pg.psi).col(0);
}

Vec potential_grad_u(const PotentialModel& m, const Vec& u, const Mat& x) {
  if (u.size() != m.d) throw std::invalid_argument("u has wrong dimension");
  Mat urow = u.transpose();
  check_unit_ball(urow);
  PsiGraph pg;
  build_psi(pg, m, x, urow, true);
  pg.g.forward();
  pg.g.backward(pg.psi);
  return pg.g.grad(pg.u_in).row(0).transpose();
}

Mat push_through(const PotentialModel& m, const Mat& x, const Mat& U) {
  if (U.cols() != m.d) throw std::invalid_argument("U has wrong column count");
  check_unit_ball(U);
  PsiGraph pg;
  build_psi(pg, m, x, U, true);
  ad::NodeId total = pg.g.sum(pg.psi);
  pg.g.forward();
  pg.g.backward(total);
  return pg.g.grad(pg.u_in);
}

namespace {

void write_raw(std::ofstream& out, const Mat& m) {
  out.write(reinterpret_cast<const char*>(m.data()),
            static_cast<std::streamsize>(sizeof(double) * m.size()));
}

void read_raw(std::ifstream& in, Mat& m) {
  in.read(reinterpret_cast<char*>(m.data()), static_cast<std::streamsize>(sizeof(double) * m.size()));
  if (!in) throw std::runtime_error("model file truncated while reading tensors");
}

}  // namespace

void save_model(const PotentialModel& m, const std::string& path) {
  nlohmann::ordered_json meta;
  meta["format"] = 1;
  meta["kind"] = "potential";
  meta["d"] = m.d;
  meta["d_x"] = m.d_x;
  meta["n_obs"] = m.n_obs;
  meta["simulator_kind"] = m.simulator_kind;
  meta["icnn_width"] = m.phi.width;
  meta["icnn_layers"] = m.phi.hidden_layers;
  meta["q1"] = m.fmap.q1;
  meta["q2"] = m.fmap.q2;
  meta["ds_width"] = m.fmap.q1 > 0 ? m.fmap.ds.width : 0;
  meta["ds_pool"] = m.fmap.q1 > 0 ? m.fmap.ds.pool_dim : 0;
  meta["momentum"] = m.fmap.momentum;
  meta["training"] = m.fmap.training;
  std::int64_t elems = m.fmap.running_mean.size();
  visit_params(const_cast<PotentialModel&>(m),
               [&](const std::string&, Mat& v, bool) { elems += v.size(); });
  meta["param_elems"] = elems;
  const std::string header = meta.dump();

  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot open '" + path + "' for writing");
  out.write("QBPM", 4);
  const std::uint64_t hlen = header.size();
  out.write(reinterpret_cast<const char*>(&hlen), sizeof(hlen));
  out.write(header.data(), static_cast<std::streamsize>(header.size()));
  visit_params(const_cast<PotentialModel&>(m),
               [&](const std::string&, Mat& v, bool) { write_raw(out, v); });
  write_raw(out, const_cast<PotentialModel&>(m).fmap.running_mean);
  if (!out) throw std::runtime_error("write to '" + path + "' failed");
}

PotentialModel load_model(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open model file '" + path + "'");
  char magic[4];
  in.read(magic, 4);
  if (!in || std::string(magic, 4) != "QBPM")
    throw std::runtime_error("'" + path + "' is not a model file (bad magic)");
  std::uint64_t hlen = 0;
  in.read(reinterpret_cast<char*>(&hlen), sizeof(hlen));
  if (!in || hlen == 0 || hlen > (1u << 20))
    throw std::runtime_error("model file header length is corrupt");
  std::string header(hlen, '\0');
  in.read(header.data(), static_cast<std::streamsize>(hlen));
  if (!in) throw std::runtime_error("model file truncated in header");
  nlohmann::json meta;
  try {
    meta = nlohmann::json::parse(header);
  } catch (const nlohmann::json::exception& e) {
    throw std::runtime_error(std::string("model header is not valid json: ") + e.what());
  }
  for (const char* key : {"format", "d", "d_x", "n_obs", "simulator_kind", "icnn_width",
                          "icnn_layers", "q1", "q2", "ds_width", "ds_pool", "momentum",
                          "training", "param_elems"})
    if (!meta.contains(key))
      throw std::runtime_error(std::string("model header missing field '") + key + "'");
  if (meta["format"].get<int>() != 1)
    throw std::runtime_error("unsupported model format version " +
                             std::to_string(meta["format"].get<int>()));

  Rng rng(0);
  PotentialModel m = make_potential_model(
      meta["d"].get<int>(), meta["d_x"].get<int>(), meta["n_obs"].get<int>(),
      meta["q1"].get<int>(), meta["q2"].get<int>(), meta["icnn_width"].get<int>(),
      meta["icnn_layers"].get<int>(), std::max(1, meta["ds_width"].get<int>()),
      std::max(1, meta["ds_pool"].get<int>()), meta["simulator_kind"].get<std::string>(), rng);
  m.fmap.momentum = meta["momentum"].get<double>();
  m.fmap.training = meta["training"].get<bool>();

  std::int64_t elems = m.fmap.running_mean.size();
  visit_params(m, [&](const std::string&, Mat& v, bool) { elems += v.size(); });
  if (elems != meta["param_elems"].get<std::int64_t>())
    throw std::runtime_error("model parameter count mismatch: header says " +
                             std::to_string(meta["param_elems"].get<std::int64_t>()) +
                             ", architecture needs " + std::to_string(elems));

  visit_params(m, [&](const std::string&, Mat& v, bool) { read_raw(in, v); });
  read_raw(in, m.fmap.running_mean);
  return m;
}

}  // namespace qbayes
