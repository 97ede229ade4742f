#pragma once

// Reference implementations for the test suites. Everything here is written
// as plain scalar loops, independent of the graph engine and the library's
// vectorized code paths, so agreement between the two is meaningful evidence
// rather than the same code evaluated twice.

#include <algorithm>
#include <array>
#include <cmath>
#include <functional>
#include <limits>
#include <stdexcept>
#include <vector>

#include <qbayes/baselines.hpp>
#include <qbayes/nets.hpp>
#include <qbayes/rng.hpp>
#include <qbayes/simulators.hpp>
#include <qbayes/tensor.hpp>

namespace oracle {

using qbayes::Mat;
using qbayes::Vec;

inline double celu(double x) { return x >= 0.0 ? x : std::expm1(x); }

inline double sigmoid(double x) {
  if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

inline Vec dense(const qbayes::Dense& l, const Vec& in) {
  const int out_dim = static_cast<int>(l.w.cols());
  Vec out(out_dim);
  for (int o = 0; o < out_dim; ++o) {
    double acc = l.b(0, o);
    for (int i = 0; i < in.size(); ++i) acc += in(i) * l.w(i, o);
    out(o) = acc;
  }
  return out;
}

inline Vec icnn(const qbayes::Icnn& net, const Vec& u) {
  auto affine = [&](const Mat& w, const Mat& b, const Vec& in) {
    Vec out(w.cols());
    for (int o = 0; o < w.cols(); ++o) {
      double acc = b(0, o);
      for (int i = 0; i < in.size(); ++i) acc += in(i) * w(i, o);
      out(o) = acc;
    }
    return out;
  };
  Vec z = affine(net.wu[0], net.bias[0], u);
  for (int i = 0; i < z.size(); ++i) z(i) = celu(z(i));
  for (int k = 1; k <= net.hidden_layers; ++k) {
    Vec pre = affine(net.wz[k - 1], net.bias[k], z);
    const Vec skip = affine(net.wu[k], Mat::Zero(1, net.wu[k].cols()), u);
    for (int o = 0; o < pre.size(); ++o) {
      pre(o) += skip(o);
      if (k < net.hidden_layers) pre(o) = celu(pre(o));
    }
    z = pre;
  }
  return z;
}

// x holds one conditioning block, d_x rows by n observation columns; the sum
// pool runs in natural column order.
inline Vec deepset(const qbayes::DeepSetNet& net, const Mat& x) {
  Vec pooled = Vec::Zero(net.pool_dim);
  for (int c = 0; c < x.cols(); ++c) {
    Vec h = dense(net.enc1, x.col(c));
    for (int i = 0; i < h.size(); ++i) h(i) = celu(h(i));
    const Vec e = dense(net.enc2, h);
    for (int i = 0; i < e.size(); ++i) pooled(i) += e(i);
  }
  Vec p = dense(net.post1, pooled);
  for (int i = 0; i < p.size(); ++i) p(i) = celu(p(i));
  return dense(net.post2, p);
}

// Standard single-layer LSTM with h_0 = c_0 = 0, final hidden state returned.
inline Vec lstm(const qbayes::LstmNet& net, const Mat& x) {
  const int hdim = net.hidden;
  Vec h = Vec::Zero(hdim), c = Vec::Zero(hdim);
  for (int t = 0; t < x.cols(); ++t) {
    const Vec xt = x.col(t);
    auto gate = [&](const Mat& w, const Mat& u, const Mat& b, int o) {
      double acc = b(0, o);
      for (int i = 0; i < xt.size(); ++i) acc += xt(i) * w(i, o);
      for (int i = 0; i < hdim; ++i) acc += h(i) * u(i, o);
      return acc;
    };
    Vec cn(hdim), hn(hdim);
    for (int o = 0; o < hdim; ++o) {
      const double gi = sigmoid(gate(net.wi, net.ui, net.bi, o));
      const double gf = sigmoid(gate(net.wf, net.uf, net.bf, o));
      const double gg = std::tanh(gate(net.wg, net.ug, net.bg, o));
      const double go = sigmoid(gate(net.wo, net.uo, net.bo, o));
      cn(o) = gf * c(o) + gi * gg;
      hn(o) = go * std::tanh(cn(o));
    }
    c = cn;
    h = hn;
  }
  return h;
}

// Uncentered summary vector [deepset, lstm] for one conditioning block.
inline Vec feature_raw(const qbayes::FeatureMap& f, const Mat& x) {
  Vec out(f.q());
  int at = 0;
  if (f.q1 > 0) {
    const Vec d = deepset(f.ds, x);
    for (int i = 0; i < d.size(); ++i) out(at++) = d(i);
  }
  if (f.q2 > 0) {
    const Vec l = lstm(f.lstm, x);
    for (int i = 0; i < l.size(); ++i) out(at++) = l(i);
  }
  return out;
}

inline double psi(const qbayes::PotentialModel& m, const Vec& u, const Mat& x) {
  const Vec phi = icnn(m.phi, u);
  const Vec b = icnn(m.bnet, u);
  const Vec f = feature_raw(m.fmap, x);
  double acc = phi(0);
  for (int i = 0; i < b.size(); ++i) acc += b(i) * (f(i) - m.fmap.running_mean(0, i));
  return acc;
}

// Brute-force batch objective: per-row features centered by the batch mean in
// training mode or the stored running mean otherwise, then the double loop
// over score entries with ties resolved toward the lower column index.
inline double loss_brute(const qbayes::PotentialModel& m, const qbayes::TripleBatch& batch,
                         const Mat& u) {
  const int count = static_cast<int>(batch.theta.rows());
  const int q = m.q();
  std::vector<Vec> feats(count);
  for (int i = 0; i < count; ++i) feats[i] = feature_raw(m.fmap, batch.xs[i]);
  Vec center = Vec::Zero(q);
  if (m.fmap.training) {
    for (int i = 0; i < count; ++i)
      for (int j = 0; j < q; ++j) center(j) += feats[i](j) / count;
  } else {
    for (int j = 0; j < q; ++j) center(j) = m.fmap.running_mean(0, j);
  }

  std::vector<double> phi_u(count);
  std::vector<Vec> b_u(count);
  for (int j = 0; j < count; ++j) {
    phi_u[j] = icnn(m.phi, u.row(j).transpose())(0);
    b_u[j] = icnn(m.bnet, u.row(j).transpose());
  }

  double total = 0.0;
  for (int i = 0; i < count; ++i) {
    double best = -std::numeric_limits<double>::infinity();
    for (int j = 0; j < count; ++j) {
      double s = -phi_u[j];
      for (int k = 0; k < m.d; ++k) s += batch.theta(i, k) * u(j, k);
      for (int k = 0; k < q; ++k) s -= (feats[i](k) - center(k)) * b_u[j](k);
      if (s > best) best = s;
    }
    total += phi_u[i] + best;
  }
  return total / count;
}

// Central finite difference of f with respect to one scalar slot.
template <typename F>
double fd_central(const F& f, double& slot, double h) {
  const double saved = slot;
  slot = saved + h;
  const double up = f();
  slot = saved - h;
  const double down = f();
  slot = saved;
  return (up - down) / (2.0 * h);
}

// Relative gap with an absolute floor so near-zero derivatives compare sanely.
inline double rel_gap(double got, double want) {
  return std::abs(got - want) / std::max(1.0, std::abs(want));
}

// One Adam coordinate stepped by hand, bias correction included.
struct AdamScalar {
  double m = 0.0, v = 0.0;
  int t = 0;
  double beta1 = 0.9, beta2 = 0.999, eps = 1e-8;

  double step(double w, double g, double lr) {
    ++t;
    m = beta1 * m + (1.0 - beta1) * g;
    v = beta2 * v + (1.0 - beta2) * g * g;
    const double mhat = m / (1.0 - std::pow(beta1, t));
    const double vhat = v / (1.0 - std::pow(beta2, t));
    return w - lr * mhat / (std::sqrt(vhat) + eps);
  }
};

// Kolmogorov-Smirnov distance between a sample and the uniform law on [0, 1].
inline double ks_uniform(std::vector<double> v) {
  std::sort(v.begin(), v.end());
  const int n = static_cast<int>(v.size());
  double d = 0.0;
  for (int i = 0; i < n; ++i) {
    d = std::max(d, (i + 1.0) / n - v[i]);
    d = std::max(d, v[i] - static_cast<double>(i) / n);
  }
  return d;
}

inline double normal_cdf(double z) { return 0.5 * std::erfc(-z / std::sqrt(2.0)); }

// Regularized lower incomplete gamma P(a, x): series for x < a + 1, continued
// fraction otherwise.
inline double gamma_p(double a, double x) {
  if (x < 0.0 || a <= 0.0) throw std::invalid_argument("gamma_p domain");
  if (x == 0.0) return 0.0;
  const double lg = std::lgamma(a);
  if (x < a + 1.0) {
    double ap = a, sum = 1.0 / a, del = sum;
    for (int i = 0; i < 500; ++i) {
      ap += 1.0;
      del *= x / ap;
      sum += del;
      if (std::abs(del) < std::abs(sum) * 1e-15) break;
    }
    return sum * std::exp(-x + a * std::log(x) - lg);
  }
  const double tiny = 1e-300;
  double b = x + 1.0 - a, c = 1.0 / tiny, d = 1.0 / b, h = d;
  for (int i = 1; i <= 500; ++i) {
    const double an = -i * (i - a);
    b += 2.0;
    d = an * d + b;
    if (std::abs(d) < tiny) d = tiny;
    c = b + an / c;
    if (std::abs(c) < tiny) c = tiny;
    d = 1.0 / d;
    const double del = d * c;
    h *= del;
    if (std::abs(del - 1.0) < 1e-15) break;
  }
  return 1.0 - std::exp(-x + a * std::log(x) - lg) * h;
}

inline double chi2_cdf(double x, double dof) { return gamma_p(dof / 2.0, x / 2.0); }

// Even-odd ray cast; boundary handling is loose, so tests using it stay away
// from polygon edges.
inline bool point_in_poly_raycast(double px, double py,
                                  const std::vector<std::array<double, 2>>& poly) {
  bool inside = false;
  const std::size_t n = poly.size();
  for (std::size_t i = 0, j = n - 1; i < n; j = i++) {
    const double xi = poly[i][0], yi = poly[i][1];
    const double xj = poly[j][0], yj = poly[j][1];
    if ((yi > py) != (yj > py) && px < (xj - xi) * (py - yi) / (yj - yi) + xi) inside = !inside;
  }
  return inside;
}

inline double shoelace_signed(const std::vector<std::array<double, 2>>& poly) {
  double twice = 0.0;
  for (std::size_t i = 0; i < poly.size(); ++i) {
    const auto& p = poly[i];
    const auto& q = poly[(i + 1) % poly.size()];
    twice += p[0] * q[1] - q[0] * p[1];
  }
  return 0.5 * twice;
}

// Unbiased squared-MMD double loop at a fixed bandwidth.
inline double mmd_direct(const Mat& a, const Mat& b, double h) {
  const int n = static_cast<int>(a.rows()), m = static_cast<int>(b.rows());
  auto k = [&](const auto& x, const auto& y) {
    double d2 = 0.0;
    for (int c = 0; c < x.size(); ++c) d2 += (x(c) - y(c)) * (x(c) - y(c));
    return std::exp(-d2 / (2.0 * h * h));
  };
  double aa = 0.0, bb = 0.0, ab = 0.0;
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < n; ++j)
      if (i != j) aa += k(a.row(i), a.row(j));
  for (int i = 0; i < m; ++i)
    for (int j = 0; j < m; ++j)
      if (i != j) bb += k(b.row(i), b.row(j));
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < m; ++j) ab += k(a.row(i), b.row(j));
  return aa / (static_cast<double>(n) * (n - 1)) + bb / (static_cast<double>(m) * (m - 1)) -
         2.0 * ab / (static_cast<double>(n) * m);
}

// Mirror of the four-agent pricing recursion, consuming the generator in the
// same draw order as the library path.
inline Mat bh_series(const Vec& theta, double beta, double r, double sigma, int horizon,
                     int burn_in, qbayes::Rng& rng) {
  const double g[4] = {0.0, theta(0), theta(2), 1.01};
  const double b[4] = {0.0, theta(1), theta(3), 0.0};
  const int total = burn_in + horizon;
  std::vector<double> x(3 + total, 0.0);
  for (int t = 2; t < 2 + total; ++t) {
    double fit[4];
    double fmax = -std::numeric_limits<double>::infinity();
    for (int h = 0; h < 4; ++h) {
      fit[h] = (x[t] - r * x[t - 1]) * (g[h] * x[t - 2] + b[h] - r * x[t - 1]);
      fmax = std::max(fmax, beta * fit[h]);
    }
    double wsum = 0.0, forecast = 0.0;
    for (int h = 0; h < 4; ++h) {
      const double w = std::exp(beta * fit[h] - fmax);
      wsum += w;
      forecast += w * (g[h] * x[t] + b[h]);
    }
    x[t + 1] = forecast / (wsum * r) + rng.normal(0.0, sigma);
  }
  Mat out(1, horizon);
  for (int j = 0; j < horizon; ++j) out(0, j) = x[3 + burn_in + j];
  return out;
}

}  // namespace oracle
