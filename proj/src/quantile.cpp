#include <qbayes/quantile.hpp>

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>

#include <qbayes/simulators.hpp>

namespace qbayes {

PosteriorSample sample_posterior(const PotentialModel& model, const Mat& x, int count,
                                 double tau_cap, Rng& rng) {
  if (count < 1) throw std::invalid_argument("posterior sample count must be >= 1");
  PosteriorSample out;
  out.tau_cap = tau_cap;
  out.u = sample_source(count, model.d, tau_cap, rng);
  out.theta = push_through(model, x, out.u);
  return out;
}

std::vector<std::array<double, 2>> convex_hull_2d(const std::vector<std::array<double, 2>>& pts,
                                                  bool* degenerate) {
  auto cross = [](const std::array<double, 2>& o, const std::array<double, 2>& a,
                  const std::array<double, 2>& b) {
    return (a[0] - o[0]) * (b[1] - o[1]) - (a[1] - o[1]) * (b[0] - o[0]);
  };
  std::vector<std::array<double, 2>> p = pts;
  std::sort(p.begin(), p.end());
  p.erase(std::unique(p.begin(), p.end()), p.end());
  if (degenerate) *degenerate = false;
  if (p.size() < 3) {
    if (degenerate) *degenerate = true;
    return p;
  }
  std::vector<std::array<double, 2>> hull(2 * p.size());
  std::size_t k = 0;
  for (std::size_t i = 0; i < p.size(); ++i) {  // lower chain
    while (k >= 2 && cross(hull[k - 2], hull[k - 1], p[i]) <= 0.0) --k;
    hull[k++] = p[i];
  }
  const std::size_t lower = k + 1;
  for (std::size_t i = p.size() - 1; i-- > 0;) {  // upper chain
    while (k >= lower && cross(hull[k - 2], hull[k - 1], p[i]) <= 0.0) --k;
    hull[k++] = p[i];
  }
  hull.resize(k - 1);  // last point repeats the first
  if (hull.size() < 3 && degenerate) *degenerate = true;
  return hull;
}

CredibleSet credible_set(const PotentialModel& model, const Mat& x, double tau, int cloud_count,
                         const Mat& directions, Rng& rng) {
  if (tau <= 0.0 || tau > 1.0)
    throw std::invalid_argument("credible level must lie in (0, 1], got " + std::to_string(tau));
  if (directions.cols() != model.d)
    throw std::invalid_argument("directions must have the model's dimension");
  if (directions.rows() < 3) throw std::invalid_argument("need at least 3 directions");
  for (int i = 0; i < directions.rows(); ++i)
    if (std::abs(directions.row(i).norm() - 1.0) > 1e-9)
      throw std::invalid_argument("directions must be unit vectors");

  CredibleSet set;
  set.tau = tau;
  if (cloud_count > 0) {
    Mat u = sample_source(cloud_count, model.d, tau, rng);
    set.cloud = push_through(model, x, u);
  }
  set.boundary = push_through(model, x, Mat(tau * directions));

  for (int a = 0; a < model.d; ++a)
    for (int b = a + 1; b < model.d; ++b) {
      std::vector<std::array<double, 2>> proj(set.boundary.rows());
      for (int i = 0; i < set.boundary.rows(); ++i)
        proj[i] = {set.boundary(i, a), set.boundary(i, b)};
      PairHull ph;
      ph.ax0 = a;
      ph.ax1 = b;
      ph.vertices = convex_hull_2d(proj, &ph.degenerate);
      set.hulls.push_back(std::move(ph));
    }
  return set;
}

RankResult vector_rank(const PotentialModel& model, const Vec& theta, const Mat& x, Rng& rng,
                       int max_iters, double tol, int n_init) {
  if (theta.size() != model.d) throw std::invalid_argument("theta has wrong dimension");
  if (n_init < 1) throw std::invalid_argument("need at least one starting draw");

  const Mat candidates = sample_source(n_init, model.d, 1.0, rng);
  const Vec psis = potential_eval_batch(model, x, candidates);
  int best = 0;
  double best_val = -std::numeric_limits<double>::infinity();
  for (int i = 0; i < n_init; ++i) {
    const double v = theta.dot(candidates.row(i).transpose()) - psis(i);
    if (v > best_val) {
      best_val = v;
      best = i;
    }
  }

  RankResult res;
  Vec u = candidates.row(best).transpose();
  double obj = best_val;
  double step = 0.1;
  auto objective = [&](const Vec& point) {
    return theta.dot(point) - potential_eval(model, point, x);
  };
  for (int it = 0; it < max_iters; ++it) {
    res.iterations = it + 1;
    const Vec grad = theta - potential_grad_u(model, u, x);
    bool accepted = false;
    while (step > 1e-12) {
      Vec trial = u + step * grad;
      const double norm = trial.norm();
      if (norm > 1.0) trial *= 1.0 / norm;
      const double trial_obj = objective(trial);
      if (trial_obj >= obj) {
        const double moved = (trial - u).norm();
        u = trial;
        obj = trial_obj;
        accepted = true;
        step = std::min(step * 1.5, 1.0);
        if (moved < tol) res.converged = true;
        break;
      }
      step *= 0.5;
    }
    if (!accepted) res.converged = true;  // no uphill direction at working precision
    if (res.converged) break;
  }
  res.u_star = u;
  res.depth = 1.0 - u.norm();
  res.objective = obj;
  return res;
}

std::vector<int> mk_depth_order(const PotentialModel& model, const Mat& thetas, const Mat& x,
                                Rng& rng) {
  const int count = static_cast<int>(thetas.rows());
  std::vector<double> depth(count);
  for (int i = 0; i < count; ++i)
    depth[i] = vector_rank(model, thetas.row(i).transpose(), x, rng).depth;
  std::vector<int> order(count);
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(),
                   [&](int a, int b) { return depth[a] > depth[b]; });
  return order;
}

}  // namespace qbayes
