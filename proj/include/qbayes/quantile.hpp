#pragma once

#include <array>
#include <vector>

#include <qbayes/nets.hpp>
#include <qbayes/rng.hpp>

namespace qbayes {

struct PosteriorSample {
  Mat theta;  // N x d pushed-forward draws
  Mat u;      // N x d source draws that produced them
  double tau_cap = 1.0;
};

PosteriorSample sample_posterior(const PotentialModel& model, const Mat& x, int count,
                                 double tau_cap, Rng& rng);

// Convex hull of 2-D points (monotone chain). Returns counter-clockwise
// vertices with collinear points dropped; sets *degenerate when fewer than
// three distinct non-collinear points exist.
std::vector<std::array<double, 2>> convex_hull_2d(const std::vector<std::array<double, 2>>& pts,
                                                  bool* degenerate = nullptr);

struct PairHull {
  int ax0 = 0, ax1 = 1;
  std::vector<std::array<double, 2>> vertices;
  bool degenerate = false;
};

struct CredibleSet {
  double tau = 0;
  Mat cloud;     // pushes of source draws capped at tau
  Mat boundary;  // pushes of the shared directions scaled to radius tau
  std::vector<PairHull> hulls;
};

// Level-tau credible region estimate: the interior cloud comes from source
// draws with radius capped at tau, while the polygon per coordinate pair is
// the hull of points pushed from radius exactly tau along the supplied
// directions. Sharing one direction set across levels makes the hulls nest.
CredibleSet credible_set(const PotentialModel& model, const Mat& x, double tau, int cloud_count,
                         const Mat& directions, Rng& rng);

struct RankResult {
  Vec u_star;
  double depth = 0;  // 1 - |u_star|
  double objective = 0;
  bool converged = false;
  int iterations = 0;
};

// Vector rank of theta: maximize theta . u - psi(u, x) over the unit ball by
// projected gradient ascent with backtracking, started from the best of
// n_init source draws. The objective never decreases across iterations.
RankResult vector_rank(const PotentialModel& model, const Vec& theta, const Mat& x, Rng& rng,
                       int max_iters = 200, double tol = 1e-7, int n_init = 256);

// Indices of the rows of thetas sorted by decreasing depth (stable).
std::vector<int> mk_depth_order(const PotentialModel& model, const Mat& thetas, const Mat& x,
                                Rng& rng);

}  // namespace qbayes
