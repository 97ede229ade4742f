#pragma once

#include <array>
#include <vector>

#include <qbayes/quantile.hpp>
#include <qbayes/rng.hpp>
#include <qbayes/tensor.hpp>

namespace qbayes {

struct MmdResult {
  double value = 0;       // unbiased squared-statistic estimate (can be negative)
  double bandwidth = 0;   // median pairwise distance of the pooled sample
  bool fallback = false;  // true when the median was zero and 1.0 was used
};

// Unbiased two-sample kernel statistic with the Gaussian kernel
// k(x, y) = exp(-|x - y|^2 / (2 h^2)), h = pooled median pairwise distance.
MmdResult mmd(const Mat& a, const Mat& b);
double mmd_with_bandwidth(const Mat& a, const Mat& b, double bandwidth);
double median_pair_distance(const Mat& pooled);

// q-quantile of the statistic under label permutations of the pooled sample,
// with the bandwidth held at the pooled median.
double mmd_permutation_quantile(const Mat& a, const Mat& b, int n_perm, double q, Rng& rng);

// Mean absolute deviation of posterior draws from the generating parameter,
// averaged over coordinates, draws, and prior replications. theta_star is
// J x d; draws[j] holds the I x d posterior sample for replication j.
double dtm_score(const Mat& theta_star, const std::vector<Mat>& draws);

double hull_area(const std::vector<std::array<double, 2>>& poly);
bool point_in_convex_polygon(double px, double py,
                             const std::vector<std::array<double, 2>>& poly, double eps = 1e-9);

// Fraction of points lying inside every pairwise hull of the set (boundary
// points count as covered).
double coverage_fraction(const CredibleSet& set, const Mat& pts);

// One-dimensional 2-Wasserstein distance between empirical samples: root mean
// squared difference of matched order statistics (evenly spaced quantiles when
// the counts differ).
double w2_1d(Vec a, Vec b);

}  // namespace qbayes
