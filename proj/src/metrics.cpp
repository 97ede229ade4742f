#include <qbayes/metrics.hpp>

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>

namespace qbayes {

namespace {

Mat pooled_kernel(const Mat& pooled, double bandwidth) {
  const int p = static_cast<int>(pooled.rows());
  Mat k(p, p);
  const double inv = 1.0 / (2.0 * bandwidth * bandwidth);
  for (int i = 0; i < p; ++i) {
    k(i, i) = 1.0;
    for (int j = i + 1; j < p; ++j) {
      const double d2 = (pooled.row(i) - pooled.row(j)).squaredNorm();
      k(i, j) = k(j, i) = std::exp(-d2 * inv);
    }
  }
  return k;
}

double mmd_from_kernel(const Mat& k, double total, const std::vector<char>& in_a, int n, int m) {
  // Unbiased U-statistic via label vector z: within-set sums exclude the
  // diagonal of ones.
  const int p = static_cast<int>(k.rows());
  Vec z(p);
  for (int i = 0; i < p; ++i) z(i) = in_a[i] ? 1.0 : 0.0;
  const Vec kz = k * z;
  const double zkz = z.dot(kz);
  const double cross = kz.sum() - zkz;              // A x B block
  const double aa = zkz - n;                        // sum over i != j in A
  const double bb = total - 2.0 * cross - zkz - m;  // sum over i != j in B
  return aa / (static_cast<double>(n) * (n - 1)) + bb / (static_cast<double>(m) * (m - 1)) -
         2.0 * cross / (static_cast<double>(n) * m);
}

}  // namespace

double median_pair_distance(const Mat& pooled) {
  const int p = static_cast<int>(pooled.rows());
  std::vector<double> dists;
  dists.reserve(static_cast<std::size_t>(p) * (p - 1) / 2);
  for (int i = 0; i < p; ++i)
    for (int j = i + 1; j < p; ++j) dists.push_back((pooled.row(i) - pooled.row(j)).norm());
  const std::size_t mid = dists.size() / 2;
  std::nth_element(dists.begin(), dists.begin() + mid, dists.end());
  return dists[mid];
}

double mmd_with_bandwidth(const Mat& a, const Mat& b, double bandwidth) {
  const int n = static_cast<int>(a.rows()), m = static_cast<int>(b.rows());
  if (n < 2 || m < 2) throw std::invalid_argument("both samples need at least 2 points");
  if (a.cols() != b.cols()) throw std::invalid_argument("samples must share dimension");
  if (!(bandwidth > 0)) throw std::invalid_argument("bandwidth must be positive");
  Mat pooled(n + m, a.cols());
  pooled.topRows(n) = a;
  pooled.bottomRows(m) = b;
  const Mat k = pooled_kernel(pooled, bandwidth);
  std::vector<char> in_a(n + m, 0);
  for (int i = 0; i < n; ++i) in_a[i] = 1;
  return mmd_from_kernel(k, k.sum(), in_a, n, m);
}

MmdResult mmd(const Mat& a, const Mat& b) {
  const int n = static_cast<int>(a.rows()), m = static_cast<int>(b.rows());
  if (n < 2 || m < 2) throw std::invalid_argument("both samples need at least 2 points");
  if (a.cols() != b.cols()) throw std::invalid_argument("samples must share dimension");
  Mat pooled(n + m, a.cols());
  pooled.topRows(n) = a;
  pooled.bottomRows(m) = b;
  MmdResult res;
  res.bandwidth = median_pair_distance(pooled);
  if (res.bandwidth <= 0.0) {
    res.bandwidth = 1.0;
    res.fallback = true;
  }
  res.value = mmd_with_bandwidth(a, b, res.bandwidth);
  return res;
}

double mmd_permutation_quantile(const Mat& a, const Mat& b, int n_perm, double q, Rng& rng) {
  const int n = static_cast<int>(a.rows()), m = static_cast<int>(b.rows());
  if (n < 2 || m < 2) throw std::invalid_argument("both samples need at least 2 points");
  if (n_perm < 1) throw std::invalid_argument("need at least one permutation");
  if (q <= 0.0 || q >= 1.0) throw std::invalid_argument("quantile must lie in (0, 1)");
  Mat pooled(n + m, a.cols());
  pooled.topRows(n) = a;
  pooled.bottomRows(m) = b;
  double bandwidth = median_pair_distance(pooled);
  if (bandwidth <= 0.0) bandwidth = 1.0;
  const Mat k = pooled_kernel(pooled, bandwidth);
  const double total = k.sum();

  std::vector<int> idx(n + m);
  std::iota(idx.begin(), idx.end(), 0);
  std::vector<double> stats(n_perm);
  std::vector<char> in_a(n + m);
  for (int t = 0; t < n_perm; ++t) {
    std::shuffle(idx.begin(), idx.end(), rng.engine());
    std::fill(in_a.begin(), in_a.end(), 0);
    for (int i = 0; i < n; ++i) in_a[idx[i]] = 1;
    stats[t] = mmd_from_kernel(k, total, in_a, n, m);
  }
  std::sort(stats.begin(), stats.end());
  const std::size_t pos = std::min<std::size_t>(
      static_cast<std::size_t>(std::ceil(q * n_perm)) - 1, stats.size() - 1);
  return stats[pos];
}

double dtm_score(const Mat& theta_star, const std::vector<Mat>& draws) {
  const int j_count = static_cast<int>(theta_star.rows());
  if (j_count < 1 || static_cast<int>(draws.size()) != j_count)
    throw std::invalid_argument("need one posterior sample block per prior replication");
  const int d = static_cast<int>(theta_star.cols());
  double total = 0.0;
  long terms = 0;
  for (int j = 0; j < j_count; ++j) {
    if (draws[j].cols() != d) throw std::invalid_argument("posterior draws have wrong dimension");
    for (int i = 0; i < draws[j].rows(); ++i) {
      total += (draws[j].row(i) - theta_star.row(j)).cwiseAbs().mean();
      ++terms;
    }
  }
  if (terms == 0) throw std::invalid_argument("no posterior draws supplied");
  return total / static_cast<double>(terms);
}

double hull_area(const std::vector<std::array<double, 2>>& poly) {
  if (poly.size() < 3) return 0.0;
  double twice = 0.0;
  for (std::size_t i = 0; i < poly.size(); ++i) {
    const auto& p = poly[i];
    const auto& q = poly[(i + 1) % poly.size()];
    twice += p[0] * q[1] - q[0] * p[1];
  }
  return 0.5 * std::abs(twice);
}

bool point_in_convex_polygon(double px, double py,
                             const std::vector<std::array<double, 2>>& poly, double eps) {
  if (poly.size() < 3) return false;
  for (std::size_t i = 0; i < poly.size(); ++i) {
    const auto& p = poly[i];
    const auto& q = poly[(i + 1) % poly.size()];
    const double cross = (q[0] - p[0]) * (py - p[1]) - (q[1] - p[1]) * (px - p[0]);
    if (cross < -eps) return false;  // right of a CCW edge
  }
  return true;
}

double coverage_fraction(const CredibleSet& set, const Mat& pts) {
  if (pts.rows() < 1) throw std::invalid_argument("coverage needs test points");
  int inside = 0;
  for (int i = 0; i < pts.rows(); ++i) {
    bool all = true;
    for (const PairHull& h : set.hulls) {
      if (h.degenerate ||
          !point_in_convex_polygon(pts(i, h.ax0), pts(i, h.ax1), h.vertices)) {
        all = false;
        break;
      }
    }
    inside += all ? 1 : 0;
  }
  return static_cast<double>(inside) / pts.rows();
}

double w2_1d(Vec a, Vec b) {
  if (a.size() < 1 || b.size() < 1) throw std::invalid_argument("w2 needs non-empty samples");
  std::sort(a.data(), a.data() + a.size());
  std::sort(b.data(), b.data() + b.size());
  const int n = static_cast<int>(a.size()), m = static_cast<int>(b.size());
  const int grid = std::min(n, m);
  double acc = 0.0;
  for (int i = 0; i < grid; ++i) {
    const double p = (i + 0.5) / grid;
    const double av = a(std::min<int>(static_cast<int>(p * n), n - 1));
    const double bv = b(std::min<int>(static_cast<int>(p * m), m - 1));
    acc += (av - bv) * (av - bv);
  }
  return std::sqrt(acc / grid);
}

}  // namespace qbayes
