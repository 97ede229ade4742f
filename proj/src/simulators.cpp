#include <qbayes/simulators.hpp>

#include <cmath>

#include <qbayes/io.hpp>

namespace qbayes {

Mat sample_sphere_directions(int count, int d, Rng& rng) {
  if (count < 1 || d < 1) throw std::invalid_argument("direction sample needs count, d >= 1");
  Mat dirs(count, d);
  for (int i = 0; i < count; ++i) {
    double norm = 0.0;
    do {
      for (int j = 0; j < d; ++j) dirs(i, j) = rng.normal();
      norm = dirs.row(i).norm();
    } while (norm < 1e-12);
    dirs.row(i) /= norm;
  }
  return dirs;
}

Mat sample_source(int count, int d, double tau_cap, Rng& rng) {
  if (tau_cap <= 0.0 || tau_cap > 1.0)
    throw std::invalid_argument("tau_cap must lie in (0, 1], got " + std::to_string(tau_cap));
  Mat u = sample_sphere_directions(count, d, rng);
  for (int i = 0; i < count; ++i) u.row(i) *= rng.uniform(0.0, tau_cap);
  return u;
}

TripleBatch Simulator::simulate(int count, Rng& rng) const {
  if (count < 1) throw std::invalid_argument("batch count must be >= 1");
  TripleBatch batch;
  batch.theta.resize(count, theta_dim());
  batch.xs.reserve(count);
  const long attempts_cap = 1000L * count + 1000L;
  long attempts = 0;
  for (int i = 0; i < count; ++i) {
    for (;;) {
      if (++attempts > attempts_cap)
        throw std::runtime_error("simulator '" + kind() + "' rejected too many draws (" +
                                 std::to_string(rejected_) + " rejections)");
      Mat theta = sample_prior(1, rng);
      try {
        Mat x = simulate_x(theta.row(0).transpose(), rng);
        batch.theta.row(i) = theta.row(0);
        batch.xs.push_back(std::move(x));
        break;
      } catch (const SimDivergence&) {
        ++rejected_;
      }
    }
  }
  return batch;
}

GaussianConjugateSim::GaussianConjugateSim(double mu0, double sigma0, double kappa, double nu0,
                                           int n)
    : mu0_(mu0), sigma0_(sigma0), kappa_(kappa), nu0_(nu0), n_(n) {
  if (sigma0 <= 0 || kappa <= 0 || nu0 <= 0 || n < 1)
    throw std::invalid_argument("gaussian simulator needs sigma0, kappa, nu0 > 0 and n >= 1");
}

Mat GaussianConjugateSim::sample_prior(int count, Rng& rng) const {
  Mat theta(count, 2);
  for (int i = 0; i < count; ++i) {
    const double sigma2 = nu0_ * sigma0_ * sigma0_ / rng.chi_squared(nu0_);
    theta(i, 0) = rng.normal(mu0_, std::sqrt(sigma2 / kappa_));
    theta(i, 1) = sigma2;
  }
  return theta;
}

Mat GaussianConjugateSim::simulate_x(const Vec& theta, Rng& rng) const {
  if (theta.size() != 2 || theta(1) <= 0)
    throw std::invalid_argument("gaussian simulator needs theta = (mu, sigma2 > 0)");
  Mat x(1, n_);
  const double sd = std::sqrt(theta(1));
  for (int j = 0; j < n_; ++j) x(0, j) = rng.normal(theta(0), sd);
  return x;
}

ConjugatePosterior conjugate_posterior(double mu0, double sigma0, double kappa, double nu0,
                                       const Vec& obs) {
  if (obs.size() < 1) throw std::invalid_argument("conjugate posterior needs observations");
  const double n = static_cast<double>(obs.size());
  const double xbar = obs.mean();
  const double ss = (obs.array() - xbar).square().sum();
  ConjugatePosterior p;
  p.kappa_n = kappa + n;
  p.mu_n = (kappa * mu0 + n * xbar) / p.kappa_n;
  p.nu_n = nu0 + n;
  p.nu_sigma2_n =
      nu0 * sigma0 * sigma0 + ss + (kappa * n / (kappa + n)) * (xbar - mu0) * (xbar - mu0);
  return p;
}

Mat sample_conjugate_posterior(const ConjugatePosterior& post, int count, Rng& rng) {
  Mat theta(count, 2);
  for (int i = 0; i < count; ++i) {
    const double sigma2 = post.nu_sigma2_n / rng.chi_squared(post.nu_n);
    theta(i, 0) = rng.normal(post.mu_n, std::sqrt(sigma2 / post.kappa_n));
    theta(i, 1) = sigma2;
  }
  return theta;
}

BrockHommesSim::BrockHommesSim(double beta, double r, double sigma, int horizon, int burn_in)
    : beta_(beta), r_(r), sigma_(sigma), horizon_(horizon), burn_in_(burn_in) {
  if (beta <= 0 || r <= 0 || sigma < 0 || horizon < 3 || burn_in < 0)
    throw std::invalid_argument("brock-hommes simulator parameters out of range");
}

Mat BrockHommesSim::sample_prior(int count, Rng& rng) const {
  Mat theta(count, 4);
  for (int i = 0; i < count; ++i) {
    theta(i, 0) = rng.uniform(0.0, 1.0);   // g2
    theta(i, 1) = rng.uniform(0.0, 1.0);   // b2
    theta(i, 2) = rng.uniform(0.0, 1.0);   // g3
    theta(i, 3) = rng.uniform(-1.0, 0.0);  // b3
  }
  return theta;
}

Mat BrockHommesSim::simulate_series(const Vec& theta, Rng& rng) const {
  if (theta.size() != 4) throw std::invalid_argument("brock-hommes needs theta = (g2,b2,g3,b3)");
  const double g[4] = {0.0, theta(0), theta(2), 1.01};
  const double b[4] = {0.0, theta(1), theta(3), 0.0};
  const int total = burn_in_ + horizon_;
  std::vector<double> x(3 + total, 0.0);
  for (int t = 2; t < 2 + total; ++t) {
    double fitness[4];
    double fmax = -std::numeric_limits<double>::infinity();
    for (int h = 0; h < 4; ++h) {
      fitness[h] = (x[t] - r_ * x[t - 1]) * (g[h] * x[t - 2] + b[h] - r_ * x[t - 1]);
      fmax = std::max(fmax, beta_ * fitness[h]);
    }
    double wsum = 0.0, forecast = 0.0;
    for (int h = 0; h < 4; ++h) {
      const double w = std::exp(beta_ * fitness[h] - fmax);
      wsum += w;
      forecast += w * (g[h] * x[t] + b[h]);
    }
    x[t + 1] = forecast / (wsum * r_) + rng.normal(0.0, sigma_);
    if (std::abs(x[t + 1]) > 1e6)
      throw SimDivergence(theta, "brock-hommes path diverged at step " + std::to_string(t + 1) +
                                     " (|x| > 1e6)");
  }
  Mat out(1, horizon_);
  for (int j = 0; j < horizon_; ++j) out(0, j) = x[3 + burn_in_ + j];
  return out;
}

Mat BrockHommesSim::simulate_x(const Vec& theta, Rng& rng) const { return simulate_series(theta, rng); }

void export_triples_csv(const std::string& path, const TripleBatch& batch, const Mat& u) {
  const int n_rows = static_cast<int>(batch.theta.rows());
  if (n_rows == 0 || static_cast<int>(batch.xs.size()) != n_rows || u.rows() != n_rows)
    throw std::invalid_argument("triple export needs matching theta, x, u row counts");
  const int d = static_cast<int>(batch.theta.cols());
  const int d_x = static_cast<int>(batch.xs[0].rows());
  const int n = static_cast<int>(batch.xs[0].cols());

  std::vector<std::string> header;
  for (int j = 0; j < d; ++j) header.push_back("theta_" + std::to_string(j + 1));
  for (int r = 0; r < d_x; ++r)
    for (int c = 0; c < n; ++c)
      header.push_back("x_" + std::to_string(r + 1) + "_" + std::to_string(c + 1));
  for (int j = 0; j < d; ++j) header.push_back("u_" + std::to_string(j + 1));

  Mat table(n_rows, d + d_x * n + d);
  for (int i = 0; i < n_rows; ++i) {
    table.block(i, 0, 1, d) = batch.theta.row(i);
    for (int r = 0; r < d_x; ++r)
      table.block(i, d + r * n, 1, n) = batch.xs[i].row(r);
    table.block(i, d + d_x * n, 1, d) = u.row(i);
  }
  write_csv(path, header, table);
}

}  // namespace qbayes
