#pragma once

#include <memory>
#include <stdexcept>
#include <string>
#include <vector>

#include <qbayes/rng.hpp>
#include <qbayes/tensor.hpp>

namespace qbayes {

// Draws from the spherical source: radius uniform on [0, tau_cap] times a
// uniform direction, so P(|U| <= t) = t / tau_cap and the radius doubles as
// the credible level of the ball it bounds.
Mat sample_source(int count, int d, double tau_cap, Rng& rng);
Mat sample_sphere_directions(int count, int d, Rng& rng);

struct TripleBatch {
  Mat theta;            // N x d
  std::vector<Mat> xs;  // N blocks of d_x x n
};

struct SimDivergence : std::runtime_error {
  explicit SimDivergence(Vec theta_, const std::string& what)
      : std::runtime_error(what), theta(std::move(theta_)) {}
  Vec theta;
};

class Simulator {
 public:
  virtual ~Simulator() = default;
  virtual int theta_dim() const = 0;
  virtual int x_dim() const = 0;
  virtual int n_obs() const = 0;
  virtual std::string kind() const = 0;
  virtual Mat sample_prior(int count, Rng& rng) const = 0;       // count x d
  virtual Mat simulate_x(const Vec& theta, Rng& rng) const = 0;  // d_x x n

  // Prior draws pushed through the data process; diverging parameter draws
  // are rejected and redrawn, with the rejection count tracked as a rate.
  TripleBatch simulate(int count, Rng& rng) const;
  long rejected() const { return rejected_; }
  void reset_rejected() { rejected_ = 0; }

 protected:
  mutable long rejected_ = 0;
};

// Normal observations with a conjugate normal-scaled-inverse-chi-squared
// prior; theta = (mu, sigma^2).
class GaussianConjugateSim : public Simulator {
 public:
  GaussianConjugateSim(double mu0, double sigma0, double kappa, double nu0, int n);

  int theta_dim() const override { return 2; }
  int x_dim() const override { return 1; }
  int n_obs() const override { return n_; }
  std::string kind() const override { return "gaussian"; }
  Mat sample_prior(int count, Rng& rng) const override;
  Mat simulate_x(const Vec& theta, Rng& rng) const override;

  double mu0() const { return mu0_; }
  double sigma0() const { return sigma0_; }
  double kappa() const { return kappa_; }
  double nu0() const { return nu0_; }

 private:
  double mu0_, sigma0_, kappa_, nu0_;
  int n_;
};

struct ConjugatePosterior {
  double mu_n = 0, kappa_n = 0, nu_n = 0, nu_sigma2_n = 0;
};

ConjugatePosterior conjugate_posterior(double mu0, double sigma0, double kappa, double nu0,
                                       const Vec& obs);
Mat sample_conjugate_posterior(const ConjugatePosterior& post, int count, Rng& rng);

// Four-agent discrete-choice asset pricing recursion; theta = (g2, b2, g3, b3)
// with agents 1 and 4 fixed. Paths exceeding |x| > 1e6 raise SimDivergence.
class BrockHommesSim : public Simulator {
 public:
  BrockHommesSim(double beta, double r, double sigma, int horizon, int burn_in);

  int theta_dim() const override { return 4; }
  int x_dim() const override { return 1; }
  int n_obs() const override { return horizon_; }
  std::string kind() const override { return "brock_hommes"; }
  Mat sample_prior(int count, Rng& rng) const override;
  Mat simulate_x(const Vec& theta, Rng& rng) const override;

  Mat simulate_series(const Vec& theta, Rng& rng) const;  // 1 x horizon

 private:
  double beta_, r_, sigma_;
  int horizon_, burn_in_;
};

void export_triples_csv(const std::string& path, const TripleBatch& batch, const Mat& u);

}  // namespace qbayes
