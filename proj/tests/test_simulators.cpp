#include <doctest.h>

#include <cmath>
#include <cstdio>
#include <string>
#include <vector>

#include <qbayes/io.hpp>
#include <qbayes/simulators.hpp>

#include "oracles.hpp"

using namespace qbayes;

namespace {

// Rejects every draw with first coordinate below the cut; used to exercise
// the redraw-and-count path without a real diverging process.
class FlakySim : public Simulator {
 public:
  explicit FlakySim(double cut) : cut_(cut) {}
  int theta_dim() const override { return 1; }
  int x_dim() const override { return 1; }
  int n_obs() const override { return 1; }
  std::string kind() const override { return "flaky"; }
  Mat sample_prior(int count, Rng& rng) const override {
    Mat t(count, 1);
    for (int i = 0; i < count; ++i) t(i, 0) = rng.uniform(0.0, 1.0);
    return t;
  }
  Mat simulate_x(const Vec& theta, Rng& rng) const override {
    if (theta(0) < cut_) throw SimDivergence(theta, "below cut");
    Mat x(1, 1);
    x(0, 0) = rng.normal();
    return x;
  }

 private:
  double cut_;
};

}  // namespace

TEST_SUITE("simulators") {
  TEST_CASE("source draws have uniform radius and direction") {
    Rng rng(101);
    const int count = 4000;
    Mat u = sample_source(count, 2, 1.0, rng);
    std::vector<double> radii(count), angles(count);
    for (int i = 0; i < count; ++i) {
      radii[i] = u.row(i).norm();
      CHECK(radii[i] <= 1.0 + 1e-12);
      angles[i] = (std::atan2(u(i, 1), u(i, 0)) + M_PI) / (2.0 * M_PI);
    }
    const double crit = 1.63 / std::sqrt(static_cast<double>(count));
    CHECK(oracle::ks_uniform(radii) < crit);
    CHECK(oracle::ks_uniform(angles) < crit);
  }

  TEST_CASE("capped source draws scale the radius law") {
    Rng rng(102);
    const int count = 3000;
    Mat u = sample_source(count, 2, 0.4, rng);
    std::vector<double> radii(count);
    for (int i = 0; i < count; ++i) {
      const double r = u.row(i).norm();
      CHECK(r <= 0.4 + 1e-12);
      radii[i] = r / 0.4;
    }
    CHECK(oracle::ks_uniform(radii) < 1.63 / std::sqrt(static_cast<double>(count)));
    CHECK_THROWS_AS(sample_source(10, 2, 0.0, rng), std::invalid_argument);
    CHECK_THROWS_AS(sample_source(10, 2, 1.5, rng), std::invalid_argument);
  }

  TEST_CASE("sphere directions are unit vectors in any dimension") {
    Rng rng(103);
    for (int d : {1, 2, 3, 5}) {
      Mat dirs = sample_sphere_directions(200, d, rng);
      for (int i = 0; i < dirs.rows(); ++i)
        CHECK(dirs.row(i).norm() == doctest::Approx(1.0).epsilon(1e-12));
    }
    CHECK_THROWS_AS(sample_sphere_directions(0, 2, rng), std::invalid_argument);
  }

  TEST_CASE("normal-model prior follows the scaled inverse chi-squared law") {
    GaussianConjugateSim sim(0.0, 1.0, 2.0, 25.0, 2);
    Rng rng(104);
    const int count = 4000;
    Mat theta = sim.sample_prior(count, rng);
    std::vector<double> sig_u(count), mu_u(count);
    for (int i = 0; i < count; ++i) {
      CHECK(theta(i, 1) > 0.0);
      // nu0 sigma0^2 / sigma^2 is chi-squared with nu0 dof
      sig_u[i] = oracle::chi2_cdf(25.0 / theta(i, 1), 25.0);
      // mu given sigma^2 is centered normal with variance sigma^2 / kappa
      mu_u[i] = oracle::normal_cdf(theta(i, 0) / std::sqrt(theta(i, 1) / 2.0));
    }
    const double crit = 1.63 / std::sqrt(static_cast<double>(count));
    CHECK(oracle::ks_uniform(sig_u) < crit);
    CHECK(oracle::ks_uniform(mu_u) < crit);
  }

  TEST_CASE("normal-model observations standardize to the unit normal") {
    GaussianConjugateSim sim(0.0, 1.0, 2.0, 25.0, 8);
    Rng rng(105);
    Vec theta(2);
    theta << -0.7, 2.3;
    std::vector<double> z;
    for (int rep = 0; rep < 400; ++rep) {
      Mat x = sim.simulate_x(theta, rng);
      REQUIRE(x.rows() == 1);
      REQUIRE(x.cols() == 8);
      for (int c = 0; c < 8; ++c)
        z.push_back(oracle::normal_cdf((x(0, c) + 0.7) / std::sqrt(2.3)));
    }
    CHECK(oracle::ks_uniform(z) < 1.63 / std::sqrt(static_cast<double>(z.size())));
    Vec bad(2);
    bad << 0.0, -1.0;
    CHECK_THROWS_AS(sim.simulate_x(bad, rng), std::invalid_argument);
    CHECK_THROWS_AS(GaussianConjugateSim(0, -1, 2, 25, 2), std::invalid_argument);
  }

  TEST_CASE("posterior update matches hand-computed values for two points at one half") {
    Vec obs(2);
    obs << 0.5, 0.5;
    ConjugatePosterior p = conjugate_posterior(0.0, 1.0, 2.0, 25.0, obs);
    CHECK(p.mu_n == doctest::Approx(0.25).epsilon(1e-15));
    CHECK(p.kappa_n == doctest::Approx(4.0).epsilon(1e-15));
    CHECK(p.nu_n == doctest::Approx(27.0).epsilon(1e-15));
    CHECK(p.nu_sigma2_n == doctest::Approx(25.25).epsilon(1e-15));
  }

  TEST_CASE("posterior update incorporates scatter and pull toward the prior mean") {
    Vec obs(3);
    obs << 1.0, 2.0, 3.0;
    // xbar = 2, ss = 2, kappa_n = 5, mu_n = (2*0 + 3*2)/5
    ConjugatePosterior p = conjugate_posterior(0.0, 1.0, 2.0, 25.0, obs);
    CHECK(p.mu_n == doctest::Approx(1.2).epsilon(1e-15));
    CHECK(p.kappa_n == doctest::Approx(5.0).epsilon(1e-15));
    CHECK(p.nu_n == doctest::Approx(28.0).epsilon(1e-15));
    CHECK(p.nu_sigma2_n == doctest::Approx(25.0 + 2.0 + (6.0 / 5.0) * 4.0).epsilon(1e-12));
    CHECK_THROWS_AS(conjugate_posterior(0, 1, 2, 25, Vec()), std::invalid_argument);
  }

  TEST_CASE("posterior sampler reproduces the theoretical moments") {
    ConjugatePosterior p;
    p.mu_n = 0.25;
    p.kappa_n = 4.0;
    p.nu_n = 27.0;
    p.nu_sigma2_n = 25.25;
    Rng rng(106);
    Mat draws = sample_conjugate_posterior(p, 60000, rng);
    const double mean_mu = draws.col(0).mean();
    const double mean_s2 = draws.col(1).mean();
    const double var_mu = (draws.col(0).array() - mean_mu).square().mean();
    // E[sigma^2] = nu sigma^2 / (nu - 2); Var[mu] = E[sigma^2] / kappa
    CHECK(mean_mu == doctest::Approx(0.25).epsilon(0.02));
    CHECK(mean_s2 == doctest::Approx(25.25 / 25.0).epsilon(0.01));
    CHECK(var_mu == doctest::Approx(25.25 / 25.0 / 4.0).epsilon(0.03));
  }

  TEST_CASE("pricing recursion matches an independent mirror draw for draw") {
    Vec theta(4);
    theta << 0.9, 0.2, 0.9, -0.2;
    BrockHommesSim sim(120.0, 1.01, 0.04, 50, 20);
    Rng a(107), b(107);
    const Mat got = sim.simulate_series(theta, a);
    const Mat want = oracle::bh_series(theta, 120.0, 1.01, 0.04, 50, 20, b);
    REQUIRE(got.rows() == 1);
    REQUIRE(got.cols() == 50);
    for (int c = 0; c < 50; ++c) CHECK(got(0, c) == want(0, c));
  }

  TEST_CASE("pricing recursion validates its configuration") {
    CHECK_THROWS_AS(BrockHommesSim(0.0, 1.01, 0.04, 50, 20), std::invalid_argument);
    CHECK_THROWS_AS(BrockHommesSim(120.0, 0.0, 0.04, 50, 20), std::invalid_argument);
    CHECK_THROWS_AS(BrockHommesSim(120.0, 1.01, -0.1, 50, 20), std::invalid_argument);
    CHECK_THROWS_AS(BrockHommesSim(120.0, 1.01, 0.04, 2, 20), std::invalid_argument);
    CHECK_THROWS_AS(BrockHommesSim(120.0, 1.01, 0.04, 50, -1), std::invalid_argument);
    BrockHommesSim sim(120.0, 1.01, 0.04, 50, 20);
    Rng rng(108);
    CHECK_THROWS_AS(sim.simulate_series(Vec::Zero(3), rng), std::invalid_argument);
  }

  TEST_CASE("pricing prior stays inside its box") {
    BrockHommesSim sim(120.0, 1.01, 0.04, 10, 0);
    Rng rng(109);
    Mat theta = sim.sample_prior(500, rng);
    for (int i = 0; i < theta.rows(); ++i) {
      for (int j = 0; j < 3; ++j) {
        CHECK(theta(i, j) >= 0.0);
        CHECK(theta(i, j) <= 1.0);
      }
      CHECK(theta(i, 3) >= -1.0);
      CHECK(theta(i, 3) <= 0.0);
    }
  }

  TEST_CASE("batch simulation returns matched blocks") {
    GaussianConjugateSim sim(0.0, 1.0, 2.0, 25.0, 3);
    Rng rng(110);
    TripleBatch batch = sim.simulate(32, rng);
    CHECK(batch.theta.rows() == 32);
    CHECK(batch.theta.cols() == 2);
    REQUIRE(batch.xs.size() == 32);
    for (const Mat& x : batch.xs) {
      CHECK(x.rows() == 1);
      CHECK(x.cols() == 3);
    }
    CHECK(sim.rejected() == 0);
    CHECK_THROWS_AS(sim.simulate(0, rng), std::invalid_argument);
  }

  TEST_CASE("diverging draws are redrawn and counted") {
    FlakySim sim(0.5);
    Rng rng(111);
    TripleBatch batch = sim.simulate(64, rng);
    for (int i = 0; i < 64; ++i) CHECK(batch.theta(i, 0) >= 0.5);
    CHECK(sim.rejected() > 0);
    const long before = sim.rejected();
    sim.reset_rejected();
    CHECK(sim.rejected() == 0);
    CHECK(before > 20);  // roughly half the attempts fall below the cut
  }

  TEST_CASE("a simulator that always diverges aborts with a clear error") {
    FlakySim sim(2.0);  // the uniform prior never reaches the cut
    Rng rng(112);
    CHECK_THROWS_AS(sim.simulate(2, rng), std::runtime_error);
  }

  TEST_CASE("triple export writes a table that reads back") {
    GaussianConjugateSim sim(0.0, 1.0, 2.0, 25.0, 2);
    Rng rng(113);
    TripleBatch batch = sim.simulate(8, rng);
    Mat u = sample_source(8, 2, 1.0, rng);
    const std::string path = "/tmp/qbayes_test_triples.csv";
    export_triples_csv(path, batch, u);
    Mat table = read_csv_matrix(path);
    REQUIRE(table.rows() == 8);
    REQUIRE(table.cols() == 2 + 2 + 2);
    for (int i = 0; i < 8; ++i) {
      CHECK(table(i, 0) == doctest::Approx(batch.theta(i, 0)).epsilon(1e-12));
      CHECK(table(i, 2) == doctest::Approx(batch.xs[i](0, 0)).epsilon(1e-12));
      CHECK(table(i, 4) == doctest::Approx(u(i, 0)).epsilon(1e-12));
    }
    std::remove(path.c_str());
    Mat short_u = sample_source(4, 2, 1.0, rng);
    CHECK_THROWS_AS(export_triples_csv(path, batch, short_u), std::invalid_argument);
  }

  TEST_CASE("derived generator streams are reproducible and order-free") {
    Rng a = Rng::derive(42, 7);
    Rng c = Rng::derive(42, 8);
    const double first_a = a.uniform();
    Rng b = Rng::derive(42, 7);
    CHECK(first_a == b.uniform());
    CHECK(first_a != c.uniform());
  }
}
