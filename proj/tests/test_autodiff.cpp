#include <doctest.h>

#include <cmath>
#include <vector>

#include <qbayes/graph.hpp>
#include <qbayes/rng.hpp>

#include "oracles.hpp"

using qbayes::Mat;
using qbayes::Rng;
namespace ad = qbayes::ad;

namespace {

Mat random_mat(int rows, int cols, Rng& rng, double lo = -2.0, double hi = 2.0) {
  Mat m(rows, cols);
  for (int r = 0; r < rows; ++r)
    for (int c = 0; c < cols; ++c) m(r, c) = rng.uniform(lo, hi);
  return m;
}

// Keep entries away from the activation kinks so finite differences stay
// two-sided smooth.
Mat random_mat_off_kink(int rows, int cols, Rng& rng) {
  Mat m = random_mat(rows, cols, rng);
  for (int r = 0; r < rows; ++r)
    for (int c = 0; c < cols; ++c)
      if (std::abs(m(r, c)) < 0.05) m(r, c) = m(r, c) < 0 ? -0.1 : 0.1;
  return m;
}

// Checks every coordinate of every listed storage block against a central
// difference of the scalar output node.
void check_grads(ad::Graph& g, ad::NodeId out, const std::vector<std::pair<ad::NodeId, Mat*>>& ins,
                 double h = 1e-5, double tol = 1e-6) {
  g.forward();
  g.backward(out);
  std::vector<Mat> grads;
  grads.reserve(ins.size());
  for (const auto& [id, storage] : ins) grads.push_back(g.grad(id));
  for (std::size_t k = 0; k < ins.size(); ++k) {
    Mat& st = *ins[k].second;
    for (int r = 0; r < st.rows(); ++r)
      for (int c = 0; c < st.cols(); ++c) {
        const double fd = oracle::fd_central(
            [&] {
              g.forward();
              return g.value(out)(0, 0);
            },
            st(r, c), h);
        CAPTURE(k);
        CAPTURE(r);
        CAPTURE(c);
        CHECK(oracle::rel_gap(grads[k](r, c), fd) < tol);
      }
  }
}

}  // namespace

TEST_SUITE("autodiff") {
  TEST_CASE("matmul gradients match central differences in all transpose modes") {
    Rng rng(42);
    for (int mode = 0; mode < 4; ++mode) {
      const bool ta = mode & 1, tb = mode & 2;
      Mat a = ta ? random_mat(4, 3, rng) : random_mat(3, 4, rng);
      Mat b = tb ? random_mat(2, 4, rng) : random_mat(4, 2, rng);
      ad::Graph g;
      ad::NodeId an = g.input("a", static_cast<int>(a.rows()), static_cast<int>(a.cols()), true);
      ad::NodeId bn = g.input("b", static_cast<int>(b.rows()), static_cast<int>(b.cols()), true);
      g.bind(an, &a);
      g.bind(bn, &b);
      ad::NodeId out = g.sum(g.matmul(an, bn, ta, tb));
      CAPTURE(mode);
      check_grads(g, out, {{an, &a}, {bn, &b}});
    }
  }

  TEST_CASE("elementwise add, sub, mul and scale gradients match differences") {
    Rng rng(7);
    Mat a = random_mat(3, 5, rng), b = random_mat(3, 5, rng);
    ad::Graph g;
    ad::NodeId an = g.input("a", 3, 5, true);
    ad::NodeId bn = g.input("b", 3, 5, true);
    g.bind(an, &a);
    g.bind(bn, &b);
    ad::NodeId expr = g.add(g.mul(an, bn), g.sub(g.scale(an, 1.7), bn));
    ad::NodeId out = g.mean(expr);
    check_grads(g, out, {{an, &a}, {bn, &b}});
  }

  TEST_CASE("broadcast row addition routes gradients to both operands") {
    Rng rng(8);
    Mat a = random_mat(4, 3, rng), row = random_mat(1, 3, rng);
    ad::Graph g;
    ad::NodeId an = g.input("a", 4, 3, true);
    ad::NodeId rn = g.input("row", 1, 3, true);
    g.bind(an, &a);
    g.bind(rn, &row);
    ad::NodeId out = g.sum(g.mul(g.add_rowvec(an, rn), g.add_rowvec(an, rn)));
    check_grads(g, out, {{an, &a}, {rn, &row}});
  }

  TEST_CASE("activation gradients match differences away from kinks") {
    Rng rng(9);
    Mat a = random_mat_off_kink(4, 4, rng);
    ad::Graph g;
    ad::NodeId an = g.input("a", 4, 4, true);
    g.bind(an, &a);
    ad::NodeId out = g.sum(g.add(g.celu(an), g.add(g.relu(an), g.add(g.sigmoid(an), g.tanh(an)))));
    check_grads(g, out, {{an, &a}});
  }

  TEST_CASE("celu forward values match the scalar definition") {
    Rng rng(10);
    Mat a = random_mat(5, 5, rng, -4.0, 4.0);
    ad::Graph g;
    ad::NodeId an = g.input("a", 5, 5, true);
    g.bind(an, &a);
    ad::NodeId cn = g.celu(an);
    g.forward();
    for (int r = 0; r < 5; ++r)
      for (int c = 0; c < 5; ++c)
        CHECK(g.value(cn)(r, c) == doctest::Approx(oracle::celu(a(r, c))).epsilon(1e-12));
  }

  TEST_CASE("reductions mean, sum, col_mean differentiate correctly") {
    Rng rng(11);
    Mat a = random_mat(6, 3, rng);
    ad::Graph g;
    ad::NodeId an = g.input("a", 6, 3, true);
    g.bind(an, &a);
    ad::NodeId out = g.add(g.mean(an), g.add(g.sum(g.col_mean(an)), g.sum(g.mul(an, an))));
    check_grads(g, out, {{an, &a}});
  }

  TEST_CASE("row max differentiates at unique maxima") {
    Rng rng(12);
    Mat a = random_mat(5, 4, rng);
    for (int r = 0; r < 5; ++r) {
      const int star = static_cast<int>(rng.integer(4));
      a(r, star) += 3.0;  // clear per-row winner keeps the difference two-sided
    }
    ad::Graph g;
    ad::NodeId an = g.input("a", 5, 4, true);
    g.bind(an, &a);
    ad::NodeId out = g.sum(g.row_max(an));
    check_grads(g, out, {{an, &a}});
  }

  TEST_CASE("row max ties send the gradient to the lowest column") {
    Mat a(2, 3);
    a << 2.0, 5.0, 5.0, 7.0, 1.0, 7.0;
    ad::Graph g;
    ad::NodeId an = g.input("a", 2, 3, true);
    g.bind(an, &a);
    ad::NodeId out = g.sum(g.row_max(an));
    g.forward();
    CHECK(g.value(out)(0, 0) == doctest::Approx(12.0));
    g.backward(out);
    const Mat& grad = g.grad(an);
    CHECK(grad(0, 0) == 0.0);
    CHECK(grad(0, 1) == 1.0);
    CHECK(grad(0, 2) == 0.0);
    CHECK(grad(1, 0) == 1.0);
    CHECK(grad(1, 2) == 0.0);
  }

  TEST_CASE("group row sum pools contiguous groups and differentiates") {
    Rng rng(13);
    Mat a = random_mat(8, 3, rng);
    ad::Graph g;
    ad::NodeId an = g.input("a", 8, 3, true);
    g.bind(an, &a);
    ad::NodeId pooled = g.group_row_sum(an, 4);
    ad::NodeId out = g.sum(g.mul(pooled, pooled));
    g.forward();
    CHECK(g.value(pooled).rows() == 2);
    for (int c = 0; c < 3; ++c) {
      double s = 0.0;
      for (int r = 0; r < 4; ++r) s += a(r, c);
      CHECK(g.value(pooled)(0, c) == doctest::Approx(s).epsilon(1e-12));
    }
    check_grads(g, out, {{an, &a}});
  }

  TEST_CASE("group row sum output is invariant to permutations inside a group") {
    Rng rng(14);
    Mat a = random_mat(12, 3, rng);
    ad::Graph g;
    ad::NodeId an = g.input("a", 12, 3, true);
    g.bind(an, &a);
    ad::NodeId pooled = g.group_row_sum(an, 4);
    g.forward();
    const Mat before = g.value(pooled);

    Mat shuffled = a;
    for (int grp = 0; grp < 3; ++grp) {
      std::vector<int> order = {3, 0, 2, 1};
      for (int k = 0; k < 4; ++k) shuffled.row(grp * 4 + k) = a.row(grp * 4 + order[k]);
    }
    a = shuffled;
    g.forward();
    const Mat after = g.value(pooled);
    for (int r = 0; r < before.rows(); ++r)
      for (int c = 0; c < before.cols(); ++c) CHECK(before(r, c) == after(r, c));
  }

  TEST_CASE("transpose and column concatenation differentiate") {
    Rng rng(15);
    Mat a = random_mat(3, 4, rng), b = random_mat(3, 2, rng);
    ad::Graph g;
    ad::NodeId an = g.input("a", 3, 4, true);
    ad::NodeId bn = g.input("b", 3, 2, true);
    g.bind(an, &a);
    g.bind(bn, &b);
    ad::NodeId cat = g.concat_cols(an, bn);
    ad::NodeId out = g.sum(g.matmul(cat, g.transpose(cat)));
    check_grads(g, out, {{an, &a}, {bn, &b}});
  }

  TEST_CASE("composite two-layer network gradients match differences") {
    Rng rng(16);
    Mat x = random_mat(5, 3, rng);
    Mat w1 = random_mat_off_kink(3, 6, rng), b1 = random_mat(1, 6, rng);
    Mat w2 = random_mat(6, 1, rng), b2 = random_mat(1, 1, rng);
    ad::Graph g;
    ad::NodeId xn = g.input("x", 5, 3, true);
    ad::NodeId w1n = g.param("w1", 3, 6);
    ad::NodeId b1n = g.param("b1", 1, 6);
    ad::NodeId w2n = g.param("w2", 6, 1);
    ad::NodeId b2n = g.param("b2", 1, 1);
    g.bind(xn, &x);
    g.bind(w1n, &w1);
    g.bind(b1n, &b1);
    g.bind(w2n, &w2);
    g.bind(b2n, &b2);
    ad::NodeId h = g.celu(g.add_rowvec(g.matmul(xn, w1n), b1n));
    ad::NodeId out = g.mean(g.add_rowvec(g.matmul(h, w2n), b2n));
    check_grads(g, out, {{xn, &x}, {w1n, &w1}, {b1n, &b1}, {w2n, &w2}, {b2n, &b2}});
  }

  TEST_CASE("gradient lookups by parameter name match lookups by id") {
    Rng rng(17);
    Mat x = random_mat(2, 2, rng), w = random_mat(2, 2, rng);
    ad::Graph g;
    ad::NodeId xn = g.input("x", 2, 2);
    ad::NodeId wn = g.param("w", 2, 2);
    g.bind(xn, &x);
    g.bind(wn, &w);
    ad::NodeId out = g.sum(g.matmul(xn, wn));
    g.forward();
    g.backward(out);
    CHECK(g.grad("w") == g.grad(wn));
    CHECK(g.find("w") == wn);
  }

  TEST_CASE("rebinding and re-running reuses the same tape") {
    Mat a(1, 2);
    a << 1.0, 2.0;
    ad::Graph g;
    ad::NodeId an = g.input("a", 1, 2, true);
    g.bind(an, &a);
    ad::NodeId out = g.sum(g.mul(an, an));
    g.forward();
    CHECK(g.value(out)(0, 0) == doctest::Approx(5.0));
    a << 3.0, 4.0;
    g.forward();
    CHECK(g.value(out)(0, 0) == doctest::Approx(25.0));
  }

  TEST_CASE("shape mismatches are rejected at construction") {
    ad::Graph g;
    ad::NodeId a = g.input("a", 2, 3);
    ad::NodeId b = g.input("b", 3, 2);
    CHECK_THROWS_AS(g.add(a, b), ad::GraphError);
    CHECK_THROWS_AS(g.sub(a, b), ad::GraphError);
    CHECK_THROWS_AS(g.mul(a, b), ad::GraphError);
    CHECK_THROWS_AS(g.matmul(a, a), ad::GraphError);
    CHECK_THROWS_AS(g.add_rowvec(a, b), ad::GraphError);
    CHECK_THROWS_AS(g.concat_cols(a, b), ad::GraphError);
    CHECK_THROWS_AS(g.group_row_sum(a, 4), ad::GraphError);
    CHECK_THROWS_AS(g.input("", 0, 1), ad::GraphError);
  }

  TEST_CASE("lifecycle misuse raises graph errors") {
    Mat a(1, 1);
    a << 1.0;
    ad::Graph g;
    ad::NodeId an = g.input("a", 1, 1, true);
    ad::NodeId out = g.sum(an);
    CHECK_THROWS_AS(g.value(out), ad::GraphError);          // value before forward
    CHECK_THROWS_AS(g.backward(out), ad::GraphError);       // backward before forward
    CHECK_THROWS_AS(g.forward(), ad::GraphError);           // unbound input
    g.bind(an, &a);
    g.forward();
    CHECK_THROWS_AS(g.grad(an), ad::GraphError);            // grad before backward
    g.backward(out);
    CHECK(g.grad(an)(0, 0) == 1.0);
    CHECK_THROWS_AS(g.grad("missing"), ad::GraphError);
    CHECK_THROWS_AS(g.bind("missing", &a), ad::GraphError);
  }

  TEST_CASE("non-scalar and non-depending backward targets are rejected") {
    Mat a(2, 2);
    a.setOnes();
    ad::Graph g;
    ad::NodeId an = g.input("a", 2, 2);  // no gradient tracking
    g.bind(an, &a);
    ad::NodeId big = g.mul(an, an);
    ad::NodeId out = g.sum(big);
    g.forward();
    CHECK_THROWS_AS(g.backward(big), ad::GraphError);  // not scalar
    CHECK_THROWS_AS(g.backward(out), ad::GraphError);  // nothing tracks gradients
  }

  TEST_CASE("non-finite bound values are rejected at forward") {
    Mat a(1, 2);
    a << 1.0, std::numeric_limits<double>::quiet_NaN();
    ad::Graph g;
    ad::NodeId an = g.input("a", 1, 2);
    g.bind(an, &a);
    g.sum(an);
    CHECK_THROWS_AS(g.forward(), ad::GraphError);
  }
}
