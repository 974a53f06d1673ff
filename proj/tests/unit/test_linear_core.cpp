#include "doctest.h"
#include "support.hpp"

#include "twoway/error.hpp"
#include "twoway/linear_core.hpp"

#include <cmath>
#include <limits>

using namespace twoway;
using testing::naive_sigma;
using testing::rel_err;

namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();

Eigen::MatrixXd inverse(const Eigen::MatrixXd& a) { return a.fullPivLu().inverse(); }

}  // namespace

TEST_CASE("zero variances give Sigma = M") {
  std::mt19937_64 rng(1);
  const DesignSet d(4, 3, testing::random_counts(rng, 4, 3, 6, 0.2));
  const SigmaContext ctx(d, 0.0, 0.0);
  const Eigen::VectorXd v = testing::random_vector(rng, d.num_observed());
  CHECK((ctx.solve(v) - d.weights().cwiseProduct(v)).norm() < 1e-14);
  CHECK((ctx.shrink_apply(v) - v).norm() == 0.0);
  CHECK(ctx.trace_sigma_inv_msq() == doctest::Approx(d.m_diag().sum()));
  CHECK(ctx.log_det() == doctest::Approx(d.m_diag().array().log().sum()));
}

TEST_CASE("2x2 unit design against a hand-built inverse") {
  const DesignSet d(2, 2, Eigen::MatrixXi::Ones(2, 2));
  const SigmaContext ctx(d, 1.0, 1.0);
  Eigen::MatrixXd s(4, 4);
  s << 3, 1, 1, 0,  //
      1, 3, 0, 1,   //
      1, 0, 3, 1,   //
      0, 1, 1, 3;
  const Eigen::VectorXd ones = Eigen::VectorXd::Ones(4);
  CHECK(rel_err(ctx.solve(ones), inverse(s) * ones) < 1e-12);
  CHECK(ctx.trace_sigma_inv_msq() == doctest::Approx(inverse(s).trace()).epsilon(1e-12));
  CHECK(ctx.log_det() == doctest::Approx(std::log(s.determinant())).epsilon(1e-12));
}

TEST_CASE("fast and dense paths agree with a naive oracle") {
  std::mt19937_64 rng(2);
  std::uniform_real_distribution<double> lam(0.0, 5.0);
  for (int rep = 0; rep < 60; ++rep) {
    const int r = 2 + rep % 7;
    const int c = 2 + (rep * 3) % 6;
    const DesignSet d(r, c, testing::random_counts(rng, r, c, 8, rep % 2 ? 0.3 : 0.0));
    const double la = lam(rng);
    const double lb = lam(rng);
    const Eigen::MatrixXd s = naive_sigma(d, la, lb);
    const Eigen::MatrixXd si = inverse(s);
    const Eigen::VectorXd m = d.m_diag();
    const int n = d.num_observed();
    const Eigen::VectorXd v = testing::random_vector(rng, n);
    for (SolveMode mode : {SolveMode::fast, SolveMode::dense}) {
      const SigmaContext ctx(d, la, lb, mode);
      CHECK(rel_err(ctx.solve(v), si * v) < 1e-10);
      CHECK(rel_err(ctx.shrink_apply(v), m.asDiagonal() * (si * v)) < 1e-10);
      const Eigen::MatrixXd msq = m.array().square().matrix().asDiagonal();
      CHECK(rel_err(ctx.trace_sigma_inv_msq(), (si * msq).trace()) < 1e-10);
      CHECK(rel_err(ctx.log_det(), std::log(s.determinant())) < 1e-10);
      CHECK(rel_err(ctx.dense_sigma(), s) < 1e-14);
      const QLoss q = QLoss::projected(d);
      const Eigen::MatrixXd qd = q.dense();
      const double want = (si * m.asDiagonal() * qd * m.asDiagonal()).trace();
      CHECK(rel_err(ctx.trace_sigma_inv_mqm(q), want) < 1e-10);
      const QLoss qi = QLoss::identity(d);
      CHECK(rel_err(ctx.trace_sigma_inv_mqm(qi), ctx.trace_sigma_inv_msq()) < 1e-12);
    }
  }
}

TEST_CASE("block traces against explicit indicator matrices") {
  std::mt19937_64 rng(3);
  for (int rep = 0; rep < 20; ++rep) {
    const int r = 2 + rep % 5;
    const int c = 3 + rep % 4;
    const DesignSet d(r, c, testing::random_counts(rng, r, c, 5, 0.25));
    const double la = 0.1 + rep * 0.2;
    const double lb = 2.0 / (1 + rep);
    const Eigen::MatrixXd si = inverse(naive_sigma(d, la, lb));
    const Eigen::MatrixXd z(d.z());
    const Eigen::MatrixXd za = z.middleCols(1, r);
    const Eigen::MatrixXd zb = z.middleCols(1 + r, c);
    const Eigen::MatrixXd m = d.m_diag().asDiagonal();
    const QLoss q = QLoss::projected(d);
    const Eigen::MatrixXd mqm = m * q.dense() * m;
    for (SolveMode mode : {SolveMode::fast, SolveMode::dense}) {
      const SigmaContext ctx(d, la, lb, mode);
      const BlockTraces plain = ctx.trace_blocks();
      CHECK(rel_err(plain.sigma_inv_a, (si * za * za.transpose()).trace()) < 1e-9);
      CHECK(rel_err(plain.sigma_inv_b, (si * zb * zb.transpose()).trace()) < 1e-9);
      CHECK(rel_err(plain.sigma_inv_a_mqm, (si * za * za.transpose() * si * m * m).trace()) < 1e-9);
      CHECK(rel_err(plain.sigma_inv_b_mqm, (si * zb * zb.transpose() * si * m * m).trace()) < 1e-9);
      const BlockTraces withq = ctx.trace_blocks(&q);
      CHECK(rel_err(withq.sigma_inv_a_mqm, (si * za * za.transpose() * si * mqm).trace()) < 1e-9);
      CHECK(rel_err(withq.sigma_inv_b_mqm, (si * zb * zb.transpose() * si * mqm).trace()) < 1e-9);
    }
  }
}

TEST_CASE("unit complete design at zero variances has tr(S^-1 Z_A Z_A^T) = rc") {
  const DesignSet d(3, 4, Eigen::MatrixXi::Ones(3, 4));
  const BlockTraces bt = SigmaContext(d, 0.0, 0.0).trace_blocks();
  CHECK(bt.sigma_inv_a == doctest::Approx(12.0));
  CHECK(bt.sigma_inv_b == doctest::Approx(12.0));
}

TEST_CASE("transposing the layout swaps the row and column traces") {
  std::mt19937_64 rng(4);
  const Eigen::MatrixXi k = testing::random_counts(rng, 4, 6, 5, 0.2);
  const Eigen::MatrixXi kt = k.transpose();
  const DesignSet d(4, 6, k);
  const DesignSet dt(6, 4, kt);
  const BlockTraces a = SigmaContext(d, 0.7, 2.5).trace_blocks();
  const BlockTraces b = SigmaContext(dt, 2.5, 0.7).trace_blocks();
  CHECK(a.sigma_inv_a == doctest::Approx(b.sigma_inv_b).epsilon(1e-10));
  CHECK(a.sigma_inv_b == doctest::Approx(b.sigma_inv_a).epsilon(1e-10));
  CHECK(a.sigma_inv_a_mqm == doctest::Approx(b.sigma_inv_b_mqm).epsilon(1e-10));
}

TEST_CASE("no-shrinkage limit is the weighted residual maker") {
  std::mt19937_64 rng(5);
  const DesignSet d(5, 4, testing::random_counts(rng, 5, 4, 6, 0.3));
  const Eigen::MatrixXd z(d.z());
  const Eigen::MatrixXd w = d.weights().asDiagonal();
  const Eigen::MatrixXd proj =
      z * (z.transpose() * w * z).completeOrthogonalDecomposition().pseudoInverse() * z.transpose() * w;
  const Eigen::VectorXd x = testing::random_vector(rng, d.num_observed());
  const Eigen::VectorXd want = x - proj * x;

  const SigmaContext limit(d, kInf, kInf);
  CHECK(limit.no_shrinkage_limit());
  CHECK((limit.shrink_apply(x) - want).norm() < 1e-10);
  CHECK(std::isinf(limit.log_det()));

  // Large finite variances approach the same operator.
  const SigmaContext dense_big(d, 1e8, 1e8, SolveMode::dense);
  CHECK((dense_big.shrink_apply(x) - want).norm() < 1e-6);
  const SigmaContext fast_big(d, 1e8, 1e8);
  CHECK((fast_big.shrink_apply(x) - want).norm() < 1e-6);
  CHECK(limit.trace_sigma_inv_msq() == doctest::Approx(fast_big.trace_sigma_inv_msq()).epsilon(1e-6));
}

TEST_CASE("one infinite variance is capped") {
  std::mt19937_64 rng(6);
  const DesignSet d(4, 4, testing::random_counts(rng, 4, 4, 3));
  const SigmaContext ctx(d, kInf, 1.0);
  CHECK_FALSE(ctx.no_shrinkage_limit());
  const Eigen::VectorXd x = testing::random_vector(rng, d.num_observed());
  const SigmaContext capped(d, kLambdaCap, 1.0);
  CHECK((ctx.shrink_apply(x) - capped.shrink_apply(x)).norm() == 0.0);
  CHECK(std::isfinite(ctx.log_det()));
}

TEST_CASE("invalid inputs") {
  const DesignSet d(2, 2, Eigen::MatrixXi::Ones(2, 2));
  CHECK_THROWS_AS(SigmaContext(d, -1.0, 0.0), ValidationError);
  CHECK_THROWS_AS(SigmaContext(d, std::nan(""), 0.0), ValidationError);
  const SigmaContext ctx(d, 1.0, 1.0);
  CHECK_THROWS_AS(ctx.solve(Eigen::VectorXd(Eigen::VectorXd::Ones(3))), ValidationError);
  CHECK_THROWS_AS(ctx.shrink_apply(Eigen::VectorXd(Eigen::VectorXd::Ones(5))), ValidationError);
  const SigmaContext dense(d, 1.0, 1.0, SolveMode::dense);
  CHECK_THROWS_AS(dense.effect_operator(), ValidationError);
}

TEST_CASE("Sigma ordering and W contraction") {
  std::mt19937_64 rng(7);
  for (int rep = 0; rep < 30; ++rep) {
    const DesignSet d(4, 5, testing::random_counts(rng, 4, 5, 6, 0.2));
    const Eigen::VectorXd v = testing::random_vector(rng, d.num_observed());
    const double la = 0.3 * rep;
    const double lb = 0.1 * rep;
    const double small = v.dot(SigmaContext(d, la, lb).solve(v));
    const double big = v.dot(SigmaContext(d, la + 0.5, lb + 0.2).solve(v));
    CHECK(big <= small + 1e-12);

    const Eigen::VectorXd sq = d.m_diag().cwiseSqrt();
    const Eigen::MatrixXd w = sq.asDiagonal() * inverse(naive_sigma(d, la, lb)) * sq.asDiagonal();
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(0.5 * (w + w.transpose()));
    CHECK(es.eigenvalues().minCoeff() > 0.0);
    CHECK(es.eigenvalues().maxCoeff() <= 1.0 + 1e-12);
  }
}
