#include "doctest.h"
#include "support.hpp"

#include "twoway/error.hpp"
#include "twoway/estimators.hpp"
#include "twoway/risk.hpp"

#include <cmath>
#include <limits>

using namespace twoway;
using testing::naive_sigma;
using testing::rel_err;

namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();

// URE evaluated from explicit matrices.
double dense_ure(const DesignSet& d, const Eigen::VectorXd& y, double mu, double s2, double la,
                 double lb, const Eigen::MatrixXd& q) {
  const Eigen::MatrixXd si = naive_sigma(d, la, lb).inverse();
  const Eigen::MatrixXd m = d.m_diag().asDiagonal();
  const Eigen::VectorXd g = m * si * (y - Eigen::VectorXd::Constant(y.size(), mu));
  const double v = s2 * (q * m).trace() - 2.0 * s2 * (si * m * q * m).trace() + g.dot(q * g);
  return v / d.num_cells();
}

Eigen::VectorXd additive(const DesignSet& d, double mu, const Eigen::VectorXd& a,
                         const Eigen::VectorXd& b) {
  Eigen::VectorXd eta(d.num_observed());
  for (int k = 0; k < d.num_observed(); ++k) eta(k) = mu + a(d.cells()[k].row) + b(d.cells()[k].col);
  return eta;
}

}  // namespace

TEST_CASE("WLS reproduces noise-free additive data") {
  std::mt19937_64 rng(21);
  const DesignSet d(5, 6, testing::random_counts(rng, 5, 6, 7, 0.35));
  const Eigen::VectorXd a = testing::random_vector(rng, 5);
  const Eigen::VectorXd b = testing::random_vector(rng, 6);
  const Eigen::VectorXd y = additive(d, 2.0, a, b);
  CHECK((wls_fit(d, y) - y).norm() < 1e-10);
  const Eigen::VectorXd full = complete_means(d, wls_fit(d, y));
  for (int i = 0; i < 5; ++i)
    for (int j = 0; j < 6; ++j) CHECK(full(i * 6 + j) == doctest::Approx(2.0 + a(i) + b(j)));
}

TEST_CASE("WLS on a balanced unit design is the two-way ANOVA fit") {
  std::mt19937_64 rng(22);
  const int r = 4, c = 5;
  const DesignSet d(r, c, Eigen::MatrixXi::Ones(r, c));
  const Eigen::VectorXd y = testing::random_vector(rng, r * c);
  const Eigen::VectorXd fit = wls_fit(d, y);
  const Eigen::MatrixXd g = Eigen::Map<const Eigen::Matrix<double, -1, -1, Eigen::RowMajor>>(y.data(), r, c);
  for (int i = 0; i < r; ++i)
    for (int j = 0; j < c; ++j) {
      const double want = g.row(i).mean() + g.col(j).mean() - g.mean();
      CHECK(fit(i * c + j) == doctest::Approx(want).epsilon(1e-12));
    }
  // weighted residual is orthogonal to col(Z)
  const Eigen::VectorXd resid = d.weights().cwiseProduct(y - fit);
  CHECK(d.zt_times(resid).norm() < 1e-10);
}

TEST_CASE("WLS residual is M^-1 orthogonal to col(Z) on unbalanced data") {
  std::mt19937_64 rng(23);
  const DesignSet d(6, 4, testing::random_counts(rng, 6, 4, 9, 0.2));
  const Eigen::VectorXd y = testing::random_vector(rng, d.num_observed(), 2.0);
  const Eigen::VectorXd resid = d.weights().cwiseProduct(y - wls_fit(d, y));
  CHECK(d.zt_times(resid).norm() < 1e-9);
}

TEST_CASE("3x3 with an empty cell: completion recovers the missing mean") {
  Eigen::MatrixXi k = Eigen::MatrixXi::Constant(3, 3, 2);
  k(1, 2) = 0;
  const DesignSet d(3, 3, k);
  Eigen::VectorXd a(3), b(3);
  a << 1.0, -2.0, 0.5;
  b << 0.3, 0.0, -1.1;
  const Eigen::VectorXd eta = additive(d, 4.0, a, b);
  const Eigen::VectorXd full = complete_means(d, wls_fit(d, eta));
  CHECK(full(1 * 3 + 2) == doctest::Approx(4.0 - 2.0 - 1.1));
  CHECK(complete_means(d, Eigen::VectorXd::Zero(8)).norm() == 0.0);
}

TEST_CASE("complete design: completion of a fitted vector is the identity") {
  std::mt19937_64 rng(24);
  const DesignSet d(4, 4, testing::random_counts(rng, 4, 4, 3));
  const Eigen::VectorXd fit = wls_fit(d, testing::random_vector(rng, 16));
  CHECK((complete_means(d, fit) - fit).norm() < 1e-10);
}

TEST_CASE("Bayes rule limits") {
  std::mt19937_64 rng(25);
  const DesignSet d(5, 5, testing::random_counts(rng, 5, 5, 4, 0.2));
  const Eigen::VectorXd y = testing::random_vector(rng, d.num_observed());
  const Eigen::VectorXd at_zero = bayes_estimate(SigmaContext(d, 0.0, 0.0), y, 3.0);
  CHECK((at_zero.array() - 3.0).abs().maxCoeff() < 1e-14);

  const double big = tilde_to_lambda(1e-6);
  const Eigen::VectorXd near_limit = bayes_estimate(SigmaContext(d, big, big), y, 0.7);
  CHECK((near_limit - wls_fit(d, y)).cwiseAbs().maxCoeff() <= 1e-4);
  const Eigen::VectorXd limit = bayes_estimate(SigmaContext(d, kInf, kInf), y, 0.7);
  CHECK((limit - wls_fit(d, y)).cwiseAbs().maxCoeff() <= 1e-10);
}

TEST_CASE("Bayes rule on the 2x2 unit design") {
  const DesignSet d(2, 2, Eigen::MatrixXi::Ones(2, 2));
  Eigen::VectorXd y(4);
  y << 1, 0, 0, -1;
  const Eigen::MatrixXd si = naive_sigma(d, 1.0, 1.0).inverse();
  const Eigen::VectorXd want = y - si * y;
  CHECK((bayes_estimate(SigmaContext(d, 1.0, 1.0), y, 0.0) - want).norm() < 1e-12);
}

TEST_CASE("URE matches the explicit formula in every loss mode") {
  std::mt19937_64 rng(26);
  for (int rep = 0; rep < 30; ++rep) {
    const int r = 3 + rep % 4, c = 2 + rep % 5;
    const DesignSet d(r, c, testing::random_counts(rng, r, c, 6, rep % 3 ? 0.25 : 0.0));
    const Eigen::VectorXd y = testing::random_vector(rng, d.num_observed(), 2.0);
    const double la = 0.05 + 0.3 * rep, lb = 3.0 / (1 + rep), mu = 0.1 * rep - 1.0, s2 = 0.5 + 0.1 * rep;
    for (LossMode mode : {LossMode::identity, LossMode::weighted, LossMode::projected}) {
      const QLoss q = QLoss::make(d, mode);
      const double want = dense_ure(d, y, mu, s2, la, lb, q.dense());
      CHECK(rel_err(ure_value(SigmaContext(d, la, lb), y, mu, s2, q), want) < 1e-9);
      CHECK(rel_err(ure_value(SigmaContext(d, la, lb, SolveMode::dense), y, mu, s2, q), want) < 1e-9);
    }
  }
}

TEST_CASE("URE special cases") {
  std::mt19937_64 rng(27);
  const DesignSet d(4, 5, testing::random_counts(rng, 4, 5, 5));
  const Eigen::VectorXd y = testing::random_vector(rng, 20, 3.0);
  const QLoss q = QLoss::identity(d);
  const double s2 = 1.7, mu = 0.4;
  // Sigma = M: the unbiased risk estimate of the constant estimator mu 1.
  const double constant = ((y.array() - mu).square().sum() - s2 * d.m_diag().sum()) / 20.0;
  CHECK(ure_value(SigmaContext(d, 0.0, 0.0), y, mu, s2, q) == doctest::Approx(constant).epsilon(1e-12));

  // Both variances infinite: the unbiased risk estimate of WLS,
  // -s2 tr(M) + 2 s2 tr(P_W M) + ||(I - P_W) y||^2.
  const Eigen::MatrixXd z(d.z());
  const Eigen::MatrixXd w = d.weights().asDiagonal();
  const Eigen::MatrixXd pw =
      z * (z.transpose() * w * z).completeOrthogonalDecomposition().pseudoInverse() * z.transpose() * w;
  const Eigen::VectorXd resid = y - pw * y;
  const double tr_pm = (pw * d.m_diag().asDiagonal()).trace();
  const double wls_risk = (-s2 * d.m_diag().sum() + 2.0 * s2 * tr_pm + resid.squaredNorm()) / 20.0;
  CHECK(ure_value(SigmaContext(d, kInf, kInf), y, mu, s2, q) == doctest::Approx(wls_risk).epsilon(1e-10));
  // and does not depend on mu
  CHECK(ure_value(SigmaContext(d, kInf, kInf), y, -5.0, s2, q) == doctest::Approx(wls_risk).epsilon(1e-10));
}

TEST_CASE("URE mu profile") {
  std::mt19937_64 rng(28);
  const DesignSet d(5, 4, testing::random_counts(rng, 5, 4, 6, 0.2));
  const int n = d.num_observed();
  const QLoss q = QLoss::projected(d);
  const SigmaContext ctx(d, 0.8, 1.9);
  CHECK(profile_mu_ure(ctx, Eigen::VectorXd::Constant(n, 2.5), q) == doctest::Approx(2.5));

  const Eigen::VectorXd y = testing::random_vector(rng, n, 2.0);
  CHECK(profile_mu_ure(SigmaContext(d, 0.0, 0.0), y, QLoss::identity(d)) == doctest::Approx(y.mean()));

  const double mu_hat = profile_mu_ure(ctx, y, q);
  double best = kInf, arg = 0.0;
  const double step = 1e-3;
  for (double mu = -20.0; mu <= 20.0; mu += step) {
    const double v = ure_value(ctx, y, mu, 1.0, q);
    if (v < best) {
      best = v;
      arg = mu;
    }
  }
  CHECK(std::abs(arg - mu_hat) <= step);
  // derivative vanishes at the profile
  const double h = 1e-4;
  const double fd = (ure_value(ctx, y, mu_hat + h, 1.0, q) - ure_value(ctx, y, mu_hat - h, 1.0, q)) / (2 * h);
  CHECK(std::abs(fd) <= 1e-6 * std::abs(ure_value(ctx, y, mu_hat, 1.0, q)));

  CHECK_THROWS_AS(profile_mu_ure(SigmaContext(d, kInf, kInf), y, q), NumericError);
}

TEST_CASE("marginal likelihood") {
  std::mt19937_64 rng(29);
  const DesignSet unit(3, 3, Eigen::MatrixXi::Ones(3, 3));
  const Eigen::VectorXd y = testing::random_vector(rng, 9);
  double want = 0.0;
  for (int k = 0; k < 9; ++k) want += -0.5 * std::log(2 * M_PI) - 0.5 * (y(k) - 0.3) * (y(k) - 0.3);
  CHECK(marginal_loglik(SigmaContext(unit, 0.0, 0.0), y, 0.3, 1.0) == doctest::Approx(want));

  for (int rep = 0; rep < 20; ++rep) {
    const DesignSet d(4, 6, testing::random_counts(rng, 4, 6, 5, 0.3));
    const int n = d.num_observed();
    const Eigen::VectorXd v = testing::random_vector(rng, n, 2.0);
    const double la = 0.2 * rep + 0.01, lb = 1.0 / (rep + 1), s2 = 1.3;
    const Eigen::MatrixXd s = naive_sigma(d, la, lb);
    const Eigen::VectorXd dv = v - Eigen::VectorXd::Constant(n, 0.5);
    const double dense = -0.5 * n * std::log(2 * M_PI * s2) - 0.5 * std::log(s.determinant()) -
                         0.5 * dv.dot(s.inverse() * dv) / s2;
    for (SolveMode mode : {SolveMode::fast, SolveMode::dense})
      CHECK(rel_err(marginal_loglik(SigmaContext(d, la, lb, mode), v, 0.5, s2), dense) < 1e-9);
    const SigmaContext ctx(d, la, lb);
    const Eigen::VectorXd shifted = v.array() + 3.0;
    CHECK(marginal_loglik(ctx, shifted, 3.5, s2) == doctest::Approx(marginal_loglik(ctx, v, 0.5, s2)));
    // GLS profile maximizes over mu
    const double mu = profile_mu_ml(ctx, v);
    CHECK(marginal_loglik(ctx, v, mu, s2) >= marginal_loglik(ctx, v, mu + 1e-3, s2));
    CHECK(marginal_loglik(ctx, v, mu, s2) >= marginal_loglik(ctx, v, mu - 1e-3, s2));
  }
  CHECK(std::isinf(marginal_loglik(SigmaContext(unit, kInf, kInf), y, 0.0, 1.0)));
}

TEST_CASE("URE fit: self-consistency and grid dominance") {
  std::mt19937_64 rng(30);
  const CellTable t = testing::random_table(rng, 6, 5, 5, 0.2, 0.8);
  const ShrinkageFit f = fit_ure(t);
  CHECK(f.loss == LossMode::projected);
  const DesignSet d(t);
  const QLoss q = QLoss::make(d, f.loss);
  const Eigen::VectorXd y = t.observed_means();
  const double again = ure_value(SigmaContext(d, f.hp.lambda_a, f.hp.lambda_b), y, f.hp.mu, 0.8, q);
  CHECK(again == f.objective);
  CHECK(f.hp.mu >= f.mu_lower);
  CHECK(f.hp.mu <= f.mu_upper);
  CHECK((f.eta_complete - complete_means(d, f.eta_obs)).norm() < 1e-12);
  // never worse than the WLS limit or the constant corner
  CHECK(f.objective <= fit_wls(t).objective + 1e-12);
  const auto [lo, hi] = quantile_bounds(t, 0.05);
  for (int i = 0; i <= 32; i += 4)
    for (int j = 0; j <= 32; j += 4) {
      const SigmaContext ctx(d, tilde_to_lambda(i / 32.0), tilde_to_lambda(j / 32.0));
      for (double mu : {lo, 0.5 * (lo + hi), hi}) CHECK(f.objective <= ure_value(ctx, y, mu, 0.8, q) + 1e-12);
    }
}

TEST_CASE("ML fit: objective is the log-likelihood and beats the grid") {
  std::mt19937_64 rng(31);
  const CellTable t = testing::random_table(rng, 5, 5, 4, 0.0, 1.0);
  const ShrinkageFit f = fit_ml(t);
  const DesignSet d(t);
  const Eigen::VectorXd y = t.observed_means();
  CHECK(f.objective == marginal_loglik(SigmaContext(d, f.hp.lambda_a, f.hp.lambda_b), y, f.hp.mu, 1.0));
  for (int i = 1; i <= 32; i += 3)
    for (int j = 1; j <= 32; j += 3) {
      const SigmaContext ctx(d, tilde_to_lambda(i / 32.0), tilde_to_lambda(j / 32.0));
      const double mu = std::clamp(profile_mu_ml(ctx, y), f.mu_lower, f.mu_upper);
      CHECK(f.objective >= marginal_loglik(ctx, y, mu, 1.0) - 1e-12);
    }
}

TEST_CASE("shrinkage strength follows the effect size") {
  std::mt19937_64 rng(32);
  const int r = 20, c = 20;
  std::normal_distribution<double> noise(0.0, 1.0);
  int small = 0;
  const int reps = 10;
  for (int rep = 0; rep < reps; ++rep) {
    Eigen::MatrixXd y(r, c);
    for (int i = 0; i < r; ++i)
      for (int j = 0; j < c; ++j) y(i, j) = noise(rng);
    const CellTable t(Eigen::MatrixXi::Ones(r, c), y, 1.0);
    const ShrinkageFit f = fit_ure(t);
    if (f.hp.lambda_a <= 0.05 && f.hp.lambda_b <= 0.05) ++small;
    const ShrinkageFit m = fit_ml(t);
    CHECK(m.hp.lambda_a <= 0.05);
  }
  CHECK(small >= 9);

  Eigen::VectorXd alpha(r);
  for (int i = 0; i < r; ++i) alpha(i) = 10.0 * noise(rng);
  Eigen::MatrixXd y(r, c);
  for (int i = 0; i < r; ++i)
    for (int j = 0; j < c; ++j) y(i, j) = alpha(i) + noise(rng);
  const ShrinkageFit f = fit_ure(CellTable(Eigen::MatrixXi::Ones(r, c), y, 1.0));
  CHECK(f.tilde_a <= 0.2);
}

TEST_CASE("estimating equations vanish at interior optima and match finite differences") {
  std::mt19937_64 rng(33);
  int interior = 0;
  for (int rep = 0; rep < 12; ++rep) {
    const int r = 8 + rep % 3, c = 7 + rep % 4;
    const Eigen::MatrixXi k = testing::random_counts(rng, r, c, 6, rep % 2 ? 0.2 : 0.0);
    const DesignSet d(r, c, k);
    const Eigen::VectorXd a = testing::random_vector(rng, r, 1.0);
    const Eigen::VectorXd b = testing::random_vector(rng, c, 0.7);
    Eigen::VectorXd y = additive(d, 1.0, a, b);
    std::normal_distribution<double> nd(0.0, 1.0);
    for (int i = 0; i < y.size(); ++i) y(i) += nd(rng) * std::sqrt(d.m_diag()(i));
    const QLoss q = QLoss::default_for(d);
    for (Method method : {Method::ure, Method::ml}) {
      const ShrinkageFit f = method == Method::ure ? fit_ure(d, q, y, 1.0) : fit_ml(d, q, y, 1.0);
      REQUIRE(f.residuals.has_value());
      const EstimatingResiduals& res = *f.residuals;
      if (f.interior()) {
        ++interior;
        CHECK(std::abs(res.res_a) <= 1e-4 * res.scale_a);
        CHECK(std::abs(res.res_b) <= 1e-4 * res.scale_b);
        CHECK(std::abs(res.res_mu) <= 1e-4 * res.scale_mu);
      }
      if (f.hp.lambda_a == 0.0) CHECK(res.res_a >= -1e-4 * res.scale_a);
      if (f.hp.lambda_b == 0.0) CHECK(res.res_b >= -1e-4 * res.scale_b);
    }
    // derivative relation at an arbitrary point
    const double la = 0.3 + 0.1 * rep, lb = 0.9, mu = 0.8, h = 1e-5 * la;
    for (Method method : {Method::ure, Method::ml}) {
      const auto value = [&](double x) {
        const SigmaContext ctx(d, x, lb);
        return method == Method::ure ? ure_value(ctx, y, mu, 1.0, q) : marginal_loglik(ctx, y, mu, 1.0);
      };
      const double fd = (value(la + h) - value(la - h)) / (2 * h);
      const EstimatingResiduals res = estimating_eq_residuals(SigmaContext(d, la, lb), y, mu, 1.0, method, q);
      const double analytic = method == Method::ure ? 2.0 * res.res_a / d.num_cells() : -0.5 * res.res_a;
      CHECK(std::abs(fd - analytic) <= 1e-5 * std::max(std::abs(analytic), 1e-3));
    }
  }
  CHECK(interior > 0);
}

TEST_CASE("oracle fit dominates") {
  std::mt19937_64 rng(34);
  for (int rep = 0; rep < 6; ++rep) {
    const DesignSet d(7, 6, testing::random_counts(rng, 7, 6, 5, rep % 2 ? 0.25 : 0.0));
    const Eigen::VectorXd eta = additive(d, 0.5, testing::random_vector(rng, 7), testing::random_vector(rng, 6, 0.3));
    Eigen::VectorXd y = eta;
    std::normal_distribution<double> nd(0.0, 1.0);
    for (int i = 0; i < y.size(); ++i) y(i) += nd(rng) * std::sqrt(d.m_diag()(i));
    const QLoss q = QLoss::default_for(d);
    const ShrinkageFit u = fit_ure(d, q, y, 1.0);
    const ShrinkageFit m = fit_ml(d, q, y, 1.0);
    const ShrinkageFit o = oracle_fit(d, q, y, 1.0, eta, {}, {u.hp, m.hp});
    CHECK(o.objective == loss_q(o.eta_obs, eta, q));
    CHECK(o.objective <= loss_q(u.eta_obs, eta, q) + 1e-8);
    CHECK(o.objective <= loss_q(m.eta_obs, eta, q) + 1e-8);
    std::uniform_real_distribution<double> unit(0.0, 1.0);
    for (int probe = 0; probe < 100; ++probe) {
      const SigmaContext ctx(d, tilde_to_lambda(unit(rng)), tilde_to_lambda(unit(rng)));
      const double mu = o.mu_lower + unit(rng) * (o.mu_upper - o.mu_lower);
      CHECK(o.objective <= loss_q(bayes_estimate(ctx, y, mu), eta, q) + 1e-8);
    }
  }
}

TEST_CASE("oracle fit on noise-free data interpolates") {
  std::mt19937_64 rng(35);
  const DesignSet d(5, 5, testing::random_counts(rng, 5, 5, 3));
  const Eigen::VectorXd eta = additive(d, 0.0, testing::random_vector(rng, 5), testing::random_vector(rng, 5));
  const ShrinkageFit o = oracle_fit(d, QLoss::identity(d), eta, 1.0, eta);
  CHECK(o.objective <= 1e-6);
}

TEST_CASE("location equivariance") {
  std::mt19937_64 rng(36);
  const CellTable t = testing::random_table(rng, 6, 6, 4, 0.0);
  const ShrinkageFit f = fit_ure(t);
  const Eigen::VectorXd shifted = t.observed_means().array() + 10.0;
  const ShrinkageFit g = fit_ure(t.with_observed_means(shifted));
  CHECK(g.hp.mu == doctest::Approx(f.hp.mu + 10.0).epsilon(1e-8));
  CHECK(g.tilde_a == doctest::Approx(f.tilde_a).epsilon(1e-6));
  CHECK(g.tilde_b == doctest::Approx(f.tilde_b).epsilon(1e-6));
  CHECK((g.eta_obs.array() - 10.0 - f.eta_obs.array()).abs().maxCoeff() < 1e-6);
}

TEST_CASE("fits reject disconnected tables and name the components") {
  Eigen::MatrixXi k = Eigen::MatrixXi::Zero(4, 4);
  k.topLeftCorner(2, 2).setOnes();
  k.bottomRightCorner(2, 2).setOnes();
  const CellTable t(k, Eigen::MatrixXd::Zero(4, 4), 1.0, {"a", "b", "c", "d"}, {"w", "x", "y", "z"});
  CHECK_THROWS_AS(fit_ure(t), DisconnectedDesignError);
  CHECK_THROWS_AS(fit_ml(t), DisconnectedDesignError);
  CHECK_THROWS_AS(fit_wls(t), DisconnectedDesignError);
}

TEST_CASE("method names") {
  CHECK(parse_method("ure") == Method::ure);
  CHECK(parse_method("ml") == Method::ml);
  CHECK(parse_method("wls") == Method::wls);
  CHECK_THROWS_AS(parse_method("reml"), ValidationError);
  CHECK(to_string(Method::ml) == "ml");
}

TEST_CASE("weighted-loss transform") {
  std::mt19937_64 rng(37);
  const CellTable unit(Eigen::MatrixXi::Ones(3, 3), Eigen::MatrixXd::Random(3, 3), 1.0);
  const WeightedProblem pu = weighted_transform(unit);
  CHECK((pu.y - unit.observed_means()).norm() == 0.0);
  CHECK((pu.z - Eigen::MatrixXd(DesignSet(unit).z())).norm() == 0.0);

  const CellTable t = testing::random_table(rng, 4, 5, 7);
  const DesignSet d(t);
  const WeightedProblem p = weighted_transform(t);
  const Eigen::VectorXd e1 = testing::random_vector(rng, 20), e2 = testing::random_vector(rng, 20);
  const double transformed = (p.scale.cwiseProduct(e1) - p.scale.cwiseProduct(e2)).squaredNorm() / 20.0;
  CHECK(std::abs(loss_weighted(e1, e2, d) - transformed) <= 1e-12);

  const Eigen::MatrixXd w = transformed_shrinkage_matrix(p, 0.7, 1.3);
  const Eigen::MatrixXd raw = naive_sigma(d, 0.7, 1.3).inverse();
  const Eigen::MatrixXd unsym = d.m_diag().cwiseSqrt().asDiagonal() * raw * d.m_diag().cwiseSqrt().asDiagonal();
  CHECK((unsym - unsym.transpose()).cwiseAbs().maxCoeff() <= 1e-12);
  CHECK((w - unsym).norm() < 1e-10);

  const HyperParams hp{0.2, 0.7, 1.3};
  const double direct = ure_value(SigmaContext(d, 0.7, 1.3), t.observed_means(), 0.2, 1.0, QLoss::weighted(d));
  CHECK(transformed_ure(p, hp, 1.0) == doctest::Approx(direct).epsilon(1e-10));

  Eigen::MatrixXi k = Eigen::MatrixXi::Ones(3, 3);
  k(0, 0) = 0;
  CHECK_THROWS_AS(weighted_transform(CellTable(k, Eigen::MatrixXd::Zero(3, 3), 1.0)), ValidationError);
}
