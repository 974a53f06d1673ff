#include "twoway/estimators.hpp"

#include "twoway/error.hpp"
#include "twoway/risk.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

namespace twoway {

namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();
// A profile denominator below this fraction of its lambda = 0 value means mu
// no longer moves the objective.
constexpr double kDegenerate = 1e-13;

void require_length(const DesignSet& design, const Eigen::VectorXd& v, const char* what) {
  if (v.size() != design.num_observed()) {
    throw ValidationError(std::string(what) + " must have one entry per observed cell (" +
                          std::to_string(design.num_observed()) + "), got " +
                          std::to_string(v.size()));
  }
}

void require_sigma2(double sigma2) {
  if (!(sigma2 > 0.0) || !std::isfinite(sigma2)) throw ValidationError("sigma2 must be positive and finite");
}

std::optional<double> try_profile_ure(const SigmaContext& ctx, const Eigen::VectorXd& y,
                                      const QLoss& q) {
  const Eigen::VectorXd ones = Eigen::VectorXd::Ones(y.size());
  const Eigen::VectorXd g0 = ctx.shrink_apply(ones);
  const double den = q.quad(g0);
  if (!(den > kDegenerate * q.quad(ones))) return std::nullopt;
  return q.inner(g0, ctx.shrink_apply(y)) / den;
}

std::optional<double> try_profile_ml(const SigmaContext& ctx, const Eigen::VectorXd& y) {
  const Eigen::VectorXd ones = Eigen::VectorXd::Ones(y.size());
  const Eigen::VectorXd s0 = ctx.solve(ones);
  const double den = s0.sum();
  if (!(den > kDegenerate * ctx.design().weights().sum())) return std::nullopt;
  return s0.dot(y) / den;
}

struct MuChoice {
  double mu = 0.0;
  bool clamped = false;
};

MuChoice clamp_mu(std::optional<double> mu, const Eigen::VectorXd& y, double lo, double hi) {
  if (!mu) {
    const double m = std::clamp(y.mean(), lo, hi);
    return {m, false};
  }
  if (*mu < lo) return {lo, true};
  if (*mu > hi) return {hi, true};
  return {*mu, false};
}

struct Problem {
  const DesignSet& design;
  const QLoss& q;
  const Eigen::VectorXd& y;
  double sigma2;
  double lo;
  double hi;
  SolveMode mode;
};

// Objective to minimize at (lambda_a, lambda_b) with mu profiled and clamped.
struct Evaluated {
  MuChoice mu;
  double value = kInf;
};

Evaluated evaluate(const Problem& p, Method method, double la, double lb,
                   const Eigen::VectorXd* true_eta) {
  const SigmaContext ctx(p.design, la, lb, p.mode);
  Evaluated e;
  switch (method) {
    case Method::ure:
    case Method::wls:
      e.mu = clamp_mu(try_profile_ure(ctx, p.y, p.q), p.y, p.lo, p.hi);
      e.value = ure_value(ctx, p.y, e.mu.mu, p.sigma2, p.q);
      break;
    case Method::ml:
      e.mu = clamp_mu(try_profile_ml(ctx, p.y), p.y, p.lo, p.hi);
      e.value = -marginal_loglik(ctx, p.y, e.mu.mu, p.sigma2);
      break;
    case Method::oracle: {
      const Eigen::VectorXd ones = Eigen::VectorXd::Ones(p.y.size());
      const Eigen::VectorXd g0 = ctx.shrink_apply(ones);
      const Eigen::VectorXd base = p.y - ctx.shrink_apply(p.y) - *true_eta;
      // eta_hat(mu) - eta = base + mu g0
      const double den = p.q.quad(g0);
      std::optional<double> mu;
      if (den > kDegenerate * p.q.quad(ones)) mu = -p.q.inner(g0, base) / den;
      e.mu = clamp_mu(mu, p.y, p.lo, p.hi);
      e.value = loss_q(bayes_estimate(ctx, p.y, e.mu.mu), *true_eta, p.q);
      break;
    }
  }
  return e;
}

ShrinkageFit finalize(const Problem& p, Method method, double la, double lb,
                      const Eigen::VectorXd* true_eta, const FitOptions& options) {
  ShrinkageFit out;
  out.method = method;
  out.loss = p.q.mode();
  out.tau = options.tau;
  out.mu_lower = p.lo;
  out.mu_upper = p.hi;
  out.hp.lambda_a = la;
  out.hp.lambda_b = lb;
  out.tilde_a = lambda_to_tilde(la);
  out.tilde_b = lambda_to_tilde(lb);

  const Evaluated e = evaluate(p, method, la, lb, true_eta);
  out.hp.mu = e.mu.mu;
  out.mu_clamped = e.mu.clamped;
  out.objective = method == Method::ml ? -e.value : e.value;
  if (!std::isfinite(out.objective)) throw NumericError("objective is not finite at the selected hyper-parameters");

  const SigmaContext ctx(p.design, la, lb, p.mode);
  out.eta_obs = bayes_estimate(ctx, p.y, out.hp.mu);
  out.eta_complete = complete_means(p.design, out.eta_obs);
  if (!options.skip_residuals && (method == Method::ure || method == Method::ml) &&
      !ctx.no_shrinkage_limit()) {
    out.residuals = estimating_eq_residuals(ctx, p.y, out.hp.mu, p.sigma2, method, p.q);
  }
  return out;
}

ShrinkageFit search_fit(const Problem& p, Method method, const FitOptions& options,
                        const Eigen::VectorXd* true_eta,
                        const std::vector<HyperParams>& candidates = {}) {
  const auto f = [&](UnitPoint u) {
    return evaluate(p, method, tilde_to_lambda(u.x), tilde_to_lambda(u.y), true_eta).value;
  };
  const SearchResult sr = minimize_unit_box(f, options.search);
  if (!std::isfinite(sr.value)) throw NumericError("no finite objective value on the search grid");
  double la = tilde_to_lambda(sr.best.x);
  double lb = tilde_to_lambda(sr.best.y);
  double best = sr.value;
  for (const HyperParams& hp : candidates) {
    const double v = evaluate(p, method, hp.lambda_a, hp.lambda_b, true_eta).value;
    if (v < best) {
      best = v;
      la = hp.lambda_a;
      lb = hp.lambda_b;
    }
  }
  ShrinkageFit out = finalize(p, method, la, lb, true_eta, options);
  out.evaluations = sr.grid_evals + sr.local_evals + static_cast<int>(candidates.size());
  out.grid_ties = sr.grid_ties;
  return out;
}

Problem make_problem(const DesignSet& design, const QLoss& q, const Eigen::VectorXd& y,
                     double sigma2, const FitOptions& options) {
  require_length(design, y, "y");
  require_sigma2(sigma2);
  if (q.size() != design.num_observed()) throw ValidationError("loss does not match the design");
  design.require_connected();
  const auto [lo, hi] = quantile_bounds(std::span<const double>(y.data(), y.size()), options.tau);
  return Problem{design, q, y, sigma2, lo, hi, options.solve};
}

struct Prepared {
  DesignSet design;
  QLoss q;
  Eigen::VectorXd y;
};

Prepared prepare(const CellTable& table, const FitOptions& options) {
  DesignSet design(table);
  design.require_connected(table.row_labels(), table.col_labels());
  QLoss q = options.loss ? QLoss::make(design, *options.loss) : QLoss::default_for(design);
  return Prepared{std::move(design), std::move(q), table.observed_means()};
}

}  // namespace

std::string to_string(Method method) {
  switch (method) {
    case Method::wls: return "wls";
    case Method::ml: return "ml";
    case Method::ure: return "ure";
    case Method::oracle: return "oracle";
  }
  return "?";
}

Method parse_method(const std::string& name) {
  if (name == "wls") return Method::wls;
  if (name == "ml" || name == "ebmle") return Method::ml;
  if (name == "ure" || name == "sure") return Method::ure;
  if (name == "oracle") return Method::oracle;
  throw ValidationError("unknown method '" + name + "' (expected ure, ml or wls)");
}

bool ShrinkageFit::interior() const {
  // beyond the cap the variance acts as infinite
  return !mu_clamped && hp.lambda_a > 0.0 && hp.lambda_b > 0.0 && hp.lambda_a <= kLambdaCap &&
         hp.lambda_b <= kLambdaCap;
}

Eigen::VectorXd wls_fit(const DesignSet& design, const Eigen::VectorXd& y) {
  require_length(design, y, "y");
  design.require_connected();
  const Eigen::SparseMatrix<double> z = design.z();
  const Eigen::SparseMatrix<double> zt = z.transpose();
  const Eigen::MatrixXd normal = Eigen::MatrixXd(zt * design.weights().asDiagonal() * z);
  const Eigen::VectorXd theta =
      symmetric_pinv(normal) * (zt * design.weights().cwiseProduct(y));
  return z * theta;
}

Eigen::VectorXd bayes_estimate(const SigmaContext& ctx, const Eigen::VectorXd& y, double mu) {
  require_length(ctx.design(), y, "y");
  return y - ctx.shrink_apply(y - Eigen::VectorXd::Constant(y.size(), mu));
}

Eigen::VectorXd complete_means(const DesignSet& design, const Eigen::VectorXd& eta_obs) {
  require_length(design, eta_obs, "eta");
  design.require_connected();
  return design.zc_times(design.normal_pinv() * design.zt_times(eta_obs));
}

double ure_value(const SigmaContext& ctx, const Eigen::VectorXd& y, double mu, double sigma2,
                 const QLoss& q) {
  const DesignSet& design = ctx.design();
  require_length(design, y, "y");
  require_sigma2(sigma2);
  if (q.size() != design.num_observed()) throw ValidationError("loss does not match the design");
  const Eigen::VectorXd g = ctx.shrink_apply(y - Eigen::VectorXd::Constant(y.size(), mu));
  const double value =
      sigma2 * q.trace_qm() - 2.0 * sigma2 * ctx.trace_sigma_inv_mqm(q) + q.quad(g);
  return value / design.num_cells();
}

double profile_mu_ure(const SigmaContext& ctx, const Eigen::VectorXd& y, const QLoss& q) {
  require_length(ctx.design(), y, "y");
  const auto mu = try_profile_ure(ctx, y, q);
  if (!mu) throw NumericError("mu does not affect the URE at these variances");
  return *mu;
}

double profile_mu_ml(const SigmaContext& ctx, const Eigen::VectorXd& y) {
  require_length(ctx.design(), y, "y");
  const auto mu = try_profile_ml(ctx, y);
  if (!mu) throw NumericError("mu does not affect the likelihood at these variances");
  return *mu;
}

double marginal_loglik(const SigmaContext& ctx, const Eigen::VectorXd& y, double mu,
                       double sigma2) {
  require_length(ctx.design(), y, "y");
  require_sigma2(sigma2);
  if (ctx.no_shrinkage_limit()) return -kInf;
  const double n = static_cast<double>(y.size());
  const Eigen::VectorXd d = y - Eigen::VectorXd::Constant(y.size(), mu);
  const double quad = d.dot(ctx.solve(d));
  return -0.5 * n * std::log(2.0 * M_PI * sigma2) - 0.5 * ctx.log_det() - 0.5 * quad / sigma2;
}

EstimatingResiduals estimating_eq_residuals(const SigmaContext& ctx, const Eigen::VectorXd& y,
                                            double mu, double sigma2, Method method,
                                            const QLoss& q) {
  const DesignSet& design = ctx.design();
  require_length(design, y, "y");
  require_sigma2(sigma2);
  if (ctx.no_shrinkage_limit()) throw NumericError("no estimating equations in the no-shrinkage limit");
  const int r = design.rows();
  const int c = design.cols();
  const Eigen::VectorXd ones = Eigen::VectorXd::Ones(y.size());
  const Eigen::VectorXd d = y - mu * ones;
  EstimatingResiduals out;
  if (method == Method::ml) {
    const Eigen::VectorXd s = ctx.solve(d);
    const Eigen::VectorXd s0 = ctx.solve(ones);
    const BlockTraces bt = ctx.trace_blocks();
    const Eigen::VectorXd u = design.ut_times(s);
    out.scale_a = bt.sigma_inv_a;
    out.scale_b = bt.sigma_inv_b;
    out.res_a = bt.sigma_inv_a - u.head(r).squaredNorm() / sigma2;
    out.res_b = bt.sigma_inv_b - u.tail(c).squaredNorm() / sigma2;
    out.res_mu = s.sum();
    out.scale_mu = std::sqrt(s0.sum() * d.dot(s));
  } else if (method == Method::ure) {
    const Eigen::VectorXd g = ctx.shrink_apply(d);
    const Eigen::VectorXd g0 = ctx.shrink_apply(ones);
    const Eigen::VectorXd s = design.weights().cwiseProduct(g);
    const Eigen::VectorXd h = ctx.solve(Eigen::VectorXd(design.m_diag().cwiseProduct(q.apply(g))));
    const BlockTraces bt = ctx.trace_blocks(&q);
    const Eigen::VectorXd us = design.ut_times(s);
    const Eigen::VectorXd uh = design.ut_times(h);
    out.scale_a = bt.sigma_inv_a_mqm;
    out.scale_b = bt.sigma_inv_b_mqm;
    out.res_a = bt.sigma_inv_a_mqm - us.head(r).dot(uh.head(r)) / sigma2;
    out.res_b = bt.sigma_inv_b_mqm - us.tail(c).dot(uh.tail(c)) / sigma2;
    out.res_mu = q.inner(g0, g);
    out.scale_mu = std::sqrt(q.quad(g0) * q.quad(g));
  } else {
    throw ValidationError("estimating equations exist for ml and ure only");
  }
  return out;
}

ShrinkageFit fit_wls(const DesignSet& design, const QLoss& q, const Eigen::VectorXd& y,
                     double sigma2, const FitOptions& options) {
  const Problem p = make_problem(design, q, y, sigma2, options);
  ShrinkageFit out;
  out.method = Method::wls;
  out.loss = q.mode();
  out.tau = options.tau;
  out.mu_lower = p.lo;
  out.mu_upper = p.hi;
  out.hp = {std::clamp(y.mean(), p.lo, p.hi), kInf, kInf};
  out.tilde_a = 0.0;
  out.tilde_b = 0.0;
  const SigmaContext ctx(design, kInf, kInf);
  out.objective = ure_value(ctx, y, out.hp.mu, sigma2, q);
  out.eta_obs = wls_fit(design, y);
  out.eta_complete = complete_means(design, out.eta_obs);
  out.evaluations = 1;
  return out;
}

ShrinkageFit fit_ure(const DesignSet& design, const QLoss& q, const Eigen::VectorXd& y,
                     double sigma2, const FitOptions& options) {
  return search_fit(make_problem(design, q, y, sigma2, options), Method::ure, options, nullptr);
}

ShrinkageFit fit_ml(const DesignSet& design, const QLoss& q, const Eigen::VectorXd& y,
                    double sigma2, const FitOptions& options) {
  return search_fit(make_problem(design, q, y, sigma2, options), Method::ml, options, nullptr);
}

ShrinkageFit oracle_fit(const DesignSet& design, const QLoss& q, const Eigen::VectorXd& y,
                        double sigma2, const Eigen::VectorXd& true_eta,
                        const FitOptions& options, const std::vector<HyperParams>& candidates) {
  require_length(design, true_eta, "true eta");
  return search_fit(make_problem(design, q, y, sigma2, options), Method::oracle, options,
                    &true_eta, candidates);
}

ShrinkageFit fit(const CellTable& table, Method method, const FitOptions& options) {
  switch (method) {
    case Method::wls: return fit_wls(table, options);
    case Method::ml: return fit_ml(table, options);
    case Method::ure: return fit_ure(table, options);
    case Method::oracle: break;
  }
  throw ValidationError("the oracle fit needs the true cell means");
}

ShrinkageFit fit_wls(const CellTable& table, const FitOptions& options) {
  const Prepared pr = prepare(table, options);
  return fit_wls(pr.design, pr.q, pr.y, table.sigma2(), options);
}

ShrinkageFit fit_ure(const CellTable& table, const FitOptions& options) {
  const Prepared pr = prepare(table, options);
  return fit_ure(pr.design, pr.q, pr.y, table.sigma2(), options);
}

ShrinkageFit fit_ml(const CellTable& table, const FitOptions& options) {
  const Prepared pr = prepare(table, options);
  return fit_ml(pr.design, pr.q, pr.y, table.sigma2(), options);
}

ShrinkageFit oracle_fit(const CellTable& table, const Eigen::VectorXd& true_eta,
                        const FitOptions& options) {
  const Prepared pr = prepare(table, options);
  return oracle_fit(pr.design, pr.q, pr.y, table.sigma2(), true_eta, options);
}

EstimatingResiduals estimating_eq_residuals(const ShrinkageFit& fit, const CellTable& table) {
  FitOptions options;
  options.loss = fit.loss;
  const Prepared pr = prepare(table, options);
  const SigmaContext ctx(pr.design, fit.hp.lambda_a, fit.hp.lambda_b);
  return estimating_eq_residuals(ctx, pr.y, fit.hp.mu, table.sigma2(), fit.method, pr.q);
}

WeightedProblem weighted_transform(const CellTable& table) {
  if (!table.complete()) throw ValidationError("the weighted-loss transform needs a complete table");
  const DesignSet design(table);
  WeightedProblem out;
  out.rows = table.rows();
  out.cols = table.cols();
  out.scale = design.weights().cwiseSqrt();
  out.y = out.scale.cwiseProduct(table.observed_means());
  out.z = out.scale.asDiagonal() * Eigen::MatrixXd(design.z());
  out.mean_dir = out.scale;
  return out;
}

Eigen::MatrixXd transformed_shrinkage_matrix(const WeightedProblem& problem, double lambda_a,
                                             double lambda_b) {
  const int r = problem.rows;
  const int c = problem.cols;
  const Eigen::MatrixXd za = problem.z.middleCols(1, r);
  const Eigen::MatrixXd zb = problem.z.middleCols(1 + r, c);
  const auto n = problem.y.size();
  Eigen::MatrixXd v = lambda_a * za * za.transpose() + lambda_b * zb * zb.transpose();
  v.diagonal().array() += 1.0;
  Eigen::LLT<Eigen::MatrixXd> llt(v);
  if (llt.info() != Eigen::Success) throw NumericError("transformed covariance factorization failed");
  Eigen::MatrixXd w = llt.solve(Eigen::MatrixXd::Identity(n, n));
  return 0.5 * (w + w.transpose());
}

double transformed_ure(const WeightedProblem& problem, const HyperParams& hp, double sigma2) {
  require_sigma2(sigma2);
  const Eigen::MatrixXd w = transformed_shrinkage_matrix(problem, hp.lambda_a, hp.lambda_b);
  const Eigen::VectorXd d = problem.y - hp.mu * problem.mean_dir;
  const double n = static_cast<double>(problem.y.size());
  const double value = sigma2 * n - 2.0 * sigma2 * w.trace() + (w * d).squaredNorm();
  return value / (problem.rows * problem.cols);
}

}  // namespace twoway
