#pragma once

#include "twoway/linear_core.hpp"
#include "twoway/optimize.hpp"
#include "twoway/qloss.hpp"
#include "twoway/tables.hpp"

#include <Eigen/Dense>

#include <optional>
#include <string>
#include <vector>

namespace twoway {

enum class Method { wls, ml, ure, oracle };

std::string to_string(Method method);
/// Accepts wls, ml (or ebmle), ure, oracle.
Method parse_method(const std::string& name);

struct FitOptions {
  double tau = 0.05;
  /// Loss used by the URE objective and the oracle; empty means identity on
  /// complete tables and projected otherwise.
  std::optional<LossMode> loss;
  SolveMode solve = SolveMode::fast;
  SearchOptions search;
  /// Skip the estimating-equation residuals in the fit diagnostics.
  bool skip_residuals = false;
};

/// Left-hand sides of the estimating equations at given hyper-parameters.
///
/// ML:  res_a = tr(S^-1 Z_A Z_A^T) - s^-2 ||Z_A^T S^-1 d||^2, d = y - mu 1,
///      so that d(loglik)/d(lambda_a) = -res_a / 2.
/// URE: res_a = tr(S^-1 Z_A Z_A^T S^-1 M Q M)
///              - s^-2 <Z_A^T S^-1 d, Z_A^T S^-1 M Q M S^-1 d>,
///      so that d(URE)/d(lambda_a) = 2 sigma^2 res_a / (r c).
/// res_mu is the score in mu (zero at the unconstrained profile). At an
/// interior optimum all residuals vanish; at lambda = 0 the KKT condition
/// is res >= 0.
struct EstimatingResiduals {
  double res_mu = 0.0;
  double res_a = 0.0;
  double res_b = 0.0;
  double scale_mu = 0.0;
  double scale_a = 0.0;  // the trace term of res_a
  double scale_b = 0.0;
};

struct ShrinkageFit {
  Method method = Method::ure;
  LossMode loss = LossMode::identity;
  HyperParams hp;
  double tilde_a = 0.0;  // (1 + lambda_a)^{-1/2}
  double tilde_b = 0.0;
  double tau = 0.05;
  double mu_lower = 0.0;
  double mu_upper = 0.0;
  bool mu_clamped = false;
  /// URE value (ure, wls), log-likelihood (ml) or realized loss (oracle).
  double objective = 0.0;
  Eigen::VectorXd eta_obs;       // observed cells, lexicographic order
  Eigen::VectorXd eta_complete;  // all r c cells, row-major
  int evaluations = 0;
  std::vector<UnitPoint> grid_ties;  // in (tilde_a, tilde_b)
  std::optional<EstimatingResiduals> residuals;

  /// mu unclamped and both variances positive and at most kLambdaCap.
  bool interior() const;
};

/// WLS fit of the additive model, eta_hat = Z theta_hat.
Eigen::VectorXd wls_fit(const DesignSet& design, const Eigen::VectorXd& y);

/// Posterior mean y - M Sigma^{-1} (y - mu 1).
Eigen::VectorXd bayes_estimate(const SigmaContext& ctx, const Eigen::VectorXd& y, double mu);

/// Zc Z^+ eta_obs: the additive completion over all r c cells.
Eigen::VectorXd complete_means(const DesignSet& design, const Eigen::VectorXd& eta_obs);

/// Unbiased estimate of the Q-risk of the Bayes rule at (mu, ctx), divided by rc:
/// sigma^2 tr(QM) - 2 sigma^2 tr(S^-1 M Q M) + g^T Q g, g = M S^-1 (y - mu 1).
double ure_value(const SigmaContext& ctx, const Eigen::VectorXd& y, double mu, double sigma2,
                 const QLoss& q);

/// Unconstrained minimizer of ure_value over mu. Throws NumericError when mu
/// has no influence on the objective (no-shrinkage limit).
double profile_mu_ure(const SigmaContext& ctx, const Eigen::VectorXd& y, const QLoss& q);

/// GLS estimate 1^T S^-1 y / 1^T S^-1 1. Throws NumericError in the limit.
double profile_mu_ml(const SigmaContext& ctx, const Eigen::VectorXd& y);

/// log density of y ~ N(mu 1, sigma^2 Sigma); -infinity in the no-shrinkage limit.
double marginal_loglik(const SigmaContext& ctx, const Eigen::VectorXd& y, double mu, double sigma2);

EstimatingResiduals estimating_eq_residuals(const SigmaContext& ctx, const Eigen::VectorXd& y,
                                            double mu, double sigma2, Method method,
                                            const QLoss& q);

// Fitting on a fixed design. `y` is in the design's observed-cell order.
ShrinkageFit fit_wls(const DesignSet& design, const QLoss& q, const Eigen::VectorXd& y,
                     double sigma2, const FitOptions& options = {});
ShrinkageFit fit_ure(const DesignSet& design, const QLoss& q, const Eigen::VectorXd& y,
                     double sigma2, const FitOptions& options = {});
ShrinkageFit fit_ml(const DesignSet& design, const QLoss& q, const Eigen::VectorXd& y,
                    double sigma2, const FitOptions& options = {});
/// Minimizes the realized Q-loss against `true_eta` (observed cells). The
/// hyper-parameters in `candidates` are also tried, so the result is never
/// worse than any of them.
ShrinkageFit oracle_fit(const DesignSet& design, const QLoss& q, const Eigen::VectorXd& y,
                        double sigma2, const Eigen::VectorXd& true_eta,
                        const FitOptions& options = {},
                        const std::vector<HyperParams>& candidates = {});

// Table-level entry points; these check connectivity and name the components.
ShrinkageFit fit(const CellTable& table, Method method, const FitOptions& options = {});
ShrinkageFit fit_wls(const CellTable& table, const FitOptions& options = {});
ShrinkageFit fit_ure(const CellTable& table, const FitOptions& options = {});
ShrinkageFit fit_ml(const CellTable& table, const FitOptions& options = {});
ShrinkageFit oracle_fit(const CellTable& table, const Eigen::VectorXd& true_eta,
                        const FitOptions& options = {});

EstimatingResiduals estimating_eq_residuals(const ShrinkageFit& fit, const CellTable& table);

/// Homoscedastic version of a complete table: y_t = M^{-1/2} y,
/// Z_t = M^{-1/2} Z, mean direction M^{-1/2} 1. Sum-of-squares loss on this
/// problem is the count-weighted loss on the original.
struct WeightedProblem {
  Eigen::VectorXd y;          // transformed observations
  Eigen::VectorXd scale;      // sqrt(K), the diagonal of M^{-1/2}
  Eigen::MatrixXd z;          // transformed design, |E| x (r + c + 1)
  Eigen::VectorXd mean_dir;   // M^{-1/2} 1
  int rows = 0;
  int cols = 0;
};

WeightedProblem weighted_transform(const CellTable& table);

/// W = M^{1/2} Sigma^{-1} M^{1/2} = (lambda_a Z_tA Z_tA^T + lambda_b Z_tB Z_tB^T + I)^{-1}:
/// the (symmetric) shrinkage matrix of the transformed problem.
Eigen::MatrixXd transformed_shrinkage_matrix(const WeightedProblem& problem, double lambda_a,
                                             double lambda_b);

/// Sum-of-squares URE on the transformed problem, divided by rc.
double transformed_ure(const WeightedProblem& problem, const HyperParams& hp, double sigma2);

}  // namespace twoway
