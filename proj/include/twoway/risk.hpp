#pragma once

#include "twoway/qloss.hpp"
#include "twoway/tables.hpp"

#include <Eigen/Dense>

namespace twoway {

/// (1/n) ||eta_hat - eta||^2 over equal-length vectors; for complete-grid
/// vectors n = r c.
double loss_ss(const Eigen::VectorXd& eta_hat, const Eigen::VectorXd& eta);

/// (1/rc) sum K_ij (eta_hat_ij - eta_ij)^2 over the observed cells
/// (vectors in the design's observed-cell order).
double loss_weighted(const Eigen::VectorXd& eta_hat, const Eigen::VectorXd& eta,
                     const DesignSet& design);

/// (1/rc) (eta_hat - eta)^T Q (eta_hat - eta) on the observed cells.
double loss_q(const Eigen::VectorXd& eta_hat, const Eigen::VectorXd& eta, const QLoss& q);

/// The completion loss matrix Q = (Zc Z^+)^T (Zc Z^+).
QLoss q_matrix(const DesignSet& design);

/// lambda_1(Q) through the small matrix (Zc^T Zc)(Z^T Z)^+.
double lambda1_q(const DesignSet& design);

/// lambda_1(Q) from Q itself: dense symmetric eigensolver for |E| <= 2000,
/// power iteration otherwise.
double lambda1_q_direct(const DesignSet& design);

/// (rc)^{-1/8} (log rc)^2 nu lambda_1(Q).
double a2_statistic(const DesignSet& design);
double a2_statistic(const DesignSet& design, double lambda1);

struct QuadMoments {
  double mean = 0.0;
  double variance = 0.0;
};

/// Moments of y^T A y for y ~ N(eta, V): tr(AV) + eta^T A eta and
/// 2 tr((AV)^2) + 4 eta^T A V A eta.
QuadMoments quad_form_moments(const Eigen::MatrixXd& a, const Eigen::MatrixXd& v,
                              const Eigen::VectorXd& eta);

struct DecouplingCheck {
  double direct = 0.0;      // (1/rc) ||eta_hat - eta||^2
  double decomposed = 0.0;  // grand mean + row + column + interaction terms
  double discrepancy = 0.0;
};

/// On a balanced complete table (K = K0 everywhere), the Bayes estimator at
/// `hp` shrinks the grand mean and the centered row and column effects
/// separately, and its loss splits into orthogonal pieces. Compares the
/// direct loss with the sum of the pieces. `eta` is the true r x c mean
/// (row-major); its non-additive part enters as a separate term.
DecouplingCheck balanced_decoupling_check(const CellTable& table, const HyperParams& hp,
                                          const Eigen::VectorXd& eta);

}  // namespace twoway
