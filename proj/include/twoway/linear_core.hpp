#pragma once

#include "twoway/qloss.hpp"
#include "twoway/tables.hpp"

#include <Eigen/Dense>

#include <memory>

namespace twoway {

enum class SolveMode { fast, dense };

/// A relative variance of +infinity is approximated by (1/eps^2 - 1) with
/// eps = 1e-6 whenever a numeric Sigma is needed; only the case where both
/// variances are infinite is handled exactly (see SigmaContext).
inline constexpr double kTildeFloor = 1e-6;
inline constexpr double kLambdaCap = 1.0 / (kTildeFloor * kTildeFloor) - 1.0;

struct BlockTraces {
  double sigma_inv_a = 0.0;      // tr(S^-1 Z_A Z_A^T)
  double sigma_inv_b = 0.0;      // tr(S^-1 Z_B Z_B^T)
  double sigma_inv_a_mqm = 0.0;  // tr(S^-1 Z_A Z_A^T S^-1 M Q M)
  double sigma_inv_b_mqm = 0.0;  // tr(S^-1 Z_B Z_B^T S^-1 M Q M)
};

/// Sigma = lambda_a Z_A Z_A^T + lambda_b Z_B Z_B^T + M for one design and one
/// pair of relative variances.
///
/// In fast mode everything goes through the Woodbury identity with the q x q
/// capacitance matrix C = L U^T M^{-1} U L + I (L = Lambda, U = [Z_A Z_B]).
/// Both diagonal blocks of C are diagonal, so C is factored by eliminating the
/// larger block and Cholesky-factoring the Schur complement of the smaller
/// one. All operations reduce to the q x q operator T = L C^{-1} L:
///
///   M Sigma^{-1} x = x - U T U^T M^{-1} x.
///
/// When both variances are infinite, T is replaced by its limit
/// (U^T M^{-1} U)^+, so M Sigma^{-1} becomes the residual maker of the
/// M^{-1}-weighted projection onto col(Z) and the Bayes rule reduces to WLS.
///
/// Dense mode forms Sigma explicitly; it exists as a cross-check.
///
/// The context keeps a reference to `design`, which must outlive it.
class SigmaContext {
 public:
  SigmaContext(const DesignSet& design, double lambda_a, double lambda_b,
               SolveMode mode = SolveMode::fast);
  ~SigmaContext();
  SigmaContext(SigmaContext&&) noexcept;
  SigmaContext& operator=(SigmaContext&&) noexcept;

  const DesignSet& design() const { return *design_; }
  SolveMode mode() const { return mode_; }
  /// Requested variances (possibly infinite).
  double lambda_a() const { return lambda_a_; }
  double lambda_b() const { return lambda_b_; }
  /// True when both variances are infinite and the exact limit is used.
  bool no_shrinkage_limit() const { return limit_; }

  /// Sigma^{-1} v.
  Eigen::VectorXd solve(const Eigen::VectorXd& v) const;
  Eigen::MatrixXd solve(const Eigen::MatrixXd& v) const;
  /// M Sigma^{-1} x, evaluated right to left with matrix-vector products only.
  Eigen::VectorXd shrink_apply(const Eigen::VectorXd& x) const;

  /// tr(Sigma^{-1} M^2).
  double trace_sigma_inv_msq() const;
  /// tr(Sigma^{-1} M Q M).
  double trace_sigma_inv_mqm(const QLoss& q) const;

  /// Traces used by the estimating equations; `q == nullptr` means Q = I.
  BlockTraces trace_blocks(const QLoss* q = nullptr) const;

  /// log |Sigma|; +infinity in the no-shrinkage limit.
  double log_det() const;

  /// Explicit Sigma with the effective (capped) variances.
  Eigen::MatrixXd dense_sigma() const;

  /// The q x q operator T (fast mode only).
  const Eigen::MatrixXd& effect_operator() const;

 private:
  struct Fast;
  struct Dense;

  const DesignSet* design_;
  SolveMode mode_;
  double lambda_a_;
  double lambda_b_;
  bool limit_ = false;
  std::unique_ptr<Fast> fast_;
  std::unique_ptr<Dense> dense_;
};

/// Explicit Sigma for given (finite) variances, for oracles and tests.
Eigen::MatrixXd build_dense_sigma(const DesignSet& design, double lambda_a, double lambda_b);

}  // namespace twoway
