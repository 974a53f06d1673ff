#pragma once

#include "twoway/tables.hpp"

#include <Eigen/Dense>

#include <string>
#include <vector>

namespace twoway {

/// Which quadratic loss the observed-cell errors are measured in.
///
///   identity  - Q = I: sum of squares over the observed cells.
///   weighted  - Q = M^{-1}: count-weighted ("prediction") loss.
///   projected - Q = (Zc Z^+)^T (Zc Z^+): sum of squares over all r c cells
///               after completing the estimate.
enum class LossMode { identity, weighted, projected };

std::string to_string(LossMode mode);
LossMode parse_loss_mode(const std::string& name);

/// A PSD |E| x |E| loss matrix Q, stored implicitly. All losses are later
/// normalized by r c.
class QLoss {
 public:
  static QLoss identity(const DesignSet& design);
  static QLoss weighted(const DesignSet& design);
  /// Requires a connected design.
  static QLoss projected(const DesignSet& design);
  static QLoss make(const DesignSet& design, LossMode mode);
  /// identity for complete designs, projected otherwise.
  static QLoss default_for(const DesignSet& design);

  LossMode mode() const { return mode_; }
  int size() const { return static_cast<int>(cells_.size()); }
  /// r c of the underlying layout.
  int num_cells() const { return num_cells_; }

  double quad(const Eigen::VectorXd& g) const { return inner(g, g); }
  double inner(const Eigen::VectorXd& g, const Eigen::VectorXd& h) const;
  Eigen::VectorXd apply(const Eigen::VectorXd& g) const;

  /// tr(Q M).
  double trace_qm() const { return trace_qm_; }
  /// U^T Q U for the q = r + c effect columns.
  const Eigen::MatrixXd& effect_gram() const { return effect_gram_; }
  /// Explicit Q; O(|E|^2) memory.
  Eigen::MatrixXd dense() const;
  /// Largest eigenvalue of Q, via the (r+c+1)-dimensional route for the
  /// projected mode.
  double lambda1() const;

 private:
  QLoss(LossMode mode, const DesignSet& design);

  Eigen::VectorXd zt(const Eigen::VectorXd& x) const;

  LossMode mode_;
  int rows_ = 0;
  int params_ = 0;
  int num_cells_ = 0;
  std::vector<Cell> cells_;
  Eigen::VectorXd m_diag_;
  Eigen::VectorXd weights_;
  // projected mode: Q = Z core Z^T with core = (Z^T Z)^+ Zc^T Zc (Z^T Z)^+
  Eigen::MatrixXd core_;
  Eigen::MatrixXd lambda1_route_;
  Eigen::MatrixXd effect_gram_;
  double trace_qm_ = 0.0;
};

}  // namespace twoway
