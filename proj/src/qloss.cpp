#include "twoway/qloss.hpp"

#include "twoway/error.hpp"

#include <algorithm>

namespace twoway {

std::string to_string(LossMode mode) {
  switch (mode) {
    case LossMode::identity: return "ss";
    case LossMode::weighted: return "weighted";
    case LossMode::projected: return "q";
  }
  return "?";
}

LossMode parse_loss_mode(const std::string& name) {
  if (name == "ss" || name == "identity") return LossMode::identity;
  if (name == "weighted" || name == "wgt") return LossMode::weighted;
  if (name == "q" || name == "qmatrix" || name == "projected") return LossMode::projected;
  throw ValidationError("unknown loss '" + name + "' (expected ss, weighted or q)");
}

QLoss::QLoss(LossMode mode, const DesignSet& design)
    : mode_(mode),
      rows_(design.rows()),
      params_(design.num_params()),
      num_cells_(design.num_cells()),
      cells_(design.cells()),
      m_diag_(design.m_diag()),
      weights_(design.weights()) {
  switch (mode_) {
    case LossMode::identity:
      effect_gram_ = design.ut_u();
      trace_qm_ = m_diag_.sum();
      break;
    case LossMode::weighted:
      effect_gram_ = design.ut_minv_u();
      trace_qm_ = static_cast<double>(size());
      break;
    case LossMode::projected: {
      design.require_connected();
      const Eigen::MatrixXd& pinv = design.normal_pinv();
      const Eigen::MatrixXd complete = design.complete_normal_matrix();
      core_ = pinv * complete * pinv;
      core_ = 0.5 * (core_ + core_.transpose());
      lambda1_route_ = complete * pinv;
      // U^T Z is Z^T Z without its intercept row.
      const int q = design.num_effects();
      const Eigen::MatrixXd utz = design.normal_matrix().bottomRows(q);
      effect_gram_ = utz * core_ * utz.transpose();
      const int r1 = 1;
      const int c1 = 1 + rows_;
      trace_qm_ = 0.0;
      for (int k = 0; k < size(); ++k) {
        const int idx[3] = {0, r1 + cells_[k].row, c1 + cells_[k].col};
        double qkk = 0.0;
        for (int a : idx)
          for (int b : idx) qkk += core_(a, b);
        trace_qm_ += qkk * m_diag_(k);
      }
      break;
    }
  }
}

QLoss QLoss::identity(const DesignSet& design) { return QLoss(LossMode::identity, design); }
QLoss QLoss::weighted(const DesignSet& design) { return QLoss(LossMode::weighted, design); }
QLoss QLoss::projected(const DesignSet& design) { return QLoss(LossMode::projected, design); }
QLoss QLoss::make(const DesignSet& design, LossMode mode) { return QLoss(mode, design); }
QLoss QLoss::default_for(const DesignSet& design) {
  return QLoss(design.complete() ? LossMode::identity : LossMode::projected, design);
}

Eigen::VectorXd QLoss::zt(const Eigen::VectorXd& x) const {
  Eigen::VectorXd out = Eigen::VectorXd::Zero(params_);
  for (int k = 0; k < size(); ++k) {
    out(0) += x(k);
    out(1 + cells_[k].row) += x(k);
    out(1 + rows_ + cells_[k].col) += x(k);
  }
  return out;
}

double QLoss::inner(const Eigen::VectorXd& g, const Eigen::VectorXd& h) const {
  switch (mode_) {
    case LossMode::identity: return g.dot(h);
    case LossMode::weighted: return (g.array() * weights_.array() * h.array()).sum();
    case LossMode::projected: {
      const Eigen::VectorXd zg = zt(g);
      const Eigen::VectorXd zh = zt(h);
      return zg.dot(core_ * zh);
    }
  }
  return 0.0;
}

Eigen::VectorXd QLoss::apply(const Eigen::VectorXd& g) const {
  switch (mode_) {
    case LossMode::identity: return g;
    case LossMode::weighted: return weights_.cwiseProduct(g);
    case LossMode::projected: {
      const Eigen::VectorXd t = core_ * zt(g);
      Eigen::VectorXd out(size());
      for (int k = 0; k < size(); ++k)
        out(k) = t(0) + t(1 + cells_[k].row) + t(1 + rows_ + cells_[k].col);
      return out;
    }
  }
  return g;
}

Eigen::MatrixXd QLoss::dense() const {
  const int n = size();
  Eigen::MatrixXd q(n, n);
  for (int k = 0; k < n; ++k) q.col(k) = apply(Eigen::VectorXd::Unit(n, k));
  return 0.5 * (q + q.transpose());
}

double QLoss::lambda1() const {
  switch (mode_) {
    case LossMode::identity: return 1.0;
    case LossMode::weighted: return weights_.maxCoeff();
    case LossMode::projected: {
      // Nonzero spectrum of (Zc^T Zc)(Z^T Z)^+ equals that of Q.
      Eigen::EigenSolver<Eigen::MatrixXd> es(lambda1_route_, false);
      return es.eigenvalues().real().maxCoeff();
    }
  }
  return 1.0;
}

}  // namespace twoway
