#include "twoway/risk.hpp"

#include "twoway/error.hpp"
#include "twoway/linear_core.hpp"

#include <cmath>
#include <string>

namespace twoway {

namespace {

void require_same_length(const Eigen::VectorXd& a, const Eigen::VectorXd& b) {
  if (a.size() != b.size()) {
    throw ValidationError("length mismatch: " + std::to_string(a.size()) + " vs " +
                          std::to_string(b.size()));
  }
}

}  // namespace

double loss_ss(const Eigen::VectorXd& eta_hat, const Eigen::VectorXd& eta) {
  require_same_length(eta_hat, eta);
  if (eta.size() == 0) throw ValidationError("empty vectors");
  return (eta_hat - eta).squaredNorm() / static_cast<double>(eta.size());
}

double loss_weighted(const Eigen::VectorXd& eta_hat, const Eigen::VectorXd& eta,
                     const DesignSet& design) {
  require_same_length(eta_hat, eta);
  if (eta.size() != design.num_observed()) throw ValidationError("vectors must cover the observed cells");
  const Eigen::ArrayXd d = (eta_hat - eta).array();
  return (design.weights().array() * d.square()).sum() / design.num_cells();
}

double loss_q(const Eigen::VectorXd& eta_hat, const Eigen::VectorXd& eta, const QLoss& q) {
  require_same_length(eta_hat, eta);
  if (eta.size() != q.size()) throw ValidationError("vectors must cover the observed cells");
  return q.quad(eta_hat - eta) / q.num_cells();
}

QLoss q_matrix(const DesignSet& design) { return QLoss::projected(design); }

double lambda1_q(const DesignSet& design) { return q_matrix(design).lambda1(); }

double lambda1_q_direct(const DesignSet& design) {
  const QLoss q = q_matrix(design);
  const int n = q.size();
  if (n <= 2000) {
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(q.dense(), Eigen::EigenvaluesOnly);
    return es.eigenvalues().maxCoeff();
  }
  Eigen::VectorXd v = Eigen::VectorXd::LinSpaced(n, 1.0, 2.0);
  v.normalize();
  double value = 0.0;
  for (int it = 0; it < 10000; ++it) {
    Eigen::VectorXd w = q.apply(v);
    const double next = v.dot(w);
    const double norm = w.norm();
    if (norm == 0.0) return 0.0;
    v = w / norm;
    if (std::abs(next - value) <= 1e-9 * std::abs(next)) return next;
    value = next;
  }
  return value;
}

double a2_statistic(const DesignSet& design, double lambda1) {
  const double rc = design.num_cells();
  const double log_rc = std::log(rc);
  return std::pow(rc, -0.125) * log_rc * log_rc * imbalance_ratio(design) * lambda1;
}

double a2_statistic(const DesignSet& design) { return a2_statistic(design, lambda1_q(design)); }

QuadMoments quad_form_moments(const Eigen::MatrixXd& a, const Eigen::MatrixXd& v,
                              const Eigen::VectorXd& eta) {
  const auto n = eta.size();
  if (a.rows() != n || a.cols() != n || v.rows() != n || v.cols() != n) {
    throw ValidationError("quad_form_moments: dimension mismatch");
  }
  const Eigen::MatrixXd av = a * v;
  const Eigen::VectorXd a_eta = a * eta;
  QuadMoments out;
  out.mean = av.trace() + eta.dot(a_eta);
  out.variance = 2.0 * av.cwiseProduct(av.transpose()).sum() + 4.0 * a_eta.dot(v * a_eta);
  return out;
}

DecouplingCheck balanced_decoupling_check(const CellTable& table, const HyperParams& hp,
                                          const Eigen::VectorXd& eta) {
  const int r = table.rows();
  const int c = table.cols();
  if (!table.complete()) throw ValidationError("balanced_decoupling_check needs a complete table");
  const int k0 = table.count(0, 0);
  if ((table.counts().array() != k0).any()) {
    throw ValidationError("balanced_decoupling_check needs equal cell counts");
  }
  if (eta.size() != r * c) throw ValidationError("eta must have r*c entries");

  const DesignSet design(table);
  const SigmaContext ctx(design, hp.lambda_a, hp.lambda_b);
  const Eigen::VectorXd y = table.observed_means();
  const Eigen::VectorXd eta_hat =
      y - ctx.shrink_apply(y - Eigen::VectorXd::Constant(y.size(), hp.mu));

  DecouplingCheck out;
  out.direct = loss_ss(eta_hat, eta);

  using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
  const RowMat yg = Eigen::Map<const RowMat>(y.data(), r, c);
  const RowMat eg = Eigen::Map<const RowMat>(eta.data(), r, c);

  const auto factor = [&](double lambda, int span) {
    if (std::isinf(lambda)) return 1.0;
    const double t = k0 * span * lambda;
    return t / (1.0 + t);
  };
  const double c_alpha = factor(hp.lambda_a, c);
  const double c_beta = factor(hp.lambda_b, r);
  double c_m = 1.0;
  if (!std::isinf(hp.lambda_a) && !std::isinf(hp.lambda_b)) {
    c_m = 1.0 - 1.0 / (1.0 + k0 * (c * hp.lambda_a + r * hp.lambda_b));
  }

  const double y_bar = yg.mean();
  const double m = eg.mean();
  const Eigen::VectorXd a_hat = yg.rowwise().mean().array() - y_bar;
  const Eigen::VectorXd b_hat = yg.colwise().mean().transpose().array() - y_bar;
  const Eigen::VectorXd a = eg.rowwise().mean().array() - m;
  const Eigen::VectorXd b = eg.colwise().mean().transpose().array() - m;
  RowMat interaction = eg;
  for (int i = 0; i < r; ++i)
    for (int j = 0; j < c; ++j) interaction(i, j) -= m + a(i) + b(j);

  const double m_hat = hp.mu + c_m * (y_bar - hp.mu);
  out.decomposed = (m_hat - m) * (m_hat - m) + (c_alpha * a_hat - a).squaredNorm() / r +
                   (c_beta * b_hat - b).squaredNorm() / c +
                   interaction.squaredNorm() / (r * c);
  out.discrepancy = std::abs(out.direct - out.decomposed);
  return out;
}

}  // namespace twoway
