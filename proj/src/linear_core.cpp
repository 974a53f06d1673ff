#include "twoway/linear_core.hpp"

#include "twoway/error.hpp"

#include <cmath>
#include <mutex>
#include <string>

namespace twoway {

namespace {

double effective_lambda(double lambda) {
  return std::isinf(lambda) ? kLambdaCap : std::min(lambda, kLambdaCap);
}

void check_lambda(double lambda, const char* name) {
  if (std::isnan(lambda) || lambda < 0.0) {
    throw ValidationError(std::string(name) + " must be >= 0 (got " + std::to_string(lambda) + ")");
  }
}

// Sum of the diagonal entries of `m` in [from, from + len).
double diag_sum(const Eigen::MatrixXd& m, int from, int len) {
  return m.diagonal().segment(from, len).sum();
}

}  // namespace

struct SigmaContext::Fast {
  const DesignSet* design = nullptr;
  bool limit = false;
  bool rows_eliminated = true;  // eliminated (diagonal) block is the row block
  int nx = 0;
  int ny = 0;
  double sx = 0.0;  // sqrt(lambda) of the eliminated block
  double sy = 0.0;  // sqrt(lambda) of the Schur block
  Eigen::VectorXd p_diag;
  Eigen::MatrixXd xmat;  // P^{-1} B, nx x ny
  Eigen::LLT<Eigen::MatrixXd> schur;
  double log_det_c = 0.0;

  std::once_flag t_once;
  Eigen::MatrixXd t;

  Fast(const DesignSet& d, double la, double lb, bool lim) : design(&d), limit(lim) {
    if (limit) return;
    const int r = d.rows();
    const int c = d.cols();
    rows_eliminated = r >= c;
    nx = rows_eliminated ? r : c;
    ny = rows_eliminated ? c : r;
    const double lx = rows_eliminated ? la : lb;
    const double ly = rows_eliminated ? lb : la;
    sx = std::sqrt(lx);
    sy = std::sqrt(ly);

    // counts laid out as nx x ny
    Eigen::MatrixXd k = d.counts().cast<double>();
    if (!rows_eliminated) k.transposeInPlace();

    p_diag = (lx * k.rowwise().sum()).array() + 1.0;
    const Eigen::VectorXd d_diag = (ly * k.colwise().sum().transpose()).array() + 1.0;

    const double sxy = sx * sy;
    xmat = (sxy * k).array().colwise() / p_diag.array();  // P^{-1} B
    Eigen::MatrixXd s = -(sxy * k.transpose()) * xmat;    // -B^T P^{-1} B
    s.diagonal() += d_diag;

    schur.compute(s);
    if (schur.info() != Eigen::Success) {
      s.diagonal().array() += 1e-12;
      schur.compute(s);
      if (schur.info() != Eigen::Success) {
        throw NumericError("capacitance factorization failed after jitter");
      }
    }
    log_det_c = p_diag.array().log().sum() +
                2.0 * schur.matrixLLT().diagonal().array().log().sum();
  }

  // Split a U-ordered q-vector into eliminated / Schur parts.
  void split(const Eigen::VectorXd& w, Eigen::VectorXd& wx, Eigen::VectorXd& wy) const {
    const int r = design->rows();
    if (rows_eliminated) {
      wx = w.head(r);
      wy = w.tail(w.size() - r);
    } else {
      wy = w.head(r);
      wx = w.tail(w.size() - r);
    }
  }

  Eigen::VectorXd join(const Eigen::VectorXd& wx, const Eigen::VectorXd& wy) const {
    Eigen::VectorXd w(nx + ny);
    if (rows_eliminated)
      w << wx, wy;
    else
      w << wy, wx;
    return w;
  }

  Eigen::VectorXd apply_t(const Eigen::VectorXd& w) const {
    if (limit) return design->ut_minv_u_pinv() * w;
    Eigen::VectorXd wx, wy;
    split(w, wx, wy);
    const Eigen::VectorXd vx = sx * wx;
    const Eigen::VectorXd vy = sy * wy;
    const Eigen::VectorXd zy = schur.solve(vy - xmat.transpose() * vx);
    const Eigen::VectorXd zx = vx.cwiseQuotient(p_diag) - xmat * zy;
    return join(sx * zx, sy * zy);
  }

  const Eigen::MatrixXd& effect_operator() {
    std::call_once(t_once, [this] {
      if (limit) {
        t = design->ut_minv_u_pinv();
        return;
      }
      const Eigen::MatrixXd sinv = schur.solve(Eigen::MatrixXd::Identity(ny, ny));
      const Eigen::MatrixXd xs = xmat * sinv;
      Eigen::MatrixXd cxx = xs * xmat.transpose();
      cxx.diagonal() += p_diag.cwiseInverse();
      const int q = nx + ny;
      t.resize(q, q);
      const int ox = rows_eliminated ? 0 : ny;
      const int oy = rows_eliminated ? nx : 0;
      t.block(ox, ox, nx, nx) = (sx * sx) * cxx;
      t.block(oy, oy, ny, ny) = (sy * sy) * sinv;
      t.block(ox, oy, nx, ny) = -(sx * sy) * xs;
      t.block(oy, ox, ny, nx) = t.block(ox, oy, nx, ny).transpose();
    });
    return t;
  }
};

struct SigmaContext::Dense {
  Eigen::MatrixXd sigma;
  Eigen::LLT<Eigen::MatrixXd> llt;
  Eigen::MatrixXd sigma_inv;
};

SigmaContext::SigmaContext(const DesignSet& design, double lambda_a, double lambda_b, SolveMode mode)
    : design_(&design), mode_(mode), lambda_a_(lambda_a), lambda_b_(lambda_b) {
  check_lambda(lambda_a, "lambda_a");
  check_lambda(lambda_b, "lambda_b");
  const double la = effective_lambda(lambda_a);
  const double lb = effective_lambda(lambda_b);
  if (mode_ == SolveMode::fast) {
    limit_ = std::isinf(lambda_a) && std::isinf(lambda_b);
    fast_ = std::make_unique<Fast>(design, la, lb, limit_);
  } else {
    dense_ = std::make_unique<Dense>();
    dense_->sigma = build_dense_sigma(design, la, lb);
    dense_->llt.compute(dense_->sigma);
    if (dense_->llt.info() != Eigen::Success) throw NumericError("dense Sigma factorization failed");
    const int n = design.num_observed();
    dense_->sigma_inv = dense_->llt.solve(Eigen::MatrixXd::Identity(n, n));
  }
}

SigmaContext::~SigmaContext() = default;
SigmaContext::SigmaContext(SigmaContext&&) noexcept = default;
SigmaContext& SigmaContext::operator=(SigmaContext&&) noexcept = default;

Eigen::VectorXd SigmaContext::shrink_apply(const Eigen::VectorXd& x) const {
  if (x.size() != design_->num_observed()) throw ValidationError("vector length must equal |E|");
  if (dense_) return design_->m_diag().cwiseProduct(dense_->llt.solve(x));
  const Eigen::VectorXd minv_x = design_->weights().cwiseProduct(x);
  return x - design_->u_times(fast_->apply_t(design_->ut_times(minv_x)));
}

Eigen::VectorXd SigmaContext::solve(const Eigen::VectorXd& v) const {
  if (v.size() != design_->num_observed()) throw ValidationError("vector length must equal |E|");
  if (dense_) return dense_->llt.solve(v);
  return design_->weights().cwiseProduct(shrink_apply(v));
}

Eigen::MatrixXd SigmaContext::solve(const Eigen::MatrixXd& v) const {
  if (v.rows() != design_->num_observed()) throw ValidationError("matrix rows must equal |E|");
  if (dense_) return dense_->llt.solve(v);
  Eigen::MatrixXd out(v.rows(), v.cols());
  for (Eigen::Index j = 0; j < v.cols(); ++j) out.col(j) = solve(Eigen::VectorXd(v.col(j)));
  return out;
}

double SigmaContext::trace_sigma_inv_msq() const {
  const Eigen::VectorXd& m = design_->m_diag();
  if (dense_) return (dense_->sigma_inv.diagonal().array() * m.array().square()).sum();
  return m.sum() - effect_operator().cwiseProduct(design_->ut_u()).sum();
}

double SigmaContext::trace_sigma_inv_mqm(const QLoss& q) const {
  if (q.size() != design_->num_observed()) throw ValidationError("loss matrix does not match design");
  if (dense_) {
    const Eigen::VectorXd& m = design_->m_diag();
    const Eigen::MatrixXd mqm = m.asDiagonal() * q.dense() * m.asDiagonal();
    return dense_->sigma_inv.cwiseProduct(mqm).sum();
  }
  return q.trace_qm() - effect_operator().cwiseProduct(q.effect_gram()).sum();
}

BlockTraces SigmaContext::trace_blocks(const QLoss* q) const {
  const int r = design_->rows();
  const int c = design_->cols();
  BlockTraces out;
  if (dense_) {
    const int n = design_->num_observed();
    Eigen::MatrixXd za = Eigen::MatrixXd::Zero(n, r);
    Eigen::MatrixXd zb = Eigen::MatrixXd::Zero(n, c);
    for (int k = 0; k < n; ++k) {
      za(k, design_->cells()[k].row) = 1.0;
      zb(k, design_->cells()[k].col) = 1.0;
    }
    const Eigen::MatrixXd& si = dense_->sigma_inv;
    out.sigma_inv_a = (za.transpose() * si * za).trace();
    out.sigma_inv_b = (zb.transpose() * si * zb).trace();
    const Eigen::MatrixXd ga = design_->m_diag().asDiagonal() * (si * za);
    const Eigen::MatrixXd gb = design_->m_diag().asDiagonal() * (si * zb);
    if (q) {
      const Eigen::MatrixXd qd = q->dense();
      out.sigma_inv_a_mqm = (ga.transpose() * qd * ga).trace();
      out.sigma_inv_b_mqm = (gb.transpose() * qd * gb).trace();
    } else {
      out.sigma_inv_a_mqm = ga.squaredNorm();
      out.sigma_inv_b_mqm = gb.squaredNorm();
    }
    return out;
  }
  // U^T Sigma^{-1} U = A - A T A and M Sigma^{-1} U = U (I - T A), A = U^T M^{-1} U.
  const Eigen::MatrixXd a = design_->ut_minv_u();
  const Eigen::MatrixXd& t = effect_operator();
  const Eigen::MatrixXd ta = t * a;
  const Eigen::MatrixXd u_si_u = a - a * ta;
  out.sigma_inv_a = diag_sum(u_si_u, 0, r);
  out.sigma_inv_b = diag_sum(u_si_u, r, c);
  Eigen::MatrixXd resid = -ta;
  resid.diagonal().array() += 1.0;
  const Eigen::MatrixXd gram = q ? q->effect_gram() : design_->ut_u();
  const Eigen::MatrixXd inner = resid.transpose() * gram * resid;
  out.sigma_inv_a_mqm = diag_sum(inner, 0, r);
  out.sigma_inv_b_mqm = diag_sum(inner, r, c);
  return out;
}

double SigmaContext::log_det() const {
  if (dense_) return 2.0 * dense_->llt.matrixLLT().diagonal().array().log().sum();
  if (limit_) return std::numeric_limits<double>::infinity();
  return design_->m_diag().array().log().sum() + fast_->log_det_c;
}

Eigen::MatrixXd SigmaContext::dense_sigma() const {
  if (dense_) return dense_->sigma;
  return build_dense_sigma(*design_, effective_lambda(lambda_a_), effective_lambda(lambda_b_));
}

const Eigen::MatrixXd& SigmaContext::effect_operator() const {
  if (!fast_) throw ValidationError("effect operator is only available in fast mode");
  return fast_->effect_operator();
}

Eigen::MatrixXd build_dense_sigma(const DesignSet& design, double lambda_a, double lambda_b) {
  const int n = design.num_observed();
  const auto& cells = design.cells();
  Eigen::MatrixXd s(n, n);
  for (int k = 0; k < n; ++k) {
    for (int l = 0; l < n; ++l) {
      double v = 0.0;
      if (cells[k].row == cells[l].row) v += lambda_a;
      if (cells[k].col == cells[l].col) v += lambda_b;
      s(k, l) = v;
    }
    s(k, k) += design.m_diag()(k);
  }
  return s;
}

}  // namespace twoway
