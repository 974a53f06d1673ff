#include "twoway/tables.hpp"

#include "twoway/error.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <mutex>
#include <numeric>
#include <sstream>
#include <unordered_map>

namespace twoway {

namespace {

constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();

int intern(std::unordered_map<std::string, int>& index, std::vector<std::string>& labels,
           const std::string& label) {
  auto [it, inserted] = index.try_emplace(label, static_cast<int>(labels.size()));
  if (inserted) labels.push_back(label);
  return it->second;
}

// Union-find over r row nodes followed by c column nodes.
struct Components {
  std::vector<int> parent;
  explicit Components(int n) : parent(n) { std::iota(parent.begin(), parent.end(), 0); }
  int find(int x) {
    while (parent[x] != x) {
      parent[x] = parent[parent[x]];
      x = parent[x];
    }
    return x;
  }
  void unite(int a, int b) { parent[find(a)] = find(b); }
};

std::string label_or_index(const std::vector<std::string>& labels, int i) {
  if (i < static_cast<int>(labels.size())) return labels[i];
  return std::to_string(i + 1);
}

}  // namespace

std::optional<double> CellAggregate::pooled_variance() const {
  if (within_df <= 0) return std::nullopt;
  return within_ss / static_cast<double>(within_df);
}

CellAggregate ingest_observations(std::span<const Observation> records) {
  if (records.empty()) throw ValidationError("no observations to ingest");

  CellAggregate agg;
  std::unordered_map<std::string, int> row_index, col_index;
  struct Slot {
    int r, c;
    double value;
  };
  std::vector<Slot> slots;
  slots.reserve(records.size());
  for (const auto& rec : records) {
    if (!std::isfinite(rec.value)) {
      throw ValidationError("non-finite value in cell (" + rec.row + ", " + rec.col + ")");
    }
    const int r = intern(row_index, agg.row_labels, rec.row);
    const int c = intern(col_index, agg.col_labels, rec.col);
    slots.push_back({r, c, rec.value});
  }

  const int nr = agg.rows();
  const int nc = agg.cols();
  agg.counts = Eigen::MatrixXi::Zero(nr, nc);
  Eigen::MatrixXd sums = Eigen::MatrixXd::Zero(nr, nc);
  for (const auto& s : slots) {
    agg.counts(s.r, s.c) += 1;
    sums(s.r, s.c) += s.value;
  }
  agg.means = Eigen::MatrixXd::Constant(nr, nc, kNaN);
  for (int i = 0; i < nr; ++i)
    for (int j = 0; j < nc; ++j)
      if (agg.counts(i, j) > 0) agg.means(i, j) = sums(i, j) / agg.counts(i, j);

  for (const auto& s : slots) {
    const double d = s.value - agg.means(s.r, s.c);
    agg.within_ss += d * d;
  }
  for (int i = 0; i < nr; ++i)
    for (int j = 0; j < nc; ++j)
      if (agg.counts(i, j) > 1) agg.within_df += agg.counts(i, j) - 1;
  return agg;
}

CellAggregate ingest_cell_summaries(std::span<const CellSummary> records) {
  if (records.empty()) throw ValidationError("no cell records to ingest");

  CellAggregate agg;
  std::unordered_map<std::string, int> row_index, col_index;
  struct Slot {
    int r, c, count;
    double mean;
  };
  std::vector<Slot> slots;
  for (const auto& rec : records) {
    if (!std::isfinite(rec.mean)) {
      throw ValidationError("non-finite mean in cell (" + rec.row + ", " + rec.col + ")");
    }
    if (rec.count < 1) {
      throw ValidationError("count must be >= 1 in cell (" + rec.row + ", " + rec.col + ")");
    }
    const int r = intern(row_index, agg.row_labels, rec.row);
    const int c = intern(col_index, agg.col_labels, rec.col);
    slots.push_back({r, c, rec.count, rec.mean});
  }
  agg.counts = Eigen::MatrixXi::Zero(agg.rows(), agg.cols());
  agg.means = Eigen::MatrixXd::Constant(agg.rows(), agg.cols(), kNaN);
  for (const auto& s : slots) {
    if (agg.counts(s.r, s.c) != 0) {
      throw ValidationError("duplicate cell (" + agg.row_labels[s.r] + ", " +
                            agg.col_labels[s.c] + ")");
    }
    agg.counts(s.r, s.c) = s.count;
    agg.means(s.r, s.c) = s.mean;
  }
  return agg;
}

// ---------------------------------------------------------------------------

CellTable::CellTable(Eigen::MatrixXi counts, Eigen::MatrixXd means, double sigma2,
                     std::vector<std::string> row_labels, std::vector<std::string> col_labels)
    : counts_(std::move(counts)),
      means_(std::move(means)),
      sigma2_(sigma2),
      row_labels_(std::move(row_labels)),
      col_labels_(std::move(col_labels)) {
  const int r = rows();
  const int c = cols();
  if (r < 2 || c < 2) {
    throw ValidationError("table must have at least 2 rows and 2 columns (got " +
                          std::to_string(r) + "x" + std::to_string(c) + ")");
  }
  if (means_.rows() != r || means_.cols() != c) {
    throw ValidationError("means and counts have different shapes");
  }
  if (!(sigma2_ > 0.0) || !std::isfinite(sigma2_)) {
    throw ValidationError("sigma2 must be finite and > 0");
  }
  if (!row_labels_.empty() && static_cast<int>(row_labels_.size()) != r) {
    throw ValidationError("row label count does not match table");
  }
  if (!col_labels_.empty() && static_cast<int>(col_labels_.size()) != c) {
    throw ValidationError("column label count does not match table");
  }
  if (row_labels_.empty())
    for (int i = 0; i < r; ++i) row_labels_.push_back(std::to_string(i + 1));
  if (col_labels_.empty())
    for (int j = 0; j < c; ++j) col_labels_.push_back(std::to_string(j + 1));

  for (int i = 0; i < r; ++i) {
    for (int j = 0; j < c; ++j) {
      const int k = counts_(i, j);
      if (k < 0) throw ValidationError("negative count");
      if (k > 0) {
        if (!std::isfinite(means_(i, j))) throw ValidationError("non-finite mean in observed cell");
        ++num_observed_;
      } else {
        means_(i, j) = kNaN;
      }
    }
  }
  if (num_observed_ < r + c - 1) {
    throw ValidationError("need at least r + c - 1 = " + std::to_string(r + c - 1) +
                          " nonempty cells, got " + std::to_string(num_observed_));
  }
}

CellTable CellTable::from_aggregate(const CellAggregate& agg, double sigma2) {
  return CellTable(agg.counts, agg.means, sigma2, agg.row_labels, agg.col_labels);
}

Eigen::VectorXd CellTable::observed_means() const {
  Eigen::VectorXd y(num_observed_);
  int k = 0;
  for (int i = 0; i < rows(); ++i)
    for (int j = 0; j < cols(); ++j)
      if (observed(i, j)) y(k++) = means_(i, j);
  return y;
}

CellTable CellTable::with_observed_means(const Eigen::VectorXd& y) const {
  if (y.size() != num_observed_) throw ValidationError("observed mean vector has wrong length");
  Eigen::MatrixXd means = means_;
  int k = 0;
  for (int i = 0; i < rows(); ++i)
    for (int j = 0; j < cols(); ++j)
      if (observed(i, j)) means(i, j) = y(k++);
  return CellTable(counts_, std::move(means), sigma2_, row_labels_, col_labels_);
}

CellTable CellTable::with_sigma2(double sigma2) const {
  return CellTable(counts_, means_, sigma2, row_labels_, col_labels_);
}

// ---------------------------------------------------------------------------

struct DesignSet::LazyPinv {
  std::once_flag once;
  Eigen::MatrixXd value;
};

DesignSet::DesignSet(const CellTable& table) : DesignSet(table.rows(), table.cols(), table.counts()) {}

DesignSet::DesignSet(int rows, int cols, const Eigen::MatrixXi& counts)
    : rows_(rows), cols_(cols), counts_(counts), lazy_(std::make_shared<LazyPinv>()) {
  if (counts_.rows() != rows || counts_.cols() != cols) {
    throw ValidationError("count matrix does not match design dimensions");
  }
  build();
}

void DesignSet::build() {
  for (int i = 0; i < rows_; ++i)
    for (int j = 0; j < cols_; ++j)
      if (counts_(i, j) > 0) {
        cells_.push_back({i, j});
        complete_index_.push_back(i * cols_ + j);
      }
  const int n = num_observed();
  m_diag_.resize(n);
  weights_.resize(n);
  for (int k = 0; k < n; ++k) {
    const double kij = counts_(cells_[k].row, cells_[k].col);
    weights_(k) = kij;
    m_diag_(k) = 1.0 / kij;
  }

  const int p = num_params();
  normal_ = Eigen::MatrixXd::Zero(p, p);
  for (const auto& cell : cells_) {
    const int idx[3] = {0, 1 + cell.row, 1 + rows_ + cell.col};
    for (int a : idx)
      for (int b : idx) normal_(a, b) += 1.0;
  }
  normal_pinv_ = symmetric_pinv(normal_, 1e-10, &rank_);

  Components uf(rows_ + cols_);
  for (const auto& cell : cells_) uf.unite(cell.row, rows_ + cell.col);
  const int root = uf.find(0);
  connected_ = true;
  for (int v = 1; v < rows_ + cols_; ++v)
    if (uf.find(v) != root) connected_ = false;
}

std::vector<std::pair<std::vector<int>, std::vector<int>>> DesignSet::components() const {
  Components uf(rows_ + cols_);
  for (const auto& cell : cells_) uf.unite(cell.row, rows_ + cell.col);
  std::unordered_map<int, int> slot;
  std::vector<std::pair<std::vector<int>, std::vector<int>>> out;
  for (int v = 0; v < rows_ + cols_; ++v) {
    const int root = uf.find(v);
    auto [it, inserted] = slot.try_emplace(root, static_cast<int>(out.size()));
    if (inserted) out.emplace_back();
    if (v < rows_)
      out[it->second].first.push_back(v);
    else
      out[it->second].second.push_back(v - rows_);
  }
  return out;
}

void DesignSet::require_connected(const std::vector<std::string>& row_labels,
                                  const std::vector<std::string>& col_labels) const {
  if (connected_) return;
  std::ostringstream msg;
  msg << "design is disconnected; components:";
  for (const auto& [rs, cs] : components()) {
    msg << " {rows:";
    for (std::size_t k = 0; k < rs.size(); ++k) msg << (k ? "," : " ") << label_or_index(row_labels, rs[k]);
    msg << "; cols:";
    for (std::size_t k = 0; k < cs.size(); ++k) msg << (k ? "," : " ") << label_or_index(col_labels, cs[k]);
    msg << "}";
  }
  throw DisconnectedDesignError(msg.str());
}

Eigen::SparseMatrix<double> DesignSet::z() const {
  std::vector<Eigen::Triplet<double>> t;
  t.reserve(3 * cells_.size());
  for (int k = 0; k < num_observed(); ++k) {
    t.emplace_back(k, 0, 1.0);
    t.emplace_back(k, 1 + cells_[k].row, 1.0);
    t.emplace_back(k, 1 + rows_ + cells_[k].col, 1.0);
  }
  Eigen::SparseMatrix<double> z(num_observed(), num_params());
  z.setFromTriplets(t.begin(), t.end());
  return z;
}

Eigen::SparseMatrix<double> DesignSet::z_complete() const {
  std::vector<Eigen::Triplet<double>> t;
  t.reserve(3 * num_cells());
  for (int i = 0; i < rows_; ++i)
    for (int j = 0; j < cols_; ++j) {
      const int k = i * cols_ + j;
      t.emplace_back(k, 0, 1.0);
      t.emplace_back(k, 1 + i, 1.0);
      t.emplace_back(k, 1 + rows_ + j, 1.0);
    }
  Eigen::SparseMatrix<double> zc(num_cells(), num_params());
  zc.setFromTriplets(t.begin(), t.end());
  return zc;
}

Eigen::MatrixXd DesignSet::complete_normal_matrix() const {
  const int p = num_params();
  Eigen::MatrixXd g = Eigen::MatrixXd::Zero(p, p);
  const double r = rows_;
  const double c = cols_;
  g(0, 0) = r * c;
  g.block(0, 1, 1, rows_).setConstant(c);
  g.block(1, 0, rows_, 1).setConstant(c);
  g.block(0, 1 + rows_, 1, cols_).setConstant(r);
  g.block(1 + rows_, 0, cols_, 1).setConstant(r);
  g.block(1, 1, rows_, rows_).diagonal().setConstant(c);
  g.block(1 + rows_, 1 + rows_, cols_, cols_).diagonal().setConstant(r);
  g.block(1, 1 + rows_, rows_, cols_).setOnes();
  g.block(1 + rows_, 1, cols_, rows_).setOnes();
  return g;
}

Eigen::MatrixXd DesignSet::ut_minv_u() const {
  const int q = num_effects();
  Eigen::MatrixXd a = Eigen::MatrixXd::Zero(q, q);
  for (int k = 0; k < num_observed(); ++k) {
    const int i = cells_[k].row;
    const int j = rows_ + cells_[k].col;
    const double w = weights_(k);
    a(i, i) += w;
    a(j, j) += w;
    a(i, j) += w;
    a(j, i) += w;
  }
  return a;
}

Eigen::MatrixXd DesignSet::ut_u() const {
  const int q = num_effects();
  Eigen::MatrixXd a = Eigen::MatrixXd::Zero(q, q);
  for (const auto& cell : cells_) {
    const int i = cell.row;
    const int j = rows_ + cell.col;
    a(i, i) += 1.0;
    a(j, j) += 1.0;
    a(i, j) += 1.0;
    a(j, i) += 1.0;
  }
  return a;
}

const Eigen::MatrixXd& DesignSet::ut_minv_u_pinv() const {
  std::call_once(lazy_->once, [this] { lazy_->value = symmetric_pinv(ut_minv_u(), 1e-10); });
  return lazy_->value;
}

Eigen::VectorXd DesignSet::u_times(const Eigen::VectorXd& w) const {
  Eigen::VectorXd out(num_observed());
  for (int k = 0; k < num_observed(); ++k) out(k) = w(cells_[k].row) + w(rows_ + cells_[k].col);
  return out;
}

Eigen::VectorXd DesignSet::ut_times(const Eigen::VectorXd& x) const {
  Eigen::VectorXd out = Eigen::VectorXd::Zero(num_effects());
  for (int k = 0; k < num_observed(); ++k) {
    out(cells_[k].row) += x(k);
    out(rows_ + cells_[k].col) += x(k);
  }
  return out;
}

Eigen::VectorXd DesignSet::z_times(const Eigen::VectorXd& theta) const {
  Eigen::VectorXd out(num_observed());
  for (int k = 0; k < num_observed(); ++k)
    out(k) = theta(0) + theta(1 + cells_[k].row) + theta(1 + rows_ + cells_[k].col);
  return out;
}

Eigen::VectorXd DesignSet::zt_times(const Eigen::VectorXd& x) const {
  Eigen::VectorXd out = Eigen::VectorXd::Zero(num_params());
  for (int k = 0; k < num_observed(); ++k) {
    out(0) += x(k);
    out(1 + cells_[k].row) += x(k);
    out(1 + rows_ + cells_[k].col) += x(k);
  }
  return out;
}

Eigen::VectorXd DesignSet::zc_times(const Eigen::VectorXd& theta) const {
  Eigen::VectorXd out(num_cells());
  for (int i = 0; i < rows_; ++i)
    for (int j = 0; j < cols_; ++j) out(i * cols_ + j) = theta(0) + theta(1 + i) + theta(1 + rows_ + j);
  return out;
}

// ---------------------------------------------------------------------------

double lambda_to_tilde(double lambda) {
  if (std::isinf(lambda)) return 0.0;
  return 1.0 / std::sqrt(1.0 + lambda);
}

double tilde_to_lambda(double tilde) {
  if (tilde <= 0.0) return std::numeric_limits<double>::infinity();
  return 1.0 / (tilde * tilde) - 1.0;
}

double quantile_type7(std::span<const double> values, double prob) {
  if (values.empty()) throw ValidationError("quantile of an empty sample");
  std::vector<double> v(values.begin(), values.end());
  std::sort(v.begin(), v.end());
  const double h = (static_cast<double>(v.size()) - 1.0) * prob;
  const auto lo = static_cast<std::size_t>(std::floor(h));
  const std::size_t hi = std::min(lo + 1, v.size() - 1);
  return v[lo] + (h - static_cast<double>(lo)) * (v[hi] - v[lo]);
}

std::pair<double, double> quantile_bounds(std::span<const double> values, double tau) {
  if (!(tau > 0.0 && tau <= 1.0)) throw ValidationError("tau must lie in (0, 1]");
  return {quantile_type7(values, tau / 2.0), quantile_type7(values, 1.0 - tau / 2.0)};
}

std::pair<double, double> quantile_bounds(const CellTable& table, double tau) {
  const Eigen::VectorXd y = table.observed_means();
  return quantile_bounds(std::span<const double>(y.data(), static_cast<std::size_t>(y.size())), tau);
}

bool is_connected(const CellTable& table) { return DesignSet(table).connected(); }

double imbalance_ratio(const DesignSet& design) {
  return design.weights().maxCoeff() / design.weights().minCoeff();
}

double imbalance_ratio(const CellTable& table) { return imbalance_ratio(DesignSet(table)); }

Eigen::MatrixXd symmetric_pinv(const Eigen::MatrixXd& a, double rel_tol, int* rank) {
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(a);
  if (es.info() != Eigen::Success) throw NumericError("eigendecomposition failed");
  const Eigen::VectorXd& ev = es.eigenvalues();
  const double cutoff = rel_tol * std::max(ev.cwiseAbs().maxCoeff(), 0.0);
  Eigen::VectorXd inv = Eigen::VectorXd::Zero(ev.size());
  int r = 0;
  for (Eigen::Index i = 0; i < ev.size(); ++i) {
    if (ev(i) > cutoff) {
      inv(i) = 1.0 / ev(i);
      ++r;
    }
  }
  if (rank) *rank = r;
  return es.eigenvectors() * inv.asDiagonal() * es.eigenvectors().transpose();
}

}  // namespace twoway
