#pragma once

#include <Eigen/Dense>
#include <Eigen/Sparse>

#include <memory>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

namespace twoway {

/// One replicate-level record: the response `value` observed in cell
/// (`row`, `col`).
struct Observation {
  std::string row;
  std::string col;
  double value = 0.0;
};

/// One aggregated record: `count` observations in cell (`row`, `col`) with
/// average `mean`.
struct CellSummary {
  std::string row;
  std::string col;
  int count = 0;
  double mean = 0.0;
};

/// Per-cell counts and averages before validation. Labels are dense indices in
/// first-appearance order.
struct CellAggregate {
  std::vector<std::string> row_labels;
  std::vector<std::string> col_labels;
  Eigen::MatrixXi counts;  // r x c, zero for empty cells
  Eigen::MatrixXd means;   // r x c, NaN for empty cells
  double within_ss = 0.0;  // sum over cells of squared deviations from the cell mean
  long within_df = 0;      // sum over cells of (K_ij - 1)

  int rows() const { return static_cast<int>(row_labels.size()); }
  int cols() const { return static_cast<int>(col_labels.size()); }

  /// Pooled within-cell variance sum (n_cell - 1) s^2 / sum (n_cell - 1);
  /// empty when no cell has a replicate.
  std::optional<double> pooled_variance() const;
};

/// Aggregate replicate-level records to cell averages.
CellAggregate ingest_observations(std::span<const Observation> records);

/// Assemble already-aggregated records. Duplicate cells are rejected.
CellAggregate ingest_cell_summaries(std::span<const CellSummary> records);

/// The r x c layout: counts K_ij, observed cell averages y_ij and the known
/// noise variance sigma^2. Immutable after construction.
class CellTable {
 public:
  CellTable(Eigen::MatrixXi counts, Eigen::MatrixXd means, double sigma2,
            std::vector<std::string> row_labels = {},
            std::vector<std::string> col_labels = {});

  static CellTable from_aggregate(const CellAggregate& agg, double sigma2);

  int rows() const { return static_cast<int>(counts_.rows()); }
  int cols() const { return static_cast<int>(counts_.cols()); }
  int count(int i, int j) const { return counts_(i, j); }
  double mean(int i, int j) const { return means_(i, j); }
  bool observed(int i, int j) const { return counts_(i, j) > 0; }
  double sigma2() const { return sigma2_; }
  int num_observed() const { return num_observed_; }
  bool complete() const { return num_observed_ == rows() * cols(); }

  const Eigen::MatrixXi& counts() const { return counts_; }
  const Eigen::MatrixXd& means() const { return means_; }
  const std::vector<std::string>& row_labels() const { return row_labels_; }
  const std::vector<std::string>& col_labels() const { return col_labels_; }

  /// Observed cell averages in lexicographic (row-major) cell order.
  Eigen::VectorXd observed_means() const;

  /// Same layout, new observed averages (lexicographic order).
  CellTable with_observed_means(const Eigen::VectorXd& y) const;

  /// Same layout and data, different noise variance.
  CellTable with_sigma2(double sigma2) const;

 private:
  Eigen::MatrixXi counts_;
  Eigen::MatrixXd means_;
  double sigma2_;
  int num_observed_ = 0;
  std::vector<std::string> row_labels_;
  std::vector<std::string> col_labels_;
};

struct Cell {
  int row = 0;
  int col = 0;
};

/// Design matrices of the observed cells.
///
/// Column layout of Z and Zc is [intercept | row block (r) | column block (c)];
/// the row and column blocks together form U = [Z_A Z_B], the q = r + c random
/// effect columns. Rows of Z follow the lexicographic order of the observed
/// cells, which is also the order of M's diagonal.
class DesignSet {
 public:
  explicit DesignSet(const CellTable& table);
  DesignSet(int rows, int cols, const Eigen::MatrixXi& counts);

  int rows() const { return rows_; }
  int cols() const { return cols_; }
  int num_cells() const { return rows_ * cols_; }
  int num_observed() const { return static_cast<int>(cells_.size()); }
  int num_effects() const { return rows_ + cols_; }
  int num_params() const { return rows_ + cols_ + 1; }
  bool complete() const { return num_observed() == num_cells(); }

  const std::vector<Cell>& cells() const { return cells_; }
  const Eigen::MatrixXi& counts() const { return counts_; }
  /// Diagonal of M, i.e. 1 / K_ij over observed cells.
  const Eigen::VectorXd& m_diag() const { return m_diag_; }
  /// Diagonal of M^{-1}, i.e. K_ij over observed cells.
  const Eigen::VectorXd& weights() const { return weights_; }
  /// Linear index i * c + j of each observed cell in the complete layout.
  const std::vector<int>& complete_index() const { return complete_index_; }

  int rank() const { return rank_; }
  bool connected() const { return connected_; }
  /// Connected components of the row/column incidence graph, each as a pair
  /// of (row indices, column indices).
  std::vector<std::pair<std::vector<int>, std::vector<int>>> components() const;
  /// Throws DisconnectedDesignError naming the components when not connected.
  void require_connected(const std::vector<std::string>& row_labels = {},
                         const std::vector<std::string>& col_labels = {}) const;

  Eigen::SparseMatrix<double> z() const;
  Eigen::SparseMatrix<double> z_complete() const;

  /// Z^T Z, (Z^T Z)^+ and Zc^T Zc, all (r+c+1) x (r+c+1).
  const Eigen::MatrixXd& normal_matrix() const { return normal_; }
  const Eigen::MatrixXd& normal_pinv() const { return normal_pinv_; }
  Eigen::MatrixXd complete_normal_matrix() const;

  /// U^T M^{-1} U and U^T U (q x q).
  Eigen::MatrixXd ut_minv_u() const;
  Eigen::MatrixXd ut_u() const;
  /// Moore-Penrose inverse of U^T M^{-1} U; computed once on first use.
  const Eigen::MatrixXd& ut_minv_u_pinv() const;

  Eigen::VectorXd u_times(const Eigen::VectorXd& w) const;    // U w
  Eigen::VectorXd ut_times(const Eigen::VectorXd& x) const;   // U^T x
  Eigen::VectorXd z_times(const Eigen::VectorXd& theta) const;   // Z theta
  Eigen::VectorXd zt_times(const Eigen::VectorXd& x) const;      // Z^T x
  Eigen::VectorXd zc_times(const Eigen::VectorXd& theta) const;  // Zc theta

 private:
  void build();

  int rows_ = 0;
  int cols_ = 0;
  Eigen::MatrixXi counts_;
  std::vector<Cell> cells_;
  std::vector<int> complete_index_;
  Eigen::VectorXd m_diag_;
  Eigen::VectorXd weights_;
  Eigen::MatrixXd normal_;
  Eigen::MatrixXd normal_pinv_;
  int rank_ = 0;
  bool connected_ = false;

  struct LazyPinv;
  std::shared_ptr<LazyPinv> lazy_;
};

/// Location, row and column relative variance components. The variances may
/// be +infinity (no shrinkage along that factor).
struct HyperParams {
  double mu = 0.0;
  double lambda_a = 0.0;
  double lambda_b = 0.0;
};

/// lambda -> (1 + lambda)^{-1/2} in [0, 1]; +inf maps to 0.
double lambda_to_tilde(double lambda);
/// Inverse of lambda_to_tilde; 0 maps to +inf.
double tilde_to_lambda(double tilde);

/// Type-7 quantile (linear interpolation between order statistics).
double quantile_type7(std::span<const double> values, double prob);

/// Bounds [a, b] for the location hyper-parameter: the tau/2 and 1 - tau/2
/// quantiles of the observed cell averages.
std::pair<double, double> quantile_bounds(std::span<const double> values, double tau);
std::pair<double, double> quantile_bounds(const CellTable& table, double tau);

/// True iff the bipartite row/column graph of nonempty cells is connected.
bool is_connected(const CellTable& table);

/// Largest over smallest observed count.
double imbalance_ratio(const CellTable& table);
double imbalance_ratio(const DesignSet& design);

/// Moore-Penrose inverse of a symmetric PSD matrix; eigenvalues below
/// rel_tol * largest are treated as zero. `rank` receives the numerical rank.
Eigen::MatrixXd symmetric_pinv(const Eigen::MatrixXd& a, double rel_tol = 1e-10,
                               int* rank = nullptr);

}  // namespace twoway
