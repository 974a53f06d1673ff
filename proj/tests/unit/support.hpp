#pragma once

#include "twoway/tables.hpp"

#include <Eigen/Dense>

#include <random>

namespace testing {

// Random connected count table with entries in [1, kmax] and roughly
// `missing` of the cells emptied.
inline Eigen::MatrixXi random_counts(std::mt19937_64& rng, int r, int c, int kmax = 5,
                                     double missing = 0.0) {
  std::uniform_int_distribution<int> kd(1, kmax);
  std::bernoulli_distribution drop(missing);
  for (;;) {
    Eigen::MatrixXi k(r, c);
    for (int i = 0; i < r; ++i)
      for (int j = 0; j < c; ++j) k(i, j) = drop(rng) ? 0 : kd(rng);
    if ((k.array() > 0).count() < r + c - 1) continue;
    if (twoway::DesignSet(r, c, k).connected()) return k;
  }
}

inline Eigen::VectorXd random_vector(std::mt19937_64& rng, int n, double scale = 1.0) {
  std::normal_distribution<double> nd(0.0, scale);
  Eigen::VectorXd v(n);
  for (int i = 0; i < n; ++i) v(i) = nd(rng);
  return v;
}

inline twoway::CellTable random_table(std::mt19937_64& rng, int r, int c, int kmax = 5,
                                      double missing = 0.0, double sigma2 = 1.0) {
  const Eigen::MatrixXi k = random_counts(rng, r, c, kmax, missing);
  Eigen::MatrixXd means(r, c);
  std::normal_distribution<double> nd(0.0, 1.0);
  for (int i = 0; i < r; ++i)
    for (int j = 0; j < c; ++j) means(i, j) = nd(rng) + 0.5 * i - 0.3 * j;
  return twoway::CellTable(k, means, sigma2);
}

// Sigma built entry by entry from the cell list.
inline Eigen::MatrixXd naive_sigma(const twoway::DesignSet& d, double la, double lb) {
  const int n = d.num_observed();
  Eigen::MatrixXd s = Eigen::MatrixXd::Zero(n, n);
  for (int a = 0; a < n; ++a) {
    for (int b = 0; b < n; ++b) {
      if (d.cells()[a].row == d.cells()[b].row) s(a, b) += la;
      if (d.cells()[a].col == d.cells()[b].col) s(a, b) += lb;
    }
    s(a, a) += 1.0 / d.counts()(d.cells()[a].row, d.cells()[a].col);
  }
  return s;
}

inline double rel_err(double a, double b) { return std::abs(a - b) / std::max(1.0, std::abs(b)); }

inline double rel_err(const Eigen::MatrixXd& a, const Eigen::MatrixXd& b) {
  return (a - b).norm() / std::max(1.0, b.norm());
}

}  // namespace testing
