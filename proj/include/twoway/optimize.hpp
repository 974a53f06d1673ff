#pragma once

#include <functional>
#include <vector>

namespace twoway {

struct UnitPoint {
  double x = 0.0;
  double y = 0.0;
};

struct SearchOptions {
  int grid_points = 33;     // per axis, spaced evenly on [0, 1]
  int max_evals = 500;      // local refinement budget
  double f_tol = 1e-10;     // spread of simplex values
  double x_tol = 1e-8;      // simplex diameter
  double tie_tol = 1e-12;   // grid values this close count as ties
};

struct SearchResult {
  UnitPoint best;
  double value = 0.0;
  int grid_evals = 0;
  int local_evals = 0;
  /// Grid points whose value is within tie_tol of the best grid value.
  std::vector<UnitPoint> grid_ties;
};

/// Minimizes f over [0, 1]^2: full grid sweep, then Nelder-Mead from the best
/// grid point with proposals clamped to the box. Among grid ties the point
/// with the larger x (then larger y) wins. NaN values count as +infinity.
SearchResult minimize_unit_box(const std::function<double(UnitPoint)>& f,
                               const SearchOptions& options = {});

}  // namespace twoway
