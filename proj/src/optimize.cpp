#include "twoway/optimize.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <limits>

namespace twoway {

namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();

double clamp01(double v) { return std::clamp(v, 0.0, 1.0); }

UnitPoint clamp_box(UnitPoint p) { return {clamp01(p.x), clamp01(p.y)}; }

UnitPoint affine(const UnitPoint& a, const UnitPoint& b, double t) {
  // a + t (b - a)
  return clamp_box({a.x + t * (b.x - a.x), a.y + t * (b.y - a.y)});
}

double distance(const UnitPoint& a, const UnitPoint& b) { return std::hypot(a.x - b.x, a.y - b.y); }

// Lexicographic preference among equal values: larger x, then larger y.
bool preferred(const UnitPoint& a, const UnitPoint& b) {
  if (a.x != b.x) return a.x > b.x;
  return a.y > b.y;
}

}  // namespace

SearchResult minimize_unit_box(const std::function<double(UnitPoint)>& f,
                               const SearchOptions& options) {
  SearchResult out;
  int local_evals = 0;
  const auto eval = [&](UnitPoint p) {
    const double v = f(p);
    return std::isnan(v) ? kInf : v;
  };

  const int n = std::max(options.grid_points, 2);
  std::vector<std::pair<UnitPoint, double>> grid;
  grid.reserve(static_cast<size_t>(n) * n);
  UnitPoint best{};
  double best_value = kInf;
  for (int i = 0; i < n; ++i) {
    for (int j = 0; j < n; ++j) {
      const UnitPoint p{static_cast<double>(i) / (n - 1), static_cast<double>(j) / (n - 1)};
      const double v = eval(p);
      grid.emplace_back(p, v);
      if (v < best_value - options.tie_tol ||
          (std::abs(v - best_value) <= options.tie_tol && preferred(p, best)) ||
          (std::isinf(best_value) && v < best_value)) {
        best = p;
        best_value = v;
      }
    }
  }
  out.grid_evals = static_cast<int>(grid.size());
  for (const auto& [p, v] : grid) {
    if (std::abs(v - best_value) <= options.tie_tol) out.grid_ties.push_back(p);
  }
  out.best = best;
  out.value = best_value;
  if (std::isinf(best_value)) return out;

  // Nelder-Mead with standard coefficients.
  const double step = 1.0 / (n - 1);
  std::array<UnitPoint, 3> s;
  std::array<double, 3> fv;
  s[0] = best;
  s[1] = {best.x + step <= 1.0 ? best.x + step : best.x - step, best.y};
  s[2] = {best.x, best.y + step <= 1.0 ? best.y + step : best.y - step};
  fv[0] = best_value;
  fv[1] = eval(s[1]);
  fv[2] = eval(s[2]);
  local_evals = 2;

  while (local_evals < options.max_evals) {
    std::array<int, 3> idx{0, 1, 2};
    std::sort(idx.begin(), idx.end(), [&](int a, int b) {
      if (fv[a] != fv[b]) return fv[a] < fv[b];
      return preferred(s[a], s[b]);
    });
    const std::array<UnitPoint, 3> ss{s[idx[0]], s[idx[1]], s[idx[2]]};
    const std::array<double, 3> ff{fv[idx[0]], fv[idx[1]], fv[idx[2]]};
    s = ss;
    fv = ff;

    const double spread = fv[2] - fv[0];
    const double diameter = std::max({distance(s[0], s[1]), distance(s[0], s[2]), distance(s[1], s[2])});
    if (spread <= options.f_tol && diameter <= options.x_tol) break;
    if (diameter == 0.0) break;

    const UnitPoint centroid{0.5 * (s[0].x + s[1].x), 0.5 * (s[0].y + s[1].y)};
    const UnitPoint reflected = affine(centroid, s[2], -1.0);
    const double fr = eval(reflected);
    ++local_evals;
    if (fr < fv[0]) {
      const UnitPoint expanded = affine(centroid, s[2], -2.0);
      const double fe = eval(expanded);
      ++local_evals;
      if (fe < fr) {
        s[2] = expanded;
        fv[2] = fe;
      } else {
        s[2] = reflected;
        fv[2] = fr;
      }
      continue;
    }
    if (fr < fv[1]) {
      s[2] = reflected;
      fv[2] = fr;
      continue;
    }
    const bool outside = fr < fv[2];
    const UnitPoint contracted = outside ? affine(centroid, reflected, 0.5) : affine(centroid, s[2], 0.5);
    const double fc = eval(contracted);
    ++local_evals;
    if (fc < (outside ? fr : fv[2])) {
      s[2] = contracted;
      fv[2] = fc;
      continue;
    }
    for (int k = 1; k < 3; ++k) {
      s[k] = affine(s[0], s[k], 0.5);
      fv[k] = eval(s[k]);
      ++local_evals;
    }
  }

  out.local_evals = local_evals;
  for (int k = 0; k < 3; ++k) {
    if (fv[k] < out.value) {
      out.value = fv[k];
      out.best = s[k];
    }
  }
  return out;
}

}  // namespace twoway
