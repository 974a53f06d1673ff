#include "twoway/simulation.hpp"

#include "twoway/error.hpp"
#include "twoway/risk.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdio>
#include <exception>
#include <limits>
#include <numeric>
#include <ostream>
#include <thread>

namespace twoway {

namespace {

constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();

std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9E3779B97F4A7C15ULL;
  x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ULL;
  x = (x ^ (x >> 27)) * 0x94D049BB133111EBULL;
  return x ^ (x >> 31);
}

// Runs body(i) for i in [0, n) on `threads` workers; the first exception is
// rethrown after all workers finish.
template <class Body>
void parallel_for(int n, int threads, Body&& body) {
  if (threads <= 0) threads = static_cast<int>(std::max(1u, std::thread::hardware_concurrency()));
  threads = std::min(threads, std::max(n, 1));
  if (threads == 1) {
    for (int i = 0; i < n; ++i) body(i);
    return;
  }
  std::atomic<int> next{0};
  std::vector<std::exception_ptr> errors(threads);
  std::vector<std::thread> pool;
  for (int t = 0; t < threads; ++t) {
    pool.emplace_back([&, t] {
      try {
        for (int i = next++; i < n; i = next++) body(i);
      } catch (...) {
        errors[t] = std::current_exception();
        next = n;
      }
    });
  }
  for (auto& th : pool) th.join();
  for (auto& e : errors)
    if (e) std::rethrow_exception(e);
}

Eigen::VectorXd draw_effects(const EffectSpec& spec, int n, std::mt19937_64& rng) {
  Eigen::VectorXd out(n);
  switch (spec.law) {
    case EffectLaw::normal: {
      std::normal_distribution<double> nd(0.0, std::sqrt(spec.var));
      for (int i = 0; i < n; ++i) out(i) = nd(rng);
      break;
    }
    case EffectLaw::point_mass:
      out.setConstant(spec.value);
      break;
    case EffectLaw::two_group: {
      const double s = std::sqrt(spec.var);
      for (int i = 0; i < n; ++i) out(i) = i < n / 2 ? s : -s;
      break;
    }
  }
  return out;
}

Eigen::MatrixXi draw_counts(const ScenarioSpec& spec, const Eigen::VectorXd& alpha,
                            std::mt19937_64& rng) {
  const int r = spec.rows;
  const int c = spec.cols;
  Eigen::MatrixXi k(r, c);
  switch (spec.count_law) {
    case CountLaw::constant:
      k.setConstant(spec.k_const);
      break;
    case CountLaw::uniform: {
      std::uniform_int_distribution<int> ud(spec.k_min, spec.k_max);
      for (int i = 0; i < r; ++i)
        for (int j = 0; j < c; ++j) k(i, j) = ud(rng);
      break;
    }
    case CountLaw::heavy: {
      std::bernoulli_distribution high(spec.heavy_prob);
      for (int i = 0; i < r; ++i)
        for (int j = 0; j < c; ++j) k(i, j) = high(rng) ? spec.k_high : spec.k_low;
      break;
    }
    case CountLaw::effect_linked: {
      std::vector<int> order(r);
      std::iota(order.begin(), order.end(), 0);
      std::stable_sort(order.begin(), order.end(),
                       [&](int a, int b) { return std::abs(alpha(a)) < std::abs(alpha(b)); });
      const double ratio = static_cast<double>(spec.k_low) / spec.k_high;
      for (int rank = 0; rank < r; ++rank) {
        const double t = r > 1 ? static_cast<double>(rank) / (r - 1) : 0.0;
        const int kr = std::max(1, static_cast<int>(std::lround(spec.k_high * std::pow(ratio, t))));
        k.row(order[rank]).setConstant(kr);
      }
      break;
    }
  }
  return k;
}

void remove_cells(const ScenarioSpec& spec, Eigen::MatrixXi& k, std::mt19937_64& rng) {
  const int r = spec.rows;
  const int c = spec.cols;
  const int drop = static_cast<int>(std::floor(spec.missing_frac * r * c));
  if (drop == 0) return;
  const Eigen::MatrixXi full = k;
  std::vector<int> cells(r * c);
  std::iota(cells.begin(), cells.end(), 0);
  for (int attempt = 0; attempt < 1000; ++attempt) {
    k = full;
    std::shuffle(cells.begin(), cells.end(), rng);
    for (int m = 0; m < drop; ++m) k(cells[m] / c, cells[m] % c) = 0;
    if ((k.array() > 0).count() >= r + c - 1 && DesignSet(r, c, k).connected()) return;
  }
  throw ValidationError("could not draw a connected design in 1000 attempts (missing_frac = " +
                        std::to_string(spec.missing_frac) + ")");
}

Eigen::VectorXd complete_eta(double mu, const Eigen::VectorXd& alpha, const Eigen::VectorXd& beta) {
  const auto r = alpha.size();
  const auto c = beta.size();
  Eigen::VectorXd eta(r * c);
  for (Eigen::Index i = 0; i < r; ++i)
    for (Eigen::Index j = 0; j < c; ++j) eta(i * c + j) = mu + alpha(i) + beta(j);
  return eta;
}

struct Summary {
  double mean = 0.0;
  double se = 0.0;
  int n = 0;
};

Summary summarize(const std::vector<double>& v) {
  Summary s;
  double sum = 0.0;
  for (double x : v)
    if (!std::isnan(x)) {
      sum += x;
      ++s.n;
    }
  if (s.n == 0) return {kNaN, kNaN, 0};
  s.mean = sum / s.n;
  double ss = 0.0;
  for (double x : v)
    if (!std::isnan(x)) ss += (x - s.mean) * (x - s.mean);
  s.se = s.n > 1 ? std::sqrt(ss / (s.n - 1) / s.n) : 0.0;
  return s;
}

std::string num(double v) {
  if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
  if (std::isnan(v)) return "nan";
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.12g", v);
  return buf;
}

const char* kEstimators[] = {"wls", "ml", "ure", "oracle"};

}  // namespace

std::mt19937_64 substream(std::uint64_t seed, std::uint64_t stream) {
  return std::mt19937_64(splitmix64(splitmix64(seed) ^ splitmix64(stream + 0x632BE59BD9B4E019ULL)));
}

std::string to_string(CountLaw law) {
  switch (law) {
    case CountLaw::constant: return "constant";
    case CountLaw::uniform: return "uniform";
    case CountLaw::heavy: return "heavy";
    case CountLaw::effect_linked: return "effect_linked";
  }
  return "?";
}

std::string to_string(EffectLaw law) {
  switch (law) {
    case EffectLaw::normal: return "normal";
    case EffectLaw::point_mass: return "point_mass";
    case EffectLaw::two_group: return "two_group";
  }
  return "?";
}

CountLaw parse_count_law(const std::string& name) {
  if (name == "constant") return CountLaw::constant;
  if (name == "uniform") return CountLaw::uniform;
  if (name == "heavy") return CountLaw::heavy;
  if (name == "effect_linked") return CountLaw::effect_linked;
  throw ValidationError("unknown count law '" + name + "'");
}

EffectLaw parse_effect_law(const std::string& name) {
  if (name == "normal") return EffectLaw::normal;
  if (name == "point_mass") return EffectLaw::point_mass;
  if (name == "two_group") return EffectLaw::two_group;
  throw ValidationError("unknown effect law '" + name + "'");
}

void ScenarioSpec::validate() const {
  if (rows < 2 || cols < 2) throw ValidationError("scenario needs at least 2 rows and 2 columns");
  if (!(sigma2 > 0.0) || !std::isfinite(sigma2)) throw ValidationError("scenario sigma2 must be positive");
  if (!(missing_frac >= 0.0 && missing_frac < 1.0)) throw ValidationError("missing_frac must lie in [0, 1)");
  if (alpha.var < 0.0 || beta.var < 0.0) throw ValidationError("effect variances must be >= 0");
  switch (count_law) {
    case CountLaw::constant:
      if (k_const < 1) throw ValidationError("k_const must be >= 1");
      break;
    case CountLaw::uniform:
      if (k_min < 1 || k_max < k_min) throw ValidationError("need 1 <= k_min <= k_max");
      break;
    case CountLaw::heavy:
    case CountLaw::effect_linked:
      if (k_low < 1 || k_high < k_low) throw ValidationError("need 1 <= k_low <= k_high");
      if (!(heavy_prob >= 0.0 && heavy_prob <= 1.0)) throw ValidationError("heavy_prob must lie in [0, 1]");
      break;
  }
}

Eigen::VectorXd ScenarioTruth::observed(const DesignSet& design) const {
  Eigen::VectorXd out(design.num_observed());
  for (int k = 0; k < design.num_observed(); ++k) out(k) = eta_complete(design.complete_index()[k]);
  return out;
}

ScenarioTruth draw_truth(const ScenarioSpec& spec) {
  spec.validate();
  std::mt19937_64 rng = substream(spec.seed, 0);
  ScenarioTruth t;
  t.mu = spec.mu_true;
  t.alpha = draw_effects(spec.alpha, spec.rows, rng);
  t.beta = draw_effects(spec.beta, spec.cols, rng);
  t.counts = draw_counts(spec, t.alpha, rng);
  remove_cells(spec, t.counts, rng);
  t.eta_complete = complete_eta(t.mu, t.alpha, t.beta);
  return t;
}

CellTable draw_replicate(const ScenarioSpec& spec, ScenarioTruth& truth, std::uint64_t replicate) {
  std::mt19937_64 rng = substream(spec.seed, 1 + replicate);
  if (spec.redraw_effects) {
    truth.alpha = draw_effects(spec.alpha, spec.rows, rng);
    truth.beta = draw_effects(spec.beta, spec.cols, rng);
    truth.eta_complete = complete_eta(truth.mu, truth.alpha, truth.beta);
  }
  std::normal_distribution<double> nd(0.0, 1.0);
  Eigen::MatrixXd means = Eigen::MatrixXd::Constant(spec.rows, spec.cols, kNaN);
  for (int i = 0; i < spec.rows; ++i)
    for (int j = 0; j < spec.cols; ++j) {
      const int k = truth.counts(i, j);
      if (k > 0) means(i, j) = truth.eta_complete(i * spec.cols + j) + std::sqrt(spec.sigma2 / k) * nd(rng);
    }
  return CellTable(truth.counts, std::move(means), spec.sigma2);
}

GeneratedScenario gen_scenario(const ScenarioSpec& spec) {
  ScenarioTruth truth = draw_truth(spec);
  CellTable table = draw_replicate(spec, truth, 0);
  return {std::move(table), truth.eta_complete};
}

const EstimatorRisk& RiskTable::at(const std::string& estimator) const {
  for (const auto& e : estimators)
    if (e.estimator == estimator) return e;
  throw ValidationError("no estimator '" + estimator + "' in risk table");
}

const std::vector<double>& RiskTable::losses_of(const std::string& estimator) const {
  for (std::size_t i = 0; i < estimators.size(); ++i)
    if (estimators[i].estimator == estimator) return losses[i];
  throw ValidationError("no estimator '" + estimator + "' in risk table");
}

RiskTable compare_estimators(const ScenarioSpec& spec, int replicates, const RunOptions& options) {
  if (replicates < 1) throw ValidationError("need at least one replicate");
  const ScenarioTruth truth = draw_truth(spec);
  const DesignSet design(spec.rows, spec.cols, truth.counts);
  FitOptions fo = options.fit;
  if (spec.loss) fo.loss = spec.loss;
  fo.skip_residuals = true;
  const QLoss q = fo.loss ? QLoss::make(design, *fo.loss) : QLoss::default_for(design);

  constexpr int kCount = 4;
  std::vector<std::vector<double>> losses(kCount, std::vector<double>(replicates, kNaN));
  std::vector<char> failed(replicates, 0);

  parallel_for(replicates, options.threads, [&](int rep) {
    ScenarioTruth local = truth;
    const CellTable table = draw_replicate(spec, local, static_cast<std::uint64_t>(rep));
    const Eigen::VectorXd y = table.observed_means();
    const Eigen::VectorXd eta = local.observed(design);
    try {
      const ShrinkageFit wls = fit_wls(design, q, y, spec.sigma2, fo);
      const ShrinkageFit ml = fit_ml(design, q, y, spec.sigma2, fo);
      const ShrinkageFit ure = fit_ure(design, q, y, spec.sigma2, fo);
      const ShrinkageFit oracle = oracle_fit(design, q, y, spec.sigma2, eta, fo, {ure.hp, ml.hp});
      losses[0][rep] = loss_q(wls.eta_obs, eta, q);
      losses[1][rep] = loss_q(ml.eta_obs, eta, q);
      losses[2][rep] = loss_q(ure.eta_obs, eta, q);
      losses[3][rep] = oracle.objective;
    } catch (const NumericError&) {
      failed[rep] = 1;
      for (auto& l : losses) l[rep] = kNaN;
    }
  });

  const int failures = static_cast<int>(std::count(failed.begin(), failed.end(), 1));
  if (failures * 100 > replicates) {
    throw NumericError(std::to_string(failures) + " of " + std::to_string(replicates) +
                       " replicates failed in scenario '" + spec.name + "'");
  }

  RiskTable out;
  out.scenario = spec.name;
  out.rows = spec.rows;
  out.cols = spec.cols;
  out.loss = q.mode();
  const Summary oracle = summarize(losses[3]);
  for (int e = 0; e < kCount; ++e) {
    EstimatorRisk er;
    er.estimator = kEstimators[e];
    const Summary s = summarize(losses[e]);
    er.replicates = s.n;
    er.failures = failures;
    er.mean_loss = s.mean;
    er.se = s.se;
    std::vector<double> gap(replicates, kNaN);
    int exceed = 0;
    for (int rep = 0; rep < replicates; ++rep) {
      if (failed[rep]) continue;
      gap[rep] = losses[e][rep] - losses[3][rep];
      if (losses[e][rep] >= losses[3][rep] + 0.1 * oracle.mean) ++exceed;
    }
    const Summary g = summarize(gap);
    er.gap = g.mean;
    er.gap_se = g.se;
    er.p_exceed = s.n > 0 ? static_cast<double>(exceed) / s.n : kNaN;
    out.estimators.push_back(er);
  }
  out.losses = std::move(losses);
  return out;
}

std::vector<RiskTable> oracle_gap_study(const std::vector<std::pair<int, int>>& sizes,
                                        const ScenarioSpec& base, int replicates,
                                        const RunOptions& options) {
  std::vector<RiskTable> out;
  for (const auto& [r, c] : sizes) {
    ScenarioSpec spec = base;
    spec.rows = r;
    spec.cols = c;
    out.push_back(compare_estimators(spec, replicates, options));
  }
  return out;
}

std::vector<ConcentrationRow> ure_concentration_study(const std::vector<std::pair<int, int>>& sizes,
                                                      const ScenarioSpec& base,
                                                      const std::vector<HyperParams>& grid,
                                                      int replicates, const RunOptions& options) {
  if (replicates < 2) throw ValidationError("need at least two replicates");
  std::vector<ConcentrationRow> out;
  for (const auto& [r, c] : sizes) {
    ScenarioSpec spec = base;
    spec.rows = r;
    spec.cols = c;
    const ScenarioTruth truth = draw_truth(spec);
    const DesignSet design(r, c, truth.counts);
    const QLoss q = spec.loss ? QLoss::make(design, *spec.loss) : QLoss::default_for(design);
    std::vector<SigmaContext> contexts;
    for (const HyperParams& hp : grid) {
      contexts.emplace_back(design, hp.lambda_a, hp.lambda_b);
      contexts.back().effect_operator();  // build the lazy operator before sharing
    }

    const int g = static_cast<int>(grid.size());
    std::vector<std::vector<double>> err(g, std::vector<double>(replicates));
    parallel_for(replicates, options.threads, [&](int rep) {
      ScenarioTruth local = truth;
      const CellTable table = draw_replicate(spec, local, static_cast<std::uint64_t>(rep));
      const Eigen::VectorXd y = table.observed_means();
      const Eigen::VectorXd eta = local.observed(design);
      for (int h = 0; h < g; ++h) {
        const double ure = ure_value(contexts[h], y, grid[h].mu, spec.sigma2, q);
        const double loss = loss_q(bayes_estimate(contexts[h], y, grid[h].mu), eta, q);
        err[h][rep] = ure - loss;
      }
    });

    for (int h = 0; h < g; ++h) {
      ConcentrationRow row;
      row.scenario = spec.name;
      row.rows = r;
      row.cols = c;
      row.hp = grid[h];
      row.replicates = replicates;
      const Summary s = summarize(err[h]);
      std::vector<double> abs_err(err[h].size());
      std::transform(err[h].begin(), err[h].end(), abs_err.begin(), [](double v) { return std::abs(v); });
      const Summary a = summarize(abs_err);
      row.mean_error = s.mean;
      row.se_error = s.se;
      row.mean_abs_error = a.mean;
      row.se_abs_error = a.se;
      out.push_back(row);
    }
  }
  return out;
}

void write_risk_csv(std::ostream& out, const std::vector<RiskTable>& tables) {
  out << "scenario,estimator,size,rows,cols,loss,replicates,failures,mean_loss,se,gap,gap_se,p_exceed\n";
  for (const auto& t : tables) {
    for (const auto& e : t.estimators) {
      out << t.scenario << ',' << e.estimator << ',' << t.rows << 'x' << t.cols << ',' << t.rows << ','
          << t.cols << ',' << to_string(t.loss) << ',' << e.replicates << ',' << e.failures << ','
          << num(e.mean_loss) << ',' << num(e.se) << ',' << num(e.gap) << ',' << num(e.gap_se) << ','
          << num(e.p_exceed) << '\n';
    }
  }
}

void write_concentration_csv(std::ostream& out, const std::vector<ConcentrationRow>& rows) {
  out << "scenario,size,rows,cols,mu,lambda_a,lambda_b,replicates,mean_error,se_error,"
         "mean_abs_error,se_abs_error\n";
  for (const auto& r : rows) {
    out << r.scenario << ',' << r.rows << 'x' << r.cols << ',' << r.rows << ',' << r.cols << ','
        << num(r.hp.mu) << ',' << num(r.hp.lambda_a) << ',' << num(r.hp.lambda_b) << ','
        << r.replicates << ',' << num(r.mean_error) << ',' << num(r.se_error) << ','
        << num(r.mean_abs_error) << ',' << num(r.se_abs_error) << '\n';
  }
}

}  // namespace twoway
