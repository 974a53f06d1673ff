#pragma once

#include "twoway/estimators.hpp"
#include "twoway/tables.hpp"

#include <Eigen/Dense>

#include <cstdint>
#include <iosfwd>
#include <optional>
#include <random>
#include <string>
#include <vector>

namespace twoway {

/// Independent generator for stream `stream` of `seed` (SplitMix64-mixed).
std::mt19937_64 substream(std::uint64_t seed, std::uint64_t stream);

enum class CountLaw {
  constant,      // K_ij = k_const
  uniform,       // K_ij ~ U{k_min, ..., k_max}
  heavy,         // k_high with probability heavy_prob, else k_low
  effect_linked  // row counts fall geometrically from k_high to k_low as |alpha_i| grows
};

enum class EffectLaw {
  normal,      // N(0, var)
  point_mass,  // every effect equals `value`
  two_group    // first half +sqrt(var), second half -sqrt(var)
};

std::string to_string(CountLaw law);
std::string to_string(EffectLaw law);
CountLaw parse_count_law(const std::string& name);
EffectLaw parse_effect_law(const std::string& name);

struct EffectSpec {
  EffectLaw law = EffectLaw::normal;
  double var = 1.0;
  double value = 0.0;
};

struct ScenarioSpec {
  std::string name = "scenario";
  int rows = 10;
  int cols = 10;
  CountLaw count_law = CountLaw::constant;
  int k_const = 1;
  int k_min = 1;
  int k_max = 5;
  int k_low = 1;
  int k_high = 20;
  double heavy_prob = 0.5;
  double missing_frac = 0.0;
  EffectSpec alpha;
  EffectSpec beta;
  double mu_true = 0.0;
  double sigma2 = 1.0;
  std::uint64_t seed = 1;
  /// Draw fresh effects in every replicate instead of fixing them once.
  bool redraw_effects = false;
  std::optional<LossMode> loss;

  void validate() const;
};

/// Counts and effects of a scenario; fixed across replicates unless the
/// effects are redrawn.
struct ScenarioTruth {
  Eigen::MatrixXi counts;
  Eigen::VectorXd alpha;
  Eigen::VectorXd beta;
  double mu = 0.0;
  Eigen::VectorXd eta_complete;  // r c, row-major

  /// eta on the observed cells of `design`.
  Eigen::VectorXd observed(const DesignSet& design) const;
};

/// Counts and effects from substream 0. Empty cells are drawn by rejection
/// until the design is connected (at most 1000 attempts).
ScenarioTruth draw_truth(const ScenarioSpec& spec);

/// Cell averages of replicate `replicate` (substream 1 + replicate):
/// y_ij ~ N(eta_ij, sigma2 / K_ij). With redraw_effects, `truth` is updated.
CellTable draw_replicate(const ScenarioSpec& spec, ScenarioTruth& truth, std::uint64_t replicate);

struct GeneratedScenario {
  CellTable table;
  Eigen::VectorXd eta_complete;
};

/// Truth plus replicate 0.
GeneratedScenario gen_scenario(const ScenarioSpec& spec);

struct RunOptions {
  int threads = 1;  // 0 = hardware concurrency
  FitOptions fit;
};

struct EstimatorRisk {
  std::string estimator;
  int replicates = 0;
  int failures = 0;
  double mean_loss = 0.0;
  double se = 0.0;
  double gap = 0.0;       // mean of loss - oracle loss
  double gap_se = 0.0;
  double p_exceed = 0.0;  // share with loss >= oracle loss + 0.1 * oracle risk
};

struct RiskTable {
  std::string scenario;
  int rows = 0;
  int cols = 0;
  LossMode loss = LossMode::identity;
  std::vector<EstimatorRisk> estimators;       // wls, ml, ure, oracle
  std::vector<std::vector<double>> losses;     // per estimator, per replicate (NaN on failure)

  const EstimatorRisk& at(const std::string& estimator) const;
  const std::vector<double>& losses_of(const std::string& estimator) const;
};

/// Runs WLS, EBMLE, URE and the oracle on N replicates with common random
/// numbers. Replicates whose fit fails are counted; more than 1% failures
/// aborts the run.
RiskTable compare_estimators(const ScenarioSpec& spec, int replicates, const RunOptions& options = {});

/// compare_estimators at each size of the ladder.
std::vector<RiskTable> oracle_gap_study(const std::vector<std::pair<int, int>>& sizes,
                                        const ScenarioSpec& base, int replicates,
                                        const RunOptions& options = {});

struct ConcentrationRow {
  std::string scenario;
  int rows = 0;
  int cols = 0;
  HyperParams hp;
  int replicates = 0;
  double mean_error = 0.0;  // mean of URE - loss
  double se_error = 0.0;
  double mean_abs_error = 0.0;
  double se_abs_error = 0.0;
};

/// For each size and each fixed hyper-parameter triple, Monte-Carlo moments
/// of URE - loss of the Bayes rule.
std::vector<ConcentrationRow> ure_concentration_study(const std::vector<std::pair<int, int>>& sizes,
                                                      const ScenarioSpec& base,
                                                      const std::vector<HyperParams>& grid,
                                                      int replicates, const RunOptions& options = {});

void write_risk_csv(std::ostream& out, const std::vector<RiskTable>& tables);
void write_concentration_csv(std::ostream& out, const std::vector<ConcentrationRow>& rows);

}  // namespace twoway
