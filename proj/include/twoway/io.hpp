#pragma once

#include "twoway/estimators.hpp"
#include "twoway/simulation.hpp"
#include "twoway/tables.hpp"

#include <cstdint>
#include <iosfwd>
#include <map>
#include <optional>
#include <string>
#include <vector>

namespace twoway {

enum class InputSchema { raw, agg };

InputSchema parse_schema(const std::string& name);

/// raw: header with columns row, col, value (any order, extra columns ignored).
std::vector<Observation> read_raw_csv(std::istream& in);
/// agg: header with columns row, col, count, mean.
std::vector<CellSummary> read_agg_csv(std::istream& in);
CellAggregate read_table_csv(std::istream& in, InputSchema schema);

/// Lowercase hex SHA-256 of `bytes`.
std::string sha256_hex(const std::string& bytes);

struct ReportDiagnostics {
  std::optional<EstimatingResiduals> residuals;
  double nu = 0.0;
  std::optional<double> lambda1_q;  // absent for disconnected designs
  std::optional<double> a2;
  bool connected = true;
  int rank = 0;
  int grid_ties = 0;
  int evaluations = 0;
};

struct Provenance {
  std::string input_digest;
  std::optional<std::uint64_t> seed;
  std::string tool_version;
  std::string timestamp;  // the only field that varies between identical runs
};

struct FitReport {
  int schema_version = 1;
  std::string method;
  std::string loss;
  double tau = 0.05;
  double sigma2 = 1.0;
  std::string sigma2_source = "given";  // or "pooled"
  HyperParams hp;
  double tilde_a = 0.0;
  double tilde_b = 0.0;
  bool mu_clamped = false;
  double mu_lower = 0.0;
  double mu_upper = 0.0;
  double objective = 0.0;
  std::vector<std::string> row_labels;
  std::vector<std::string> col_labels;
  std::vector<std::vector<int>> counts;            // r x c
  std::vector<std::vector<double>> eta_complete;   // r x c
  ReportDiagnostics diagnostics;
  Provenance provenance;

  bool operator==(const FitReport&) const;
};

/// Everything except the provenance block.
FitReport make_report(const ShrinkageFit& fit, const CellTable& table);

/// JSON with two-space indentation. Infinite values are written as "inf".
std::string dump_report(const FitReport& report);
FitReport parse_report(const std::string& text);

/// key = value lines; '#' starts a comment; keys are case-sensitive.
std::map<std::string, std::string> parse_key_values(std::istream& in);

struct StudyConfig {
  ScenarioSpec scenario;
  std::vector<std::pair<int, int>> sizes;  // empty: the scenario's own size
  int replicates = 200;
  int threads = 1;
  std::vector<HyperParams> hp_grid;
  FitOptions fit;
};

/// Builds a study configuration; unknown keys are rejected.
StudyConfig study_config(const std::map<std::string, std::string>& kv);

}  // namespace twoway
