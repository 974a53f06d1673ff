#include "twoway/error.hpp"
#include "twoway/estimators.hpp"
#include "twoway/io.hpp"
#include "twoway/risk.hpp"
#include "twoway/simulation.hpp"

#include <CLI11.hpp>

#include <chrono>
#include <cstdio>
#include <cstdlib>
#include <ctime>
#include <fstream>
#include <iostream>
#include <map>
#include <sstream>

using namespace twoway;

namespace {

constexpr int kExitValidation = 2;
constexpr int kExitNumeric = 3;

std::string read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ValidationError("cannot open '" + path + "'");
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write_output(const std::string& path, const std::string& text) {
  if (path.empty() || path == "-") {
    std::cout << text;
    return;
  }
  std::ofstream out(path, std::ios::binary);
  if (!out) throw ValidationError("cannot write '" + path + "'");
  out << text;
}

// SOURCE_DATE_EPOCH pins the timestamp for reproducible output.
std::string timestamp() {
  std::time_t t = std::time(nullptr);
  if (const char* e = std::getenv("SOURCE_DATE_EPOCH")) t = static_cast<std::time_t>(std::atoll(e));
  std::tm tm{};
  gmtime_r(&t, &tm);
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

struct FitArgs {
  std::string input;
  std::string schema = "raw";
  std::string method = "ure";
  double sigma2 = 0.0;
  bool estimate_sigma2 = false;
  double tau = 0.05;
  std::string loss;
  std::string out;
  std::string mode = "fast";
};

int run_fit(const FitArgs& a) {
  const std::string bytes = read_file(a.input);
  std::istringstream in(bytes);
  const CellAggregate agg = read_table_csv(in, parse_schema(a.schema));
  double sigma2 = a.sigma2;
  std::string source = "given";
  if (a.estimate_sigma2) {
    const auto pooled = agg.pooled_variance();
    if (!pooled)
      throw ValidationError("--estimate-sigma2 needs replicate observations in some cell");
    sigma2 = *pooled;
    source = "pooled";
  }
  const CellTable table = CellTable::from_aggregate(agg, sigma2);
  FitOptions opts;
  opts.tau = a.tau;
  if (!a.loss.empty()) opts.loss = parse_loss_mode(a.loss);
  if (a.mode == "dense") opts.solve = SolveMode::dense;
  else if (a.mode != "fast") throw ValidationError("unknown solve mode '" + a.mode + "'");
  const Method method = parse_method(a.method);
  if (method == Method::oracle) throw ValidationError("the oracle needs the true means");
  const ShrinkageFit f = fit(table, method, opts);
  FitReport report = make_report(f, table);
  report.sigma2_source = source;
  report.provenance.input_digest = sha256_hex(bytes);
  report.provenance.timestamp = timestamp();
  write_output(a.out, dump_report(report));
  return 0;
}

struct DiagnoseArgs {
  std::string input;
  std::string schema = "raw";
};

int run_diagnose(const DiagnoseArgs& a) {
  std::ifstream in(a.input, std::ios::binary);
  if (!in) throw ValidationError("cannot open '" + a.input + "'");
  const CellAggregate agg = read_table_csv(in, parse_schema(a.schema));
  const DesignSet design(agg.rows(), agg.cols(), agg.counts);
  std::printf("rows %d\ncols %d\nobserved_cells %d\n", design.rows(), design.cols(),
              design.num_observed());
  std::printf("connected %s\n", design.connected() ? "yes" : "no");
  if (!design.connected()) {
    const auto comps = design.components();
    std::printf("components %zu\n", comps.size());
    for (std::size_t k = 0; k < comps.size(); ++k) {
      std::printf("component %zu rows:", k + 1);
      for (int i : comps[k].first) std::printf(" %s", agg.row_labels[i].c_str());
      std::printf(" cols:");
      for (int j : comps[k].second) std::printf(" %s", agg.col_labels[j].c_str());
      std::printf("\n");
    }
  }
  std::printf("nu %.6g\n", imbalance_ratio(design));
  if (design.connected()) {
    const double l1 = lambda1_q(design);
    std::printf("lambda1_q %.6g\n", l1);
    std::printf("a2 %.6g\n", a2_statistic(design, l1));
  } else {
    std::printf("lambda1_q n/a\na2 n/a\n");
  }
  std::map<int, int> hist;
  for (int i = 0; i < design.rows(); ++i)
    for (int j = 0; j < design.cols(); ++j) ++hist[agg.counts(i, j)];
  std::printf("count histogram\n");
  for (const auto& [k, n] : hist) std::printf("  %d %d\n", k, n);
  if (const auto pooled = agg.pooled_variance()) std::printf("pooled_variance %.6g\n", *pooled);
  return 0;
}

struct SimulateArgs {
  std::string study = "compare";
  std::string config;
  std::uint64_t seed = 0;
  bool seed_given = false;
  int threads = -1;
  std::string out;
};

int run_simulate(const SimulateArgs& a) {
  std::ifstream in(a.config);
  if (!in) throw ValidationError("cannot open '" + a.config + "'");
  StudyConfig cfg = study_config(parse_key_values(in));
  if (a.seed_given) cfg.scenario.seed = a.seed;
  RunOptions run;
  run.threads = a.threads >= 0 ? a.threads : cfg.threads;
  run.fit = cfg.fit;
  std::ostringstream csv;
  if (a.study == "compare") {
    write_risk_csv(csv, {compare_estimators(cfg.scenario, cfg.replicates, run)});
  } else if (a.study == "oracle-gap") {
    auto sizes = cfg.sizes;
    if (sizes.empty()) sizes.emplace_back(cfg.scenario.rows, cfg.scenario.cols);
    write_risk_csv(csv, oracle_gap_study(sizes, cfg.scenario, cfg.replicates, run));
  } else if (a.study == "concentration") {
    auto sizes = cfg.sizes;
    if (sizes.empty()) sizes.emplace_back(cfg.scenario.rows, cfg.scenario.cols);
    if (cfg.hp_grid.empty()) throw ValidationError("the concentration study needs hp_grid");
    write_concentration_csv(
        csv, ure_concentration_study(sizes, cfg.scenario, cfg.hp_grid, cfg.replicates, run));
  } else {
    throw ValidationError("unknown study '" + a.study + "'");
  }
  write_output(a.out, csv.str());
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Empirical-Bayes shrinkage for unbalanced two-way tables"};
  app.set_version_flag("--version", std::string(TWOWAY_VERSION));
  app.require_subcommand(1);

  FitArgs fa;
  auto* fit_cmd = app.add_subcommand("fit", "Fit hyper-parameters and report cell-mean estimates");
  fit_cmd->add_option("--input", fa.input, "CSV input")->required()->check(CLI::ExistingFile);
  fit_cmd->add_option("--schema", fa.schema, "raw or agg")->check(CLI::IsMember({"raw", "agg"}));
  fit_cmd->add_option("--method", fa.method, "ure, ml or wls")
      ->check(CLI::IsMember({"ure", "ml", "ebmle", "wls"}));
  auto* s2 = fit_cmd->add_option("--sigma2", fa.sigma2, "Known noise variance");
  auto* es2 = fit_cmd->add_flag("--estimate-sigma2", fa.estimate_sigma2,
                                "Use the pooled within-cell variance");
  s2->excludes(es2);
  fit_cmd->add_option("--tau", fa.tau, "Trimming level of the location bounds");
  fit_cmd->add_option("--loss", fa.loss, "ss, weighted or q")
      ->check(CLI::IsMember({"ss", "weighted", "q"}));
  fit_cmd->add_option("--solve", fa.mode, "fast or dense")->check(CLI::IsMember({"fast", "dense"}));
  fit_cmd->add_option("--out", fa.out, "Output JSON path (default stdout)");

  DiagnoseArgs da;
  auto* diag_cmd = app.add_subcommand("diagnose", "Describe the design of a table");
  diag_cmd->add_option("--input", da.input, "CSV input")->required()->check(CLI::ExistingFile);
  diag_cmd->add_option("--schema", da.schema, "raw or agg")->check(CLI::IsMember({"raw", "agg"}));

  SimulateArgs sa;
  auto* sim_cmd = app.add_subcommand("simulate", "Run a Monte-Carlo study");
  sim_cmd->add_option("--study", sa.study, "compare, oracle-gap or concentration")
      ->check(CLI::IsMember({"compare", "oracle-gap", "concentration"}));
  sim_cmd->add_option("--config", sa.config, "key = value study configuration")
      ->required()
      ->check(CLI::ExistingFile);
  auto* seed_opt = sim_cmd->add_option("--seed", sa.seed, "Master seed (overrides the config)");
  sim_cmd->add_option("--threads", sa.threads, "Worker threads (0 = all cores)");
  sim_cmd->add_option("--out", sa.out, "Output CSV path (default stdout)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? 0 : kExitValidation;
  }

  try {
    if (fit_cmd->parsed()) {
      if (!fa.estimate_sigma2 && s2->count() == 0)
        throw ValidationError("give --sigma2 or --estimate-sigma2");
      return run_fit(fa);
    }
    if (diag_cmd->parsed()) return run_diagnose(da);
    sa.seed_given = seed_opt->count() > 0;
    return run_simulate(sa);
  } catch (const ValidationError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitValidation;
  } catch (const NumericError& e) {
    std::cerr << "numeric error: " << e.what() << "\n";
    return kExitNumeric;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitNumeric;
  }
}
