#include "twoway/error.hpp"
#include "twoway/estimators.hpp"
#include "twoway/io.hpp"
#include "twoway/risk.hpp"
#include "twoway/simulation.hpp"

#include <pybind11/eigen.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include <fstream>
#include <sstream>

namespace py = pybind11;
using namespace twoway;

namespace {

Eigen::MatrixXd as_grid(const Eigen::VectorXd& v, int rows, int cols) {
  Eigen::MatrixXd g(rows, cols);
  for (int i = 0; i < rows; ++i)
    for (int j = 0; j < cols; ++j) g(i, j) = v(i * cols + j);
  return g;
}

CellTable load_table(const std::string& path, const std::string& schema, double sigma2) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ValidationError("cannot open '" + path + "'");
  const CellAggregate agg = read_table_csv(in, parse_schema(schema));
  double s2 = sigma2;
  if (!(s2 > 0.0)) {
    const auto pooled = agg.pooled_variance();
    if (!pooled) throw ValidationError("no replicates to estimate sigma2 from; pass sigma2");
    s2 = *pooled;
  }
  return CellTable::from_aggregate(agg, s2);
}

py::dict risk_dict(const RiskTable& t) {
  py::dict out;
  out["scenario"] = t.scenario;
  out["rows"] = t.rows;
  out["cols"] = t.cols;
  out["loss"] = to_string(t.loss);
  py::dict est;
  for (const auto& e : t.estimators) {
    py::dict d;
    d["replicates"] = e.replicates;
    d["failures"] = e.failures;
    d["mean_loss"] = e.mean_loss;
    d["se"] = e.se;
    d["gap"] = e.gap;
    d["gap_se"] = e.gap_se;
    d["p_exceed"] = e.p_exceed;
    d["losses"] = t.losses_of(e.estimator);
    est[py::str(e.estimator)] = d;
  }
  out["estimators"] = est;
  return out;
}

}  // namespace

PYBIND11_MODULE(_core, m) {
  m.doc() = "Empirical-Bayes shrinkage for unbalanced two-way tables";
  m.attr("__version__") = TWOWAY_VERSION;

  static py::exception<ValidationError> validation_error(m, "ValidationError", PyExc_ValueError);
  static py::exception<NumericError> numeric_error(m, "NumericError", PyExc_ArithmeticError);
  py::register_exception_translator([](std::exception_ptr p) {
    try {
      if (p) std::rethrow_exception(p);
    } catch (const ValidationError& e) {
      py::set_error(validation_error, e.what());
    } catch (const NumericError& e) {
      py::set_error(numeric_error, e.what());
    }
  });

  py::class_<HyperParams>(m, "HyperParams")
      .def(py::init([](double mu, double la, double lb) { return HyperParams{mu, la, lb}; }),
           py::arg("mu") = 0.0, py::arg("lambda_a") = 0.0, py::arg("lambda_b") = 0.0)
      .def_readwrite("mu", &HyperParams::mu)
      .def_readwrite("lambda_a", &HyperParams::lambda_a)
      .def_readwrite("lambda_b", &HyperParams::lambda_b)
      .def("__repr__", [](const HyperParams& h) {
        std::ostringstream os;
        os << "HyperParams(mu=" << h.mu << ", lambda_a=" << h.lambda_a << ", lambda_b=" << h.lambda_b << ")";
        return os.str();
      });

  py::class_<CellTable>(m, "CellTable")
      .def(py::init([](const Eigen::MatrixXi& counts, const Eigen::MatrixXd& means, double sigma2) {
             return CellTable(counts, means, sigma2);
           }),
           py::arg("counts"), py::arg("means"), py::arg("sigma2") = 1.0)
      .def_static("from_csv", &load_table, py::arg("path"), py::arg("schema") = "raw",
                  py::arg("sigma2") = 0.0,
                  "Read a raw or agg CSV; sigma2 <= 0 uses the pooled within-cell variance.")
      .def_property_readonly("rows", &CellTable::rows)
      .def_property_readonly("cols", &CellTable::cols)
      .def_property_readonly("sigma2", &CellTable::sigma2)
      .def_property_readonly("counts", &CellTable::counts)
      .def_property_readonly("means", &CellTable::means)
      .def_property_readonly("row_labels", &CellTable::row_labels)
      .def_property_readonly("col_labels", &CellTable::col_labels)
      .def("observed_means", &CellTable::observed_means);

  py::class_<ShrinkageFit>(m, "ShrinkageFit")
      .def_property_readonly("method", [](const ShrinkageFit& f) { return to_string(f.method); })
      .def_property_readonly("loss", [](const ShrinkageFit& f) { return to_string(f.loss); })
      .def_readonly("hp", &ShrinkageFit::hp)
      .def_readonly("tilde_a", &ShrinkageFit::tilde_a)
      .def_readonly("tilde_b", &ShrinkageFit::tilde_b)
      .def_readonly("mu_clamped", &ShrinkageFit::mu_clamped)
      .def_readonly("mu_lower", &ShrinkageFit::mu_lower)
      .def_readonly("mu_upper", &ShrinkageFit::mu_upper)
      .def_readonly("objective", &ShrinkageFit::objective)
      .def_readonly("eta_obs", &ShrinkageFit::eta_obs)
      .def_readonly("eta_complete", &ShrinkageFit::eta_complete)
      .def_readonly("evaluations", &ShrinkageFit::evaluations)
      .def("interior", &ShrinkageFit::interior);

  m.def(
      "fit",
      [](const CellTable& table, const std::string& method, double tau, const std::string& loss) {
        FitOptions o;
        o.tau = tau;
        if (!loss.empty()) o.loss = parse_loss_mode(loss);
        const Method mt = parse_method(method);
        if (mt == Method::oracle) throw ValidationError("the oracle needs the true means; use oracle_fit");
        return fit(table, mt, o);
      },
      py::arg("table"), py::arg("method") = "ure", py::arg("tau") = 0.05, py::arg("loss") = "",
      "Fit hyper-parameters by URE, EBMLE (ml) or return the WLS fit.");

  m.def(
      "oracle_fit",
      [](const CellTable& table, const Eigen::MatrixXd& eta, const std::string& loss) {
        if (eta.rows() != table.rows() || eta.cols() != table.cols())
          throw ValidationError("eta must be rows x cols");
        Eigen::VectorXd flat(eta.size());
        for (int i = 0; i < eta.rows(); ++i)
          for (int j = 0; j < eta.cols(); ++j) flat(i * eta.cols() + j) = eta(i, j);
        FitOptions o;
        if (!loss.empty()) o.loss = parse_loss_mode(loss);
        return oracle_fit(table, flat, o);
      },
      py::arg("table"), py::arg("eta"), py::arg("loss") = "");

  m.def(
      "eta_grid",
      [](const ShrinkageFit& f, const CellTable& t) { return as_grid(f.eta_complete, t.rows(), t.cols()); },
      py::arg("fit"), py::arg("table"), "Completed estimates as a rows x cols array.");

  m.def(
      "ure_value",
      [](const CellTable& table, const HyperParams& hp, const std::string& loss) {
        const DesignSet d(table);
        d.require_connected(table.row_labels(), table.col_labels());
        const QLoss q = loss.empty() ? QLoss::default_for(d) : QLoss::make(d, parse_loss_mode(loss));
        return ure_value(SigmaContext(d, hp.lambda_a, hp.lambda_b), table.observed_means(), hp.mu,
                         table.sigma2(), q);
      },
      py::arg("table"), py::arg("hp"), py::arg("loss") = "");

  m.def(
      "marginal_loglik",
      [](const CellTable& table, const HyperParams& hp) {
        const DesignSet d(table);
        return marginal_loglik(SigmaContext(d, hp.lambda_a, hp.lambda_b), table.observed_means(),
                               hp.mu, table.sigma2());
      },
      py::arg("table"), py::arg("hp"));

  m.def(
      "diagnose",
      [](const Eigen::MatrixXi& counts) {
        const DesignSet d(static_cast<int>(counts.rows()), static_cast<int>(counts.cols()), counts);
        py::dict out;
        out["connected"] = d.connected();
        out["components"] = static_cast<int>(d.components().size());
        out["rank"] = d.rank();
        out["nu"] = imbalance_ratio(d);
        if (d.connected()) {
          const double l1 = lambda1_q(d);
          out["lambda1_q"] = l1;
          out["a2"] = a2_statistic(d, l1);
        } else {
          out["lambda1_q"] = py::none();
          out["a2"] = py::none();
        }
        return out;
      },
      py::arg("counts"), "Design diagnostics from an r x c count matrix.");

  m.def(
      "fit_report_json",
      [](const CellTable& table, const ShrinkageFit& f) { return dump_report(make_report(f, table)); },
      py::arg("table"), py::arg("fit"));

  m.def(
      "simulate",
      [](const std::string& config_text, const std::string& study, int threads) {
        std::istringstream in(config_text);
        const StudyConfig cfg = study_config(parse_key_values(in));
        RunOptions run;
        run.threads = threads >= 0 ? threads : cfg.threads;
        run.fit = cfg.fit;
        py::list out;
        auto sizes = cfg.sizes;
        if (sizes.empty()) sizes.emplace_back(cfg.scenario.rows, cfg.scenario.cols);
        std::vector<RiskTable> tables;
        {
          py::gil_scoped_release release;
          if (study == "compare") tables = {compare_estimators(cfg.scenario, cfg.replicates, run)};
          else if (study == "oracle-gap") tables = oracle_gap_study(sizes, cfg.scenario, cfg.replicates, run);
          else throw ValidationError("unknown study '" + study + "'");
        }
        for (const auto& t : tables) out.append(risk_dict(t));
        return out;
      },
      py::arg("config"), py::arg("study") = "compare", py::arg("threads") = -1,
      "Run a study from key = value configuration text.");
}
