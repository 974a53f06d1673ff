#include "twoway/io.hpp"

#include "twoway/error.hpp"
#include "twoway/risk.hpp"

#include <json.hpp>
#include <openssl/evp.h>

#include <cmath>
#include <cstdio>
#include <istream>
#include <limits>
#include <sstream>

namespace twoway {

using nlohmann::json;

namespace {

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r\n");
  if (b == std::string::npos) return {};
  const auto e = s.find_last_not_of(" \t\r\n");
  return s.substr(b, e - b + 1);
}

std::string lower(std::string s) {
  for (char& ch : s) ch = static_cast<char>(std::tolower(static_cast<unsigned char>(ch)));
  return s;
}

// RFC 4180 fields; doubled quotes inside quoted fields.
std::vector<std::string> split_csv(const std::string& line, int lineno) {
  std::vector<std::string> out;
  std::string cur;
  bool quoted = false;
  bool was_quoted = false;
  for (std::size_t i = 0; i < line.size(); ++i) {
    const char ch = line[i];
    if (quoted) {
      if (ch == '"') {
        if (i + 1 < line.size() && line[i + 1] == '"') {
          cur += '"';
          ++i;
        } else {
          quoted = false;
        }
      } else {
        cur += ch;
      }
    } else if (ch == '"') {
      quoted = true;
      was_quoted = true;
    } else if (ch == ',') {
      out.push_back(was_quoted ? cur : trim(cur));
      cur.clear();
      was_quoted = false;
    } else {
      cur += ch;
    }
  }
  if (quoted) throw ValidationError("line " + std::to_string(lineno) + ": unterminated quote");
  out.push_back(was_quoted ? cur : trim(cur));
  return out;
}

double parse_double(const std::string& s, const std::string& what) {
  const std::string t = lower(trim(s));
  if (t == "inf" || t == "+inf" || t == "infinity") return std::numeric_limits<double>::infinity();
  if (t.empty()) throw ValidationError(what + ": empty value");
  char* end = nullptr;
  const double v = std::strtod(t.c_str(), &end);
  if (end != t.c_str() + t.size()) throw ValidationError(what + ": not a number: '" + s + "'");
  return v;
}

long parse_long(const std::string& s, const std::string& what) {
  const std::string t = trim(s);
  if (t.empty()) throw ValidationError(what + ": empty value");
  char* end = nullptr;
  const long v = std::strtol(t.c_str(), &end, 10);
  if (end != t.c_str() + t.size()) throw ValidationError(what + ": not an integer: '" + s + "'");
  return v;
}

struct CsvTable {
  std::vector<std::string> header;
  std::vector<std::pair<int, std::vector<std::string>>> rows;  // line number, fields

  int column(const std::string& name) const {
    for (std::size_t k = 0; k < header.size(); ++k)
      if (lower(header[k]) == name) return static_cast<int>(k);
    throw ValidationError("missing column '" + name + "' in header");
  }
};

CsvTable read_csv(std::istream& in) {
  CsvTable t;
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (trim(line).empty()) continue;
    auto fields = split_csv(line, lineno);
    if (t.header.empty()) {
      t.header = std::move(fields);
      continue;
    }
    if (fields.size() != t.header.size())
      throw ValidationError("line " + std::to_string(lineno) + ": expected " +
                            std::to_string(t.header.size()) + " fields, got " +
                            std::to_string(fields.size()));
    t.rows.emplace_back(lineno, std::move(fields));
  }
  if (t.header.empty()) throw ValidationError("empty input: a header line is required");
  return t;
}

std::string at_line(int lineno, const char* col) {
  return "line " + std::to_string(lineno) + ", column " + col;
}

json num(double v) {
  if (std::isnan(v)) return nullptr;
  if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
  return v;
}

double get_num(const json& j) {
  if (j.is_null()) return std::numeric_limits<double>::quiet_NaN();
  if (j.is_string()) return parse_double(j.get<std::string>(), "report");
  return j.get<double>();
}

std::optional<double> get_opt(const json& j, const char* key) {
  if (!j.contains(key) || j.at(key).is_null()) return std::nullopt;
  return get_num(j.at(key));
}

bool same(double a, double b) { return a == b || (std::isnan(a) && std::isnan(b)); }

bool same(const std::optional<EstimatingResiduals>& a, const std::optional<EstimatingResiduals>& b) {
  if (a.has_value() != b.has_value()) return false;
  if (!a) return true;
  return same(a->res_mu, b->res_mu) && same(a->res_a, b->res_a) && same(a->res_b, b->res_b) &&
         same(a->scale_mu, b->scale_mu) && same(a->scale_a, b->scale_a) &&
         same(a->scale_b, b->scale_b);
}

json to_json(const FitReport& r) {
  json j;
  j["schema_version"] = r.schema_version;
  j["method"] = r.method;
  j["loss"] = r.loss;
  j["tau"] = num(r.tau);
  j["sigma2"] = num(r.sigma2);
  j["sigma2_source"] = r.sigma2_source;
  j["hyperparameters"] = {{"mu", num(r.hp.mu)},
                          {"lambda_a", num(r.hp.lambda_a)},
                          {"lambda_b", num(r.hp.lambda_b)},
                          {"tilde_a", num(r.tilde_a)},
                          {"tilde_b", num(r.tilde_b)}};
  j["mu_clamped"] = r.mu_clamped;
  j["mu_bounds"] = {num(r.mu_lower), num(r.mu_upper)};
  j["objective"] = num(r.objective);
  j["row_labels"] = r.row_labels;
  j["col_labels"] = r.col_labels;
  j["counts"] = r.counts;
  json grid = json::array();
  for (const auto& row : r.eta_complete) {
    json jr = json::array();
    for (double v : row) jr.push_back(num(v));
    grid.push_back(std::move(jr));
  }
  j["eta_complete"] = std::move(grid);

  const ReportDiagnostics& d = r.diagnostics;
  json jd;
  if (d.residuals) {
    const EstimatingResiduals& e = *d.residuals;
    jd["residuals"] = {{"mu", num(e.res_mu)},   {"lambda_a", num(e.res_a)},
                       {"lambda_b", num(e.res_b)}, {"scale_mu", num(e.scale_mu)},
                       {"scale_a", num(e.scale_a)}, {"scale_b", num(e.scale_b)}};
  } else {
    jd["residuals"] = nullptr;
  }
  jd["nu"] = num(d.nu);
  jd["lambda1_q"] = d.lambda1_q ? num(*d.lambda1_q) : json(nullptr);
  jd["a2"] = d.a2 ? num(*d.a2) : json(nullptr);
  jd["connected"] = d.connected;
  jd["rank"] = d.rank;
  jd["grid_ties"] = d.grid_ties;
  jd["evaluations"] = d.evaluations;
  j["diagnostics"] = std::move(jd);

  const Provenance& p = r.provenance;
  j["provenance"] = {{"input_sha256", p.input_digest},
                     {"seed", p.seed ? json(*p.seed) : json(nullptr)},
                     {"version", p.tool_version},
                     {"timestamp", p.timestamp}};
  return j;
}

FitReport report_from_json(const json& j) {
  FitReport r;
  r.schema_version = j.at("schema_version").get<int>();
  if (r.schema_version != 1)
    throw ValidationError("unsupported report schema version " + std::to_string(r.schema_version));
  r.method = j.at("method").get<std::string>();
  r.loss = j.at("loss").get<std::string>();
  r.tau = get_num(j.at("tau"));
  r.sigma2 = get_num(j.at("sigma2"));
  r.sigma2_source = j.at("sigma2_source").get<std::string>();
  const json& h = j.at("hyperparameters");
  r.hp = {get_num(h.at("mu")), get_num(h.at("lambda_a")), get_num(h.at("lambda_b"))};
  r.tilde_a = get_num(h.at("tilde_a"));
  r.tilde_b = get_num(h.at("tilde_b"));
  r.mu_clamped = j.at("mu_clamped").get<bool>();
  r.mu_lower = get_num(j.at("mu_bounds").at(0));
  r.mu_upper = get_num(j.at("mu_bounds").at(1));
  r.objective = get_num(j.at("objective"));
  r.row_labels = j.at("row_labels").get<std::vector<std::string>>();
  r.col_labels = j.at("col_labels").get<std::vector<std::string>>();
  r.counts = j.at("counts").get<std::vector<std::vector<int>>>();
  for (const json& row : j.at("eta_complete")) {
    std::vector<double> v;
    for (const json& x : row) v.push_back(get_num(x));
    r.eta_complete.push_back(std::move(v));
  }
  const json& d = j.at("diagnostics");
  if (!d.at("residuals").is_null()) {
    const json& e = d.at("residuals");
    r.diagnostics.residuals = EstimatingResiduals{
        get_num(e.at("mu")),       get_num(e.at("lambda_a")), get_num(e.at("lambda_b")),
        get_num(e.at("scale_mu")), get_num(e.at("scale_a")),  get_num(e.at("scale_b"))};
  }
  r.diagnostics.nu = get_num(d.at("nu"));
  r.diagnostics.lambda1_q = get_opt(d, "lambda1_q");
  r.diagnostics.a2 = get_opt(d, "a2");
  r.diagnostics.connected = d.at("connected").get<bool>();
  r.diagnostics.rank = d.at("rank").get<int>();
  r.diagnostics.grid_ties = d.at("grid_ties").get<int>();
  r.diagnostics.evaluations = d.at("evaluations").get<int>();
  const json& p = j.at("provenance");
  r.provenance.input_digest = p.at("input_sha256").get<std::string>();
  if (!p.at("seed").is_null()) r.provenance.seed = p.at("seed").get<std::uint64_t>();
  r.provenance.tool_version = p.at("version").get<std::string>();
  r.provenance.timestamp = p.at("timestamp").get<std::string>();
  return r;
}

std::vector<std::pair<int, int>> parse_sizes(const std::string& s) {
  std::vector<std::pair<int, int>> out;
  std::stringstream ss(s);
  std::string item;
  while (std::getline(ss, item, ',')) {
    item = lower(trim(item));
    if (item.empty()) continue;
    const auto x = item.find('x');
    if (x == std::string::npos) throw ValidationError("size '" + item + "' is not of the form RxC");
    out.emplace_back(static_cast<int>(parse_long(item.substr(0, x), "sizes")),
                     static_cast<int>(parse_long(item.substr(x + 1), "sizes")));
  }
  return out;
}

std::vector<HyperParams> parse_hp_grid(const std::string& s) {
  std::vector<HyperParams> out;
  std::stringstream ss(s);
  std::string item;
  while (std::getline(ss, item, ';')) {
    if (trim(item).empty()) continue;
    std::stringstream is(item);
    std::string a, b, c;
    if (!std::getline(is, a, ':') || !std::getline(is, b, ':') || !std::getline(is, c, ':'))
      throw ValidationError("hp_grid entry '" + trim(item) + "' is not of the form mu:lambda_a:lambda_b");
    const HyperParams hp{parse_double(a, "hp_grid"), parse_double(b, "hp_grid"),
                         parse_double(c, "hp_grid")};
    if (!(hp.lambda_a >= 0.0) || !(hp.lambda_b >= 0.0) || !std::isfinite(hp.mu))
      throw ValidationError("hp_grid entry '" + trim(item) + "' is out of range");
    out.push_back(hp);
  }
  return out;
}

bool parse_bool(const std::string& s, const std::string& what) {
  const std::string t = lower(trim(s));
  if (t == "1" || t == "true" || t == "yes" || t == "on") return true;
  if (t == "0" || t == "false" || t == "no" || t == "off") return false;
  throw ValidationError(what + ": not a boolean: '" + s + "'");
}

}  // namespace

InputSchema parse_schema(const std::string& name) {
  if (name == "raw") return InputSchema::raw;
  if (name == "agg") return InputSchema::agg;
  throw ValidationError("unknown schema '" + name + "' (expected raw or agg)");
}

std::vector<Observation> read_raw_csv(std::istream& in) {
  const CsvTable t = read_csv(in);
  const int cr = t.column("row"), cc = t.column("col"), cv = t.column("value");
  std::vector<Observation> out;
  out.reserve(t.rows.size());
  for (const auto& [lineno, f] : t.rows) {
    const double v = parse_double(f[cv], at_line(lineno, "value"));
    if (!std::isfinite(v)) throw ValidationError(at_line(lineno, "value") + ": not finite");
    out.push_back({f[cr], f[cc], v});
  }
  return out;
}

std::vector<CellSummary> read_agg_csv(std::istream& in) {
  const CsvTable t = read_csv(in);
  const int cr = t.column("row"), cc = t.column("col"), ck = t.column("count"),
            cm = t.column("mean");
  std::vector<CellSummary> out;
  out.reserve(t.rows.size());
  for (const auto& [lineno, f] : t.rows) {
    const long k = parse_long(f[ck], at_line(lineno, "count"));
    if (k < 1 || k > std::numeric_limits<int>::max())
      throw ValidationError(at_line(lineno, "count") + ": must be a positive integer");
    const double m = parse_double(f[cm], at_line(lineno, "mean"));
    if (!std::isfinite(m)) throw ValidationError(at_line(lineno, "mean") + ": not finite");
    out.push_back({f[cr], f[cc], static_cast<int>(k), m});
  }
  return out;
}

CellAggregate read_table_csv(std::istream& in, InputSchema schema) {
  if (schema == InputSchema::raw) return ingest_observations(read_raw_csv(in));
  return ingest_cell_summaries(read_agg_csv(in));
}

std::string sha256_hex(const std::string& bytes) {
  unsigned char digest[EVP_MAX_MD_SIZE];
  unsigned int len = 0;
  if (EVP_Digest(bytes.data(), bytes.size(), digest, &len, EVP_sha256(), nullptr) != 1)
    throw NumericError("SHA-256 digest failed");
  std::string hex;
  char buf[3];
  for (unsigned int k = 0; k < len; ++k) {
    std::snprintf(buf, sizeof buf, "%02x", digest[k]);
    hex += buf;
  }
  return hex;
}

bool FitReport::operator==(const FitReport& o) const {
  if (eta_complete.size() != o.eta_complete.size()) return false;
  for (std::size_t i = 0; i < eta_complete.size(); ++i) {
    if (eta_complete[i].size() != o.eta_complete[i].size()) return false;
    for (std::size_t j = 0; j < eta_complete[i].size(); ++j)
      if (!same(eta_complete[i][j], o.eta_complete[i][j])) return false;
  }
  const ReportDiagnostics& a = diagnostics;
  const ReportDiagnostics& b = o.diagnostics;
  return schema_version == o.schema_version && method == o.method && loss == o.loss &&
         same(tau, o.tau) && same(sigma2, o.sigma2) && sigma2_source == o.sigma2_source &&
         same(hp.mu, o.hp.mu) && same(hp.lambda_a, o.hp.lambda_a) &&
         same(hp.lambda_b, o.hp.lambda_b) && same(tilde_a, o.tilde_a) &&
         same(tilde_b, o.tilde_b) && mu_clamped == o.mu_clamped && same(mu_lower, o.mu_lower) &&
         same(mu_upper, o.mu_upper) && same(objective, o.objective) &&
         row_labels == o.row_labels && col_labels == o.col_labels && counts == o.counts &&
         same(a.residuals, b.residuals) && same(a.nu, b.nu) && a.lambda1_q == b.lambda1_q &&
         a.a2 == b.a2 && a.connected == b.connected && a.rank == b.rank &&
         a.grid_ties == b.grid_ties && a.evaluations == b.evaluations &&
         provenance.input_digest == o.provenance.input_digest &&
         provenance.seed == o.provenance.seed &&
         provenance.tool_version == o.provenance.tool_version &&
         provenance.timestamp == o.provenance.timestamp;
}

FitReport make_report(const ShrinkageFit& fit, const CellTable& table) {
  const DesignSet design(table);
  FitReport r;
  r.method = to_string(fit.method);
  r.loss = to_string(fit.loss);
  r.tau = fit.tau;
  r.sigma2 = table.sigma2();
  r.hp = fit.hp;
  r.tilde_a = fit.tilde_a;
  r.tilde_b = fit.tilde_b;
  r.mu_clamped = fit.mu_clamped;
  r.mu_lower = fit.mu_lower;
  r.mu_upper = fit.mu_upper;
  r.objective = fit.objective;
  const int rows = table.rows(), cols = table.cols();
  r.row_labels = table.row_labels();
  r.col_labels = table.col_labels();
  if (r.row_labels.empty())
    for (int i = 0; i < rows; ++i) r.row_labels.push_back(std::to_string(i + 1));
  if (r.col_labels.empty())
    for (int j = 0; j < cols; ++j) r.col_labels.push_back(std::to_string(j + 1));
  r.counts.assign(rows, std::vector<int>(cols));
  r.eta_complete.assign(rows, std::vector<double>(cols));
  for (int i = 0; i < rows; ++i)
    for (int j = 0; j < cols; ++j) {
      r.counts[i][j] = table.count(i, j);
      r.eta_complete[i][j] = fit.eta_complete(i * cols + j);
    }
  ReportDiagnostics& d = r.diagnostics;
  d.residuals = fit.residuals;
  d.nu = imbalance_ratio(design);
  d.connected = design.connected();
  d.rank = design.rank();
  d.grid_ties = static_cast<int>(fit.grid_ties.size());
  d.evaluations = fit.evaluations;
  if (d.connected) {
    d.lambda1_q = lambda1_q(design);
    d.a2 = a2_statistic(design, *d.lambda1_q);
  }
  r.provenance.tool_version = TWOWAY_VERSION;
  return r;
}

std::string dump_report(const FitReport& report) { return to_json(report).dump(2) + "\n"; }

FitReport parse_report(const std::string& text) {
  try {
    return report_from_json(json::parse(text));
  } catch (const json::exception& e) {
    throw ValidationError(std::string("malformed report: ") + e.what());
  }
}

std::map<std::string, std::string> parse_key_values(std::istream& in) {
  std::map<std::string, std::string> kv;
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line.erase(hash);
    if (trim(line).empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos)
      throw ValidationError("config line " + std::to_string(lineno) + ": expected key = value");
    const std::string key = trim(line.substr(0, eq));
    if (key.empty()) throw ValidationError("config line " + std::to_string(lineno) + ": empty key");
    if (kv.count(key)) throw ValidationError("config key '" + key + "' given twice");
    kv[key] = trim(line.substr(eq + 1));
  }
  return kv;
}

StudyConfig study_config(const std::map<std::string, std::string>& kv) {
  StudyConfig c;
  ScenarioSpec& s = c.scenario;
  auto as_int = [](const std::string& v, const std::string& k) {
    const long x = parse_long(v, k);
    if (x < std::numeric_limits<int>::min() || x > std::numeric_limits<int>::max())
      throw ValidationError(k + ": out of range");
    return static_cast<int>(x);
  };
  for (const auto& [k, v] : kv) {
    if (k == "name") s.name = v;
    else if (k == "rows") s.rows = as_int(v, k);
    else if (k == "cols") s.cols = as_int(v, k);
    else if (k == "sizes") c.sizes = parse_sizes(v);
    else if (k == "replicates") c.replicates = as_int(v, k);
    else if (k == "threads") c.threads = as_int(v, k);
    else if (k == "count_law") s.count_law = parse_count_law(v);
    else if (k == "k_const") s.k_const = as_int(v, k);
    else if (k == "k_min") s.k_min = as_int(v, k);
    else if (k == "k_max") s.k_max = as_int(v, k);
    else if (k == "k_low") s.k_low = as_int(v, k);
    else if (k == "k_high") s.k_high = as_int(v, k);
    else if (k == "heavy_prob") s.heavy_prob = parse_double(v, k);
    else if (k == "missing_frac") s.missing_frac = parse_double(v, k);
    else if (k == "alpha_law") s.alpha.law = parse_effect_law(v);
    else if (k == "alpha_var") s.alpha.var = parse_double(v, k);
    else if (k == "alpha_value") s.alpha.value = parse_double(v, k);
    else if (k == "beta_law") s.beta.law = parse_effect_law(v);
    else if (k == "beta_var") s.beta.var = parse_double(v, k);
    else if (k == "beta_value") s.beta.value = parse_double(v, k);
    else if (k == "mu_true") s.mu_true = parse_double(v, k);
    else if (k == "sigma2") s.sigma2 = parse_double(v, k);
    else if (k == "seed") s.seed = static_cast<std::uint64_t>(parse_long(v, k));
    else if (k == "redraw_effects") s.redraw_effects = parse_bool(v, k);
    else if (k == "loss") {
      s.loss = parse_loss_mode(v);
      c.fit.loss = s.loss;
    } else if (k == "tau") c.fit.tau = parse_double(v, k);
    else if (k == "hp_grid") c.hp_grid = parse_hp_grid(v);
    else throw ValidationError("unknown config key '" + k + "'");
  }
  if (c.replicates < 2) throw ValidationError("replicates must be at least 2");
  if (c.threads < 0) throw ValidationError("threads must be non-negative");
  if (!(c.fit.tau > 0.0 && c.fit.tau <= 1.0)) throw ValidationError("tau must lie in (0, 1]");
  s.validate();
  return c;
}

}  // namespace twoway
