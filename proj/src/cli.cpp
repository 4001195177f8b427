#include "bvcox/cli.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <map>
#include <optional>
#include <ostream>
#include <sstream>

#include "CLI11.hpp"

#include "bvcox/baseline_residuals.hpp"
#include "bvcox/cross_validation.hpp"
#include "bvcox/data.hpp"
#include "bvcox/error.hpp"
#include "bvcox/experiment.hpp"
#include "bvcox/inference.hpp"
#include "bvcox/io.hpp"
#include "bvcox/simulation.hpp"
#include "bvcox/solver.hpp"
#include "bvcox/version.hpp"

namespace fs = std::filesystem;

namespace bvcox {
namespace {

// "lo:hi:count" or a comma-separated list.
std::vector<double> parse_grid(const std::string& text, const char* name) {
  auto to_double = [&](const std::string& s) {
    try {
      std::size_t used = 0;
      const double v = std::stod(s, &used);
      if (used != s.size() || !std::isfinite(v)) throw std::invalid_argument(s);
      return v;
    } catch (const std::exception&) {
      throw ValidationError(std::string(name) + ": '" + s + "' is not a number");
    }
  };
  std::vector<std::string> parts;
  const char sep = text.find(':') != std::string::npos ? ':' : ',';
  std::stringstream ss(text);
  for (std::string item; std::getline(ss, item, sep);) parts.push_back(item);
  if (sep == ':') {
    if (parts.size() != 3) throw ValidationError(std::string(name) + " must be lo:hi:count");
    const double count = to_double(parts[2]);
    if (count < 1 || count != std::floor(count)) throw ValidationError(std::string(name) + ": count must be a positive integer");
    const double lo = to_double(parts[0]);
    const double hi = to_double(parts[1]);
    if (count > 1 && !(lo < hi)) throw ValidationError(std::string(name) + ": lo must be below hi");
    return linspace(lo, hi, static_cast<int>(count));
  }
  std::vector<double> out;
  for (const auto& p : parts) out.push_back(to_double(p));
  if (out.empty()) throw ValidationError(std::string(name) + " is empty");
  return out;
}

// Comma-separated numbers; empty text is an empty list.
std::vector<double> parse_list(const std::string& text, const char* name) {
  if (text.empty()) return {};
  if (text.find(':') != std::string::npos) throw ValidationError(std::string(name) + " takes a comma-separated list");
  return parse_grid(text, name);
}

std::vector<std::string> split_list(const std::vector<std::string>& items) {
  std::vector<std::string> out;
  for (const auto& item : items) {
    std::stringstream ss(item);
    for (std::string part; std::getline(ss, part, ',');) {
      if (!part.empty()) out.push_back(part);
    }
  }
  return out;
}

struct DataOptions {
  std::string path;
  std::vector<std::string> z_cols;
  std::vector<std::string> w_cols;
  std::string stratum_col = "stratum";
  std::string time_col = "time";
  std::string cause_col = "cause";
  std::string modifier_col = "modifier";
  int num_causes = 0;
};

void add_data_options(CLI::App* app, DataOptions& o, bool require_columns) {
  app->add_option("--data", o.path, "Dataset CSV")->required();
  auto* z = app->add_option("--z-cols", o.z_cols, "Varying-effect covariate columns")->delimiter(',');
  if (require_columns) z->required();
  app->add_option("--w-cols", o.w_cols, "Invariant-effect covariate columns")->delimiter(',');
  app->add_option("--stratum-col", o.stratum_col, "Stratum column (absent: one stratum)")->capture_default_str();
  app->add_option("--time-col", o.time_col, "Observed time column")->capture_default_str();
  app->add_option("--cause-col", o.cause_col, "Cause column (0 = censored)")->capture_default_str();
  app->add_option("--modifier-col", o.modifier_col, "Effect modifier column")->capture_default_str();
  app->add_option("--num-causes", o.num_causes, "Number of causes (0: largest code present)")->capture_default_str();
}

Dataset load_data(const DataOptions& o) {
  CsvSchema schema;
  schema.z_cols = split_list(o.z_cols);
  schema.w_cols = split_list(o.w_cols);
  schema.stratum_col = o.stratum_col;
  schema.time_col = o.time_col;
  schema.cause_col = o.cause_col;
  schema.modifier_col = o.modifier_col;
  schema.num_causes = o.num_causes;
  return ingest_csv(o.path, schema);
}

// Numeric lists are taken as text so an empty list survives a round trip
// through the manifest.
struct BasisOptions {
  BasisRequest request;
  std::string knots_t_at;
  std::string knots_x_at;
};

void add_basis_options(CLI::App* app, BasisOptions& o) {
  BasisRequest& b = o.request;
  app->add_option("--degree", b.degree, "Event-time spline degree")->capture_default_str();
  app->add_option("--degree-x", b.degree_x, "Modifier spline degree")->capture_default_str();
  app->add_option("--knots-t", b.knots_t, "Event-time interior knot count")->capture_default_str();
  app->add_option("--knots-x", b.knots_x, "Modifier interior knot count")->capture_default_str();
  app->add_option("--knots-t-at", o.knots_t_at, "Explicit event-time interior knots, comma separated");
  app->add_option("--knots-x-at", o.knots_x_at, "Explicit modifier interior knots, comma separated");
}

BasisRequest resolve_basis(const BasisOptions& b) {
  BasisRequest req = b.request;
  req.knots_t_at = parse_list(b.knots_t_at, "--knots-t-at");
  req.knots_x_at = parse_list(b.knots_x_at, "--knots-x-at");
  return req;
}

void add_solver_options(CLI::App* app, SolverConfig& s) {
  app->add_option("--lambda0", s.lambda0, "Initial proximal weight")->capture_default_str();
  app->add_option("--delta", s.delta, "Proximal weight growth factor")->capture_default_str();
  app->add_option("--phi", s.phi, "Armijo slope fraction")->capture_default_str();
  app->add_option("--psi", s.psi, "Backtracking shrink factor")->capture_default_str();
  app->add_option("--epsilon", s.epsilon, "Stopping threshold on the Newton increment")->capture_default_str();
  app->add_option("--max-iter", s.max_iterations, "Iteration cap")->capture_default_str();
  app->add_option("--max-line-search", s.max_line_search_steps, "Line-search step cap")->capture_default_str();
}

struct PenaltyOptions {
  std::string mu;
  std::string mu_x;
};

void add_penalty_options(CLI::App* app, PenaltyOptions& p) {
  app->add_option("--penalty-mu", p.mu, "Event-time penalty: one value or one per varying covariate");
  app->add_option("--penalty-mux", p.mu_x, "Modifier penalty: one value or one per varying covariate");
}

Eigen::VectorXd expand_weights(const std::vector<double>& values, int p, const char* name) {
  if (values.empty()) return Eigen::VectorXd::Zero(p);
  if (values.size() == 1) return Eigen::VectorXd::Constant(p, values[0]);
  if (static_cast<int>(values.size()) != p) {
    throw ValidationError(std::string(name) + " needs one value or one per varying covariate (" + std::to_string(p) + ")");
  }
  return Eigen::Map<const Eigen::VectorXd>(values.data(), p);
}

std::optional<PenaltyConfig> resolve_penalty(const PenaltyOptions& o, int p) {
  const std::vector<double> mu = parse_list(o.mu, "--penalty-mu");
  const std::vector<double> mu_x = parse_list(o.mu_x, "--penalty-mux");
  if (mu.empty() && mu_x.empty()) return std::nullopt;
  PenaltyConfig cfg;
  cfg.mu = expand_weights(mu, p, "--penalty-mu");
  cfg.mu_x = expand_weights(mu_x, p, "--penalty-mux");
  cfg.validate(p);
  return cfg;
}

struct ScenarioOptions {
  ScenarioConfig cfg;
  std::string surface_table;
};

void add_scenario_options(CLI::App* app, ScenarioOptions& s) {
  ScenarioConfig& c = s.cfg;
  app->add_option("--n", c.n, "Subjects per dataset")->capture_default_str();
  app->add_option("--rho", c.rho, "Correlation of the two covariates")->capture_default_str();
  app->add_option("--surface", c.surface.kind, "True surface: sine-decay, constant or tabulated")
      ->capture_default_str()
      ->check(CLI::IsMember({"sine-decay", "constant", "tabulated"}));
  app->add_option("--surface-value", c.surface.value, "Value of a constant surface")->capture_default_str();
  app->add_option("--surface-table", s.surface_table, "CSV with columns t,x,beta1 covering a full grid");
  app->add_option("--beta2", c.beta2, "Invariant effect")->capture_default_str();
  app->add_option("--modifier-lo", c.modifier_lo, "Modifier lower bound")->capture_default_str();
  app->add_option("--modifier-hi", c.modifier_hi, "Modifier upper bound")->capture_default_str();
  app->add_option("--censor-lo", c.censor_lo, "Censoring lower bound")->capture_default_str();
  app->add_option("--censor-hi", c.censor_hi, "Censoring upper bound")->capture_default_str();
  app->add_option("--horizon", c.horizon, "Event-time horizon")->capture_default_str();
  app->add_option("--baseline", c.baseline.kind, "Baseline hazard: constant or weibull")
      ->capture_default_str()
      ->check(CLI::IsMember({"constant", "weibull"}));
  app->add_option("--baseline-rate", c.baseline.rate, "Constant baseline rate")->capture_default_str();
  app->add_option("--baseline-shape", c.baseline.shape, "Weibull shape")->capture_default_str();
  app->add_option("--baseline-scale", c.baseline.scale, "Weibull scale")->capture_default_str();
}

void load_surface_table(TrueSurface& surface, const std::string& path) {
  std::istringstream in(read_text(path));
  std::map<std::pair<double, double>, double> cells;
  std::string line;
  bool header = true;
  while (std::getline(in, line)) {
    if (line.empty() || line[0] == '#') continue;
    if (header) {
      header = false;
      continue;
    }
    const std::vector<double> v = parse_grid(line, "--surface-table row");
    if (v.size() != 3) throw ValidationError("surface table rows need t,x,beta1");
    cells[{v[0], v[1]}] = v[2];
  }
  std::vector<double> ts, xs;
  for (const auto& [key, value] : cells) {
    ts.push_back(key.first);
    xs.push_back(key.second);
  }
  std::sort(ts.begin(), ts.end());
  ts.erase(std::unique(ts.begin(), ts.end()), ts.end());
  std::sort(xs.begin(), xs.end());
  xs.erase(std::unique(xs.begin(), xs.end()), xs.end());
  if (cells.size() != ts.size() * xs.size()) throw ValidationError("surface table does not cover a full t x x grid");
  surface.t_grid = ts;
  surface.x_grid = xs;
  surface.table.resize(static_cast<Eigen::Index>(ts.size()), static_cast<Eigen::Index>(xs.size()));
  for (std::size_t i = 0; i < ts.size(); ++i) {
    for (std::size_t j = 0; j < xs.size(); ++j) {
      surface.table(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) = cells.at({ts[i], xs[j]});
    }
  }
}

ScenarioConfig resolve_scenario(const ScenarioOptions& o) {
  ScenarioConfig cfg = o.cfg;
  if (cfg.surface.kind == "tabulated") {
    if (o.surface_table.empty()) throw ValidationError("--surface tabulated needs --surface-table");
    load_surface_table(cfg.surface, o.surface_table);
  }
  cfg.validate();
  return cfg;
}

struct Run {
  std::string command;
  fs::path out_dir;
  std::string manifest;
  std::string hash;
  std::ostream* out = nullptr;
  std::ostream* err = nullptr;

  void write(const std::string& name, const std::string& text) const { write_text(out_dir / name, text); }
  void write_records(const std::string& name, const std::vector<Json>& records) const {
    write(name, format_jsonl(hash, records));
  }
};

std::vector<double> failure_times(const Dataset& ds, int cause) {
  std::vector<double> out;
  for (std::size_t i = 0; i < ds.n(); ++i) {
    if (ds.cause[i] == cause) out.push_back(ds.time[i]);
  }
  return out;
}

void check_cause(const Dataset& ds, int cause) {
  if (cause < 1 || cause > ds.num_causes) {
    throw ValidationError("--cause must lie in 1.." + std::to_string(ds.num_causes));
  }
  if (ds.event_count(cause) == 0) throw ValidationError("cause " + std::to_string(cause) + " has no events");
}

TensorBasis place_basis(const Dataset& ds, int cause, const BasisRequest& req, std::vector<std::string>& warnings) {
  const TensorPlacement pl = place_tensor_basis(failure_times(ds, cause), ds.modifier, req);
  if (pl.collapsed_t > 0) {
    warnings.push_back(std::to_string(pl.collapsed_t) + " event-time interior knot(s) collapsed by ties; K = " +
                       std::to_string(pl.basis.time.size()));
  }
  if (pl.collapsed_x > 0) {
    warnings.push_back(std::to_string(pl.collapsed_x) + " modifier interior knot(s) collapsed by ties; Kx = " +
                       std::to_string(pl.basis.modifier.size()));
  }
  return pl.basis;
}

FitArtifact load_fit(const std::string& path) {
  const std::vector<Json> recs = read_jsonl(path, "fit");
  if (recs.empty()) throw ValidationError("'" + path + "' holds no fit record");
  return fit_from_record(recs.front());
}

int covariate_index(const FitArtifact& a, const std::string& name) {
  for (std::size_t l = 0; l < a.z_names.size(); ++l) {
    if (a.z_names[l] == name) return static_cast<int>(l);
  }
  throw ValidationError("'" + name + "' is not a varying-effect covariate of the fit");
}

std::vector<int> resolve_covariates(const FitArtifact& a, const std::vector<std::string>& names) {
  std::vector<int> out;
  if (names.empty()) {
    for (int l = 0; l < a.fit.layout.p; ++l) out.push_back(l);
  } else {
    for (const auto& n : split_list(names)) out.push_back(covariate_index(a, n));
  }
  return out;
}

Json warning_record(const std::string& text) { return Json{{"record", "warning"}, {"message", text}}; }

std::string covariate_name(const FitArtifact& a, int l) {
  return l < static_cast<int>(a.z_names.size()) ? a.z_names[static_cast<std::size_t>(l)] : "z" + std::to_string(l + 1);
}

// ---------------------------------------------------------------- fit

struct FitOptions {
  DataOptions data;
  BasisOptions basis;
  SolverConfig solver;
  PenaltyOptions penalty;
  int cause = 1;
  std::string t_grid;
  std::string x_grid;
  double level = 0.95;
};

int cmd_fit(const FitOptions& o, const Run& run) {
  const Dataset ds = load_data(o.data);
  check_cause(ds, o.cause);
  std::vector<std::string> warnings = ds.warnings;
  const TensorBasis basis = place_basis(ds, o.cause, resolve_basis(o.basis), warnings);
  const RiskIndex index = build_risk_index(ds);
  const LikelihoodEvaluator eval(ds, index, basis, o.cause, o.solver.threads);
  const std::optional<PenaltyConfig> penalty = resolve_penalty(o.penalty, ds.p());

  FitArtifact artifact;
  artifact.fit = fit(eval, basis, penalty, o.solver);
  artifact.z_names = ds.z_names;
  artifact.w_names = ds.w_names;
  artifact.stratum_labels = ds.stratum_labels;
  const FitResult& r = artifact.fit;

  std::vector<Json> records{fit_record(artifact)};
  for (const auto& w : warnings) records.push_back(warning_record(w));
  run.write_records("fit.jsonl", records);
  run.write("baseline.csv", format_baseline_csv(run.hash, breslow_baseline(eval, ds, r.coeffs)));

  if (!o.t_grid.empty() || !o.x_grid.empty()) {
    if (o.t_grid.empty() || o.x_grid.empty()) throw ValidationError("--t-grid and --x-grid go together");
    const std::vector<double> tg = parse_grid(o.t_grid, "--t-grid");
    const std::vector<double> xg = parse_grid(o.x_grid, "--x-grid");
    std::optional<VarianceEstimates> var;
    if (r.penalized()) var = variance_estimates(r);
    std::string csv;
    for (int l = 0; l < r.layout.p; ++l) {
      std::string part = format_surface_csv(run.hash, covariate_name(artifact, l),
                                            pointwise_ci(r, var ? &*var : nullptr, l, tg, xg, o.level));
      if (l > 0) part = part.substr(part.find('\n', part.find('\n') + 1) + 1);  // one preamble and header
      csv += part;
    }
    run.write("surface.csv", csv);
  }
  for (const auto& w : warnings) *run.err << "warning: " << w << '\n';
  *run.out << "fit: cause " << o.cause << ", n " << r.n << ", events " << r.events << ", K " << r.layout.K << ", Kx "
           << r.layout.Kx << ", " << (r.converged ? "converged" : "not converged") << " after " << r.iterations
           << " iterations, loglik " << format_double(r.loglik) << '\n';
  if (!r.converged) throw ConvergenceError("fit did not converge within " + std::to_string(o.solver.max_iterations) +
                                           " iterations; artifacts hold the last iterate");
  return 0;
}

// ---------------------------------------------------------------- test

struct TestOptions {
  std::string fit_path;
  std::vector<std::string> kinds;
  std::vector<std::string> constructions;
  std::vector<std::string> covariates;
};

int cmd_test(const TestOptions& o, const Run& run) {
  const FitArtifact a = load_fit(o.fit_path);
  const FitResult& r = a.fit;
  std::vector<ContrastKind> kinds;
  for (const auto& k : split_list(o.kinds)) kinds.push_back(parse_contrast_kind(k));
  if (kinds.empty()) kinds = {ContrastKind::EventTime, ContrastKind::Modifier, ContrastKind::Joint};
  std::vector<VarianceConstruction> constructions;
  for (const auto& c : split_list(o.constructions)) {
    if (c == "auto") continue;
    constructions.push_back(parse_construction(c));
  }
  if (constructions.empty()) {
    constructions = {r.penalized() ? VarianceConstruction::Sandwich : VarianceConstruction::Unpenalized};
  }
  std::optional<VarianceEstimates> var;
  if (r.penalized()) var = variance_estimates(r);
  std::vector<Json> records;
  for (int l : resolve_covariates(a, o.covariates)) {
    for (ContrastKind kind : kinds) {
      for (VarianceConstruction c : constructions) {
        if (c != VarianceConstruction::Unpenalized && !r.penalized()) {
          throw ValidationError("construction '" + to_string(c) + "' needs a penalized fit");
        }
        const TestResult tr = wald_test(r, var ? &*var : nullptr, kind, c, l);
        records.push_back(test_record(tr, covariate_name(a, l)));
        *run.out << covariate_name(a, l) << ' ' << to_string(kind) << ' ' << to_string(c) << ": statistic "
                 << format_double(tr.statistic) << ", df " << tr.df << ", p " << format_double(tr.p_value) << '\n';
      }
    }
  }
  run.write_records("tests.jsonl", records);
  return 0;
}

// ---------------------------------------------------------------- cv

struct CvOptions {
  DataOptions data;
  BasisOptions basis;
  SolverConfig solver;
  int cause = 1;
  std::vector<std::string> methods;
  int folds = 4;
  std::uint64_t seed = 0;
  bool grid_default = false;
  std::string grid_mu;
  std::string grid_mux;
  bool fold_baseline = false;
  bool cold_start = false;
};

int cmd_cv(const CvOptions& o, const Run& run) {
  const Dataset ds = load_data(o.data);
  check_cause(ds, o.cause);
  std::vector<std::string> warnings = ds.warnings;
  const TensorBasis basis = place_basis(ds, o.cause, resolve_basis(o.basis), warnings);
  std::vector<CvMethod> methods;
  for (const auto& m : split_list(o.methods)) {
    if (m == "all") {
      methods.assign(std::begin(kAllCvMethods), std::end(kAllCvMethods));
    } else {
      methods.push_back(parse_cv_method(m));
    }
  }
  if (methods.empty()) methods.assign(std::begin(kAllCvMethods), std::end(kAllCvMethods));

  std::vector<PenaltyConfig> grid;
  const std::vector<double> grid_mu = parse_list(o.grid_mu, "--grid-mu");
  const std::vector<double> grid_mux = parse_list(o.grid_mux, "--grid-mux");
  if (o.grid_default || (grid_mu.empty() && grid_mux.empty())) {
    if (!grid_mu.empty() || !grid_mux.empty()) throw ValidationError("--grid-default excludes --grid-mu/--grid-mux");
    grid = default_grid(ds.n(), ds.p());
  } else {
    if (grid_mu.empty() || grid_mux.empty()) throw ValidationError("--grid-mu and --grid-mux go together");
    for (double mx : grid_mux) {
      for (double m : grid_mu) grid.push_back(PenaltyConfig::uniform(ds.p(), m, mx));
    }
  }
  const FoldAssignment folds = partition_folds(ds, o.folds, o.seed);
  CvSettings settings;
  settings.solver = o.solver;
  settings.fold_specific_baseline = o.fold_baseline;
  settings.warm_start = !o.cold_start;
  const CvProblem problem(ds, folds, basis, o.cause, settings);
  const std::vector<CvReport> reports = tune_all(problem, grid, methods, folds, nullptr);

  std::vector<Json> records;
  for (const auto& w : warnings) records.push_back(warning_record(w));
  for (const CvReport& rep : reports) {
    for (Json& j : cv_records(rep)) records.push_back(std::move(j));
    const CvPoint& sel = rep.points[rep.selected];
    *run.out << to_string(rep.method) << ": selected point " << rep.selected + 1 << " of " << rep.points.size()
             << ", mu " << format_double(sel.penalty.mu[0]) << ", mux " << format_double(sel.penalty.mu_x[0])
             << ", cve " << format_double(sel.cve) << '\n';
  }
  run.write_records("cv.jsonl", records);
  return 0;
}

// ---------------------------------------------------------------- predict

struct PredictOptions {
  std::string fit_path;
  std::string t_grid;
  std::string x_grid;
  std::vector<std::string> covariates;
  double level = 0.95;
  bool model_variance = false;
};

int cmd_predict(const PredictOptions& o, const Run& run) {
  const FitArtifact a = load_fit(o.fit_path);
  const FitResult& r = a.fit;
  const std::vector<double> tg = parse_grid(o.t_grid, "--t-grid");
  const std::vector<double> xg = parse_grid(o.x_grid, "--x-grid");
  if (o.model_variance && !r.penalized()) throw ValidationError("--model-variance applies to penalized fits only");
  std::optional<VarianceEstimates> var;
  if (r.penalized()) var = variance_estimates(r);
  std::string csv = csv_preamble(run.hash) + "covariate,t,x,estimate,se,lo,hi\n";
  std::size_t rows = 0;
  for (int l : resolve_covariates(a, o.covariates)) {
    const auto pts = pointwise_ci(r, var ? &*var : nullptr, l, tg, xg, o.level, o.model_variance);
    const std::string part = format_surface_csv(run.hash, covariate_name(a, l), pts);
    csv += part.substr(part.find('\n', part.find('\n') + 1) + 1);
    rows += pts.size();
  }
  run.write("surface.csv", csv);
  *run.out << "predict: " << rows << " grid rows\n";
  return 0;
}

// ---------------------------------------------------------------- simulate

struct SimulateOptions {
  ScenarioOptions scenario;
  std::uint64_t seed = 0;
  std::uint64_t stream = 0;
  std::string truth_t_grid;
  std::string truth_x_grid;
};

int cmd_simulate(const SimulateOptions& o, const Run& run) {
  const ScenarioConfig cfg = resolve_scenario(o.scenario);
  const GeneratedData gen = generate_dataset(cfg, o.seed, o.stream);
  run.write("data.csv", format_csv(gen.data, "manifest_sha256=" + run.hash));
  const std::vector<double> tg =
      o.truth_t_grid.empty() ? linspace(0.0, cfg.horizon, 101) : parse_grid(o.truth_t_grid, "--truth-t-grid");
  const std::vector<double> xg = o.truth_x_grid.empty() ? linspace(cfg.modifier_lo, cfg.modifier_hi, 101)
                                                        : parse_grid(o.truth_x_grid, "--truth-x-grid");
  run.write("truth.csv", format_truth_csv(run.hash, cfg.surface, tg, xg));
  *run.out << "simulate: n " << gen.data.n() << ", events " << gen.data.event_count(1) << '\n';
  return 0;
}

// ---------------------------------------------------------------- residuals

struct ResidualOptions {
  std::string fit_path;
  DataOptions data;
  bool strict = false;
};

int cmd_residuals(ResidualOptions o, const Run& run) {
  const FitArtifact a = load_fit(o.fit_path);
  const FitResult& r = a.fit;
  if (o.data.z_cols.empty()) o.data.z_cols = a.z_names;
  if (o.data.w_cols.empty()) o.data.w_cols = a.w_names;
  const Dataset ds = load_data(o.data);
  if (ds.p() != r.layout.p || ds.q() != r.q) throw ValidationError("dataset covariates do not match the fit");
  check_cause(ds, r.cause);
  const RiskIndex index = build_risk_index(ds);
  const LikelihoodEvaluator eval(ds, index, r.basis, r.cause);
  const BaselineHazard baseline = breslow_baseline(eval, ds, r.coeffs);
  ResidualRequest req;
  req.strict = o.strict;
  const CoefficientSet sets[] = {r.coeffs};
  const Residuals res = compute_residuals(sets, {}, r.basis, baseline, ds, r.cause, req);
  run.write("residuals.csv", format_residuals_csv(run.hash, res, ds));
  run.write("baseline.csv", format_baseline_csv(run.hash, baseline));
  const double msum = res.martingale.sum();
  run.write_records("residuals.jsonl", {Json{{"record", "residual_summary"},
                                             {"subjects", res.rows.size()},
                                             {"martingale_sum", msum},
                                             {"deviance_sq_sum", res.deviance.squaredNorm()},
                                             {"clipped", res.clipped}}});
  *run.out << "residuals: " << res.rows.size() << " subjects, martingale sum " << format_double(msum)
           << ", clipped deviance radicands " << res.clipped << '\n';
  return 0;
}

// ---------------------------------------------------------------- experiment

struct ExperimentOptions {
  ScenarioOptions scenario;
  ExperimentConfig cfg;
  std::vector<std::string> metrics;
  std::vector<std::string> penalty_pairs;
  bool no_unpenalized = false;
  std::vector<std::string> kinds;
  std::vector<std::string> constructions;
  std::vector<std::string> cv_methods;
};

int cmd_experiment(ExperimentOptions o, const Run& run) {
  ExperimentConfig cfg = o.cfg;
  cfg.scenario = resolve_scenario(o.scenario);
  cfg.metrics.clear();
  for (const auto& m : split_list(o.metrics)) cfg.metrics.push_back(parse_metric(m));
  cfg.settings.clear();
  if (!o.no_unpenalized) cfg.settings.push_back(FitSetting{});
  for (const auto& pair : split_list(o.penalty_pairs)) {
    const auto colon = pair.find(':');
    if (colon == std::string::npos) throw ValidationError("--penalty-pairs entries are mu:mux");
    const std::vector<double> v = parse_grid(pair.substr(0, colon) + "," + pair.substr(colon + 1), "--penalty-pairs");
    cfg.settings.push_back({"mu=" + format_double(v[0]) + ";mux=" + format_double(v[1]), PenaltyConfig::uniform(1, v[0], v[1])});
  }
  if (!o.kinds.empty()) {
    cfg.kinds.clear();
    for (const auto& k : split_list(o.kinds)) cfg.kinds.push_back(parse_contrast_kind(k));
  }
  if (!o.constructions.empty()) {
    cfg.constructions.clear();
    for (const auto& c : split_list(o.constructions)) cfg.constructions.push_back(parse_construction(c));
  }
  if (!o.cv_methods.empty()) {
    cfg.cv_methods.clear();
    for (const auto& m : split_list(o.cv_methods)) cfg.cv_methods.push_back(parse_cv_method(m));
  }
  std::ostream& err = *run.err;
  const MetricsReport rep = run_experiment(cfg, [&](std::size_t done, std::size_t total) {
    err << "\rexperiment: " << done << '/' << total << " replicates" << (done == total ? "\n" : "") << std::flush;
  });
  run.write_records("metrics.jsonl", metrics_records(rep));
  run.write("curves.csv", format_curves_csv(run.hash, rep));
  for (const auto& es : rep.estimation) {
    *run.out << es.label << ": IMSE event " << format_double(es.imse_event) << " (se " << format_double(es.imse_event_se)
             << "), calendar " << format_double(es.imse_calendar) << " (se " << format_double(es.imse_calendar_se)
             << "), failed " << es.failed << '\n';
  }
  for (const auto& t : rep.tests) {
    *run.out << t.label << ' ' << to_string(t.kind) << ' ' << to_string(t.construction) << ": rejection rate "
             << format_double(t.rate) << " (" << t.rejections << '/' << t.used << ")\n";
  }
  for (const auto& c : rep.cv) {
    *run.out << to_string(c.method) << ": testing -2l " << format_double(c.test_m2ll_mean) << " (sd "
             << format_double(c.test_m2ll_sd) << "), IMSE " << format_double(c.imse_mean) << '\n';
  }
  return 0;
}

// ---------------------------------------------------------------- driver

// CLI11 reads config files at the top level, so --config (or its alias
// --scenario) is moved in front of the subcommand wherever it was given.
std::vector<std::string> hoist_config(const std::vector<std::string>& args) {
  std::vector<std::string> front, rest;
  for (std::size_t i = 1; i < args.size(); ++i) {
    const std::string& a = args[i];
    bool matched = false;
    for (const std::string flag : {"--config", "--scenario"}) {
      if (a == flag && i + 1 < args.size()) {
        front.push_back("--config");
        front.push_back(args[++i]);
        matched = true;
      } else if (a.rfind(flag + "=", 0) == 0) {
        front.push_back("--config=" + a.substr(flag.size() + 1));
        matched = true;
      }
      if (matched) break;
    }
    if (!matched) rest.push_back(a);
  }
  std::vector<std::string> out{args.empty() ? std::string("bvcox") : args[0]};
  out.insert(out.end(), front.begin(), front.end());
  out.insert(out.end(), rest.begin(), rest.end());
  return out;
}

std::string resolved_manifest(const CLI::App& app, const CLI::App* sub) {
  std::string out = "# bvcox " + std::string(kVersion) + " run manifest; rerun with: bvcox " + sub->get_name() +
                    " --config <this file>\n";
  std::istringstream in(app.config_to_str(true, false));
  const std::string prefix = sub->get_name() + ".";
  for (std::string line; std::getline(in, line);) {
    if (line.rfind(prefix, 0) == 0) out += line + '\n';
  }
  return out;
}

// Output location and thread count do not change results, so they are left
// out of the hash; identical runs into different directories match byte for byte.
std::string manifest_hash(const std::string& manifest, const std::string& command) {
  std::istringstream in(manifest);
  std::string hashed;
  for (std::string line; std::getline(in, line);) {
    if (line.empty() || line[0] == '#') continue;
    if (line.rfind(command + ".out=", 0) == 0 || line.rfind(command + ".threads=", 0) == 0) continue;
    hashed += line + '\n';
  }
  return sha256_hex(hashed);
}

struct Failure {
  int code;
  std::string kind;
};

void report_error(const Run& run, const Failure& f, const std::string& message, std::ostream& err) {
  const Json rec{{"record", "error"}, {"command", run.command}, {"kind", f.kind}, {"message", message}, {"exit_code", f.code}};
  err << rec.dump() << '\n';
  if (!run.out_dir.empty()) {
    try {
      write_text(run.out_dir / "error.json", rec.dump() + "\n");
    } catch (const std::exception&) {
      // The record on stderr is the primary channel.
    }
  }
}

}  // namespace

int run_cli(const std::vector<std::string>& raw_args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Bivariate varying-coefficient competing-risks Cox models", "bvcox"};
  app.set_config("--config", "", "TOML config file (alias --scenario); command-line flags override its values");
  app.set_version_flag("--version", std::string(kVersion));
  app.require_subcommand(1);
  app.allow_config_extras(CLI::config_extras_mode::ignore);

  std::string out_dir;
  int threads = 1;
  auto add_common = [&](CLI::App* sub) {
    sub->add_option("--out", out_dir, "Output directory")->required();
    sub->add_option("--threads", threads, "Worker threads")->capture_default_str()->check(CLI::PositiveNumber);
  };

  FitOptions fit_o;
  auto* fit_cmd = app.add_subcommand("fit", "Fit one cause-specific model");
  add_data_options(fit_cmd, fit_o.data, true);
  add_basis_options(fit_cmd, fit_o.basis);
  add_solver_options(fit_cmd, fit_o.solver);
  add_penalty_options(fit_cmd, fit_o.penalty);
  fit_cmd->add_option("--cause", fit_o.cause, "Cause to analyze")->capture_default_str();
  fit_cmd->add_option("--t-grid", fit_o.t_grid, "Surface grid in event time, lo:hi:count or a list");
  fit_cmd->add_option("--x-grid", fit_o.x_grid, "Surface grid in the modifier, lo:hi:count or a list");
  fit_cmd->add_option("--level", fit_o.level, "Pointwise interval level")->capture_default_str();
  add_common(fit_cmd);

  TestOptions test_o;
  auto* test_cmd = app.add_subcommand("test", "Wald tests of effect variation on a stored fit");
  test_cmd->add_option("--fit", test_o.fit_path, "fit.jsonl written by `fit`")->required();
  test_cmd->add_option("--kind", test_o.kinds, "event-time, modifier, joint (default all)");
  test_cmd->add_option("--construction", test_o.constructions, "unpenalized, sandwich, model, gray or auto");
  test_cmd->add_option("--covariate", test_o.covariates, "Varying covariates to test (default all)");
  add_common(test_cmd);

  CvOptions cv_o;
  auto* cv_cmd = app.add_subcommand("cv", "Tune penalty weights by cross-validation");
  add_data_options(cv_cmd, cv_o.data, true);
  add_basis_options(cv_cmd, cv_o.basis);
  add_solver_options(cv_cmd, cv_o.solver);
  cv_cmd->add_option("--cause", cv_o.cause, "Cause to analyze")->capture_default_str();
  cv_cmd->add_option("--method", cv_o.methods, "fc, cfc, uc, dr, gcv or all (default all)");
  cv_cmd->add_option("--folds", cv_o.folds, "Fold count")->capture_default_str();
  cv_cmd->add_option("--seed", cv_o.seed, "Fold assignment seed")->required();
  cv_cmd->add_flag("--grid-default", cv_o.grid_default, "5 x 5 grid with mu/sqrt(n), mux/sqrt(n) in 1e-5..1e-1");
  cv_cmd->add_option("--grid-mu", cv_o.grid_mu, "Event-time penalty values of the grid, comma separated");
  cv_cmd->add_option("--grid-mux", cv_o.grid_mux, "Modifier penalty values of the grid, comma separated");
  cv_cmd->add_flag("--fold-baseline", cv_o.fold_baseline, "DR: Breslow baseline from each fold complement");
  cv_cmd->add_flag("--cold-start", cv_o.cold_start, "Start every fit from zero");
  add_common(cv_cmd);

  PredictOptions pred_o;
  auto* pred_cmd = app.add_subcommand("predict", "Surface estimates and pointwise intervals on a grid");
  pred_cmd->add_option("--fit", pred_o.fit_path, "fit.jsonl written by `fit`")->required();
  pred_cmd->add_option("--t-grid", pred_o.t_grid, "Event-time grid, lo:hi:count or a list")->required();
  pred_cmd->add_option("--x-grid", pred_o.x_grid, "Modifier grid, lo:hi:count or a list")->required();
  pred_cmd->add_option("--covariate", pred_o.covariates, "Varying covariates (default all)");
  pred_cmd->add_option("--level", pred_o.level, "Pointwise interval level")->capture_default_str();
  pred_cmd->add_flag("--model-variance", pred_o.model_variance, "Penalized fits: model-based instead of sandwich variance");
  add_common(pred_cmd);

  SimulateOptions sim_o;
  auto* sim_cmd = app.add_subcommand("simulate", "Generate a synthetic dataset and its true surface");
  add_scenario_options(sim_cmd, sim_o.scenario);
  sim_cmd->add_option("--seed", sim_o.seed, "Generator seed")->required();
  sim_cmd->add_option("--stream", sim_o.stream, "Stream under the seed")->capture_default_str();
  sim_cmd->add_option("--truth-t-grid", sim_o.truth_t_grid, "Truth table event-time grid (default 101 points)");
  sim_cmd->add_option("--truth-x-grid", sim_o.truth_x_grid, "Truth table modifier grid (default 101 points)");
  add_common(sim_cmd);

  ResidualOptions res_o;
  auto* res_cmd = app.add_subcommand("residuals", "Martingale and deviance residuals of a stored fit");
  res_cmd->add_option("--fit", res_o.fit_path, "fit.jsonl written by `fit`")->required();
  add_data_options(res_cmd, res_o.data, false);
  res_cmd->add_flag("--strict", res_o.strict, "Fail on negative deviance radicands instead of clipping");
  add_common(res_cmd);

  ExperimentOptions exp_o;
  exp_o.metrics = {"imse"};
  auto* exp_cmd = app.add_subcommand("experiment", "Monte Carlo experiment over simulated replicates");
  add_scenario_options(exp_cmd, exp_o.scenario);
  exp_cmd->add_option("--replicates", exp_o.cfg.replicates, "Replicate count")->capture_default_str();
  exp_cmd->add_option("--seed", exp_o.cfg.seed, "Experiment seed")->required();
  exp_cmd->add_option("--metrics", exp_o.metrics, "imse, bias, variance, coverage, type-i, power, cv-comparison")
      ->delimiter(',')
      ->capture_default_str();
  exp_cmd->add_option("--penalty-pairs", exp_o.penalty_pairs, "Penalized settings as mu:mux, comma separated");
  exp_cmd->add_flag("--no-unpenalized", exp_o.no_unpenalized, "Drop the unpenalized reference setting");
  exp_cmd->add_option("--degree", exp_o.cfg.degree, "Event-time spline degree")->capture_default_str();
  exp_cmd->add_option("--degree-x", exp_o.cfg.degree_x, "Modifier spline degree")->capture_default_str();
  exp_cmd->add_option("--knots-t", exp_o.cfg.knots_t, "Event-time interior knot count")->capture_default_str();
  exp_cmd->add_option("--knots-x", exp_o.cfg.knots_x, "Modifier interior knot count")->capture_default_str();
  exp_cmd->add_option("--knot-rule", exp_o.cfg.knot_rule, "quantile or even")
      ->capture_default_str()
      ->check(CLI::IsMember({"quantile", "even"}));
  add_solver_options(exp_cmd, exp_o.cfg.solver);
  exp_cmd->add_option("--alpha", exp_o.cfg.alpha, "Test level")->capture_default_str();
  exp_cmd->add_option("--level", exp_o.cfg.level, "Pointwise interval level")->capture_default_str();
  exp_cmd->add_option("--kind", exp_o.kinds, "Contrast kinds for tests (default all)");
  exp_cmd->add_option("--construction", exp_o.constructions, "Constructions for penalized settings");
  exp_cmd->add_option("--cv-folds", exp_o.cfg.cv_folds, "Folds for the CV comparison")->capture_default_str();
  exp_cmd->add_option("--cv-method", exp_o.cv_methods, "CV methods to compare (default all)");
  add_common(exp_cmd);

  Run run;
  run.out = &out;
  run.err = &err;
  const std::vector<std::string> args = hoist_config(raw_args);
  std::vector<const char*> argv;
  for (const auto& a : args) argv.push_back(a.c_str());
  try {
    app.parse(static_cast<int>(argv.size()), argv.data());
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e, out, err);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e, out, err);
  } catch (const CLI::CallForVersion& e) {
    return app.exit(e, out, err);
  } catch (const CLI::ParseError& e) {
    for (const CLI::App* sub : app.get_subcommands()) run.command = sub->get_name();
    // Options parsed before the error are bound, so a given --out is known.
    if (!out_dir.empty()) {
      std::error_code ec;
      fs::create_directories(out_dir, ec);
      if (!ec) run.out_dir = out_dir;
    }
    report_error(run, {1, "usage"}, e.what(), err);
    return 1;
  }

  CLI::App* sub = app.get_subcommands().front();
  run.command = sub->get_name();
  run.out_dir = out_dir;
  try {
    run.manifest = resolved_manifest(app, sub);
    run.hash = manifest_hash(run.manifest, sub->get_name());
    fs::create_directories(run.out_dir);
    run.write("manifest.toml", run.manifest);
    fit_o.solver.threads = threads;
    cv_o.solver.threads = threads;
    exp_o.cfg.threads = threads;
    if (sub == fit_cmd) return cmd_fit(fit_o, run);
    if (sub == test_cmd) return cmd_test(test_o, run);
    if (sub == cv_cmd) return cmd_cv(cv_o, run);
    if (sub == pred_cmd) return cmd_predict(pred_o, run);
    if (sub == sim_cmd) return cmd_simulate(sim_o, run);
    if (sub == res_cmd) return cmd_residuals(res_o, run);
    if (sub == exp_cmd) return cmd_experiment(exp_o, run);
    throw ValidationError("unknown subcommand");
  } catch (const ValidationError& e) {
    report_error(run, {1, "validation"}, e.what(), err);
    return 1;
  } catch (const ConvergenceError& e) {
    report_error(run, {2, "convergence"}, e.what(), err);
    return 2;
  } catch (const NumericalError& e) {
    report_error(run, {3, "numerical"}, e.what(), err);
    return 3;
  } catch (const fs::filesystem_error& e) {
    report_error(run, {1, "io"}, e.what(), err);
    return 1;
  } catch (const std::exception& e) {
    report_error(run, {3, "internal"}, e.what(), err);
    return 3;
  }
}

}  // namespace bvcox
