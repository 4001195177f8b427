#include "bvcox/io.hpp"

#include <cstdio>
#include <fstream>
#include <iomanip>
#include <limits>
#include <sstream>

#include <openssl/evp.h>

#include "bvcox/error.hpp"

namespace bvcox {

std::string sha256_hex(std::string_view bytes) {
  unsigned char digest[EVP_MAX_MD_SIZE];
  unsigned int length = 0;
  if (EVP_Digest(bytes.data(), bytes.size(), digest, &length, EVP_sha256(), nullptr) != 1) {
    throw NumericalError("SHA-256 digest failed");
  }
  std::ostringstream out;
  for (unsigned int i = 0; i < length; ++i) out << std::hex << std::setw(2) << std::setfill('0') << int{digest[i]};
  return out.str();
}

std::string read_text(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ValidationError("cannot open '" + path.string() + "'");
  std::ostringstream buf;
  buf << in.rdbuf();
  return buf.str();
}

void write_text(const std::filesystem::path& path, const std::string& text) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::filesystem::path tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw ValidationError("cannot write '" + path.string() + "'");
    out << text;
    if (!out) throw ValidationError("write to '" + path.string() + "' failed");
  }
  std::filesystem::rename(tmp, path);
}

namespace {

double number_from_json(const Json& j) {
  if (j.is_null()) return std::numeric_limits<double>::quiet_NaN();
  return j.get<double>();
}

Json number_json(double v) { return std::isfinite(v) ? Json(v) : Json(nullptr); }

}  // namespace

Json to_json(const Eigen::VectorXd& v) {
  Json out = Json::array();
  for (Eigen::Index i = 0; i < v.size(); ++i) out.push_back(number_json(v[i]));
  return out;
}

Json to_json(const Eigen::MatrixXd& m) {
  Json out = Json::array();
  for (Eigen::Index r = 0; r < m.rows(); ++r) {
    Json row = Json::array();
    for (Eigen::Index c = 0; c < m.cols(); ++c) row.push_back(number_json(m(r, c)));
    out.push_back(std::move(row));
  }
  return out;
}

Eigen::VectorXd vector_from_json(const Json& j) {
  if (!j.is_array()) throw ValidationError("expected a JSON array of numbers");
  Eigen::VectorXd v(static_cast<Eigen::Index>(j.size()));
  for (std::size_t i = 0; i < j.size(); ++i) v[static_cast<Eigen::Index>(i)] = number_from_json(j[i]);
  return v;
}

Eigen::MatrixXd matrix_from_json(const Json& j) {
  if (!j.is_array()) throw ValidationError("expected a JSON array of rows");
  if (j.empty()) return {};
  const std::size_t cols = j[0].size();
  Eigen::MatrixXd m(static_cast<Eigen::Index>(j.size()), static_cast<Eigen::Index>(cols));
  for (std::size_t r = 0; r < j.size(); ++r) {
    if (!j[r].is_array() || j[r].size() != cols) throw ValidationError("ragged matrix in JSON");
    for (std::size_t c = 0; c < cols; ++c) {
      m(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(c)) = number_from_json(j[r][c]);
    }
  }
  return m;
}

Json to_json(const BasisSpec& spec) {
  return Json{{"degree", spec.degree}, {"interior_knots", spec.interior_knots}, {"lo", spec.lo}, {"hi", spec.hi},
              {"size", spec.size()}};
}

BasisSpec basis_spec_from_json(const Json& j) {
  BasisSpec spec;
  spec.degree = j.at("degree").get<int>();
  spec.interior_knots = j.at("interior_knots").get<std::vector<double>>();
  spec.lo = j.at("lo").get<double>();
  spec.hi = j.at("hi").get<double>();
  spec.validate();
  return spec;
}

Json to_json(const PenaltyConfig& cfg) { return Json{{"mu", to_json(cfg.mu)}, {"mu_x", to_json(cfg.mu_x)}}; }

PenaltyConfig penalty_from_json(const Json& j) {
  PenaltyConfig cfg;
  cfg.mu = vector_from_json(j.at("mu"));
  cfg.mu_x = vector_from_json(j.at("mu_x"));
  return cfg;
}

Json to_json(const SolverConfig& cfg) {
  return Json{{"lambda0", cfg.lambda0},
              {"delta", cfg.delta},
              {"phi", cfg.phi},
              {"psi", cfg.psi},
              {"epsilon", cfg.epsilon},
              {"max_iterations", cfg.max_iterations},
              {"max_line_search_steps", cfg.max_line_search_steps},
              {"threads", cfg.threads}};
}

Json fit_record(const FitArtifact& artifact) {
  const FitResult& f = artifact.fit;
  Json legend = Json::array();
  for (int l = 0; l < f.layout.p; ++l) {
    const std::string name = l < static_cast<int>(artifact.z_names.size()) ? artifact.z_names[static_cast<std::size_t>(l)]
                                                                            : "z" + std::to_string(l + 1);
    for (int kx = 0; kx < f.layout.Kx; ++kx) {
      for (int k = 0; k < f.layout.K; ++k) {
        legend.push_back({{"index", f.layout.index(l, kx, k)}, {"block", "gamma"}, {"covariate", name}, {"kx", kx}, {"k", k}});
      }
    }
  }
  for (int i = 0; i < f.q; ++i) {
    const std::string name = i < static_cast<int>(artifact.w_names.size()) ? artifact.w_names[static_cast<std::size_t>(i)]
                                                                          : "w" + std::to_string(i + 1);
    legend.push_back({{"index", f.layout.size() + i}, {"block", "theta"}, {"covariate", name}});
  }
  Json trace = Json::array();
  for (const auto& t : f.trace) {
    trace.push_back({{"objective", number_json(t.objective)},
                     {"increment_sq", number_json(t.increment_sq)},
                     {"step", t.step},
                     {"lambda", t.lambda},
                     {"line_search_steps", t.line_search_steps}});
  }
  Json rec;
  rec["record"] = "fit";
  rec["cause"] = f.cause;
  rec["n"] = f.n;
  rec["events"] = f.events;
  rec["z_names"] = artifact.z_names;
  rec["w_names"] = artifact.w_names;
  rec["stratum_labels"] = artifact.stratum_labels;
  rec["basis"] = {{"time", to_json(f.basis.time)}, {"modifier", to_json(f.basis.modifier)}};
  rec["layout"] = {{"p", f.layout.p}, {"K", f.layout.K}, {"Kx", f.layout.Kx}, {"q", f.q}};
  rec["converged"] = f.converged;
  rec["iterations"] = f.iterations;
  rec["loglik"] = number_json(f.loglik);
  rec["penalized_loglik"] = number_json(f.penalized_loglik);
  rec["penalty"] = f.penalty ? to_json(*f.penalty) : Json(nullptr);
  rec["gamma"] = to_json(f.coeffs.gamma);
  rec["theta"] = to_json(f.coeffs.theta);
  rec["legend"] = std::move(legend);
  rec["gradient"] = to_json(f.gradient);
  rec["hessian"] = to_json(f.hessian);
  rec["penalized_gradient"] = to_json(f.penalized_gradient);
  rec["penalized_hessian"] = to_json(f.penalized_hessian);
  rec["penalty_matrix"] = to_json(f.penalty_matrix);
  rec["trace"] = std::move(trace);
  return rec;
}

FitArtifact fit_from_record(const Json& rec) {
  if (rec.value("record", "") != "fit") throw ValidationError("not a fit record");
  FitArtifact a;
  FitResult& f = a.fit;
  try {
    f.cause = rec.at("cause").get<int>();
    f.n = rec.at("n").get<std::size_t>();
    f.events = rec.at("events").get<std::size_t>();
    a.z_names = rec.at("z_names").get<std::vector<std::string>>();
    a.w_names = rec.at("w_names").get<std::vector<std::string>>();
    a.stratum_labels = rec.at("stratum_labels").get<std::vector<std::string>>();
    f.basis.time = basis_spec_from_json(rec.at("basis").at("time"));
    f.basis.modifier = basis_spec_from_json(rec.at("basis").at("modifier"));
    const Json& lay = rec.at("layout");
    f.layout = {lay.at("p").get<int>(), lay.at("K").get<int>(), lay.at("Kx").get<int>()};
    f.q = lay.at("q").get<int>();
    if (!(f.layout == f.basis.layout(f.layout.p))) throw ValidationError("fit layout does not match its basis");
    f.converged = rec.at("converged").get<bool>();
    f.iterations = rec.at("iterations").get<int>();
    f.loglik = number_from_json(rec.at("loglik"));
    f.penalized_loglik = number_from_json(rec.at("penalized_loglik"));
    if (!rec.at("penalty").is_null()) f.penalty = penalty_from_json(rec.at("penalty"));
    f.coeffs.gamma = vector_from_json(rec.at("gamma"));
    f.coeffs.theta = vector_from_json(rec.at("theta"));
    f.gradient = vector_from_json(rec.at("gradient"));
    f.hessian = matrix_from_json(rec.at("hessian"));
    f.penalized_gradient = vector_from_json(rec.at("penalized_gradient"));
    f.penalized_hessian = matrix_from_json(rec.at("penalized_hessian"));
    f.penalty_matrix = matrix_from_json(rec.at("penalty_matrix"));
    for (const Json& t : rec.at("trace")) {
      f.trace.push_back({number_from_json(t.at("objective")), number_from_json(t.at("increment_sq")),
                         t.at("step").get<double>(), t.at("lambda").get<double>(),
                         t.at("line_search_steps").get<int>()});
    }
  } catch (const nlohmann::json::exception& e) {
    throw ValidationError(std::string("malformed fit record: ") + e.what());
  }
  const Eigen::Index dim = f.layout.size() + f.q;
  if (f.coeffs.gamma.size() != f.layout.size() || f.coeffs.theta.size() != f.q || f.hessian.rows() != dim ||
      f.hessian.cols() != dim || f.penalized_hessian.rows() != dim || f.gradient.size() != dim) {
    throw ValidationError("fit record dimensions are inconsistent");
  }
  return a;
}

Json test_record(const TestResult& r, const std::string& covariate_name) {
  return Json{{"record", "test"},
              {"covariate", covariate_name},
              {"covariate_index", r.covariate},
              {"kind", to_string(r.kind)},
              {"construction", to_string(r.construction)},
              {"statistic", number_json(r.statistic)},
              {"df", r.df},
              {"p_value", number_json(r.p_value)},
              {"error_bound", r.error_bound},
              {"eigenvalues", r.eigenvalues}};
}

std::vector<Json> cv_records(const CvReport& rep) {
  std::vector<Json> out;
  const std::string method = to_string(rep.method);
  for (std::size_t i = 0; i < rep.points.size(); ++i) {
    const CvPoint& pt = rep.points[i];
    out.push_back({{"record", "cv_point"},
                   {"method", method},
                   {"index", i},
                   {"mu", to_json(pt.penalty.mu)},
                   {"mu_x", to_json(pt.penalty.mu_x)},
                   {"cve", number_json(pt.cve)},
                   {"valid", pt.valid},
                   {"note", pt.note},
                   {"clipped", pt.clipped},
                   {"selected", i == rep.selected}});
  }
  const CvPoint& sel = rep.points[rep.selected];
  out.push_back({{"record", "cv_selection"},
                 {"method", method},
                 {"cause", rep.cause},
                 {"folds", rep.folds},
                 {"seed", rep.seed},
                 {"index", rep.selected},
                 {"mu", to_json(sel.penalty.mu)},
                 {"mu_x", to_json(sel.penalty.mu_x)},
                 {"cve", number_json(sel.cve)}});
  for (const FoldCoverage& c : rep.coverage) {
    out.push_back({{"record", "fold_coverage"},
                   {"method", method},
                   {"fold", c.fold + 1},
                   {"size", c.size},
                   {"events", c.events},
                   {"last_event_time", c.last_event_time}});
  }
  return out;
}

std::vector<Json> metrics_records(const MetricsReport& rep) {
  std::vector<Json> out;
  const ExperimentConfig& cfg = rep.config;
  Json metrics = Json::array();
  for (Metric m : cfg.metrics) metrics.push_back(to_string(m));
  out.push_back({{"record", "experiment"},
                 {"replicates", cfg.replicates},
                 {"failed_replicates", rep.failed_replicates},
                 {"seed", cfg.seed},
                 {"n", cfg.scenario.n},
                 {"surface", cfg.scenario.surface.kind},
                 {"baseline", cfg.scenario.baseline.kind},
                 {"baseline_rate", cfg.scenario.baseline.rate},
                 {"knot_rule", cfg.knot_rule},
                 {"metrics", metrics},
                 {"solver", to_json(cfg.solver)}});
  for (const EstimationSummary& es : rep.estimation) {
    out.push_back({{"record", "estimation"},
                   {"label", es.label},
                   {"used", es.used},
                   {"failed", es.failed},
                   {"imse_event", number_json(es.imse_event)},
                   {"imse_event_se", number_json(es.imse_event_se)},
                   {"imse_calendar", number_json(es.imse_calendar)},
                   {"imse_calendar_se", number_json(es.imse_calendar_se)}});
    for (const CurveSummary& c : es.curves) {
      double cov = std::numeric_limits<double>::quiet_NaN();
      if (!c.coverage.empty()) {
        cov = 0.0;
        for (double v : c.coverage) cov += v / static_cast<double>(c.coverage.size());
      }
      out.push_back({{"record", "curve"},
                     {"label", es.label},
                     {"timescale", to_string(c.spec.scale)},
                     {"fixed", c.spec.fixed},
                     {"imse", number_json(c.imse)},
                     {"mean_sq_bias", number_json(c.mean_sq_bias)},
                     {"mean_variance", number_json(c.mean_variance)},
                     {"mean_coverage", number_json(cov)}});
    }
  }
  const std::string rate_name = cfg.wants(Metric::TypeI) ? "type_i" : "power";
  for (const TestSummary& t : rep.tests) {
    out.push_back({{"record", "rejection_rate"},
                   {"label", t.label},
                   {"quantity", rate_name},
                   {"kind", to_string(t.kind)},
                   {"construction", to_string(t.construction)},
                   {"alpha", cfg.alpha},
                   {"used", t.used},
                   {"rejections", t.rejections},
                   {"rate", t.rate},
                   {"se", t.se}});
  }
  for (const CvSummary& c : rep.cv) {
    out.push_back({{"record", "cv_method"},
                   {"method", to_string(c.method)},
                   {"used", c.used},
                   {"failed", c.failed},
                   {"train_m2ll_mean", number_json(c.train_m2ll_mean)},
                   {"train_m2ll_sd", number_json(c.train_m2ll_sd)},
                   {"test_m2ll_mean", number_json(c.test_m2ll_mean)},
                   {"test_m2ll_sd", number_json(c.test_m2ll_sd)},
                   {"imse_mean", number_json(c.imse_mean)},
                   {"imse_sd", number_json(c.imse_sd)}});
  }
  for (const ReplicateOutcome& o : rep.outcomes) {
    Json settings = Json::array();
    for (std::size_t s = 0; s < o.settings.size(); ++s) {
      settings.push_back({{"label", cfg.settings[s].label},
                          {"ok", o.settings[s].ok},
                          {"error", o.settings[s].error},
                          {"iterations", o.settings[s].iterations}});
    }
    Json cv = Json::array();
    for (const CvOutcome& c : o.cv) {
      cv.push_back({{"method", to_string(c.method)},
                    {"ok", c.ok},
                    {"error", c.error},
                    {"mu", to_json(c.selected.mu)},
                    {"mu_x", to_json(c.selected.mu_x)},
                    {"train_m2ll", number_json(c.train_m2ll)},
                    {"test_m2ll", number_json(c.test_m2ll)},
                    {"imse", number_json(c.imse)}});
    }
    out.push_back({{"record", "replicate"},
                   {"index", o.replicate},
                   {"ok", o.ok},
                   {"error", o.error},
                   {"events", o.events},
                   {"settings", settings},
                   {"cv", cv}});
  }
  return out;
}

std::string format_jsonl(const std::string& manifest_hash, const std::vector<Json>& records) {
  std::string out = Json{{"record", "manifest"}, {"manifest_sha256", manifest_hash}}.dump();
  out += '\n';
  for (const Json& r : records) {
    out += r.dump();
    out += '\n';
  }
  return out;
}

std::vector<Json> read_jsonl(const std::filesystem::path& path, const std::string& record_type) {
  std::istringstream in(read_text(path));
  std::vector<Json> out;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    Json j;
    try {
      j = Json::parse(line);
    } catch (const nlohmann::json::exception& e) {
      throw ValidationError(path.string() + ":" + std::to_string(line_no) + ": " + e.what());
    }
    const std::string type = j.value("record", "");
    if (type == "manifest") continue;
    if (record_type.empty() || type == record_type) out.push_back(std::move(j));
  }
  return out;
}

std::string csv_preamble(const std::string& manifest_hash) { return "# manifest_sha256=" + manifest_hash + "\n"; }

std::string format_surface_csv(const std::string& manifest_hash, const std::string& covariate,
                               const std::vector<SurfacePoint>& points) {
  std::string out = csv_preamble(manifest_hash) + "covariate,t,x,estimate,se,lo,hi\n";
  for (const auto& p : points) {
    out += covariate + ',' + format_double(p.t) + ',' + format_double(p.x) + ',' + format_double(p.estimate) + ',' +
           format_double(p.se) + ',' + format_double(p.lo) + ',' + format_double(p.hi) + '\n';
  }
  return out;
}

std::string format_baseline_csv(const std::string& manifest_hash, const BaselineHazard& baseline) {
  std::string out = csv_preamble(manifest_hash) + "cause,stratum,time,increment,cumulative\n";
  for (std::size_t g = 0; g < baseline.steps.size(); ++g) {
    double cum = 0.0;
    for (const BaselineStep& s : baseline.steps[g]) {
      cum += s.increment;
      out += std::to_string(baseline.cause) + ',' + baseline.stratum_labels[g] + ',' + format_double(s.time) + ',' +
             format_double(s.increment) + ',' + format_double(cum) + '\n';
    }
  }
  return out;
}

std::string format_residuals_csv(const std::string& manifest_hash, const Residuals& res, const Dataset& ds) {
  std::string out = csv_preamble(manifest_hash) + "row,stratum,time,cause,martingale,deviance\n";
  for (std::size_t k = 0; k < res.rows.size(); ++k) {
    const std::size_t i = res.rows[k];
    const auto idx = static_cast<Eigen::Index>(k);
    out += std::to_string(i + 1) + ',' + ds.stratum_labels[static_cast<std::size_t>(ds.stratum[i])] + ',' +
           format_double(ds.time[i]) + ',' + std::to_string(ds.cause[i]) + ',' + format_double(res.martingale[idx]) +
           ',' + format_double(res.deviance[idx]) + '\n';
  }
  return out;
}

std::string format_truth_csv(const std::string& manifest_hash, const TrueSurface& surface,
                             std::span<const double> t_grid, std::span<const double> x_grid) {
  std::string out = csv_preamble(manifest_hash) + "t,x,beta1\n";
  for (double x : x_grid) {
    for (double t : t_grid) out += format_double(t) + ',' + format_double(x) + ',' + format_double(surface(t, x)) + '\n';
  }
  return out;
}

std::string format_curves_csv(const std::string& manifest_hash, const MetricsReport& report) {
  std::string out = csv_preamble(manifest_hash) +
                    "label,timescale,fixed,axis,truth,mean,band_lo,band_hi,bias,variance,mse,coverage\n";
  for (const EstimationSummary& es : report.estimation) {
    for (const CurveSummary& c : es.curves) {
      for (std::size_t j = 0; j < c.spec.axis.size(); ++j) {
        out += es.label + ',' + to_string(c.spec.scale) + ',' + format_double(c.spec.fixed) + ',' +
               format_double(c.spec.axis[j]) + ',' + format_double(c.truth[j]) + ',' + format_double(c.mean[j]) + ',' +
               format_double(c.band_lo[j]) + ',' + format_double(c.band_hi[j]) + ',' + format_double(c.bias[j]) + ',' +
               format_double(c.variance[j]) + ',' + format_double(c.mse[j]) + ',' +
               (c.coverage.empty() ? std::string() : format_double(c.coverage[j])) + '\n';
      }
    }
  }
  return out;
}

}  // namespace bvcox
