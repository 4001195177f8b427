#include <algorithm>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <pybind11/eigen.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include "bvcox/baseline_residuals.hpp"
#include "bvcox/cli.hpp"
#include "bvcox/error.hpp"
#include "bvcox/inference.hpp"
#include "bvcox/io.hpp"
#include "bvcox/simulation.hpp"
#include "bvcox/solver.hpp"

namespace py = pybind11;
using namespace bvcox;

namespace {

Dataset make_dataset(const std::vector<double>& time, const std::vector<int>& cause, const Eigen::MatrixXd& z,
                     const std::optional<Eigen::MatrixXd>& w, const std::optional<std::vector<double>>& modifier,
                     const std::optional<std::vector<std::string>>& stratum) {
  const std::size_t n = time.size();
  if (cause.size() != n || static_cast<std::size_t>(z.rows()) != n) {
    throw ValidationError("time, cause and z need one entry per subject");
  }
  Dataset ds;
  ds.time = time;
  ds.cause = cause;
  ds.z = z;
  ds.w = w ? *w : Eigen::MatrixXd(static_cast<Eigen::Index>(n), 0);
  if (static_cast<std::size_t>(ds.w.rows()) != n) throw ValidationError("w needs one row per subject");
  ds.modifier = modifier ? *modifier : std::vector<double>(n, 0.0);
  if (ds.modifier.size() != n) throw ValidationError("modifier needs one entry per subject");
  if (stratum) {
    if (stratum->size() != n) throw ValidationError("stratum needs one entry per subject");
    for (const auto& label : *stratum) {
      const auto it = std::find(ds.stratum_labels.begin(), ds.stratum_labels.end(), label);
      ds.stratum.push_back(static_cast<int>(it - ds.stratum_labels.begin()));
      if (it == ds.stratum_labels.end()) ds.stratum_labels.push_back(label);
    }
  } else {
    ds.stratum.assign(n, 0);
    ds.stratum_labels = {"1"};
  }
  for (int l = 0; l < ds.p(); ++l) ds.z_names.push_back("z" + std::to_string(l + 1));
  for (int l = 0; l < ds.q(); ++l) ds.w_names.push_back("w" + std::to_string(l + 1));
  int causes = 1;
  for (int c : cause) causes = std::max(causes, c);
  ds.num_causes = causes;
  finalize_dataset(ds);
  return ds;
}

struct PyFit {
  FitArtifact artifact;
  Dataset data;

  [[nodiscard]] const FitResult& result() const { return artifact.fit; }
};

PyFit fit_model(const std::vector<double>& time, const std::vector<int>& cause, const Eigen::MatrixXd& z,
                const std::optional<Eigen::MatrixXd>& w, const std::optional<std::vector<double>>& modifier,
                const std::optional<std::vector<std::string>>& stratum, int cause_code, int degree, int degree_x,
                int knots_t, int knots_x, const std::optional<std::vector<double>>& mu,
                const std::optional<std::vector<double>>& mu_x, double lambda0, double epsilon, int max_iter,
                int threads) {
  PyFit out;
  out.data = make_dataset(time, cause, z, w, modifier, stratum);
  const Dataset& ds = out.data;
  std::vector<double> failures;
  for (std::size_t i = 0; i < ds.n(); ++i) {
    if (ds.cause[i] == cause_code) failures.push_back(ds.time[i]);
  }
  BasisRequest req;
  req.degree = degree;
  req.degree_x = degree_x;
  req.knots_t = knots_t;
  req.knots_x = knots_x;
  const TensorBasis basis = place_tensor_basis(failures, ds.modifier, req).basis;

  std::optional<PenaltyConfig> penalty;
  if (mu || mu_x) {
    const auto expand = [&](const std::optional<std::vector<double>>& v) {
      Eigen::VectorXd e = Eigen::VectorXd::Zero(ds.p());
      if (!v) return e;
      if (v->size() == 1) return Eigen::VectorXd::Constant(ds.p(), v->front()).eval();
      if (static_cast<int>(v->size()) != ds.p()) throw ValidationError("penalty needs one value or one per covariate");
      for (int l = 0; l < ds.p(); ++l) e[l] = (*v)[static_cast<std::size_t>(l)];
      return e;
    };
    penalty = PenaltyConfig{expand(mu), expand(mu_x)};
  }
  SolverConfig cfg;
  cfg.lambda0 = lambda0;
  cfg.epsilon = epsilon;
  cfg.max_iterations = max_iter;
  cfg.threads = threads;
  out.artifact.fit = fit(ds, build_risk_index(ds), basis, cause_code, penalty, cfg);
  out.artifact.z_names = ds.z_names;
  out.artifact.w_names = ds.w_names;
  out.artifact.stratum_labels = ds.stratum_labels;
  return out;
}

py::dict surface(const PyFit& f, const std::vector<double>& t_grid, const std::vector<double>& x_grid, int covariate,
                 double level, bool model_variance) {
  const FitResult& r = f.result();
  std::optional<VarianceEstimates> var;
  if (r.penalized()) var = variance_estimates(r);
  if (var && model_variance) var->sandwich = var->model;
  const auto pts = pointwise_ci(r, var ? &*var : nullptr, covariate, t_grid, x_grid, level);
  const auto rows = static_cast<Eigen::Index>(x_grid.size());
  const auto cols = static_cast<Eigen::Index>(t_grid.size());
  Eigen::MatrixXd est(rows, cols), se(rows, cols), lo(rows, cols), hi(rows, cols);
  std::size_t k = 0;
  for (Eigen::Index i = 0; i < rows; ++i) {
    for (Eigen::Index j = 0; j < cols; ++j, ++k) {
      est(i, j) = pts[k].estimate;
      se(i, j) = pts[k].se;
      lo(i, j) = pts[k].lo;
      hi(i, j) = pts[k].hi;
    }
  }
  py::dict d;
  d["estimate"] = est;
  d["se"] = se;
  d["lo"] = lo;
  d["hi"] = hi;
  return d;
}

py::dict wald(const PyFit& f, const std::string& kind, const std::string& construction, int covariate) {
  const FitResult& r = f.result();
  const VarianceConstruction vc = parse_construction(construction);
  std::optional<VarianceEstimates> var;
  if (vc != VarianceConstruction::Unpenalized) var = variance_estimates(r);
  const TestResult t = wald_test(r, var ? &*var : nullptr, parse_contrast_kind(kind), vc, covariate);
  py::dict d;
  d["kind"] = to_string(t.kind);
  d["construction"] = to_string(t.construction);
  d["statistic"] = t.statistic;
  d["df"] = t.df;
  d["p_value"] = t.p_value;
  d["eigenvalues"] = t.eigenvalues;
  return d;
}

py::dict residuals(const PyFit& f, bool strict) {
  const FitResult& r = f.result();
  const RiskIndex idx = build_risk_index(f.data);
  const BaselineHazard bh = breslow_baseline(r, f.data, idx);
  ResidualRequest req;
  req.strict = strict;
  const Residuals res = compute_residuals(std::span(&r.coeffs, 1), {}, r.basis, bh, f.data, r.cause, req);
  py::dict d;
  d["martingale"] = res.martingale;
  d["deviance"] = res.deviance;
  d["clipped"] = res.clipped;
  return d;
}

py::dict simulate(std::size_t n, std::uint64_t seed, std::uint64_t stream, double rho, double beta2,
                  const std::string& surface_kind, double surface_value, double baseline_rate) {
  ScenarioConfig cfg;
  cfg.n = n;
  cfg.rho = rho;
  cfg.beta2 = beta2;
  cfg.surface.kind = surface_kind;
  cfg.surface.value = surface_value;
  cfg.baseline.rate = baseline_rate;
  const GeneratedData g = generate_dataset(cfg, seed, stream);
  py::dict d;
  d["time"] = g.data.time;
  d["cause"] = g.data.cause;
  d["modifier"] = g.data.modifier;
  d["z"] = Eigen::VectorXd(g.data.z.col(0));
  d["w"] = Eigen::VectorXd(g.data.w.col(0));
  return d;
}

py::tuple cli(std::vector<std::string> args) {
  args.insert(args.begin(), "bvcox");
  std::ostringstream out;
  std::ostringstream err;
  const int code = run_cli(args, out, err);
  return py::make_tuple(code, out.str(), err.str());
}

}  // namespace

PYBIND11_MODULE(_core, m) {
  m.doc() = "Bivariate varying-coefficient Cox models for competing risks";

  py::register_exception<ValidationError>(m, "ValidationError", PyExc_ValueError);
  py::register_exception<ConvergenceError>(m, "ConvergenceError", PyExc_RuntimeError);
  py::register_exception<NumericalError>(m, "NumericalError", PyExc_ArithmeticError);

  py::class_<PyFit>(m, "Fit")
      .def_property_readonly("cause", [](const PyFit& f) { return f.result().cause; })
      .def_property_readonly("n", [](const PyFit& f) { return f.result().n; })
      .def_property_readonly("events", [](const PyFit& f) { return f.result().events; })
      .def_property_readonly("K", [](const PyFit& f) { return f.result().layout.K; })
      .def_property_readonly("Kx", [](const PyFit& f) { return f.result().layout.Kx; })
      .def_property_readonly("converged", [](const PyFit& f) { return f.result().converged; })
      .def_property_readonly("iterations", [](const PyFit& f) { return f.result().iterations; })
      .def_property_readonly("loglik", [](const PyFit& f) { return f.result().loglik; })
      .def_property_readonly("penalized_loglik", [](const PyFit& f) { return f.result().penalized_loglik; })
      .def_property_readonly("gamma", [](const PyFit& f) { return f.result().coeffs.gamma; })
      .def_property_readonly("theta", [](const PyFit& f) { return f.result().coeffs.theta; })
      .def_property_readonly("hessian", [](const PyFit& f) { return f.result().hessian; })
      .def("covariance", [](const PyFit& f) { return unpenalized_covariance(f.result()); },
           "Inverse negative Hessian of the unpenalized log-partial likelihood")
      .def("surface", &surface, py::arg("t_grid"), py::arg("x_grid"), py::arg("covariate") = 0,
           py::arg("level") = 0.95, py::arg("model_variance") = false,
           "Estimates and pointwise intervals; arrays are indexed [x, t]")
      .def("test", &wald, py::arg("kind") = "joint", py::arg("construction") = "unpenalized",
           py::arg("covariate") = 0)
      .def("residuals", &residuals, py::arg("strict") = false)
      .def("to_json", [](const PyFit& f) { return fit_record(f.artifact).dump(); });

  m.def("fit", &fit_model, py::arg("time"), py::arg("cause"), py::arg("z"), py::arg("w") = py::none(),
        py::arg("modifier") = py::none(), py::arg("stratum") = py::none(), py::arg("cause_code") = 1,
        py::arg("degree") = 3, py::arg("degree_x") = 3, py::arg("knots_t") = 3, py::arg("knots_x") = 3,
        py::arg("mu") = py::none(), py::arg("mu_x") = py::none(), py::arg("lambda0") = 1.0,
        py::arg("epsilon") = 1e-9, py::arg("max_iter") = 200, py::arg("threads") = 1,
        py::call_guard<py::gil_scoped_release>());
  m.def("simulate", &simulate, py::arg("n"), py::arg("seed"), py::arg("stream") = 0, py::arg("rho") = 0.6,
        py::arg("beta2") = 1.0, py::arg("surface") = "sine-decay", py::arg("surface_value") = 0.0,
        py::arg("baseline_rate") = 0.1);
  m.def("quadform_tail", [](const std::vector<double>& weights, double q) { return quadform_tail(weights, q); },
        py::arg("weights"), py::arg("q"), "P(sum_u w_u G_u^2 > q) for independent standard normals G_u");
  m.def("run_cli", &cli, py::arg("args"), "Runs the command line; returns (exit code, stdout, stderr)");
}
