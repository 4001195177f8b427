#include "bvcox/experiment.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <limits>
#include <mutex>
#include <numeric>

#include "bvcox/error.hpp"
#include "bvcox/likelihood.hpp"
#include "bvcox/parallel.hpp"

namespace bvcox {

std::string to_string(Metric metric) {
  switch (metric) {
    case Metric::IMSE: return "imse";
    case Metric::Bias: return "bias";
    case Metric::Variance: return "variance";
    case Metric::Coverage: return "coverage";
    case Metric::TypeI: return "type-i";
    case Metric::Power: return "power";
    case Metric::CvComparison: return "cv-comparison";
  }
  return "unknown";
}

Metric parse_metric(const std::string& text) {
  for (Metric m : {Metric::IMSE, Metric::Bias, Metric::Variance, Metric::Coverage, Metric::TypeI, Metric::Power,
                   Metric::CvComparison}) {
    if (text == to_string(m)) return m;
  }
  if (text == "type1" || text == "type-1" || text == "typei") return Metric::TypeI;
  if (text == "cv") return Metric::CvComparison;
  throw ValidationError("unknown metric '" + text +
                        "' (expected imse, bias, variance, coverage, type-i, power or cv-comparison)");
}

std::string to_string(Timescale scale) { return scale == Timescale::Event ? "event" : "calendar"; }

std::vector<double> linspace(double lo, double hi, int count) {
  if (count < 1) throw ValidationError("linspace needs at least one point");
  std::vector<double> out(static_cast<std::size_t>(count));
  if (count == 1) {
    out[0] = lo;
    return out;
  }
  const double step = (hi - lo) / (count - 1);
  for (int i = 0; i < count; ++i) out[static_cast<std::size_t>(i)] = lo + step * i;
  out.back() = hi;
  return out;
}

EvaluationGrid EvaluationGrid::standard(const ScenarioConfig& scenario, int points) {
  EvaluationGrid g;
  const std::vector<double> t_axis = linspace(0.0, scenario.horizon, points);
  const std::vector<double> x_axis = linspace(scenario.modifier_lo, scenario.modifier_hi, points);
  for (double x : {0.0, 2.0, 5.0, 10.0}) {
    g.curves.push_back({Timescale::Event, std::clamp(x, scenario.modifier_lo, scenario.modifier_hi), t_axis});
  }
  for (double t : {1.0, 5.0, 10.0, 20.0}) {
    g.curves.push_back({Timescale::Calendar, std::min(t, scenario.horizon), x_axis});
  }
  g.joint_t = linspace(0.0, scenario.horizon, 101);
  g.joint_x = linspace(scenario.modifier_lo, scenario.modifier_hi, 101);
  return g;
}

std::size_t EvaluationGrid::point_count() const {
  std::size_t total = 0;
  for (const auto& c : curves) total += c.axis.size();
  return total;
}

void ExperimentConfig::validate() const {
  scenario.validate();
  if (replicates == 0) throw ValidationError("experiment needs at least one replicate");
  if (degree < 0 || degree_x < 0 || knots_t < 0 || knots_x < 0) {
    throw ValidationError("spline degrees and knot counts must be non-negative");
  }
  if (knot_rule != "even" && knot_rule != "quantile") {
    throw ValidationError("knot rule must be 'even' or 'quantile'");
  }
  if (settings.empty()) throw ValidationError("experiment needs at least one fit setting");
  for (const auto& s : settings) {
    if (s.penalty) s.penalty->validate(1);
  }
  if (metrics.empty()) throw ValidationError("experiment needs at least one metric");
  if (wants(Metric::TypeI) && wants(Metric::Power)) {
    throw ValidationError("type-i and power need different true surfaces; run them as separate experiments");
  }
  if (wants(Metric::TypeI) && scenario.surface.kind != "constant") {
    throw ValidationError("type-i error needs a constant true surface");
  }
  if (wants(Metric::Power) && scenario.surface.kind == "constant") {
    throw ValidationError("power needs a varying true surface");
  }
  if (!(level > 0.0 && level < 1.0)) throw ValidationError("confidence level must lie in (0, 1)");
  if (!(alpha > 0.0 && alpha < 1.0)) throw ValidationError("test level alpha must lie in (0, 1)");
  if (wants(Metric::CvComparison)) {
    if (cv_folds < 2) throw ValidationError("cross-validation needs at least 2 folds");
    if (cv_methods.empty()) throw ValidationError("cross-validation comparison needs at least one method");
    for (const auto& g : cv_grid) g.validate(1);
  }
  if (threads < 1) throw ValidationError("threads must be at least 1");
  solver.validate();
}

bool ExperimentConfig::wants(Metric metric) const {
  return std::find(metrics.begin(), metrics.end(), metric) != metrics.end();
}

EvaluationGrid ExperimentConfig::evaluation_grid() const {
  return grid ? *grid : EvaluationGrid::standard(scenario);
}

TensorBasis experiment_basis(const ExperimentConfig& cfg, const Dataset& ds) {
  TensorBasis basis;
  if (cfg.knot_rule == "even") {
    auto interior = [](double lo, double hi, int count) {
      std::vector<double> all = linspace(lo, hi, count + 2);
      return std::vector<double>(all.begin() + 1, all.end() - 1);
    };
    basis.time = {cfg.degree, interior(0.0, cfg.scenario.horizon, cfg.knots_t), 0.0, cfg.scenario.horizon};
    basis.modifier = {cfg.degree_x, interior(cfg.scenario.modifier_lo, cfg.scenario.modifier_hi, cfg.knots_x),
                      cfg.scenario.modifier_lo, cfg.scenario.modifier_hi};
  } else {
    std::vector<double> event_times;
    for (std::size_t i = 0; i < ds.n(); ++i) {
      if (ds.cause[i] == 1) event_times.push_back(ds.time[i]);
    }
    BasisRequest req;
    req.degree = cfg.degree;
    req.degree_x = cfg.degree_x;
    req.knots_t = cfg.knots_t;
    req.knots_x = cfg.knots_x;
    basis = place_tensor_basis(event_times, ds.modifier, req).basis;
  }
  basis.time.validate();
  basis.modifier.validate();
  return basis;
}

namespace {

double surface_at(const TensorBasis& basis, const FitResult& fit, double t, double x) {
  return eval_surface(basis, fit.coeffs.block(fit.layout, 0), t, x);
}

std::vector<double> curve_estimates(const EvaluationGrid& grid, const TensorBasis& basis, const FitResult& fit) {
  std::vector<double> out;
  out.reserve(grid.point_count());
  for (const auto& c : grid.curves) {
    for (double a : c.axis) {
      out.push_back(c.scale == Timescale::Event ? surface_at(basis, fit, a, c.fixed) : surface_at(basis, fit, c.fixed, a));
    }
  }
  return out;
}

void curve_intervals(const EvaluationGrid& grid, const FitResult& fit, const VarianceEstimates* var, double level,
                     SettingOutcome& out) {
  out.lo.clear();
  out.hi.clear();
  for (const auto& c : grid.curves) {
    const std::vector<double> fixed{c.fixed};
    const auto pts = c.scale == Timescale::Event ? pointwise_ci(fit, var, 0, c.axis, fixed, level)
                                                 : pointwise_ci(fit, var, 0, fixed, c.axis, level);
    for (const auto& pt : pts) {
      out.lo.push_back(pt.lo);
      out.hi.push_back(pt.hi);
    }
  }
}

double joint_imse(const EvaluationGrid& grid, const TensorBasis& basis, const FitResult& fit,
                  const TrueSurface& truth) {
  double total = 0.0;
  for (double t : grid.joint_t) {
    for (double x : grid.joint_x) {
      const double e = surface_at(basis, fit, t, x) - truth(t, x);
      total += e * e;
    }
  }
  return total / static_cast<double>(grid.joint_t.size() * grid.joint_x.size());
}

std::uint64_t fold_seed(std::uint64_t seed, std::size_t replicate) {
  return seed + 0x9E3779B97F4A7C15ULL * (static_cast<std::uint64_t>(replicate) + 1);
}

void run_settings(const ExperimentConfig& cfg, const EvaluationGrid& grid, const Dataset& ds, ReplicateOutcome& out) {
  const TensorBasis basis = experiment_basis(cfg, ds);
  const RiskIndex index = build_risk_index(ds);
  const LikelihoodEvaluator eval(ds, index, basis, 1);
  const bool need_ci = cfg.wants(Metric::Coverage);
  const bool need_tests = cfg.wants(Metric::TypeI) || cfg.wants(Metric::Power);
  for (const FitSetting& setting : cfg.settings) {
    SettingOutcome so;
    try {
      const FitResult r = fit(eval, basis, setting.penalty, cfg.solver);
      so.iterations = static_cast<int>(r.iterations);
      if (!r.converged) throw ConvergenceError("iteration cap reached");
      so.estimate = curve_estimates(grid, basis, r);
      std::optional<VarianceEstimates> var;
      if (r.penalized() && (need_ci || need_tests)) var = variance_estimates(r);
      if (need_ci) curve_intervals(grid, r, var ? &*var : nullptr, cfg.level, so);
      if (need_tests) {
        std::vector<VarianceConstruction> constructions{VarianceConstruction::Unpenalized};
        if (r.penalized()) constructions = cfg.constructions;
        for (ContrastKind kind : cfg.kinds) {
          for (VarianceConstruction c : constructions) {
            const TestResult tr = wald_test(r, var ? &*var : nullptr, kind, c, 0);
            so.tests.push_back({kind, c, tr.statistic, tr.p_value});
          }
        }
      }
      so.ok = true;
    } catch (const std::exception& e) {
      so.ok = false;
      so.error = e.what();
    }
    out.settings.push_back(std::move(so));
  }
}

void run_cv_comparison(const ExperimentConfig& cfg, const EvaluationGrid& grid, const Dataset& train,
                       std::size_t replicate, ReplicateOutcome& out) {
  const Dataset test = generate_dataset(cfg.scenario, cfg.seed, 2 * replicate + 1).data;
  const TensorBasis basis = experiment_basis(cfg, train);
  const RiskIndex test_index = build_risk_index(test);
  const LikelihoodEvaluator test_eval(test, test_index, basis, 1);

  const FoldAssignment folds = partition_folds(train, cfg.cv_folds, fold_seed(cfg.seed, replicate));
  CvSettings settings;
  settings.solver = cfg.solver;
  settings.solver.threads = 1;
  const CvProblem problem(train, folds, basis, 1, settings);
  const std::vector<PenaltyConfig> grid_points = cfg.cv_grid.empty() ? default_grid(train.n(), 1) : cfg.cv_grid;
  std::vector<GridFits> fits;
  const std::vector<CvReport> reports = tune_all(problem, grid_points, cfg.cv_methods, folds, &fits);
  for (std::size_t m = 0; m < reports.size(); ++m) {
    CvOutcome co;
    co.method = reports[m].method;
    try {
      const FoldFit& chosen = fits[reports[m].selected].full;
      co.selected = fits[reports[m].selected].penalty;
      if (!chosen.ok) throw ConvergenceError("full-data fit at the selected point failed: " + chosen.error);
      co.train_m2ll = -2.0 * chosen.fit->loglik;
      co.test_m2ll = -2.0 * test_eval.value(chosen.fit->coeffs);
      co.imse = joint_imse(grid, basis, *chosen.fit, cfg.scenario.surface);
      co.ok = true;
    } catch (const std::exception& e) {
      co.error = e.what();
    }
    out.cv.push_back(std::move(co));
  }
}

}  // namespace

ReplicateOutcome run_replicate(const ExperimentConfig& cfg, const EvaluationGrid& grid, std::size_t replicate) {
  ReplicateOutcome out;
  out.replicate = replicate;
  try {
    const GeneratedData gen = generate_dataset(cfg.scenario, cfg.seed, 2 * replicate);
    out.events = gen.data.event_count(1);
    const bool need_settings = cfg.wants(Metric::IMSE) || cfg.wants(Metric::Bias) || cfg.wants(Metric::Variance) ||
                               cfg.wants(Metric::Coverage) || cfg.wants(Metric::TypeI) || cfg.wants(Metric::Power);
    if (need_settings) run_settings(cfg, grid, gen.data, out);
    if (cfg.wants(Metric::CvComparison)) run_cv_comparison(cfg, grid, gen.data, replicate, out);
    out.ok = true;
  } catch (const std::exception& e) {
    out.ok = false;
    out.error = e.what();
  }
  return out;
}

EstimationSummary summarize_estimation(const EvaluationGrid& grid, const TrueSurface& truth,
                                       const std::vector<std::vector<double>>& estimates,
                                       const std::vector<std::vector<double>>& lo,
                                       const std::vector<std::vector<double>>& hi) {
  const std::size_t points = grid.point_count();
  const std::size_t R = estimates.size();
  const bool with_ci = !lo.empty();
  if (with_ci && (lo.size() != R || hi.size() != R)) throw ValidationError("interval rows do not match estimates");
  for (std::size_t r = 0; r < R; ++r) {
    if (estimates[r].size() != points || (with_ci && (lo[r].size() != points || hi[r].size() != points))) {
      throw ValidationError("replicate estimates do not match the evaluation grid");
    }
  }
  EstimationSummary s;
  s.used = R;
  const double nan = std::numeric_limits<double>::quiet_NaN();
  std::vector<double> ise_event(R, 0.0), ise_calendar(R, 0.0);
  std::size_t n_event = 0, n_calendar = 0;
  std::size_t offset = 0;
  std::vector<double> column(R);
  for (const CurveSpec& spec : grid.curves) {
    CurveSummary c;
    c.spec = spec;
    const bool event = spec.scale == Timescale::Event;
    for (std::size_t j = 0; j < spec.axis.size(); ++j, ++offset) {
      const double tv = event ? truth(spec.axis[j], spec.fixed) : truth(spec.fixed, spec.axis[j]);
      c.truth.push_back(tv);
      if (R == 0) {
        for (auto* v : {&c.mean, &c.band_lo, &c.band_hi, &c.bias, &c.variance, &c.mse}) v->push_back(nan);
        continue;
      }
      std::size_t covered = 0;
      for (std::size_t r = 0; r < R; ++r) {
        column[r] = estimates[r][offset];
        const double e = column[r] - tv;
        (event ? ise_event : ise_calendar)[r] += e * e;
        if (with_ci) covered += (lo[r][offset] <= tv && tv <= hi[r][offset]);
      }
      const double mean = std::accumulate(column.begin(), column.end(), 0.0) / static_cast<double>(R);
      double var = 0.0;
      for (double v : column) var += (v - mean) * (v - mean);
      var /= static_cast<double>(R);
      std::sort(column.begin(), column.end());
      c.mean.push_back(mean);
      c.band_lo.push_back(quantile_type7(column, 0.025));
      c.band_hi.push_back(quantile_type7(column, 0.975));
      c.bias.push_back(mean - tv);
      c.variance.push_back(var);
      c.mse.push_back((mean - tv) * (mean - tv) + var);
      if (with_ci) c.coverage.push_back(static_cast<double>(covered) / static_cast<double>(R));
    }
    const double m = static_cast<double>(spec.axis.size());
    c.imse = std::accumulate(c.mse.begin(), c.mse.end(), 0.0) / m;
    c.mean_variance = std::accumulate(c.variance.begin(), c.variance.end(), 0.0) / m;
    c.mean_sq_bias = 0.0;
    for (double b : c.bias) c.mean_sq_bias += b * b / m;
    (event ? n_event : n_calendar) += spec.axis.size();
    s.curves.push_back(std::move(c));
  }
  auto mean_se = [&](std::vector<double>& ise, std::size_t count, double& mean, double& se) {
    if (R == 0 || count == 0) {
      mean = se = nan;
      return;
    }
    for (double& v : ise) v /= static_cast<double>(count);
    mean = std::accumulate(ise.begin(), ise.end(), 0.0) / static_cast<double>(R);
    double ss = 0.0;
    for (double v : ise) ss += (v - mean) * (v - mean);
    se = R > 1 ? std::sqrt(ss / static_cast<double>(R - 1) / static_cast<double>(R)) : 0.0;
  };
  mean_se(ise_event, n_event, s.imse_event, s.imse_event_se);
  mean_se(ise_calendar, n_calendar, s.imse_calendar, s.imse_calendar_se);
  return s;
}

MetricsReport summarize(const ExperimentConfig& cfg, const EvaluationGrid& grid, std::vector<ReplicateOutcome> outcomes) {
  MetricsReport rep;
  rep.config = cfg;
  rep.grid = grid;
  for (const auto& o : outcomes) rep.failed_replicates += !o.ok;

  for (std::size_t si = 0; si < cfg.settings.size(); ++si) {
    std::vector<std::vector<double>> est, lo, hi;
    std::size_t failed = 0;
    for (const auto& o : outcomes) {
      if (!o.ok || si >= o.settings.size() || !o.settings[si].ok) {
        ++failed;
        continue;
      }
      const SettingOutcome& so = o.settings[si];
      est.push_back(so.estimate);
      if (!so.lo.empty()) {
        lo.push_back(so.lo);
        hi.push_back(so.hi);
      }
    }
    if (lo.size() != est.size()) {
      lo.clear();
      hi.clear();
    }
    const bool need_estimation = cfg.wants(Metric::IMSE) || cfg.wants(Metric::Bias) ||
                                 cfg.wants(Metric::Variance) || cfg.wants(Metric::Coverage);
    if (need_estimation) {
      EstimationSummary es = summarize_estimation(grid, cfg.scenario.surface, est, lo, hi);
      es.label = cfg.settings[si].label;
      es.failed = failed;
      rep.estimation.push_back(std::move(es));
    }

    // Rejection rates keyed by (kind, construction) in first-seen order.
    std::vector<TestSummary> tests;
    for (const auto& o : outcomes) {
      if (!o.ok || si >= o.settings.size() || !o.settings[si].ok) continue;
      for (const TestOutcome& t : o.settings[si].tests) {
        auto it = std::find_if(tests.begin(), tests.end(), [&](const TestSummary& ts) {
          return ts.kind == t.kind && ts.construction == t.construction;
        });
        if (it == tests.end()) {
          TestSummary ts;
          ts.label = cfg.settings[si].label;
          ts.kind = t.kind;
          ts.construction = t.construction;
          tests.push_back(ts);
          it = tests.end() - 1;
        }
        ++it->used;
        it->rejections += t.p_value < cfg.alpha;
      }
    }
    for (auto& ts : tests) {
      ts.rate = static_cast<double>(ts.rejections) / static_cast<double>(ts.used);
      ts.se = std::sqrt(ts.rate * (1.0 - ts.rate) / static_cast<double>(ts.used));
      rep.tests.push_back(ts);
    }
  }

  if (cfg.wants(Metric::CvComparison)) {
    auto mean_sd = [](const std::vector<double>& v, double& mean, double& sd) {
      const double n = static_cast<double>(v.size());
      mean = v.empty() ? std::numeric_limits<double>::quiet_NaN() : std::accumulate(v.begin(), v.end(), 0.0) / n;
      double ss = 0.0;
      for (double x : v) ss += (x - mean) * (x - mean);
      sd = v.size() > 1 ? std::sqrt(ss / (n - 1.0)) : 0.0;
    };
    for (std::size_t m = 0; m < cfg.cv_methods.size(); ++m) {
      CvSummary cs;
      cs.method = cfg.cv_methods[m];
      std::vector<double> train, test, imse;
      for (const auto& o : outcomes) {
        if (!o.ok || m >= o.cv.size() || !o.cv[m].ok) {
          ++cs.failed;
          continue;
        }
        train.push_back(o.cv[m].train_m2ll);
        test.push_back(o.cv[m].test_m2ll);
        imse.push_back(o.cv[m].imse);
      }
      cs.used = train.size();
      mean_sd(train, cs.train_m2ll_mean, cs.train_m2ll_sd);
      mean_sd(test, cs.test_m2ll_mean, cs.test_m2ll_sd);
      mean_sd(imse, cs.imse_mean, cs.imse_sd);
      rep.cv.push_back(cs);
    }
  }
  rep.outcomes = std::move(outcomes);
  return rep;
}

MetricsReport run_experiment(const ExperimentConfig& cfg, const ProgressFn& progress) {
  cfg.validate();
  const EvaluationGrid grid = cfg.evaluation_grid();
  std::vector<ReplicateOutcome> outcomes(cfg.replicates);
  std::atomic<std::size_t> done{0};
  std::mutex progress_mutex;
  ExperimentConfig inner = cfg;
  inner.solver.threads = 1;
  parallel_for(cfg.replicates, cfg.threads, [&](std::size_t r) {
    outcomes[r] = run_replicate(inner, grid, r);
    const std::size_t d = ++done;
    if (progress) {
      std::lock_guard<std::mutex> lock(progress_mutex);
      progress(d, cfg.replicates);
    }
  });
  return summarize(cfg, grid, std::move(outcomes));
}

}  // namespace bvcox
