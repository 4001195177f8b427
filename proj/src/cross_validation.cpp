#include "bvcox/cross_validation.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <mutex>
#include <numeric>
#include <random>
#include <sstream>

#include <boost/random/uniform_int_distribution.hpp>

#include "bvcox/error.hpp"
#include "bvcox/parallel.hpp"

namespace bvcox {

std::string to_string(CvMethod method) {
  switch (method) {
    case CvMethod::FC: return "fc";
    case CvMethod::CFC: return "cfc";
    case CvMethod::UC: return "uc";
    case CvMethod::DR: return "dr";
    case CvMethod::GCV: return "gcv";
  }
  return "unknown";
}

CvMethod parse_cv_method(const std::string& text) {
  std::string t = text;
  std::transform(t.begin(), t.end(), t.begin(), [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
  if (t == "fc") return CvMethod::FC;
  if (t == "cfc") return CvMethod::CFC;
  if (t == "uc") return CvMethod::UC;
  if (t == "dr") return CvMethod::DR;
  if (t == "gcv") return CvMethod::GCV;
  throw ValidationError("unknown cross-validation method '" + text + "' (expected fc, cfc, uc, dr or gcv)");
}

std::vector<std::size_t> FoldAssignment::members(int f) const {
  std::vector<std::size_t> out;
  for (std::size_t i = 0; i < fold.size(); ++i) {
    if (fold[i] == f) out.push_back(i);
  }
  return out;
}

std::vector<std::size_t> FoldAssignment::complement(int f) const {
  std::vector<std::size_t> out;
  for (std::size_t i = 0; i < fold.size(); ++i) {
    if (fold[i] != f) out.push_back(i);
  }
  return out;
}

std::vector<std::size_t> FoldAssignment::sizes() const {
  std::vector<std::size_t> out(static_cast<std::size_t>(folds), 0);
  for (int f : fold) ++out[static_cast<std::size_t>(f)];
  return out;
}

FoldAssignment partition_folds(const Dataset& ds, int folds, std::uint64_t seed) {
  if (folds < 2) throw ValidationError("cross-validation needs at least 2 folds");
  if (static_cast<std::size_t>(folds) > ds.n()) throw ValidationError("more folds than subjects");
  std::seed_seq seq{static_cast<std::uint32_t>(seed & 0xffffffffu), static_cast<std::uint32_t>(seed >> 32),
                    0x666f6c64u};
  std::mt19937_64 eng(seq);

  std::vector<std::size_t> order;
  order.reserve(ds.n());
  for (int c = 0; c <= ds.num_causes; ++c) {
    std::vector<std::size_t> group;
    for (std::size_t i = 0; i < ds.n(); ++i) {
      if (ds.cause[i] == c) group.push_back(i);
    }
    // Fisher-Yates with a portable integer distribution
    for (std::size_t i = group.size(); i > 1; --i) {
      boost::random::uniform_int_distribution<std::size_t> pick(0, i - 1);
      std::swap(group[i - 1], group[pick(eng)]);
    }
    order.insert(order.end(), group.begin(), group.end());
  }
  FoldAssignment out;
  out.folds = folds;
  out.seed = seed;
  out.fold.assign(ds.n(), 0);
  for (std::size_t k = 0; k < order.size(); ++k) out.fold[order[k]] = static_cast<int>(k % static_cast<std::size_t>(folds));

  for (int c = 1; c <= ds.num_causes; ++c) {
    const std::size_t total = ds.event_count(c);
    if (total == 0) continue;
    for (int f = 0; f < folds; ++f) {
      std::size_t inside = 0;
      for (std::size_t i = 0; i < ds.n(); ++i) inside += (out.fold[i] == f && ds.cause[i] == c);
      if (inside == total) {
        std::ostringstream msg;
        msg << "fold " << f + 1 << " holds every event of cause " << c << "; use fewer folds";
        throw ValidationError(msg.str());
      }
    }
  }
  return out;
}

std::vector<PenaltyConfig> default_grid(std::size_t n, int p) {
  const double root = std::sqrt(static_cast<double>(n));
  std::vector<PenaltyConfig> grid;
  for (int a = -5; a <= -1; ++a) {
    for (int b = -5; b <= -1; ++b) {
      grid.push_back(PenaltyConfig::uniform(p, root * std::pow(10.0, a), root * std::pow(10.0, b)));
    }
  }
  return grid;
}

namespace {

double total_penalty(const PenaltyConfig& cfg) { return cfg.mu.sum() + cfg.mu_x.sum(); }

struct Part {
  Dataset data;
  RiskIndex index;
  std::unique_ptr<LikelihoodEvaluator> eval;

  Part(Dataset d, const TensorBasis& basis, int cause)
      : data(std::move(d)), index(build_risk_index(data)) {
    eval = std::make_unique<LikelihoodEvaluator>(data, index, basis, cause);
  }
};

}  // namespace

struct CvProblem::State {
  Dataset ds;
  FoldAssignment folds;
  TensorBasis basis;
  int cause = 1;
  CvSettings settings;
  std::unique_ptr<Part> full;
  std::vector<std::unique_ptr<Part>> members;     // fold f data
  std::vector<std::unique_ptr<Part>> complements;  // data without fold f

  std::once_flag baseline_once;
  std::optional<BaselineHazard> baseline;
  std::string baseline_error;

  const BaselineHazard* full_baseline() {
    std::call_once(baseline_once, [&] {
      try {
        const FitResult unpen = fit(*full->eval, basis, std::nullopt, settings.solver);
        if (!unpen.converged) throw ConvergenceError("unpenalized full-data fit did not converge");
        baseline = breslow_baseline(*full->eval, ds, unpen.coeffs);
      } catch (const std::exception& e) {
        baseline_error = e.what();
      }
    });
    return baseline ? &*baseline : nullptr;
  }
};

CvProblem::CvProblem(const Dataset& ds, const FoldAssignment& folds, const TensorBasis& basis, int cause,
                     CvSettings settings)
    : state_(std::make_unique<State>()) {
  if (folds.fold.size() != ds.n()) throw ValidationError("fold assignment does not match the dataset");
  if (folds.folds < 2) throw ValidationError("cross-validation needs at least 2 folds");
  settings.solver.validate();
  State& s = *state_;
  s.ds = ds;
  s.folds = folds;
  s.basis = basis;
  s.cause = cause;
  s.settings = settings;
  s.full = std::make_unique<Part>(ds, basis, cause);
  for (int f = 0; f < folds.folds; ++f) {
    const auto in = folds.members(f);
    const auto out = folds.complement(f);
    s.members.push_back(std::make_unique<Part>(ds.subset(in), basis, cause));
    s.complements.push_back(std::make_unique<Part>(ds.subset(out), basis, cause));
  }
}

CvProblem::~CvProblem() = default;

const Dataset& CvProblem::data() const noexcept { return state_->ds; }
int CvProblem::cause() const noexcept { return state_->cause; }
const TensorBasis& CvProblem::basis() const noexcept { return state_->basis; }

std::vector<GridFits> CvProblem::compute_fits(std::span<const PenaltyConfig> grid) const {
  if (grid.empty()) throw ValidationError("tuning grid is empty");
  const State& s = *state_;
  const int p = s.ds.p();
  for (const auto& g : grid) g.validate(p);

  std::vector<std::size_t> order(grid.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return total_penalty(grid[a]) < total_penalty(grid[b]); });

  std::vector<GridFits> out(grid.size());
  for (std::size_t i = 0; i < grid.size(); ++i) {
    out[i].penalty = grid[i];
    out[i].folds.resize(static_cast<std::size_t>(s.folds.folds));
  }
  // One warm-start chain per fold complement, plus one for the full data.
  const std::size_t chains = static_cast<std::size_t>(s.folds.folds) + 1;
  SolverConfig solver = s.settings.solver;
  solver.threads = 1;
  parallel_for(chains, s.settings.solver.threads, [&](std::size_t chain) {
    const bool is_full = chain == chains - 1;
    const LikelihoodEvaluator& eval = is_full ? *s.full->eval : *s.complements[chain]->eval;
    std::optional<CoefficientSet> start;
    for (std::size_t idx : order) {
      FoldFit& slot = is_full ? out[idx].full : out[idx].folds[chain];
      slot.fold = is_full ? -1 : static_cast<int>(chain);
      try {
        FitResult r = fit(eval, s.basis, grid[idx], solver, start && s.settings.warm_start ? &*start : nullptr);
        slot.ok = r.converged;
        if (!r.converged) slot.error = "iteration cap reached";
        if (r.converged) start = r.coeffs;
        slot.fit = std::move(r);
      } catch (const std::exception& e) {
        slot.ok = false;
        slot.error = e.what();
      }
    }
  });
  return out;
}

CvProblem::Evaluation CvProblem::cve(CvMethod method, const GridFits& fits) const {
  State& s = *state_;
  Evaluation ev;
  if (method == CvMethod::GCV) {
    if (!fits.full.ok) {
      ev.note = "full-data fit failed: " + fits.full.error;
      return ev;
    }
    const FitResult& r = *fits.full.fit;
    const Eigen::LDLT<Eigen::MatrixXd> ldlt(-r.penalized_hessian);
    if (ldlt.info() != Eigen::Success) {
      ev.note = "penalized Hessian is singular";
      return ev;
    }
    const double edf = ldlt.solve(-r.hessian).trace();
    const double n = static_cast<double>(s.ds.n());
    const double shrink = 1.0 - edf / n;
    ev.cve = -r.loglik / (n * shrink * shrink);
    ev.valid = std::isfinite(ev.cve);
    if (!ev.valid) ev.note = "non-finite GCV";
    return ev;
  }

  std::vector<CoefficientSet> sets;
  for (const FoldFit& ff : fits.folds) {
    if (!ff.ok) {
      ev.note = "fold " + std::to_string(ff.fold + 1) + " fit failed: " + ff.error;
      return ev;
    }
    sets.push_back(ff.fit->coeffs);
  }
  try {
    switch (method) {
      case CvMethod::FC: {
        double total = 0.0;
        for (std::size_t f = 0; f < sets.size(); ++f) total += s.members[f]->eval->value(sets[f]);
        ev.cve = -2.0 * total;
        break;
      }
      case CvMethod::CFC: {
        double total = 0.0;
        for (std::size_t f = 0; f < sets.size(); ++f) {
          total += s.full->eval->value(sets[f]) - fits.folds[f].fit->loglik;
        }
        ev.cve = -2.0 * total;
        break;
      }
      case CvMethod::UC: {
        ev.cve = -2.0 * s.full->eval->value_mixed(sets, s.folds.fold);
        break;
      }
      case CvMethod::DR: {
        double total = 0.0;
        if (s.settings.fold_specific_baseline) {
          for (std::size_t f = 0; f < sets.size(); ++f) {
            const BaselineHazard bl = breslow_baseline(*s.complements[f]->eval, s.complements[f]->data, sets[f]);
            ResidualRequest req;
            req.rows = s.folds.members(static_cast<int>(f));
            const CoefficientSet one[] = {sets[f]};
            const Residuals res = compute_residuals(one, {}, s.basis, bl, s.ds, s.cause, req);
            total += res.deviance.squaredNorm();
            ev.clipped += res.clipped;
          }
        } else {
          const BaselineHazard* bl = s.full_baseline();
          if (!bl) {
            ev.note = "unpenalized baseline unavailable: " + s.baseline_error;
            return ev;
          }
          const Residuals res = compute_residuals(sets, s.folds.fold, s.basis, *bl, s.ds, s.cause);
          total = res.deviance.squaredNorm();
          ev.clipped = res.clipped;
        }
        ev.cve = total;
        break;
      }
      case CvMethod::GCV: break;
    }
  } catch (const std::exception& e) {
    ev.note = e.what();
    return ev;
  }
  ev.valid = std::isfinite(ev.cve);
  if (!ev.valid) ev.note = "non-finite CVE";
  return ev;
}

std::vector<FoldCoverage> CvProblem::coverage() const {
  const State& s = *state_;
  std::vector<FoldCoverage> out;
  for (int f = 0; f < s.folds.folds; ++f) {
    FoldCoverage c;
    c.fold = f;
    for (std::size_t i = 0; i < s.ds.n(); ++i) {
      if (s.folds.fold[i] != f) continue;
      ++c.size;
      if (s.ds.cause[i] == s.cause) {
        ++c.events;
        c.last_event_time = std::max(c.last_event_time, s.ds.time[i]);
      }
    }
    out.push_back(c);
  }
  return out;
}

std::size_t select_point(std::span<const CvPoint> points) {
  double best = std::numeric_limits<double>::infinity();
  for (const CvPoint& pt : points) {
    if (pt.valid) best = std::min(best, pt.cve);
  }
  if (!std::isfinite(best)) throw ConvergenceError("no valid grid point: every candidate failed");
  const double slack = 1e-10 * std::max(std::abs(best), std::numeric_limits<double>::min());
  std::size_t chosen = points.size();
  for (std::size_t i = 0; i < points.size(); ++i) {
    if (!points[i].valid || points[i].cve > best + slack) continue;
    if (chosen == points.size() || total_penalty(points[i].penalty) > total_penalty(points[chosen].penalty)) {
      chosen = i;
    }
  }
  return chosen;
}

CvReport make_report(const CvProblem& problem, CvMethod method, std::span<const GridFits> fits,
                     const FoldAssignment& folds) {
  CvReport rep;
  rep.method = method;
  rep.cause = problem.cause();
  rep.folds = folds.folds;
  rep.seed = folds.seed;
  for (const GridFits& g : fits) {
    const CvProblem::Evaluation ev = problem.cve(method, g);
    rep.points.push_back({g.penalty, ev.cve, ev.valid, ev.note, ev.clipped});
  }
  rep.selected = select_point(rep.points);
  rep.coverage = problem.coverage();
  return rep;
}

CvReport tune(const CvProblem& problem, std::span<const PenaltyConfig> grid, CvMethod method,
              const FoldAssignment& folds) {
  const std::vector<GridFits> fits = problem.compute_fits(grid);
  return make_report(problem, method, fits, folds);
}

std::vector<CvReport> tune_all(const CvProblem& problem, std::span<const PenaltyConfig> grid,
                               std::span<const CvMethod> methods, const FoldAssignment& folds,
                               std::vector<GridFits>* fits_out) {
  std::vector<GridFits> fits = problem.compute_fits(grid);
  std::vector<CvReport> out;
  for (CvMethod m : methods) out.push_back(make_report(problem, m, fits, folds));
  if (fits_out) *fits_out = std::move(fits);
  return out;
}

}  // namespace bvcox
