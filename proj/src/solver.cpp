#include "bvcox/solver.hpp"

#include <cmath>
#include <limits>
#include <sstream>
#include <tuple>

#include "bvcox/error.hpp"

namespace bvcox {

void SolverConfig::validate() const {
  if (!(lambda0 > 0.0) || !std::isfinite(lambda0)) throw ValidationError("lambda0 must be positive");
  if (!(delta >= 1.0) || !std::isfinite(delta)) throw ValidationError("delta must be at least 1");
  if (!(phi > 0.0 && phi < 0.5)) throw ValidationError("phi must lie in (0, 0.5)");
  if (!(psi > 0.5 && psi < 1.0)) throw ValidationError("psi must lie in (0.5, 1)");
  if (!(epsilon > 0.0)) throw ValidationError("epsilon must be positive");
  if (max_iterations < 1) throw ValidationError("max_iterations must be positive");
  if (max_line_search_steps < 1) throw ValidationError("max_line_search_steps must be positive");
  if (threads < 1) throw ValidationError("threads must be positive");
}

Eigen::MatrixXd FitResult::q_matrix() const {
  if (!penalized()) return Eigen::MatrixXd::Zero(coeffs.dim(), coeffs.dim());
  return penalty_hessian(penalty_matrix, q);
}

namespace {

// Newton increments below this multiple of |objective| are under the
// rounding noise of the log-partial likelihood.
constexpr double kRoundingIncrement = 1e-13;

struct Objective {
  const LikelihoodEvaluator& eval;
  const Eigen::MatrixXd* P;  // null when unpenalized
  int n_gamma;

  double value(const Eigen::VectorXd& eta) const {
    const double v = eval.value(CoefficientSet::from_eta(eta, n_gamma));
    return P ? v - penalty_value(*P, eta) : v;
  }
};

std::string trace_summary(const std::vector<IterationRecord>& trace) {
  std::ostringstream out;
  out << "after " << trace.size() << " iterations";
  if (!trace.empty()) {
    out << " (last objective " << trace.back().objective << ", increment " << trace.back().increment_sq
        << ", lambda " << trace.back().lambda << ")";
  }
  return out.str();
}

}  // namespace

FitResult fit(const LikelihoodEvaluator& eval, const TensorBasis& basis, const std::optional<PenaltyConfig>& penalty,
              const SolverConfig& cfg, const CoefficientSet* start) {
  cfg.validate();
  if (eval.event_count() == 0) throw ValidationError("no events of the requested cause");
  const TensorLayout layout = eval.layout();
  const int n_gamma = layout.size();
  const int dim = eval.dim();

  FitResult res;
  res.cause = eval.cause();
  res.basis = basis;
  res.layout = layout;
  res.q = eval.q();
  res.n = eval.n();
  res.events = eval.event_count();
  res.penalty = penalty;
  if (penalty) res.penalty_matrix = build_penalty_matrix(*penalty, layout);
  const Eigen::MatrixXd* P = penalty ? &res.penalty_matrix : nullptr;
  const Objective objective{eval, P, n_gamma};

  Eigen::VectorXd eta = Eigen::VectorXd::Zero(dim);
  if (start) {
    if (start->gamma.size() != n_gamma || start->theta.size() != eval.q()) {
      throw ValidationError("warm start has the wrong dimensions");
    }
    eta = start->eta();
  }
  const double n = static_cast<double>(eval.n());

  auto evaluate = [&](const Eigen::VectorXd& at) {
    LikelihoodDerivatives raw = eval.derivatives(CoefficientSet::from_eta(at, n_gamma));
    LikelihoodDerivatives pen = P ? penalized_derivatives(raw, *P, at) : raw;
    return std::pair{std::move(raw), std::move(pen)};
  };

  auto [raw, pen] = evaluate(eta);
  double lambda = cfg.lambda0;
  for (int s = 0;; ++s) {
    Eigen::MatrixXd A = -pen.hessian;
    A.diagonal().array() += n / lambda;
    const Eigen::LLT<Eigen::MatrixXd> llt(A);
    if (llt.info() != Eigen::Success) {
      throw NumericalError("modified Hessian is not positive definite " + trace_summary(res.trace));
    }
    const Eigen::VectorXd step = llt.solve(pen.gradient);
    const double inc = pen.gradient.dot(step);
    if (!std::isfinite(inc)) throw NumericalError("non-finite Newton increment " + trace_summary(res.trace));

    IterationRecord rec{pen.value, inc, 0.0, lambda, 0};
    if (inc < 2.0 * cfg.epsilon) {
      res.trace.push_back(rec);
      res.converged = true;
      break;
    }
    if (s >= cfg.max_iterations) {
      res.trace.push_back(rec);
      break;
    }

    // The full step is usually accepted, so its trial point is evaluated
    // with derivatives; backtracked trials only need the value.
    double nu = 1.0;
    bool accepted = false;
    Eigen::VectorXd candidate;
    std::optional<std::pair<LikelihoodDerivatives, LikelihoodDerivatives>> at_candidate;
    for (int ls = 0; ls < cfg.max_line_search_steps; ++ls) {
      candidate = eta + nu * step;
      rec.line_search_steps = ls + 1;
      double value = -std::numeric_limits<double>::infinity();
      try {
        if (ls == 0) {
          at_candidate = evaluate(candidate);
          value = at_candidate->second.value;
        } else {
          value = objective.value(candidate);
        }
      } catch (const NumericalError&) {
        // overflow at a trial point: treat as a failed Armijo check
      }
      if (value >= pen.value + cfg.phi * nu * inc) {
        accepted = true;
        break;
      }
      nu *= cfg.psi;
    }
    if (!accepted) {
      res.trace.push_back(rec);
      // An increment below the rounding level of the objective cannot be
      // resolved by any line search: the iterate is stationary to working
      // precision.
      if (inc <= kRoundingIncrement * std::max(1.0, std::abs(pen.value))) {
        res.trace.back().step = 0.0;
        res.converged = true;
        break;
      }
      throw ConvergenceError("line search failed to find an ascent step " + trace_summary(res.trace));
    }
    rec.step = nu;
    res.trace.push_back(rec);
    eta = std::move(candidate);
    lambda *= cfg.delta;
    if (rec.line_search_steps == 1) {
      std::tie(raw, pen) = std::move(*at_candidate);
    } else {
      std::tie(raw, pen) = evaluate(eta);
    }
  }

  res.iterations = static_cast<int>(res.trace.size()) - 1;
  res.coeffs = CoefficientSet::from_eta(eta, n_gamma);
  res.loglik = raw.value;
  res.gradient = std::move(raw.gradient);
  res.hessian = std::move(raw.hessian);
  res.penalized_loglik = pen.value;
  res.penalized_gradient = std::move(pen.gradient);
  res.penalized_hessian = std::move(pen.hessian);
  return res;
}

FitResult fit(const Dataset& ds, const RiskIndex& index, const TensorBasis& basis, int cause,
              const std::optional<PenaltyConfig>& penalty, const SolverConfig& cfg) {
  const LikelihoodEvaluator eval(ds, index, basis, cause, cfg.threads);
  return fit(eval, basis, penalty, cfg);
}

CauseFits fit_all_causes(const Dataset& ds, const RiskIndex& index, const TensorBasis& basis,
                         const std::optional<PenaltyConfig>& penalty, const SolverConfig& cfg) {
  CauseFits out;
  for (int j = 1; j <= ds.num_causes; ++j) {
    if (ds.event_count(j) == 0) {
      out.warnings.push_back("cause " + std::to_string(j) + " has no events; skipped");
      continue;
    }
    out.fits.push_back(fit(ds, index, basis, j, penalty, cfg));
  }
  return out;
}

}  // namespace bvcox
