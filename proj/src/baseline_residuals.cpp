#include "bvcox/baseline_residuals.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>

#include "bvcox/error.hpp"

namespace bvcox {

double BaselineHazard::cumulative(int stratum, double t) const {
  if (stratum < 0 || static_cast<std::size_t>(stratum) >= steps.size()) {
    throw ValidationError("baseline has no such stratum");
  }
  double total = 0.0;
  for (const BaselineStep& s : steps[static_cast<std::size_t>(stratum)]) {
    if (s.time > t) break;
    total += s.increment;
  }
  return total;
}

BaselineHazard breslow_baseline(const LikelihoodEvaluator& eval, const Dataset& ds, const CoefficientSet& coeffs) {
  BaselineHazard out;
  out.cause = eval.cause();
  out.stratum_labels = ds.stratum_labels;
  out.steps.resize(static_cast<std::size_t>(ds.num_strata()));
  for (const FailureTerm& term : eval.failure_terms(coeffs)) {
    const double inc = static_cast<double>(term.events) * std::exp(-term.log_risk_sum);
    out.steps[static_cast<std::size_t>(term.stratum)].push_back({term.time, inc});
  }
  return out;
}

BaselineHazard breslow_baseline(const FitResult& fit, const Dataset& ds, const RiskIndex& index) {
  const LikelihoodEvaluator eval(ds, index, fit.basis, fit.cause);
  return breslow_baseline(eval, ds, fit.coeffs);
}

Residuals compute_residuals(std::span<const CoefficientSet> sets, std::span<const int> group,
                            const TensorBasis& basis, const BaselineHazard& baseline, const Dataset& ds,
                            int cause, const ResidualRequest& request) {
  if (sets.empty()) throw ValidationError("residuals need at least one coefficient set");
  if (!group.empty() && group.size() != ds.n()) throw ValidationError("group vector must cover every subject");
  if (baseline.cause != cause) throw ValidationError("baseline belongs to a different cause");
  if (baseline.stratum_labels != ds.stratum_labels) {
    throw ValidationError("baseline strata do not match the dataset strata");
  }
  const TensorLayout layout = basis.layout(ds.p());
  for (const auto& s : sets) {
    if (s.gamma.size() != layout.size() || s.theta.size() != ds.q()) {
      throw ValidationError("coefficient dimensions do not match the data");
    }
  }
  for (int g : group) {
    if (g < 0 || static_cast<std::size_t>(g) >= sets.size()) throw ValidationError("group out of range");
  }
  auto set_of = [&](std::size_t row) { return group.empty() ? 0 : group[row]; };

  std::vector<std::size_t> rows = request.rows;
  if (rows.empty()) {
    rows.resize(ds.n());
    std::iota(rows.begin(), rows.end(), std::size_t{0});
  }
  for (std::size_t r : rows) {
    if (r >= ds.n()) throw ValidationError("residual row out of range");
  }

  // Expected counts: sum over baseline steps t_b <= X_r of exp(lp_r(t_b)) dLambda_b,
  // swept per stratum with subjects ordered by decreasing time.
  Eigen::VectorXd expected = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(ds.n()));
  std::vector<std::vector<std::size_t>> by_stratum(static_cast<std::size_t>(ds.num_strata()));
  for (std::size_t r : rows) by_stratum[static_cast<std::size_t>(ds.stratum[r])].push_back(r);
  for (std::size_t g = 0; g < by_stratum.size(); ++g) {
    auto& members = by_stratum[g];
    if (members.empty()) continue;
    std::stable_sort(members.begin(), members.end(),
                     [&](std::size_t a, std::size_t b) { return ds.time[a] > ds.time[b]; });
    const Eigen::MatrixXd A = reduced_features(ds, members, basis);
    Eigen::MatrixXd C(A.cols(), static_cast<Eigen::Index>(sets.size()));
    Eigen::MatrixXd lp_all;
    std::size_t at_risk = members.size();
    const auto& steps = baseline.steps[g];
    for (auto it = steps.begin(); it != steps.end(); ++it) {
      // subjects with X >= t_b form a prefix of `members`
      while (at_risk > 0 && ds.time[members[at_risk - 1]] < it->time) --at_risk;
      if (at_risk == 0) break;
      for (std::size_t s = 0; s < sets.size(); ++s) {
        C.col(static_cast<Eigen::Index>(s)) = reduced_coefficients(basis, layout, sets[s], it->time);
      }
      const auto k = static_cast<Eigen::Index>(at_risk);
      lp_all.noalias() = A.topRows(k) * C;
      for (Eigen::Index pos = 0; pos < k; ++pos) {
        const std::size_t row = members[static_cast<std::size_t>(pos)];
        expected[static_cast<Eigen::Index>(row)] += std::exp(lp_all(pos, set_of(row))) * it->increment;
      }
    }
  }

  Residuals out;
  out.rows = rows;
  out.martingale.resize(static_cast<Eigen::Index>(rows.size()));
  out.deviance.resize(static_cast<Eigen::Index>(rows.size()));
  for (std::size_t i = 0; i < rows.size(); ++i) {
    const std::size_t r = rows[i];
    const auto ri = static_cast<Eigen::Index>(i);
    const double delta = ds.cause[r] == cause ? 1.0 : 0.0;
    const double m = delta - expected[static_cast<Eigen::Index>(r)];
    out.martingale[ri] = m;
    double radicand = -2.0 * m;
    if (delta > 0.0) {
      const double cum = baseline.cumulative(ds.stratum[r], ds.time[r]);
      if (!(cum > 0.0)) {
        std::ostringstream msg;
        msg << "baseline has no mass up to the event time " << ds.time[r] << " of row " << r + 1;
        throw NumericalError(msg.str());
      }
      const Eigen::VectorXd c = reduced_coefficients(basis, layout, sets[static_cast<std::size_t>(set_of(r))], ds.time[r]);
      const std::size_t one[] = {r};
      const double lp = reduced_features(ds, one, basis).row(0).dot(c);
      radicand = -2.0 * (lp + std::log(cum) + m);
    }
    if (radicand < -1e-10) {
      if (request.strict) {
        std::ostringstream msg;
        msg << "deviance radicand " << radicand << " for row " << r + 1
            << " is negative; baseline and coefficients are inconsistent";
        throw NumericalError(msg.str());
      }
      ++out.clipped;
    }
    const double d = std::sqrt(std::max(radicand, 0.0));
    out.deviance[ri] = m > 0.0 ? d : (m < 0.0 ? -d : 0.0);
  }
  return out;
}

Eigen::VectorXd martingale_residuals(const CoefficientSet& coeffs, const TensorBasis& basis,
                                     const BaselineHazard& baseline, const Dataset& ds, int cause) {
  const CoefficientSet sets[] = {coeffs};
  return compute_residuals(sets, {}, basis, baseline, ds, cause).martingale;
}

Eigen::VectorXd deviance_residuals(const CoefficientSet& coeffs, const TensorBasis& basis,
                                   const BaselineHazard& baseline, const Dataset& ds, int cause) {
  const CoefficientSet sets[] = {coeffs};
  return compute_residuals(sets, {}, basis, baseline, ds, cause).deviance;
}

}  // namespace bvcox
