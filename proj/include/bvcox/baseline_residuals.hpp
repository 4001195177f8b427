#pragma once

#include <span>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "bvcox/data.hpp"
#include "bvcox/likelihood.hpp"
#include "bvcox/solver.hpp"

namespace bvcox {

struct BaselineStep {
  double time = 0.0;
  double increment = 0.0;
};

/// Breslow step function per stratum for one cause.
struct BaselineHazard {
  int cause = 1;
  std::vector<std::string> stratum_labels;
  std::vector<std::vector<BaselineStep>> steps;  // per stratum, time ascending

  /// Sum of increments at times <= t.
  [[nodiscard]] double cumulative(int stratum, double t) const;
};

/// Increment at each distinct failure time: events / sum_{r at risk} exp(lp_r(t)).
BaselineHazard breslow_baseline(const LikelihoodEvaluator& eval, const Dataset& ds, const CoefficientSet& coeffs);
BaselineHazard breslow_baseline(const FitResult& fit, const Dataset& ds, const RiskIndex& index);

/// Optional restriction to some subjects; results are then indexed like `rows`.
///
/// With time-varying effects the deviance radicand of an event subject,
/// -2[lp(X) + log Lambda0(X) + M], can be negative even for a consistent fit
/// (it compares exp(lp(X)) Lambda0(X) with the exposure accumulated under
/// lp(t), t <= X). Such radicands are clipped to zero and counted unless
/// `strict` asks for an error.
struct ResidualRequest {
  std::vector<std::size_t> rows;  // empty: all subjects
  bool strict = false;
};

struct Residuals {
  std::vector<std::size_t> rows;
  Eigen::VectorXd martingale;
  Eigen::VectorXd deviance;
  std::size_t clipped = 0;  // deviance radicands below -1e-10 clipped to zero
};

/// Martingale and deviance residuals where row r uses coefficient set
/// sets[group[r]] (group indexed by dataset row; empty means set 0 for all).
/// The baseline may come from a different dataset with the same strata.
Residuals compute_residuals(std::span<const CoefficientSet> sets, std::span<const int> group,
                            const TensorBasis& basis, const BaselineHazard& baseline, const Dataset& ds,
                            int cause, const ResidualRequest& request = {});

Eigen::VectorXd martingale_residuals(const CoefficientSet& coeffs, const TensorBasis& basis,
                                     const BaselineHazard& baseline, const Dataset& ds, int cause);

Eigen::VectorXd deviance_residuals(const CoefficientSet& coeffs, const TensorBasis& basis,
                                   const BaselineHazard& baseline, const Dataset& ds, int cause);

}  // namespace bvcox
