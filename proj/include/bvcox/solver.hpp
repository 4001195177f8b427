#pragma once

#include <optional>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "bvcox/data.hpp"
#include "bvcox/likelihood.hpp"
#include "bvcox/penalty.hpp"
#include "bvcox/spline_basis.hpp"

namespace bvcox {

struct SolverConfig {
  double lambda0 = 1.0;  // initial proximal weight
  double delta = 2.0;    // proximal growth per iteration
  double phi = 0.25;     // Armijo slope fraction
  double psi = 0.75;     // backtracking shrink
  double epsilon = 1e-9;
  int max_iterations = 200;
  int max_line_search_steps = 50;
  int threads = 1;

  void validate() const;
};

struct IterationRecord {
  double objective = 0.0;     // (penalized) log-partial likelihood before the step
  double increment_sq = 0.0;  // Newton increment eta^2
  double step = 0.0;          // accepted line-search step nu (0 on the final record)
  double lambda = 0.0;
  int line_search_steps = 0;
};

struct FitResult {
  int cause = 1;
  TensorBasis basis;
  TensorLayout layout;
  int q = 0;
  CoefficientSet coeffs;
  double loglik = 0.0;
  double penalized_loglik = 0.0;
  Eigen::VectorXd gradient;
  Eigen::MatrixXd hessian;
  Eigen::VectorXd penalized_gradient;
  Eigen::MatrixXd penalized_hessian;
  std::optional<PenaltyConfig> penalty;
  Eigen::MatrixXd penalty_matrix;  // P; empty when unpenalized
  int iterations = 0;
  bool converged = false;
  std::vector<IterationRecord> trace;
  std::size_t n = 0;
  std::size_t events = 0;

  [[nodiscard]] bool penalized() const noexcept { return penalty.has_value(); }
  [[nodiscard]] Eigen::MatrixXd q_matrix() const;
};

/// Tensor-product proximal Newton iteration. Starts from `start` when given,
/// otherwise from zero. Returns a result with converged == false when the
/// iteration cap is hit; throws ConvergenceError when a line search fails.
FitResult fit(const LikelihoodEvaluator& eval, const TensorBasis& basis, const std::optional<PenaltyConfig>& penalty,
              const SolverConfig& cfg, const CoefficientSet* start = nullptr);

FitResult fit(const Dataset& ds, const RiskIndex& index, const TensorBasis& basis, int cause,
              const std::optional<PenaltyConfig>& penalty, const SolverConfig& cfg);

struct CauseFits {
  std::vector<FitResult> fits;
  std::vector<std::string> warnings;
};

/// One fit per cause with events; eventless causes are skipped with a warning.
CauseFits fit_all_causes(const Dataset& ds, const RiskIndex& index, const TensorBasis& basis,
                         const std::optional<PenaltyConfig>& penalty, const SolverConfig& cfg);

}  // namespace bvcox
