#pragma once

#include <cstddef>
#include <span>
#include <vector>

#include <Eigen/Dense>

#include "bvcox/data.hpp"
#include "bvcox/spline_basis.hpp"

namespace bvcox {

/// Coefficients of one cause: control points gamma (canonical layout) and
/// invariant coefficients theta. eta = [gamma; theta].
struct CoefficientSet {
  Eigen::VectorXd gamma;
  Eigen::VectorXd theta;

  static CoefficientSet zeros(const TensorLayout& layout, int q);
  static CoefficientSet from_eta(const Eigen::Ref<const Eigen::VectorXd>& eta, int n_gamma);

  [[nodiscard]] Eigen::VectorXd eta() const;
  [[nodiscard]] Eigen::Index dim() const noexcept { return gamma.size() + theta.size(); }
  // Control points of covariate l as a Kx*K vector (k fastest).
  [[nodiscard]] Eigen::VectorXd block(const TensorLayout& layout, int l) const;
};

struct LikelihoodDerivatives {
  double value = 0.0;
  Eigen::VectorXd gradient;
  Eigen::MatrixXd hessian;
};

/// L_i(t)^T gamma + w_i^T theta for subject row i.
double linear_predictor(const Dataset& ds, std::size_t row, double t, const TensorBasis& basis,
                        const CoefficientSet& coeffs);

/// Reduced features [z_r ⊗ bx(x_r); w_r] of the given rows, one per row. The
/// linear predictor of row r at time t is feature_r^T reduced_coefficients(t).
Eigen::MatrixXd reduced_features(const Dataset& ds, std::span<const std::size_t> rows, const TensorBasis& basis);
Eigen::VectorXd reduced_coefficients(const TensorBasis& basis, const TensorLayout& layout,
                                     const CoefficientSet& coeffs, double t);

/// Risk-set summary of one distinct failure time.
struct FailureTerm {
  int stratum = 0;
  double time = 0.0;
  std::size_t events = 0;
  double log_risk_sum = 0.0;  // log sum_{r in R} exp(lp_r(time))
};

/// Stratified cause-specific log-partial likelihood with Breslow handling of
/// ties. Risk-set members are evaluated at the event time of the term they
/// enter.
///
/// Construction caches the per-subject modifier basis and the event-time
/// basis at every failure time, so repeated evaluation inside a solver only
/// pays for the risk-set sweeps. Work is split into fixed blocks of failure
/// times and reduced in block order, so results do not depend on `threads`.
class LikelihoodEvaluator {
 public:
  LikelihoodEvaluator(const Dataset& ds, const RiskIndex& index, const TensorBasis& basis, int cause,
                      int threads = 1);

  [[nodiscard]] double value(const CoefficientSet& coeffs) const;
  [[nodiscard]] LikelihoodDerivatives derivatives(const CoefficientSet& coeffs) const;

  /// Value where row i's linear predictor uses coefficient set
  /// sets[group[i]] (fold-specific estimates spread over one risk set).
  [[nodiscard]] double value_mixed(std::span<const CoefficientSet> sets, std::span<const int> group) const;

  /// Per failure time, stratum by stratum in ascending time.
  [[nodiscard]] std::vector<FailureTerm> failure_terms(const CoefficientSet& coeffs) const;

  [[nodiscard]] const TensorLayout& layout() const noexcept { return layout_; }
  [[nodiscard]] int q() const noexcept { return q_; }
  [[nodiscard]] int dim() const noexcept { return layout_.size() + q_; }
  [[nodiscard]] std::size_t n() const noexcept { return n_; }
  [[nodiscard]] std::size_t event_count() const noexcept { return events_; }
  [[nodiscard]] int cause() const noexcept { return cause_; }

 private:
  // Reduced features a_r = [z_r ⊗ bx(x_r); w_r] in risk order. The linear
  // predictor at a failure time with time basis b is a_r^T c(b), where c(b)
  // contracts gamma with b.
  struct Stratum {
    std::vector<std::size_t> row;  // subject row per risk position
    Eigen::MatrixXd feature;       // size x (p*Kx + q)
  };
  struct Item {
    int stratum = 0;
    double time = 0.0;
    std::size_t at_risk = 0;
    std::size_t events_begin = 0;  // range in event_pos_
    std::size_t events_end = 0;
    BasisWindow time_basis;
  };
  struct Partial;

  void check_coeffs(const CoefficientSet& coeffs) const;
  void reduced_coefficients(const Item& item, const CoefficientSet& coeffs, Eigen::Ref<Eigen::VectorXd> out) const;
  template <bool WithDerivatives>
  void run(const CoefficientSet& coeffs, Partial& total) const;

  TensorLayout layout_;
  int q_ = 0;
  int reduced_ = 0;  // p*Kx + q
  int cause_ = 1;
  int threads_ = 1;
  std::size_t n_ = 0;
  std::size_t events_ = 0;
  std::vector<Stratum> strata_;
  std::vector<Item> items_;
  std::vector<std::size_t> event_pos_;
};

double log_partial_likelihood(const Dataset& ds, const RiskIndex& index, const TensorBasis& basis,
                              const CoefficientSet& coeffs, int cause);

LikelihoodDerivatives derivatives(const Dataset& ds, const RiskIndex& index, const TensorBasis& basis,
                                  const CoefficientSet& coeffs, int cause);

}  // namespace bvcox
