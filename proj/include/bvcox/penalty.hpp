#pragma once

#include <Eigen/Dense>

#include "bvcox/likelihood.hpp"
#include "bvcox/spline_basis.hpp"

namespace bvcox {

/// Difference-penalty weights per varying-effect covariate: `mu` along event
/// time, `mu_x` along the modifier.
struct PenaltyConfig {
  Eigen::VectorXd mu;
  Eigen::VectorXd mu_x;

  static PenaltyConfig uniform(int p, double mu, double mu_x);

  void validate(int p) const;
  [[nodiscard]] bool is_zero() const;
};

/// Block-diagonal P with gamma^T P gamma = sum_l mu_x_l^2 ||Dx G_l||_F^2 +
/// mu_l^2 ||G_l D^T||_F^2, G_l the Kx x K control-point grid of covariate l.
Eigen::MatrixXd build_penalty_matrix(const PenaltyConfig& cfg, const TensorLayout& layout);

/// Q = 2 blockdiag(P, 0_q), the Hessian of gamma^T P gamma in eta.
Eigen::MatrixXd penalty_hessian(const Eigen::MatrixXd& P, int q);

double penalty_value(const Eigen::MatrixXd& P, const Eigen::Ref<const Eigen::VectorXd>& eta);

/// value - gamma^T P gamma, gradient - Q eta, hessian - Q.
LikelihoodDerivatives penalized_derivatives(const LikelihoodDerivatives& deriv, const Eigen::MatrixXd& P,
                                            const Eigen::Ref<const Eigen::VectorXd>& eta);

}  // namespace bvcox
