#include "bvcox/penalty.hpp"

#include <cmath>

#include <unsupported/Eigen/KroneckerProduct>

#include "bvcox/error.hpp"

namespace bvcox {

PenaltyConfig PenaltyConfig::uniform(int p, double mu, double mu_x) {
  return {Eigen::VectorXd::Constant(p, mu), Eigen::VectorXd::Constant(p, mu_x)};
}

void PenaltyConfig::validate(int p) const {
  if (mu.size() != p || mu_x.size() != p) {
    throw ValidationError("penalty needs one event-time and one modifier weight per varying covariate");
  }
  for (Eigen::Index l = 0; l < p; ++l) {
    if (!std::isfinite(mu[l]) || !std::isfinite(mu_x[l]) || mu[l] < 0.0 || mu_x[l] < 0.0) {
      throw ValidationError("tuning parameters must be finite and non-negative");
    }
  }
}

bool PenaltyConfig::is_zero() const {
  return (mu.size() == 0 || mu.isZero(0.0)) && (mu_x.size() == 0 || mu_x.isZero(0.0));
}

Eigen::MatrixXd build_penalty_matrix(const PenaltyConfig& cfg, const TensorLayout& layout) {
  cfg.validate(layout.p);
  const int K = layout.K;
  const int Kx = layout.Kx;
  const int bs = layout.block_size();
  Eigen::MatrixXd gram_t = Eigen::MatrixXd::Zero(bs, bs);
  Eigen::MatrixXd gram_x = Eigen::MatrixXd::Zero(bs, bs);
  if (K >= 2) {
    const Eigen::MatrixXd D = Eigen::kroneckerProduct(Eigen::MatrixXd::Identity(Kx, Kx), difference_matrix(K));
    gram_t = D.transpose() * D;
  }
  if (Kx >= 2) {
    const Eigen::MatrixXd D = Eigen::kroneckerProduct(difference_matrix(Kx), Eigen::MatrixXd::Identity(K, K));
    gram_x = D.transpose() * D;
  }
  Eigen::MatrixXd P = Eigen::MatrixXd::Zero(layout.size(), layout.size());
  for (int l = 0; l < layout.p; ++l) {
    P.block(l * bs, l * bs, bs, bs) = cfg.mu_x[l] * cfg.mu_x[l] * gram_x + cfg.mu[l] * cfg.mu[l] * gram_t;
  }
  return P;
}

Eigen::MatrixXd penalty_hessian(const Eigen::MatrixXd& P, int q) {
  const Eigen::Index g = P.rows();
  Eigen::MatrixXd Q = Eigen::MatrixXd::Zero(g + q, g + q);
  Q.topLeftCorner(g, g) = 2.0 * P;
  return Q;
}

double penalty_value(const Eigen::MatrixXd& P, const Eigen::Ref<const Eigen::VectorXd>& eta) {
  if (P.rows() != P.cols() || P.rows() > eta.size()) throw ValidationError("penalty matrix does not match eta");
  const auto gamma = eta.head(P.rows());
  return gamma.dot(P * gamma);
}

LikelihoodDerivatives penalized_derivatives(const LikelihoodDerivatives& deriv, const Eigen::MatrixXd& P,
                                            const Eigen::Ref<const Eigen::VectorXd>& eta) {
  const Eigen::Index dim = eta.size();
  if (deriv.gradient.size() != dim || deriv.hessian.rows() != dim || P.rows() > dim) {
    throw ValidationError("penalized_derivatives: dimension mismatch");
  }
  const Eigen::Index g = P.rows();
  LikelihoodDerivatives out = deriv;
  const Eigen::VectorXd Pg = P * eta.head(g);
  out.value -= eta.head(g).dot(Pg);
  out.gradient.head(g) -= 2.0 * Pg;
  out.hessian.topLeftCorner(g, g) -= 2.0 * P;
  return out;
}

}  // namespace bvcox
