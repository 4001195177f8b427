#include <random>

#include "doctest.h"

#include "bvcox/error.hpp"
#include "bvcox/penalty.hpp"
#include "oracles/numeric_oracle.hpp"
#include "unit/support.hpp"

using namespace bvcox;

namespace {

// Frobenius form recomputed from the Kx x K reshape of each block.
double frobenius_penalty(const PenaltyConfig& cfg, const TensorLayout& layout, const Eigen::VectorXd& gamma) {
  double total = 0.0;
  for (int l = 0; l < layout.p; ++l) {
    Eigen::MatrixXd G(layout.Kx, layout.K);
    for (int kx = 0; kx < layout.Kx; ++kx) {
      for (int k = 0; k < layout.K; ++k) G(kx, k) = gamma[layout.index(l, kx, k)];
    }
    if (layout.Kx > 1) total += cfg.mu_x[l] * cfg.mu_x[l] * (difference_matrix(layout.Kx) * G).squaredNorm();
    if (layout.K > 1) total += cfg.mu[l] * cfg.mu[l] * (G * difference_matrix(layout.K).transpose()).squaredNorm();
  }
  return total;
}

}  // namespace

TEST_CASE("penalty matrix examples") {
  const TensorLayout layout{1, 2, 2};
  CHECK(build_penalty_matrix(PenaltyConfig::uniform(1, 0.0, 0.0), layout).isZero());

  Eigen::MatrixXd time_only(4, 4);
  time_only << 1, -1, 0, 0, -1, 1, 0, 0, 0, 0, 1, -1, 0, 0, -1, 1;
  CHECK(build_penalty_matrix(PenaltyConfig::uniform(1, 1.0, 0.0), layout) == time_only);

  Eigen::MatrixXd both(4, 4);
  both << 2, -1, -1, 0, -1, 2, 0, -1, -1, 0, 2, -1, 0, -1, -1, 2;
  CHECK(build_penalty_matrix(PenaltyConfig::uniform(1, 1.0, 1.0), layout) == both);

  CHECK_THROWS_AS(build_penalty_matrix(PenaltyConfig::uniform(1, -1.0, 0.0), layout), ValidationError);
  CHECK_THROWS_AS(build_penalty_matrix(PenaltyConfig::uniform(2, 1.0, 0.0), layout), ValidationError);
}

TEST_CASE("quadratic form equals the Frobenius definition") {
  std::mt19937_64 eng(2);
  std::normal_distribution<double> normal;
  const TensorLayout layout{2, 5, 4};
  PenaltyConfig cfg;
  cfg.mu = Eigen::Vector2d(0.3, 1.7);
  cfg.mu_x = Eigen::Vector2d(2.1, 0.4);
  const Eigen::MatrixXd P = build_penalty_matrix(cfg, layout);
  CHECK((P - P.transpose()).norm() == 0.0);
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(P);
  CHECK(es.eigenvalues().minCoeff() > -1e-12);
  for (int rep = 0; rep < 5; ++rep) {
    Eigen::VectorXd g(layout.size());
    for (auto& v : g) v = normal(eng);
    CHECK(std::abs(g.dot(P * g) - frobenius_penalty(cfg, layout, g)) < 1e-12 * std::max(1.0, g.dot(P * g)));
  }
  // Per-covariate constants lie in the null space.
  Eigen::VectorXd c(layout.size());
  c.head(20).setConstant(1.5);
  c.tail(20).setConstant(-0.7);
  CHECK((P * c).cwiseAbs().maxCoeff() < 1e-14);
}

TEST_CASE("penalized derivatives") {
  testing_support::RandomSpec spec;
  spec.n = 120;
  spec.p = 1;
  spec.q = 1;
  const Dataset ds = testing_support::random_dataset(spec, 8);
  const TensorBasis basis = testing_support::cubic_basis(ds, 1, 1);
  const RiskIndex idx = build_risk_index(ds);
  const LikelihoodEvaluator eval(ds, idx, basis, 1);
  const TensorLayout layout = basis.layout(1);
  const Eigen::MatrixXd P = build_penalty_matrix(PenaltyConfig::uniform(1, 1.3, 0.6), layout);

  std::mt19937_64 eng(4);
  std::normal_distribution<double> normal(0.0, 0.3);
  CoefficientSet c = CoefficientSet::zeros(layout, 1);
  for (auto& v : c.gamma) v = normal(eng);
  c.theta[0] = 0.2;
  const LikelihoodDerivatives raw = eval.derivatives(c);

  SUBCASE("zero penalty leaves the input unchanged") {
    const Eigen::MatrixXd zero = Eigen::MatrixXd::Zero(layout.size(), layout.size());
    const LikelihoodDerivatives same = penalized_derivatives(raw, zero, c.eta());
    CHECK(same.value == raw.value);
    CHECK(same.gradient == raw.gradient);
    CHECK(same.hessian == raw.hessian);
  }
  SUBCASE("constant control points carry no penalty") {
    Eigen::VectorXd eta = Eigen::VectorXd::Constant(layout.size() + 1, 0.4);
    CHECK(std::abs(penalty_value(P, eta)) < 1e-14);
    const LikelihoodDerivatives pen = penalized_derivatives(raw, P, eta);
    CHECK((pen.gradient - raw.gradient).cwiseAbs().maxCoeff() < 1e-14);
  }
  SUBCASE("gradient and Hessian match finite differences of the penalized value") {
    const int ng = layout.size();
    auto value = [&](const Eigen::VectorXd& eta) {
      return eval.value(CoefficientSet::from_eta(eta, ng)) - penalty_value(P, eta);
    };
    const LikelihoodDerivatives pen = penalized_derivatives(raw, P, c.eta());
    CHECK(pen.value == doctest::Approx(value(c.eta())).epsilon(1e-13));
    CHECK(oracle::rel_error(pen.gradient, oracle::fd_gradient(value, c.eta())) < 1e-7);
    const Eigen::MatrixXd Q = penalty_hessian(P, 1);
    CHECK((pen.hessian - (raw.hessian - Q)).norm() == 0.0);
    CHECK(Q.row(ng).isZero());
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(pen.hessian);
    CHECK(es.eigenvalues().maxCoeff() < 0.0);
  }
}
