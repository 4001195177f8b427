#include <cmath>
#include <vector>

#include <boost/math/distributions/chi_squared.hpp>
#include <boost/math/distributions/normal.hpp>

#include "doctest.h"

#include "bvcox/error.hpp"
#include "bvcox/inference.hpp"
#include "oracles/numeric_oracle.hpp"
#include "unit/support.hpp"

using namespace bvcox;

namespace {

double chisq_tail(double df, double q) {
  return boost::math::cdf(boost::math::complement(boost::math::chi_squared(df), q));
}

struct Fixture {
  Dataset ds;
  TensorBasis basis;
  RiskIndex idx;

  explicit Fixture(std::uint64_t seed, int q = 1, std::size_t n = 300) {
    testing_support::RandomSpec spec;
    spec.n = n;
    spec.q = q;
    ds = testing_support::random_dataset(spec, seed);
    basis = testing_support::cubic_basis(ds, 1, 1);
    idx = build_risk_index(ds);
  }
  FitResult run(const std::optional<PenaltyConfig>& pen = std::nullopt) const {
    return fit(ds, idx, basis, 1, pen, SolverConfig{});
  }
};

}  // namespace

TEST_CASE("contrast matrices") {
  Eigen::MatrixXd et(2, 4), mod(2, 4), joint(3, 4);
  et << 1, -1, 0, 0, 0, 0, 1, -1;
  mod << 1, 0, -1, 0, 0, 1, 0, -1;
  joint << 1, -1, 0, 0, 0, 1, -1, 0, 0, 0, 1, -1;
  CHECK(contrast_matrix(ContrastKind::EventTime, 2, 2) == et);
  CHECK(contrast_matrix(ContrastKind::Modifier, 2, 2) == mod);
  CHECK(contrast_matrix(ContrastKind::Joint, 2, 2) == joint);

  CHECK(contrast_df(ContrastKind::EventTime, 7, 5) == 5 * 6);
  CHECK(contrast_df(ContrastKind::Modifier, 7, 5) == 7 * 4);
  CHECK(contrast_df(ContrastKind::Joint, 7, 5) == 34);
  CHECK_THROWS_AS(contrast_matrix(ContrastKind::EventTime, 1, 3), ValidationError);
  CHECK_THROWS_AS(contrast_matrix(ContrastKind::Modifier, 3, 1), ValidationError);
  CHECK_THROWS_AS(contrast_matrix(ContrastKind::Joint, 1, 1), ValidationError);

  for (ContrastKind kind : {ContrastKind::EventTime, ContrastKind::Modifier, ContrastKind::Joint}) {
    const Eigen::MatrixXd C = contrast_matrix(kind, 4, 3);
    CHECK(C.rows() == contrast_df(kind, 4, 3));
    CHECK((C * Eigen::VectorXd::Constant(12, 2.5)).isZero());
  }
  // The joint row space is spanned by the other two kinds together.
  Eigen::MatrixXd stacked(9 + 8, 12);
  stacked << contrast_matrix(ContrastKind::EventTime, 4, 3), contrast_matrix(ContrastKind::Modifier, 4, 3);
  Eigen::MatrixXd all(17 + 11, 12);
  all << stacked, contrast_matrix(ContrastKind::Joint, 4, 3);
  CHECK(Eigen::FullPivLU<Eigen::MatrixXd>(stacked).rank() == 11);
  CHECK(Eigen::FullPivLU<Eigen::MatrixXd>(all).rank() == 11);
}

TEST_CASE("quadform tail") {
  const std::vector<double> two{1.0, 1.0};
  CHECK(std::abs(quadform_tail(two, 5.991) - 0.05) < 1e-4);
  for (int r : {1, 3, 6, 20}) {
    const std::vector<double> ones(static_cast<std::size_t>(r), 1.0);
    for (double q : {0.5, 3.0, 12.0, 30.0}) CHECK(std::abs(quadform_tail(ones, q) - chisq_tail(r, q)) < 1e-6);
  }
  const std::vector<double> single{2.0};
  for (double q : {0.3, 2.0, 9.0}) CHECK(std::abs(quadform_tail(single, q) - chisq_tail(1, q / 2.0)) < 1e-6);
  // Weights of different size against simulation.
  const std::vector<double> mixed{1.0, 1.0, 2.0};
  const oracle::MonteCarloTail mc = oracle::quadform_tail_mc(mixed, 8.0, 1'000'000, 99);
  CHECK(std::abs(quadform_tail(mixed, 8.0) - mc.p) < 3.0 * mc.se);
  const QuadformTail detail = quadform_tail_detailed(mixed, 8.0);
  CHECK(detail.error_bound <= 1e-6);
  CHECK(quadform_tail(mixed, 0.0) == 1.0);
  CHECK_THROWS_AS(quadform_tail(std::vector<double>{0.0}, 1.0), ValidationError);
  CHECK_THROWS_AS(quadform_tail(std::vector<double>{-1.0}, 1.0), ValidationError);
}

TEST_CASE("variance estimates") {
  const Fixture fx(3);
  SUBCASE("zero penalty") {
    const FitResult res = fx.run(PenaltyConfig::uniform(1, 0.0, 0.0));
    const VarianceEstimates v = variance_estimates(res);
    CHECK((v.sandwich - v.model).cwiseAbs().maxCoeff() < 1e-10 * v.model.cwiseAbs().maxCoeff());
    CHECK(v.bias.cwiseAbs().maxCoeff() < 1e-14);
    CHECK((v.model - unpenalized_covariance(res)).cwiseAbs().maxCoeff() < 1e-10 * v.model.cwiseAbs().maxCoeff());
  }
  SUBCASE("scalar model gives the classical Cox variance") {
    const TensorBasis basis = testing_support::constant_basis(fx.ds);
    const FitResult res = fit(fx.ds, fx.idx, basis, 1, PenaltyConfig::uniform(1, 0.0, 0.0), SolverConfig{});
    const VarianceEstimates v = variance_estimates(res);
    const oracle::CoxFit ref = oracle::cox_fit(testing_support::to_cox(fx.ds, 1));
    CHECK((v.model - ref.covariance).cwiseAbs().maxCoeff() < 1e-8);
  }
  SUBCASE("penalized: symmetric, sandwich below model") {
    const FitResult res = fx.run(PenaltyConfig::uniform(1, 3.0, 3.0));
    const VarianceEstimates v = variance_estimates(res);
    CHECK((v.model - v.model.transpose()).norm() < 1e-12 * v.model.norm());
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(v.model - v.sandwich);
    CHECK(es.eigenvalues().minCoeff() > -1e-10);
    CHECK(v.bias.norm() > 0.0);
  }
}

TEST_CASE("Wald tests") {
  const Fixture fx(4, 2);
  const FitResult res = fx.run();
  const int K = res.layout.K;
  const int Kx = res.layout.Kx;

  SUBCASE("degrees of freedom and p-values") {
    const TestResult et = wald_test(res, nullptr, ContrastKind::EventTime, VarianceConstruction::Unpenalized, 0);
    const TestResult mo = wald_test(res, nullptr, ContrastKind::Modifier, VarianceConstruction::Unpenalized, 0);
    const TestResult jo = wald_test(res, nullptr, ContrastKind::Joint, VarianceConstruction::Unpenalized, 0);
    CHECK(et.df == Kx * (K - 1));
    CHECK(mo.df == K * (Kx - 1));
    CHECK(jo.df == K * Kx - 1);
    for (const TestResult& t : {et, mo, jo}) {
      CHECK(t.p_value >= 0.0);
      CHECK(t.p_value <= 1.0);
      CHECK(t.p_value == doctest::Approx(chisq_tail(t.df, t.statistic)));
    }
    CHECK_THROWS_AS(wald_test(res, nullptr, ContrastKind::Joint, VarianceConstruction::Unpenalized, 1), ValidationError);
    CHECK_THROWS_AS(wald_test(res, nullptr, ContrastKind::Joint, VarianceConstruction::Gray, 0), ValidationError);
  }
  SUBCASE("constant control points give a zero statistic") {
    FitResult flat = res;
    flat.coeffs.gamma.setConstant(0.37);
    const VarianceEstimates v = variance_estimates(fx.run(PenaltyConfig::uniform(1, 1.0, 1.0)));
    for (ContrastKind kind : {ContrastKind::EventTime, ContrastKind::Modifier, ContrastKind::Joint}) {
      const TestResult t = wald_test(flat, nullptr, kind, VarianceConstruction::Unpenalized, 0);
      CHECK(t.statistic < 1e-20);
      CHECK(t.p_value == doctest::Approx(1.0));
    }
    VarianceEstimates no_bias = v;
    no_bias.bias.setZero();
    const TestResult g = wald_test(flat, &no_bias, ContrastKind::Joint, VarianceConstruction::Gray, 0);
    CHECK(g.statistic < 1e-20);
    CHECK(g.p_value == doctest::Approx(1.0));
  }
  SUBCASE("invariant to an invertible transform of W") {
    Dataset moved = fx.ds;
    Eigen::Matrix2d A;
    A << 2.0, 0.5, -1.0, 1.5;
    moved.w = fx.ds.w * A;
    const FitResult res2 = fit(moved, fx.idx, fx.basis, 1, std::nullopt, SolverConfig{});
    for (ContrastKind kind : {ContrastKind::EventTime, ContrastKind::Modifier, ContrastKind::Joint}) {
      const double a = wald_test(res, nullptr, kind, VarianceConstruction::Unpenalized, 0).statistic;
      const double b = wald_test(res2, nullptr, kind, VarianceConstruction::Unpenalized, 0).statistic;
      CHECK(std::abs(a - b) < 1e-8 * std::max(1.0, a));
    }
  }
  SUBCASE("vanishing penalty recovers the unpenalized statistic") {
    const FitResult tiny = fx.run(PenaltyConfig::uniform(1, 1e-8, 1e-8));
    const VarianceEstimates v = variance_estimates(tiny);
    for (ContrastKind kind : {ContrastKind::EventTime, ContrastKind::Modifier, ContrastKind::Joint}) {
      const TestResult ref = wald_test(res, nullptr, kind, VarianceConstruction::Unpenalized, 0);
      for (VarianceConstruction c :
           {VarianceConstruction::Sandwich, VarianceConstruction::Model, VarianceConstruction::Gray}) {
        const TestResult t = wald_test(tiny, &v, kind, c, 0);
        CHECK(t.statistic == doctest::Approx(ref.statistic).epsilon(1e-5));
        CHECK(t.p_value == doctest::Approx(ref.p_value).epsilon(1e-4));
      }
      const TestResult g = wald_test(tiny, &v, kind, VarianceConstruction::Gray, 0);
      CHECK(g.eigenvalues.size() == static_cast<std::size_t>(g.df));
    }
  }
}

TEST_CASE("pointwise intervals") {
  const Fixture fx(5);
  SUBCASE("scalar model matches the delta-method interval") {
    const TensorBasis basis = testing_support::constant_basis(fx.ds);
    const FitResult res = fit(fx.ds, fx.idx, basis, 1, std::nullopt, SolverConfig{});
    const std::vector<double> ts{1.0, 4.0};
    const std::vector<double> xs{2.0};
    const auto pts = pointwise_ci(res, nullptr, 0, ts, xs, 0.9);
    const double z = boost::math::quantile(boost::math::normal(), 0.95);
    const double se = std::sqrt(unpenalized_covariance(res)(0, 0));
    REQUIRE(pts.size() == 2);
    for (const auto& p : pts) {
      CHECK(p.estimate == doctest::Approx(res.coeffs.gamma[0]));
      CHECK(p.hi - p.estimate == doctest::Approx(z * se));
      CHECK(p.estimate - p.lo == doctest::Approx(z * se));
    }
  }
  SUBCASE("zero variance collapses the interval") {
    const FitResult res = fx.run(PenaltyConfig::uniform(1, 1.0, 1.0));
    VarianceEstimates v = variance_estimates(res);
    v.sandwich.setZero();
    const std::vector<double> ts{1.0, 2.0, 3.0};
    const std::vector<double> xs{1.0, 5.0};
    const auto pts = pointwise_ci(res, &v, 0, ts, xs);
    REQUIRE(pts.size() == 6);
    CHECK(pts[1].t == 2.0);
    CHECK(pts[3].x == 5.0);
    for (const auto& p : pts) {
      CHECK(p.lo == p.estimate);
      CHECK(p.hi == p.estimate);
      const Eigen::VectorXd corrected = res.coeffs.block(res.layout, 0) - v.bias.head(res.layout.block_size());
      CHECK(p.estimate == doctest::Approx(eval_surface(res.basis, corrected, p.t, p.x)).epsilon(1e-12));
    }
  }
}

TEST_CASE("sandwich variance against Monte Carlo covariance") {
  // 200 replicates of one design; the sandwich diagonal should describe the
  // spread of the penalized estimates around their mean.
  const int reps = 200;
  testing_support::RandomSpec spec;
  spec.n = 600;
  spec.ties = false;
  const Dataset first = testing_support::random_dataset(spec, 1000);
  TensorBasis basis;
  basis.time = {1, {}, 0.0, 20.0};
  basis.modifier = {1, {}, 0.0, 10.0};
  const PenaltyConfig pen = PenaltyConfig::uniform(1, 2.0, 2.0);
  std::vector<Eigen::VectorXd> estimates;
  Eigen::VectorXd mean_sandwich;
  for (int r = 0; r < reps; ++r) {
    const Dataset ds = testing_support::random_dataset(spec, 1000 + static_cast<std::uint64_t>(r));
    const FitResult res = fit(ds, build_risk_index(ds), basis, 1, pen, SolverConfig{});
    REQUIRE(res.converged);
    estimates.push_back(res.coeffs.eta());
    const Eigen::VectorXd diag = variance_estimates(res).sandwich.diagonal();
    mean_sandwich = r == 0 ? diag : Eigen::VectorXd(mean_sandwich + diag);
  }
  mean_sandwich /= reps;
  Eigen::VectorXd mean = Eigen::VectorXd::Zero(estimates[0].size());
  for (const auto& e : estimates) mean += e;
  mean /= reps;
  Eigen::VectorXd mc = Eigen::VectorXd::Zero(mean.size());
  for (const auto& e : estimates) mc += (e - mean).cwiseAbs2();
  mc /= reps - 1;
  for (Eigen::Index i = 0; i < mc.size(); ++i) {
    CAPTURE(i);
    CHECK(std::abs(mean_sandwich[i] - mc[i]) < 0.25 * mc[i]);
  }
}
