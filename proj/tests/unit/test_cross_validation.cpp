#include <algorithm>
#include <cmath>
#include <numeric>

#include "doctest.h"

#include "bvcox/cross_validation.hpp"
#include "bvcox/error.hpp"
#include "oracles/cox_oracle.hpp"
#include "unit/support.hpp"

using namespace bvcox;

namespace {

Dataset plain(std::size_t n, std::uint64_t seed, int causes = 1) {
  testing_support::RandomSpec spec;
  spec.n = n;
  spec.causes = causes;
  return testing_support::random_dataset(spec, seed);
}

// Rows of the oracle problem restricted to `rows`.
oracle::CoxData restrict_rows(const oracle::CoxData& all, const std::vector<std::size_t>& rows) {
  oracle::CoxData out;
  out.x.resize(static_cast<Eigen::Index>(rows.size()), all.x.cols());
  for (std::size_t k = 0; k < rows.size(); ++k) {
    out.time.push_back(all.time[rows[k]]);
    out.status.push_back(all.status[rows[k]]);
    out.stratum.push_back(all.stratum[rows[k]]);
    out.x.row(static_cast<Eigen::Index>(k)) = all.x.row(static_cast<Eigen::Index>(rows[k]));
  }
  return out;
}

}  // namespace

TEST_CASE("fold sizes and determinism") {
  Eigen::MatrixXd z = Eigen::MatrixXd::Random(9, 1);
  const Dataset d8 = testing_support::make_dataset({1, 2, 3, 4, 5, 6, 7, 8}, {1, 1, 1, 1, 1, 1, 1, 1}, z.topRows(8));
  auto sizes = partition_folds(d8, 4, 1).sizes();
  CHECK(sizes == std::vector<std::size_t>{2, 2, 2, 2});
  const Dataset d9 = testing_support::make_dataset({1, 2, 3, 4, 5, 6, 7, 8, 9}, {1, 1, 1, 1, 1, 1, 1, 1, 1}, z);
  sizes = partition_folds(d9, 4, 1).sizes();
  std::sort(sizes.begin(), sizes.end());
  CHECK(sizes == std::vector<std::size_t>{2, 2, 2, 3});

  const Dataset ds = plain(503, 3, 2);
  const FoldAssignment a = partition_folds(ds, 5, 42);
  const FoldAssignment b = partition_folds(ds, 5, 42);
  CHECK(a.fold == b.fold);
  CHECK(partition_folds(ds, 5, 43).fold != a.fold);
  for (int cause = 0; cause <= 2; ++cause) {
    std::vector<int> count(5, 0);
    for (std::size_t i = 0; i < ds.n(); ++i) {
      if (ds.cause[i] == cause) ++count[static_cast<std::size_t>(a.fold[i])];
    }
    const auto [lo, hi] = std::minmax_element(count.begin(), count.end());
    CHECK(*hi - *lo <= 1);
  }
  for (int f = 0; f < 5; ++f) CHECK(a.members(f).size() + a.complement(f).size() == ds.n());
}

TEST_CASE("infeasible partitions are rejected") {
  Eigen::MatrixXd z = Eigen::MatrixXd::Random(6, 1);
  const Dataset ds = testing_support::make_dataset({1, 2, 3, 4, 5, 6}, {1, 0, 0, 0, 0, 0}, z);
  CHECK_THROWS_AS(partition_folds(ds, 2, 1), ValidationError);
  CHECK_THROWS_AS(partition_folds(plain(20, 1), 1, 1), ValidationError);
}

TEST_CASE("default grid") {
  const auto grid = default_grid(10000, 1);
  REQUIRE(grid.size() == 25);
  std::vector<double> mus;
  for (const auto& g : grid) mus.push_back(g.mu[0]);
  std::sort(mus.begin(), mus.end());
  mus.erase(std::unique(mus.begin(), mus.end()), mus.end());
  REQUIRE(mus.size() == 5);
  CHECK(mus.front() == doctest::Approx(100.0 * 1e-5));
  CHECK(mus.back() == doctest::Approx(100.0 * 1e-1));
}

TEST_CASE("criteria on constant-effect data match direct evaluation") {
  const Dataset ds = plain(60, 8);
  const TensorBasis basis = testing_support::constant_basis(ds);
  const FoldAssignment folds = partition_folds(ds, 2, 5);
  const CvProblem problem(ds, folds, basis, 1);
  const std::vector<PenaltyConfig> grid{PenaltyConfig::uniform(1, 0.5, 0.5)};
  const std::vector<GridFits> fits = problem.compute_fits(grid);
  REQUIRE(fits[0].folds.size() == 2);

  const oracle::CoxData cox = testing_support::to_cox(ds, 1);
  double fc = 0.0;
  double cfc = 0.0;
  std::vector<Eigen::VectorXd> beta;
  for (int f = 0; f < 2; ++f) {
    REQUIRE(fits[0].folds[static_cast<std::size_t>(f)].ok);
    const Eigen::VectorXd b = fits[0].folds[static_cast<std::size_t>(f)].fit->coeffs.eta();
    beta.push_back(b);
    fc += oracle::cox_derivatives(restrict_rows(cox, folds.members(f)), b).value;
    cfc += oracle::cox_derivatives(cox, b).value - oracle::cox_derivatives(restrict_rows(cox, folds.complement(f)), b).value;
  }
  CHECK(problem.cve(CvMethod::FC, fits[0]).cve == doctest::Approx(-2.0 * fc).epsilon(1e-12));
  CHECK(problem.cve(CvMethod::CFC, fits[0]).cve == doctest::Approx(-2.0 * cfc).epsilon(1e-10));

  // Unconstrained risk sets with each subject's own fold coefficients.
  double uc = 0.0;
  for (std::size_t i = 0; i < ds.n(); ++i) {
    if (cox.status[i] != 1) continue;
    double denom = 0.0;
    for (std::size_t r = 0; r < ds.n(); ++r) {
      if (cox.time[r] >= cox.time[i]) {
        denom += std::exp(cox.x.row(static_cast<Eigen::Index>(r)).dot(beta[static_cast<std::size_t>(folds.fold[r])]));
      }
    }
    uc += cox.x.row(static_cast<Eigen::Index>(i)).dot(beta[static_cast<std::size_t>(folds.fold[i])]) - std::log(denom);
  }
  CHECK(problem.cve(CvMethod::UC, fits[0]).cve == doctest::Approx(-2.0 * uc).epsilon(1e-12));

  // Deviance residuals against the full-data unpenalized Breslow baseline.
  const oracle::CoxFit full = oracle::cox_fit(cox);
  const auto steps = oracle::breslow(cox, full.beta);
  double dr = 0.0;
  for (std::size_t i = 0; i < ds.n(); ++i) {
    const Eigen::VectorXd& b = beta[static_cast<std::size_t>(folds.fold[i])];
    const double lp = cox.x.row(static_cast<Eigen::Index>(i)).dot(b);
    const double cum = oracle::cumulative_baseline(steps, cox.stratum[i], cox.time[i]);
    const double m = cox.status[i] - std::exp(lp) * cum;
    dr += std::max(0.0, -2.0 * (m + (cox.status[i] == 1 ? lp + std::log(cum) : 0.0)));
  }
  CHECK(problem.cve(CvMethod::DR, fits[0]).cve == doctest::Approx(dr).epsilon(1e-6));
}

TEST_CASE("identical folds give F times the per-fold criterion") {
  const Dataset base = plain(40, 9);
  std::vector<std::size_t> rows;
  for (int copy = 0; copy < 3; ++copy) {
    for (std::size_t i = 0; i < base.n(); ++i) rows.push_back(i);
  }
  const Dataset ds = base.subset(rows);
  FoldAssignment folds;
  folds.folds = 3;
  for (int copy = 0; copy < 3; ++copy) folds.fold.insert(folds.fold.end(), base.n(), copy);
  const TensorBasis basis = testing_support::cubic_basis(ds, 1, 1);
  const CvProblem problem(ds, folds, basis, 1);
  const std::vector<PenaltyConfig> grid{PenaltyConfig::uniform(1, 1.0, 1.0)};
  const auto fits = problem.compute_fits(grid);
  const double one = -2.0 * log_partial_likelihood(base, build_risk_index(base), basis, fits[0].folds[0].fit->coeffs, 1);
  CHECK(problem.cve(CvMethod::FC, fits[0]).cve == doctest::Approx(3.0 * one).epsilon(1e-8));
}

TEST_CASE("GCV degrees of freedom") {
  const Dataset ds = plain(200, 10);
  const TensorBasis basis = testing_support::cubic_basis(ds, 1, 1);
  const FoldAssignment folds = partition_folds(ds, 4, 1);
  const CvProblem problem(ds, folds, basis, 1);
  std::vector<PenaltyConfig> grid;
  grid.push_back(PenaltyConfig::uniform(1, 0.0, 0.0));
  for (double mu : {0.0, 0.1, 1.0, 10.0}) grid.push_back(PenaltyConfig::uniform(1, mu, 0.5));
  for (double mux : {1.0, 10.0}) grid.push_back(PenaltyConfig::uniform(1, 10.0, mux));
  const auto fits = problem.compute_fits(grid);
  const FitResult& zero = *fits[0].full.fit;
  const double n = static_cast<double>(ds.n());
  const double params = zero.layout.size() + zero.q;
  const double expect = -zero.loglik / (n * std::pow(1.0 - params / n, 2));
  CHECK(problem.cve(CvMethod::GCV, fits[0]).cve == doctest::Approx(expect).epsilon(1e-10));

  double prev = params + 1.0;
  for (const auto& gf : fits) {
    const FitResult& r = *gf.full.fit;
    const double edf = (-r.penalized_hessian).ldlt().solve(-r.hessian).trace();
    CHECK(edf > 0.0);
    CHECK(edf <= params + 1e-9);
    CHECK(edf <= prev + 1e-9);
    prev = edf;
  }
}

TEST_CASE("selection") {
  const Dataset ds = plain(240, 11);
  const TensorBasis basis = testing_support::cubic_basis(ds, 1, 1);
  const FoldAssignment folds = partition_folds(ds, 3, 2);
  const CvProblem problem(ds, folds, basis, 1);

  SUBCASE("single point") {
    const std::vector<PenaltyConfig> grid{PenaltyConfig::uniform(1, 0.3, 0.3)};
    for (CvMethod m : kAllCvMethods) CHECK(tune(problem, grid, m, folds).selected == 0);
  }
  SUBCASE("ties go to the larger penalty and invalid points are skipped") {
    std::vector<CvPoint> pts(3);
    pts[0] = {PenaltyConfig::uniform(1, 1.0, 1.0), 5.0, true, {}, 0};
    pts[1] = {PenaltyConfig::uniform(1, 2.0, 1.0), 5.0 * (1 + 1e-12), true, {}, 0};
    pts[2] = {PenaltyConfig::uniform(1, 3.0, 3.0), 1.0, false, "failed", 0};
    CHECK(select_point(pts) == 1);
    for (auto& p : pts) p.valid = false;
    CHECK_THROWS_AS(select_point(pts), ConvergenceError);
  }
  SUBCASE("warm starts do not change the criteria") {
    std::vector<PenaltyConfig> grid;
    for (double a : {0.01, 1.0, 10.0}) {
      for (double b : {0.01, 3.0}) grid.push_back(PenaltyConfig::uniform(1, a, b));
    }
    CvSettings cold;
    cold.warm_start = false;
    const CvProblem cold_problem(ds, folds, basis, 1, cold);
    const auto warm_reports = tune_all(problem, grid, kAllCvMethods, folds);
    const auto cold_reports = tune_all(cold_problem, grid, kAllCvMethods, folds);
    for (std::size_t m = 0; m < warm_reports.size(); ++m) {
      CHECK(warm_reports[m].selected == cold_reports[m].selected);
      for (std::size_t k = 0; k < grid.size(); ++k) {
        CHECK(warm_reports[m].points[k].cve ==
              doctest::Approx(cold_reports[m].points[k].cve).epsilon(1e-6));
      }
    }
  }
  SUBCASE("reports are deterministic across thread counts") {
    const std::vector<PenaltyConfig> grid = default_grid(ds.n(), 1);
    CvSettings threaded;
    threaded.solver.threads = 4;
    const CvProblem other(ds, folds, basis, 1, threaded);
    const auto a = tune(problem, grid, CvMethod::DR, folds);
    const auto b = tune(other, grid, CvMethod::DR, folds);
    CHECK(a.selected == b.selected);
    for (std::size_t k = 0; k < grid.size(); ++k) CHECK(a.points[k].cve == b.points[k].cve);
    CHECK(a.coverage.size() == 3);
  }
  SUBCASE("fold-specific baselines") {
    CvSettings fold_bl;
    fold_bl.fold_specific_baseline = true;
    const CvProblem other(ds, folds, basis, 1, fold_bl);
    const std::vector<PenaltyConfig> grid{PenaltyConfig::uniform(1, 1.0, 1.0)};
    const auto fits = other.compute_fits(grid);
    const auto ev = other.cve(CvMethod::DR, fits[0]);
    CHECK(ev.valid);
    CHECK(ev.cve != problem.cve(CvMethod::DR, problem.compute_fits(grid)[0]).cve);
  }
}
