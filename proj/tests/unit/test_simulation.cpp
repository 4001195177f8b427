#include <cmath>
#include <numbers>

#include "doctest.h"

#include "bvcox/error.hpp"
#include "bvcox/simulation.hpp"
#include "oracles/numeric_oracle.hpp"

using namespace bvcox;

namespace {

ScenarioConfig small(std::size_t n) {
  ScenarioConfig cfg;
  cfg.n = n;
  return cfg;
}

// Lambda(T) by composite Simpson, for comparison with -log u.
double simpson_cumulative(const ScenarioConfig& cfg, double z, double w, double x, double t) {
  const auto f = [&](double s) { return cfg.baseline(s) * std::exp(z * cfg.surface(s, x) + w * cfg.beta2); };
  return oracle::simpson(f, 0.0, t, 20000);
}

}  // namespace

TEST_CASE("closed-form event times") {
  SUBCASE("no covariate effects") {
    ScenarioConfig cfg = small(300);
    cfg.surface.kind = "constant";
    cfg.surface.value = 0.0;
    cfg.beta2 = 0.0;
    cfg.baseline.rate = 0.2;
    const GeneratedData g = generate_dataset(cfg, 5);
    int checked = 0;
    for (const auto& s : g.subjects) {
      const double closed = -std::log(s.u) / 0.2;
      if (closed < cfg.horizon) {
        CHECK(std::abs(s.event_time - closed) < 1e-10);
        ++checked;
      } else {
        CHECK(std::isinf(s.event_time));
      }
    }
    CHECK(checked > 100);
  }
  SUBCASE("constant varying effect") {
    ScenarioConfig cfg = small(300);
    cfg.surface.kind = "constant";
    cfg.surface.value = 0.7;
    cfg.beta2 = -0.4;
    const GeneratedData g = generate_dataset(cfg, 6);
    for (std::size_t i = 0; i < g.subjects.size(); ++i) {
      const auto k = static_cast<Eigen::Index>(i);
      const double rate = 0.1 * std::exp(0.7 * g.data.z(k, 0) - 0.4 * g.data.w(k, 0));
      const double closed = -std::log(g.subjects[i].u) / rate;
      if (closed < cfg.horizon) CHECK(std::abs(g.subjects[i].event_time - closed) < 1e-10);
    }
  }
}

TEST_CASE("sine-decay surface: root residuals and data layout") {
  const ScenarioConfig cfg = small(400);
  const GeneratedData g = generate_dataset(cfg, 7);
  const Dataset& ds = g.data;
  REQUIRE(ds.n() == 400);
  CHECK(ds.num_strata() == 1);
  CHECK(ds.p() == 1);
  CHECK(ds.q() == 1);
  std::size_t events = 0;
  for (std::size_t i = 0; i < ds.n(); ++i) {
    const auto k = static_cast<Eigen::Index>(i);
    const auto& s = g.subjects[i];
    if (std::isfinite(s.event_time)) {
      const double lam = simpson_cumulative(cfg, ds.z(k, 0), ds.w(k, 0), ds.modifier[i], s.event_time);
      CHECK(std::abs(lam + std::log(s.u)) < 1e-9);
    } else {
      CHECK(simpson_cumulative(cfg, ds.z(k, 0), ds.w(k, 0), ds.modifier[i], cfg.horizon) < -std::log(s.u));
    }
    CHECK(ds.time[i] == std::min({s.event_time, s.censor_time, cfg.horizon}));
    CHECK((ds.cause[i] == 1) == (s.event_time <= std::min(s.censor_time, cfg.horizon)));
    CHECK(ds.modifier[i] >= 0.0);
    CHECK(ds.modifier[i] <= 50.0);
    events += ds.cause[i] == 1 ? 1 : 0;
  }
  CHECK(events > 100);
  CHECK(cumulative_hazard(cfg, 0.3, -0.2, 4.0, 12.0) ==
        doctest::Approx(simpson_cumulative(cfg, 0.3, -0.2, 4.0, 12.0)).epsilon(1e-10));
}

TEST_CASE("generator determinism and streams") {
  const ScenarioConfig cfg = small(200);
  const GeneratedData a = generate_dataset(cfg, 11, 0);
  const GeneratedData b = generate_dataset(cfg, 11, 0);
  CHECK(a.data.time == b.data.time);
  CHECK(a.data.z == b.data.z);
  CHECK(a.data.modifier == b.data.modifier);
  const GeneratedData c = generate_dataset(cfg, 11, 1);
  CHECK(a.data.time != c.data.time);
  // Subject i's draws do not depend on n.
  const GeneratedData longer = generate_dataset(small(300), 11, 0);
  for (std::size_t i = 0; i < 200; ++i) CHECK(longer.data.time[i] == a.data.time[i]);
}

TEST_CASE("covariate law and censoring independence") {
  ScenarioConfig cfg = small(100000);
  cfg.surface.kind = "constant";
  cfg.surface.value = 1.0;
  const GeneratedData g = generate_dataset(cfg, 3);
  const auto n = static_cast<double>(cfg.n);
  const Eigen::VectorXd z = g.data.z.col(0);
  const Eigen::VectorXd w = g.data.w.col(0);
  const double corr_zw = ((z.array() - z.mean()) * (w.array() - w.mean())).sum() /
                         std::sqrt((z.array() - z.mean()).square().sum() * (w.array() - w.mean()).square().sum());
  CHECK(corr_zw == doctest::Approx(0.6).epsilon(0.02));
  CHECK(z.mean() == doctest::Approx(0.0).scale(1.0).epsilon(0.02));
  CHECK((z.array() - z.mean()).square().sum() / n == doctest::Approx(1.0).epsilon(0.02));

  std::vector<double> t, c;
  for (const auto& s : g.subjects) {
    if (std::isfinite(s.event_time)) {
      t.push_back(s.event_time);
      c.push_back(s.censor_time);
    }
  }
  const Eigen::Map<const Eigen::ArrayXd> ta(t.data(), static_cast<Eigen::Index>(t.size()));
  const Eigen::Map<const Eigen::ArrayXd> ca(c.data(), static_cast<Eigen::Index>(c.size()));
  const double corr = ((ta - ta.mean()) * (ca - ca.mean())).sum() /
                      std::sqrt((ta - ta.mean()).square().sum() * (ca - ca.mean()).square().sum());
  CHECK(std::abs(corr) < 0.01);
}

TEST_CASE("surfaces and baselines") {
  TrueSurface sine;
  CHECK(sine(2.0 / 3.0, 0.0) == doctest::Approx(1.0));
  CHECK(sine(1.0, 2.0) == doctest::Approx(std::sin(3.0 * std::numbers::pi / 4.0) * std::exp(-1.0)));

  TrueSurface tab;
  tab.kind = "tabulated";
  tab.t_grid = {0.0, 10.0};
  tab.x_grid = {0.0, 2.0};
  tab.table.resize(2, 2);
  tab.table << 0.0, 1.0, 2.0, 3.0;
  CHECK(tab(5.0, 1.0) == doctest::Approx(1.5));
  CHECK(tab(-1.0, 0.0) == 0.0);
  CHECK(tab(20.0, 5.0) == 3.0);
  tab.t_grid = {1.0, 0.0};
  CHECK_THROWS_AS(tab.validate(), ValidationError);

  BaselineSpec wb;
  wb.kind = "weibull";
  wb.shape = 2.0;
  wb.scale = 5.0;
  CHECK(wb(5.0) == doctest::Approx(2.0 / 5.0));
  wb.shape = 0.5;
  CHECK_THROWS_AS(wb.validate(), ValidationError);

  ScenarioConfig bad = small(10);
  bad.rho = 1.0;
  CHECK_THROWS_AS(generate_dataset(bad, 1), ValidationError);
}
