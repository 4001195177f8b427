#include "bvcox/simulation.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>

#include <boost/random/normal_distribution.hpp>
#include <boost/random/uniform_real_distribution.hpp>

#include "bvcox/error.hpp"
#include "quadrature.hpp"

namespace bvcox {

namespace {

// Locates x in an ascending grid: returns (i, f) with x ~ grid[i] + f (grid[i+1] - grid[i]).
std::pair<std::size_t, double> grid_position(const std::vector<double>& grid, double x) {
  if (grid.size() == 1 || x <= grid.front()) return {0, 0.0};
  if (x >= grid.back()) return {grid.size() - 2, 1.0};
  const auto it = std::upper_bound(grid.begin(), grid.end(), x);
  const std::size_t i = static_cast<std::size_t>(it - grid.begin()) - 1;
  return {i, (x - grid[i]) / (grid[i + 1] - grid[i])};
}

bool strictly_ascending(const std::vector<double>& v) {
  for (std::size_t i = 1; i < v.size(); ++i) {
    if (!(v[i] > v[i - 1])) return false;
  }
  return true;
}

constexpr double kQuadratureTol = 1e-13;
constexpr double kTimeTol = 1e-10;

}  // namespace

double TrueSurface::operator()(double t, double x) const {
  if (kind == "sine-decay") return std::sin(3.0 * std::numbers::pi * t / 4.0) * std::exp(-0.5 * x);
  if (kind == "constant") return value;
  if (kind == "tabulated") {
    const auto [i, a] = grid_position(t_grid, t);
    const auto [j, b] = grid_position(x_grid, x);
    const auto ri = static_cast<Eigen::Index>(i);
    const auto cj = static_cast<Eigen::Index>(j);
    const Eigen::Index ri1 = t_grid.size() > 1 ? ri + 1 : ri;
    const Eigen::Index cj1 = x_grid.size() > 1 ? cj + 1 : cj;
    return (1 - a) * (1 - b) * table(ri, cj) + a * (1 - b) * table(ri1, cj) + (1 - a) * b * table(ri, cj1) +
           a * b * table(ri1, cj1);
  }
  throw ValidationError("unknown surface kind '" + kind + "'");
}

void TrueSurface::validate() const {
  if (kind == "sine-decay") return;
  if (kind == "constant") {
    if (!std::isfinite(value)) throw ValidationError("constant surface value must be finite");
    return;
  }
  if (kind == "tabulated") {
    if (t_grid.empty() || x_grid.empty()) throw ValidationError("tabulated surface needs both grids");
    if (!strictly_ascending(t_grid) || !strictly_ascending(x_grid)) {
      throw ValidationError("tabulated surface grids must be strictly ascending");
    }
    if (table.rows() != static_cast<Eigen::Index>(t_grid.size()) ||
        table.cols() != static_cast<Eigen::Index>(x_grid.size())) {
      throw ValidationError("tabulated surface table must be t_grid x x_grid");
    }
    if (!table.allFinite()) throw ValidationError("tabulated surface values must be finite");
    return;
  }
  throw ValidationError("unknown surface kind '" + kind + "'");
}

double BaselineSpec::operator()(double t) const {
  if (kind == "constant") return rate;
  if (kind == "weibull") return shape / scale * std::pow(t / scale, shape - 1.0);
  throw ValidationError("unknown baseline kind '" + kind + "'");
}

void BaselineSpec::validate() const {
  if (kind == "constant") {
    if (!(rate > 0.0) || !std::isfinite(rate)) throw ValidationError("baseline rate must be positive");
  } else if (kind == "weibull") {
    if (!(shape >= 1.0) || !std::isfinite(shape)) throw ValidationError("weibull shape must be at least 1");
    if (!(scale > 0.0) || !std::isfinite(scale)) throw ValidationError("weibull scale must be positive");
  } else {
    throw ValidationError("unknown baseline kind '" + kind + "'");
  }
}

void ScenarioConfig::validate() const {
  if (n == 0) throw ValidationError("scenario needs n >= 1");
  if (!(rho > -1.0 && rho < 1.0)) throw ValidationError("rho must lie in (-1, 1)");
  if (!std::isfinite(beta2)) throw ValidationError("beta2 must be finite");
  if (!(modifier_lo < modifier_hi)) throw ValidationError("modifier range is empty");
  if (!(censor_lo >= 0.0 && censor_lo < censor_hi)) throw ValidationError("censoring range is invalid");
  if (!(horizon > 0.0) || !std::isfinite(horizon)) throw ValidationError("horizon must be positive");
  surface.validate();
  baseline.validate();
}

namespace {

struct Integrand {
  const ScenarioConfig& cfg;
  double z;
  double x;

  double operator()(double s) const { return cfg.baseline(s) * std::exp(z * cfg.surface(s, x)); }
};

double integrate(const Integrand& f, double a, double b) {
  if (!(b > a)) return 0.0;
  return detail::adaptive_gauss_kronrod(f, a, b, kQuadratureTol, 30, nullptr);
}

}  // namespace

double cumulative_hazard(const ScenarioConfig& cfg, double z, double w, double x, double t) {
  return std::exp(w * cfg.beta2) * integrate(Integrand{cfg, z, x}, 0.0, t);
}

std::mt19937_64 subject_engine(std::uint64_t seed, std::uint64_t stream, std::uint64_t subject) {
  auto lo = [](std::uint64_t v) { return static_cast<std::uint32_t>(v & 0xffffffffu); };
  auto hi = [](std::uint64_t v) { return static_cast<std::uint32_t>(v >> 32); };
  std::seed_seq seq{lo(seed), hi(seed), lo(stream), hi(stream), lo(subject), hi(subject)};
  return std::mt19937_64(seq);
}

GeneratedData generate_dataset(const ScenarioConfig& cfg, std::uint64_t seed, std::uint64_t stream) {
  cfg.validate();
  const std::size_t n = cfg.n;
  GeneratedData out;
  Dataset& ds = out.data;
  ds.stratum.assign(n, 0);
  ds.stratum_labels = {"1"};
  ds.time.resize(n);
  ds.cause.resize(n);
  ds.modifier.resize(n);
  ds.z.resize(static_cast<Eigen::Index>(n), 1);
  ds.w.resize(static_cast<Eigen::Index>(n), 1);
  ds.z_names = {"z"};
  ds.w_names = {"w"};
  ds.num_causes = 1;
  out.subjects.resize(n);

  const double rho_c = std::sqrt(1.0 - cfg.rho * cfg.rho);
  for (std::size_t i = 0; i < n; ++i) {
    std::mt19937_64 eng = subject_engine(seed, stream, i);
    boost::random::normal_distribution<double> normal;
    boost::random::uniform_real_distribution<double> unit(0.0, 1.0);
    const double g1 = normal(eng);
    const double g2 = normal(eng);
    const double z = g1;
    const double w = cfg.rho * g1 + rho_c * g2;
    const double x = cfg.modifier_lo + (cfg.modifier_hi - cfg.modifier_lo) * unit(eng);
    const double u = unit(eng);
    const double c = cfg.censor_lo + (cfg.censor_hi - cfg.censor_lo) * unit(eng);

    // Work on the scale of int lambda_0 exp(z beta_1): the target absorbs exp(w beta_2).
    const Integrand f{cfg, z, x};
    const double target = -std::log(u) * std::exp(-w * cfg.beta2);
    double event_time = std::numeric_limits<double>::infinity();
    if (std::isfinite(target) && integrate(f, 0.0, cfg.horizon) >= target) {
      double lo = 0.0;
      double lo_value = 0.0;
      double hi = cfg.horizon;
      for (;;) {
        const double mid = 0.5 * (lo + hi);
        if (mid <= lo || mid >= hi) break;
        const double mid_value = lo_value + integrate(f, lo, mid);
        if (mid_value < target) {
          lo = mid;
          lo_value = mid_value;
        } else {
          hi = mid;
        }
        if (hi - lo <= kTimeTol && std::abs(mid_value - target) <= kQuadratureTol * std::max(1.0, target)) break;
      }
      event_time = 0.5 * (lo + hi);
    }

    GeneratedSubject& sub = out.subjects[i];
    sub.u = u;
    sub.event_time = event_time;
    sub.censor_time = c;
    const double end = std::min(c, cfg.horizon);
    ds.time[i] = std::min(event_time, end);
    ds.cause[i] = event_time <= end ? 1 : 0;
    ds.modifier[i] = x;
    ds.z(static_cast<Eigen::Index>(i), 0) = z;
    ds.w(static_cast<Eigen::Index>(i), 0) = w;
  }
  finalize_dataset(ds);
  return out;
}

}  // namespace bvcox
