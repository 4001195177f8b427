#pragma once

#include <cstdint>
#include <random>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "bvcox/data.hpp"

namespace bvcox {

/// True varying effect beta_1(t, x).
///   "sine-decay": sin(3 pi t / 4) exp(-0.5 x)
///   "constant":   `value` everywhere
///   "tabulated":  bilinear interpolation of `table` (t_grid rows, x_grid
///                 columns), held constant outside the grid
struct TrueSurface {
  std::string kind = "sine-decay";
  double value = 0.0;
  std::vector<double> t_grid;
  std::vector<double> x_grid;
  Eigen::MatrixXd table;

  [[nodiscard]] double operator()(double t, double x) const;
  void validate() const;
};

/// lambda_0(t): "constant" (rate) or "weibull" (shape >= 1, scale).
struct BaselineSpec {
  std::string kind = "constant";
  double rate = 0.1;
  double shape = 1.0;
  double scale = 10.0;

  [[nodiscard]] double operator()(double t) const;
  void validate() const;
};

struct ScenarioConfig {
  std::size_t n = 10000;
  double rho = 0.6;  // correlation of (z, w)
  TrueSurface surface;
  double beta2 = 1.0;
  double modifier_lo = 0.0;
  double modifier_hi = 50.0;
  double censor_lo = 0.0;
  double censor_hi = 30.0;
  double horizon = 30.0;
  BaselineSpec baseline;

  void validate() const;
};

/// Diagnostics of one generated subject, kept for residual checks.
struct GeneratedSubject {
  double u = 0.0;
  double event_time = 0.0;  // +inf when no event before the horizon
  double censor_time = 0.0;
};

struct GeneratedData {
  Dataset data;  // one varying covariate "z", one invariant "w", one stratum
  std::vector<GeneratedSubject> subjects;
};

/// Cumulative hazard int_0^t lambda_0(s) exp(z beta_1(s, x) + w beta_2) ds.
double cumulative_hazard(const ScenarioConfig& cfg, double z, double w, double x, double t);

/// Subject i draws from its own engine seeded with (seed, stream, i), so a
/// dataset does not depend on how subjects are scheduled. `stream`
/// separates replicates or training/testing copies under one seed.
GeneratedData generate_dataset(const ScenarioConfig& cfg, std::uint64_t seed, std::uint64_t stream = 0);

std::mt19937_64 subject_engine(std::uint64_t seed, std::uint64_t stream, std::uint64_t subject);

}  // namespace bvcox
