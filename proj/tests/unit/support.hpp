#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <random>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "bvcox/data.hpp"
#include "bvcox/spline_basis.hpp"
#include "oracles/cox_oracle.hpp"

namespace testing_support {

inline bvcox::Dataset make_dataset(const std::vector<double>& time, const std::vector<int>& cause,
                                   const Eigen::MatrixXd& z, const Eigen::MatrixXd& w = {},
                                   std::vector<int> stratum = {}, std::vector<double> modifier = {},
                                   int num_causes = 1) {
  bvcox::Dataset ds;
  const std::size_t n = time.size();
  ds.time = time;
  ds.cause = cause;
  ds.stratum = stratum.empty() ? std::vector<int>(n, 0) : std::move(stratum);
  int groups = 0;
  for (int g : ds.stratum) groups = std::max(groups, g + 1);
  for (int g = 0; g < groups; ++g) ds.stratum_labels.push_back(std::to_string(g + 1));
  ds.modifier = modifier.empty() ? std::vector<double>(n, 0.0) : std::move(modifier);
  ds.z = z;
  ds.w = w.size() == 0 ? Eigen::MatrixXd(static_cast<Eigen::Index>(n), 0) : w;
  for (Eigen::Index l = 0; l < ds.z.cols(); ++l) ds.z_names.push_back("z" + std::to_string(l + 1));
  for (Eigen::Index l = 0; l < ds.w.cols(); ++l) ds.w_names.push_back("w" + std::to_string(l + 1));
  ds.num_causes = num_causes;
  bvcox::finalize_dataset(ds);
  return ds;
}

struct RandomSpec {
  std::size_t n = 200;
  int p = 1;
  int q = 1;
  int strata = 1;
  int causes = 1;
  bool ties = true;  // round times to a coarse grid
  double beta = 0.5;
};

// Exponential event times with random covariates and uniform censoring.
inline bvcox::Dataset random_dataset(const RandomSpec& spec, std::uint64_t seed) {
  std::mt19937_64 eng(seed);
  std::normal_distribution<double> normal;
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  const auto n = static_cast<Eigen::Index>(spec.n);
  Eigen::MatrixXd z(n, spec.p);
  Eigen::MatrixXd w(n, spec.q);
  std::vector<double> time(spec.n);
  std::vector<int> cause(spec.n);
  std::vector<int> stratum(spec.n);
  std::vector<double> modifier(spec.n);
  for (Eigen::Index i = 0; i < n; ++i) {
    double lp = 0.0;
    for (int l = 0; l < spec.p; ++l) {
      z(i, l) = normal(eng);
      lp += spec.beta * z(i, l);
    }
    for (int l = 0; l < spec.q; ++l) {
      w(i, l) = normal(eng);
      lp -= 0.5 * spec.beta * w(i, l);
    }
    const auto k = static_cast<std::size_t>(i);
    stratum[k] = static_cast<int>(eng() % static_cast<std::uint64_t>(spec.strata));
    modifier[k] = 10.0 * unit(eng);
    double t = -std::log(1.0 - unit(eng)) / (0.1 * std::exp(lp));
    const double c = 20.0 * unit(eng);
    int code = 1 + static_cast<int>(eng() % static_cast<std::uint64_t>(spec.causes));
    if (c < t) {
      t = c;
      code = 0;
    }
    if (spec.ties) t = std::ceil(t * 4.0) / 4.0;
    time[k] = t;
    cause[k] = code;
  }
  return make_dataset(time, cause, z, w, stratum, modifier, spec.causes);
}

// Degree-0 bases with a single function each: the constant-effect model.
inline bvcox::TensorBasis constant_basis(const bvcox::Dataset& ds) {
  const auto [tlo, thi] = std::minmax_element(ds.time.begin(), ds.time.end());
  const auto [xlo, xhi] = std::minmax_element(ds.modifier.begin(), ds.modifier.end());
  bvcox::TensorBasis basis;
  basis.time = {0, {}, *tlo, *thi > *tlo ? *thi : *tlo + 1.0};
  basis.modifier = {0, {}, *xlo, *xhi > *xlo ? *xhi : *xlo + 1.0};
  return basis;
}

// Cubic bases with quantile knots on the data.
inline bvcox::TensorBasis cubic_basis(const bvcox::Dataset& ds, int knots_t = 2, int knots_x = 2) {
  std::vector<double> failures;
  for (std::size_t i = 0; i < ds.n(); ++i) {
    if (ds.cause[i] != 0) failures.push_back(ds.time[i]);
  }
  bvcox::BasisRequest req;
  req.knots_t = knots_t;
  req.knots_x = knots_x;
  auto placed = bvcox::place_tensor_basis(failures, ds.modifier, req);
  // Cover censored times beyond the last failure so nothing is clamped.
  placed.basis.time.lo = 0.0;
  placed.basis.time.hi = std::max(placed.basis.time.hi, *std::max_element(ds.time.begin(), ds.time.end()));
  return placed.basis;
}

// The same data as a plain Cox problem for `cause`, columns [z, w].
inline oracle::CoxData to_cox(const bvcox::Dataset& ds, int cause) {
  oracle::CoxData out;
  out.time = ds.time;
  out.stratum = ds.stratum;
  out.status.resize(ds.n());
  for (std::size_t i = 0; i < ds.n(); ++i) out.status[i] = ds.cause[i] == cause ? 1 : 0;
  out.x.resize(static_cast<Eigen::Index>(ds.n()), ds.p() + ds.q());
  out.x << ds.z, ds.w;
  return out;
}

}  // namespace testing_support
