#pragma once

#include <cmath>
#include <limits>

#include <boost/math/quadrature/gauss_kronrod.hpp>

namespace bvcox::detail {

// Adaptive bisection over single Gauss-Kronrod panels against an absolute
// tolerance. Boost's own adaptive driver reports the panel error on the
// reference interval and compares it with a relative tolerance, which stalls
// on very short intervals. `error` accumulates the estimated absolute error.
template <class F>
double adaptive_gauss_kronrod(const F& f, double a, double b, double abs_tol, int depth, double* error) {
  using GK = boost::math::quadrature::gauss_kronrod<double, 21>;
  double err = 0.0;
  const double value = GK::integrate(f, a, b, 0, 0.0, &err);
  err *= 0.5 * (b - a);
  // Errors at the rounding level of the panel value cannot shrink by
  // subdividing further.
  const double rounding = 64.0 * std::numeric_limits<double>::epsilon() * std::abs(value);
  if (err <= abs_tol || err <= rounding || depth <= 0) {
    if (error) *error += err;
    return value;
  }
  const double mid = 0.5 * (a + b);
  return adaptive_gauss_kronrod(f, a, mid, 0.5 * abs_tol, depth - 1, error) +
         adaptive_gauss_kronrod(f, mid, b, 0.5 * abs_tol, depth - 1, error);
}

}  // namespace bvcox::detail
