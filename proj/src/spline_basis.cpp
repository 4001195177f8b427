#include "bvcox/spline_basis.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

#include "bvcox/error.hpp"

namespace bvcox {

std::vector<double> BasisSpec::full_knots() const {
  std::vector<double> knots;
  knots.reserve(interior_knots.size() + 2 * static_cast<std::size_t>(degree + 1));
  knots.insert(knots.end(), static_cast<std::size_t>(degree + 1), lo);
  knots.insert(knots.end(), interior_knots.begin(), interior_knots.end());
  knots.insert(knots.end(), static_cast<std::size_t>(degree + 1), hi);
  return knots;
}

void BasisSpec::validate() const {
  if (degree < 0 || degree > kMaxSplineDegree) {
    throw ValidationError("spline degree must lie in [0, " + std::to_string(kMaxSplineDegree) + "]");
  }
  if (!std::isfinite(lo) || !std::isfinite(hi) || !(lo < hi)) {
    throw ValidationError("spline boundary must satisfy lo < hi");
  }
  double prev = lo;
  for (double knot : interior_knots) {
    if (!(knot > prev) || !(knot < hi)) {
      std::ostringstream msg;
      msg << "interior knots must be strictly ascending inside (" << lo << ", " << hi
          << "); offending knot " << knot;
      throw ValidationError(msg.str());
    }
    prev = knot;
  }
}

double quantile_type7(std::span<const double> sorted, double prob) {
  if (sorted.empty()) throw ValidationError("quantile of an empty sample");
  const double h = (static_cast<double>(sorted.size()) - 1.0) * prob;
  const auto lo_idx = static_cast<std::size_t>(std::floor(h));
  const std::size_t hi_idx = std::min(lo_idx + 1, sorted.size() - 1);
  return sorted[lo_idx] + (h - static_cast<double>(lo_idx)) * (sorted[hi_idx] - sorted[lo_idx]);
}

KnotPlacement make_knots(std::span<const double> values, int degree, int num_interior) {
  if (values.empty()) throw ValidationError("make_knots: no values supplied");
  if (num_interior < 0) throw ValidationError("make_knots: negative interior knot count");
  if (degree < 0 || degree > kMaxSplineDegree) throw ValidationError("make_knots: degree out of range");

  std::vector<double> sorted(values.begin(), values.end());
  for (double v : sorted) {
    if (!std::isfinite(v)) throw ValidationError("make_knots: non-finite value");
  }
  std::sort(sorted.begin(), sorted.end());
  if (sorted.front() == sorted.back()) {
    throw ValidationError("make_knots: all values identical, basis domain is degenerate");
  }

  KnotPlacement out;
  out.requested_interior = num_interior;
  out.spec.degree = degree;
  out.spec.lo = sorted.front();
  out.spec.hi = sorted.back();
  for (int j = 1; j <= num_interior; ++j) {
    const double q = quantile_type7(sorted, static_cast<double>(j) / (num_interior + 1));
    const bool inside = q > out.spec.lo && q < out.spec.hi;
    const bool fresh = out.spec.interior_knots.empty() || q > out.spec.interior_knots.back();
    if (inside && fresh) {
      out.spec.interior_knots.push_back(q);
    } else {
      ++out.collapsed;
    }
  }
  return out;
}

BasisWindow eval_basis_window(const BasisSpec& spec, double x, bool* clamped) {
  const int d = spec.degree;
  bool was_clamped = false;
  if (x < spec.lo) {
    x = spec.lo;
    was_clamped = true;
  } else if (x > spec.hi) {
    x = spec.hi;
    was_clamped = true;
  }
  if (clamped != nullptr) *clamped = was_clamped;

  // Knot span i with U[i] <= x < U[i+1]; the right boundary belongs to the last span.
  const std::vector<double>& inner = spec.interior_knots;
  const int u = static_cast<int>(inner.size());
  int offset = static_cast<int>(std::upper_bound(inner.begin(), inner.end(), x) - inner.begin());
  offset = std::min(offset, u);
  const int span = d + offset;  // index into the full knot vector

  auto knot = [&](int idx) -> double {
    if (idx <= d) return spec.lo;
    if (idx >= d + u + 1) return spec.hi;
    return inner[static_cast<std::size_t>(idx - d - 1)];
  };

  BasisWindow win;
  win.first = span - d;
  win.count = d + 1;
  std::array<double, kMaxSplineDegree + 1> left{};
  std::array<double, kMaxSplineDegree + 1> right{};
  win.values[0] = 1.0;
  for (int j = 1; j <= d; ++j) {
    left[static_cast<std::size_t>(j)] = x - knot(span + 1 - j);
    right[static_cast<std::size_t>(j)] = knot(span + j) - x;
    double saved = 0.0;
    for (int r = 0; r < j; ++r) {
      const double denom = right[static_cast<std::size_t>(r + 1)] + left[static_cast<std::size_t>(j - r)];
      const double temp = denom > 0.0 ? win.values[static_cast<std::size_t>(r)] / denom : 0.0;
      win.values[static_cast<std::size_t>(r)] = saved + right[static_cast<std::size_t>(r + 1)] * temp;
      saved = left[static_cast<std::size_t>(j - r)] * temp;
    }
    win.values[static_cast<std::size_t>(j)] = saved;
  }
  return win;
}

Eigen::VectorXd eval_basis(const BasisSpec& spec, double x, bool* clamped) {
  const BasisWindow win = eval_basis_window(spec, x, clamped);
  Eigen::VectorXd out = Eigen::VectorXd::Zero(spec.size());
  for (int i = 0; i < win.count; ++i) out[win.first + i] = win[i];
  return out;
}

Eigen::VectorXd tensor_row(const Eigen::Ref<const Eigen::VectorXd>& z,
                           const Eigen::Ref<const Eigen::VectorXd>& bx,
                           const Eigen::Ref<const Eigen::VectorXd>& b) {
  if (z.size() == 0 || bx.size() == 0 || b.size() == 0) {
    throw ValidationError("tensor_row: empty factor");
  }
  const Eigen::Index K = b.size();
  const Eigen::Index Kx = bx.size();
  Eigen::VectorXd out(z.size() * Kx * K);
  for (Eigen::Index l = 0; l < z.size(); ++l) {
    for (Eigen::Index kx = 0; kx < Kx; ++kx) {
      out.segment((l * Kx + kx) * K, K) = (z[l] * bx[kx]) * b;
    }
  }
  return out;
}

Eigen::MatrixXd difference_matrix(int K) {
  if (K < 2) throw ValidationError("difference_matrix: need at least two columns");
  Eigen::MatrixXd D = Eigen::MatrixXd::Zero(K - 1, K);
  for (int i = 0; i < K - 1; ++i) {
    D(i, i) = 1.0;
    D(i, i + 1) = -1.0;
  }
  return D;
}

double eval_surface(const TensorBasis& basis, const Eigen::Ref<const Eigen::VectorXd>& gamma_l,
                    double t, double x) {
  const int K = basis.time.size();
  const int Kx = basis.modifier.size();
  if (gamma_l.size() != static_cast<Eigen::Index>(K) * Kx) {
    throw ValidationError("eval_surface: coefficient block has wrong length");
  }
  const BasisWindow bt = eval_basis_window(basis.time, t);
  const BasisWindow bx = eval_basis_window(basis.modifier, x);
  double value = 0.0;
  for (int a = 0; a < bx.count; ++a) {
    const Eigen::Index row = static_cast<Eigen::Index>(bx.first + a) * K;
    double inner = 0.0;
    for (int c = 0; c < bt.count; ++c) inner += gamma_l[row + bt.first + c] * bt[c];
    value += bx[a] * inner;
  }
  return value;
}

namespace {

BasisSpec place_one(std::vector<double> values, int degree, int count, const std::vector<double>& explicit_knots,
                    int& collapsed) {
  if (explicit_knots.empty()) {
    const KnotPlacement kp = make_knots(values, degree, count);
    collapsed = kp.collapsed;
    return kp.spec;
  }
  const KnotPlacement range = make_knots(values, degree, 0);
  BasisSpec spec = range.spec;
  spec.interior_knots = explicit_knots;
  spec.validate();
  collapsed = 0;
  return spec;
}

}  // namespace

TensorPlacement place_tensor_basis(std::span<const double> failure_times, std::span<const double> modifiers,
                                   const BasisRequest& request) {
  std::vector<double> times(failure_times.begin(), failure_times.end());
  if (times.empty()) throw ValidationError("no failure times of the analyzed cause; cannot place event-time knots");
  std::sort(times.begin(), times.end());
  times.erase(std::unique(times.begin(), times.end()), times.end());
  TensorPlacement out;
  out.basis.time = place_one(std::move(times), request.degree, request.knots_t, request.knots_t_at, out.collapsed_t);
  out.basis.modifier = place_one(std::vector<double>(modifiers.begin(), modifiers.end()), request.degree_x,
                                 request.knots_x, request.knots_x_at, out.collapsed_x);
  return out;
}

}  // namespace bvcox
