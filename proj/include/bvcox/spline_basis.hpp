#pragma once

#include <array>
#include <cstddef>
#include <span>
#include <vector>

#include <Eigen/Dense>

namespace bvcox {

inline constexpr int kMaxSplineDegree = 15;

/// Marginal B-spline basis on [lo, hi] with clamped boundary knots.
///
/// The full knot vector repeats each boundary d+1 times so the basis spans
/// the constants (it carries an intercept). Size is u + d + 1 for u interior
/// knots.
struct BasisSpec {
  int degree = 0;
  std::vector<double> interior_knots;
  double lo = 0.0;
  double hi = 1.0;

  [[nodiscard]] int size() const noexcept {
    return static_cast<int>(interior_knots.size()) + degree + 1;
  }
  [[nodiscard]] std::vector<double> full_knots() const;

  // Throws ValidationError when the knot layout is inadmissible.
  void validate() const;

  friend bool operator==(const BasisSpec&, const BasisSpec&) = default;
};

/// Outcome of quantile knot placement. `collapsed` counts requested interior
/// knots lost to ties (duplicate quantiles or quantiles on the boundary).
struct KnotPlacement {
  BasisSpec spec;
  int requested_interior = 0;
  int collapsed = 0;
};

/// Type-7 sample quantile of ascending `sorted`, prob in [0, 1].
double quantile_type7(std::span<const double> sorted, double prob);

/// Interior knots at the j/(u+1) type-7 sample quantiles of `values`,
/// boundary at the sample range.
KnotPlacement make_knots(std::span<const double> values, int degree, int num_interior);

/// Basis sizes for a fit. Explicit interior knots, when given, replace the
/// quantile rule for that dimension; boundaries always follow the data.
struct BasisRequest {
  int degree = 3;
  int degree_x = 3;
  int knots_t = 3;
  int knots_x = 3;
  std::vector<double> knots_t_at;
  std::vector<double> knots_x_at;
};

struct TensorBasis;

struct TensorPlacement;

/// Event-time knots from the distinct values of `failure_times`, modifier
/// knots from `modifiers`.
TensorPlacement place_tensor_basis(std::span<const double> failure_times, std::span<const double> modifiers,
                                   const BasisRequest& request);

/// Nonzero window of a basis evaluation: values[0..count) belong to basis
/// functions first..first+count-1.
struct BasisWindow {
  int first = 0;
  int count = 0;
  std::array<double, kMaxSplineDegree + 1> values{};

  [[nodiscard]] double operator[](int i) const noexcept { return values[static_cast<std::size_t>(i)]; }
};

// x outside [lo, hi] is clamped to the boundary; *clamped reports it.
BasisWindow eval_basis_window(const BasisSpec& spec, double x, bool* clamped = nullptr);
Eigen::VectorXd eval_basis(const BasisSpec& spec, double x, bool* clamped = nullptr);

/// Dimensions of the tensor-product coefficient block for one cause.
///
/// Canonical order: covariate slowest, modifier basis next, event-time basis
/// fastest, i.e. index (l, kx, k) -> (l * Kx + kx) * K + k.
struct TensorLayout {
  int p = 0;   // varying-effect covariates
  int K = 1;   // event-time basis size
  int Kx = 1;  // modifier basis size

  [[nodiscard]] int block_size() const noexcept { return K * Kx; }
  [[nodiscard]] int size() const noexcept { return p * K * Kx; }
  [[nodiscard]] int index(int l, int kx, int k) const noexcept { return (l * Kx + kx) * K + k; }

  friend bool operator==(const TensorLayout&, const TensorLayout&) = default;
};

/// Event-time and modifier bases used by every varying coefficient.
struct TensorBasis {
  BasisSpec time;
  BasisSpec modifier;

  [[nodiscard]] TensorLayout layout(int p) const noexcept { return {p, time.size(), modifier.size()}; }

  friend bool operator==(const TensorBasis&, const TensorBasis&) = default;
};

struct TensorPlacement {
  TensorBasis basis;
  int collapsed_t = 0;  // requested interior knots lost to ties
  int collapsed_x = 0;
};

// z ⊗ bx ⊗ b in canonical order.
Eigen::VectorXd tensor_row(const Eigen::Ref<const Eigen::VectorXd>& z,
                           const Eigen::Ref<const Eigen::VectorXd>& bx,
                           const Eigen::Ref<const Eigen::VectorXd>& b);

/// (K-1) x K first-order difference matrix, row i = e_i - e_{i+1}.
Eigen::MatrixXd difference_matrix(int K);

/// beta_l(t, x) for one covariate block gamma_l of length Kx*K.
double eval_surface(const TensorBasis& basis, const Eigen::Ref<const Eigen::VectorXd>& gamma_l,
                    double t, double x);

}  // namespace bvcox
