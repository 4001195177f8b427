#include "bvcox/inference.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <sstream>

#include <boost/math/distributions/chi_squared.hpp>
#include <boost/math/distributions/normal.hpp>
#include <unsupported/Eigen/KroneckerProduct>

#include "bvcox/error.hpp"
#include "quadrature.hpp"

namespace bvcox {

std::string to_string(ContrastKind kind) {
  switch (kind) {
    case ContrastKind::EventTime: return "event-time";
    case ContrastKind::Modifier: return "modifier";
    case ContrastKind::Joint: return "joint";
  }
  return "unknown";
}

std::string to_string(VarianceConstruction construction) {
  switch (construction) {
    case VarianceConstruction::Unpenalized: return "unpenalized";
    case VarianceConstruction::Sandwich: return "sandwich";
    case VarianceConstruction::Model: return "model";
    case VarianceConstruction::Gray: return "gray";
  }
  return "unknown";
}

ContrastKind parse_contrast_kind(const std::string& text) {
  if (text == "event-time" || text == "t") return ContrastKind::EventTime;
  if (text == "modifier" || text == "x") return ContrastKind::Modifier;
  if (text == "joint" || text == "tx") return ContrastKind::Joint;
  throw ValidationError("unknown contrast kind '" + text + "' (expected event-time, modifier or joint)");
}

VarianceConstruction parse_construction(const std::string& text) {
  if (text == "unpenalized") return VarianceConstruction::Unpenalized;
  if (text == "sandwich") return VarianceConstruction::Sandwich;
  if (text == "model") return VarianceConstruction::Model;
  if (text == "gray") return VarianceConstruction::Gray;
  throw ValidationError("unknown variance construction '" + text +
                        "' (expected unpenalized, sandwich, model or gray)");
}

Eigen::MatrixXd contrast_matrix(ContrastKind kind, int K, int Kx) {
  if (K < 1 || Kx < 1) throw ValidationError("basis sizes must be positive");
  switch (kind) {
    case ContrastKind::EventTime:
      if (K < 2) throw ValidationError("event-time contrast needs K >= 2");
      return Eigen::kroneckerProduct(Eigen::MatrixXd::Identity(Kx, Kx), difference_matrix(K));
    case ContrastKind::Modifier:
      if (Kx < 2) throw ValidationError("modifier contrast needs a modifier basis of size >= 2");
      return Eigen::kroneckerProduct(difference_matrix(Kx), Eigen::MatrixXd::Identity(K, K));
    case ContrastKind::Joint:
      if (K * Kx < 2) throw ValidationError("joint contrast needs at least two control points");
      return difference_matrix(K * Kx);
  }
  throw ValidationError("unknown contrast kind");
}

int contrast_df(ContrastKind kind, int K, int Kx) {
  switch (kind) {
    case ContrastKind::EventTime: return Kx * (K - 1);
    case ContrastKind::Modifier: return K * (Kx - 1);
    case ContrastKind::Joint: return K * Kx - 1;
  }
  return 0;
}

namespace {

// Inverse of a symmetric positive definite matrix, failing loudly when it is
// numerically singular.
Eigen::MatrixXd spd_inverse(const Eigen::MatrixXd& A, const char* what) {
  const Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(A);
  if (eig.info() != Eigen::Success) throw NumericalError(std::string(what) + ": eigendecomposition failed");
  const Eigen::VectorXd& ev = eig.eigenvalues();
  const double largest = std::max(std::abs(ev.maxCoeff()), std::abs(ev.minCoeff()));
  if (!(ev.minCoeff() > 1e-12 * largest)) {
    std::ostringstream msg;
    msg << what << " is singular or indefinite (smallest eigenvalue " << ev.minCoeff() << ", largest "
        << ev.maxCoeff() << ")";
    throw NumericalError(msg.str());
  }
  Eigen::MatrixXd inv = eig.eigenvectors() * ev.cwiseInverse().asDiagonal() * eig.eigenvectors().transpose();
  return 0.5 * (inv + inv.transpose());
}

}  // namespace

Eigen::MatrixXd unpenalized_covariance(const FitResult& fit) {
  return spd_inverse(-fit.hessian, "negative Hessian");
}

VarianceEstimates variance_estimates(const FitResult& fit) {
  if (!fit.converged) throw ValidationError("variance estimates need a converged fit");
  VarianceEstimates out;
  out.model = spd_inverse(-fit.penalized_hessian, "negative penalized Hessian");
  const Eigen::MatrixXd s = out.model * (-fit.hessian) * out.model;
  out.sandwich = 0.5 * (s + s.transpose());
  out.bias = -out.model * (fit.q_matrix() * fit.coeffs.eta());
  return out;
}

namespace {

struct ImhofIntegrand {
  std::span<const double> lambda;
  double q;

  // sin(theta(u)) / (u rho(u)); the u -> 0 limit is theta'(0).
  double operator()(double u) const {
    double theta = -0.5 * q * u;
    double log_rho = 0.0;
    for (double l : lambda) {
      theta += 0.5 * std::atan(l * u);
      log_rho += 0.25 * std::log1p(l * l * u * u);
    }
    if (u == 0.0) return slope(0.0);
    return std::sin(theta) / (u * std::exp(log_rho));
  }

  double slope(double u) const {
    double d = -0.5 * q;
    for (double l : lambda) d += 0.5 * l / (1.0 + l * l * u * u);
    return d;
  }

  double envelope(double u) const {
    double log_rho = 0.0;
    for (double l : lambda) log_rho += 0.25 * std::log1p(l * l * u * u);
    return 1.0 / (u * std::exp(log_rho));
  }

  // Bound on |int_U^inf integrand du| (before the 1/pi factor).
  double tail_bound(double U) const {
    const double k = static_cast<double>(lambda.size());
    double log_prod = 0.0;
    for (double l : lambda) log_prod += 0.5 * std::log(l);
    double bound = 1.0 / (0.5 * k * std::exp(0.5 * k * std::log(U) + log_prod));
    const double s = slope(U);
    if (s < 0.0) bound = std::min(bound, 2.0 * envelope(U) / -s);
    return bound;
  }
};

}  // namespace

QuadformTail quadform_tail_detailed(std::span<const double> eigenvalues, double q, double tol) {
  if (!(tol > 0.0)) throw ValidationError("quadform_tail: tolerance must be positive");
  if (!(q >= 0.0) || !std::isfinite(q)) throw ValidationError("quadform_tail: q must be finite and non-negative");
  std::vector<double> lambda;
  for (double l : eigenvalues) {
    if (!std::isfinite(l) || l < 0.0) throw ValidationError("quadform_tail: eigenvalues must be non-negative");
    if (l > 0.0) lambda.push_back(l);
  }
  if (lambda.empty()) throw ValidationError("quadform_tail: needs at least one positive eigenvalue");
  if (q == 0.0) return {1.0, 0.0, 0.0};

  const ImhofIntegrand f{lambda, q};
  const double pi = std::numbers::pi;
  double lambda_sum = 0.0;
  for (double l : lambda) lambda_sum += l;

  // Half the budget for truncation, half for quadrature.
  double U = 1.0 / std::max(q, lambda_sum);
  constexpr double kMaxU = 1e12;
  while (f.tail_bound(U) / pi > 0.5 * tol) {
    U *= 2.0;
    if (U > kMaxU) {
      std::ostringstream msg;
      msg << "quadform_tail: truncation bound " << f.tail_bound(U) / pi << " exceeds tolerance " << tol;
      throw NumericalError(msg.str());
    }
  }

  // Panels of about half an oscillation of sin(theta).
  const double width = pi / (0.5 * std::max(q, lambda_sum));
  const auto panels = static_cast<std::size_t>(std::ceil(U / width));
  constexpr std::size_t kMaxPanels = 5'000'000;
  if (panels > kMaxPanels) {
    std::ostringstream msg;
    msg << "quadform_tail: integration range needs " << panels << " panels; achieved bound "
        << f.tail_bound(U) / pi;
    throw NumericalError(msg.str());
  }
  const double panel_tol = 0.5 * tol * pi / static_cast<double>(panels);
  double integral = 0.0;
  double quad_error = 0.0;
  for (std::size_t i = 0; i < panels; ++i) {
    const double a = U * static_cast<double>(i) / static_cast<double>(panels);
    const double b = U * static_cast<double>(i + 1) / static_cast<double>(panels);
    integral += detail::adaptive_gauss_kronrod(f, a, b, panel_tol, 20, &quad_error);
  }
  const double bound = f.tail_bound(U) / pi + quad_error / pi;
  if (bound > tol) {
    std::ostringstream msg;
    msg << "quadform_tail: achieved bound " << bound << " exceeds tolerance " << tol;
    throw NumericalError(msg.str());
  }
  const double p = std::clamp(0.5 + integral / pi, 0.0, 1.0);
  return {p, bound, U};
}

double quadform_tail(std::span<const double> eigenvalues, double q, double tol) {
  return quadform_tail_detailed(eigenvalues, q, tol).p_value;
}

namespace {

void check_covariate(const FitResult& fit, int l) {
  if (l < 0 || l >= fit.layout.p) throw ValidationError("covariate index out of range");
}

Eigen::MatrixXd covariate_block(const Eigen::MatrixXd& V, const TensorLayout& layout, int l) {
  const int bs = layout.block_size();
  return V.block(static_cast<Eigen::Index>(l) * bs, static_cast<Eigen::Index>(l) * bs, bs, bs);
}

// Symmetric PSD square root; small negative eigenvalues from rounding are
// clipped.
Eigen::MatrixXd psd_sqrt(const Eigen::MatrixXd& S) {
  const Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(S);
  Eigen::VectorXd ev = eig.eigenvalues();
  const double scale = std::max(1.0, ev.cwiseAbs().maxCoeff());
  for (Eigen::Index i = 0; i < ev.size(); ++i) {
    if (ev[i] < -1e-10 * scale) throw NumericalError("variance of the contrast is indefinite");
    ev[i] = std::sqrt(std::max(ev[i], 0.0));
  }
  return eig.eigenvectors() * ev.asDiagonal() * eig.eigenvectors().transpose();
}

}  // namespace

TestResult wald_test(const FitResult& fit, const VarianceEstimates* var, ContrastKind kind,
                     VarianceConstruction construction, int l) {
  check_covariate(fit, l);
  const TensorLayout& layout = fit.layout;
  const Eigen::MatrixXd C = contrast_matrix(kind, layout.K, layout.Kx);
  TestResult res;
  res.kind = kind;
  res.construction = construction;
  res.covariate = l;
  res.df = contrast_df(kind, layout.K, layout.Kx);

  const Eigen::VectorXd gamma_l = fit.coeffs.block(layout, l);
  Eigen::VectorXd x;
  Eigen::MatrixXd omega;
  if (construction == VarianceConstruction::Unpenalized) {
    x = C * gamma_l;
    omega = covariate_block(unpenalized_covariance(fit), layout, l);
  } else {
    if (!var) throw ValidationError("penalized Wald constructions need variance estimates");
    const int bs = layout.block_size();
    x = C * (gamma_l - var->bias.segment(static_cast<Eigen::Index>(l) * bs, bs));
    omega = covariate_block(construction == VarianceConstruction::Sandwich ? var->sandwich : var->model, layout, l);
  }
  const Eigen::MatrixXd M = spd_inverse(C * omega * C.transpose(), "contrast variance C Omega C^T");
  res.statistic = std::max(0.0, x.dot(M * x));

  if (construction != VarianceConstruction::Gray) {
    const boost::math::chi_squared dist(res.df);
    res.p_value = res.statistic > 0.0 ? boost::math::cdf(boost::math::complement(dist, res.statistic)) : 1.0;
    return res;
  }

  const Eigen::MatrixXd sigma = C * covariate_block(var->sandwich, layout, l) * C.transpose();
  const Eigen::MatrixXd root = psd_sqrt(0.5 * (sigma + sigma.transpose()));
  const Eigen::MatrixXd phi = root * M * root;
  const Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(0.5 * (phi + phi.transpose()), Eigen::EigenvaluesOnly);
  for (Eigen::Index i = 0; i < eig.eigenvalues().size(); ++i) {
    double mu = eig.eigenvalues()[i];
    if (mu < -1e-10) {
      std::ostringstream msg;
      msg << "mixture eigenvalue " << mu << " is negative beyond rounding; variance estimates are inconsistent";
      throw NumericalError(msg.str());
    }
    res.eigenvalues.push_back(std::max(mu, 0.0));
  }
  const QuadformTail tail = quadform_tail_detailed(res.eigenvalues, res.statistic);
  res.p_value = tail.p_value;
  res.error_bound = tail.error_bound;
  return res;
}

std::vector<SurfacePoint> pointwise_ci(const FitResult& fit, const VarianceEstimates* var, int l,
                                       std::span<const double> t_grid, std::span<const double> x_grid,
                                       double level, bool model_variance) {
  check_covariate(fit, l);
  if (!(level > 0.0 && level < 1.0)) throw ValidationError("confidence level must lie in (0, 1)");
  const TensorLayout& layout = fit.layout;
  const int bs = layout.block_size();
  Eigen::VectorXd gamma_l = fit.coeffs.block(layout, l);
  Eigen::MatrixXd omega;
  if (fit.penalized()) {
    if (!var) throw ValidationError("intervals for a penalized fit need variance estimates");
    gamma_l -= var->bias.segment(static_cast<Eigen::Index>(l) * bs, bs);
    omega = covariate_block(model_variance ? var->model : var->sandwich, layout, l);
  } else {
    omega = covariate_block(var ? var->model : unpenalized_covariance(fit), layout, l);
  }
  const double z = boost::math::quantile(boost::math::normal(), 0.5 + 0.5 * level);

  std::vector<Eigen::VectorXd> bt;
  bt.reserve(t_grid.size());
  for (double t : t_grid) bt.push_back(eval_basis(fit.basis.time, t));
  std::vector<SurfacePoint> out;
  out.reserve(t_grid.size() * x_grid.size());
  for (double x : x_grid) {
    const Eigen::VectorXd bx = eval_basis(fit.basis.modifier, x);
    for (std::size_t i = 0; i < t_grid.size(); ++i) {
      const Eigen::VectorXd row = Eigen::kroneckerProduct(bx, bt[i]);
      SurfacePoint pt;
      pt.t = t_grid[i];
      pt.x = x;
      pt.estimate = row.dot(gamma_l);
      pt.se = std::sqrt(std::max(0.0, row.dot(omega * row)));
      pt.lo = pt.estimate - z * pt.se;
      pt.hi = pt.estimate + z * pt.se;
      out.push_back(pt);
    }
  }
  return out;
}

}  // namespace bvcox
