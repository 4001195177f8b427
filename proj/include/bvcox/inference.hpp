#pragma once

#include <span>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "bvcox/solver.hpp"

namespace bvcox {

enum class ContrastKind { EventTime, Modifier, Joint };
enum class VarianceConstruction { Unpenalized, Sandwich, Model, Gray };

std::string to_string(ContrastKind kind);
std::string to_string(VarianceConstruction construction);
ContrastKind parse_contrast_kind(const std::string& text);
VarianceConstruction parse_construction(const std::string& text);

/// event-time: I_Kx ⊗ D_K; modifier: D_Kx ⊗ I_K; joint: first differences of
/// the whole length K*Kx block. Each annihilates constant control points.
Eigen::MatrixXd contrast_matrix(ContrastKind kind, int K, int Kx);
int contrast_df(ContrastKind kind, int K, int Kx);

/// Sandwich and model-based variances of the penalized estimate and its bias.
struct VarianceEstimates {
  Eigen::MatrixXd sandwich;
  Eigen::MatrixXd model;
  Eigen::VectorXd bias;
};

VarianceEstimates variance_estimates(const FitResult& fit);

/// (-hessian)^{-1} of the unpenalized log-partial likelihood at the fit.
Eigen::MatrixXd unpenalized_covariance(const FitResult& fit);

struct QuadformTail {
  double p_value = 1.0;
  double error_bound = 0.0;  // achieved absolute accuracy
  double truncation = 0.0;   // upper integration limit used
};

/// P(sum_u mu_u G_u^2 > q) for independent standard normal G_u, by Imhof's
/// inversion of the characteristic function.
QuadformTail quadform_tail_detailed(std::span<const double> eigenvalues, double q, double tol = 1e-6);
double quadform_tail(std::span<const double> eigenvalues, double q, double tol = 1e-6);

struct TestResult {
  ContrastKind kind = ContrastKind::Joint;
  VarianceConstruction construction = VarianceConstruction::Unpenalized;
  int covariate = 0;
  double statistic = 0.0;
  int df = 0;
  std::vector<double> eigenvalues;  // mixture weights, gray construction only
  double p_value = 1.0;
  double error_bound = 0.0;
};

/// Wald test that covariate l's surface is constant along the contrast
/// direction. `var` is required for every construction except Unpenalized.
TestResult wald_test(const FitResult& fit, const VarianceEstimates* var, ContrastKind kind,
                     VarianceConstruction construction, int l);

struct SurfacePoint {
  double t = 0.0;
  double x = 0.0;
  double estimate = 0.0;
  double se = 0.0;
  double lo = 0.0;
  double hi = 0.0;
};

/// Pointwise intervals for beta_l over t_grid x x_grid (t fastest). Penalized
/// fits are bias-corrected and use the sandwich variance unless
/// `model_variance` is set; unpenalized fits use (-hessian)^{-1}.
std::vector<SurfacePoint> pointwise_ci(const FitResult& fit, const VarianceEstimates* var, int l,
                                       std::span<const double> t_grid, std::span<const double> x_grid,
                                       double level = 0.95, bool model_variance = false);

}  // namespace bvcox
