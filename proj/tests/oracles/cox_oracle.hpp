#pragma once

// Plain stratified Cox model with Breslow ties, written with direct
// subject-by-subject loops. Serves as the reference for the K = Kx = 1
// reduction of the varying-coefficient model.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <stdexcept>
#include <vector>

#include <Eigen/Dense>

namespace oracle {

struct CoxData {
  std::vector<double> time;
  std::vector<int> status;   // 1 event, 0 censored
  std::vector<int> stratum;
  Eigen::MatrixXd x;         // n x d
};

struct CoxDerivatives {
  double value = 0.0;
  Eigen::VectorXd gradient;
  Eigen::MatrixXd hessian;
};

inline CoxDerivatives cox_derivatives(const CoxData& data, const Eigen::VectorXd& beta) {
  const std::size_t n = data.time.size();
  const Eigen::Index d = data.x.cols();
  CoxDerivatives out;
  out.gradient = Eigen::VectorXd::Zero(d);
  out.hessian = Eigen::MatrixXd::Zero(d, d);
  for (std::size_t i = 0; i < n; ++i) {
    if (data.status[i] != 1) continue;
    double s0 = 0.0;
    Eigen::VectorXd s1 = Eigen::VectorXd::Zero(d);
    Eigen::MatrixXd s2 = Eigen::MatrixXd::Zero(d, d);
    for (std::size_t r = 0; r < n; ++r) {
      if (data.stratum[r] != data.stratum[i] || data.time[r] < data.time[i]) continue;
      const Eigen::VectorXd xr = data.x.row(static_cast<Eigen::Index>(r)).transpose();
      const double e = std::exp(xr.dot(beta));
      s0 += e;
      s1 += e * xr;
      s2 += e * xr * xr.transpose();
    }
    const Eigen::VectorXd xi = data.x.row(static_cast<Eigen::Index>(i)).transpose();
    const Eigen::VectorXd mean = s1 / s0;
    out.value += xi.dot(beta) - std::log(s0);
    out.gradient += xi - mean;
    out.hessian -= s2 / s0 - mean * mean.transpose();
  }
  return out;
}

struct CoxFit {
  Eigen::VectorXd beta;
  Eigen::MatrixXd covariance;  // inverse observed information
  double loglik = 0.0;
  int iterations = 0;
};

// Newton-Raphson with step halving from beta = 0.
inline CoxFit cox_fit(const CoxData& data, double tol = 1e-12, int max_iter = 100) {
  const Eigen::Index d = data.x.cols();
  CoxFit fit;
  fit.beta = Eigen::VectorXd::Zero(d);
  CoxDerivatives cur = cox_derivatives(data, fit.beta);
  for (int it = 0; it < max_iter; ++it) {
    fit.iterations = it + 1;
    const Eigen::VectorXd step = (-cur.hessian).ldlt().solve(cur.gradient);
    double scale = 1.0;
    Eigen::VectorXd next = fit.beta + step;
    CoxDerivatives trial = cox_derivatives(data, next);
    while (trial.value < cur.value - 1e-12 && scale > 1e-8) {
      scale *= 0.5;
      next = fit.beta + scale * step;
      trial = cox_derivatives(data, next);
    }
    fit.beta = next;
    cur = trial;
    if (step.lpNorm<Eigen::Infinity>() * scale < tol) break;
  }
  fit.loglik = cur.value;
  fit.covariance = (-cur.hessian).inverse();
  return fit;
}

struct BreslowStep {
  int stratum = 0;
  double time = 0.0;
  double increment = 0.0;
};

// One step per stratum and distinct event time, ordered by stratum then time.
inline std::vector<BreslowStep> breslow(const CoxData& data, const Eigen::VectorXd& beta) {
  const std::size_t n = data.time.size();
  std::vector<BreslowStep> steps;
  int max_stratum = 0;
  for (int g : data.stratum) max_stratum = std::max(max_stratum, g);
  for (int g = 0; g <= max_stratum; ++g) {
    std::vector<double> times;
    for (std::size_t i = 0; i < n; ++i) {
      if (data.stratum[i] == g && data.status[i] == 1) times.push_back(data.time[i]);
    }
    std::sort(times.begin(), times.end());
    times.erase(std::unique(times.begin(), times.end()), times.end());
    for (double t : times) {
      double events = 0.0;
      double denom = 0.0;
      for (std::size_t r = 0; r < n; ++r) {
        if (data.stratum[r] != g) continue;
        if (data.time[r] == t && data.status[r] == 1) events += 1.0;
        if (data.time[r] >= t) denom += std::exp(data.x.row(static_cast<Eigen::Index>(r)).dot(beta));
      }
      steps.push_back({g, t, events / denom});
    }
  }
  return steps;
}

inline double cumulative_baseline(const std::vector<BreslowStep>& steps, int stratum, double t) {
  double sum = 0.0;
  for (const auto& s : steps) {
    if (s.stratum == stratum && s.time <= t) sum += s.increment;
  }
  return sum;
}

struct CoxResiduals {
  Eigen::VectorXd martingale;
  Eigen::VectorXd deviance;
};

// Classical definitions: M = status - exp(x beta) Lambda0(X) and
// d = sign(M) sqrt(-2 [M + status log(status - M)]).
inline CoxResiduals cox_residuals(const CoxData& data, const Eigen::VectorXd& beta,
                                  const std::vector<BreslowStep>& steps) {
  const std::size_t n = data.time.size();
  CoxResiduals out;
  out.martingale.resize(static_cast<Eigen::Index>(n));
  out.deviance.resize(static_cast<Eigen::Index>(n));
  for (std::size_t i = 0; i < n; ++i) {
    const auto k = static_cast<Eigen::Index>(i);
    const double expected = std::exp(data.x.row(k).dot(beta)) * cumulative_baseline(steps, data.stratum[i], data.time[i]);
    const double m = data.status[i] - expected;
    double inner = m;
    if (data.status[i] == 1) inner += std::log(1.0 - m);
    const double radicand = std::max(-2.0 * inner, 0.0);
    out.martingale[k] = m;
    out.deviance[k] = (m > 0 ? 1.0 : (m < 0 ? -1.0 : 0.0)) * std::sqrt(radicand);
  }
  return out;
}

}  // namespace oracle
