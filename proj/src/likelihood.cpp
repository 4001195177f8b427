#include "bvcox/likelihood.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <sstream>

#include "bvcox/error.hpp"
#include "bvcox/parallel.hpp"

namespace bvcox {

CoefficientSet CoefficientSet::zeros(const TensorLayout& layout, int q) {
  return {Eigen::VectorXd::Zero(layout.size()), Eigen::VectorXd::Zero(q)};
}

CoefficientSet CoefficientSet::from_eta(const Eigen::Ref<const Eigen::VectorXd>& eta, int n_gamma) {
  if (n_gamma < 0 || n_gamma > eta.size()) throw ValidationError("from_eta: bad gamma length");
  return {eta.head(n_gamma), eta.tail(eta.size() - n_gamma)};
}

Eigen::VectorXd CoefficientSet::eta() const {
  Eigen::VectorXd out(dim());
  out << gamma, theta;
  return out;
}

Eigen::VectorXd CoefficientSet::block(const TensorLayout& layout, int l) const {
  if (l < 0 || l >= layout.p) throw ValidationError("covariate index out of range");
  return gamma.segment(static_cast<Eigen::Index>(l) * layout.block_size(), layout.block_size());
}

double linear_predictor(const Dataset& ds, std::size_t row, double t, const TensorBasis& basis,
                        const CoefficientSet& coeffs) {
  const TensorLayout layout = basis.layout(ds.p());
  if (coeffs.gamma.size() != layout.size() || coeffs.theta.size() != ds.q()) {
    throw ValidationError("linear_predictor: coefficient dimensions do not match the data");
  }
  const auto r = static_cast<Eigen::Index>(row);
  double lp = ds.w.row(r).dot(coeffs.theta);
  for (int l = 0; l < layout.p; ++l) {
    lp += ds.z(r, l) * eval_surface(basis, coeffs.block(layout, l), t, ds.modifier[row]);
  }
  return lp;
}

Eigen::MatrixXd reduced_features(const Dataset& ds, std::span<const std::size_t> rows, const TensorBasis& basis) {
  const int p = ds.p();
  const int q = ds.q();
  const int Kx = basis.modifier.size();
  Eigen::MatrixXd out = Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(rows.size()), p * Kx + q);
  for (std::size_t pos = 0; pos < rows.size(); ++pos) {
    const auto r = static_cast<Eigen::Index>(rows[pos]);
    const auto i = static_cast<Eigen::Index>(pos);
    const BasisWindow bx = eval_basis_window(basis.modifier, ds.modifier[rows[pos]]);
    for (int l = 0; l < p; ++l) {
      for (int a = 0; a < bx.count; ++a) out(i, l * Kx + bx.first + a) = ds.z(r, l) * bx[a];
    }
    for (int m = 0; m < q; ++m) out(i, p * Kx + m) = ds.w(r, m);
  }
  return out;
}

Eigen::VectorXd reduced_coefficients(const TensorBasis& basis, const TensorLayout& layout,
                                     const CoefficientSet& coeffs, double t) {
  const int pkx = layout.p * layout.Kx;
  const BasisWindow bt = eval_basis_window(basis.time, t);
  Eigen::VectorXd out(pkx + coeffs.theta.size());
  for (int a = 0; a < pkx; ++a) {
    double s = 0.0;
    for (int c = 0; c < bt.count; ++c) s += coeffs.gamma[a * layout.K + bt.first + c] * bt[c];
    out[a] = s;
  }
  out.tail(coeffs.theta.size()) = coeffs.theta;
  return out;
}

namespace {
constexpr std::size_t kItemsPerBlock = 64;
}

struct LikelihoodEvaluator::Partial {
  double value = 0.0;
  Eigen::VectorXd grad;
  Eigen::MatrixXd hess;  // upper triangle accumulated

  void reset(bool with_derivatives, int dim) {
    value = 0.0;
    if (with_derivatives) {
      grad.setZero(dim);
      hess.setZero(dim, dim);
    }
  }
};

LikelihoodEvaluator::LikelihoodEvaluator(const Dataset& ds, const RiskIndex& index, const TensorBasis& basis,
                                         int cause, int threads)
    : layout_(basis.layout(ds.p())), q_(ds.q()), cause_(cause), threads_(std::max(threads, 1)), n_(ds.n()) {
  basis.time.validate();
  basis.modifier.validate();
  if (cause < 1 || cause > ds.num_causes) throw ValidationError("cause code out of range");
  if (index.strata.size() != static_cast<std::size_t>(ds.num_strata())) {
    throw ValidationError("risk index does not match dataset");
  }
  const int p = layout_.p;
  reduced_ = p * layout_.Kx + q_;

  strata_.resize(index.strata.size());
  for (std::size_t g = 0; g < index.strata.size(); ++g) {
    const StratumRisk& src = index.strata[g];
    Stratum& dst = strata_[g];
    dst.row = src.order;
    dst.feature = reduced_features(ds, src.order, basis);
    for (const FailureGroup& group : src.failures[static_cast<std::size_t>(cause - 1)]) {
      Item item;
      item.stratum = static_cast<int>(g);
      item.time = group.time;
      item.at_risk = group.at_risk;
      item.events_begin = event_pos_.size();
      event_pos_.insert(event_pos_.end(), group.event_positions.begin(), group.event_positions.end());
      item.events_end = event_pos_.size();
      item.time_basis = eval_basis_window(basis.time, group.time);
      events_ += group.event_positions.size();
      items_.push_back(item);
    }
  }
}

void LikelihoodEvaluator::check_coeffs(const CoefficientSet& coeffs) const {
  if (coeffs.gamma.size() != layout_.size() || coeffs.theta.size() != q_) {
    throw ValidationError("coefficient dimensions do not match the model layout");
  }
  if (!coeffs.gamma.allFinite() || !coeffs.theta.allFinite()) {
    throw NumericalError("coefficients must be finite");
  }
}

void LikelihoodEvaluator::reduced_coefficients(const Item& item, const CoefficientSet& coeffs,
                                               Eigen::Ref<Eigen::VectorXd> out) const {
  const int K = layout_.K;
  const int pkx = layout_.p * layout_.Kx;
  const BasisWindow& bt = item.time_basis;
  for (int a = 0; a < pkx; ++a) {
    const double* g = coeffs.gamma.data() + static_cast<std::ptrdiff_t>(a) * K + bt.first;
    double s = 0.0;
    for (int c = 0; c < bt.count; ++c) s += g[c] * bt[c];
    out[a] = s;
  }
  out.tail(q_) = coeffs.theta;
}

namespace {

[[noreturn]] void overflow_error(int stratum, double time, std::size_t at_risk) {
  std::ostringstream msg;
  msg << "non-finite linear predictor in stratum " << stratum + 1 << " at failure time " << time
      << " (risk set of " << at_risk << " subjects); coefficients have diverged";
  throw NumericalError(msg.str());
}

}  // namespace

template <bool WithDerivatives>
void LikelihoodEvaluator::run(const CoefficientSet& coeffs, Partial& total) const {
  const int dim = this->dim();
  const int K = layout_.K;
  const int pkx = layout_.p * layout_.Kx;
  const int n_gamma = layout_.size();
  const Eigen::Index red = reduced_;
  const std::size_t n_blocks = (items_.size() + kItemsPerBlock - 1) / kItemsPerBlock;
  const std::size_t wave = static_cast<std::size_t>(threads_);

  total.reset(WithDerivatives, dim);
  std::vector<Partial> partials(std::min(wave, std::max<std::size_t>(n_blocks, 1)));

  for (std::size_t wave_start = 0; wave_start < n_blocks; wave_start += wave) {
    const std::size_t wave_blocks = std::min(wave, n_blocks - wave_start);
    parallel_for(wave_blocks, threads_, [&](std::size_t slot) {
      Partial& part = partials[slot];
      part.reset(WithDerivatives, dim);
      Eigen::VectorXd cred(red);
      Eigen::VectorXd lp;
      Eigen::VectorXd s1;
      Eigen::MatrixXd weighted;
      Eigen::MatrixXd va;
      Eigen::VectorXd ea;
      const std::size_t block = wave_start + slot;
      const std::size_t begin = block * kItemsPerBlock;
      const std::size_t end = std::min(items_.size(), begin + kItemsPerBlock);
      for (std::size_t it = begin; it < end; ++it) {
        const Item& item = items_[it];
        const Stratum& st = strata_[static_cast<std::size_t>(item.stratum)];
        const auto k = static_cast<Eigen::Index>(item.at_risk);
        const auto A = st.feature.topRows(k);
        reduced_coefficients(item, coeffs, cred);
        lp.noalias() = A * cred;
        const double max_lp = lp.maxCoeff();
        if (!std::isfinite(max_lp)) overflow_error(item.stratum, item.time, item.at_risk);
        lp.array() = (lp.array() - max_lp).exp();  // lp now holds the shifted weights
        const double s0 = lp.sum();
        if (!(s0 > 0.0) || !std::isfinite(s0)) overflow_error(item.stratum, item.time, item.at_risk);

        const auto d = static_cast<double>(item.events_end - item.events_begin);
        double event_lp = 0.0;
        for (std::size_t e = item.events_begin; e < item.events_end; ++e) {
          event_lp += A.row(static_cast<Eigen::Index>(event_pos_[e])).dot(cred);
        }
        part.value += event_lp - d * (max_lp + std::log(s0));

        if constexpr (WithDerivatives) {
          const double inv = 1.0 / s0;
          s1.noalias() = A.transpose() * lp;
          s1 *= inv;
          weighted = A.array().colwise() * lp.array();
          va.noalias() = weighted.transpose() * A;
          va *= d * inv;
          va.noalias() -= d * s1 * s1.transpose();
          ea = -d * s1;
          for (std::size_t e = item.events_begin; e < item.events_end; ++e) {
            ea += A.row(static_cast<Eigen::Index>(event_pos_[e])).transpose();
          }

          const BasisWindow& bt = item.time_basis;
          for (int a = 0; a < pkx; ++a) {
            for (int c = 0; c < bt.count; ++c) part.grad[a * K + bt.first + c] += ea[a] * bt[c];
          }
          for (int m = 0; m < q_; ++m) part.grad[n_gamma + m] += ea[pkx + m];

          // Upper triangle of -d Va expanded with b b^T on the gamma blocks.
          Eigen::MatrixXd& H = part.hess;
          for (int a = 0; a < pkx; ++a) {
            const int ra = a * K + bt.first;
            {
              const double v = va(a, a);
              for (int c1 = 0; c1 < bt.count; ++c1) {
                const double vb = v * bt[c1];
                for (int c2 = c1; c2 < bt.count; ++c2) H(ra + c1, ra + c2) -= vb * bt[c2];
              }
            }
            for (int b = a + 1; b < pkx; ++b) {
              const double v = va(a, b);
              const int rb = b * K + bt.first;
              for (int c1 = 0; c1 < bt.count; ++c1) {
                const double vb = v * bt[c1];
                for (int c2 = 0; c2 < bt.count; ++c2) H(ra + c1, rb + c2) -= vb * bt[c2];
              }
            }
            for (int m = 0; m < q_; ++m) {
              const double v = va(a, pkx + m);
              for (int c1 = 0; c1 < bt.count; ++c1) H(ra + c1, n_gamma + m) -= v * bt[c1];
            }
          }
          for (int m1 = 0; m1 < q_; ++m1) {
            for (int m2 = m1; m2 < q_; ++m2) H(n_gamma + m1, n_gamma + m2) -= va(pkx + m1, pkx + m2);
          }
        }
      }
    });
    for (std::size_t slot = 0; slot < wave_blocks; ++slot) {
      total.value += partials[slot].value;
      if constexpr (WithDerivatives) {
        total.grad += partials[slot].grad;
        total.hess += partials[slot].hess;
      }
    }
  }
  if constexpr (WithDerivatives) {
    total.hess.template triangularView<Eigen::StrictlyLower>() = total.hess.transpose();
  }
}

double LikelihoodEvaluator::value(const CoefficientSet& coeffs) const {
  check_coeffs(coeffs);
  Partial total;
  run<false>(coeffs, total);
  return total.value;
}

LikelihoodDerivatives LikelihoodEvaluator::derivatives(const CoefficientSet& coeffs) const {
  check_coeffs(coeffs);
  Partial total;
  run<true>(coeffs, total);
  return {total.value, std::move(total.grad), std::move(total.hess)};
}

std::vector<FailureTerm> LikelihoodEvaluator::failure_terms(const CoefficientSet& coeffs) const {
  check_coeffs(coeffs);
  std::vector<FailureTerm> out;
  out.reserve(items_.size());
  Eigen::VectorXd cred(reduced_);
  Eigen::VectorXd lp;
  for (const Item& item : items_) {
    const Stratum& st = strata_[static_cast<std::size_t>(item.stratum)];
    reduced_coefficients(item, coeffs, cred);
    lp.noalias() = st.feature.topRows(static_cast<Eigen::Index>(item.at_risk)) * cred;
    const double max_lp = lp.maxCoeff();
    if (!std::isfinite(max_lp)) overflow_error(item.stratum, item.time, item.at_risk);
    const double s0 = (lp.array() - max_lp).exp().sum();
    out.push_back({item.stratum, item.time, item.events_end - item.events_begin, max_lp + std::log(s0)});
  }
  return out;
}

double LikelihoodEvaluator::value_mixed(std::span<const CoefficientSet> sets, std::span<const int> group) const {
  if (sets.empty()) throw ValidationError("value_mixed: no coefficient sets");
  if (group.size() != n_) throw ValidationError("value_mixed: group vector must cover every subject");
  for (const auto& s : sets) check_coeffs(s);
  for (int g : group) {
    if (g < 0 || static_cast<std::size_t>(g) >= sets.size()) throw ValidationError("value_mixed: group out of range");
  }
  const auto n_sets = static_cast<Eigen::Index>(sets.size());
  Eigen::MatrixXd cred(reduced_, n_sets);
  Eigen::MatrixXd lp_all;
  Eigen::VectorXd lp;
  double value = 0.0;
  double block_value = 0.0;
  for (std::size_t it = 0; it < items_.size(); ++it) {
    const Item& item = items_[it];
    const Stratum& st = strata_[static_cast<std::size_t>(item.stratum)];
    const auto k = static_cast<Eigen::Index>(item.at_risk);
    for (Eigen::Index s = 0; s < n_sets; ++s) {
      reduced_coefficients(item, sets[static_cast<std::size_t>(s)], cred.col(s));
    }
    lp_all.noalias() = st.feature.topRows(k) * cred;
    lp.resize(k);
    for (Eigen::Index pos = 0; pos < k; ++pos) lp[pos] = lp_all(pos, group[st.row[static_cast<std::size_t>(pos)]]);
    const double max_lp = lp.maxCoeff();
    if (!std::isfinite(max_lp)) overflow_error(item.stratum, item.time, item.at_risk);
    const double s0 = (lp.array() - max_lp).exp().sum();
    const auto d = static_cast<double>(item.events_end - item.events_begin);
    double event_lp = 0.0;
    for (std::size_t e = item.events_begin; e < item.events_end; ++e) {
      event_lp += lp[static_cast<Eigen::Index>(event_pos_[e])];
    }
    block_value += event_lp - d * (max_lp + std::log(s0));
    if ((it + 1) % kItemsPerBlock == 0) {
      value += block_value;
      block_value = 0.0;
    }
  }
  return value + block_value;
}

double log_partial_likelihood(const Dataset& ds, const RiskIndex& index, const TensorBasis& basis,
                              const CoefficientSet& coeffs, int cause) {
  return LikelihoodEvaluator(ds, index, basis, cause).value(coeffs);
}

LikelihoodDerivatives derivatives(const Dataset& ds, const RiskIndex& index, const TensorBasis& basis,
                                  const CoefficientSet& coeffs, int cause) {
  return LikelihoodEvaluator(ds, index, basis, cause).derivatives(coeffs);
}

}  // namespace bvcox
