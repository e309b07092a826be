#pragma once

// Statistical moments at a design point: PDD on surrogate predictions
// (closed-form mean and variance from the fitted coefficients), PDD on the
// true model, and plain Monte Carlo.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "rdo/error.hpp"
#include "rdo/pdd.hpp"
#include "rdo/problem.hpp"
#include "rdo/random.hpp"
#include "rdo/sampling.hpp"
#include "rdo/surrogate.hpp"

namespace rdo {

struct MomentEstimate {
  double mean = 0.0;
  double std_dev = 0.0;
};

namespace detail {

/// Quantile of the marginal standardised to mean 0, std 1, before clipping.
inline double standard_quantile(const Marginal& m, double u) {
  if (m.kind == MarginalKind::Uniform) return m.lower_offset + u * (m.upper_offset - m.lower_offset);
  return TruncatedGaussian(0.0, 1.0, m.lower_offset, m.upper_offset).quantile(u);
}

inline bool clipped_at(const Marginal& m, double mu) {
  return mu + m.lower_offset * m.std_dev < m.clip_lower || mu + m.upper_offset * m.std_dev > m.clip_upper;
}

/// Fixed-order pairwise sum, bit-stable for a given input order.
inline double pairwise_sum(std::span<const double> v) {
  if (v.size() <= 8) {
    double s = 0.0;
    for (double x : v) s += x;
    return s;
  }
  const std::size_t h = v.size() / 2;
  return pairwise_sum(v.subspan(0, h)) + pairwise_sum(v.subspan(h));
}

}  // namespace detail

/// PDD moment estimator over a fixed Sobol U-sample. The U rows are mapped to
/// x-space at each design; when a marginal's support is not clipped by the
/// design box the map reduces to x = mu + sigma * z(u) with z precomputed.
class PddMomentEstimator {
 public:
  PddMomentEstimator(const RdoProblem& problem, std::shared_ptr<const pdd::PddContext> ctx)
      : problem_(&problem), ctx_(std::move(ctx)) {
    rdo::detail::require(ctx_ != nullptr, "moment estimator: missing PDD context");
    rdo::detail::require(ctx_->num_variables() == problem.input_dim(),
                         "moment estimator: PDD dimension does not match the problem");
    const Matrix& u = ctx_->u_samples.points;
    z_.resize(u.rows(), u.cols());
    for (Eigen::Index i = 0; i < u.cols(); ++i) {
      const Marginal& m = problem.marginals[static_cast<std::size_t>(i)];
      for (Eigen::Index r = 0; r < u.rows(); ++r) z_(r, i) = detail::standard_quantile(m, u(r, i));
    }
  }

  const pdd::PddContext& context() const { return *ctx_; }
  std::size_t sample_count() const { return static_cast<std::size_t>(z_.rows()); }

  /// Sobol rows mapped to x-space at `design`.
  Matrix x_samples(const Vector& design) const {
    rdo::detail::require(static_cast<std::size_t>(design.size()) == problem_->design_dim(),
                         "moment estimator: design has the wrong dimension");
    const Matrix& u = ctx_->u_samples.points;
    Matrix x(z_.rows(), z_.cols());
    for (Eigen::Index i = 0; i < z_.cols(); ++i) {
      const Marginal& m = problem_->marginals[static_cast<std::size_t>(i)];
      const double mu = m.mean(design);
      if (!detail::clipped_at(m, mu)) {
        x.col(i) = (mu + m.std_dev * z_.col(i).array()).matrix();
      } else {
        for (Eigen::Index r = 0; r < x.rows(); ++r) x(r, i) = m.quantile(u(r, i), design);
      }
    }
    return x;
  }

  MomentEstimate from_values(const Vector& b) const {
    const auto mo = pdd::pdd_moments(ctx_->fit_response(b));
    return {mo.mean, std::sqrt(std::max(mo.variance, 0.0))};
  }

  /// Moments of the surrogate's predictive mean at `design`.
  MomentEstimate estimate(const Surrogate& s, const Vector& design) const {
    if (s.input_dim() != problem_->input_dim()) throw InvalidArgument("moment estimator: surrogate dimension mismatch");
    return from_values(s.predict_mean(x_samples(design)));
  }

  /// Moments of every response, one surrogate each, sharing one x-sample.
  std::vector<MomentEstimate> estimate(const std::vector<SurrogatePtr>& models, const Vector& design) const {
    const Matrix x = x_samples(design);
    std::vector<MomentEstimate> out;
    for (const auto& s : models) {
      if (s->input_dim() != problem_->input_dim())
        throw InvalidArgument("moment estimator: surrogate dimension mismatch");
      out.push_back(from_values(s->predict_mean(x)));
    }
    return out;
  }

  /// PDD with responses from the true model (no surrogate).
  std::vector<MomentEstimate> estimate_exact(const CountingModel& model, const Vector& design,
                                             std::size_t threads = 1) const {
    const Matrix x = x_samples(design);
    Matrix y(x.rows(), static_cast<Eigen::Index>(model.responses()));
    parallel_for(static_cast<std::size_t>(x.rows()), threads, [&](std::size_t r) {
      const auto ri = static_cast<Eigen::Index>(r);
      Vector yr;
      try {
        yr = model(x.row(ri).transpose());
      } catch (const std::exception& e) {
        throw ModelEvaluationError(std::string("model evaluation failed: ") + e.what(), r);
      }
      y.row(ri) = yr.transpose();
    });
    std::vector<MomentEstimate> out;
    for (Eigen::Index l = 0; l < y.cols(); ++l) out.push_back(from_values(y.col(l)));
    return out;
  }

 private:
  const RdoProblem* problem_;
  std::shared_ptr<const pdd::PddContext> ctx_;
  Matrix z_;
};

// ---------------------------------------------------------------------------
// Monte Carlo

struct McsEstimate {
  double mean = 0.0;
  double std_dev = 0.0;    // unbiased sample std
  double std_error = 0.0;  // std_dev / sqrt(n)
  std::size_t n = 0;
};

/// Samples are drawn in fixed blocks with one stream per block, so the
/// first n samples of a larger run equal an n-sample run with the same seed.
inline constexpr std::size_t kMcsBlock = 4096;

/// X-space samples at `design`, rows [0, n).
inline Matrix mcs_inputs(const RdoProblem& problem, const Vector& design, std::size_t n, std::uint64_t seed) {
  rdo::detail::require(static_cast<std::size_t>(design.size()) == problem.design_dim(), "mcs: design dimension");
  const auto dim = static_cast<Eigen::Index>(problem.input_dim());
  Matrix x(static_cast<Eigen::Index>(n), dim);
  // Per-marginal samplers at this design.
  std::vector<TruncatedGaussian> tg(problem.input_dim());
  std::vector<Interval> sup(problem.input_dim());
  for (std::size_t i = 0; i < problem.input_dim(); ++i) {
    const Marginal& m = problem.marginals[i];
    sup[i] = m.support(design);
    if (m.kind == MarginalKind::TruncatedGaussian) tg[i] = TruncatedGaussian(m.mean(design), m.std_dev, sup[i].lower, sup[i].upper);
  }
  const std::size_t blocks = (n + kMcsBlock - 1) / kMcsBlock;
  for (std::size_t b = 0; b < blocks; ++b) {
    Rng rng = make_rng(seed, {0x4d4353, b});
    const std::size_t end = std::min(n, (b + 1) * kMcsBlock);
    for (std::size_t r = b * kMcsBlock; r < end; ++r)
      for (Eigen::Index i = 0; i < dim; ++i) {
        const auto ii = static_cast<std::size_t>(i);
        const double u = uniform01(rng);
        x(static_cast<Eigen::Index>(r), i) = problem.marginals[ii].kind == MarginalKind::Uniform
                                                 ? sup[ii].lower + u * sup[ii].width()
                                                 : tg[ii].quantile(u);
      }
  }
  return x;
}

inline McsEstimate mcs_summary(const std::vector<double>& y) {
  McsEstimate e;
  e.n = y.size();
  rdo::detail::require(e.n >= 2, "mcs: need at least two samples");
  const double nd = static_cast<double>(e.n);
  e.mean = detail::pairwise_sum(y) / nd;
  std::vector<double> d2(y.size());
  for (std::size_t i = 0; i < y.size(); ++i) d2[i] = (y[i] - e.mean) * (y[i] - e.mean);
  e.std_dev = std::sqrt(detail::pairwise_sum(d2) / (nd - 1.0));
  e.std_error = e.std_dev / std::sqrt(nd);
  return e;
}

/// Monte Carlo moments of every response at `design` from n true-model
/// samples. An evaluator failure is rethrown with the failing sample index.
inline std::vector<McsEstimate> mcs_moments(const CountingModel& model, const RdoProblem& problem,
                                            const Vector& design, std::size_t n, std::uint64_t seed,
                                            std::size_t threads = 1) {
  rdo::detail::require(n >= 2, "mcs_moments: need n >= 2");
  const Matrix x = mcs_inputs(problem, design, n, seed);
  const std::size_t k = model.responses();
  std::vector<std::vector<double>> y(k, std::vector<double>(n));
  parallel_for(n, threads, [&](std::size_t r) {
    Vector yr;
    try {
      yr = model(x.row(static_cast<Eigen::Index>(r)).transpose());
    } catch (const std::exception& e) {
      throw ModelEvaluationError(std::string("model evaluation failed at MCS sample ") + std::to_string(r) + ": " +
                                     e.what(),
                                 r);
    }
    for (std::size_t l = 0; l < k; ++l) y[l][r] = yr[static_cast<Eigen::Index>(l)];
  });
  std::vector<McsEstimate> out;
  for (const auto& col : y) out.push_back(mcs_summary(col));
  return out;
}

}  // namespace rdo
