#pragma once

// Gaussian-process regression with a Matern kernel (nu = 1.5 or 2.5).
// Targets are standardised internally; signal and noise variances are
// reported in response units.

#include <Eigen/Cholesky>
#include <Eigen/Core>

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <limits>
#include <numbers>
#include <string>
#include <vector>

#include "rdo/error.hpp"
#include "rdo/problem.hpp"
#include "rdo/random.hpp"

namespace rdo::gp {

struct Hyper {
  double signal_variance = 1.0;
  double length_scale = 1.0;
  double noise_variance = 1e-6;
  double nu = 2.5;
};

inline void check_nu(double nu) {
  if (nu != 1.5 && nu != 2.5) throw InvalidArgument("matern: nu must be 1.5 or 2.5");
}

/// Matern covariance as a function of the distance r.
inline double matern(double r, double signal_variance, double length_scale, double nu) {
  if (nu == 1.5) {
    const double a = std::sqrt(3.0) * r / length_scale;
    return signal_variance * (1.0 + a) * std::exp(-a);
  }
  const double a = std::sqrt(5.0) * r / length_scale;
  return signal_variance * (1.0 + a + a * a / 3.0) * std::exp(-a);
}

inline double matern_kernel(const Vector& x, const Vector& xp, double signal_variance, double length_scale, double nu) {
  rdo::detail::require(length_scale > 0.0, "matern: length scale must be positive");
  check_nu(nu);
  rdo::detail::require(x.size() == xp.size(), "matern: dimension mismatch");
  return matern((x - xp).norm(), signal_variance, length_scale, nu);
}

namespace detail {

inline Matrix kernel_matrix(const Matrix& a, const Matrix& b, double sv, double ls, double nu) {
  // Squared distances through the Gram trick, clamped against round-off.
  const Vector na = a.rowwise().squaredNorm(), nb = b.rowwise().squaredNorm();
  Matrix d2 = (-2.0 * a * b.transpose()).colwise() + na;
  d2.rowwise() += nb.transpose();
  const double c = (nu == 1.5 ? std::sqrt(3.0) : std::sqrt(5.0)) / ls;
  Eigen::ArrayXXd s = c * d2.array().max(0.0).sqrt();
  if (nu == 1.5) return (sv * (1.0 + s) * (-s).exp()).matrix();
  return (sv * (1.0 + s + s.square() / 3.0) * (-s).exp()).matrix();
}

}  // namespace detail

struct FitDiagnostics {
  double log_marginal_likelihood = -std::numeric_limits<double>::infinity();
  double jitter = 0.0;
  std::size_t likelihood_evaluations = 0;
};

class GpModel {
 public:
  GpModel() = default;

  /// Factorises the kernel matrix for fixed hyperparameters (response units).
  GpModel(Matrix x, const Vector& y, const Hyper& h) : x_(std::move(x)) {
    rdo::detail::require(x_.rows() >= 1 && x_.rows() == y.size(), "gp: inputs and targets must match");
    check_nu(h.nu);
    y_mean_ = y.mean();
    y_std_ = std::sqrt((y.array() - y_mean_).square().mean());
    if (!(y_std_ > 0.0)) y_std_ = 1.0;
    yn_ = (y.array() - y_mean_) / y_std_;
    const double v2 = y_std_ * y_std_;
    hyper_n_ = {h.signal_variance / v2, h.length_scale, h.noise_variance / v2, h.nu};
    if (!factorize(hyper_n_, &lml_))
      throw NumericalError("gp: kernel matrix not positive definite even with jitter 1e-4");
  }

  const Matrix& inputs() const { return x_; }
  std::size_t input_dim() const { return static_cast<std::size_t>(x_.cols()); }
  double log_marginal_likelihood() const { return lml_; }
  double jitter() const { return jitter_; }

  Hyper hyper() const {
    const double v2 = y_std_ * y_std_;
    return {hyper_n_.signal_variance * v2, hyper_n_.length_scale, hyper_n_.noise_variance * v2, hyper_n_.nu};
  }

  Vector predict_mean(const Matrix& x) const {
    check_dim(x);
    Vector out(x.rows());
    for (Eigen::Index r = 0; r < x.rows(); r += kBlock) {
      const Eigen::Index len = std::min(kBlock, x.rows() - r);
      const Matrix ks = detail::kernel_matrix(x.middleRows(r, len), x_, hyper_n_.signal_variance,
                                              hyper_n_.length_scale, hyper_n_.nu);
      out.segment(r, len) = ks * alpha_;
    }
    return (out.array() * y_std_ + y_mean_).matrix();
  }

  /// Latent posterior variance (without observation noise), clamped to [0, sigma^2].
  Vector predict_variance(const Matrix& x) const {
    check_dim(x);
    Vector var(x.rows());
    for (Eigen::Index r = 0; r < x.rows(); r += kBlock) {
      const Eigen::Index len = std::min(kBlock, x.rows() - r);
      Matrix v = detail::kernel_matrix(x_, x.middleRows(r, len), hyper_n_.signal_variance, hyper_n_.length_scale,
                                       hyper_n_.nu);
      llt_.matrixL().solveInPlace(v);
      var.segment(r, len) = (hyper_n_.signal_variance - v.colwise().squaredNorm().transpose().array())
                                .max(0.0)
                                .min(hyper_n_.signal_variance);
    }
    return var * (y_std_ * y_std_);
  }

  std::pair<double, double> predict(const Vector& x) const {
    const Matrix row = x.transpose();
    return {predict_mean(row)[0], predict_variance(row)[0]};
  }

  /// Log marginal likelihood of the standardised targets under `h` (standardised
  /// units); -inf when no jitter level makes the matrix positive definite.
  double log_marginal_likelihood_at(const Hyper& h) {
    double lml;
    return factorize(h, &lml) ? lml : -std::numeric_limits<double>::infinity();
  }

  /// Refactorises with standardised-unit hyperparameters.
  bool set_standardised_hyper(const Hyper& h) {
    hyper_n_ = h;
    return factorize(h, &lml_);
  }

  double y_std() const { return y_std_; }

 private:
  static constexpr Eigen::Index kBlock = 64;

  void check_dim(const Matrix& x) const {
    if (x.cols() != x_.cols()) throw InvalidArgument("gp: input dimension mismatch");
  }

  bool factorize(const Hyper& h, double* lml) {
    const Eigen::Index n = x_.rows();
    Matrix k = detail::kernel_matrix(x_, x_, h.signal_variance, h.length_scale, h.nu);
    k.diagonal().array() += h.noise_variance;
    for (double jitter : {0.0, 1e-10, 1e-9, 1e-8, 1e-7, 1e-6, 1e-5, 1e-4}) {
      Matrix kj = k;
      if (jitter > 0.0) kj.diagonal().array() += jitter;
      llt_.compute(kj);
      if (llt_.info() != Eigen::Success) continue;
      const auto& l = llt_.matrixLLT();
      if (!(l.diagonal().array() > 0.0).all() || !l.diagonal().allFinite()) continue;
      alpha_ = llt_.solve(yn_);
      jitter_ = jitter;
      *lml = -0.5 * yn_.dot(alpha_) - l.diagonal().array().log().sum() -
             0.5 * static_cast<double>(n) * std::log(2.0 * std::numbers::pi);
      return std::isfinite(*lml);
    }
    return false;
  }

  Matrix x_;
  Vector yn_;
  double y_mean_ = 0.0, y_std_ = 1.0;
  Hyper hyper_n_;
  Eigen::LLT<Matrix> llt_;
  Vector alpha_;
  double lml_ = -std::numeric_limits<double>::infinity();
  double jitter_ = 0.0;
};

struct FitConfig {
  double nu = 2.5;
  std::size_t restarts = 5;
  std::size_t max_sweeps = 60;
  double initial_step = 1.0;   // log-space
  double min_step = 1e-3;
  /// Length-scale search range as fractions of the largest input extent.
  double length_scale_lower = 1e-3;
  double length_scale_upper = 10.0;
};

struct FitResult {
  GpModel model;
  FitDiagnostics diagnostics;
};

/// Maximises the marginal likelihood over (log sigma^2, log l, log noise) by
/// coordinate search: each sweep tries +/- step along every coordinate and
/// halves the step when nothing improves. Restart 0 starts at `init`
/// (response units), later restarts at seeded random points.
inline FitResult gp_fit(const Matrix& x, const Vector& y, const Hyper& init, const FitConfig& cfg,
                        std::uint64_t seed) {
  rdo::detail::require(x.rows() >= 2 && x.rows() == y.size(), "gp_fit: need at least two samples");
  rdo::detail::require(x.allFinite() && y.allFinite(), "gp_fit: non-finite training data");
  check_nu(cfg.nu);
  rdo::detail::require(cfg.restarts >= 1, "gp_fit: need at least one restart");

  // Fixed hyper to set up standardisation; refit below.
  GpModel model(x, y, Hyper{std::max(init.signal_variance, 1e-12), init.length_scale, 1e-2, cfg.nu});
  const double v2 = model.y_std() * model.y_std();
  double extent = (x.colwise().maxCoeff() - x.colwise().minCoeff()).maxCoeff();
  if (!(extent > 0.0)) extent = 1.0;
  // Search box in standardised units.
  rdo::detail::require(cfg.length_scale_lower > 0.0 && cfg.length_scale_lower < cfg.length_scale_upper,
                       "gp_fit: invalid length-scale range");
  const double lo[3] = {std::log(1e-2), std::log(cfg.length_scale_lower * extent), std::log(1e-10)};
  const double hi[3] = {std::log(1e2), std::log(cfg.length_scale_upper * extent), std::log(1.0)};
  auto clamp3 = [&](std::array<double, 3>& t) {
    for (int i = 0; i < 3; ++i) t[i] = std::clamp(t[i], lo[i], hi[i]);
  };
  auto to_hyper = [&](const std::array<double, 3>& t) {
    return Hyper{std::exp(t[0]), std::exp(t[1]), std::exp(t[2]), cfg.nu};
  };

  FitDiagnostics diag;
  std::array<double, 3> best_t{};
  double best = -std::numeric_limits<double>::infinity();
  Rng rng = make_rng(seed, {0x4750});
  for (std::size_t r = 0; r < cfg.restarts; ++r) {
    std::array<double, 3> t;
    if (r == 0) {
      t = {std::log(std::max(init.signal_variance / v2, 1e-12)), std::log(init.length_scale),
           std::log(std::max(init.noise_variance / v2, 1e-12))};
    } else {
      for (int i = 0; i < 3; ++i) t[static_cast<std::size_t>(i)] = lo[i] + uniform01(rng) * (hi[i] - lo[i]);
    }
    clamp3(t);
    double f = model.log_marginal_likelihood_at(to_hyper(t));
    ++diag.likelihood_evaluations;
    double step = cfg.initial_step;
    for (std::size_t sweep = 0; sweep < cfg.max_sweeps && step >= cfg.min_step; ++sweep) {
      bool improved = false;
      for (std::size_t i = 0; i < 3; ++i) {
        for (double dir : {1.0, -1.0}) {
          auto c = t;
          c[i] += dir * step;
          clamp3(c);
          if (c[i] == t[i]) continue;
          const double fc = model.log_marginal_likelihood_at(to_hyper(c));
          ++diag.likelihood_evaluations;
          if (fc > f) {
            f = fc;
            t = c;
            improved = true;
            break;
          }
        }
      }
      if (!improved) step *= 0.5;
    }
    if (f > best) {
      best = f;
      best_t = t;
    }
  }
  if (!std::isfinite(best))
    throw NumericalError("gp_fit: no hyperparameters gave a positive-definite kernel matrix (" +
                         std::to_string(diag.likelihood_evaluations) + " evaluations)");
  if (!model.set_standardised_hyper(to_hyper(best_t))) throw NumericalError("gp_fit: refactorisation failed");
  diag.log_marginal_likelihood = model.log_marginal_likelihood();
  diag.jitter = model.jitter();
  return {std::move(model), diag};
}

}  // namespace rdo::gp
