#pragma once

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>

#include "rdo/error.hpp"

namespace rdo {

inline double normal_pdf(double z) { return std::exp(-0.5 * z * z) / std::sqrt(2.0 * std::numbers::pi); }

/// Standard normal CDF.
inline double normal_cdf(double z) { return 0.5 * std::erfc(-z / std::numbers::sqrt2); }

/// Standard normal survival function 1 - Phi(z), accurate in the upper tail.
inline double normal_sf(double z) { return 0.5 * std::erfc(z / std::numbers::sqrt2); }

/// Standard normal quantile. Acklam's rational approximation (relative
/// error ~1e-9) followed by one Newton step on the erfc-based CDF.
inline double normal_quantile(double p) {
  if (!(p >= 0.0 && p <= 1.0)) throw InvalidArgument("normal_quantile: p must lie in [0, 1]");
  if (p == 0.0) return -std::numeric_limits<double>::infinity();
  if (p == 1.0) return std::numeric_limits<double>::infinity();

  static constexpr double a[] = {-3.969683028665376e+01, 2.209460984245205e+02, -2.759285104469687e+02,
                                 1.383577518672690e+02,  -3.066479806614716e+01, 2.506628277459239e+00};
  static constexpr double b[] = {-5.447609879822406e+01, 1.615858368580409e+02, -1.556989798598866e+02,
                                 6.680131188771972e+01, -1.328068155288572e+01};
  static constexpr double c[] = {-7.784894002430293e-03, -3.223964580411365e-01, -2.400758277161838e+00,
                                 -2.549732539343734e+00, 4.374664141464968e+00,  2.938163982698783e+00};
  static constexpr double d[] = {7.784695709041462e-03, 3.224671290700398e-01, 2.445134137142996e+00,
                                 3.754408661907416e+00};
  constexpr double p_low = 0.02425;

  double x;
  if (p < p_low) {
    const double q = std::sqrt(-2.0 * std::log(p));
    x = (((((c[0] * q + c[1]) * q + c[2]) * q + c[3]) * q + c[4]) * q + c[5]) /
        ((((d[0] * q + d[1]) * q + d[2]) * q + d[3]) * q + 1.0);
  } else if (p <= 1.0 - p_low) {
    const double q = p - 0.5;
    const double r = q * q;
    x = (((((a[0] * r + a[1]) * r + a[2]) * r + a[3]) * r + a[4]) * r + a[5]) * q /
        (((((b[0] * r + b[1]) * r + b[2]) * r + b[3]) * r + b[4]) * r + 1.0);
  } else {
    const double q = std::sqrt(-2.0 * std::log1p(-p));
    x = -(((((c[0] * q + c[1]) * q + c[2]) * q + c[3]) * q + c[4]) * q + c[5]) /
        ((((d[0] * q + d[1]) * q + d[2]) * q + d[3]) * q + 1.0);
  }

  // Newton refinement; the residual is taken on whichever tail keeps precision.
  const double pdf = normal_pdf(x);
  if (pdf > 0.0) {
    const double residual = (p < 0.5) ? normal_cdf(x) - p : (1.0 - p) - normal_sf(x);
    x -= residual / pdf;
  }
  return x;
}

/// Gaussian N(mean, std^2) restricted to [lower, upper].
struct TruncatedGaussian {
  double mean = 0.0;
  double std_dev = 1.0;
  double lower = -std::numeric_limits<double>::infinity();
  double upper = std::numeric_limits<double>::infinity();

  TruncatedGaussian() = default;
  TruncatedGaussian(double mean_, double std_dev_, double lower_, double upper_)
      : mean(mean_), std_dev(std_dev_), lower(lower_), upper(upper_) {
    if (!(std_dev > 0.0)) throw InvalidArgument("truncated Gaussian: std_dev must be positive");
    if (!(lower < upper)) throw InvalidArgument("truncated Gaussian: lower must be below upper");
    if (!(mass() > 0.0)) throw InvalidArgument("truncated Gaussian: no probability mass inside the bounds");
  }

  double alpha() const { return (lower - mean) / std_dev; }
  double beta() const { return (upper - mean) / std_dev; }

  /// Probability mass of the untruncated Gaussian inside [lower, upper].
  double mass() const {
    return upper_tail() ? normal_sf(alpha()) - normal_sf(beta()) : normal_cdf(beta()) - normal_cdf(alpha());
  }

  double cdf(double x) const {
    if (x <= lower) return 0.0;
    if (x >= upper) return 1.0;
    const double z = (x - mean) / std_dev;
    if (upper_tail()) return (normal_sf(alpha()) - normal_sf(z)) / mass();
    return (normal_cdf(z) - normal_cdf(alpha())) / mass();
  }

  /// Inverse CDF; p = 0 and p = 1 map to the truncation bounds.
  double quantile(double p) const {
    if (!(p >= 0.0 && p <= 1.0)) throw InvalidArgument("truncated Gaussian quantile: p must lie in [0, 1]");
    if (p == 0.0) return lower;
    if (p == 1.0) return upper;
    double z;
    if (upper_tail()) {
      // Both bounds right of the mean: work with survival probabilities.
      const double sa = normal_sf(alpha());
      z = -normal_quantile(sa - p * (sa - normal_sf(beta())));
    } else {
      const double ca = normal_cdf(alpha());
      z = normal_quantile(ca + p * (normal_cdf(beta()) - ca));
    }
    const double x = mean + std_dev * z;
    return std::clamp(x, lower, upper);
  }

 private:
  bool upper_tail() const { return alpha() > 0.0; }
};

}  // namespace rdo
