#pragma once

#include <Eigen/Core>

#include <algorithm>
#include <atomic>
#include <cmath>
#include <functional>
#include <limits>
#include <memory>
#include <numbers>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "rdo/error.hpp"
#include "rdo/normal.hpp"

namespace rdo {

using Vector = Eigen::VectorXd;
using Matrix = Eigen::MatrixXd;

struct Interval {
  double lower = 0.0;
  double upper = 1.0;

  double width() const { return upper - lower; }
  bool contains(double x) const { return x >= lower && x <= upper; }
};

/// Axis-aligned box [lower, upper] in design or input coordinates.
struct Box {
  Vector lower;
  Vector upper;

  Box() = default;
  Box(Vector lo, Vector hi) : lower(std::move(lo)), upper(std::move(hi)) {
    detail::require(lower.size() == upper.size(), "box: bound vectors differ in length");
  }

  Eigen::Index size() const { return lower.size(); }
  Interval interval(Eigen::Index k) const { return {lower[k], upper[k]}; }
  Vector center() const { return 0.5 * (lower + upper); }
  Vector range() const { return upper - lower; }

  bool contains(const Vector& x) const {
    if (x.size() != lower.size()) return false;
    return ((x.array() >= lower.array()) && (x.array() <= upper.array())).all();
  }

  void validate(const std::string& what) const {
    for (Eigen::Index k = 0; k < lower.size(); ++k) {
      if (!(std::isfinite(lower[k]) && std::isfinite(upper[k]) && lower[k] < upper[k]))
        throw InvalidArgument(what + ": bound " + std::to_string(k) + " requires lower < upper");
    }
  }
};

using DesignSpace = Box;

enum class MarginalKind { TruncatedGaussian, Uniform };

/// Marginal distribution of one input random variable. The support is
/// expressed relative to the mean (in units of std_dev) so that it moves with
/// a design-driven mean, then clipped to [clip_lower, clip_upper].
struct Marginal {
  MarginalKind kind = MarginalKind::TruncatedGaussian;
  std::optional<std::size_t> design_index;
  double fixed_mean = 0.0;
  double std_dev = 1.0;
  double lower_offset = -3.0;
  double upper_offset = 3.0;
  double clip_lower = -std::numeric_limits<double>::infinity();
  double clip_upper = std::numeric_limits<double>::infinity();

  /// Truncated Gaussian with mean d[k], truncated at mean +/- k_sigma * std_dev.
  static Marginal gaussian_driven(std::size_t k, double std_dev, double k_sigma = 3.0) {
    Marginal m;
    m.kind = MarginalKind::TruncatedGaussian;
    m.design_index = k;
    m.std_dev = std_dev;
    m.lower_offset = -k_sigma;
    m.upper_offset = k_sigma;
    return m;
  }

  static Marginal gaussian_fixed(double mean, double std_dev, double k_sigma = 3.0) {
    Marginal m = gaussian_driven(0, std_dev, k_sigma);
    m.design_index.reset();
    m.fixed_mean = mean;
    return m;
  }

  /// Uniform on [mean - half_width, mean + half_width] with mean d[k].
  static Marginal uniform_driven(std::size_t k, double half_width) {
    Marginal m;
    m.kind = MarginalKind::Uniform;
    m.design_index = k;
    m.std_dev = half_width / std::numbers::sqrt3;
    m.lower_offset = -std::numbers::sqrt3;
    m.upper_offset = std::numbers::sqrt3;
    return m;
  }

  static Marginal uniform_on(double lower, double upper) {
    detail::require(lower < upper, "uniform marginal: lower must be below upper");
    Marginal m = uniform_driven(0, 0.5 * (upper - lower));
    m.design_index.reset();
    m.fixed_mean = 0.5 * (lower + upper);
    return m;
  }

  Marginal& clipped_to(double lo, double hi) {
    clip_lower = lo;
    clip_upper = hi;
    return *this;
  }

  double mean(const Vector& design) const {
    if (!design_index) return fixed_mean;
    detail::require(static_cast<Eigen::Index>(*design_index) < design.size(),
                    "marginal: design index outside the design vector");
    return design[static_cast<Eigen::Index>(*design_index)];
  }

  Interval support_at_mean(double mu) const {
    const Interval s{std::max(mu + lower_offset * std_dev, clip_lower),
                     std::min(mu + upper_offset * std_dev, clip_upper)};
    if (!(s.lower < s.upper)) throw InvalidArgument("marginal: empty support after clipping");
    return s;
  }

  Interval support(const Vector& design) const { return support_at_mean(mean(design)); }

  /// Inverse CDF of the marginal at probability p, for the given design.
  double quantile(double p, const Vector& design) const {
    const double mu = mean(design);
    const Interval s = support_at_mean(mu);
    if (kind == MarginalKind::Uniform) {
      if (!(p >= 0.0 && p <= 1.0)) throw InvalidArgument("uniform quantile: p must lie in [0, 1]");
      return s.lower + p * s.width();
    }
    return TruncatedGaussian(mu, std_dev, s.lower, s.upper).quantile(p);
  }

  double cdf(double x, const Vector& design) const {
    const double mu = mean(design);
    const Interval s = support_at_mean(mu);
    if (kind == MarginalKind::Uniform) return std::clamp((x - s.lower) / s.width(), 0.0, 1.0);
    return TruncatedGaussian(mu, std_dev, s.lower, s.upper).cdf(x);
  }

  void validate(std::size_t design_dim) const {
    detail::require(std_dev > 0.0 && std::isfinite(std_dev), "marginal: std_dev must be positive");
    detail::require(lower_offset < upper_offset, "marginal: lower bound must be below upper bound");
    if (design_index)
      detail::require(*design_index < design_dim, "marginal: design index " + std::to_string(*design_index) +
                                                      " outside the design space");
  }
};

/// Black-box response model: maps an N-vector x to K+1 responses
/// (index 0 objective, 1..K constraints). Must be safe to call concurrently.
struct ResponseModel {
  std::function<Vector(const Vector&)> fn;
  std::size_t responses = 1;

  Vector operator()(const Vector& x) const { return fn(x); }
};

/// Wraps a ResponseModel and counts every true-model call.
class CountingModel {
 public:
  explicit CountingModel(ResponseModel model) : model_(std::move(model)) {}

  Vector operator()(const Vector& x) const {
    calls_.fetch_add(1, std::memory_order_relaxed);
    Vector y = model_(x);
    if (static_cast<std::size_t>(y.size()) != model_.responses)
      throw Error("model returned " + std::to_string(y.size()) + " responses, expected " +
                  std::to_string(model_.responses));
    return y;
  }

  std::size_t calls() const { return calls_.load(); }
  std::size_t responses() const { return model_.responses; }
  const ResponseModel& model() const { return model_; }

 private:
  ResponseModel model_;
  mutable std::atomic<std::size_t> calls_{0};
};

struct ObjectiveWeights {
  double w1 = 0.5;
  double w2 = 0.5;
};

/// Scaling factors frozen from the initial design.
struct Normalizers {
  double mean = 1.0;
  double std_dev = 1.0;
  /// Per-constraint scale (|initial mean| of each constraint response).
  std::vector<double> constraint_scale;
};

struct RdoProblem {
  std::string name;
  DesignSpace design;
  std::vector<Marginal> marginals;
  ResponseModel model;
  ObjectiveWeights weights;
  std::vector<double> alphas;

  std::size_t input_dim() const { return marginals.size(); }
  std::size_t design_dim() const { return static_cast<std::size_t>(design.size()); }
  std::size_t num_constraints() const { return alphas.size(); }

  void validate() const {
    design.validate("design space");
    const std::size_t m = design_dim();
    detail::require(m >= 1, "problem: empty design space");
    detail::require(input_dim() >= m, "problem: need at least as many random variables as design variables");
    std::vector<bool> driven(m, false);
    for (const auto& marg : marginals) {
      marg.validate(m);
      if (marg.design_index) driven[*marg.design_index] = true;
    }
    for (std::size_t k = 0; k < m; ++k)
      detail::require(driven[k], "problem: design variable " + std::to_string(k) + " drives no random variable");
    detail::require(weights.w1 >= 0.0 && weights.w2 >= 0.0 && std::abs(weights.w1 + weights.w2 - 1.0) < 1e-12,
                    "problem: weights must be nonnegative and sum to 1");
    for (double a : alphas) detail::require(a >= 0.0, "problem: constraint alphas must be nonnegative");
    detail::require(static_cast<bool>(model.fn), "problem: missing response model");
    detail::require(model.responses == alphas.size() + 1, "problem: model must return K+1 responses");
  }

  /// Box in x-space covering every marginal's support for designs in `region`.
  Box input_box(const Box& region) const {
    const auto n = static_cast<Eigen::Index>(input_dim());
    Vector lo(n), hi(n);
    for (Eigen::Index i = 0; i < n; ++i) {
      const Marginal& m = marginals[static_cast<std::size_t>(i)];
      if (m.design_index) {
        const auto k = static_cast<Eigen::Index>(*m.design_index);
        lo[i] = m.support_at_mean(region.lower[k]).lower;
        hi[i] = m.support_at_mean(region.upper[k]).upper;
      } else {
        const Interval s = m.support_at_mean(m.fixed_mean);
        lo[i] = s.lower;
        hi[i] = s.upper;
      }
    }
    return Box(lo, hi);
  }
};

/// Weighted-sum robust objective w1*mean/mu0 + w2*std/sigma0.
inline double evaluate_objective(double mean, double std_dev, const ObjectiveWeights& w, const Normalizers& n) {
  if (!std::isfinite(mean) || !std::isfinite(std_dev)) throw InvalidArgument("objective: non-finite moment");
  detail::require(std_dev >= 0.0, "objective: std_dev must be nonnegative");
  detail::require(n.mean != 0.0 && n.std_dev != 0.0, "objective: normalizers must be nonzero");
  return w.w1 * mean / n.mean + w.w2 * std_dev / n.std_dev;
}

/// alpha*std - mean; nonpositive means feasible.
inline double evaluate_constraint(double mean, double std_dev, double alpha) {
  if (!std::isfinite(mean) || !std::isfinite(std_dev) || !std::isfinite(alpha))
    throw InvalidArgument("constraint: non-finite input");
  detail::require(alpha >= 0.0 && std_dev >= 0.0, "constraint: alpha and std_dev must be nonnegative");
  return alpha * std_dev - mean;
}

inline double rastrigin(const Eigen::Ref<const Vector>& x) {
  double s = 10.0 * static_cast<double>(x.size());
  for (Eigen::Index i = 0; i < x.size(); ++i) s += x[i] * x[i] - 10.0 * std::cos(2.0 * std::numbers::pi * x[i]);
  return s;
}

namespace problems {

inline constexpr double kRastriginBound = 5.12;
inline constexpr double kRastriginStd = 0.01 / 3.0;

/// Rastrigin RDO benchmark: N = M, X_i ~ TN(d_i, (0.01/3)^2) truncated at
/// d_i +/- 3 sigma and clipped to the design box [-5.12, 5.12]^N.
inline RdoProblem rastrigin(std::size_t n) {
  detail::require(n >= 1, "rastrigin: dimension must be positive");
  RdoProblem p;
  p.name = "rastrigin" + std::to_string(n) + "d";
  const auto ni = static_cast<Eigen::Index>(n);
  p.design = Box(Vector::Constant(ni, -kRastriginBound), Vector::Constant(ni, kRastriginBound));
  for (std::size_t i = 0; i < n; ++i)
    p.marginals.push_back(Marginal::gaussian_driven(i, kRastriginStd).clipped_to(-kRastriginBound, kRastriginBound));
  p.model = {[](const Vector& x) { return Vector::Constant(1, rdo::rastrigin(x)); }, 1};
  return p;
}

/// Smooth bowl sum (x_i - 1)^2 on [-3, 3]^N with sigma = 0.05.
inline RdoProblem bowl(std::size_t n) {
  RdoProblem p;
  p.name = "bowl" + std::to_string(n) + "d";
  const auto ni = static_cast<Eigen::Index>(n);
  p.design = Box(Vector::Constant(ni, -3.0), Vector::Constant(ni, 3.0));
  for (std::size_t i = 0; i < n; ++i) p.marginals.push_back(Marginal::gaussian_driven(i, 0.05).clipped_to(-3.0, 3.0));
  p.model = {[](const Vector& x) { return Vector::Constant(1, (x.array() - 1.0).square().sum()); }, 1};
  return p;
}

/// Two-response problem exercising the constraint path: minimise the bowl
/// (x0-1)^2 + (x1-1)^2 subject to 3*std[y1] - E[y1] <= 0 with
/// y1 = x0 + x1 - limit. With the default limit the box center is infeasible
/// and the bowl optimum (1, 1) is feasible by about four std of y1; a limit
/// above 1.79 makes the constraint active at the optimum.
inline RdoProblem constrained_bowl(double limit = 1.5) {
  RdoProblem p;
  p.name = "constrained2d";
  p.design = Box(Vector::Constant(2, -2.0), Vector::Constant(2, 3.0));
  for (std::size_t i = 0; i < 2; ++i) p.marginals.push_back(Marginal::gaussian_driven(i, 0.05).clipped_to(-2.0, 3.0));
  p.model = {[limit](const Vector& x) {
               Vector y(2);
               y[0] = (x[0] - 1.0) * (x[0] - 1.0) + (x[1] - 1.0) * (x[1] - 1.0);
               y[1] = x[0] + x[1] - limit;
               return y;
             },
             2};
  p.alphas = {3.0};
  return p;
}

}  // namespace problems
}  // namespace rdo
