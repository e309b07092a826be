#pragma once

#include <Eigen/Core>
#include <Eigen/QR>

#include <cmath>
#include <cstdint>
#include <map>
#include <memory>
#include <mutex>
#include <string>
#include <tuple>
#include <utility>
#include <vector>

#include "rdo/error.hpp"
#include "rdo/problem.hpp"
#include "rdo/sampling.hpp"

namespace rdo::pdd {

/// One basis term: variable index -> polynomial order (>= 1), sorted by
/// variable. The empty multi-index is the constant term.
using MultiIndex = std::vector<std::pair<std::size_t, unsigned>>;

struct BasisIndexSet {
  std::size_t num_variables = 0;
  std::size_t interaction_order = 0;  // S
  std::size_t polynomial_order = 0;   // m
  std::vector<MultiIndex> entries;

  std::size_t size() const { return entries.size(); }
};

inline std::uint64_t binomial(std::uint64_t n, std::uint64_t k) {
  if (k > n) return 0;
  k = std::min(k, n - k);
  std::uint64_t r = 1;
  for (std::uint64_t i = 1; i <= k; ++i) r = r * (n - k + i) / i;
  return r;
}

/// L_{N,S,m} = 1 + sum_{s=1..S} C(N,s) C(m,s).
inline std::uint64_t basis_count(std::size_t n, std::size_t s, std::size_t m) {
  std::uint64_t total = 1;
  for (std::size_t k = 1; k <= s; ++k) total += binomial(n, k) * binomial(m, k);
  return total;
}

namespace detail {

// All order vectors of length `len` with entries >= 1 and sum <= m, lexicographic.
inline void orders(std::size_t len, std::size_t m, std::vector<unsigned>& cur, std::vector<std::vector<unsigned>>& out) {
  if (cur.size() == len) {
    out.push_back(cur);
    return;
  }
  std::size_t used = 0;
  for (unsigned j : cur) used += j;
  const std::size_t remaining = len - cur.size() - 1;
  for (std::size_t j = 1; used + j + remaining <= m; ++j) {
    cur.push_back(static_cast<unsigned>(j));
    orders(len, m, cur, out);
    cur.pop_back();
  }
}

}  // namespace detail

/// Enumerates the S-variate, m-th order index set. Ordering: constant term,
/// then by interaction size, variable subset (lexicographic) and orders.
inline BasisIndexSet enumerate_basis(std::size_t n, std::size_t s, std::size_t m) {
  if (s < 1 || s > n) throw InvalidArgument("enumerate_basis: need 1 <= S <= N");
  if (m < s) throw InvalidArgument("enumerate_basis: need m >= S");
  BasisIndexSet set{n, s, m, {}};
  set.entries.reserve(basis_count(n, s, m));
  set.entries.emplace_back();
  for (std::size_t size = 1; size <= s; ++size) {
    std::vector<std::vector<unsigned>> order_sets;
    std::vector<unsigned> cur;
    detail::orders(size, m, cur, order_sets);
    // Subsets of {0..n-1} of the given size in lexicographic order.
    std::vector<std::size_t> subset(size);
    for (std::size_t i = 0; i < size; ++i) subset[i] = i;
    while (true) {
      for (const auto& ord : order_sets) {
        MultiIndex idx;
        for (std::size_t i = 0; i < size; ++i) idx.emplace_back(subset[i], ord[i]);
        set.entries.push_back(std::move(idx));
      }
      std::size_t i = size;
      while (i > 0 && subset[i - 1] == n - size + i - 1) --i;
      if (i == 0) break;
      ++subset[i - 1];
      for (std::size_t j = i; j < size; ++j) subset[j] = subset[j - 1] + 1;
    }
  }
  return set;
}

/// Degree-j polynomial orthonormal w.r.t. the uniform density on
/// [lower, upper] (scaled Legendre: sqrt(2j+1) P_j(t), t in [-1, 1]).
inline double orthonormal_poly(unsigned j, double u, Interval interval = {0.0, 1.0}) {
  constexpr double kSlack = 1e-12;
  const double w = interval.width();
  if (!(u >= interval.lower - kSlack * w && u <= interval.upper + kSlack * w))
    throw InvalidArgument("orthonormal_poly: u lies outside its interval");
  if (j == 0) return 1.0;
  const double t = 2.0 * (u - interval.lower) / w - 1.0;
  double p0 = 1.0, p1 = t;
  for (unsigned k = 1; k < j; ++k) {
    const double p2 = ((2.0 * k + 1.0) * t * p1 - k * p0) / (k + 1.0);
    p0 = p1;
    p1 = p2;
  }
  return std::sqrt(2.0 * j + 1.0) * p1;
}

/// Values psi_0..psi_m at u (all orders at once).
inline void orthonormal_polys(unsigned m, double u, Interval interval, double* out) {
  const double t = 2.0 * (u - interval.lower) / interval.width() - 1.0;
  double p0 = 1.0, p1 = t;
  out[0] = 1.0;
  if (m >= 1) out[1] = std::sqrt(3.0) * t;
  for (unsigned k = 1; k < m; ++k) {
    const double p2 = ((2.0 * k + 1.0) * t * p1 - k * p0) / (k + 1.0);
    p0 = p1;
    p1 = p2;
    out[k + 1] = std::sqrt(2.0 * (k + 1) + 1.0) * p2;
  }
}

/// A[l][i] = prod_{k in u_i} psi_{j_k}(u^(l)_k). Requires rows >= basis size
/// unless `allow_underdetermined` is set.
inline Matrix build_basis_matrix(const sampling::SampleMatrix& samples, const BasisIndexSet& index_set,
                                 Interval interval = {0.0, 1.0}, bool allow_underdetermined = false) {
  rdo::detail::require(static_cast<std::size_t>(samples.cols()) == index_set.num_variables,
                       "build_basis_matrix: sample dimension does not match the index set");
  if (!allow_underdetermined && static_cast<std::size_t>(samples.rows()) < index_set.size())
    throw InvalidArgument("build_basis_matrix: underdetermined system (" + std::to_string(samples.rows()) +
                          " samples for " + std::to_string(index_set.size()) + " basis functions)");
  const unsigned m = static_cast<unsigned>(index_set.polynomial_order);
  const Eigen::Index n = samples.cols();
  Matrix a(samples.rows(), static_cast<Eigen::Index>(index_set.size()));
  std::vector<double> psi(static_cast<std::size_t>(n) * (m + 1));
  for (Eigen::Index r = 0; r < samples.rows(); ++r) {
    for (Eigen::Index k = 0; k < n; ++k) {
      const double u = samples.points(r, k);
      (void)orthonormal_poly(0, u, interval);  // range check
      orthonormal_polys(m, u, interval, &psi[static_cast<std::size_t>(k) * (m + 1)]);
    }
    for (std::size_t c = 0; c < index_set.size(); ++c) {
      double v = 1.0;
      for (const auto& [var, order] : index_set.entries[c]) v *= psi[var * (m + 1) + order];
      a(r, static_cast<Eigen::Index>(c)) = v;
    }
  }
  return a;
}

struct FitDiagnostics {
  double residual_norm = 0.0;
  double condition_estimate = 1.0;
  Eigen::Index rank = 0;
  bool rank_deficient = false;
};

struct PddExpansion {
  std::shared_ptr<const BasisIndexSet> index_set;
  Vector coefficients;
  FitDiagnostics diagnostics;
};

struct Moments {
  double mean = 0.0;
  double variance = 0.0;

  double std_dev() const { return std::sqrt(variance); }
};

/// Least-squares solver for a fixed basis matrix. The orthogonal
/// factorization is computed once and reused for every right-hand side.
class LeastSquaresFit {
 public:
  explicit LeastSquaresFit(Matrix a) : a_(std::move(a)), cod_(a_) {
    rank_ = cod_.rank();
    const auto& qr = cod_.matrixQTZ();
    const Eigen::Index k = std::min(qr.rows(), qr.cols());
    double rmax = 0.0, rmin = std::numeric_limits<double>::infinity();
    for (Eigen::Index i = 0; i < k; ++i) {
      const double d = std::abs(qr(i, i));
      rmax = std::max(rmax, d);
      rmin = std::min(rmin, d);
    }
    condition_ = rmin > 0.0 ? rmax / rmin : std::numeric_limits<double>::infinity();
  }

  const Matrix& matrix() const { return a_; }
  Eigen::Index rank() const { return rank_; }
  bool rank_deficient() const { return rank_ < a_.cols(); }
  double condition_estimate() const { return condition_; }

  /// Minimum-norm least-squares solution of A c = b.
  Vector solve(const Vector& b) const {
    rdo::detail::require(b.size() == a_.rows(), "fit_pdd: response length does not match the basis matrix");
    if (!b.allFinite()) throw InvalidArgument("fit_pdd: non-finite response values");
    return cod_.solve(b);
  }

  FitDiagnostics diagnostics(const Vector& b, const Vector& c) const {
    return {(a_ * c - b).norm(), condition_, rank_, rank_deficient()};
  }

 private:
  Matrix a_;
  Eigen::CompleteOrthogonalDecomposition<Matrix> cod_;
  Eigen::Index rank_ = 0;
  double condition_ = 1.0;
};

/// Fits expansion coefficients minimising ||A c - b||_2 via an orthogonal
/// factorization. A rank-deficient A yields the minimum-norm solution with
/// `diagnostics.rank_deficient` set.
inline PddExpansion fit_pdd(const LeastSquaresFit& fit, const Vector& b,
                            std::shared_ptr<const BasisIndexSet> index_set = nullptr) {
  PddExpansion e;
  e.index_set = std::move(index_set);
  e.coefficients = fit.solve(b);
  e.diagnostics = fit.diagnostics(b, e.coefficients);
  if (!e.coefficients.allFinite()) throw NumericalError("fit_pdd: non-finite coefficients");
  return e;
}

inline PddExpansion fit_pdd(const Matrix& a, const Vector& b, std::shared_ptr<const BasisIndexSet> index_set = nullptr) {
  return fit_pdd(LeastSquaresFit(a), b, std::move(index_set));
}

/// Mean = constant coefficient; variance = sum of squares of the rest.
inline Moments pdd_moments(const Vector& coefficients) {
  rdo::detail::require(coefficients.size() >= 1, "pdd_moments: empty coefficient vector");
  const Eigen::Index rest = coefficients.size() - 1;
  return {coefficients[0], rest > 0 ? coefficients.tail(rest).squaredNorm() : 0.0};
}

inline Moments pdd_moments(const PddExpansion& e) { return pdd_moments(e.coefficients); }

/// max(10 L, 1000) regression samples.
inline std::size_t default_sample_count(std::size_t basis_size) { return std::max<std::size_t>(10 * basis_size, 1000); }

/// Everything fixed before optimisation starts: index set, Sobol U-sample,
/// basis matrix and its factorization.
struct PddContext {
  std::shared_ptr<const BasisIndexSet> index_set;
  sampling::SampleMatrix u_samples;
  std::shared_ptr<const LeastSquaresFit> fit;

  std::size_t num_variables() const { return index_set->num_variables; }

  PddExpansion fit_response(const Vector& b) const { return fit_pdd(*fit, b, index_set); }
};

/// Smallest power of two not below n.
inline std::size_t power_of_two_at_least(std::size_t n) {
  std::size_t p = 1;
  while (p < n) p <<= 1;
  return p;
}

/// Builds a context. `sample_count` 0 selects the default. Without a
/// scramble seed the count is rounded up to a power of two and every point
/// moves by half a cell, so each one-dimensional projection is the midpoint
/// grid and the u = 0 corner (the -3 sigma truncation edge) is never used.
/// With a seed the Sobol sequence is digitally shifted instead.
inline PddContext make_context(std::size_t n, std::size_t s, std::size_t m, std::size_t sample_count = 0,
                               std::optional<std::uint64_t> scramble_seed = std::nullopt) {
  auto set = std::make_shared<const BasisIndexSet>(enumerate_basis(n, s, m));
  if (sample_count == 0) sample_count = default_sample_count(set->size());
  PddContext ctx;
  ctx.index_set = set;
  if (scramble_seed) {
    ctx.u_samples = sampling::sobol_sample(sample_count, n, scramble_seed);
  } else {
    sample_count = power_of_two_at_least(sample_count);
    ctx.u_samples = sampling::sobol_sample(sample_count, n);
    ctx.u_samples.points.array() += 0.5 / static_cast<double>(sample_count);
  }
  ctx.u_samples.domain = sampling::Domain::USpace;
  ctx.fit = std::make_shared<const LeastSquaresFit>(build_basis_matrix(ctx.u_samples, *set));
  return ctx;
}

/// Process-wide cache keyed by (N, S, m, L, seed); the basis matrix is built
/// once per key and shared read-only.
inline std::shared_ptr<const PddContext> shared_context(std::size_t n, std::size_t s, std::size_t m,
                                                        std::size_t sample_count = 0,
                                                        std::optional<std::uint64_t> scramble_seed = std::nullopt) {
  using Key = std::tuple<std::size_t, std::size_t, std::size_t, std::size_t, bool, std::uint64_t>;
  static std::mutex mutex;
  static std::map<Key, std::shared_ptr<const PddContext>> cache;
  const Key key{n, s, m, sample_count, scramble_seed.has_value(), scramble_seed.value_or(0)};
  std::lock_guard lock(mutex);
  auto it = cache.find(key);
  if (it != cache.end()) return it->second;
  auto ctx = std::make_shared<const PddContext>(make_context(n, s, m, sample_count, scramble_seed));
  cache.emplace(key, ctx);
  return ctx;
}

}  // namespace rdo::pdd
