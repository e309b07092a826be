#pragma once

#include <Eigen/Core>

#include <bit>
#include <cstdint>
#include <numeric>
#include <optional>
#include <string>
#include <vector>

#include "rdo/detail/sobol_directions.hpp"
#include "rdo/error.hpp"
#include "rdo/problem.hpp"
#include "rdo/random.hpp"

namespace rdo::sampling {

enum class Domain { UnitCube, USpace, XSpace };

/// L points (rows) in N dimensions (columns), tagged with their space.
struct SampleMatrix {
  Matrix points;
  Domain domain = Domain::UnitCube;

  Eigen::Index rows() const { return points.rows(); }
  Eigen::Index cols() const { return points.cols(); }
};

/// Latin hypercube sample: each dimension is cut into n equal strata and
/// every stratum receives exactly one point.
inline SampleMatrix lhs_sample(std::size_t n, const Box& bounds, std::uint64_t seed,
                               Domain domain = Domain::XSpace) {
  rdo::detail::require(n >= 1, "lhs_sample: need at least one point");
  for (Eigen::Index k = 0; k < bounds.size(); ++k)
    rdo::detail::require(bounds.lower[k] < bounds.upper[k],
                    "lhs_sample: degenerate interval in dimension " + std::to_string(k));
  Rng rng = make_rng(seed, {0x4c4853});
  const auto rows = static_cast<Eigen::Index>(n);
  SampleMatrix s{Matrix(rows, bounds.size()), domain};
  std::vector<std::size_t> perm(n);
  for (Eigen::Index k = 0; k < bounds.size(); ++k) {
    std::iota(perm.begin(), perm.end(), std::size_t{0});
    // Fisher-Yates with an explicit bounded draw keeps the output identical
    // across standard library implementations.
    for (std::size_t i = n; i > 1; --i) {
      const std::size_t j = static_cast<std::size_t>(uniform01(rng) * static_cast<double>(i));
      std::swap(perm[i - 1], perm[std::min(j, i - 1)]);
    }
    const double lo = bounds.lower[k];
    const double width = bounds.upper[k] - lo;
    for (Eigen::Index i = 0; i < rows; ++i) {
      const double unit = (static_cast<double>(perm[static_cast<std::size_t>(i)]) + uniform01(rng)) /
                          static_cast<double>(n);
      s.points(i, k) = lo + width * unit;
    }
  }
  return s;
}

inline SampleMatrix lhs_unit(std::size_t n, std::size_t dim, std::uint64_t seed) {
  const auto d = static_cast<Eigen::Index>(dim);
  return lhs_sample(n, Box(Vector::Zero(d), Vector::Ones(d)), seed, Domain::UnitCube);
}

/// Sobol generator (Joe-Kuo direction numbers, Gray-code order). Point 0 is
/// the origin, point 1 is (0.5, ..., 0.5). An optional digital shift
/// (XOR with a seeded random word per dimension) scrambles the sequence.
class SobolSequence {
 public:
  static constexpr int kBits = 32;

  explicit SobolSequence(std::size_t dim, std::optional<std::uint64_t> scramble_seed = std::nullopt) : dim_(dim) {
    rdo::detail::require(dim >= 1, "sobol: dimension must be at least 1");
    if (dim > detail::kSobolMaxDim)
      throw InvalidArgument("sobol: dimension " + std::to_string(dim) + " exceeds the direction-number table (max " +
                            std::to_string(detail::kSobolMaxDim) + ")");
    directions_.resize(dim * kBits);
    for (std::size_t j = 0; j < dim; ++j) init_dimension(j);
    shift_.assign(dim, 0u);
    if (scramble_seed) {
      Rng rng = make_rng(*scramble_seed, {0x534f424f4c});
      for (auto& s : shift_) s = static_cast<std::uint32_t>(rng() >> 32);
    }
    state_.assign(dim, 0u);
  }

  std::size_t dim() const { return dim_; }

  /// Writes the next point into `out` (length dim).
  void next(double* out) {
    for (std::size_t j = 0; j < dim_; ++j) out[j] = static_cast<double>(state_[j] ^ shift_[j]) * 0x1.0p-32;
    ++index_;
    const int c = std::countr_zero(index_);
    if (c >= kBits) throw Error("sobol: sequence exhausted");
    for (std::size_t j = 0; j < dim_; ++j) state_[j] ^= directions_[j * kBits + static_cast<std::size_t>(c)];
  }

 private:
  void init_dimension(std::size_t j) {
    std::uint32_t* v = &directions_[j * kBits];
    if (j == 0) {
      for (int k = 0; k < kBits; ++k) v[k] = 1u << (kBits - 1 - k);
      return;
    }
    const auto& entry = detail::kSobolDirections[j];
    const int degree = static_cast<int>(entry.degree);
    std::vector<std::uint64_t> m(kBits);
    for (int k = 0; k < degree; ++k) m[static_cast<std::size_t>(k)] = entry.m[static_cast<std::size_t>(k)];
    for (int k = degree; k < kBits; ++k) {
      std::uint64_t value = m[static_cast<std::size_t>(k - degree)];
      for (int l = 0; l < degree; ++l) {
        if ((entry.poly >> (degree - 1 - l)) & 1u)
          value ^= m[static_cast<std::size_t>(k - l - 1)] << (l + 1);
      }
      m[static_cast<std::size_t>(k)] = value;
    }
    for (int k = 0; k < kBits; ++k)
      v[k] = static_cast<std::uint32_t>(m[static_cast<std::size_t>(k)] << (kBits - 1 - k));
  }

  std::size_t dim_;
  std::vector<std::uint32_t> directions_;
  std::vector<std::uint32_t> shift_;
  std::vector<std::uint32_t> state_;
  std::uint64_t index_ = 0;
};

/// First n points of the Sobol sequence in [0,1]^dim.
inline SampleMatrix sobol_sample(std::size_t n, std::size_t dim,
                                 std::optional<std::uint64_t> scramble_seed = std::nullopt) {
  SobolSequence seq(dim, scramble_seed);
  // Row-major scratch so each point is written contiguously.
  Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor> buf(static_cast<Eigen::Index>(n),
                                                                              static_cast<Eigen::Index>(dim));
  for (Eigen::Index i = 0; i < buf.rows(); ++i) seq.next(buf.row(i).data());
  return {Matrix(buf), Domain::UnitCube};
}

/// Maps a U-space point (uniform on [0,1]^N) to x-space at design d through
/// the marginal inverse CDFs.
inline Vector inverse_transform(const Eigen::Ref<const Vector>& u, const Vector& design, const RdoProblem& problem) {
  rdo::detail::require(static_cast<std::size_t>(u.size()) == problem.input_dim(),
                  "inverse_transform: u has the wrong dimension");
  Vector x(u.size());
  for (Eigen::Index i = 0; i < u.size(); ++i) {
    if (!(u[i] >= 0.0 && u[i] <= 1.0)) throw InvalidArgument("inverse_transform: u outside [0, 1]");
    x[i] = problem.marginals[static_cast<std::size_t>(i)].quantile(u[i], design);
  }
  return x;
}

/// Row-wise inverse_transform.
inline SampleMatrix inverse_transform(const SampleMatrix& u, const Vector& design, const RdoProblem& problem) {
  SampleMatrix x{Matrix(u.rows(), u.cols()), Domain::XSpace};
  for (Eigen::Index r = 0; r < u.rows(); ++r) x.points.row(r) = inverse_transform(u.points.row(r).transpose(), design, problem).transpose();
  return x;
}

/// Forward map x -> u (marginal CDFs at design d).
inline Vector forward_transform(const Eigen::Ref<const Vector>& x, const Vector& design, const RdoProblem& problem) {
  Vector u(x.size());
  for (Eigen::Index i = 0; i < x.size(); ++i) u[i] = problem.marginals[static_cast<std::size_t>(i)].cdf(x[i], design);
  return u;
}

}  // namespace rdo::sampling
