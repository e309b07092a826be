#include <gtest/gtest.h>

#include <cmath>
#include <atomic>
#include <limits>
#include <numbers>

#include "rdo/moments.hpp"

using namespace rdo;

namespace {

constexpr double kSigma = 1.0 / 300.0;

std::shared_ptr<const pdd::PddContext> context(std::size_t n) { return pdd::shared_context(n, 1, 3); }

/// E[cos(2 pi X)] and E[X^2] for X ~ N(0, s^2) truncated at +/- 3s, by
/// composite Simpson on the truncated density.
std::pair<double, double> truncated_cos_and_square(double s) {
  const int n = 20000;
  const double a = -3.0 * s, h = 6.0 * s / n;
  double z = 0.0, c = 0.0, q = 0.0;
  for (int i = 0; i <= n; ++i) {
    const double x = a + i * h;
    const double w = (i == 0 || i == n) ? 1.0 : (i % 2 ? 4.0 : 2.0);
    const double p = w * std::exp(-0.5 * x * x / (s * s));
    z += p;
    c += p * std::cos(2.0 * std::numbers::pi * x);
    q += p * x * x;
  }
  return {c / z, q / z};
}

/// Rastrigin mean at d = 0 for N inputs.
double rastrigin_mean_at_origin(std::size_t n) {
  const auto [c, q] = truncated_cos_and_square(kSigma);
  return static_cast<double>(n) * (10.0 + q - 10.0 * c);
}

RdoProblem linear_problem(std::size_t n) {
  RdoProblem p = problems::rastrigin(n);
  p.model = {[](const Vector& x) { return Vector::Constant(1, x.sum()); }, 1};
  return p;
}

}  // namespace

TEST(PddMoments, ConstantSurrogate) {
  const auto p = problems::rastrigin(2);
  const PddMomentEstimator est(p, context(2));
  const ExactSurrogate five([](const Vector&) { return 5.0; }, 2);
  const auto m = est.estimate(five, Vector{{1.0, -2.0}});
  EXPECT_NEAR(m.mean, 5.0, 1e-12);
  EXPECT_NEAR(m.std_dev, 0.0, 1e-7);
}

TEST(PddMoments, LinearSurrogateMeanIsTheSumOfDesigns) {
  const auto p = linear_problem(3);
  const PddMomentEstimator est(p, context(3));
  const ExactSurrogate lin([](const Vector& x) { return x.sum(); }, 3);
  const Vector d{{0.4, -1.3, 2.2}};
  const auto m = est.estimate(lin, d);
  EXPECT_NEAR(m.mean, d.sum(), 1e-6);
  // Variance of a sum of independent truncated Gaussians; a cubic in u misses
  // a little of the quantile's tail, so the std sits slightly low.
  const auto [c, q] = truncated_cos_and_square(kSigma);
  EXPECT_LE(m.std_dev, std::sqrt(3.0 * q));
  EXPECT_NEAR(m.std_dev, std::sqrt(3.0 * q), 0.01 * std::sqrt(3.0 * q));
}

TEST(PddMoments, ExactRastriginAtOriginMatchesTheAnalyticMean) {
  const auto p = problems::rastrigin(2);
  const PddMomentEstimator est(p, context(2));
  const ExactSurrogate f([](const Vector& x) { return rastrigin(x); }, 2);
  const double mean = est.estimate(f, Vector::Zero(2)).mean;
  EXPECT_NEAR(mean, 0.00438, 0.05 * 0.00438);
  // Untruncated closed form 2 (10 - 10 exp(-2 pi^2 s^2) + s^2).
  const double untruncated =
      2.0 * (10.0 - 10.0 * std::exp(-2.0 * std::numbers::pi * std::numbers::pi * kSigma * kSigma) + kSigma * kSigma);
  EXPECT_NEAR(mean, untruncated, 0.05 * untruncated);
  EXPECT_NEAR(mean, rastrigin_mean_at_origin(2), 1e-3 * mean);
}

TEST(PddMoments, ExactModelEqualsExactSurrogate) {
  const auto p = problems::rastrigin(2);
  const PddMomentEstimator est(p, context(2));
  const ExactSurrogate f([](const Vector& x) { return rastrigin(x); }, 2);
  const Vector d{{-1.5, 3.0}};
  CountingModel model(p.model);
  const auto a = est.estimate_exact(model, d, 3);
  const auto b = est.estimate(f, d);
  EXPECT_EQ(model.calls(), est.sample_count());
  EXPECT_DOUBLE_EQ(a[0].mean, b.mean);
  EXPECT_DOUBLE_EQ(a[0].std_dev, b.std_dev);
}

TEST(PddMoments, ClippedMarginalsUseTheFullQuantile) {
  // At the design bound half of each support is clipped away, so the mean
  // moves inside the box.
  const auto p = linear_problem(1);
  const PddMomentEstimator est(p, context(1));
  const ExactSurrogate lin([](const Vector& x) { return x.sum(); }, 1);
  const double mean = est.estimate(lin, Vector::Constant(1, problems::kRastriginBound)).mean;
  EXPECT_LT(mean, problems::kRastriginBound - 0.5 * kSigma);
  const Matrix x = est.x_samples(Vector::Constant(1, problems::kRastriginBound));
  EXPECT_LE(x.maxCoeff(), problems::kRastriginBound);
}

TEST(PddMoments, DimensionMismatchIsRejected) {
  const auto p = problems::rastrigin(2);
  EXPECT_THROW(PddMomentEstimator(p, context(3)), InvalidArgument);
  const PddMomentEstimator est(p, context(2));
  const ExactSurrogate f([](const Vector& x) { return x.sum(); }, 3);
  EXPECT_THROW(est.estimate(f, Vector::Zero(2)), InvalidArgument);
  EXPECT_THROW(est.x_samples(Vector::Zero(3)), InvalidArgument);
}

TEST(Mcs, ConstantModel) {
  auto p = problems::rastrigin(2);
  p.model = {[](const Vector&) { return Vector::Constant(1, 2.5); }, 1};
  const auto m = mcs_moments(CountingModel(p.model), p, Vector::Zero(2), 1000, 1)[0];
  EXPECT_NEAR(m.mean, 2.5, 1e-12);
  EXPECT_NEAR(m.std_dev, 0.0, 1e-12);
  EXPECT_NEAR(m.std_error, 0.0, 1e-12);
  EXPECT_EQ(m.n, 1000u);
}

TEST(Mcs, LinearModelMeanWithinThreeStandardErrors) {
  const auto p = linear_problem(3);
  const Vector d{{0.5, -2.0, 1.25}};
  const auto m = mcs_moments(CountingModel(p.model), p, d, 20000, 11)[0];
  EXPECT_LE(std::abs(m.mean - d.sum()), 3.0 * m.std_error);
}

TEST(Mcs, RastriginAtOriginWithinThreeStandardErrors) {
  const auto p = problems::rastrigin(2);
  const auto m = mcs_moments(CountingModel(p.model), p, Vector::Zero(2), 1'000'000, 3)[0];
  EXPECT_LE(std::abs(m.mean - rastrigin_mean_at_origin(2)), 3.0 * m.std_error);
  EXPECT_NEAR(m.mean, 0.00438, 0.05 * 0.00438);
}

TEST(Mcs, StandardErrorScalesWithInverseRootN) {
  const auto p = linear_problem(2);
  double ratio = 0.0;
  const int reps = 20;
  for (int r = 0; r < reps; ++r) {
    const auto a = mcs_moments(CountingModel(p.model), p, Vector::Zero(2), 2000, 100 + r)[0];
    const auto b = mcs_moments(CountingModel(p.model), p, Vector::Zero(2), 4000, 100 + r)[0];
    ratio += b.std_error / a.std_error;
  }
  ratio /= reps;
  EXPECT_GE(ratio, 0.9 / std::sqrt(2.0));
  EXPECT_LE(ratio, 1.1 / std::sqrt(2.0));
}

TEST(Mcs, StreamsAreNestedAndThreadIndependent) {
  const auto p = problems::rastrigin(2);
  const Vector d{{0.3, -0.7}};
  const Matrix small = mcs_inputs(p, d, 5000, 9);
  const Matrix large = mcs_inputs(p, d, 20000, 9);
  EXPECT_EQ(small, large.topRows(5000));
  const auto a = mcs_moments(CountingModel(p.model), p, d, 30000, 9, 1)[0];
  const auto b = mcs_moments(CountingModel(p.model), p, d, 30000, 9, 4)[0];
  EXPECT_EQ(a.mean, b.mean);
  EXPECT_EQ(a.std_dev, b.std_dev);
}

TEST(Mcs, NestedMeansApproachTheLinearValue) {
  const auto p = linear_problem(2);
  const Vector d{{1.0, 2.0}};
  double prev = std::numeric_limits<double>::infinity();
  int improved = 0;
  for (std::size_t n : {1000u, 4000u, 16000u, 64000u}) {
    const auto m = mcs_moments(CountingModel(p.model), p, d, n, 21)[0];
    EXPECT_LE(std::abs(m.mean - 3.0), 3.0 * m.std_error);
    if (std::abs(m.mean - 3.0) < prev) ++improved;
    prev = std::abs(m.mean - 3.0);
  }
  EXPECT_GE(improved, 2);
}

TEST(Mcs, SamplesStayInsideTheSupport) {
  const auto p = problems::rastrigin(2);
  const Vector d{{problems::kRastriginBound, 0.0}};
  const Matrix x = mcs_inputs(p, d, 10000, 5);
  EXPECT_LE(x.col(0).maxCoeff(), problems::kRastriginBound);
  EXPECT_GE(x.col(0).minCoeff(), problems::kRastriginBound - 3.0 * kSigma);
  EXPECT_LE((x.col(1).array().abs()).maxCoeff(), 3.0 * kSigma);
}

TEST(Mcs, FailureCarriesTheSampleIndex) {
  auto p = problems::rastrigin(1);
  std::atomic<int> calls{0};
  p.model = {[&calls](const Vector& x) {
               if (calls.fetch_add(1) == 17) throw std::runtime_error("diverged");
               return Vector::Constant(1, x[0]);
             },
             1};
  try {
    mcs_moments(CountingModel(p.model), p, Vector::Zero(1), 100, 1);
    FAIL() << "expected a model failure";
  } catch (const ModelEvaluationError& e) {
    EXPECT_EQ(e.sample_index(), 17u);
    EXPECT_NE(std::string(e.what()).find("sample 17"), std::string::npos);
  }
  EXPECT_THROW(mcs_moments(CountingModel(p.model), p, Vector::Zero(1), 1, 1), InvalidArgument);
}
