#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>

#include "rdo/bnn.hpp"
#include "rdo/bnn_io.hpp"

using namespace rdo;
using namespace rdo::bnn;

namespace {

struct SineData {
  Matrix x;
  Vector y;
};

SineData sine_data(int n, std::uint64_t seed) {
  SineData d{Matrix(n, 1), Vector(n)};
  Rng rng = make_rng(seed);
  for (int i = 0; i < n; ++i) {
    d.x(i, 0) = uniform01(rng);
    d.y[i] = std::sin(2.0 * std::numbers::pi * d.x(i, 0));
  }
  return d;
}

// Max relative error between the analytic ELBO gradient and central differences.
double gradient_check(const VariationalState& s0, const Matrix& x, const Vector& y, double kl_weight,
                      std::vector<Eigen::Index> indices = {}) {
  const auto analytic = elbo(s0, x, y, 3, kl_weight, 99).gradient;
  if (indices.empty())
    for (Eigen::Index i = 0; i < s0.params.size(); ++i) indices.push_back(i);
  double worst = 0.0;
  const double h = 1e-5;
  for (Eigen::Index i : indices) {
    VariationalState s = s0;
    s.params[i] = s0.params[i] + h;
    const double up = elbo(s, x, y, 3, kl_weight, 99).elbo;
    s.params[i] = s0.params[i] - h;
    const double down = elbo(s, x, y, 3, kl_weight, 99).elbo;
    const double fd = (up - down) / (2.0 * h);
    const double denom = std::max({std::abs(fd), std::abs(analytic[i]), 1e-6});
    worst = std::max(worst, std::abs(fd - analytic[i]) / denom);
  }
  return worst;
}

Architecture arch1(std::vector<std::size_t> hidden, Activation act = Activation::Tanh) {
  Architecture a;
  a.input_dim = 1;
  a.hidden = std::move(hidden);
  a.activation = act;
  return a;
}

}  // namespace

TEST(BnnInit, DeterministicAndCounted) {
  Architecture a;
  a.input_dim = 2;
  a.hidden = {32, 32};
  EXPECT_EQ(a.parameter_count(), 1185u);
  const auto s1 = bnn_init(a, 1.0, 5), s2 = bnn_init(a, 1.0, 5);
  EXPECT_EQ(s1.params, s2.params);
  EXPECT_EQ(s1.params.size(), 2 * 1185 + 1);
  const auto scales = rdo::bnn::detail::posterior_scales(s1, s1.layout());
  for (const auto& l : s1.layout().layers) {
    for (Eigen::Index i = 0; i < l.in * l.out; ++i) {
      EXPECT_GT(scales[l.w_rho + i], 0.0);
      EXPECT_LT(scales[l.w_rho + i], 0.1);
    }
  }
  EXPECT_THROW(bnn_init(a, 0.0, 1), InvalidArgument);
}

TEST(BnnKl, ClosedFormProperties) {
  EXPECT_EQ(kl_gaussian(0.3, 0.7, 0.3, 0.7), 0.0);
  for (double mq : {-1.0, 0.0, 0.5})
    for (double sq : {0.1, 1.0, 2.0}) {
      const double kl = kl_gaussian(mq, sq, 0.2, 1.3);
      EXPECT_GT(kl, 0.0);
    }
  // q == p exactly gives zero total KL.
  auto s = bnn_init(arch1({3}), 0.8, 1);
  const auto layout = s.layout();
  for (const auto& l : layout.layers) {
    s.params.segment(l.w_mu, l.in * l.out).setZero();
    s.params.segment(l.b_mu, l.out).setZero();
    s.params.segment(l.w_rho, l.in * l.out).setConstant(softplus_inverse(0.8));
    s.params.segment(l.b_rho, l.out).setConstant(softplus_inverse(0.8));
  }
  EXPECT_NEAR(kl_divergence(s), 0.0, 1e-12);
}

TEST(BnnElbo, CollapsedPosteriorIsGaussianLogLikelihood) {
  auto s = bnn_init(arch1({4}), 1.0, 2);
  const auto layout = s.layout();
  for (const auto& l : layout.layers) {
    s.params.segment(l.w_rho, l.in * l.out).setConstant(-std::numeric_limits<double>::infinity());
    s.params.segment(l.b_rho, l.out).setConstant(-std::numeric_limits<double>::infinity());
  }
  Matrix x(3, 1);
  x << 0.1, 0.4, 0.9;
  const Vector y{{1.0, -0.5, 2.0}};
  const auto e = elbo(s, x, y, 2, 0.0, 3);
  const Vector f = predict_at_posterior_mean(s, x);
  const double sn = s.noise_std();
  double ll = 0.0;
  for (int i = 0; i < 3; ++i) ll += -0.5 * std::log(2 * std::numbers::pi * sn * sn) - 0.5 * std::pow(y[i] - f[i], 2) / (sn * sn);
  EXPECT_NEAR(e.elbo, ll, 1e-10);
}

TEST(BnnElbo, GradientMatchesFiniteDifferencesTinyNetwork) {
  // 1 -> 1 -> 1: four weights/biases, each with (mu, rho), plus the noise parameter.
  auto s = bnn_init(arch1({1}), 1.0, 11);
  EXPECT_EQ(s.arch.parameter_count(), 4u);
  Matrix x(5, 1);
  x << -1.0, -0.3, 0.2, 0.8, 1.5;
  const Vector y{{0.3, -0.1, 0.5, 1.2, 0.7}};
  EXPECT_LT(gradient_check(s, x, y, 0.0), 1e-4);
  EXPECT_LT(gradient_check(s, x, y, 0.3), 1e-4);
}

TEST(BnnElbo, GradientMatchesFiniteDifferencesEveryParameterClass) {
  for (Activation act : {Activation::Tanh, Activation::SiLU, Activation::ReLU}) {
    Architecture a;
    a.input_dim = 2;
    a.hidden = {3, 2};
    a.activation = act;
    auto s = bnn_init(a, 0.7, 4);
    // Larger scales so the rho gradients are not negligible.
    const auto layout = s.layout();
    for (const auto& l : layout.layers) {
      s.params.segment(l.w_rho, l.in * l.out).setConstant(softplus_inverse(0.3));
      s.params.segment(l.b_rho, l.out).setConstant(softplus_inverse(0.2));
    }
    s.norm.x_mean = Vector{{0.1, -0.2}};
    s.norm.x_std = Vector{{0.9, 1.3}};
    s.norm.y_mean = 0.4;
    s.norm.y_std = 2.0;
    Matrix x(6, 2);
    x << 0.1, 0.2, -0.4, 0.9, 1.3, -0.7, 0.5, 0.5, -1.1, 0.0, 0.8, -0.3;
    const Vector y{{0.5, -1.0, 2.0, 0.3, -0.2, 1.1}};
    EXPECT_LT(gradient_check(s, x, y, 0.05), 1e-4) << to_string(act);
  }
}

TEST(BnnPredict, ZeroScalesGiveZeroVariance) {
  auto s = bnn_init(arch1({5}), 1.0, 3);
  const auto layout = s.layout();
  for (const auto& l : layout.layers) {
    s.params.segment(l.w_rho, l.in * l.out).setConstant(-std::numeric_limits<double>::infinity());
    s.params.segment(l.b_rho, l.out).setConstant(-std::numeric_limits<double>::infinity());
  }
  const auto p = bnn_predict(s, Vector(Vector::Constant(1, 0.3)), 10, 1);
  EXPECT_EQ(p.epistemic_variance, 0.0);
  EXPECT_TRUE(p.variance_available);
}

TEST(BnnPredict, SingleSampleFlagsVariance) {
  const auto s = bnn_init(arch1({5}), 1.0, 3);
  const auto p = bnn_predict(s, Vector(Vector::Constant(1, 0.3)), 1, 1);
  EXPECT_FALSE(p.variance_available);
  EXPECT_EQ(p.epistemic_variance, 0.0);
  EXPECT_THROW(bnn_predict(s, Vector(Vector::Constant(1, 0.3)), 0, 1), InvalidArgument);
}

TEST(BnnPredict, SampleStreamsCompose) {
  const auto s = bnn_init(arch1({8, 8}), 1.0, 3);
  Matrix x(4, 1);
  x << -1, 0, 0.5, 2;
  const auto full = bnn_predict_batch(s, x, 20, 77);
  const auto a = bnn_predict_batch(s, x, 10, 77, 0);
  const auto b = bnn_predict_batch(s, x, 10, 77, 10);
  EXPECT_LT((full.mean - 0.5 * (a.mean + b.mean)).cwiseAbs().maxCoeff(), 1e-12);
  // Batched and per-row predictions agree.
  for (Eigen::Index i = 0; i < 4; ++i) EXPECT_NEAR(bnn_predict(s, Vector(x.row(i)), 20, 77).mean, full.mean[i], 1e-12);
  EXPECT_TRUE((full.epistemic_variance.array() >= 0.0).all());
}

TEST(BnnTrain, ConstantTargetTrainsConstantPredictor) {
  Matrix x(20, 1);
  for (int i = 0; i < 20; ++i) x(i, 0) = i;
  const auto r = train_bnn(x, Vector::Constant(20, 7.0), arch1({4}), Hyperparameters{}, 1);
  EXPECT_TRUE(r.diagnostics.constant_output);
  const auto p = bnn_predict_batch(r.state, x, 5, 1);
  EXPECT_LT((p.mean.array() - 7.0).abs().maxCoeff(), 1e-3);
}

TEST(BnnTrain, RejectsTinyDatasets) {
  EXPECT_THROW(train_bnn(Matrix::Zero(1, 1), Vector::Zero(1), arch1({4}), {}, 1), InvalidArgument);
}

TEST(BnnTrain, DeterministicPerSeed) {
  const auto d = sine_data(40, 3);
  Hyperparameters hp;
  hp.epochs = 20;
  const auto a = train_bnn(d.x, d.y, arch1({8}), hp, 9);
  const auto b = train_bnn(d.x, d.y, arch1({8}), hp, 9);
  EXPECT_EQ(a.state.params, b.state.params);
  const auto c = train_bnn(d.x, d.y, arch1({8}), hp, 10);
  EXPECT_NE(a.state.params, c.state.params);
}

TEST(BnnTrain, OutputScalingIsEquivariant) {
  const auto d = sine_data(60, 4);
  Hyperparameters hp;
  hp.epochs = 30;
  const auto a = train_bnn(d.x, d.y, arch1({8}), hp, 2);
  const auto b = train_bnn(d.x, Vector(10.0 * d.y), arch1({8}), hp, 2);
  Matrix grid(50, 1);
  for (int i = 0; i < 50; ++i) grid(i, 0) = i / 49.0;
  const auto pa = bnn_predict_batch(a.state, grid, 16, 5), pb = bnn_predict_batch(b.state, grid, 16, 5);
  Eigen::Index amin, amax, bmin, bmax;
  pa.mean.minCoeff(&amin);
  pa.mean.maxCoeff(&amax);
  pb.mean.minCoeff(&bmin);
  pb.mean.maxCoeff(&bmax);
  EXPECT_EQ(amin, bmin);
  EXPECT_EQ(amax, bmax);
  EXPECT_LT((10.0 * pa.mean - pb.mean).cwiseAbs().maxCoeff(), 1e-8);
}

TEST(BnnTrain, SineRegressionAndExtrapolationUncertainty) {
  const auto d = sine_data(200, 1);
  Architecture arch;
  arch.input_dim = 1;
  const auto r = train_bnn(d.x, d.y, arch, Hyperparameters{}, 7);
  Matrix inside(100, 1), outside(50, 1);
  for (int i = 0; i < 100; ++i) inside(i, 0) = (i + 0.5) / 100.0;
  for (int i = 0; i < 50; ++i) outside(i, 0) = i < 25 ? -0.5 + 0.02 * i : 1.02 + 0.02 * (i - 25);
  const auto pin = bnn_predict_batch(r.state, inside, 200, 3);
  const auto pout = bnn_predict_batch(r.state, outside, 200, 3);
  const double rmse =
      std::sqrt((pin.mean.array() - (2.0 * std::numbers::pi * inside.array()).sin()).square().mean());
  EXPECT_LT(rmse, 0.05);
  EXPECT_GE(pout.epistemic_variance.array().sqrt().mean(), 2.0 * pin.epistemic_variance.array().sqrt().mean());
}

TEST(BnnTune, SinglePointSpaceAndBudgetOne) {
  const auto d = sine_data(40, 5);
  Hyperparameters base;
  base.epochs = 10;
  SearchSpace point{{3e-3, 3e-3}, {8}, {0.5, 0.5}, {0.2, 0.2}};
  const auto r = tune_hyperparameters(d.x, d.y, arch1({16}), base, point, 3, 1);
  EXPECT_EQ(r.hyper.learning_rate, 3e-3);
  EXPECT_EQ(r.arch.hidden[0], 8u);
  EXPECT_EQ(r.hyper.prior_std, 0.5);
  EXPECT_EQ(r.hyper.kl_weight, 0.2);
  const auto one = tune_hyperparameters(d.x, d.y, arch1({16}), base, SearchSpace{}, 1, 4);
  ASSERT_EQ(one.trials.size(), 1u);
  EXPECT_EQ(one.hyper.learning_rate, one.trials[0].hyper.learning_rate);
  EXPECT_THROW(tune_hyperparameters(d.x, d.y, arch1({16}), base, SearchSpace{}, 0, 4), InvalidArgument);
}

TEST(BnnTune, SelectedConfigNoWorseThanMedian) {
  const auto d = sine_data(200, 1);
  Hyperparameters base;
  base.epochs = 150;
  Architecture arch;
  arch.input_dim = 1;
  const auto r = tune_hyperparameters(d.x, d.y, arch, base, SearchSpace{}, 8, 21);
  Matrix test(100, 1);
  for (int i = 0; i < 100; ++i) test(i, 0) = (i + 0.5) / 100.0;
  const Vector truth = (2.0 * std::numbers::pi * test.array()).sin();
  std::vector<double> rmse;
  double selected = 0.0;
  for (std::size_t i = 0; i < r.trials.size(); ++i) {
    Architecture a = arch;
    std::fill(a.hidden.begin(), a.hidden.end(), r.trials[i].width);
    const auto t = train_bnn(d.x, d.y, a, r.trials[i].hyper, derive_seed(21, {0x5452, i}));
    const double e = std::sqrt((bnn_predict_batch(t.state, test, 64, 1).mean - truth).array().square().mean());
    rmse.push_back(e);
    if (i == r.best_trial) selected = e;
  }
  std::vector<double> sorted = rmse;
  std::sort(sorted.begin(), sorted.end());
  const double median = 0.5 * (sorted[3] + sorted[4]);
  EXPECT_LE(selected, median);
}

TEST(BnnIo, RoundTripIsExact) {
  const auto d = sine_data(30, 2);
  Hyperparameters hp;
  hp.epochs = 5;
  const auto r = train_bnn(d.x, d.y, arch1({6, 4}, Activation::SiLU), hp, 1);
  const auto path = (std::filesystem::temp_directory_path() / "rdo_bnn_state_test.json").string();
  save_state(r.state, path);
  const auto back = load_state(path);
  std::filesystem::remove(path);
  EXPECT_EQ(back.params, r.state.params);
  EXPECT_EQ(back.norm.x_mean, r.state.norm.x_mean);
  EXPECT_EQ(back.norm.y_std, r.state.norm.y_std);
  EXPECT_EQ(back.arch.activation, Activation::SiLU);
  Matrix x(3, 1);
  x << 0.1, 0.5, 0.9;
  EXPECT_EQ(bnn_predict_batch(back, x, 8, 2).mean, bnn_predict_batch(r.state, x, 8, 2).mean);
}

TEST(BnnIo, RejectsMalformedState) {
  auto j = state_to_json(bnn_init(arch1({3}), 1.0, 1));
  auto bad = j;
  bad["version"] = 99;
  EXPECT_THROW(state_from_json(bad), InvalidArgument);
  bad = j;
  bad["layers"][0]["weight_mu"] = nlohmann::json::array({1.0});
  EXPECT_THROW(state_from_json(bad), InvalidArgument);
  bad = j;
  bad.erase("prior_std");
  EXPECT_THROW(state_from_json(bad), InvalidArgument);
}
