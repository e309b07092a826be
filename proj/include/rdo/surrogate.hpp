#pragma once

// Surrogate models behind one interface: a predictive mean (used for moment
// estimation) and an epistemic variance (used for active learning).

#include <cstdint>
#include <functional>
#include <memory>
#include <optional>
#include <string>

#include "rdo/bnn.hpp"
#include "rdo/error.hpp"
#include "rdo/gp.hpp"
#include "rdo/problem.hpp"

namespace rdo {

class Surrogate {
 public:
  virtual ~Surrogate() = default;
  virtual std::size_t input_dim() const = 0;
  /// Predictive mean at each row of x.
  virtual Vector predict_mean(const Matrix& x) const = 0;
  /// Epistemic predictive variance at each row of x.
  virtual Vector predict_variance(const Matrix& x) const = 0;
  virtual std::string kind() const = 0;
};

using SurrogatePtr = std::shared_ptr<const Surrogate>;

/// Trains one single-response surrogate. `previous` (may be null) is the
/// model being replaced, for warm starts.
using SurrogateTrainer =
    std::function<SurrogatePtr(const Matrix& x, const Vector& y, std::uint64_t seed, const Surrogate* previous)>;

enum class SurrogateKind { Bnn, Gp };

inline const char* to_string(SurrogateKind k) { return k == SurrogateKind::Bnn ? "bnn" : "gp"; }

class BnnSurrogate final : public Surrogate {
 public:
  /// `moment_samples` 0: predict_mean uses the posterior-mean network;
  /// otherwise the average of that many fixed posterior draws.
  BnnSurrogate(bnn::VariationalState state, std::size_t predict_samples, std::size_t moment_samples,
               std::uint64_t seed)
      : state_(std::move(state)), predict_samples_(predict_samples), seed_(seed) {
    if (moment_samples > 0) ensemble_.emplace(state_, moment_samples, derive_seed(seed, {0x4d4f4d}));
  }
  // The ensemble points at state_.
  BnnSurrogate(const BnnSurrogate&) = delete;
  BnnSurrogate& operator=(const BnnSurrogate&) = delete;

  std::size_t input_dim() const override { return state_.arch.input_dim; }

  Vector predict_mean(const Matrix& x) const override {
    check(x);
    return ensemble_ ? ensemble_->mean(x) : bnn::predict_at_posterior_mean(state_, x);
  }

  Vector predict_variance(const Matrix& x) const override {
    check(x);
    return bnn::bnn_predict_batch(state_, x, predict_samples_, seed_).epistemic_variance;
  }

  std::string kind() const override { return "bnn"; }
  const bnn::VariationalState& state() const { return state_; }

 private:
  void check(const Matrix& x) const {
    if (static_cast<std::size_t>(x.cols()) != input_dim()) throw InvalidArgument("bnn surrogate: input dimension mismatch");
  }

  bnn::VariationalState state_;
  std::size_t predict_samples_;
  std::uint64_t seed_;
  std::optional<bnn::SampledEnsemble> ensemble_;
};

class GpSurrogate final : public Surrogate {
 public:
  explicit GpSurrogate(gp::GpModel model) : model_(std::move(model)) {}
  std::size_t input_dim() const override { return model_.input_dim(); }
  Vector predict_mean(const Matrix& x) const override { return model_.predict_mean(x); }
  Vector predict_variance(const Matrix& x) const override { return model_.predict_variance(x); }
  std::string kind() const override { return "gp"; }
  const gp::GpModel& model() const { return model_; }

 private:
  gp::GpModel model_;
};

/// Exact function wrapped as a zero-variance surrogate (testing and the
/// pdd-exact estimator).
class ExactSurrogate final : public Surrogate {
 public:
  ExactSurrogate(std::function<double(const Vector&)> f, std::size_t dim) : f_(std::move(f)), dim_(dim) {}
  std::size_t input_dim() const override { return dim_; }
  Vector predict_mean(const Matrix& x) const override {
    Vector out(x.rows());
    for (Eigen::Index i = 0; i < x.rows(); ++i) out[i] = f_(x.row(i).transpose());
    return out;
  }
  Vector predict_variance(const Matrix& x) const override { return Vector::Zero(x.rows()); }
  std::string kind() const override { return "exact"; }

 private:
  std::function<double(const Vector&)> f_;
  std::size_t dim_;
};

struct BnnTrainerConfig {
  bnn::Architecture arch;
  bnn::Hyperparameters hyper;
  bnn::SearchSpace search;
  std::size_t tune_budget = 16;
  bool tune = true;
  std::size_t predict_samples = 200;
  std::size_t moment_samples = 0;
  /// Epochs when continuing from the previous model inside one region.
  std::size_t retrain_epochs = 100;
};

/// BNN trainer. With tuning enabled, hyperparameters are searched on the
/// first dataset it sees and reused for every later training. A retrain that
/// replaces a BNN of the same shape continues from its parameters.
class BnnTrainer {
 public:
  explicit BnnTrainer(BnnTrainerConfig cfg) : cfg_(std::move(cfg)) {}

  SurrogatePtr operator()(const Matrix& x, const Vector& y, std::uint64_t seed, const Surrogate* previous) {
    if (cfg_.tune && !tuned_ && cfg_.tune_budget > 0) {
      auto r = bnn::tune_hyperparameters(x, y, cfg_.arch, cfg_.hyper, cfg_.search, cfg_.tune_budget,
                                         derive_seed(seed, {0x54554e}));
      cfg_.hyper = r.hyper;
      cfg_.arch = r.arch;
      tuned_ = true;
      tune_result_ = std::move(r);
    }
    bnn::Hyperparameters hp = cfg_.hyper;
    const bnn::VariationalState* init = nullptr;
    if (const auto* prev = dynamic_cast<const BnnSurrogate*>(previous);
        prev && cfg_.retrain_epochs > 0 && prev->state().arch.hidden == cfg_.arch.hidden &&
        !prev->state().constant_output) {
      init = &prev->state();
      hp.epochs = cfg_.retrain_epochs;
    }
    auto r = bnn::train_bnn(x, y, cfg_.arch, hp, seed, init);
    ++trainings_;
    return std::make_shared<BnnSurrogate>(std::move(r.state), cfg_.predict_samples, cfg_.moment_samples,
                                          derive_seed(seed, {0x50524544}));
  }

  const BnnTrainerConfig& config() const { return cfg_; }
  const std::optional<bnn::TuneResult>& tune_result() const { return tune_result_; }
  std::size_t trainings() const { return trainings_; }

 private:
  BnnTrainerConfig cfg_;
  bool tuned_ = false;
  std::optional<bnn::TuneResult> tune_result_;
  std::size_t trainings_ = 0;
};

struct GpTrainerConfig {
  gp::FitConfig fit;
  gp::Hyper init;
};

class GpTrainer {
 public:
  explicit GpTrainer(GpTrainerConfig cfg) : cfg_(std::move(cfg)) {}

  SurrogatePtr operator()(const Matrix& x, const Vector& y, std::uint64_t seed, const Surrogate* previous) {
    gp::Hyper init = cfg_.init;
    init.nu = cfg_.fit.nu;
    if (const auto* prev = dynamic_cast<const GpSurrogate*>(previous)) init = prev->model().hyper();
    else {
      // Data-scaled starting point.
      const double mean = y.mean();
      init.signal_variance = std::max((y.array() - mean).square().mean(), 1e-12);
      const double extent = (x.colwise().maxCoeff() - x.colwise().minCoeff()).maxCoeff();
      init.length_scale = extent > 0.0 ? 0.2 * extent : 1.0;
      init.noise_variance = 1e-6 * init.signal_variance;
    }
    auto r = gp::gp_fit(x, y, init, cfg_.fit, seed);
    return std::make_shared<GpSurrogate>(std::move(r.model));
  }

 private:
  GpTrainerConfig cfg_;
};

}  // namespace rdo
