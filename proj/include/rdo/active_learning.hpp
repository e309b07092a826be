#pragma once

// Uncertainty-driven dataset augmentation inside one region: LHS candidates,
// top-N_a by predictive variance, true-model evaluation, retrain, stop on the
// relative error of the retrained model on the new batch.

#include <algorithm>
#include <cstdint>
#include <limits>
#include <numeric>
#include <string>
#include <vector>

#include "rdo/error.hpp"
#include "rdo/problem.hpp"
#include "rdo/random.hpp"
#include "rdo/sampling.hpp"
#include "rdo/surrogate.hpp"

namespace rdo::al {

struct AlConfig {
  std::size_t initial_samples = 250;
  std::size_t batch_size = 25;        // N_a
  std::size_t candidates = 0;         // 0: 20 * N_a
  std::size_t max_samples = 500;
  double relative_tolerance = 0.05;   // eps_AL
  double y_floor = 1e-6;
  std::size_t max_rounds = 10;
  std::size_t threads = 1;

  std::size_t candidate_count() const { return candidates > 0 ? candidates : 20 * batch_size; }

  void validate() const {
    rdo::detail::require(batch_size >= 1, "active learning: batch size must be at least 1");
    rdo::detail::require(candidate_count() > batch_size, "active learning: candidate count must exceed the batch size");
    rdo::detail::require(relative_tolerance > 0.0 && y_floor > 0.0, "active learning: thresholds must be positive");
    rdo::detail::require(max_samples >= 1, "active learning: sample cap must be positive");
  }
};

/// Training data in X-space with every response per point. `origin` tags
/// each row: -1 reused from an earlier region, 0 initial LHS, r >= 1 AL round.
struct Dataset {
  Matrix x;
  Matrix y;
  std::vector<int> origin;

  std::size_t size() const { return static_cast<std::size_t>(x.rows()); }

  void append(const Vector& xi, const Vector& yi, int tag) {
    if (x.rows() == 0) {
      x.resize(0, xi.size());
      y.resize(0, yi.size());
    }
    x.conservativeResize(x.rows() + 1, Eigen::NoChange);
    y.conservativeResize(y.rows() + 1, Eigen::NoChange);
    x.row(x.rows() - 1) = xi.transpose();
    y.row(y.rows() - 1) = yi.transpose();
    origin.push_back(tag);
  }
};

/// Rows of `data` inside `box` (inclusive), re-tagged as reused.
inline Dataset subset_inside(const Dataset& data, const Box& box) {
  Dataset out;
  out.x.resize(0, data.x.cols());
  out.y.resize(0, data.y.cols());
  for (Eigen::Index i = 0; i < data.x.rows(); ++i)
    if (box.contains(data.x.row(i).transpose())) out.append(data.x.row(i).transpose(), data.y.row(i).transpose(), -1);
  return out;
}

/// Indices of the n largest scores, ties broken by lower index.
inline std::vector<std::size_t> select_acquisitions(const Vector& scores, std::size_t n) {
  rdo::detail::require(static_cast<std::size_t>(scores.size()) > n, "select_acquisitions: need more candidates than N_a");
  std::vector<std::size_t> idx(static_cast<std::size_t>(scores.size()));
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  auto key = [&](std::size_t i) {
    const double v = scores[static_cast<Eigen::Index>(i)];
    return std::isnan(v) ? -std::numeric_limits<double>::infinity() : v;
  };
  std::partial_sort(idx.begin(), idx.begin() + static_cast<std::ptrdiff_t>(n), idx.end(),
                    [&](std::size_t a, std::size_t b) { return key(a) > key(b) || (key(a) == key(b) && a < b); });
  idx.resize(n);
  return idx;
}

/// Combined acquisition score: sum over responses of predictive variance
/// divided by that response's sample variance in the training set.
inline Vector acquisition_scores(const std::vector<SurrogatePtr>& models, const Matrix& candidates,
                                 const Vector& response_scale) {
  Vector s = Vector::Zero(candidates.rows());
  for (std::size_t l = 0; l < models.size(); ++l)
    s += models[l]->predict_variance(candidates) / response_scale[static_cast<Eigen::Index>(l)];
  return s;
}

struct RoundLog {
  std::size_t round = 0;
  std::size_t added = 0;
  std::size_t dropped = 0;
  double relative_error = 0.0;
  double max_candidate_score = 0.0;
  std::size_t dataset_size = 0;
};

struct AlResult {
  std::vector<SurrogatePtr> models;  // one per response
  Dataset data;
  std::vector<RoundLog> rounds;
  std::size_t evaluations = 0;       // true-model calls made here
  std::size_t failed_evaluations = 0;
  std::size_t reused = 0;
  std::string stop_reason;
  double initial_max_score = 0.0;    // on the round-1 candidate set
  double final_max_score = 0.0;      // same candidates and scale, final models
};

/// Retrains one surrogate per response column.
inline std::vector<SurrogatePtr> train_all(const Dataset& d, std::vector<SurrogateTrainer>& trainers,
                                           std::uint64_t seed, const std::vector<SurrogatePtr>& previous) {
  std::vector<SurrogatePtr> out;
  for (Eigen::Index l = 0; l < d.y.cols(); ++l) {
    const auto li = static_cast<std::size_t>(l);
    const Surrogate* prev = li < previous.size() ? previous[li].get() : nullptr;
    out.push_back(trainers[li](d.x, d.y.col(l), derive_seed(seed, {static_cast<std::uint64_t>(l)}), prev));
  }
  return out;
}

namespace detail {

inline Vector response_scale(const Matrix& y) {
  Vector s(y.cols());
  for (Eigen::Index l = 0; l < y.cols(); ++l) {
    const double m = y.col(l).mean();
    const double v = (y.col(l).array() - m).square().mean();
    s[l] = v > 0.0 ? v : 1.0;
  }
  return s;
}

struct BatchOutcome {
  std::vector<Vector> y;
  std::vector<bool> ok;
  std::size_t calls = 0;
  std::size_t failures = 0;
};

/// Evaluates every row, retrying a failed call once; rows that fail twice
/// are reported as not ok.
inline BatchOutcome evaluate_rows(const CountingModel& model, const Matrix& x, std::size_t threads) {
  const auto n = static_cast<std::size_t>(x.rows());
  BatchOutcome out;
  out.y.resize(n);
  std::vector<std::uint8_t> ok(n, 0), attempts(n, 0);
  parallel_for(n, threads, [&](std::size_t i) {
    for (int attempt = 0; attempt < 2; ++attempt) {
      ++attempts[i];
      try {
        Vector y = model(x.row(static_cast<Eigen::Index>(i)).transpose());
        if (y.allFinite()) {
          out.y[i] = std::move(y);
          ok[i] = 1;
          return;
        }
      } catch (const std::exception&) {
      }
    }
  });
  for (std::size_t i = 0; i < n; ++i) {
    out.ok.push_back(ok[i] != 0);
    out.calls += attempts[i];
    out.failures += attempts[i] - (ok[i] ? 1u : 0u);
  }
  return out;
}

}  // namespace detail

/// Runs the loop in the X-space box `region`. `initial` holds reused points;
/// LHS tops it up to `initial_samples` before the first training.
inline AlResult active_learning_loop(const CountingModel& model, const Box& region,
                                     std::vector<SurrogateTrainer>& trainers, const AlConfig& cfg, std::uint64_t seed,
                                     Dataset initial = {}, const std::vector<SurrogatePtr>& previous = {}) {
  cfg.validate();
  rdo::detail::require(trainers.size() == model.responses(), "active learning: need one trainer per response");
  AlResult res;
  res.data = std::move(initial);
  if (res.data.x.rows() == 0) {
    res.data.x.resize(0, region.size());
    res.data.y.resize(0, static_cast<Eigen::Index>(model.responses()));
  }
  res.reused = res.data.size();

  const std::size_t cap = std::max(cfg.max_samples, res.reused);
  const std::size_t want = std::min(cfg.initial_samples, cap);
  if (res.data.size() < want) {
    const auto lhs = sampling::lhs_sample(want - res.data.size(), region, derive_seed(seed, {0x494e4954}));
    const auto out = detail::evaluate_rows(model, lhs.points, cfg.threads);
    res.evaluations += out.calls;
    res.failed_evaluations += out.failures;
    for (std::size_t i = 0; i < out.ok.size(); ++i)
      if (out.ok[i]) res.data.append(lhs.points.row(static_cast<Eigen::Index>(i)).transpose(), out.y[i], 0);
  }
  if (res.data.size() < 2) throw ModelEvaluationError("active learning: fewer than two usable training samples", 0);

  res.models = train_all(res.data, trainers, derive_seed(seed, {0x5452, 0}), previous);

  Matrix first_candidates;
  Vector first_scale;
  for (std::size_t round = 1;; ++round) {
    if (round > cfg.max_rounds) {
      res.stop_reason = "round-cap";
      break;
    }
    if (res.data.size() >= cap) {
      res.stop_reason = "sample-cap";
      break;
    }
    const std::size_t n_add = std::min(cfg.batch_size, cap - res.data.size());
    const Matrix cand =
        sampling::lhs_sample(cfg.candidate_count(), region, derive_seed(seed, {0x43414e44, round})).points;
    const Vector scale = detail::response_scale(res.data.y);
    const Vector scores = acquisition_scores(res.models, cand, scale);
    RoundLog log;
    log.round = round;
    log.max_candidate_score = scores.maxCoeff();
    if (round == 1) {
      first_candidates = cand;
      first_scale = scale;
      res.initial_max_score = log.max_candidate_score;
    }
    const auto picked = select_acquisitions(scores, n_add);
    Matrix xs(static_cast<Eigen::Index>(picked.size()), cand.cols());
    for (std::size_t i = 0; i < picked.size(); ++i)
      xs.row(static_cast<Eigen::Index>(i)) = cand.row(static_cast<Eigen::Index>(picked[i]));
    const auto out = detail::evaluate_rows(model, xs, cfg.threads);
    res.evaluations += out.calls;
    res.failed_evaluations += out.failures;
    std::vector<Eigen::Index> new_rows;
    for (std::size_t i = 0; i < out.ok.size(); ++i) {
      if (!out.ok[i]) {
        ++log.dropped;
        continue;
      }
      new_rows.push_back(static_cast<Eigen::Index>(res.data.size()));
      res.data.append(xs.row(static_cast<Eigen::Index>(i)).transpose(), out.y[i], static_cast<int>(round));
    }
    log.added = new_rows.size();
    res.models = train_all(res.data, trainers, derive_seed(seed, {0x5452, round}), res.models);

    // Relative error of the retrained models on the new batch.
    double err = 0.0;
    std::size_t terms = 0;
    if (!new_rows.empty()) {
      Matrix xn(static_cast<Eigen::Index>(new_rows.size()), res.data.x.cols());
      for (std::size_t i = 0; i < new_rows.size(); ++i) xn.row(static_cast<Eigen::Index>(i)) = res.data.x.row(new_rows[i]);
      for (std::size_t l = 0; l < res.models.size(); ++l) {
        const Vector pred = res.models[l]->predict_mean(xn);
        for (std::size_t i = 0; i < new_rows.size(); ++i) {
          const double y = res.data.y(new_rows[i], static_cast<Eigen::Index>(l));
          err += std::abs(pred[static_cast<Eigen::Index>(i)] - y) / std::max(std::abs(y), cfg.y_floor);
          ++terms;
        }
      }
    }
    log.relative_error = terms > 0 ? err / static_cast<double>(terms) : std::numeric_limits<double>::infinity();
    log.dataset_size = res.data.size();
    res.rounds.push_back(log);
    if (log.relative_error < cfg.relative_tolerance) {
      res.stop_reason = "converged";
      break;
    }
  }
  if (first_candidates.rows() > 0)
    res.final_max_score =
        acquisition_scores(res.models, first_candidates, first_scale).maxCoeff();
  return res;
}

}  // namespace rdo::al
