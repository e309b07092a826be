#pragma once

// Multi-point single-step RDO driver.
//
//   1. global LHS + active learning, DE on the surrogate objective -> d0
//   2. q = 1, center d0, beta = beta_initial
//   3-4. subregion around the center; beta adapts to the center movement (q >= 2)
//   5. reuse samples inside the region, active learning to the sample cap
//   6-7. PDD moments of the surrogate, DE over the subregion -> d*
//   8. stop when d* or c0 barely moves, else recenter on d*

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <limits>
#include <memory>
#include <string>
#include <vector>

#include "rdo/active_learning.hpp"
#include "rdo/de.hpp"
#include "rdo/error.hpp"
#include "rdo/moments.hpp"
#include "rdo/pdd.hpp"
#include "rdo/problem.hpp"
#include "rdo/random.hpp"
#include "rdo/surrogate.hpp"

namespace rdo::mpss {

/// Seed salts. Every random stream of a run is derive_seed(seed, {salt, ...}).
namespace salt {
inline constexpr std::uint64_t kWarmStart = 0x57524d;  // global AL; {kWarmStart, kDe} for its DE
inline constexpr std::uint64_t kRegion = 0x51;         // {kRegion, q}: AL in subregion q
inline constexpr std::uint64_t kDe = 0x4445;           // {kDe, q}: DE in subregion q
inline constexpr std::uint64_t kVerify = 0x564552;     // post-hoc MCS
inline constexpr std::uint64_t kRetry = 0x5245545259;  // reseed after a failed training
}  // namespace salt

struct MpssConfig {
  double eps1 = 0.1;
  double eps2 = 0.5;
  double eps3 = 0.01;
  double eps4 = 0.01;
  double beta_initial = 0.15;
  double beta_decrease = 0.7;
  double beta_increase = 1.3;
  double beta_floor = 0.02;
  std::size_t max_iterations = 30;
  std::size_t pdd_interaction = 1;  // S
  std::size_t pdd_order = 3;        // m
  std::size_t pdd_samples = 0;      // 0: max(10 L, 1000)
  al::AlConfig warm_start_al;
  al::AlConfig al;
  de::DeConfig de;
  std::size_t verification_samples = 1'000'000;
  std::size_t threads = 1;

  void validate() const {
    rdo::detail::require(eps1 > 0.0 && eps1 < eps2, "mpss: need 0 < eps1 < eps2");
    rdo::detail::require(eps3 >= 0.0 && eps4 >= 0.0, "mpss: convergence tolerances must be nonnegative");
    rdo::detail::require(beta_decrease > 0.0 && beta_decrease < 1.0, "mpss: beta decrease factor must lie in (0, 1)");
    rdo::detail::require(beta_increase > 1.0, "mpss: beta increase factor must exceed 1");
    rdo::detail::require(beta_floor > 0.0 && beta_floor <= 1.0, "mpss: beta floor must lie in (0, 1]");
    rdo::detail::require(beta_initial >= beta_floor && beta_initial <= 1.0, "mpss: beta_initial must lie in [floor, 1]");
    rdo::detail::require(max_iterations >= 1, "mpss: max_iterations must be at least 1");
    warm_start_al.validate();
    al.validate();
  }
};

/// Three-branch sizing rule, clamped to [beta_floor, 1].
inline double update_beta(double rho, double beta, const MpssConfig& cfg) {
  rdo::detail::require(rho >= 0.0, "update_beta: rho must be nonnegative");
  rdo::detail::require(beta > 0.0 && beta <= 1.0, "update_beta: beta must lie in (0, 1]");
  double b = beta;
  if (rho <= cfg.eps1) b = beta * cfg.beta_decrease;
  else if (rho > cfg.eps2) b = beta * cfg.beta_increase;
  return std::clamp(b, cfg.beta_floor, 1.0);
}

struct Subregion {
  std::size_t q = 0;
  Vector center;
  Vector beta;
  Box bounds;
};

/// Box of half-width beta_k * (d_U - d_L) / 2 around the center, clipped to the design space.
inline Subregion make_subregion(std::size_t q, const Vector& center, const Vector& beta, const Box& design) {
  rdo::detail::require(center.size() == design.size() && beta.size() == design.size(), "subregion: dimension mismatch");
  const Vector half = (beta.array() * design.range().array() * 0.5).matrix();
  Vector lo = (center - half).cwiseMax(design.lower);
  Vector hi = (center + half).cwiseMin(design.upper);
  for (Eigen::Index k = 0; k < lo.size(); ++k)
    if (!(lo[k] < hi[k])) throw InvalidArgument("subregion: empty in dimension " + std::to_string(k));
  return {q, center, beta, Box(std::move(lo), std::move(hi))};
}

/// Points of `data` whose x-coordinates lie inside `input_box`.
inline al::Dataset reuse_samples(const al::Dataset& data, const Box& input_box) {
  return al::subset_inside(data, input_box);
}

/// Objective and normalised constraints from per-response moments.
struct RdoObjective {
  const RdoProblem* problem = nullptr;
  Normalizers norm;

  double objective(const std::vector<MomentEstimate>& m) const {
    return evaluate_objective(m[0].mean, m[0].std_dev, problem->weights, norm);
  }

  Vector constraints(const std::vector<MomentEstimate>& m) const {
    Vector c(static_cast<Eigen::Index>(problem->num_constraints()));
    for (std::size_t l = 0; l < problem->num_constraints(); ++l) {
      const double scale = l < norm.constraint_scale.size() ? norm.constraint_scale[l] : 1.0;
      c[static_cast<Eigen::Index>(l)] =
          evaluate_constraint(m[l + 1].mean, m[l + 1].std_dev, problem->alphas[l]) / scale;
    }
    return c;
  }
};

/// Normalisers from moments at the initial design; a zero moment falls back to 1.
inline Normalizers normalizers_from(const std::vector<MomentEstimate>& m) {
  Normalizers n;
  n.mean = m[0].mean != 0.0 ? m[0].mean : 1.0;
  n.std_dev = m[0].std_dev != 0.0 ? m[0].std_dev : 1.0;
  for (std::size_t l = 1; l < m.size(); ++l) n.constraint_scale.push_back(m[l].mean != 0.0 ? std::abs(m[l].mean) : 1.0);
  return n;
}

struct IterationRecord {
  std::size_t q = 0;
  Vector center;
  Vector beta;
  Box bounds;
  Vector d_star;
  double objective = 0.0;         // c0 at d*
  double objective_center = 0.0;  // c0 at the center
  Vector constraints;             // normalised, at d*
  std::vector<MomentEstimate> moments;  // per response, at d*
  std::size_t new_evaluations = 0;
  std::size_t reused = 0;
  std::size_t cumulative_evaluations = 0;
  std::size_t dataset_size = 0;
  std::size_t al_rounds = 0;
  std::string al_stop;
  std::vector<al::RoundLog> al_log;
  std::size_t de_generations = 0;
  bool feasible = true;
};

struct Verification {
  std::vector<McsEstimate> moments;
  double objective = 0.0;
  Vector constraints;
  bool feasible = true;
};

struct RunHistory {
  Vector warm_start_design;
  double warm_start_objective = 0.0;
  std::vector<MomentEstimate> warm_start_moments;  // at d0, first local model
  std::size_t warm_start_evaluations = 0;
  std::vector<al::RoundLog> warm_start_al_log;
  Normalizers normalizers;
  std::vector<IterationRecord> iterations;
  std::string status;
  std::string message;
  std::size_t total_evaluations = 0;
};

struct MpssResult {
  Vector d_star;
  RunHistory history;
  std::optional<Verification> verification;
};

/// Produces the trainer for one response. `global` is true for the Step-1
/// model over the whole design space.
using TrainerFactory = std::function<SurrogateTrainer(std::size_t response, bool global)>;

/// Surrogate objective/constraints, evaluated by PDD on the surrogate means.
inline de::Evaluator surrogate_evaluator(const PddMomentEstimator& est, const std::vector<SurrogatePtr>& models,
                                         const RdoObjective& obj) {
  return [&est, &models, &obj](const Vector& d) {
    const auto m = est.estimate(models, d);
    de::Evaluation e;
    try {
      e.objective = obj.objective(m);
      e.constraints = obj.constraints(m);
    } catch (const InvalidArgument&) {
      throw NumericalError("non-finite surrogate moments");
    }
    return e;
  };
}

inline Verification verify(const RdoProblem& problem, const Vector& d, const RdoObjective& obj, std::size_t n,
                           std::uint64_t seed, std::size_t threads) {
  CountingModel model(problem.model);
  Verification v;
  v.moments = mcs_moments(model, problem, d, n, seed, threads);
  std::vector<MomentEstimate> m;
  for (const auto& e : v.moments) m.push_back({e.mean, e.std_dev});
  v.objective = obj.objective(m);
  v.constraints = obj.constraints(m);
  v.feasible = (v.constraints.array() <= 0.0).all();
  return v;
}

namespace detail {

/// Active learning with one retry on a fresh seed when training fails numerically.
inline al::AlResult train_region(const CountingModel& model, const Box& in_box, std::vector<SurrogateTrainer>& trainers,
                                 const al::AlConfig& cfg, std::uint64_t seed, const al::Dataset& reused) {
  try {
    return al::active_learning_loop(model, in_box, trainers, cfg, seed, reused);
  } catch (const NumericalError&) {
    return al::active_learning_loop(model, in_box, trainers, cfg, derive_seed(seed, {salt::kRetry}), reused);
  }
}

inline void append(al::Dataset& all, const al::Dataset& from, std::size_t first) {
  for (std::size_t i = first; i < from.size(); ++i) {
    const auto r = static_cast<Eigen::Index>(i);
    all.append(from.x.row(r).transpose(), from.y.row(r).transpose(), from.origin[i]);
  }
}

}  // namespace detail

/// Runs the full algorithm. True-model calls go through one counter, so the
/// history's evaluation totals match it exactly; the optional post-hoc MCS
/// verification uses a separate counter.
inline MpssResult mpss_run(const RdoProblem& problem, const MpssConfig& cfg, const TrainerFactory& factory,
                           std::uint64_t seed, bool verify_result = true) {
  problem.validate();
  cfg.validate();
  const std::size_t responses = problem.num_constraints() + 1;
  CountingModel model(problem.model);
  const PddMomentEstimator est(
      problem, pdd::shared_context(problem.input_dim(), cfg.pdd_interaction, cfg.pdd_order, cfg.pdd_samples));
  de::DeConfig de_cfg = cfg.de;
  de_cfg.threads = cfg.threads;
  al::AlConfig warm_al = cfg.warm_start_al, region_al = cfg.al;
  warm_al.threads = region_al.threads = cfg.threads;

  MpssResult res;
  RunHistory& h = res.history;
  RdoObjective obj{&problem, {}};

  // Step 1: global model and warm-start optimum.
  std::vector<SurrogateTrainer> global_trainers;
  for (std::size_t l = 0; l < responses; ++l) global_trainers.push_back(factory(l, true));
  al::AlResult global;
  try {
    global = detail::train_region(model, problem.input_box(problem.design), global_trainers, warm_al,
                                  derive_seed(seed, {salt::kWarmStart}), {});
  } catch (const NumericalError& e) {
    h.status = "surrogate-failure";
    h.message = e.what();
    h.total_evaluations = model.calls();
    return res;
  }
  h.warm_start_al_log = global.rounds;
  // Provisional scaling for the warm start only: moments at the box center.
  obj.norm = normalizers_from(est.estimate(global.models, problem.design.center()));
  const auto warm = de::de_minimize(surrogate_evaluator(est, global.models, obj), problem.design, de_cfg,
                                    derive_seed(seed, {salt::kWarmStart, salt::kDe}));
  h.warm_start_design = warm.x;
  h.warm_start_evaluations = model.calls();

  al::Dataset all = global.data;
  std::vector<SurrogateTrainer> trainers;
  for (std::size_t l = 0; l < responses; ++l) trainers.push_back(factory(l, false));

  // Step 2.
  Vector center = warm.x, prev_center;
  Vector beta = Vector::Constant(problem.design.size(), cfg.beta_initial);
  res.d_star = center;

  for (std::size_t q = 1; q <= cfg.max_iterations; ++q) {
    // Step 4 (skipped at q = 1: no previous center).
    if (q > 1) {
      for (Eigen::Index k = 0; k < beta.size(); ++k) {
        const double rho = std::abs(center[k] - prev_center[k]) / (0.5 * problem.design.range()[k]);
        beta[k] = update_beta(rho, beta[k], cfg);
      }
    }
    const Subregion region = make_subregion(q, center, beta, problem.design);
    const Box in_box = problem.input_box(region.bounds);

    // Step 5.
    const std::size_t calls_before = model.calls();
    const al::Dataset reused = reuse_samples(all, in_box);
    al::AlResult trained;
    try {
      trained = detail::train_region(model, in_box, trainers, region_al, derive_seed(seed, {salt::kRegion, q}), reused);
    } catch (const NumericalError& e) {
      h.status = "surrogate-failure";
      h.message = "q=" + std::to_string(q) + ": " + e.what();
      break;
    }
    detail::append(all, trained.data, trained.reused);

    // Normalisers frozen at the initial design d0 with the first local model.
    if (q == 1) {
      h.warm_start_moments = est.estimate(trained.models, center);
      obj.norm = normalizers_from(h.warm_start_moments);
      h.normalizers = obj.norm;
      h.warm_start_objective = obj.objective(h.warm_start_moments);
    }

    // Steps 6-7.
    const auto eval = surrogate_evaluator(est, trained.models, obj);
    const auto local = de::de_minimize(eval, region.bounds, de_cfg, derive_seed(seed, {salt::kDe, q}), {center});

    IterationRecord rec;
    rec.q = q;
    rec.center = center;
    rec.beta = beta;
    rec.bounds = region.bounds;
    rec.d_star = local.x;
    rec.moments = est.estimate(trained.models, local.x);
    rec.objective = obj.objective(rec.moments);
    rec.constraints = obj.constraints(rec.moments);
    rec.feasible = local.feasible;
    rec.objective_center = obj.objective(est.estimate(trained.models, center));
    rec.new_evaluations = model.calls() - calls_before;
    rec.reused = trained.reused;
    rec.cumulative_evaluations = model.calls();
    rec.dataset_size = trained.data.size();
    rec.al_rounds = trained.rounds.size();
    rec.al_stop = trained.stop_reason;
    rec.al_log = trained.rounds;
    rec.de_generations = local.generations;
    h.iterations.push_back(rec);
    res.d_star = local.x;

    // Step 8. Q_max is checked first so the last allowed iteration reports
    // the cap; a zero tolerance switches its test off.
    if (q == cfg.max_iterations) break;
    if ((cfg.eps3 > 0.0 && (local.x - center).norm() <= cfg.eps3) ||
        (cfg.eps4 > 0.0 && std::abs(rec.objective - rec.objective_center) <= cfg.eps4)) {
      h.status = "converged";
      break;
    }
    prev_center = center;
    center = local.x;
  }
  if (h.status.empty()) h.status = "max-iterations";
  h.total_evaluations = model.calls();
  if (h.normalizers.constraint_scale.empty() && problem.num_constraints() > 0) h.normalizers = obj.norm;

  if (verify_result && cfg.verification_samples >= 2 && !h.iterations.empty())
    res.verification =
        verify(problem, res.d_star, obj, cfg.verification_samples, derive_seed(seed, {salt::kVerify}), cfg.threads);
  return res;
}

}  // namespace rdo::mpss
