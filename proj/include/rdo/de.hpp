#pragma once

// DE/rand/1/bin with reflection at the bounds.
//
// Fitness is objective + penalty * sum max(0, c_l)^2. Selection between a
// target and its trial uses feasibility rules: a feasible point beats an
// infeasible one, two infeasible points compare by violation, two feasible
// points by fitness. Trial vectors of a generation are generated first and
// may be evaluated concurrently; selection runs in index order, so the
// trajectory does not depend on the thread count.

#include <Eigen/Core>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <limits>
#include <string>
#include <vector>

#include "rdo/error.hpp"
#include "rdo/problem.hpp"
#include "rdo/random.hpp"
#include "rdo/sampling.hpp"

namespace rdo::de {

struct DeConfig {
  std::size_t population = 0;  // 0: max(10 M, 40)
  double mutation = 0.7;       // F
  double crossover = 0.9;      // CR
  std::size_t max_generations = 200;
  std::size_t stagnation_generations = 40;
  double stagnation_tolerance = 1e-10;
  double penalty = 1e3;
  std::size_t max_evaluations = 0;  // 0: unlimited
  std::size_t threads = 1;

  std::size_t population_for(std::size_t dim) const {
    return population > 0 ? population : std::max<std::size_t>(10 * dim, 40);
  }

  void validate(std::size_t dim) const {
    rdo::detail::require(population_for(dim) >= 4, "de: population must be at least 4");
    rdo::detail::require(mutation > 0.0 && mutation <= 2.0, "de: mutation factor must lie in (0, 2]");
    rdo::detail::require(crossover >= 0.0 && crossover <= 1.0, "de: crossover rate must lie in [0, 1]");
    rdo::detail::require(penalty >= 0.0, "de: penalty must be nonnegative");
  }
};

/// Objective value and constraint values (c_l <= 0 feasible) at one point.
struct Evaluation {
  double objective = 0.0;
  Vector constraints;
};

using Evaluator = std::function<Evaluation(const Vector&)>;

struct Candidate {
  Vector x;
  double objective = std::numeric_limits<double>::infinity();
  Vector constraints;
  double violation = 0.0;  // sum max(0, c)^2
  double fitness = std::numeric_limits<double>::infinity();

  bool feasible() const { return violation == 0.0; }
};

/// Strict "a is better than b" under the feasibility rules.
inline bool better(const Candidate& a, const Candidate& b) {
  if (a.feasible() && b.feasible()) return a.fitness < b.fitness;
  if (a.feasible() != b.feasible()) return a.feasible();
  if (a.violation != b.violation) return a.violation < b.violation;
  return a.fitness < b.fitness;
}

struct GenerationRecord {
  std::size_t generation = 0;
  double best_fitness = 0.0;
  double best_objective = 0.0;
  double best_violation = 0.0;
  std::size_t evaluations = 0;
  Vector best_x;
};

struct DeResult {
  Vector x;
  double objective = 0.0;
  double fitness = 0.0;
  Vector constraints;
  bool feasible = true;
  std::size_t evaluations = 0;
  std::size_t generations = 0;
  std::string stop_reason;
  std::vector<GenerationRecord> history;
};

/// Folds x back into [lo, hi] by repeated mirror reflection.
inline double reflect(double x, double lo, double hi) {
  if (x >= lo && x <= hi) return x;
  const double w = hi - lo;
  if (!(w > 0.0)) return lo;
  double t = std::fmod(x - lo, 2.0 * w);
  if (t < 0.0) t += 2.0 * w;
  if (t > w) t = 2.0 * w - t;
  return std::clamp(lo + t, lo, hi);
}

namespace detail {

inline Candidate score(Vector x, const Evaluator& f, double penalty) {
  Candidate c;
  c.x = std::move(x);
  Evaluation e;
  try {
    e = f(c.x);
  } catch (const InvalidArgument&) {
    throw;
  } catch (const NumericalError&) {
    e.objective = std::numeric_limits<double>::infinity();
  }
  c.objective = e.objective;
  c.constraints = e.constraints;
  for (Eigen::Index l = 0; l < c.constraints.size(); ++l) {
    const double v = c.constraints[l];
    if (!std::isfinite(v)) c.violation = std::numeric_limits<double>::infinity();
    else if (v > 0.0) c.violation += v * v;
  }
  c.fitness = std::isfinite(c.objective) ? c.objective + penalty * c.violation : std::numeric_limits<double>::infinity();
  if (std::isnan(c.fitness)) c.fitness = std::numeric_limits<double>::infinity();
  return c;
}

inline void evaluate_all(std::vector<Candidate>& out, std::vector<Vector>& xs, const Evaluator& f,
                         const DeConfig& cfg) {
  out.resize(xs.size());
  parallel_for(xs.size(), cfg.threads, [&](std::size_t i) { out[i] = score(std::move(xs[i]), f, cfg.penalty); });
}

}  // namespace detail

/// Minimises the evaluator over the box. `initial_points` (clamped into the
/// box) replace the first members of the Latin-hypercube initial population.
inline DeResult de_minimize(const Evaluator& f, const Box& bounds, const DeConfig& cfg, std::uint64_t seed,
                            const std::vector<Vector>& initial_points = {}) {
  bounds.validate("de bounds");
  const auto dim = static_cast<std::size_t>(bounds.size());
  rdo::detail::require(dim >= 1, "de: empty design space");
  cfg.validate(dim);
  const std::size_t np = cfg.population_for(dim);
  const std::size_t budget = cfg.max_evaluations > 0 ? cfg.max_evaluations : std::numeric_limits<std::size_t>::max();

  // Initial population: LHS over the box, degenerate dimensions pinned.
  Box lhs_box = bounds;
  for (Eigen::Index k = 0; k < bounds.size(); ++k)
    if (!(bounds.upper[k] > bounds.lower[k])) lhs_box.upper[k] = lhs_box.lower[k] + 1.0;
  Matrix init = sampling::lhs_sample(np, lhs_box, derive_seed(seed, {0x494e4954})).points;
  for (Eigen::Index k = 0; k < bounds.size(); ++k)
    if (!(bounds.upper[k] > bounds.lower[k])) init.col(k).setConstant(bounds.lower[k]);
  for (std::size_t i = 0; i < std::min(initial_points.size(), np); ++i) {
    rdo::detail::require(static_cast<std::size_t>(initial_points[i].size()) == dim, "de: initial point dimension");
    init.row(static_cast<Eigen::Index>(i)) =
        initial_points[i].cwiseMax(bounds.lower).cwiseMin(bounds.upper).transpose();
  }

  DeResult result;
  std::vector<Vector> xs;
  const std::size_t n_init = std::min(np, budget);
  for (std::size_t i = 0; i < n_init; ++i) xs.emplace_back(init.row(static_cast<Eigen::Index>(i)).transpose());
  std::vector<Candidate> pop;
  detail::evaluate_all(pop, xs, f, cfg);
  result.evaluations = pop.size();

  auto best_index = [&]() {
    std::size_t b = 0;
    for (std::size_t i = 1; i < pop.size(); ++i)
      if (better(pop[i], pop[b])) b = i;
    return b;
  };
  auto record = [&](std::size_t gen) {
    const auto& b = pop[best_index()];
    result.history.push_back({gen, b.fitness, b.objective, b.violation, result.evaluations, b.x});
  };
  record(0);

  if (pop.size() < np) {
    result.stop_reason = "budget";
  } else {
    Rng rng = make_rng(seed, {0x4445});
    std::size_t stagnant = 0;
    Candidate best = pop[best_index()];
    for (std::size_t gen = 1; gen <= cfg.max_generations; ++gen) {
      if (result.evaluations >= budget) {
        result.stop_reason = "budget";
        break;
      }
      const std::size_t n_trials = std::min(np, budget - result.evaluations);
      xs.clear();
      for (std::size_t i = 0; i < n_trials; ++i) {
        std::size_t r[3];
        for (int k = 0; k < 3; ++k) {
          do {
            r[k] = static_cast<std::size_t>(uniform01(rng) * static_cast<double>(np));
          } while (r[k] >= np || r[k] == i || (k > 0 && r[k] == r[0]) || (k > 1 && r[k] == r[1]));
        }
        const std::size_t jrand = std::min(dim - 1, static_cast<std::size_t>(uniform01(rng) * static_cast<double>(dim)));
        Vector trial = pop[i].x;
        for (std::size_t j = 0; j < dim; ++j) {
          const double u = uniform01(rng);
          if (u < cfg.crossover || j == jrand) {
            const auto jj = static_cast<Eigen::Index>(j);
            const double v = pop[r[0]].x[jj] + cfg.mutation * (pop[r[1]].x[jj] - pop[r[2]].x[jj]);
            trial[jj] = reflect(v, bounds.lower[jj], bounds.upper[jj]);
          }
        }
        xs.push_back(std::move(trial));
      }
      std::vector<Candidate> trials;
      detail::evaluate_all(trials, xs, f, cfg);
      result.evaluations += trials.size();
      for (std::size_t i = 0; i < trials.size(); ++i)
        if (!better(pop[i], trials[i])) pop[i] = std::move(trials[i]);
      record(gen);
      result.generations = gen;

      const Candidate& now = pop[best_index()];
      const bool improved = (now.feasible() && !best.feasible()) ||
                            (now.feasible() == best.feasible() && now.feasible() &&
                             best.fitness - now.fitness > cfg.stagnation_tolerance) ||
                            (!now.feasible() && !best.feasible() &&
                             best.violation - now.violation > cfg.stagnation_tolerance * std::max(1.0, best.violation));
      if (better(now, best)) best = now;
      stagnant = improved ? 0 : stagnant + 1;
      if (cfg.stagnation_generations > 0 && stagnant >= cfg.stagnation_generations) {
        result.stop_reason = "stagnation";
        break;
      }
    }
    if (result.stop_reason.empty()) result.stop_reason = "max-generations";
  }

  const Candidate& b = pop[best_index()];
  result.x = b.x;
  result.objective = b.objective;
  result.fitness = b.fitness;
  result.constraints = b.constraints;
  result.feasible = b.feasible();
  return result;
}

/// Convenience overload: separate objective and (optional) constraints.
inline DeResult de_minimize(const std::function<double(const Vector&)>& objective,
                            const std::function<Vector(const Vector&)>& constraints, const Box& bounds,
                            const DeConfig& cfg, std::uint64_t seed) {
  Evaluator f = [&](const Vector& x) {
    Evaluation e;
    e.objective = objective(x);
    if (constraints) e.constraints = constraints(x);
    return e;
  };
  return de_minimize(f, bounds, cfg, seed);
}

}  // namespace rdo::de
