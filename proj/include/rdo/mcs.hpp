#pragma once

// Surrogate-free baseline: DE over the whole design space where every
// fitness call estimates the moments by plain Monte Carlo on the true model.

#include <cstdint>
#include <map>
#include <mutex>
#include <optional>
#include <string>
#include <vector>

#include "rdo/de.hpp"
#include "rdo/error.hpp"
#include "rdo/moments.hpp"
#include "rdo/mpss.hpp"
#include "rdo/problem.hpp"
#include "rdo/random.hpp"

namespace rdo::mcs {

namespace salt {
inline constexpr std::uint64_t kSamples = 0x434e;           // common sample stream
inline constexpr std::uint64_t kNormalization = 0x4e4f524d; // normalisation design
inline constexpr std::uint64_t kDe = 0x4445;
inline constexpr std::uint64_t kVerify = 0x564552;
}  // namespace salt

struct McsRdoConfig {
  std::size_t budget = 75'000;  // total true-model evaluations
  std::size_t inner_samples = 500;
  de::DeConfig de;
  std::size_t verification_samples = 1'000'000;
  std::size_t threads = 1;
};

struct McsRdoRecord {
  std::size_t generation = 0;
  double best_objective = 0.0;
  Vector best_design;
  MomentEstimate best_moments;  // objective response at best_design
  std::size_t evaluations = 0;  // true-model calls so far
};

struct McsRdoResult {
  Vector d_star;
  double objective = 0.0;
  std::vector<McsEstimate> moments;  // inner estimate at d*
  Vector normalization_design;
  Normalizers normalizers;
  std::size_t designs_evaluated = 0;
  std::size_t total_evaluations = 0;
  std::vector<McsRdoRecord> history;
  std::string stop_reason;
  std::optional<mpss::Verification> verification;
};

/// Every design uses the same sample seed (common random numbers), so
/// comparisons between designs are not blurred by sampling noise. The
/// normalisers come from a seeded random design, which also seeds the DE
/// population.
inline McsRdoResult mcs_rdo(const RdoProblem& problem, const McsRdoConfig& cfg, std::uint64_t seed,
                            bool verify_result = true) {
  problem.validate();
  rdo::detail::require(cfg.inner_samples >= 2, "mcs_rdo: inner sample count must be at least 2");
  rdo::detail::require(cfg.budget >= cfg.inner_samples, "mcs_rdo: budget must cover at least one design");
  CountingModel model(problem.model);
  const std::uint64_t sample_seed = derive_seed(seed, {salt::kSamples});

  McsRdoResult res;
  Rng rng = make_rng(seed, {salt::kNormalization});
  Vector d0(problem.design.size());
  for (Eigen::Index k = 0; k < d0.size(); ++k)
    d0[k] = problem.design.lower[k] + uniform01(rng) * problem.design.range()[k];
  res.normalization_design = d0;
  const auto m0 = mcs_moments(model, problem, d0, cfg.inner_samples, sample_seed, cfg.threads);
  std::vector<MomentEstimate> e0;
  for (const auto& e : m0) e0.push_back({e.mean, e.std_dev});
  mpss::RdoObjective obj{&problem, mpss::normalizers_from(e0)};
  res.normalizers = obj.norm;

  std::mutex mu;
  std::size_t designs = 0;
  std::map<std::vector<double>, MomentEstimate> seen;  // objective-response moments per design
  auto key = [](const Vector& d) { return std::vector<double>(d.data(), d.data() + d.size()); };
  de::Evaluator f = [&](const Vector& d) {
    std::vector<MomentEstimate> m;
    if (d == d0) {
      m = e0;
    } else {
      for (const auto& e : mcs_moments(model, problem, d, cfg.inner_samples, sample_seed, 1)) m.push_back({e.mean, e.std_dev});
    }
    {
      std::lock_guard lock(mu);
      ++designs;
      seen[key(d)] = m[0];
    }
    return de::Evaluation{obj.objective(m), obj.constraints(m)};
  };
  de::DeConfig de_cfg = cfg.de;
  de_cfg.threads = cfg.threads;
  de_cfg.max_evaluations = cfg.budget / cfg.inner_samples;
  const auto r = de::de_minimize(f, problem.design, de_cfg, derive_seed(seed, {salt::kDe}), {d0});

  res.d_star = r.x;
  res.objective = r.objective;
  res.designs_evaluated = designs;
  res.stop_reason = r.stop_reason;
  for (const auto& g : r.history) {
    const auto it = seen.find(key(g.best_x));
    res.history.push_back({g.generation, g.best_objective, g.best_x, it != seen.end() ? it->second : MomentEstimate{},
                           g.evaluations * cfg.inner_samples});
  }
  res.total_evaluations = model.calls();
  // Same stream as inside the search, so these are the moments DE saw at d*.
  res.moments = mcs_moments(CountingModel(problem.model), problem, r.x, cfg.inner_samples, sample_seed, cfg.threads);
  if (verify_result && cfg.verification_samples >= 2)
    res.verification = mpss::verify(problem, r.x, obj, cfg.verification_samples, derive_seed(seed, {salt::kVerify}),
                                    cfg.threads);
  return res;
}

}  // namespace rdo::mcs
