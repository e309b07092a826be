#pragma once

// Bodies of the CLI subcommands that print JSON rather than write a run
// directory. Each returns the JSON document; errors are thrown.

#include <cstdint>
#include <string>
#include <vector>

#include <json.hpp>

#include "rdo/active_learning.hpp"
#include "rdo/de.hpp"
#include "rdo/error.hpp"
#include "rdo/experiment.hpp"
#include "rdo/moments.hpp"
#include "rdo/pdd.hpp"

namespace rdo::commands {

inline const std::vector<std::string> kEstimators{"pdd-exact", "pdd-surrogate", "mcs"};

inline constexpr std::uint64_t kMomentsSalt = 0x4d4f4d;

inline Vector parse_design(const std::vector<double>& v, const RdoProblem& p) {
  if (v.size() != p.design_dim())
    throw InvalidArgument("design: expected " + std::to_string(p.design_dim()) + " values, got " +
                          std::to_string(v.size()));
  Vector d = Eigen::Map<const Vector>(v.data(), static_cast<Eigen::Index>(v.size()));
  if (!p.design.contains(d)) throw InvalidArgument("design: outside the design space");
  return d;
}

namespace detail {

inline nlohmann::json moments_json(const std::vector<MomentEstimate>& m) {
  nlohmann::json r = nlohmann::json::array();
  for (const auto& e : m) r.push_back({{"mean", e.mean}, {"std", e.std_dev}});
  return r;
}

inline nlohmann::json mcs_json(const std::vector<McsEstimate>& m) {
  nlohmann::json r = nlohmann::json::array();
  for (const auto& e : m) r.push_back({{"mean", e.mean}, {"std", e.std_dev}, {"std_error", e.std_error}, {"n", e.n}});
  return r;
}

inline std::vector<double> to_std(const Vector& v) { return {v.data(), v.data() + v.size()}; }

}  // namespace detail

/// Moments at one design. pdd-exact feeds true-model values to PDD (no
/// surrogate); pdd-surrogate trains the configured surrogate on a subregion
/// of size beta_initial around d; mcs draws `samples` true-model samples.
inline nlohmann::json moments(const experiment::ExperimentConfig& c, const RdoProblem& p, const Vector& d,
                              const std::string& estimator, std::size_t samples) {
  nlohmann::json j;
  j["schema_version"] = 1;
  j["problem"] = p.name;
  j["estimator"] = estimator;
  j["design"] = detail::to_std(d);
  CountingModel model(p.model);
  if (estimator == "mcs") {
    const auto m = mcs_moments(model, p, d, samples, derive_seed(c.seed, {kMomentsSalt}), c.threads);
    j["responses"] = detail::mcs_json(m);
  } else if (estimator == "pdd-exact" || estimator == "pdd-surrogate") {
    const PddMomentEstimator est(p, pdd::shared_context(p.input_dim(), c.mpss.pdd_interaction, c.mpss.pdd_order,
                                                        c.mpss.pdd_samples));
    j["pdd"] = {{"S", c.mpss.pdd_interaction},
                {"m", c.mpss.pdd_order},
                {"basis_size", est.context().index_set->size()},
                {"samples", est.sample_count()}};
    if (estimator == "pdd-exact") {
      j["responses"] = detail::moments_json(est.estimate_exact(model, d, c.threads));
    } else {
      if (c.method == "direct-mcs")
        throw InvalidArgument("estimator pdd-surrogate needs method bnn-pdd-mpss or gp-pdd-mpss");
      const auto factory = experiment::trainer_factory(c, p.input_dim());
      std::vector<SurrogateTrainer> trainers;
      for (std::size_t l = 0; l < p.num_constraints() + 1; ++l) trainers.push_back(factory(l, false));
      const Vector beta = Vector::Constant(d.size(), c.mpss.beta_initial);
      const auto region = mpss::make_subregion(1, d, beta, p.design);
      al::AlConfig a = c.mpss.al;
      a.threads = c.threads;
      const auto trained =
          al::active_learning_loop(model, p.input_box(region.bounds), trainers, a, derive_seed(c.seed, {kMomentsSalt}));
      j["responses"] = detail::moments_json(est.estimate(trained.models, d));
      j["training_samples"] = trained.data.size();
      j["method"] = c.method;
    }
  } else {
    throw InvalidArgument("estimator: unknown estimator '" + estimator + "'");
  }
  j["evaluations"] = model.calls();
  return j;
}

/// PDD-exact moments with the expansion itself: per-variable variance
/// shares and the fit diagnostics.
inline nlohmann::json pdd_moments(const experiment::ExperimentConfig& c, const RdoProblem& p, const Vector& d) {
  const PddMomentEstimator est(
      p, pdd::shared_context(p.input_dim(), c.mpss.pdd_interaction, c.mpss.pdd_order, c.mpss.pdd_samples));
  CountingModel model(p.model);
  const Matrix x = est.x_samples(d);
  nlohmann::json j;
  j["schema_version"] = 1;
  j["problem"] = p.name;
  j["design"] = detail::to_std(d);
  j["S"] = c.mpss.pdd_interaction;
  j["m"] = c.mpss.pdd_order;
  j["basis_size"] = est.context().index_set->size();
  j["samples"] = est.sample_count();
  nlohmann::json out = nlohmann::json::array();
  for (std::size_t l = 0; l < model.responses(); ++l) {
    Vector b(x.rows());
    for (Eigen::Index r = 0; r < x.rows(); ++r) b[r] = model(x.row(r).transpose())[static_cast<Eigen::Index>(l)];
    const auto e = est.context().fit_response(b);
    const auto mo = pdd::pdd_moments(e);
    // Variance carried by terms that involve each variable.
    std::vector<double> share(p.input_dim(), 0.0);
    const auto& entries = e.index_set->entries;
    for (std::size_t t = 0; t < entries.size(); ++t) {
      const double c2 = e.coefficients[static_cast<Eigen::Index>(t)] * e.coefficients[static_cast<Eigen::Index>(t)];
      for (const auto& [var, order] : entries[t]) share[var] += c2;
    }
    out.push_back({{"mean", mo.mean},
                   {"std", mo.std_dev()},
                   {"variance", mo.variance},
                   {"variance_by_variable", share},
                   {"residual_norm", e.diagnostics.residual_norm},
                   {"rank_deficient", e.diagnostics.rank_deficient}});
  }
  j["responses"] = out;
  j["evaluations"] = model.calls();
  return j;
}

/// DE on the nominal objective response y_0(d) (inputs at their means) over
/// the design space; a debugging view of the optimiser.
inline nlohmann::json de_nominal(const experiment::ExperimentConfig& c, const RdoProblem& p) {
  CountingModel model(p.model);
  de::DeConfig cfg = c.mpss.de;
  cfg.threads = c.threads;
  const de::Evaluator f = [&](const Vector& d) {
    Vector x(static_cast<Eigen::Index>(p.input_dim()));
    for (std::size_t i = 0; i < p.input_dim(); ++i) x[static_cast<Eigen::Index>(i)] = p.marginals[i].mean(d);
    return de::Evaluation{model(x)[0], Vector()};
  };
  const auto r = de::de_minimize(f, p.design, cfg, derive_seed(c.seed, {mpss::salt::kDe}));
  nlohmann::json j;
  j["schema_version"] = 1;
  j["problem"] = p.name;
  j["x"] = detail::to_std(r.x);
  j["value"] = r.objective;
  j["generations"] = r.generations;
  j["evaluations"] = r.evaluations;
  j["stop_reason"] = r.stop_reason;
  nlohmann::json h = nlohmann::json::array();
  for (const auto& g : r.history) h.push_back({{"generation", g.generation}, {"best", g.best_objective}});
  j["history"] = h;
  return j;
}

}  // namespace rdo::commands
