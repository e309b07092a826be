#pragma once

// Result files of one run:
//   history.csv          one row per subregion iteration (q = 0: warm start)
//   al_log.csv           one row per active-learning round
//   summary.json         final design, moments, status, evaluation counts
//   config.resolved.json every key with its resolved value and the sub-seeds
//
// Numbers are printed with 17 significant digits so identical runs produce
// byte-identical files.

#include <chrono>
#include <cstdio>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "rdo/config.hpp"
#include "rdo/experiment.hpp"

namespace rdo::report {

inline constexpr int kSchemaVersion = 1;

inline std::string num(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

namespace detail {

inline std::string vec_cells(const Vector& v) {
  std::string s;
  for (Eigen::Index k = 0; k < v.size(); ++k) s += "," + num(v[k]);
  return s;
}

inline std::vector<double> to_std(const Vector& v) { return {v.data(), v.data() + v.size()}; }

}  // namespace detail

inline std::string history_header(std::size_t m) {
  std::string h = "q,c0,mean,std";
  for (std::size_t k = 1; k <= m; ++k) h += ",d_" + std::to_string(k);
  for (std::size_t k = 1; k <= m; ++k) h += ",beta_" + std::to_string(k);
  return h + ",new_evals,cum_evals\n";
}

/// Row q = 0 is the warm start (beta 1: the whole design space); later rows
/// report d*, its surrogate moments and c0 for each subregion.
inline std::string history_csv(const mpss::RunHistory& h) {
  const auto m = static_cast<std::size_t>(h.warm_start_design.size());
  std::string out = history_header(m);
  const Vector ones = Vector::Ones(static_cast<Eigen::Index>(m));
  if (m > 0) {
    const double mean0 = h.warm_start_moments.empty() ? 0.0 : h.warm_start_moments[0].mean;
    const double std0 = h.warm_start_moments.empty() ? 0.0 : h.warm_start_moments[0].std_dev;
    out += "0," + num(h.warm_start_objective) + "," + num(mean0) + "," + num(std0) +
           detail::vec_cells(h.warm_start_design) + detail::vec_cells(ones) + "," +
           std::to_string(h.warm_start_evaluations) + "," + std::to_string(h.warm_start_evaluations) + "\n";
  }
  for (const auto& it : h.iterations)
    out += std::to_string(it.q) + "," + num(it.objective) + "," + num(it.moments[0].mean) + "," +
           num(it.moments[0].std_dev) + detail::vec_cells(it.d_star) + detail::vec_cells(it.beta) + "," +
           std::to_string(it.new_evaluations) + "," + std::to_string(it.cumulative_evaluations) + "\n";
  return out;
}

/// Direct MCS: one row per DE generation with the best design so far.
inline std::string history_csv(const mcs::McsRdoResult& r) {
  const auto m = static_cast<std::size_t>(r.d_star.size());
  std::string out = history_header(m);
  const Vector ones = Vector::Ones(static_cast<Eigen::Index>(m));
  std::size_t prev = 0;
  for (const auto& g : r.history) {
    out += std::to_string(g.generation) + "," + num(g.best_objective) + "," + num(g.best_moments.mean) + "," +
           num(g.best_moments.std_dev) + detail::vec_cells(g.best_design) + detail::vec_cells(ones) + "," +
           std::to_string(g.evaluations - prev) + "," + std::to_string(g.evaluations) + "\n";
    prev = g.evaluations;
  }
  return out;
}

inline std::string al_log_csv(const mpss::RunHistory& h) {
  std::string out = "q,round,added,dropped,relative_error,max_candidate_score,dataset_size\n";
  auto rows = [&out](std::size_t q, const std::vector<al::RoundLog>& log) {
    for (const auto& r : log)
      out += std::to_string(q) + "," + std::to_string(r.round) + "," + std::to_string(r.added) + "," +
             std::to_string(r.dropped) + "," + num(r.relative_error) + "," + num(r.max_candidate_score) + "," +
             std::to_string(r.dataset_size) + "\n";
  };
  rows(0, h.warm_start_al_log);
  for (const auto& it : h.iterations) rows(it.q, it.al_log);
  return out;
}

inline nlohmann::json verification_json(const mpss::Verification& v) {
  nlohmann::json j;
  j["mean"] = v.moments[0].mean;
  j["std"] = v.moments[0].std_dev;
  j["std_error"] = v.moments[0].std_error;
  j["samples"] = v.moments[0].n;
  j["objective"] = v.objective;
  j["constraints"] = detail::to_std(v.constraints);
  j["feasible"] = v.feasible;
  nlohmann::json resp = nlohmann::json::array();
  for (const auto& e : v.moments) resp.push_back({{"mean", e.mean}, {"std", e.std_dev}, {"std_error", e.std_error}});
  j["responses"] = resp;
  return j;
}

inline nlohmann::json resolved_config(const experiment::ExperimentConfig& c) {
  auto copy = c;
  nlohmann::json j = experiment::make_schema(copy).dump();
  j["derived_seeds"] = experiment::derived_seeds(c);
  return j;
}

inline std::string config_hash(const experiment::ExperimentConfig& c) {
  auto copy = c;
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx",
                static_cast<unsigned long long>(config::fnv1a(experiment::make_schema(copy).dump().dump())));
  return buf;
}

inline nlohmann::json summary_json(const experiment::ExperimentConfig& c, const RdoProblem& problem,
                                   const experiment::RunResult& r) {
  nlohmann::json j;
  j["schema_version"] = kSchemaVersion;
  j["problem"] = problem.name;
  j["method"] = c.method;
  j["seed"] = c.seed;
  j["config_hash"] = config_hash(c);
  j["d_star"] = detail::to_std(r.d_star());
  j["seconds"] = r.seconds;
  std::optional<mpss::Verification> v;
  if (r.mpss) {
    const auto& h = r.mpss->history;
    j["status"] = h.status;
    if (!h.message.empty()) j["message"] = h.message;
    j["total_evaluations"] = h.total_evaluations;
    j["warm_start_evaluations"] = h.warm_start_evaluations;
    j["iterations"] = h.iterations.size();
    j["initial_design"] = detail::to_std(h.warm_start_design);
    j["normalizers"] = {{"mean", h.normalizers.mean}, {"std", h.normalizers.std_dev},
                        {"constraint_scale", h.normalizers.constraint_scale}};
    if (!h.iterations.empty()) {
      const auto& last = h.iterations.back();
      j["surrogate"] = {{"mean", last.moments[0].mean}, {"std", last.moments[0].std_dev}, {"objective", last.objective}};
    }
    v = r.mpss->verification;
  } else {
    const auto& m = *r.mcs;
    j["status"] = m.stop_reason;
    j["total_evaluations"] = m.total_evaluations;
    j["designs_evaluated"] = m.designs_evaluated;
    j["initial_design"] = detail::to_std(m.normalization_design);
    j["normalizers"] = {{"mean", m.normalizers.mean}, {"std", m.normalizers.std_dev},
                        {"constraint_scale", m.normalizers.constraint_scale}};
    j["inner_estimate"] = {{"mean", m.moments[0].mean}, {"std", m.moments[0].std_dev}, {"objective", m.objective}};
    v = m.verification;
  }
  // Headline numbers: post-hoc MCS at d* when available.
  if (v) {
    j["verification"] = verification_json(*v);
    j["mean"] = v->moments[0].mean;
    j["std"] = v->moments[0].std_dev;
  } else if (j.contains("surrogate")) {
    j["mean"] = j["surrogate"]["mean"];
    j["std"] = j["surrogate"]["std"];
  } else if (j.contains("inner_estimate")) {
    j["mean"] = j["inner_estimate"]["mean"];
    j["std"] = j["inner_estimate"]["std"];
  }
  return j;
}

/// `root/<problem>-<method>-s<seed>-<UTC timestamp>`, suffixed on collision.
inline std::filesystem::path make_output_dir(const std::filesystem::path& root, const experiment::ExperimentConfig& c) {
  const std::time_t now = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  std::tm tm{};
  gmtime_r(&now, &tm);
  char stamp[32];
  std::strftime(stamp, sizeof stamp, "%Y%m%dT%H%M%SZ", &tm);
  const std::string base = c.problem + "-" + c.method + "-s" + std::to_string(c.seed) + "-" + stamp;
  std::filesystem::path dir = root / base;
  for (int i = 1; std::filesystem::exists(dir); ++i) dir = root / (base + "-" + std::to_string(i));
  std::filesystem::create_directories(dir);
  return dir;
}

inline void write_text(const std::filesystem::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("cannot write " + path.string());
  out << text;
}

inline void write_run(const std::filesystem::path& dir, const experiment::ExperimentConfig& c, const RdoProblem& problem,
                      const experiment::RunResult& r) {
  write_text(dir / "history.csv", r.mpss ? history_csv(r.mpss->history) : history_csv(*r.mcs));
  if (r.mpss) write_text(dir / "al_log.csv", al_log_csv(r.mpss->history));
  write_text(dir / "summary.json", summary_json(c, problem, r).dump(2) + "\n");
}

}  // namespace rdo::report
