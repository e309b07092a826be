// rdo: command-line harness.
//
//   rdo run      [--config F] [--problem P] [--method M] [--seed S] [--set k=v]...
//   rdo moments  --design d1,d2,... [--estimator pdd-exact|pdd-surrogate|mcs] [--samples n]
//   rdo mcs      --design d1,d2,... [--samples n]
//   rdo de       (DE on the nominal response, for debugging)
//   rdo pdd moments --design d1,d2,...
//   rdo keys     (config key reference)
//
// Exit codes: 0 success, 1 run or model failure, 2 usage or config error.

#include <cstdlib>
#include <filesystem>
#include <iostream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "rdo/commands.hpp"
#include "rdo/config.hpp"
#include "rdo/experiment.hpp"
#include "rdo/report.hpp"

namespace {

constexpr int kExitOk = 0;
constexpr int kExitFailure = 1;
constexpr int kExitUsage = 2;

struct Common {
  std::string config_path;
  std::vector<std::string> sets;
  std::string problem, method;
  std::string seed;
  std::size_t threads = 0;
};

void add_common(CLI::App* app, Common& c) {
  app->add_option("-c,--config", c.config_path, "config file (key = value lines)");
  app->add_option("--set", c.sets, "override one key, e.g. --set mpss.eps1=0.2 (repeatable)");
  app->add_option("--problem", c.problem, "shorthand for --set problem=...");
  app->add_option("--method", c.method, "shorthand for --set method=...");
  app->add_option("--seed", c.seed, "shorthand for --set seed=...");
  app->add_option("--threads", c.threads, "shorthand for --set threads=...");
}

/// File entries first, then the shorthand flags, then --set in order.
rdo::experiment::ExperimentConfig load(const Common& c) {
  using rdo::config::Entry;
  std::vector<Entry> entries;
  if (!c.config_path.empty()) entries = rdo::config::parse_file(c.config_path);
  auto flag = [&](const std::string& key, const std::string& value) {
    if (!value.empty()) entries.push_back({key, value, "--set"});
  };
  flag("problem", c.problem);
  flag("method", c.method);
  flag("seed", c.seed);
  if (c.threads > 0) flag("threads", std::to_string(c.threads));
  for (const auto& s : c.sets) entries.push_back(rdo::config::parse_assignment(s, "--set"));
  return rdo::experiment::resolve(entries);
}

int cmd_run(const Common& common) {
  const auto cfg = load(common);
  const auto problem = rdo::experiment::make_problem(cfg);
  const char* env = std::getenv("RDO_OUT");
  const std::filesystem::path root = env && *env ? env : cfg.output_root;
  const auto dir = rdo::report::make_output_dir(root, cfg);
  rdo::report::write_text(dir / "config.resolved.json", rdo::report::resolved_config(cfg).dump(2) + "\n");
  std::cerr << "rdo: " << cfg.method << " on " << problem.name << ", seed " << cfg.seed << " -> " << dir.string()
            << "\n";
  const auto result = rdo::experiment::run(cfg, problem);
  rdo::report::write_run(dir, cfg, problem, result);
  const auto summary = rdo::report::summary_json(cfg, problem, result);
  std::cout << summary.dump(2) << "\n";
  const std::string status = summary["status"];
  return status == "surrogate-failure" ? kExitFailure : kExitOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Robust design optimisation with BNN-PDD surrogates"};
  app.require_subcommand(1);

  Common common;
  auto* run = app.add_subcommand("run", "run an experiment and write its result directory");
  add_common(run, common);

  std::vector<double> design;
  std::string estimator = "pdd-exact";
  std::size_t samples = 1'000'000;
  auto* moments = app.add_subcommand("moments", "moments at one design");
  add_common(moments, common);
  moments->add_option("--design", design, "design vector, comma separated")->required()->delimiter(',');
  moments->add_option("--estimator", estimator, "pdd-exact, pdd-surrogate or mcs")
      ->check(CLI::IsMember(rdo::commands::kEstimators));
  moments->add_option("--samples", samples, "MCS sample count")->check(CLI::Range(std::size_t{2}, std::size_t{1} << 40));

  auto* mcs = app.add_subcommand("mcs", "Monte Carlo moments with standard errors at one design");
  add_common(mcs, common);
  mcs->add_option("--design", design, "design vector, comma separated")->required()->delimiter(',');
  mcs->add_option("--samples", samples, "sample count")->check(CLI::Range(std::size_t{2}, std::size_t{1} << 40));

  auto* de = app.add_subcommand("de", "differential evolution on the nominal response");
  add_common(de, common);

  auto* pdd = app.add_subcommand("pdd", "PDD tools");
  pdd->require_subcommand(1);
  auto* pdd_moments = pdd->add_subcommand("moments", "PDD moments from true-model values, with variance shares");
  add_common(pdd_moments, common);
  pdd_moments->add_option("--design", design, "design vector, comma separated")->required()->delimiter(',');

  auto* keys = app.add_subcommand("keys", "list every config key");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kExitOk : kExitUsage;
  }

  try {
    if (keys->parsed()) {
      rdo::experiment::ExperimentConfig c;
      std::cout << rdo::experiment::make_schema(c).describe();
      return kExitOk;
    }
    if (run->parsed()) return cmd_run(common);

    const auto cfg = load(common);
    const auto problem = rdo::experiment::make_problem(cfg);
    nlohmann::json out;
    if (de->parsed()) {
      out = rdo::commands::de_nominal(cfg, problem);
    } else {
      const auto d = rdo::commands::parse_design(design, problem);
      if (moments->parsed()) out = rdo::commands::moments(cfg, problem, d, estimator, samples);
      else if (mcs->parsed()) out = rdo::commands::moments(cfg, problem, d, "mcs", samples);
      else out = rdo::commands::pdd_moments(cfg, problem, d);
    }
    std::cout << out.dump(2) << "\n";
    return kExitOk;
  } catch (const rdo::InvalidArgument& e) {
    std::cerr << "rdo: error: " << e.what() << "\n";
    return kExitUsage;
  } catch (const std::exception& e) {
    std::cerr << "rdo: failed: " << e.what() << "\n";
    return kExitFailure;
  }
}
