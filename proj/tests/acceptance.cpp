// rdo_acceptance: runs the acceptance criteria and prints one line each.
//
//   rdo_acceptance [--only N]... [--rdo path/to/rdo] [--work dir]
//
// Criterion 14 is the constrained multi-response run. Exit status is 1 if
// any selected criterion fails.

#include <Eigen/Eigenvalues>

#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <functional>
#include <numbers>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "rdo/rdo.hpp"

using namespace rdo;

namespace {

struct Outcome {
  bool pass = false;
  std::string detail;
};

std::string fmt(const char* f, auto... args) {
  char buf[512];
  std::snprintf(buf, sizeof buf, f, args...);
  return buf;
}

experiment::ExperimentConfig config_for(const std::string& problem, const std::string& method, std::uint64_t seed) {
  return experiment::resolve({{"problem", problem, "acceptance"},
                              {"method", method, "acceptance"},
                              {"seed", std::to_string(seed), "acceptance"}});
}

double binomial(std::size_t n, std::size_t k) {
  double r = 1.0;
  for (std::size_t i = 1; i <= k; ++i) r = r * static_cast<double>(n - k + i) / static_cast<double>(i);
  return r;
}

Outcome basis_count() {
  std::size_t checked = 0;
  for (std::size_t n = 1; n <= 12; ++n)
    for (std::size_t s = 1; s <= std::min<std::size_t>(3, n); ++s)
      for (std::size_t m = s; m <= 5; ++m) {
        double expect = 1.0;
        for (std::size_t k = 1; k <= s; ++k) expect += binomial(n, k) * binomial(m, k);
        const auto set = pdd::enumerate_basis(n, s, m);
        if (static_cast<double>(set.size()) != expect)
          return {false, fmt("N=%zu S=%zu m=%zu: %zu != %.0f", n, s, m, set.size(), expect)};
        ++checked;
      }
  return {true, fmt("%zu (N, S, m) triples", checked)};
}

Outcome orthonormality() {
  // Golub-Welsch nodes on [0, 1], weights summing to one.
  const int n = 12;
  Matrix j = Matrix::Zero(n, n);
  for (int k = 1; k < n; ++k) j(k, k - 1) = j(k - 1, k) = k / std::sqrt(4.0 * k * k - 1.0);
  Eigen::SelfAdjointEigenSolver<Matrix> es(j);
  const Vector x = (es.eigenvalues().array() + 1.0) / 2.0;
  const Vector w = es.eigenvectors().row(0).transpose().array().square();
  double worst = 0.0;
  for (unsigned a = 0; a <= 5; ++a)
    for (unsigned b = 0; b <= 5; ++b) {
      double s = 0.0;
      for (int i = 0; i < n; ++i) s += w[i] * pdd::orthonormal_poly(a, x[i]) * pdd::orthonormal_poly(b, x[i]);
      worst = std::max(worst, std::abs(s - (a == b ? 1.0 : 0.0)));
    }
  return {worst <= 1e-10, fmt("max |<psi_j, psi_k> - delta| = %.2e", worst)};
}

Outcome polynomial_exactness() {
  const auto set = std::make_shared<const pdd::BasisIndexSet>(pdd::enumerate_basis(4, 2, 3));
  Rng rng = make_rng(2024);
  Vector c(static_cast<Eigen::Index>(set->size()));
  for (auto& v : c) v = 2.0 * uniform01(rng) - 1.0;
  const auto u = sampling::sobol_sample(4 * set->size(), 4);
  const Matrix a = pdd::build_basis_matrix(u, *set);
  const auto mom = pdd::pdd_moments(pdd::fit_pdd(a, a * c));
  const double em = std::abs(mom.mean - c[0]);
  const double ev = std::abs(mom.variance - c.tail(c.size() - 1).squaredNorm());
  return {em <= 1e-8 && ev <= 1e-8, fmt("L=%zu, mean err %.2e, variance err %.2e", set->size(), em, ev)};
}

Outcome estimator_cross_validation() {
  const auto cfg = config_for("rastrigin2d", "bnn-pdd-mpss", 1);
  const auto p = experiment::make_problem(cfg);
  const PddMomentEstimator est(p, pdd::shared_context(2, cfg.mpss.pdd_interaction, cfg.mpss.pdd_order));
  const std::vector<Vector> designs{Vector{{0.0, 0.0}}, Vector{{2.0, 2.0}}, Vector{{-1.5, 3.0}}};
  bool ok = true;
  std::string detail;
  double mean0 = 0.0;
  for (std::size_t i = 0; i < designs.size(); ++i) {
    const auto pe = est.estimate_exact(CountingModel(p.model), designs[i])[0];
    const auto mc = mcs_moments(CountingModel(p.model), p, designs[i], 1'000'000, derive_seed(77, {i}))[0];
    const double z = std::abs(pe.mean - mc.mean) / mc.std_error;
    ok = ok && z <= 2.0;
    if (i == 0) mean0 = pe.mean;
    detail += fmt("d%zu |dmean|=%.2f SE; ", i + 1, z);
  }
  const double rel = std::abs(mean0 - 0.00438) / 0.00438;
  ok = ok && rel <= 0.05;
  return {ok, detail + fmt("mean at origin %.5f (%.1f%% from 0.00438)", mean0, 100.0 * rel)};
}

Outcome bnn_gradient() {
  bnn::Architecture arch;
  arch.input_dim = 2;
  arch.hidden = {4, 3};
  arch.activation = bnn::Activation::Tanh;
  const auto s0 = bnn::bnn_init(arch, 1.0, 5);
  Rng rng = make_rng(6);
  Matrix x(12, 2);
  Vector y(12);
  for (int i = 0; i < 12; ++i) {
    x(i, 0) = 2.0 * uniform01(rng) - 1.0;
    x(i, 1) = 2.0 * uniform01(rng) - 1.0;
    y[i] = std::sin(x(i, 0)) + 0.5 * x(i, 1);
  }
  const double kl = 0.1, h = 1e-5;
  const auto analytic = bnn::elbo(s0, x, y, 3, kl, 99).gradient;
  double worst = 0.0;
  for (Eigen::Index i = 0; i < s0.params.size(); ++i) {
    auto s = s0;
    s.params[i] = s0.params[i] + h;
    const double up = bnn::elbo(s, x, y, 3, kl, 99).elbo;
    s.params[i] = s0.params[i] - h;
    const double down = bnn::elbo(s, x, y, 3, kl, 99).elbo;
    const double fd = (up - down) / (2.0 * h);
    worst = std::max(worst, std::abs(fd - analytic[i]) / std::max({std::abs(fd), std::abs(analytic[i]), 1e-6}));
  }
  return {worst < 1e-4, fmt("%lld parameters, max relative error %.2e", static_cast<long long>(s0.params.size()), worst)};
}

Outcome bnn_sine() {
  const int n = 200;
  Matrix x(n, 1);
  Vector y(n);
  Rng rng = make_rng(1);
  for (int i = 0; i < n; ++i) {
    x(i, 0) = uniform01(rng);
    y[i] = std::sin(2.0 * std::numbers::pi * x(i, 0));
  }
  bnn::Architecture arch;
  arch.input_dim = 1;
  const auto r = bnn::train_bnn(x, y, arch, bnn::Hyperparameters{}, 7);
  Matrix inside(100, 1), outside(50, 1);
  for (int i = 0; i < 100; ++i) inside(i, 0) = (i + 0.5) / 100.0;
  for (int i = 0; i < 50; ++i) outside(i, 0) = i < 25 ? -0.5 + 0.02 * i : 1.02 + 0.02 * (i - 25);
  const auto pin = bnn::bnn_predict_batch(r.state, inside, 200, 3);
  const auto pout = bnn::bnn_predict_batch(r.state, outside, 200, 3);
  const double rmse = std::sqrt((pin.mean.array() - (2.0 * std::numbers::pi * inside.array()).sin()).square().mean());
  const double ratio = pout.epistemic_variance.array().sqrt().mean() / pin.epistemic_variance.array().sqrt().mean();
  return {rmse < 0.05 && ratio >= 2.0, fmt("held-out RMSE %.4f, outside/inside std %.2f", rmse, ratio)};
}

Outcome selection_exactness() {
  Rng rng = make_rng(9);
  const int reps = 2000;
  for (int rep = 0; rep < reps; ++rep) {
    const std::size_t n = 2 + rng() % 200;
    const std::size_t k = 1 + rng() % (n - 1);
    Vector v(static_cast<Eigen::Index>(n));
    const bool coarse = rep % 2 == 0;  // coarse values force ties
    for (Eigen::Index i = 0; i < v.size(); ++i) v[i] = coarse ? static_cast<double>(rng() % 5) : uniform01(rng);
    // Oracle: stable sort of indices by decreasing score.
    std::vector<std::size_t> idx(n);
    for (std::size_t i = 0; i < n; ++i) idx[i] = i;
    std::stable_sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) {
      return v[static_cast<Eigen::Index>(a)] > v[static_cast<Eigen::Index>(b)];
    });
    const auto sel = al::select_acquisitions(v, k);
    if (std::set<std::size_t>(sel.begin(), sel.end()) != std::set<std::size_t>(idx.begin(), idx.begin() + k))
      return {false, fmt("mismatch at repetition %d (n=%zu, k=%zu)", rep, n, k)};
  }
  return {true, fmt("%d randomized score vectors", reps)};
}

Outcome de_sanity() {
  de::DeConfig cfg;
  cfg.population = 60;
  cfg.max_generations = 300;
  const Box box(Vector::Constant(2, -5.12), Vector::Constant(2, 5.12));
  const auto r = de::de_minimize([](const Vector& d) { return rastrigin(d); }, nullptr, box, cfg, 7);
  const auto c = de::de_minimize([](const Vector& d) { return d[0]; },
                                 [](const Vector& d) { return Vector::Constant(1, 1.0 - d[0]); },
                                 Box(Vector::Zero(1), Vector::Constant(1, 5.0)), de::DeConfig{}, 3);
  const double err = std::abs(c.x[0] - 1.0);
  return {r.objective < 1e-4 && c.feasible && err <= 1e-4,
          fmt("rastrigin min %.2e, constrained |d - 1| = %.2e", r.objective, err)};
}

struct SeedRun {
  std::uint64_t seed;
  experiment::RunResult result;
};

std::string run_line(const SeedRun& s) {
  const auto& v = s.result.mpss->verification;
  const double mean = v ? v->moments[0].mean : NAN, sd = v ? v->moments[0].std_dev : NAN;
  return fmt("seed %llu: mean %.4g std %.4g |d*|inf %.4f evals %zu %.0f s", static_cast<unsigned long long>(s.seed),
             mean, sd, s.result.d_star().cwiseAbs().maxCoeff(), s.result.mpss->history.total_evaluations,
             s.result.seconds);
}

SeedRun run_seed(const std::string& problem, const std::string& method, std::uint64_t seed) {
  const auto cfg = config_for(problem, method, seed);
  SeedRun s{seed, experiment::run(cfg, experiment::make_problem(cfg))};
  std::printf("    %s %s\n", method.c_str(), run_line(s).c_str());
  std::fflush(stdout);
  return s;
}

Outcome case1_bnn() {
  int good = 0;
  std::string detail;
  for (std::uint64_t seed : {1, 2, 3}) {
    const auto s = run_seed("rastrigin2d", "bnn-pdd-mpss", seed);
    const auto& v = s.result.mpss->verification;
    const bool ok = v && v->moments[0].mean <= 0.05 && v->moments[0].std_dev <= 0.01 &&
                    s.result.d_star().cwiseAbs().maxCoeff() <= 0.05 && s.result.seconds < 900.0;
    good += ok;
    detail += fmt("s%llu %s; ", static_cast<unsigned long long>(seed), ok ? "ok" : "miss");
  }
  return {good >= 2, detail + fmt("%d of 3 seeds", good)};
}

Outcome case1_gp() {
  int good = 0;
  std::string detail;
  for (std::uint64_t seed : {1, 2, 3}) {
    const auto s = run_seed("rastrigin2d", "gp-pdd-mpss", seed);
    const auto& v = s.result.mpss->verification;
    const bool ok = v && v->moments[0].mean <= 0.1 && s.result.seconds < 1200.0;
    good += ok;
    detail += fmt("s%llu %s; ", static_cast<unsigned long long>(seed), ok ? "ok" : "miss");
  }
  return {good >= 2, detail + fmt("%d of 3 seeds", good)};
}

Outcome case2_bnn() {
  std::string detail;
  for (std::uint64_t seed : {1, 2, 3}) {
    const auto s = run_seed("rastrigin10d", "bnn-pdd-mpss", seed);
    const auto& v = s.result.mpss->verification;
    const bool ok = v && v->moments[0].mean <= 1.0 && s.result.seconds <= 1800.0;
    detail += fmt("s%llu mean %.4g in %.0f s; ", static_cast<unsigned long long>(seed),
                  v ? v->moments[0].mean : NAN, s.result.seconds);
    if (ok) return {true, detail + "met"};
  }
  return {false, detail + "no seed met mean <= 1.0 within 30 min"};
}

std::string read_file(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream s;
  s << in.rdbuf();
  return s.str();
}

Outcome determinism(const std::string& rdo, const std::filesystem::path& work) {
  if (rdo.empty()) return {false, "no rdo binary given (--rdo)"};
  std::vector<std::string> csv;
  for (int rep = 0; rep < 2; ++rep) {
    const auto root = work / ("determinism-" + std::to_string(rep));
    std::filesystem::remove_all(root);
    std::filesystem::create_directories(root);
    const std::string cmd = "RDO_OUT='" + root.string() + "' '" + rdo +
                            "' run --problem rastrigin2d --method bnn-pdd-mpss --seed 1 > '" +
                            (root / "stdout.json").string() + "'";
    if (std::system(cmd.c_str()) != 0) return {false, "rdo run failed: " + cmd};
    for (const auto& e : std::filesystem::directory_iterator(root))
      if (e.is_directory()) csv.push_back(read_file(e.path() / "history.csv"));
  }
  if (csv.size() != 2 || csv[0].empty()) return {false, "history.csv missing"};
  return {csv[0] == csv[1], fmt("%zu bytes, %s", csv[0].size(), csv[0] == csv[1] ? "identical" : "different")};
}

Outcome transform_round_trip() {
  const Vector d = Vector::Constant(1, 0.3);
  const std::vector<std::pair<std::string, Marginal>> kinds{
      {"gaussian", Marginal::gaussian_driven(0, 0.2)},
      {"gaussian clipped", Marginal::gaussian_driven(0, 0.2).clipped_to(0.0, 0.5)},
      {"gaussian fixed", Marginal::gaussian_fixed(-1.0, 0.5)},
      {"uniform", Marginal::uniform_driven(0, 0.4)},
      {"uniform fixed", Marginal::uniform_on(2.0, 5.0)}};
  double worst = 0.0;
  for (const auto& [name, m] : kinds)
    for (int i = 0; i < 10000; ++i) {
      const double p = (i + 0.5) / 10000.0;
      worst = std::max(worst, std::abs(m.cdf(m.quantile(p, d), d) - p));
    }
  return {worst <= 1e-10, fmt("%zu marginal kinds, max |F(F^-1(p)) - p| = %.2e", kinds.size(), worst)};
}

Outcome constrained_run() {
  const auto cfg = config_for("constrained2d", "bnn-pdd-mpss", 1);
  const auto p = experiment::make_problem(cfg);
  const auto r = experiment::run(cfg, p);
  const auto& v = r.mpss->verification;
  if (!v) return {false, "no verification"};
  return {v->feasible && v->constraints[0] <= 0.0,
          fmt("d* (%.4f, %.4f), MCS c1 %.4f, mean %.4g, %.0f s", r.d_star()[0], r.d_star()[1], v->constraints[0],
              v->moments[0].mean, r.seconds)};
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"acceptance criteria"};
  std::vector<int> only;
  std::string rdo;
  std::string work = (std::filesystem::temp_directory_path() / "rdo_acceptance").string();
  app.add_option("--only", only, "criterion numbers to run (default: all)");
  app.add_option("--rdo", rdo, "rdo binary, for the determinism criterion");
  app.add_option("--work", work, "scratch directory");
  CLI11_PARSE(app, argc, argv);

  const std::vector<std::pair<std::string, std::function<Outcome()>>> criteria{
      {"basis count", basis_count},
      {"orthonormality", orthonormality},
      {"PDD polynomial exactness", polynomial_exactness},
      {"estimator cross-validation", estimator_cross_validation},
      {"BNN gradient check", bnn_gradient},
      {"BNN epistemic behaviour", bnn_sine},
      {"active-learning selection", selection_exactness},
      {"DE sanity", de_sanity},
      {"case 1 BNN-PDD MPSS", case1_bnn},
      {"case 1 GP-PDD MPSS", case1_gp},
      {"case 2 BNN-PDD MPSS", case2_bnn},
      {"determinism", [&] { return determinism(rdo, work); }},
      {"transform round trip", transform_round_trip},
      {"constrained run feasible", constrained_run},
  };
  int failed = 0;
  for (std::size_t i = 0; i < criteria.size(); ++i) {
    const int n = static_cast<int>(i) + 1;
    if (!only.empty() && std::find(only.begin(), only.end(), n) == only.end()) continue;
    const auto t0 = std::chrono::steady_clock::now();
    Outcome o;
    try {
      o = criteria[i].second();
    } catch (const std::exception& e) {
      o = {false, std::string("exception: ") + e.what()};
    }
    const double sec = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    std::printf("criterion %2d %-28s %s  %s (%.1f s)\n", n, criteria[i].first.c_str(), o.pass ? "PASS" : "FAIL",
                o.detail.c_str(), sec);
    std::fflush(stdout);
    failed += !o.pass;
  }
  return failed == 0 ? 0 : 1;
}
