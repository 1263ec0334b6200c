// Acceptance run: one PASS/FAIL line per criterion, exit status 1 if any fail.
//
// Criteria 1, 2 and 6 share one benchmark run of three cells with 10
// repetitions each. Criterion 1 also prints the r2 reached by an oracle that
// knows the true curves, as a reference for how much timing information the
// generated data carry.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <iostream>
#include <limits>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "gpdpm/gpdpm.hpp"
#include "oracles.hpp"

using namespace gpdpm;

namespace {

int failures = 0;

void report(int id, bool pass, const std::string& detail) {
  std::printf("criterion %2d: %s  %s\n", id, pass ? "PASS" : "FAIL", detail.c_str());
  std::fflush(stdout);
  if (!pass) ++failures;
}

std::string fmt(const char* f, double a, double b = 0, double c = 0, double d = 0) {
  char buf[256];
  std::snprintf(buf, sizeof(buf), f, a, b, c, d);
  return buf;
}

double mean_r2(const std::vector<BenchmarkRow>& rows, const BenchmarkCell& c, int* failed = nullptr) {
  double s = 0.0;
  int n = 0, bad = 0;
  for (const auto& r : rows) {
    if (r.cell.N != c.N || r.cell.Nb != c.Nb || r.cell.sigma != c.sigma) continue;
    if (r.failed) {
      ++bad;
      continue;
    }
    s += r.corr.r2;
    ++n;
  }
  if (failed) *failed = bad;
  return n ? s / n : std::numeric_limits<double>::quiet_NaN();
}

// Time centre of one individual by least squares against the true curves.
double true_curve_centre(const IndividualRecord& ind, const SynthTruth& truth, const SynthConfig& sc) {
  double best = 0.0, best_sse = std::numeric_limits<double>::infinity();
  for (double c = sc.tau_lo - 2.0; c <= sc.tau_hi + 2.0; c += 0.005) {
    double sse = 0.0;
    for (const auto& o : ind.observations) {
      const double a = truth.alpha[o.biomarker];
      const double g = sigmoid(sc.orient_increasing ? std::abs(a) : a, o.time + c);
      sse += (o.value - g) * (o.value - g);
    }
    if (sse < best_sse) best_sse = sse, best = c;
  }
  return best;
}

double oracle_r2(const BenchmarkCell& cell, const BenchmarkOptions& opt) {
  double total = 0.0;
  for (int rep = 0; rep < opt.repetitions; ++rep) {
    SynthConfig sc = opt.base;
    sc.N = cell.N;
    sc.Nb = cell.Nb;
    sc.sigma = cell.sigma;
    sc.seed = repetition_seed(opt.seed, cell, rep);
    const auto s = gen_sigmoid_cohort(sc);
    std::vector<double> est;
    for (const auto& ind : s.cohort.individuals) est.push_back(true_curve_centre(ind, s.truth, sc));
    const double r = oracle::pearson(est, s.truth.time_centre);
    total += r * r;
  }
  return total / opt.repetitions;
}

void benchmark_criteria() {
  const BenchmarkCell c4{20, 4, 0.1}, c8{20, 8, 0.1}, c4n{20, 4, 0.4};
  BenchmarkOptions opt;
  opt.repetitions = 10;
  opt.seed = 1;
  const auto start = std::chrono::steady_clock::now();
  const auto rows = run_benchmark({c4, c8, c4n}, opt);
  const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  write_benchmark_table(std::cout, summarize_benchmark(rows));
  std::printf("(30 fits in %.1f s)\n", secs);

  int f4 = 0, f8 = 0, f4n = 0;
  const double m4 = mean_r2(rows, c4, &f4), m8 = mean_r2(rows, c8, &f8), m4n = mean_r2(rows, c4n, &f4n);
  const double o4 = oracle_r2(c4, opt), o8 = oracle_r2(c8, opt);
  const bool pass1 = f4 == 0 && f8 == 0 && m4 >= 0.85 && m8 >= 0.85 && m8 >= m4 - 0.02;
  report(1, pass1,
         fmt("mean r2 Nb=4: %.3f, Nb=8: %.3f (need >= 0.85 each, Nb=8 >= Nb=4 - 0.02)", m4, m8) +
             fmt("; true-curve oracle r2 Nb=4: %.3f, Nb=8: %.3f", o4, o8) +
             (f4 + f8 ? " [" + std::to_string(f4 + f8) + " failed fits]" : ""));
  report(2, f4n == 0 && m4 > m4n, fmt("mean r2 sigma=0.1: %.3f > sigma=0.4: %.3f", m4, m4n));

  double worst = std::numeric_limits<double>::infinity();
  int fitted = 0;
  for (const auto& r : rows)
    if (!r.failed) worst = std::min(worst, r.min_derivative), ++fitted;
  report(6, fitted == static_cast<int>(rows.size()) && worst >= -1e-3,
         fmt("min posterior mean derivative over %.0f fitted models: %.3g (need >= -1e-3)", fitted, worst));
}

// Two biomarkers, five individuals with mixed random-effect structures.
Cohort small_cohort(double lambda, std::size_t grid_points) {
  Cohort c;
  c.biomarkers = {{"a", 0.9, 1.5, 0.12, lambda}, {"b", 0.5, 2.0, 0.2, lambda}};
  std::mt19937_64 rng(17);
  std::normal_distribution<double> noise(0.0, 0.1);
  for (int j = 0; j < 5; ++j) {
    IndividualRecord ind{"s" + std::to_string(j), {}, 0.4 * j - 0.8, {}};
    const int visits = 1 + j % 4 + (j == 4 ? 1 : 0);
    for (int v = 0; v < visits; ++v) {
      const double tau = v - 0.5 * (visits - 1);
      for (std::size_t b = 0; b < 2; ++b) {
        if (b == 1 && v == 0 && j == 2) continue;
        const double t = tau + ind.time_shift;
        ind.observations.push_back({b, tau, 1.0 / (1.0 + std::exp(-(b + 1.0) * t)) + noise(rng)});
      }
    }
    ind.random_effect = assign_re_structure(ind, 2, 0.2);
    c.individuals.push_back(ind);
  }
  reposition_derivative_grid(c, grid_points);
  return c;
}

oracle::GpPosterior exact_for(const JointGP& j) {
  const Matrix K = j.dense_prior();
  const Matrix N = j.dense_noise();
  const auto n = static_cast<Eigen::Index>(j.num_observations);
  Vector y(n);
  for (const auto& blk : j.blocks)
    for (std::size_t a = 0; a < blk.num_obs(); ++a) y(static_cast<Eigen::Index>(blk.row_observation[a])) = blk.y(a);
  return oracle::exact_gp(K, N.topLeftCorner(n, n), y);
}

void ep_oracle_criterion() {
  const auto gh = oracle::gauss_hermite(200);
  std::mt19937_64 rng(99);
  std::uniform_real_distribution<double> um(-2.0, 2.0), uv(0.1, 2.0), ul(0.5, 3.0);
  double worst = 0.0;
  for (int i = 0; i < 100; ++i) {
    const double var = uv(rng), mu = um(rng) * std::sqrt(var), lambda = ul(rng);
    const auto ref = oracle::tilted_by_gauss_hermite(gh, mu, var, lambda);
    const auto tm = tilted_moments(mu, var, lambda);
    worst = std::max({worst, std::abs(tm.Z - ref.Z), std::abs(tm.mean - ref.mean), std::abs(tm.var - ref.var)});
  }

  // One derivative site on a three-point series: the site factor touches only
  // the derivative, so its posterior is a 1-D integral and the function rows
  // follow by Gaussian conditioning.
  Cohort c;
  const double lambda = 0.3;
  c.biomarkers = {{"a", 0.8, 1.2, 0.15, lambda}};
  IndividualRecord ind{"s", {{0, 0.0, 0.6}, {0, 1.0, 0.4}, {0, 2.0, 0.35}}, 0.0, {RandomEffectType::Zero, {0.0}, 0.0}};
  c.individuals.push_back(ind);
  reposition_derivative_grid(c, 1);
  const JointGP j = assemble_joint(c);
  EPOptions opt;
  opt.tol = 1e-12;
  opt.max_sweeps = 500;
  const EPState st = ep_run(j, opt);
  const auto ref = exact_for(j);
  const double m0 = ref.mean(3), v0 = ref.cov(3, 3), s0 = std::sqrt(v0);
  auto dens = [&](double x) { return std::exp(-0.5 * (x - m0) * (x - m0) / v0) * oracle::Phi(x / lambda); };
  const double Z = oracle::simpson(dens, m0 - 12 * s0, m0 + 12 * s0, 20000);
  const double M = oracle::simpson([&](double x) { return x * dens(x); }, m0 - 12 * s0, m0 + 12 * s0, 20000) / Z;
  const Vector post = st.posterior_mean(j);
  double site_err = std::abs(post(3) - M);
  for (Eigen::Index a = 0; a < 3; ++a)
    site_err = std::max(site_err, std::abs(post(a) - (ref.mean(a) + ref.cov(a, 3) / v0 * (M - m0))));

  report(3, worst < 1e-8 && site_err < 1e-6,
         fmt("tilted moments vs 200-point Gauss-Hermite, max abs err %.2e over 100 triples (need < 1e-8); "
             "single-site posterior mean vs quadrature %.2e (need < 1e-6)",
             worst, site_err));
}

struct LimitErrors {
  double mean = 0, cov = 0, lm = 0;
};

LimitErrors gaussian_limit(double lambda, std::size_t grid) {
  const Cohort c = small_cohort(lambda, grid);
  const JointGP j = assemble_joint(c);
  EPOptions opt;
  opt.tol = 1e-12;
  opt.max_sweeps = 1000;
  const EPState st = ep_run(j, opt);
  const auto ref = exact_for(j);
  // each probit factor tends to the constant 1/2
  const double constant = -static_cast<double>(j.num_derivatives()) * std::log(2.0);
  return {(st.posterior_mean(j) - ref.mean).cwiseAbs().maxCoeff(), (st.posterior_cov(j) - ref.cov).cwiseAbs().maxCoeff(),
          std::abs(st.log_marginal - (ref.log_marginal + constant))};
}

void gaussian_limit_criterion() {
  const auto z = gaussian_limit(1e-6, 0);
  const auto l = gaussian_limit(1e6, 10);
  const bool zero_ok = z.mean < 1e-8 && z.cov < 1e-8 && z.lm < 1e-8;
  const bool big_ok = l.mean < 1e-8 && l.cov < 1e-8 && l.lm < 1e-8;
  report(4, zero_ok && big_ok,
         fmt("zero sites: mean %.1e cov %.1e log-marginal %.1e; ", z.mean, z.cov, z.lm) +
             fmt("lambda=1e6 with 20 sites: mean %.1e cov %.1e log-marginal %.1e (need all < 1e-8)", l.mean, l.cov,
                 l.lm));
}

Cohort gradient_instance() {
  Cohort c;
  c.biomarkers = {{"a", 0.3, 1.4, 0.12, 1e-6}, {"b", 0.2, 2.1, 0.18, 1e-6}};
  std::mt19937_64 rng(4);
  std::normal_distribution<double> noise(0.0, 0.08);
  const std::vector<int> visits = {1, 2, 3, 4, 5};
  const std::vector<double> shifts = {-1.3, -0.4, 0.1, 0.7, 1.2};
  for (std::size_t j = 0; j < 5; ++j) {
    IndividualRecord ind{"s" + std::to_string(j), {}, shifts[j], {}};
    for (int v = 0; v < visits[j]; ++v) {
      const double tau = v - 0.5 * (visits[j] - 1);
      for (std::size_t b = 0; b < 2; ++b) {
        if (j == 3 && b == 1 && v == 2) continue;
        ind.observations.push_back({b, tau, 1.0 / (1.0 + std::exp(-(0.8 + b) * (tau + shifts[j]))) + noise(rng)});
      }
    }
    ind.random_effect = assign_re_structure(ind, 2, 0.15);
    if (ind.random_effect.type != RandomEffectType::Zero) ind.random_effect.sigma = {0.15, 0.22};
    c.individuals.push_back(ind);
  }
  reposition_derivative_grid(c, 10);
  return c;
}

void gradient_criterion() {
  const Cohort c = gradient_instance();
  const Priors p = default_priors(c, PriorConfig{});
  EPState st;
  objective(c, p, {}, &st);
  const FixedSiteObjective fo(c, st, p);
  const Vector x = fo.initial();
  const Vector g = fo.gradient(x);
  const auto f = [&](const Vector& v) { return fo.value(v); };
  double worst = 0.0;
  for (Eigen::Index i = 0; i < x.size(); ++i) {
    const double fd = oracle::central_difference(f, x, i, 1e-5);
    worst = std::max(worst, std::abs(fd - g(i)) / std::max(std::abs(fd), 1e-2));
  }
  report(5, worst < 1e-4,
         fmt("%.0f parameters, max relative error vs central differences %.2e (denominator floored at 1e-2; need < 1e-4)",
             static_cast<double>(x.size()), worst));
}

struct FittedModel {
  Cohort cohort;
  std::vector<std::vector<Site>> sites;
};

FittedModel fit_synthetic(const SynthConfig& sc) {
  const auto s = gen_sigmoid_cohort(sc);
  const auto r = fit(s.cohort);
  return {r.cohort, r.ep.sites()};
}

void missing_data_criterion() {
  SynthConfig sc;
  sc.N = 20;
  sc.Nb = 4;
  sc.seed = 7;
  const FittedModel m = fit_synthetic(sc);
  const Predictor full(m.cohort, m.sites);
  const auto grid = default_stage_grid(full);
  double worst = 0.0;
  for (std::size_t drop = 0; drop < 4; ++drop) {
    // model built without biomarker `drop` from the start
    Cohort sub = m.cohort;
    sub.biomarkers.erase(sub.biomarkers.begin() + static_cast<long>(drop));
    sub.derivative_grid.erase(sub.derivative_grid.begin() + static_cast<long>(drop));
    for (auto& ind : sub.individuals) {
      std::vector<Observation> kept;
      for (auto o : ind.observations)
        if (o.biomarker != drop) kept.push_back({o.biomarker > drop ? o.biomarker - 1 : o.biomarker, o.time, o.value});
      ind.observations = kept;
      ind.random_effect.sigma.erase(ind.random_effect.sigma.begin() + static_cast<long>(drop));
    }
    std::erase_if(sub.individuals, [](const IndividualRecord& i) { return i.observations.empty(); });
    auto sites = m.sites;
    sites.erase(sites.begin() + static_cast<long>(drop));
    const Predictor reduced(sub, sites);

    std::vector<StageObservation> a, b;
    for (std::size_t k = 0, bm = 0; bm < 4; ++bm) {
      if (bm == drop) continue;
      const double v = 0.2 + 0.15 * static_cast<double>(bm);
      a.push_back({bm, 0.0, v});
      b.push_back({k++, 0.0, v});
    }
    const auto sa = stage(full, a, grid);
    const auto sb = stage(reduced, b, grid);
    for (std::size_t i = 0; i < grid.size(); ++i)
      worst = std::max({worst, std::abs(sa.density[i] - sb.density[i]), std::abs(sa.log_density[i] - sb.log_density[i])});
  }
  report(7, worst <= 1e-10, fmt("max per-grid-point difference %.2e over 4 withheld biomarkers (need <= 1e-10)", worst));
}

void staging_recovery_criterion() {
  SynthConfig sc;
  sc.N = 20;
  sc.Nb = 4;
  sc.sigma = 0.1;
  sc.seed = 8;
  const FittedModel m = fit_synthetic(sc);
  const Predictor p(m.cohort, m.sites);
  const auto [lo, hi] = p.time_range();
  const double half = 0.5 * p.mean_length_scale();
  std::mt19937_64 rng(2024);
  std::uniform_real_distribution<double> ut(lo, hi);
  std::normal_distribution<double> noise(0.0, 0.1);
  int hits = 0;
  const int draws = 50;
  for (int k = 0; k < draws; ++k) {
    const double t0 = ut(rng);
    std::vector<StageObservation> obs;
    for (std::size_t b = 0; b < p.num_biomarkers(); ++b) obs.push_back({b, 0.0, predict_curve(p, b, t0).mean + noise(rng)});
    if (std::abs(stage(p, obs).mean_stage - t0) <= half) ++hits;
  }
  report(8, hits >= 40,
         fmt("%.0f of 50 posterior-mean stages within +-%.2f (half the mean length-scale) of the true stage (need >= 40)",
             hits, half));
}

double accuracy(const std::vector<double>& stages, const std::vector<double>& reference, const std::vector<bool>& truth) {
  const auto cls = classify_by_reference(stages, reference, 0.1);
  int correct = 0;
  for (std::size_t i = 0; i < stages.size(); ++i) correct += cls.positive[i] == truth[i];
  return static_cast<double>(correct) / static_cast<double>(stages.size());
}

void separation_criterion() {
  // Each repetition draws 80 subjects from one set of curves in two groups
  // whose first visits are 5 years apart; the first 40 train the model, the
  // rest are staged as unseen subjects. The reference is the fitted shifts of
  // the later training group.
  const int reps = 10;
  double model_acc = 0.0, oracle_acc = 0.0, worst = 1.0;
  for (int rep = 0; rep < reps; ++rep) {
    SynthConfig sc;
    sc.N = 80;
    sc.Nb = 4;
    sc.sigma = 0.1;
    sc.group_centres = {5.0, 10.0};
    sc.group_halfwidth = 1.0;
    sc.seed = repetition_seed(9, {80, 4, 0.1}, rep);
    const auto all = gen_sigmoid_cohort(sc);
    Cohort train = all.cohort;
    train.individuals.resize(40);
    const auto r = fit(train);
    const Predictor p(r.cohort, r.ep.sites());

    std::vector<double> reference, oracle_reference;
    for (std::size_t j = 0; j < 40; ++j)
      if (all.truth.group[j] == 1) {
        reference.push_back(r.cohort.individuals[j].time_shift);
        oracle_reference.push_back(true_curve_centre(all.cohort.individuals[j], all.truth, sc));
      }
    std::vector<double> stages, oracle_stages;
    std::vector<bool> truth;
    for (std::size_t j = 40; j < 80; ++j) {
      const auto& ind = all.cohort.individuals[j];
      stages.push_back(stage(p, visits_to_offsets(ind.observations)).mean_stage);
      oracle_stages.push_back(true_curve_centre(ind, all.truth, sc));
      truth.push_back(all.truth.group[j] == 1);
    }
    const double acc = accuracy(stages, reference, truth);
    model_acc += acc / reps;
    worst = std::min(worst, acc);
    oracle_acc += accuracy(oracle_stages, oracle_reference, truth) / reps;
  }
  report(9, model_acc >= 0.9,
         fmt("mean accuracy %.3f over 10 repetitions of 40 unseen subjects, lowest %.3f (need >= 0.9); "
             "true-curve oracle %.3f",
             model_acc, worst, oracle_acc));
}

void determinism_criterion() {
  BenchmarkOptions opt;
  opt.repetitions = 3;
  opt.seed = 11;
  opt.threads = 1;
  const std::vector<BenchmarkCell> cells{{20, 4, 0.2}};
  std::ostringstream a, b;
  write_benchmark_csv(a, run_benchmark(cells, opt), false);
  opt.threads = 3;
  write_benchmark_csv(b, run_benchmark(cells, opt), false);
  const bool same = a.str() == b.str();

  SynthConfig sc;
  sc.N = 15;
  sc.Nb = 3;
  sc.seed = 12;
  const FittedModel m = fit_synthetic(sc);
  const Model model{m.cohort, m.sites, {}, 0.0, true};
  const auto path = (std::filesystem::temp_directory_path() / "gpdpm_acceptance_model.json").string();
  save_model(path, model);
  const Model back = load_model(path);
  std::remove(path.c_str());
  const Predictor pa = model.predictor(), pb = back.predictor();
  std::mt19937_64 rng(5);
  std::uniform_real_distribution<double> ut(-6.0, 6.0);
  double worst = 0.0;
  for (int k = 0; k < 50; ++k) {
    const double t = ut(rng);
    for (std::size_t bm = 0; bm < pa.num_biomarkers(); ++bm) {
      const auto x = predict_curve(pa, bm, t), y = predict_curve(pb, bm, t);
      worst = std::max({worst, std::abs(x.mean - y.mean), std::abs(x.variance - y.variance)});
    }
  }
  report(10, same && worst <= 1e-12,
         std::string(same ? "benchmark CSV byte-identical across runs" : "benchmark CSV differs between runs") +
             fmt("; save/load prediction difference %.2e at 50 times (need <= 1e-12)", worst));
}

}  // namespace

int main() {
  try {
    benchmark_criteria();
    ep_oracle_criterion();
    gaussian_limit_criterion();
    gradient_criterion();
    missing_data_criterion();
    staging_recovery_criterion();
    separation_criterion();
    determinism_criterion();
  } catch (const std::exception& e) {
    std::printf("acceptance aborted: %s\n", e.what());
    return 2;
  }
  std::printf("%s: %d of 10 criteria failed\n", failures ? "FAIL" : "PASS", failures);
  return failures ? 1 : 0;
}
