// gpdpm: fit, predict, stage, simulate and benchmark from the command line.
//
// Exit codes: 0 ok, 1 input error, 2 numerical failure.

#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "gpdpm/gpdpm.hpp"

namespace fs = std::filesystem;
using namespace gpdpm;

namespace {

struct Options {
  std::string config;
  // shared
  std::string data, model, out;
  std::uint64_t seed = 1;
  std::string grid_span;
  std::size_t grid_points = 201;
  bool raw_scores = false;
  std::vector<std::string> decreasing;
  // fit
  int max_outer = 30;
  int inner = 10;
  double tol = 1e-4;
  double lambda = 1e-6;
  std::size_t derivative_points = kDefaultDerivativePoints;
  bool no_priors = false;
  std::size_t curve_points = 200;
  // simulate / benchmark
  std::size_t N = 20, Nb = 4;
  double sigma = 0.1;
  double alpha_sd = 0.2449489742783178;
  std::vector<std::string> cells;
  bool table1 = false;
  int reps = 10;
  unsigned threads = 0;
  bool no_timing = false;
};

struct Commands {
  CLI::App* fit = nullptr;
  CLI::App* predict = nullptr;
  CLI::App* stage = nullptr;
  CLI::App* simulate = nullptr;
  CLI::App* benchmark = nullptr;
};

Commands build(CLI::App& app, Options& o) {
  app.require_subcommand(1);
  Commands c;
  auto common = [&](CLI::App* s) {
    s->add_option("--config", o.config, "key=value file; command-line flags take precedence");
    s->add_option("--seed", o.seed, "random seed");
    s->add_option("--out", o.out, "output directory")->required();
  };

  c.fit = app.add_subcommand("fit", "fit a model to a long-format CSV");
  common(c.fit);
  c.fit->add_option("--data", o.data, "training CSV: subject_id,time,biomarker,value")->required();
  c.fit->add_flag("--raw-scores,--no-transform", o.raw_scores, "values are already scores in [0,1]");
  c.fit->add_option("--decreasing", o.decreasing, "biomarkers whose low values are abnormal")->delimiter(',');
  c.fit->add_option("--max-outer", o.max_outer, "outer iterations");
  c.fit->add_option("--inner", o.inner, "CG iterations per parameter block");
  c.fit->add_option("--tol", o.tol, "objective improvement tolerance");
  c.fit->add_option("--lambda", o.lambda, "monotonicity probit scale");
  c.fit->add_option("--derivative-points", o.derivative_points, "derivative points per biomarker");
  c.fit->add_flag("--no-priors", o.no_priors, "maximize the plain EP marginal");
  c.fit->add_option("--curve-points", o.curve_points, "points in curves.csv per biomarker");

  c.predict = app.add_subcommand("predict", "posterior trajectories of a fitted model");
  common(c.predict);
  c.predict->add_option("--model", o.model, "model.json from fit")->required();
  c.predict->add_option("--grid-span", o.grid_span, "lo,hi time span");
  c.predict->add_option("--grid-points", o.grid_points, "points per biomarker");

  c.stage = app.add_subcommand("stage", "stage unseen subjects");
  common(c.stage);
  c.stage->add_option("--model", o.model, "model.json from fit")->required();
  c.stage->add_option("--data", o.data, "test CSV: subject_id,time,biomarker,value")->required();
  c.stage->add_flag("--raw-scores,--no-transform", o.raw_scores, "values are already scores in [0,1]");
  c.stage->add_option("--grid-span", o.grid_span, "lo,hi stage span");
  c.stage->add_option("--grid-points", o.grid_points, "stage grid points");

  c.simulate = app.add_subcommand("simulate", "generate a synthetic sigmoid cohort");
  common(c.simulate);
  c.simulate->add_option("--N", o.N, "individuals");
  c.simulate->add_option("--Nb", o.Nb, "biomarkers");
  c.simulate->add_option("--sigma", o.sigma, "noise sd");
  c.simulate->add_option("--alpha-sd", o.alpha_sd, "sd of the sigmoid slopes");

  c.benchmark = app.add_subcommand("benchmark", "time-shift recovery over a grid of synthetic cells");
  common(c.benchmark);
  c.benchmark->add_option("--cell", o.cells, "N=..,Nb=..,sigma=.. (repeatable)");
  c.benchmark->add_flag("--table1", o.table1, "the full sigma x Nb x N grid");
  c.benchmark->add_option("--reps", o.reps, "repetitions per cell");
  c.benchmark->add_option("--threads", o.threads, "worker threads (0: all cores)");
  c.benchmark->add_option("--alpha-sd", o.alpha_sd, "sd of the sigmoid slopes");
  c.benchmark->add_option("--max-outer", o.max_outer, "outer iterations per fit");
  c.benchmark->add_flag("--no-timing", o.no_timing, "write 0 in the seconds column");
  return c;
}

CLI::App* active(const Commands& c) {
  for (auto* s : {c.fit, c.predict, c.stage, c.simulate, c.benchmark})
    if (s->parsed()) return s;
  return nullptr;
}

std::vector<std::string> args_of(int argc, char** argv) {
  std::vector<std::string> a;
  for (int i = 1; i < argc; ++i) a.emplace_back(argv[i]);
  return a;
}

/// Appends config entries for options not given on the command line.
std::vector<std::string> merge_config(CLI::App* sub, const std::vector<std::string>& args, const std::string& path) {
  std::vector<std::string> merged = args;
  for (const auto& [key, value] : load_config(path)) {
    if (key == "config") continue;
    CLI::Option* opt = nullptr;
    try {
      opt = sub->get_option("--" + key);
    } catch (const CLI::OptionNotFound&) {
      throw InputError(path + ": unknown key '" + key + "' for '" + sub->get_name() + "'");
    }
    if (opt->count() > 0) continue;
    if (opt->get_type_size() == 0) {
      if (value == "1" || value == "true" || value == "yes" || value == "on") merged.push_back("--" + key);
      continue;
    }
    merged.push_back("--" + key);
    merged.push_back(value);
  }
  return merged;
}

void ensure_dir(const std::string& dir) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec || !fs::is_directory(dir)) throw InputError("cannot create output directory '" + dir + "'");
}

std::ofstream open_out(const std::string& dir, const std::string& name) {
  const auto path = (fs::path(dir) / name).string();
  std::ofstream f(path);
  if (!f) throw InputError("cannot write '" + path + "'");
  return f;
}

std::pair<double, double> parse_span(const std::string& s) {
  const auto parts = csv::split(s);
  double lo = 0, hi = 0;
  if (parts.size() != 2 || !csv::parse_double(parts[0], lo) || !csv::parse_double(parts[1], hi) || !(hi > lo))
    throw InputError("--grid-span expects lo,hi with lo < hi, got '" + s + "'");
  return {lo, hi};
}

BenchmarkCell parse_cell(const std::string& s) {
  BenchmarkCell c;
  std::set<std::string> seen;
  for (auto part : csv::split(s)) {
    const auto eq = part.find('=');
    if (eq == std::string_view::npos) throw InputError("--cell entry '" + std::string(part) + "' is not key=value");
    const std::string key(csv::trim(part.substr(0, eq)));
    const auto val = csv::trim(part.substr(eq + 1));
    double v = 0;
    if (!csv::parse_double(val, v)) throw InputError("--cell value '" + std::string(val) + "' is not a number");
    if (key == "N" && v >= 2 && v == std::floor(v))
      c.N = static_cast<std::size_t>(v);
    else if (key == "Nb" && v >= 1 && v == std::floor(v))
      c.Nb = static_cast<std::size_t>(v);
    else if (key == "sigma" && v >= 0)
      c.sigma = v;
    else
      throw InputError("invalid --cell entry '" + std::string(part) + "'");
    seen.insert(key);
  }
  if (seen.size() != 3) throw InputError("--cell needs N, Nb and sigma, got '" + s + "'");
  return c;
}

void write_curves(std::ostream& out, const Predictor& p, const std::vector<double>& grid) {
  out << "biomarker,time,mean,sd,derivative\n";
  for (std::size_t b = 0; b < p.num_biomarkers(); ++b)
    for (double t : grid) {
      const auto c = predict_curve(p, b, t);
      out << p.names()[b] << ',' << csv::format_double(t) << ',' << csv::format_double(c.mean) << ','
          << csv::format_double(std::sqrt(std::max(0.0, c.variance))) << ','
          << csv::format_double(p.biomarker(b).derivative_mean(t)) << '\n';
    }
}

int cmd_fit(const Options& o) {
  std::vector<std::string> empty;
  Cohort cohort = load_long_csv(o.data, &empty);
  for (const auto& s : empty) std::cerr << "warning: subject '" << s << "' has no observations; skipped\n";
  std::vector<QuantileTransform> transforms;
  if (!o.raw_scores) {
    std::vector<Direction> dirs(cohort.num_biomarkers(), Direction::IncreasingAbnormal);
    for (const auto& name : o.decreasing) {
      const auto b = cohort.biomarker_index(name);
      if (b == cohort.num_biomarkers()) throw InputError("--decreasing names unknown biomarker '" + name + "'");
      dirs[b] = Direction::DecreasingAbnormal;
    }
    transforms = score_cohort(cohort, dirs);
  } else if (!o.decreasing.empty()) {
    throw InputError("--decreasing has no effect with --raw-scores");
  }

  FitConfig cfg;
  cfg.max_outer_iters = o.max_outer;
  cfg.inner_iters = o.inner;
  cfg.tol = o.tol;
  cfg.lambda = o.lambda;
  cfg.derivative_points = o.derivative_points;
  cfg.priors.enabled = !o.no_priors;
  cfg.seed = o.seed;
  const FitResult res = fit(cohort, cfg);
  for (const auto& w : res.warnings) std::cerr << "warning: " << w << '\n';

  ensure_dir(o.out);
  Model m{res.cohort, res.ep.sites(), transforms, res.objective, res.converged};
  save_model((fs::path(o.out) / "model.json").string(), m);

  auto trace = open_out(o.out, "trace.csv");
  trace << "iteration,objective\n";
  for (std::size_t i = 0; i < res.trace.size(); ++i) trace << i << ',' << csv::format_double(res.trace[i]) << '\n';

  const Predictor p = m.predictor();
  const auto [lo, hi] = p.time_range();
  auto curves = open_out(o.out, "curves.csv");
  write_curves(curves, p, equally_spaced(lo, hi, o.curve_points));

  auto shifts = open_out(o.out, "shifts.csv");
  shifts << "subject_id,time_shift\n";
  for (const auto& ind : res.cohort.individuals) shifts << ind.id << ',' << csv::format_double(ind.time_shift) << '\n';

  std::cerr << "fit: " << res.cohort.individuals.size() << " subjects, " << res.cohort.num_biomarkers()
            << " biomarkers, objective " << res.objective << (res.converged ? "" : " (not converged)") << '\n';
  return 0;
}

int cmd_predict(const Options& o) {
  const Model m = load_model(o.model);
  const Predictor p = m.predictor();
  auto [lo, hi] = p.time_range();
  if (!o.grid_span.empty()) std::tie(lo, hi) = parse_span(o.grid_span);
  ensure_dir(o.out);
  auto out = open_out(o.out, "predictions.csv");
  write_curves(out, p, equally_spaced(lo, hi, o.grid_points));
  return 0;
}

int cmd_stage(const Options& o) {
  const Model m = load_model(o.model);
  const Predictor p = m.predictor();
  std::vector<std::string> empty;
  const Cohort test = load_long_csv(o.data, &empty);

  std::vector<std::size_t> to_model(test.num_biomarkers());
  std::vector<std::string> unknown;
  for (std::size_t b = 0; b < test.num_biomarkers(); ++b) {
    to_model[b] = m.cohort.biomarker_index(test.biomarkers[b].name);
    if (to_model[b] == m.cohort.num_biomarkers()) unknown.push_back(test.biomarkers[b].name);
  }
  if (!unknown.empty()) {
    std::string list;
    for (const auto& u : unknown) list += (list.empty() ? "" : ", ") + u;
    if (unknown.size() == test.num_biomarkers())
      throw InputError("test biomarkers do not overlap the model's: " + list);
    throw InputError("unknown biomarkers in test data: " + list);
  }
  for (const auto& s : empty) std::cerr << "warning: subject '" << s << "' has no observed biomarkers; skipped\n";

  std::vector<double> grid;
  if (!o.grid_span.empty()) {
    const auto [lo, hi] = parse_span(o.grid_span);
    grid = equally_spaced(lo, hi, o.grid_points);
  } else {
    grid = default_stage_grid(p, o.grid_points);
  }
  if (grid_misses_training_range(p, grid))
    std::cerr << "warning: stage grid does not cover the training time range\n";

  const bool transform = !o.raw_scores && !m.transforms.empty();
  ensure_dir(o.out);
  auto report = open_out(o.out, "stages.csv");
  auto dens = open_out(o.out, "density.csv");
  report << "subject_id,stage_mean,stage_map,ci_low,ci_high\n";
  dens << "subject_id,stage,density\n";
  for (const auto& ind : test.individuals) {
    std::vector<Observation> obs;
    for (const auto& ob : ind.observations) {
      const std::size_t b = to_model[ob.biomarker];
      obs.push_back({b, ob.time, transform ? m.transforms[b](ob.value) : ob.value});
    }
    const StagePosterior sp = stage(p, visits_to_offsets(obs), grid);
    report << ind.id << ',' << csv::format_double(sp.mean_stage) << ',' << csv::format_double(sp.map_stage) << ','
           << csv::format_double(sp.ci_low) << ',' << csv::format_double(sp.ci_high) << '\n';
    for (std::size_t i = 0; i < sp.grid.size(); ++i)
      dens << ind.id << ',' << csv::format_double(sp.grid[i]) << ',' << csv::format_double(sp.density[i]) << '\n';
  }
  return 0;
}

int cmd_simulate(const Options& o) {
  SynthConfig sc;
  sc.N = o.N;
  sc.Nb = o.Nb;
  sc.sigma = o.sigma;
  sc.alpha_sd = o.alpha_sd;
  sc.seed = o.seed;
  const SynthCohort sy = gen_sigmoid_cohort(sc);
  ensure_dir(o.out);
  auto train = open_out(o.out, "train.csv");
  write_long_csv(train, sy.cohort);
  auto truth = open_out(o.out, "truth.csv");
  truth << "subject_id,time_centre,group\n";
  for (std::size_t j = 0; j < sy.cohort.individuals.size(); ++j)
    truth << sy.cohort.individuals[j].id << ',' << csv::format_double(sy.truth.time_centre[j]) << ','
          << sy.truth.group[j] << '\n';
  auto slopes = open_out(o.out, "slopes.csv");
  slopes << "biomarker,alpha\n";
  for (std::size_t b = 0; b < sy.truth.alpha.size(); ++b)
    slopes << sy.cohort.biomarkers[b].name << ',' << csv::format_double(sy.truth.alpha[b]) << '\n';
  return 0;
}

int cmd_benchmark(const Options& o) {
  std::vector<BenchmarkCell> cells;
  if (o.table1) cells = table1_grid();
  for (const auto& s : o.cells) cells.push_back(parse_cell(s));
  if (cells.empty()) throw InputError("benchmark needs --cell or --table1");
  if (o.reps < 1) throw InputError("--reps must be at least 1");
  BenchmarkOptions opt;
  opt.repetitions = o.reps;
  opt.seed = o.seed;
  opt.threads = o.threads;
  opt.base.alpha_sd = o.alpha_sd;
  opt.fit.max_outer_iters = o.max_outer;
  const auto rows = run_benchmark(cells, opt);
  ensure_dir(o.out);
  auto out = open_out(o.out, "benchmark.csv");
  write_benchmark_csv(out, rows, !o.no_timing);
  for (const auto& r : rows)
    if (r.failed) std::cerr << "warning: N=" << r.cell.N << " Nb=" << r.cell.Nb << " sigma=" << r.cell.sigma
                            << " rep " << r.rep << " failed: " << r.error << '\n';
  write_benchmark_table(std::cout, summarize_benchmark(rows));
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  const auto args = args_of(argc, argv);
  try {
    Options o;
    CLI::App app{"GP disease progression modelling with monotonic trajectories and time shifts", "gpdpm"};
    Commands cmds = build(app, o);
    std::vector<std::string> rev(args.rbegin(), args.rend());
    try {
      app.parse(rev);
    } catch (const CLI::ParseError& e) {
      const int code = app.exit(e);
      return code == 0 ? 0 : 1;
    }

    if (!o.config.empty()) {
      auto merged = merge_config(active(cmds), args, o.config);
      o = Options{};
      CLI::App app2{"GP disease progression modelling with monotonic trajectories and time shifts", "gpdpm"};
      cmds = build(app2, o);
      std::vector<std::string> rev2(merged.rbegin(), merged.rend());
      try {
        app2.parse(rev2);
      } catch (const CLI::ParseError& e) {
        const int code = app2.exit(e);
        return code == 0 ? 0 : 1;
      }
      CLI::App* sub = active(cmds);
      if (sub == cmds.fit) return cmd_fit(o);
      if (sub == cmds.predict) return cmd_predict(o);
      if (sub == cmds.stage) return cmd_stage(o);
      if (sub == cmds.simulate) return cmd_simulate(o);
      return cmd_benchmark(o);
    }

    CLI::App* sub = active(cmds);
    if (sub == cmds.fit) return cmd_fit(o);
    if (sub == cmds.predict) return cmd_predict(o);
    if (sub == cmds.stage) return cmd_stage(o);
    if (sub == cmds.simulate) return cmd_simulate(o);
    return cmd_benchmark(o);
  } catch (const InputError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  } catch (const NumericalError& e) {
    std::cerr << "numerical failure: " << e.what() << '\n';
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 2;
  }
}
