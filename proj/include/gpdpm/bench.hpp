#ifndef GPDPM_BENCH_HPP
#define GPDPM_BENCH_HPP

#include <atomic>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <functional>
#include <iomanip>
#include <mutex>
#include <ostream>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include "gpdpm/csv.hpp"
#include "gpdpm/fit.hpp"
#include "gpdpm/predict.hpp"
#include "gpdpm/synth.hpp"

namespace gpdpm {

struct BenchmarkCell {
  std::size_t N = 20;
  std::size_t Nb = 4;
  double sigma = 0.1;
};

struct BenchmarkRow {
  BenchmarkCell cell;
  int rep = 0;
  Correlation corr;
  double seconds = 0.0;
  bool converged = false;
  bool failed = false;
  double min_derivative = 0.0;  // smallest posterior mean slope over the dense per-biomarker grids
  std::string error;
};

struct BenchmarkOptions {
  int repetitions = 10;
  std::uint64_t seed = 1;
  unsigned threads = 0;  // 0: hardware concurrency
  FitConfig fit;
  SynthConfig base;  // N, Nb, sigma and seed are set per run
};

/// The grid of the published table: sigma x Nb x N.
inline std::vector<BenchmarkCell> table1_grid() {
  std::vector<BenchmarkCell> cells;
  for (std::size_t n : {20, 100})
    for (std::size_t nb : {4, 8})
      for (double s : {0.1, 0.2, 0.3, 0.4}) cells.push_back({n, nb, s});
  return cells;
}

/// Seed of one repetition; a function of the base seed, the cell and the repetition only.
inline std::uint64_t repetition_seed(std::uint64_t base, const BenchmarkCell& c, int rep) {
  std::uint64_t h = base * 0x9E3779B97F4A7C15ULL + 0x632BE59BD9B4E019ULL;
  auto mix = [&h](std::uint64_t v) {
    h ^= v + 0x9E3779B97F4A7C15ULL + (h << 6) + (h >> 2);
    h *= 0xBF58476D1CE4E5B9ULL;
    h ^= h >> 31;
  };
  mix(c.N);
  mix(c.Nb);
  mix(static_cast<std::uint64_t>(std::llround(c.sigma * 1e6)));
  mix(static_cast<std::uint64_t>(rep));
  return h;
}

/// Generates, fits and scores one repetition.
inline BenchmarkRow run_repetition(const BenchmarkCell& cell, int rep, const BenchmarkOptions& opt,
                                   FitResult* fitted = nullptr, SynthTruth* truth = nullptr) {
  BenchmarkRow row;
  row.cell = cell;
  row.rep = rep;
  SynthConfig sc = opt.base;
  sc.N = cell.N;
  sc.Nb = cell.Nb;
  sc.sigma = cell.sigma;
  sc.seed = repetition_seed(opt.seed, cell, rep);
  const auto start = std::chrono::steady_clock::now();
  try {
    const SynthCohort sy = gen_sigmoid_cohort(sc);
    FitConfig fc = opt.fit;
    fc.seed = sc.seed;
    FitResult res = fit(sy.cohort, fc);
    row.corr = eval_timeshift_correlation(res.cohort, sy.truth);
    row.converged = res.converged && res.ep.converged;
    row.min_derivative = min_derivative_all(Predictor(res.cohort, res.ep.sites()));
    if (fitted) *fitted = std::move(res);
    if (truth) *truth = sy.truth;
  } catch (const std::exception& e) {
    row.failed = true;
    row.error = e.what();
  }
  row.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  return row;
}

/// Runs every (cell, repetition) pair on a pool of worker threads. Rows come
/// back in cell-major, repetition-minor order whatever the scheduling.
inline std::vector<BenchmarkRow> run_benchmark(const std::vector<BenchmarkCell>& cells, const BenchmarkOptions& opt) {
  if (opt.repetitions < 1) throw InputError("repetitions must be at least 1");
  for (const auto& c : cells)
    if (c.N < 2 || c.Nb < 1 || !(c.sigma >= 0.0)) throw InputError("invalid benchmark cell");
  const std::size_t reps = static_cast<std::size_t>(opt.repetitions);
  const std::size_t jobs = cells.size() * reps;
  std::vector<BenchmarkRow> rows(jobs);
  std::atomic<std::size_t> next{0};
  auto worker = [&] {
    for (std::size_t k = next++; k < jobs; k = next++)
      rows[k] = run_repetition(cells[k / reps], static_cast<int>(k % reps), opt);
  };
  unsigned n = opt.threads ? opt.threads : std::max(1u, std::thread::hardware_concurrency());
  n = static_cast<unsigned>(std::min<std::size_t>(n, jobs));
  std::vector<std::thread> pool;
  for (unsigned i = 1; i < n; ++i) pool.emplace_back(worker);
  worker();
  for (auto& t : pool) t.join();
  return rows;
}

inline void write_benchmark_csv(std::ostream& out, const std::vector<BenchmarkRow>& rows, bool timing = true) {
  out << "N,Nb,sigma,rep,r,r2,seconds,converged\n";
  for (const auto& r : rows) {
    out << r.cell.N << ',' << r.cell.Nb << ',' << csv::format_double(r.cell.sigma) << ',' << r.rep << ',';
    if (r.failed)
      out << "NA,NA,";
    else
      out << csv::format_double(r.corr.r) << ',' << csv::format_double(r.corr.r2) << ',';
    out << csv::format_double(timing ? r.seconds : 0.0) << ',' << (r.converged ? 1 : 0) << '\n';
  }
}

struct CellSummary {
  BenchmarkCell cell;
  int completed = 0;
  int failed = 0;
  double mean_r = 0.0, sd_r = 0.0;
  double mean_r2 = 0.0, sd_r2 = 0.0;
};

inline std::vector<CellSummary> summarize_benchmark(const std::vector<BenchmarkRow>& rows) {
  std::vector<CellSummary> out;
  for (const auto& r : rows) {
    if (out.empty() || out.back().cell.N != r.cell.N || out.back().cell.Nb != r.cell.Nb ||
        out.back().cell.sigma != r.cell.sigma)
      out.push_back({r.cell});
    auto& s = out.back();
    if (r.failed) {
      ++s.failed;
      continue;
    }
    ++s.completed;
    s.mean_r += r.corr.r;
    s.sd_r += r.corr.r * r.corr.r;
    s.mean_r2 += r.corr.r2;
    s.sd_r2 += r.corr.r2 * r.corr.r2;
  }
  for (auto& s : out) {
    const double n = s.completed;
    if (n == 0) continue;
    s.mean_r /= n;
    s.mean_r2 /= n;
    s.sd_r = n > 1 ? std::sqrt(std::max(0.0, (s.sd_r - n * s.mean_r * s.mean_r) / (n - 1))) : 0.0;
    s.sd_r2 = n > 1 ? std::sqrt(std::max(0.0, (s.sd_r2 - n * s.mean_r2 * s.mean_r2) / (n - 1))) : 0.0;
  }
  return out;
}

/// Human-readable table: mean (sd) per cell.
inline void write_benchmark_table(std::ostream& out, const std::vector<CellSummary>& cells) {
  out << std::left << std::setw(6) << "N" << std::setw(5) << "Nb" << std::setw(7) << "sigma" << std::setw(16)
      << "r mean (sd)" << std::setw(16) << "r2 mean (sd)" << "reps\n";
  for (const auto& s : cells) {
    std::ostringstream r, r2;
    r << std::fixed << std::setprecision(2) << s.mean_r << " (" << s.sd_r << ")";
    r2 << std::fixed << std::setprecision(2) << s.mean_r2 << " (" << s.sd_r2 << ")";
    out << std::left << std::setw(6) << s.cell.N << std::setw(5) << s.cell.Nb << std::setw(7) << s.cell.sigma
        << std::setw(16) << r.str() << std::setw(16) << r2.str() << s.completed;
    if (s.failed) out << " (" << s.failed << " failed)";
    out << '\n';
  }
}

}  // namespace gpdpm

#endif
