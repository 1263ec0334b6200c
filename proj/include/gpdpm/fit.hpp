#ifndef GPDPM_FIT_HPP
#define GPDPM_FIT_HPP

#include <cmath>
#include <cstdint>
#include <limits>
#include <string>
#include <vector>

#include "gpdpm/cg.hpp"
#include "gpdpm/ep.hpp"
#include "gpdpm/objective.hpp"

namespace gpdpm {

/// Prior widths; the centres of the eta and length-scale priors are data-driven.
struct PriorConfig {
  bool enabled = true;
  double log_eta_sd = 1.0;
  double log_length_sd = 1.0;
  double noise_mean = 0.1;
  double log_noise_sd = 1.0;
  double re_sigma_mean = 0.1;
  double log_re_sigma_sd = 0.5;
  double shift_sd_scale = 1.0;  // multiples of the pooled time range
};

struct FitConfig {
  int max_outer_iters = 30;
  int inner_iters = 10;
  double tol = 1e-4;  // stop when the objective improves by less than this
  std::size_t derivative_points = kDefaultDerivativePoints;
  double lambda = 1e-6;
  double re_sigma_init = 0.1;
  bool keep_shifts = false;  // start from the cohort's shifts instead of zero
  PriorConfig priors;
  EPOptions ep;
  CGOptions cg;
  std::uint64_t seed = 0;

  void validate() const {
    if (max_outer_iters < 1 || inner_iters < 1) throw InputError("iteration counts must be at least 1");
    if (!(lambda > 0.0)) throw InputError("lambda must be positive");
    if (!(tol >= 0.0)) throw InputError("tol must be non-negative");
    const auto& p = priors;
    for (double sd : {p.log_eta_sd, p.log_length_sd, p.log_noise_sd, p.log_re_sigma_sd, p.shift_sd_scale})
      if (!(sd > 0.0)) throw InputError("prior widths must be positive");
    if (!(p.noise_mean > 0.0) || !(p.re_sigma_mean > 0.0)) throw InputError("prior centres must be positive");
  }
};

struct FitResult {
  Cohort cohort;
  EPState ep;
  Priors priors;
  std::vector<double> trace;  // trace[0] is the initial objective
  double objective = 0.0;
  bool converged = false;
  int outer_iterations = 0;
  std::vector<std::string> warnings;
};

namespace detail {

inline std::pair<double, double> raw_time_range(const Cohort& c) {
  double lo = std::numeric_limits<double>::infinity(), hi = -lo;
  for (const auto& ind : c.individuals)
    for (const auto& o : ind.observations) {
      lo = std::min(lo, o.time + ind.time_shift);
      hi = std::max(hi, o.time + ind.time_shift);
    }
  return {lo, hi};
}

inline std::vector<double> score_variance(const Cohort& c) {
  const std::size_t nb = c.num_biomarkers();
  std::vector<double> s(nb, 0.0), s2(nb, 0.0), n(nb, 0.0);
  for (const auto& ind : c.individuals)
    for (const auto& o : ind.observations) {
      s[o.biomarker] += o.value;
      s2[o.biomarker] += o.value * o.value;
      n[o.biomarker] += 1.0;
    }
  std::vector<double> v(nb, 0.0);
  for (std::size_t b = 0; b < nb; ++b) {
    if (n[b] < 2.0) continue;
    const double m = s[b] / n[b];
    v[b] = (s2[b] - n[b] * m * m) / (n[b] - 1.0);
  }
  return v;
}

inline void center_shifts(Cohort& c) {
  if (c.individuals.empty()) return;
  double m = 0.0;
  for (const auto& ind : c.individuals) m += ind.time_shift;
  m /= static_cast<double>(c.individuals.size());
  for (auto& ind : c.individuals) ind.time_shift -= m;
}

}  // namespace detail

/// Sets the starting point: zero shifts, eta from the score variance, length-scale
/// half the time range, noise a quarter of sqrt(eta), random effects by visit count.
inline void initialize_parameters(Cohort& c, const FitConfig& cfg) {
  const auto [lo, hi] = detail::raw_time_range(c);
  const double range = hi > lo ? hi - lo : 1.0;
  const auto var = detail::score_variance(c);
  for (std::size_t b = 0; b < c.num_biomarkers(); ++b) {
    auto& bm = c.biomarkers[b];
    bm.eta = var[b] > 1e-8 ? var[b] : 1e-2;
    bm.length_scale = 0.5 * range;
    bm.noise_sd = 0.25 * std::sqrt(bm.eta);
    bm.lambda = cfg.lambda;
  }
  for (auto& ind : c.individuals) {
    if (!cfg.keep_shifts) ind.time_shift = 0.0;
    ind.random_effect = assign_re_structure(ind, c.num_biomarkers(), cfg.re_sigma_init);
  }
  reposition_derivative_grid(c, cfg.derivative_points);
}

/// Default priors centred on the data scale of `c` (evaluated before fitting).
inline Priors default_priors(const Cohort& c, const PriorConfig& pc) {
  const std::size_t nb = c.num_biomarkers();
  Priors p = Priors::flat(nb);
  if (!pc.enabled) return p;
  const auto [lo, hi] = detail::raw_time_range(c);
  const double range = hi > lo ? hi - lo : 1.0;
  const auto var = detail::score_variance(c);
  for (std::size_t b = 0; b < nb; ++b) {
    p.log_eta[b] = {std::log(var[b] > 1e-8 ? var[b] : 1e-2), pc.log_eta_sd};
    p.log_length[b] = {std::log(0.5 * range), pc.log_length_sd};
    p.log_noise[b] = {std::log(pc.noise_mean), pc.log_noise_sd};
  }
  p.log_re_sigma = {std::log(pc.re_sigma_mean), pc.log_re_sigma_sd};
  p.shift = {0.0, pc.shift_sd_scale * range};
  return p;
}

namespace detail {

/// CG over one parameter block with everything else fixed.
inline Vector optimize_block(const FixedSiteObjective& fo, Vector x, ParamBlock block, const CGOptions& cg) {
  const auto [off, len] = fo.layout().range(block);
  if (len == 0) return x;
  const auto o = static_cast<Eigen::Index>(off);
  const auto n = static_cast<Eigen::Index>(len);
  auto full = [&](const Vector& seg) {
    Vector z = x;
    z.segment(o, n) = seg;
    return z;
  };
  const auto res = maximize_cg([&](const Vector& seg) { return fo.value(full(seg)); },
                               [&](const Vector& seg) { return fo.gradient(full(seg), block); },
                               Vector(x.segment(o, n)), cg);
  x.segment(o, n) = res.x;
  return x;
}

inline double penalized(const Cohort& c, const EPState& st, const Priors& p) {
  const ParamLayout layout(c);
  return st.log_marginal + log_prior(layout, p, layout.encode(c));
}

}  // namespace detail

/// Alternating maximization of the penalized EP marginal. Each outer iteration
/// runs EP, then CG on the hyperparameters, the random-effect scales and the
/// time shifts with the sites frozen, centres the shifts and repositions the
/// derivative grid. The best parameters seen are returned.
inline FitResult fit(Cohort cohort, const FitConfig& cfg = {}) {
  cfg.validate();
  cohort.validate();
  if (cohort.individuals.empty()) throw InputError("cohort has no individuals");

  FitResult res;
  initialize_parameters(cohort, cfg);
  res.priors = default_priors(cohort, cfg.priors);
  EPOptions ep_opt = cfg.ep;
  ep_opt.seed = cfg.seed;
  CGOptions cg = cfg.cg;
  cg.max_iters = cfg.inner_iters;

  EPState st = ep_run(assemble_joint(cohort, true), ep_opt);
  double current = detail::penalized(cohort, st, res.priors);
  if (!std::isfinite(current)) throw NumericalError("objective is not finite at the initial parameters");
  res.trace.push_back(current);

  Cohort best = cohort;
  EPState best_state = st;
  double best_value = current;
  auto note_ep = [&](const EPState& s, int it) {
    if (!s.converged)
      res.warnings.push_back("EP did not converge at outer iteration " + std::to_string(it));
  };
  note_ep(st, 0);

  for (int it = 1; it <= cfg.max_outer_iters; ++it) {
    const FixedSiteObjective fo(cohort, st, res.priors);
    Vector x = fo.initial();
    for (auto block : {ParamBlock::Hyper, ParamBlock::Individual, ParamBlock::Shifts})
      x = detail::optimize_block(fo, x, block, cg);
    fo.layout().decode(x, cohort);
    detail::center_shifts(cohort);
    reposition_derivative_grid(cohort, cfg.derivative_points);

    const auto warm = st.sites();
    try {
      st = ep_run(assemble_joint(cohort), ep_opt, &warm);
    } catch (const NumericalError& e) {
      res.warnings.push_back(std::string("outer iteration ") + std::to_string(it) + ": " + e.what());
      break;
    }
    note_ep(st, it);
    const double next = detail::penalized(cohort, st, res.priors);
    res.trace.push_back(next);
    res.outer_iterations = it;
    if (next < current - 1e-3)
      res.warnings.push_back("objective decreased by " + std::to_string(current - next) + " at outer iteration " +
                             std::to_string(it));
    if (next > best_value) {
      best_value = next;
      best = cohort;
      best_state = st;
    }
    const double gain = next - current;
    current = next;
    if (gain < cfg.tol) {
      res.converged = true;
      break;
    }
  }

  res.cohort = std::move(best);
  res.ep = std::move(best_state);
  res.objective = best_value;
  return res;
}

}  // namespace gpdpm

#endif
