#ifndef GPDPM_SYNTH_HPP
#define GPDPM_SYNTH_HPP

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <random>
#include <string>
#include <vector>

#include "gpdpm/data_model.hpp"

namespace gpdpm {

struct SynthConfig {
  std::size_t N = 20;
  std::size_t Nb = 4;
  double sigma = 0.1;
  double alpha_sd = 0.2449489742783178;  // sqrt(0.06)
  double tau_lo = 0.0;
  double tau_hi = 15.0;
  int min_samples = 1;
  int max_samples = 4;
  // Report biomarkers with a negative slope as 1 - y so every curve rises.
  bool orient_increasing = true;
  // Optional planted subgroups: individual j draws its first visit from
  // [centre - halfwidth, centre + halfwidth] of group j % centres.size().
  std::vector<double> group_centres;
  double group_halfwidth = 1.0;
  std::uint64_t seed = 1;

  void validate() const {
    if (N < 2) throw InputError("N must be at least 2");
    if (Nb < 1) throw InputError("Nb must be at least 1");
    if (!(sigma >= 0.0)) throw InputError("sigma must be non-negative");
    if (!(tau_hi > tau_lo)) throw InputError("time span must be non-degenerate");
    if (min_samples < 1 || max_samples < min_samples) throw InputError("invalid samples-per-biomarker range");
    if (!(alpha_sd >= 0.0)) throw InputError("alpha_sd must be non-negative");
  }
};

struct SynthTruth {
  std::vector<double> time_centre;  // mu^j, mean of the individual's distinct true times
  std::vector<double> alpha;        // per biomarker slope
  std::vector<int> group;           // planted group per individual (0 without groups)
};

struct SynthCohort {
  Cohort cohort;
  SynthTruth truth;
};

inline double sigmoid(double alpha, double tau) { return 1.0 / (1.0 + std::exp(-alpha * tau)); }

/// Random sigmoid trajectories with 1-4 annual visits per biomarker sharing the
/// first visit; stored times are centred on each individual's mean visit time.
inline SynthCohort gen_sigmoid_cohort(const SynthConfig& cfg) {
  cfg.validate();
  std::mt19937_64 rng(cfg.seed);
  std::normal_distribution<double> unit(0.0, 1.0);
  SynthCohort out;
  auto& c = out.cohort;
  for (std::size_t b = 0; b < cfg.Nb; ++b) {
    c.biomarkers.push_back({"b" + std::to_string(b + 1), 1.0, 1.0, 0.1, 1e-6});
    out.truth.alpha.push_back(cfg.alpha_sd * unit(rng));
  }
  std::uniform_int_distribution<int> count(cfg.min_samples, cfg.max_samples);
  for (std::size_t j = 0; j < cfg.N; ++j) {
    std::vector<int> k(cfg.Nb);
    for (auto& v : k) v = count(rng);
    const int kmax = *std::max_element(k.begin(), k.end());
    double lo = cfg.tau_lo, hi = cfg.tau_hi - (kmax - 1);
    int group = 0;
    if (!cfg.group_centres.empty()) {
      group = static_cast<int>(j % cfg.group_centres.size());
      lo = cfg.group_centres[group] - cfg.group_halfwidth;
      hi = cfg.group_centres[group] + cfg.group_halfwidth;
    }
    const double tau0 = std::uniform_real_distribution<double>(lo, std::max(lo, hi))(rng);
    const double centre = tau0 + 0.5 * (kmax - 1);

    IndividualRecord ind;
    ind.id = "s" + std::to_string(j + 1);
    for (int v = 0; v < kmax; ++v) {
      const double tau = tau0 + v;
      for (std::size_t b = 0; b < cfg.Nb; ++b) {
        if (v >= k[b]) continue;
        const double a = out.truth.alpha[b];
        double y = sigmoid(a, tau);
        if (cfg.orient_increasing && a < 0.0) y = 1.0 - y;
        y += cfg.sigma * unit(rng);
        ind.observations.push_back({b, tau - centre, y});
      }
    }
    c.individuals.push_back(std::move(ind));
    out.truth.time_centre.push_back(centre);
    out.truth.group.push_back(group);
  }
  return out;
}

struct Correlation {
  double r = 0.0;
  double r2 = 0.0;
  double abs_r = 0.0;
};

inline Correlation pearson(const std::vector<double>& a, const std::vector<double>& b) {
  if (a.size() != b.size()) throw InputError("correlation inputs differ in length");
  if (a.size() < 3) throw InputError("correlation needs at least 3 individuals");
  const double n = static_cast<double>(a.size());
  double ma = 0, mb = 0;
  for (std::size_t i = 0; i < a.size(); ++i) ma += a[i] / n, mb += b[i] / n;
  double sab = 0, saa = 0, sbb = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    sab += (a[i] - ma) * (b[i] - mb);
    saa += (a[i] - ma) * (a[i] - ma);
    sbb += (b[i] - mb) * (b[i] - mb);
  }
  Correlation c;
  c.r = saa > 0 && sbb > 0 ? sab / std::sqrt(saa * sbb) : 0.0;
  c.r2 = c.r * c.r;
  c.abs_r = std::abs(c.r);
  return c;
}

/// Pearson correlation between fitted shifts and true time centres.
inline Correlation eval_timeshift_correlation(const Cohort& fitted, const SynthTruth& truth) {
  std::vector<double> d;
  for (const auto& ind : fitted.individuals) d.push_back(ind.time_shift);
  return pearson(d, truth.time_centre);
}

}  // namespace gpdpm

#endif
