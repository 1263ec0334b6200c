#ifndef GPDPM_KERNELS_HPP
#define GPDPM_KERNELS_HPP

#include <algorithm>
#include <cmath>
#include <limits>
#include <vector>

#include "gpdpm/data_model.hpp"
#include "gpdpm/linalg.hpp"

namespace gpdpm {

// Squared-exponential covariance and its derivatives. With r = t1 - t2:
//   se_cov    = eta exp(-r^2 / 2l^2)                  Cov(f(t1), f(t2))
//   se_cov_d1 = eta r / l^2 exp(-r^2 / 2l^2)          Cov(f(t1), f'(t2))
//   se_cov_d2 = eta / l^2 (1 - r^2/l^2) exp(...)      Cov(f'(t1), f'(t2))

inline double se_cov(double t1, double t2, double eta, double l) {
  const double r = t1 - t2;
  return eta * std::exp(-0.5 * r * r / (l * l));
}

inline double se_cov_d1(double t, double t_prime, double eta, double l) {
  const double r = t - t_prime;
  const double l2 = l * l;
  return eta * (r / l2) * std::exp(-0.5 * r * r / l2);
}

inline double se_cov_d2(double t1_prime, double t2_prime, double eta, double l) {
  const double r = t1_prime - t2_prime;
  const double l2 = l * l;
  return (eta / l2) * (1.0 - r * r / l2) * std::exp(-0.5 * r * r / l2);
}

/// Random-effect covariance between two observation times of one individual
/// and biomarker. Times must be on the same scale as `re.t_bar`.
inline double re_cov(const RandomEffect& re, std::size_t biomarker, double t1, double t2) {
  const double s = re.sigma.empty() ? 0.0 : re.sigma[biomarker];
  switch (re.type) {
    case RandomEffectType::Zero: return 0.0;
    case RandomEffectType::IID: return t1 == t2 ? s * s : 0.0;
    case RandomEffectType::Linear: return s * s * (t1 - re.t_bar) * (t2 - re.t_bar);
  }
  return 0.0;
}

/// Prior covariance of one biomarker over its observation rows followed by its
/// derivative rows, plus the Gaussian observation-noise block.
struct BiomarkerBlock {
  std::size_t biomarker = 0;
  double eta = 1.0;
  double length_scale = 1.0;
  double noise_sd = 0.0;
  double lambda = 1e-6;

  std::vector<std::size_t> row_individual;    // individual index per observation row
  std::vector<std::size_t> row_observation;   // global observation index per row
  // Contiguous row ranges [begin, end) sharing an individual.
  std::vector<std::size_t> group_individual;
  std::vector<std::size_t> group_begin;
  std::vector<std::size_t> group_end;

  Vector times;        // warped observation times
  Vector y;            // observed scores
  Vector deriv_times;  // derivative locations
  Matrix K;            // (n + D) square: [[K_ff, K_fd], [K_fd^T, K_dd]]
  Matrix S;            // n x n random-effect covariance
  Vector E;            // n noise variances

  std::size_t num_obs() const { return static_cast<std::size_t>(times.size()); }
  std::size_t num_deriv() const { return static_cast<std::size_t>(deriv_times.size()); }
  std::size_t size() const { return num_obs() + num_deriv(); }

  auto K_ff() const { return K.topLeftCorner(num_obs(), num_obs()); }
  auto K_fd() const { return K.topRightCorner(num_obs(), num_deriv()); }
  auto K_dd() const { return K.bottomRightCorner(num_deriv(), num_deriv()); }

  /// Sigma_eps + Sigma_S on the observation rows.
  Matrix noise() const {
    Matrix n = S;
    n.diagonal() += E;
    return n;
  }
};

/// The whole model's prior: independent per-biomarker blocks.
struct JointGP {
  std::vector<BiomarkerBlock> blocks;
  std::size_t num_observations = 0;

  std::size_t num_derivatives() const {
    std::size_t m = 0;
    for (const auto& b : blocks) m += b.num_deriv();
    return m;
  }

  /// Dense global prior covariance, rows ordered as all observations (cohort
  /// order) followed by derivative points (biomarker-major).
  Matrix dense_prior() const { return assemble_dense(false); }

  /// Dense Sigma_eps + Sigma_S over observations, zero on derivative rows.
  Matrix dense_noise() const { return assemble_dense(true); }

  /// Global row of derivative point `l` of biomarker block `k`.
  std::size_t derivative_row(std::size_t k, std::size_t l) const {
    std::size_t off = num_observations;
    for (std::size_t b = 0; b < k; ++b) off += blocks[b].num_deriv();
    return off + l;
  }

 private:
  Matrix assemble_dense(bool noise) const {
    const std::size_t total = num_observations + num_derivatives();
    Matrix out = Matrix::Zero(total, total);
    std::size_t deriv_off = num_observations;
    for (const auto& blk : blocks) {
      const std::size_t n = blk.num_obs();
      std::vector<std::size_t> rows(blk.row_observation);
      for (std::size_t l = 0; l < blk.num_deriv(); ++l) rows.push_back(deriv_off + l);
      const Matrix src = noise ? blk.noise() : blk.K;
      const std::size_t m = noise ? n : blk.size();
      for (std::size_t a = 0; a < m; ++a)
        for (std::size_t c = 0; c < m; ++c) out(rows[a], rows[c]) = src(a, c);
      deriv_off += blk.num_deriv();
    }
    return out;
  }
};

/// `count` equally spaced points over [lo, hi]; a degenerate span is widened by one unit.
inline std::vector<double> equally_spaced(double lo, double hi, std::size_t count) {
  if (hi <= lo) {
    lo -= 0.5;
    hi += 0.5;
  }
  std::vector<double> g(count);
  if (count == 1) {
    g[0] = 0.5 * (lo + hi);
    return g;
  }
  for (std::size_t i = 0; i < count; ++i)
    g[i] = lo + (hi - lo) * static_cast<double>(i) / static_cast<double>(count - 1);
  return g;
}

/// Range of warped observation times of one biomarker.
inline std::pair<double, double> warped_range(const Cohort& cohort, std::size_t biomarker) {
  double lo = std::numeric_limits<double>::infinity();
  double hi = -lo;
  for (const auto& ind : cohort.individuals)
    for (const auto& o : ind.observations)
      if (o.biomarker == biomarker) {
        lo = std::min(lo, o.time + ind.time_shift);
        hi = std::max(hi, o.time + ind.time_shift);
      }
  return {lo, hi};
}

/// Places `count` derivative points per biomarker over its current warped-time range.
inline void reposition_derivative_grid(Cohort& cohort, std::size_t count = kDefaultDerivativePoints) {
  cohort.derivative_grid.assign(cohort.num_biomarkers(), {});
  if (count == 0) return;
  for (std::size_t b = 0; b < cohort.num_biomarkers(); ++b) {
    const auto [lo, hi] = warped_range(cohort, b);
    if (!std::isfinite(lo)) continue;
    cohort.derivative_grid[b] = equally_spaced(lo, hi, count);
  }
}

/// Builds the prior blocks under the current time shifts. Random effects attach
/// to observation rows only; they are evaluated on raw times, which equals
/// warped times minus a per-individual constant that cancels in the centred
/// linear form.
inline JointGP assemble_joint(const Cohort& cohort, bool check_psd = false) {
  JointGP joint;
  joint.num_observations = cohort.num_observations();
  const std::size_t nb = cohort.num_biomarkers();
  joint.blocks.resize(nb);

  for (std::size_t b = 0; b < nb; ++b) {
    auto& blk = joint.blocks[b];
    const auto& spec = cohort.biomarkers[b];
    blk.biomarker = b;
    blk.eta = spec.eta;
    blk.length_scale = spec.length_scale;
    blk.noise_sd = spec.noise_sd;
    blk.lambda = spec.lambda;

    std::vector<double> t, raw, y;
    std::size_t global = 0;
    for (std::size_t j = 0; j < cohort.individuals.size(); ++j) {
      const auto& ind = cohort.individuals[j];
      bool opened = false;
      for (const auto& o : ind.observations) {
        if (o.biomarker == b) {
          if (!opened) {
            blk.group_individual.push_back(j);
            blk.group_begin.push_back(t.size());
            opened = true;
          }
          blk.row_individual.push_back(j);
          blk.row_observation.push_back(global);
          t.push_back(o.time + ind.time_shift);
          raw.push_back(o.time);
          y.push_back(o.value);
        }
        ++global;
      }
      if (opened) blk.group_end.push_back(t.size());
    }

    const std::size_t n = t.size();
    const std::vector<double> empty;
    const auto& grid = b < cohort.derivative_grid.size() ? cohort.derivative_grid[b] : empty;
    const std::size_t d = grid.size();
    blk.times = Eigen::Map<const Vector>(t.data(), static_cast<Eigen::Index>(n));
    blk.y = Eigen::Map<const Vector>(y.data(), static_cast<Eigen::Index>(n));
    blk.deriv_times = Eigen::Map<const Vector>(grid.data(), static_cast<Eigen::Index>(d));

    const double eta = spec.eta;
    const double l = spec.length_scale;
    blk.K.resize(n + d, n + d);
    for (std::size_t a = 0; a < n; ++a) {
      for (std::size_t c = 0; c <= a; ++c) blk.K(a, c) = blk.K(c, a) = se_cov(t[a], t[c], eta, l);
      for (std::size_t q = 0; q < d; ++q)
        blk.K(a, n + q) = blk.K(n + q, a) = se_cov_d1(t[a], grid[q], eta, l);
    }
    for (std::size_t p = 0; p < d; ++p)
      for (std::size_t q = 0; q <= p; ++q)
        blk.K(n + p, n + q) = blk.K(n + q, n + p) = se_cov_d2(grid[p], grid[q], eta, l);

    blk.S = Matrix::Zero(n, n);
    for (std::size_t g = 0; g < blk.group_begin.size(); ++g) {
      const auto& re = cohort.individuals[blk.group_individual[g]].random_effect;
      for (std::size_t a = blk.group_begin[g]; a < blk.group_end[g]; ++a)
        for (std::size_t c = blk.group_begin[g]; c < blk.group_end[g]; ++c)
          blk.S(a, c) = re_cov(re, b, raw[a], raw[c]);
    }
    blk.E = Vector::Constant(static_cast<Eigen::Index>(n), spec.noise_sd * spec.noise_sd);
    if (check_psd && blk.size() > 0)
      robust_cholesky(blk.K, "prior covariance of biomarker '" + spec.name + "'");
  }
  return joint;
}

}  // namespace gpdpm

#endif
