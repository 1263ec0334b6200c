#ifndef GPDPM_PREDICT_HPP
#define GPDPM_PREDICT_HPP

#include <algorithm>
#include <cmath>
#include <limits>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "gpdpm/block_solver.hpp"
#include "gpdpm/ep.hpp"
#include "gpdpm/kernels.hpp"

namespace gpdpm {

/// Fixed-effect posterior of one biomarker, frozen from a fitted cohort.
class BiomarkerPredictor {
 public:
  BiomarkerPredictor(const BiomarkerBlock& blk, std::span<const Site> sites)
      : eta_(blk.eta), l_(blk.length_scale), noise_sd_(blk.noise_sd), times_(blk.times), deriv_(blk.deriv_times) {
    const BlockSolver solver(blk, sites, true);
    alpha_ = solver.alpha();
    Q_ = solver.inverse();
    if (times_.size() > 0) {
      lo_ = times_.minCoeff();
      hi_ = times_.maxCoeff();
    }
  }

  /// Range of this biomarker's warped training times.
  std::pair<double, double> time_range() const { return {lo_, hi_}; }

  double eta() const { return eta_; }
  double length_scale() const { return l_; }
  double noise_sd() const { return noise_sd_; }

  /// Cross-covariance of f(t) with the training rows [observations; derivatives].
  Vector cross(double t) const {
    const auto n = times_.size();
    Vector k(n + deriv_.size());
    for (Eigen::Index a = 0; a < n; ++a) k(a) = se_cov(t, times_(a), eta_, l_);
    for (Eigen::Index q = 0; q < deriv_.size(); ++q) k(n + q) = se_cov_d1(t, deriv_(q), eta_, l_);
    return k;
  }

  double mean(double t) const { return cross(t).dot(alpha_); }

  double variance(double t) const {
    const Vector k = cross(t);
    return eta_ - k.dot(Q_ * k);
  }

  /// Posterior mean of the derivative of f at t.
  double derivative_mean(double t) const {
    const auto n = times_.size();
    double s = 0.0;
    for (Eigen::Index a = 0; a < n; ++a) s += se_cov_d1(times_(a), t, eta_, l_) * alpha_(a);
    for (Eigen::Index q = 0; q < deriv_.size(); ++q) s += se_cov_d2(t, deriv_(q), eta_, l_) * alpha_(n + q);
    return s;
  }

  /// Joint predictive mean and covariance of f at several times.
  void joint(std::span<const double> ts, Vector& mu, Matrix& cov) const {
    const auto p = static_cast<Eigen::Index>(ts.size());
    Matrix Ks(alpha_.size(), p);
    for (Eigen::Index i = 0; i < p; ++i) Ks.col(i) = cross(ts[i]);
    mu = Ks.transpose() * alpha_;
    cov = -(Ks.transpose() * Q_ * Ks);
    for (Eigen::Index i = 0; i < p; ++i)
      for (Eigen::Index k = 0; k < p; ++k) cov(i, k) += se_cov(ts[i], ts[k], eta_, l_);
  }

 private:
  double eta_, l_, noise_sd_;
  double lo_ = 0.0, hi_ = 0.0;
  Vector times_, deriv_;
  Vector alpha_;
  Matrix Q_;
};

struct CurvePrediction {
  double mean = 0.0;
  double variance = 0.0;
};

/// Predictive model: one frozen posterior per biomarker.
class Predictor {
 public:
  Predictor() = default;
  Predictor(const Cohort& cohort, const std::vector<std::vector<Site>>& sites) {
    const JointGP joint = assemble_joint(cohort);
    for (std::size_t b = 0; b < joint.blocks.size(); ++b) {
      names_.push_back(cohort.biomarkers[b].name);
      per_.emplace_back(joint.blocks[b], sites.at(b));
      const auto [lo, hi] = warped_range(cohort, b);
      lo_ = std::min(lo_, lo);
      hi_ = std::max(hi_, hi);
    }
  }

  std::size_t num_biomarkers() const { return per_.size(); }
  const BiomarkerPredictor& biomarker(std::size_t b) const { return per_.at(b); }
  const std::vector<std::string>& names() const { return names_; }
  /// Range of warped training times over all biomarkers.
  std::pair<double, double> time_range() const { return {lo_, hi_}; }

  double mean_length_scale() const {
    double s = 0.0;
    for (const auto& p : per_) s += p.length_scale();
    return per_.empty() ? 1.0 : s / static_cast<double>(per_.size());
  }

 private:
  std::vector<std::string> names_;
  std::vector<BiomarkerPredictor> per_;
  double lo_ = std::numeric_limits<double>::infinity();
  double hi_ = -std::numeric_limits<double>::infinity();
};

inline CurvePrediction predict_curve(const Predictor& p, std::size_t b, double t) {
  const auto& bp = p.biomarker(b);
  return {bp.mean(t), bp.variance(t)};
}

/// Smallest posterior mean derivative of biomarker b on `points` equally spaced
/// times over that biomarker's training range.
inline double min_derivative(const Predictor& p, std::size_t b, std::size_t points = 100) {
  const auto [lo, hi] = p.biomarker(b).time_range();
  double m = std::numeric_limits<double>::infinity();
  for (double t : equally_spaced(lo, hi, points)) m = std::min(m, p.biomarker(b).derivative_mean(t));
  return m;
}

inline double min_derivative_all(const Predictor& p, std::size_t points = 100) {
  double m = std::numeric_limits<double>::infinity();
  for (std::size_t b = 0; b < p.num_biomarkers(); ++b) m = std::min(m, min_derivative(p, b, points));
  return m;
}

/// One observed score of a test subject at a visit offset.
struct StageObservation {
  std::size_t biomarker = 0;
  double offset = 0.0;  // visit time minus the subject's mean visit time
  double value = 0.0;
};

struct StagePosterior {
  std::vector<double> grid;
  std::vector<double> log_density;  // unnormalized log likelihood per grid point
  std::vector<double> density;      // normalized mass per grid point
  double map_stage = 0.0;
  double mean_stage = 0.0;
  double ci_low = 0.0;
  double ci_high = 0.0;
};

/// Default stage grid: 201 points over the training range widened by twice the
/// mean length-scale on each side.
inline std::vector<double> default_stage_grid(const Predictor& p, std::size_t points = 201) {
  const auto [lo, hi] = p.time_range();
  const double pad = 2.0 * p.mean_length_scale();
  return equally_spaced(lo - pad, hi + pad, points);
}

/// Converts (biomarker, visit time, value) triples into offsets from the mean
/// distinct visit time.
inline std::vector<StageObservation> visits_to_offsets(const std::vector<Observation>& obs) {
  std::vector<double> t;
  for (const auto& o : obs) t.push_back(o.time);
  std::sort(t.begin(), t.end());
  t.erase(std::unique(t.begin(), t.end()), t.end());
  double centre = 0.0;
  for (double v : t) centre += v;
  centre = t.empty() ? 0.0 : centre / static_cast<double>(t.size());
  std::vector<StageObservation> out;
  for (const auto& o : obs) out.push_back({o.biomarker, o.time - centre, o.value});
  return out;
}

/// log N(y | mu*, Sigma* + sigma_b^2 I) for the rows of one biomarker at stage t.
inline double stage_log_likelihood_biomarker(const BiomarkerPredictor& bp, double t,
                                             std::span<const double> offsets, std::span<const double> values) {
  const std::size_t p = offsets.size();
  if (p == 0) return 0.0;
  const double s2 = bp.noise_sd() * bp.noise_sd();
  if (p == 1) {
    const double m = bp.mean(t + offsets[0]);
    const double v = bp.variance(t + offsets[0]) + s2;
    const double r = values[0] - m;
    return -0.5 * (std::log(v) + r * r / v + kLog2Pi);
  }
  std::vector<double> ts(p);
  for (std::size_t i = 0; i < p; ++i) ts[i] = t + offsets[i];
  Vector mu;
  Matrix cov;
  bp.joint(ts, mu, cov);
  cov.diagonal().array() += s2;
  const auto llt = robust_cholesky(cov, "staging predictive covariance");
  Vector r(static_cast<Eigen::Index>(p));
  for (std::size_t i = 0; i < p; ++i) r(static_cast<Eigen::Index>(i)) = values[i] - mu(static_cast<Eigen::Index>(i));
  const Vector w = llt.matrixL().solve(r);
  return -0.5 * (log_det(llt) + w.squaredNorm() + static_cast<double>(p) * kLog2Pi);
}

/// Normalizes log densities over the grid and fills the summaries.
inline void summarize_stage(StagePosterior& sp) {
  const double mx = *std::max_element(sp.log_density.begin(), sp.log_density.end());
  sp.density.resize(sp.grid.size());
  double z = 0.0;
  for (std::size_t i = 0; i < sp.grid.size(); ++i) z += sp.density[i] = std::exp(sp.log_density[i] - mx);
  for (auto& d : sp.density) d /= z;
  const auto imax = static_cast<std::size_t>(
      std::max_element(sp.log_density.begin(), sp.log_density.end()) - sp.log_density.begin());
  sp.map_stage = sp.grid[imax];
  sp.mean_stage = 0.0;
  for (std::size_t i = 0; i < sp.grid.size(); ++i) sp.mean_stage += sp.grid[i] * sp.density[i];
  double cdf = 0.0;
  bool have_low = false;
  sp.ci_low = sp.grid.front();
  sp.ci_high = sp.grid.back();
  for (std::size_t i = 0; i < sp.grid.size(); ++i) {
    cdf += sp.density[i];
    if (!have_low && cdf >= 0.05) {
      sp.ci_low = sp.grid[i];
      have_low = true;
    }
    if (cdf >= 0.95) {
      sp.ci_high = sp.grid[i];
      break;
    }
  }
}

/// Posterior over the stage of an unseen subject under a uniform prior on the
/// grid. Only the observed biomarkers enter; different biomarkers are
/// independent given the stage.
inline StagePosterior stage(const Predictor& p, const std::vector<StageObservation>& obs,
                            std::vector<double> grid = {}) {
  if (obs.empty()) throw InputError("staging needs at least one observed biomarker");
  if (grid.empty()) grid = default_stage_grid(p);
  const std::size_t nb = p.num_biomarkers();
  std::vector<std::vector<double>> off(nb), val(nb);
  for (const auto& o : obs) {
    if (o.biomarker >= nb) throw InputError("staging observation references an unknown biomarker");
    off[o.biomarker].push_back(o.offset);
    val[o.biomarker].push_back(o.value);
  }
  StagePosterior sp;
  sp.grid = std::move(grid);
  sp.log_density.assign(sp.grid.size(), 0.0);
  for (std::size_t i = 0; i < sp.grid.size(); ++i)
    for (std::size_t b = 0; b < nb; ++b)
      sp.log_density[i] += stage_log_likelihood_biomarker(p.biomarker(b), sp.grid[i], off[b], val[b]);
  summarize_stage(sp);
  return sp;
}

/// True when the grid fails to cover the training warped-time range.
inline bool grid_misses_training_range(const Predictor& p, const std::vector<double>& grid) {
  const auto [lo, hi] = p.time_range();
  return grid.empty() || grid.front() > lo || grid.back() < hi;
}

/// Quantile with linear interpolation between order statistics.
inline double interpolated_quantile(std::vector<double> v, double q) {
  if (v.empty()) throw InputError("quantile of an empty set");
  if (!(q > 0.0 && q < 1.0)) throw InputError("quantile level must lie in (0, 1)");
  std::sort(v.begin(), v.end());
  const double h = q * static_cast<double>(v.size() - 1);
  const auto lo = static_cast<std::size_t>(std::floor(h));
  const std::size_t hi = std::min(lo + 1, v.size() - 1);
  return v[lo] + (h - static_cast<double>(lo)) * (v[hi] - v[lo]);
}

struct Classification {
  double threshold = 0.0;
  std::vector<bool> positive;
};

/// Labels a stage positive when it reaches the q-quantile of the reference shifts.
inline Classification classify_by_reference(const std::vector<double>& stages, const std::vector<double>& reference,
                                            double q) {
  Classification c;
  c.threshold = interpolated_quantile(reference, q);
  for (double s : stages) c.positive.push_back(s >= c.threshold);
  return c;
}

}  // namespace gpdpm

#endif
