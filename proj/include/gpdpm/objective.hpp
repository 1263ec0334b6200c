#ifndef GPDPM_OBJECTIVE_HPP
#define GPDPM_OBJECTIVE_HPP

#include <cmath>
#include <limits>
#include <string>
#include <vector>

#include "gpdpm/block_solver.hpp"
#include "gpdpm/ep.hpp"
#include "gpdpm/kernels.hpp"
#include "gpdpm/normal.hpp"

namespace gpdpm {

/// Gaussian prior on one (log-)parameter. An infinite sd is a flat prior.
struct GaussianPrior {
  double mean = 0.0;
  double sd = std::numeric_limits<double>::infinity();

  double log_density(double x) const {
    if (!std::isfinite(sd)) return 0.0;
    const double z = (x - mean) / sd;
    return -0.5 * z * z - std::log(sd) - 0.5 * kLog2Pi;
  }
  double gradient(double x) const { return std::isfinite(sd) ? -(x - mean) / (sd * sd) : 0.0; }
};

struct Priors {
  std::vector<GaussianPrior> log_eta;     // per biomarker
  std::vector<GaussianPrior> log_length;  // per biomarker
  std::vector<GaussianPrior> log_noise;   // per biomarker
  GaussianPrior log_re_sigma;
  GaussianPrior shift;

  /// Flat priors everywhere.
  static Priors flat(std::size_t num_biomarkers) {
    Priors p;
    p.log_eta.assign(num_biomarkers, {});
    p.log_length.assign(num_biomarkers, {});
    p.log_noise.assign(num_biomarkers, {});
    return p;
  }
};

enum class ParamBlock { Hyper, Individual, Shifts };

/// Flat parameter vector: [log eta_b, log l_b, log sigma_b]_b, then log sigma_b^j
/// for every individual/biomarker pair with a non-zero random effect, then d^j.
class ParamLayout {
 public:
  explicit ParamLayout(const Cohort& cohort) : nb_(cohort.num_biomarkers()), nind_(cohort.individuals.size()) {
    for (std::size_t j = 0; j < nind_; ++j) {
      if (cohort.individuals[j].random_effect.type == RandomEffectType::Zero) continue;
      for (std::size_t b = 0; b < nb_; ++b) re_pairs_.push_back({j, b});
    }
  }

  std::size_t num_biomarkers() const { return nb_; }
  std::size_t num_individuals() const { return nind_; }
  std::size_t hyper_offset() const { return 0; }
  std::size_t hyper_size() const { return 3 * nb_; }
  std::size_t re_offset() const { return hyper_size(); }
  std::size_t re_size() const { return re_pairs_.size(); }
  std::size_t shift_offset() const { return re_offset() + re_size(); }
  std::size_t shift_size() const { return nind_; }
  std::size_t size() const { return shift_offset() + shift_size(); }
  const std::vector<std::pair<std::size_t, std::size_t>>& re_pairs() const { return re_pairs_; }

  std::pair<std::size_t, std::size_t> range(ParamBlock block) const {
    switch (block) {
      case ParamBlock::Hyper: return {hyper_offset(), hyper_size()};
      case ParamBlock::Individual: return {re_offset(), re_size()};
      case ParamBlock::Shifts: return {shift_offset(), shift_size()};
    }
    return {0, 0};
  }

  Vector encode(const Cohort& c) const {
    Vector x(static_cast<Eigen::Index>(size()));
    for (std::size_t b = 0; b < nb_; ++b) {
      x(3 * b) = std::log(c.biomarkers[b].eta);
      x(3 * b + 1) = std::log(c.biomarkers[b].length_scale);
      x(3 * b + 2) = std::log(c.biomarkers[b].noise_sd);
    }
    for (std::size_t i = 0; i < re_pairs_.size(); ++i) {
      const auto [j, b] = re_pairs_[i];
      x(re_offset() + i) = std::log(c.individuals[j].random_effect.sigma[b]);
    }
    for (std::size_t j = 0; j < nind_; ++j) x(shift_offset() + j) = c.individuals[j].time_shift;
    return x;
  }

  void decode(const Vector& x, Cohort& c) const {
    for (std::size_t b = 0; b < nb_; ++b) {
      c.biomarkers[b].eta = std::exp(x(3 * b));
      c.biomarkers[b].length_scale = std::exp(x(3 * b + 1));
      c.biomarkers[b].noise_sd = std::exp(x(3 * b + 2));
    }
    for (std::size_t i = 0; i < re_pairs_.size(); ++i) {
      const auto [j, b] = re_pairs_[i];
      c.individuals[j].random_effect.sigma[b] = std::exp(x(re_offset() + i));
    }
    for (std::size_t j = 0; j < nind_; ++j) c.individuals[j].time_shift = x(shift_offset() + j);
  }

 private:
  std::size_t nb_;
  std::size_t nind_;
  std::vector<std::pair<std::size_t, std::size_t>> re_pairs_;
};

inline double log_prior(const ParamLayout& layout, const Priors& priors, const Vector& x) {
  double lp = 0.0;
  for (std::size_t b = 0; b < layout.num_biomarkers(); ++b) {
    lp += priors.log_eta[b].log_density(x(3 * b));
    lp += priors.log_length[b].log_density(x(3 * b + 1));
    lp += priors.log_noise[b].log_density(x(3 * b + 2));
  }
  for (std::size_t i = 0; i < layout.re_size(); ++i)
    lp += priors.log_re_sigma.log_density(x(layout.re_offset() + i));
  for (std::size_t j = 0; j < layout.shift_size(); ++j)
    lp += priors.shift.log_density(x(layout.shift_offset() + j));
  return lp;
}

inline Vector log_prior_gradient(const ParamLayout& layout, const Priors& priors, const Vector& x) {
  Vector g = Vector::Zero(x.size());
  for (std::size_t b = 0; b < layout.num_biomarkers(); ++b) {
    g(3 * b) = priors.log_eta[b].gradient(x(3 * b));
    g(3 * b + 1) = priors.log_length[b].gradient(x(3 * b + 1));
    g(3 * b + 2) = priors.log_noise[b].gradient(x(3 * b + 2));
  }
  for (std::size_t i = 0; i < layout.re_size(); ++i)
    g(layout.re_offset() + i) = priors.log_re_sigma.gradient(x(layout.re_offset() + i));
  for (std::size_t j = 0; j < layout.shift_size(); ++j)
    g(layout.shift_offset() + j) = priors.shift.gradient(x(layout.shift_offset() + j));
  return g;
}

/// Penalized EP log marginal with the sites and their normalizers held fixed.
///
/// At the EP fixed point of `sites` this equals log_marginal + log prior; away
/// from it, only the Gaussian part moves, which is the standard treatment for
/// hyperparameter gradients under EP. The derivative grid stays where the
/// cohort has it.
class FixedSiteObjective {
 public:
  FixedSiteObjective(Cohort cohort, const EPState& state, Priors priors)
      : cohort_(std::move(cohort)),
        layout_(cohort_),
        priors_(std::move(priors)),
        sites_(state.sites()),
        site_constant_(sum_site_constants(state)) {}

  const ParamLayout& layout() const { return layout_; }
  const Cohort& cohort() const { return cohort_; }
  Vector initial() const { return layout_.encode(cohort_); }

  /// Objective value; -infinity if a covariance cannot be factored.
  double value(const Vector& x) const {
    try {
      Cohort c = cohort_;
      layout_.decode(x, c);
      const JointGP joint = assemble_joint(c);
      double v = site_constant_ + log_prior(layout_, priors_, x);
      for (std::size_t k = 0; k < joint.blocks.size(); ++k)
        v += BlockSolver(joint.blocks[k], sites_[k], false).gaussian_term();
      return std::isfinite(v) ? v : -std::numeric_limits<double>::infinity();
    } catch (const NumericalError&) {
      return -std::numeric_limits<double>::infinity();
    }
  }

  /// Full gradient (all blocks). Block-wise contributions never touch other biomarkers.
  Vector gradient(const Vector& x) const {
    Cohort c = cohort_;
    layout_.decode(x, c);
    const JointGP joint = assemble_joint(c);
    Vector g = log_prior_gradient(layout_, priors_, x);

    std::vector<std::size_t> re_slot(layout_.num_individuals() * layout_.num_biomarkers(), SIZE_MAX);
    for (std::size_t i = 0; i < layout_.re_size(); ++i) {
      const auto [j, b] = layout_.re_pairs()[i];
      re_slot[j * layout_.num_biomarkers() + b] = i;
    }

    for (std::size_t k = 0; k < joint.blocks.size(); ++k) {
      const auto& blk = joint.blocks[k];
      const BlockSolver solver(blk, sites_[k], true);
      const Matrix W = solver.gradient_weights();
      const std::size_t n = blk.num_obs();
      const std::size_t d = blk.num_deriv();
      const std::size_t m = n + d;
      const double eta = blk.eta;
      const double l = blk.length_scale;
      const double l2 = l * l;

      // log eta: dK = K.
      g(3 * k) += (W.array() * blk.K.array()).sum();

      // log l.
      double gl = 0.0;
      auto t_at = [&](std::size_t a) { return a < n ? blk.times(a) : blk.deriv_times(a - n); };
      for (std::size_t a = 0; a < m; ++a) {
        for (std::size_t c2 = 0; c2 < m; ++c2) {
          const double r = t_at(a) - t_at(c2);
          const double u = r * r / l2;
          const double e = std::exp(-0.5 * u);
          double dk;
          if (a < n && c2 < n) {
            dk = eta * e * u;
          } else if (a < n || c2 < n) {
            dk = blk.K(a, c2) * (u - 2.0);
          } else {
            dk = (eta / l2) * e * (-2.0 + 5.0 * u - u * u);
          }
          gl += W(a, c2) * dk;
        }
      }
      g(3 * k + 1) += gl;

      // log noise sd: dA = 2 sigma^2 I on observation rows.
      g(3 * k + 2) += 2.0 * blk.noise_sd * blk.noise_sd * W.topLeftCorner(n, n).trace();

      for (std::size_t grp = 0; grp < blk.group_begin.size(); ++grp) {
        const std::size_t j = blk.group_individual[grp];
        const std::size_t g0 = blk.group_begin[grp];
        const std::size_t g1 = blk.group_end[grp];

        // log sigma_b^j: dA = 2 S on the individual's sub-block.
        const std::size_t slot = re_slot[j * layout_.num_biomarkers() + k];
        if (slot != SIZE_MAX) {
          double s = 0.0;
          for (std::size_t a = g0; a < g1; ++a)
            for (std::size_t c2 = g0; c2 < g1; ++c2) s += W(a, c2) * blk.S(a, c2);
          g(layout_.re_offset() + slot) += 2.0 * s;
        }

        // d^j: rows of j move, entries within j are unchanged. Both symmetric
        // halves contribute, hence the factor 2 against the half-weights.
        double sd = 0.0;
        for (std::size_t a = g0; a < g1; ++a) {
          const double ta = blk.times(a);
          for (std::size_t c2 = 0; c2 < n; ++c2) {
            if (c2 >= g0 && c2 < g1) continue;
            sd += W(a, c2) * (-se_cov_d1(ta, blk.times(c2), eta, l));
          }
          for (std::size_t q = 0; q < d; ++q) sd += W(a, n + q) * se_cov_d2(ta, blk.deriv_times(q), eta, l);
        }
        g(layout_.shift_offset() + j) += 2.0 * sd;
      }
    }
    return g;
  }

  Vector gradient(const Vector& x, ParamBlock block) const {
    const Vector full = gradient(x);
    const auto [off, len] = layout_.range(block);
    return full.segment(static_cast<Eigen::Index>(off), static_cast<Eigen::Index>(len));
  }

 private:
  Cohort cohort_;
  ParamLayout layout_;
  Priors priors_;
  std::vector<std::vector<Site>> sites_;
  double site_constant_;
};

/// Penalized EP log marginal: runs EP at the cohort's current parameters.
inline double objective(const Cohort& cohort, const Priors& priors, const EPOptions& ep_opt = {},
                        EPState* state_out = nullptr) {
  try {
    const JointGP joint = assemble_joint(cohort);
    EPState st = ep_run(joint, ep_opt);
    const ParamLayout layout(cohort);
    const double v = st.log_marginal + log_prior(layout, priors, layout.encode(cohort));
    if (state_out) *state_out = std::move(st);
    return v;
  } catch (const NumericalError&) {
    return -std::numeric_limits<double>::infinity();
  }
}

}  // namespace gpdpm

#endif
