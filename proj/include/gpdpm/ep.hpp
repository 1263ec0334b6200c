#ifndef GPDPM_EP_HPP
#define GPDPM_EP_HPP

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <random>
#include <vector>

#include "gpdpm/block_solver.hpp"
#include "gpdpm/kernels.hpp"
#include "gpdpm/normal.hpp"

namespace gpdpm {

struct TiltedMoments {
  double Z = 1.0;
  double log_Z = 0.0;
  double mean = 0.0;
  double var = 0.0;
};

struct CavityParams {
  double mu = 0.0;
  double var = 0.0;
  bool valid = true;
};

/// Removes a site from a Gaussian marginal (mean `mu`, variance `var`).
inline CavityParams cavity(double mu, double var, const Site& site) {
  CavityParams c;
  const double tau_minus = 1.0 / var - site.tau;
  if (!(tau_minus > 0.0) || !std::isfinite(tau_minus)) {
    c.valid = false;
    c.mu = mu;
    c.var = var;
    return c;
  }
  c.var = 1.0 / tau_minus;
  c.mu = c.var * (mu / var - site.nu);
  return c;
}

/// Moments of N(x | mu_minus, var_minus) * Phi(x / lambda).
inline TiltedMoments tilted_moments(double mu_minus, double var_minus, double lambda) {
  TiltedMoments m;
  const double s2 = lambda * lambda + var_minus;
  const double s = std::sqrt(s2);
  const double z = mu_minus / s;
  const double r = inverse_mills_ratio(z);
  m.log_Z = normal_log_cdf(z);
  m.Z = std::exp(m.log_Z);
  m.mean = mu_minus + var_minus * r / s;
  m.var = var_minus - var_minus * var_minus * r * (z + r) / s2;
  return m;
}

struct EPOptions {
  double damping = 0.8;
  int max_sweeps = 100;
  double tol = 1e-6;
  // Precision assigned to a site whose proposed variance is not positive (variance 1e6).
  double clamp_tau = 1e-6;
  bool random_order = false;
  std::uint64_t seed = 0;
};

/// EP state of one biomarker block.
struct EPBlockState {
  std::vector<Site> sites;
  // Derivative marginal conditioned on the observations only.
  Vector prior_mean;
  Matrix prior_cov;
  // Derivative posterior including the sites.
  Vector mean;
  Matrix cov;
  std::vector<double> cavity_mu;
  std::vector<double> cavity_var;
  std::vector<double> site_const;   // per-site part of the log marginal, see finalize
  std::vector<double> site_log_z;   // log Z~ (infinite for vacuous sites)
  Vector joint_mean;                // over [observations; derivatives] of the block
  Matrix joint_cov;
  double gaussian_term = 0.0;
};

struct EPState {
  std::vector<EPBlockState> blocks;
  double log_marginal = 0.0;
  bool converged = false;
  int sweeps = 0;
  int clamped = 0;   // proposals with non-positive variance
  int skipped = 0;   // updates skipped on a non-positive cavity variance

  double site_mu(std::size_t k, std::size_t l) const {
    const auto& s = blocks[k].sites[l];
    return s.tau > 0.0 ? s.nu / s.tau : 0.0;
  }
  double site_var(std::size_t k, std::size_t l) const {
    const auto& s = blocks[k].sites[l];
    return s.tau > 0.0 ? 1.0 / s.tau : std::numeric_limits<double>::infinity();
  }
  double site_log_z(std::size_t k, std::size_t l) const { return blocks[k].site_log_z[l]; }

  std::vector<std::vector<Site>> sites() const {
    std::vector<std::vector<Site>> out;
    for (const auto& b : blocks) out.push_back(b.sites);
    return out;
  }

  /// Dense joint posterior mean over all rows in JointGP::dense_prior order.
  Vector posterior_mean(const JointGP& joint) const {
    Vector out = Vector::Zero(static_cast<Eigen::Index>(joint.num_observations + joint.num_derivatives()));
    for (std::size_t k = 0; k < blocks.size(); ++k) {
      const auto rows = global_rows(joint, k);
      for (std::size_t a = 0; a < rows.size(); ++a) out(rows[a]) = blocks[k].joint_mean(a);
    }
    return out;
  }

  Matrix posterior_cov(const JointGP& joint) const {
    const auto total = static_cast<Eigen::Index>(joint.num_observations + joint.num_derivatives());
    Matrix out = Matrix::Zero(total, total);
    for (std::size_t k = 0; k < blocks.size(); ++k) {
      const auto rows = global_rows(joint, k);
      for (std::size_t a = 0; a < rows.size(); ++a)
        for (std::size_t c = 0; c < rows.size(); ++c) out(rows[a], rows[c]) = blocks[k].joint_cov(a, c);
    }
    return out;
  }

 private:
  static std::vector<Eigen::Index> global_rows(const JointGP& joint, std::size_t k) {
    const auto& blk = joint.blocks[k];
    std::vector<Eigen::Index> rows;
    for (auto r : blk.row_observation) rows.push_back(static_cast<Eigen::Index>(r));
    for (std::size_t l = 0; l < blk.num_deriv(); ++l)
      rows.push_back(static_cast<Eigen::Index>(joint.derivative_row(k, l)));
    return rows;
  }
};

namespace detail {

// Derivative marginal given only the Gaussian observations.
inline void condition_on_observations(const BiomarkerBlock& blk, EPBlockState& st) {
  const auto n = static_cast<Eigen::Index>(blk.num_obs());
  const auto d = static_cast<Eigen::Index>(blk.num_deriv());
  if (n == 0) {
    st.prior_mean = Vector::Zero(d);
    st.prior_cov = blk.K_dd();
    return;
  }
  Matrix A = blk.K_ff();
  A += blk.noise();
  const auto llt = robust_cholesky(A, "observation covariance of biomarker block " + std::to_string(blk.biomarker));
  const Matrix V = llt.matrixL().solve(Matrix(blk.K_fd()));
  const Vector w = llt.matrixL().solve(blk.y);
  st.prior_mean = V.transpose() * w;
  st.prior_cov = blk.K_dd();
  st.prior_cov.noalias() -= V.transpose() * V;
}

// Exact derivative posterior from the conditioned prior and current sites.
inline void refresh_derivative_posterior(EPBlockState& st) {
  const auto d = st.prior_mean.size();
  Vector sq(d), tau(d), nu(d);
  for (Eigen::Index q = 0; q < d; ++q) {
    tau(q) = st.sites[q].tau;
    nu(q) = st.sites[q].nu;
    sq(q) = std::sqrt(tau(q));
  }
  Matrix B = sq.asDiagonal() * st.prior_cov * sq.asDiagonal();
  B.diagonal().array() += 1.0;
  const auto llt = robust_cholesky(B, "derivative EP system");
  const Matrix V = llt.matrixL().solve(sq.asDiagonal() * st.prior_cov);
  st.cov = st.prior_cov - V.transpose() * V;
  st.cov = 0.5 * (st.cov + st.cov.transpose());
  st.mean = st.prior_mean + st.cov * (nu - tau.cwiseProduct(st.prior_mean));
}

}  // namespace detail

/// One damped EP update of site `l` of `st`, followed by a rank-one refresh of
/// the derivative posterior. Returns the scaled natural-parameter change.
inline double site_update(EPBlockState& st, std::size_t l, double lambda, const EPOptions& opt,
                          int& clamped, int& skipped) {
  Site& site = st.sites[l];
  const double mu_l = st.mean(static_cast<Eigen::Index>(l));
  const double var_l = st.cov(static_cast<Eigen::Index>(l), static_cast<Eigen::Index>(l));
  const CavityParams cav = cavity(mu_l, var_l, site);
  if (!cav.valid) {
    ++skipped;
    return 0.0;
  }
  const TiltedMoments tm = tilted_moments(cav.mu, cav.var, lambda);
  const double tau_minus = 1.0 / cav.var;
  const double nu_minus = cav.mu / cav.var;
  double tau_new = 1.0 / tm.var - tau_minus;
  double nu_new = tm.mean / tm.var - nu_minus;
  if (!(tau_new > 0.0) || !std::isfinite(tau_new) || !std::isfinite(nu_new)) {
    ++clamped;
    tau_new = opt.clamp_tau;
    nu_new = tm.mean * (tau_minus + tau_new) - nu_minus;
  }
  tau_new = (1.0 - opt.damping) * site.tau + opt.damping * tau_new;
  nu_new = (1.0 - opt.damping) * site.nu + opt.damping * nu_new;

  const double dtau = tau_new - site.tau;
  const double dnu = nu_new - site.nu;
  const double change = std::max(std::abs(dtau) / std::max(1.0, std::abs(tau_new)),
                                 std::abs(dnu) / std::max(1.0, std::abs(nu_new)));
  site.tau = tau_new;
  site.nu = nu_new;

  const auto li = static_cast<Eigen::Index>(l);
  const Vector s = st.cov.col(li);
  const double denom = 1.0 + dtau * var_l;
  st.cov.noalias() -= (dtau / denom) * s * s.transpose();
  st.mean += s * ((dnu - dtau * mu_l) / denom);
  return change;
}

/// Computes the block's joint posterior, cavities and log-marginal pieces for
/// the current sites. The per-site constant is
///   log Phi(z) + 1/2 log(1 + var_- tau) + (tau mu_-^2 - 2 mu_- nu - nu^2 var_-) / (2 (1 + var_- tau)),
/// the site factors of the EP marginal with the 1/tau-divergent parts cancelled
/// against the Gaussian term.
inline void finalize_block(const BiomarkerBlock& blk, EPBlockState& st) {
  const BlockSolver solver(blk, st.sites, true);
  st.gaussian_term = solver.gaussian_term();
  st.joint_mean = solver.posterior_mean();
  st.joint_cov = solver.posterior_cov();

  const std::size_t n = blk.num_obs();
  const std::size_t d = blk.num_deriv();
  st.mean = st.joint_mean.tail(static_cast<Eigen::Index>(d));
  st.cov = st.joint_cov.bottomRightCorner(static_cast<Eigen::Index>(d), static_cast<Eigen::Index>(d));
  st.cavity_mu.assign(d, 0.0);
  st.cavity_var.assign(d, 0.0);
  st.site_const.assign(d, 0.0);
  st.site_log_z.assign(d, 0.0);
  for (std::size_t l = 0; l < d; ++l) {
    const auto& s = st.sites[l];
    const double mu = st.joint_mean(static_cast<Eigen::Index>(n + l));
    const double var = st.joint_cov(static_cast<Eigen::Index>(n + l), static_cast<Eigen::Index>(n + l));
    const CavityParams cav = cavity(mu, var, s);
    st.cavity_mu[l] = cav.mu;
    st.cavity_var[l] = cav.var;
    const double z = cav.mu / std::sqrt(blk.lambda * blk.lambda + cav.var);
    const double log_phi = normal_log_cdf(z);
    const double a = 1.0 + cav.var * s.tau;
    st.site_const[l] = log_phi + 0.5 * std::log(a) +
                       (s.tau * cav.mu * cav.mu - 2.0 * cav.mu * s.nu - s.nu * s.nu * cav.var) / (2.0 * a);
    if (s.tau > 0.0) {
      const double site_var = 1.0 / s.tau;
      const double site_mu = s.nu / s.tau;
      const double tot = cav.var + site_var;
      st.site_log_z[l] = log_phi + 0.5 * kLog2Pi + 0.5 * std::log(tot) +
                         (cav.mu - site_mu) * (cav.mu - site_mu) / (2.0 * tot);
    } else {
      st.site_log_z[l] = std::numeric_limits<double>::infinity();
    }
  }
}

inline double sum_site_constants(const EPState& state) {
  double s = 0.0;
  for (const auto& b : state.blocks)
    for (double c : b.site_const) s += c;
  return s;
}

/// EP log marginal likelihood from a finalized state: sum over blocks of the
/// Gaussian term plus the per-site constants.
inline double log_marginal(const EPState& state) {
  double lm = 0.0;
  for (const auto& b : state.blocks) lm += b.gaussian_term;
  return lm + sum_site_constants(state);
}

/// Runs EP over the probit derivative factors of every biomarker block.
/// `warm_start` may hold previous sites (per block, matching grid sizes).
inline EPState ep_run(const JointGP& joint, const EPOptions& opt = {},
                      const std::vector<std::vector<Site>>* warm_start = nullptr) {
  EPState state;
  state.blocks.resize(joint.blocks.size());
  std::mt19937_64 rng(opt.seed);
  bool all_converged = true;

  for (std::size_t k = 0; k < joint.blocks.size(); ++k) {
    const auto& blk = joint.blocks[k];
    auto& st = state.blocks[k];
    const std::size_t d = blk.num_deriv();
    st.sites.assign(d, Site{});
    if (warm_start && k < warm_start->size() && (*warm_start)[k].size() == d) st.sites = (*warm_start)[k];

    bool converged = d == 0;
    if (d > 0) {
      detail::condition_on_observations(blk, st);
      detail::refresh_derivative_posterior(st);
      std::vector<std::size_t> order(d);
      std::iota(order.begin(), order.end(), 0);
      int sweep = 0;
      for (; sweep < opt.max_sweeps; ++sweep) {
        if (opt.random_order) std::shuffle(order.begin(), order.end(), rng);
        double max_change = 0.0;
        for (std::size_t l : order)
          max_change = std::max(max_change, site_update(st, l, blk.lambda, opt, state.clamped, state.skipped));
        detail::refresh_derivative_posterior(st);
        if (max_change < opt.tol) {
          converged = true;
          ++sweep;
          break;
        }
      }
      state.sweeps = std::max(state.sweeps, sweep);
    }
    all_converged = all_converged && converged;
    finalize_block(blk, st);
  }
  state.converged = all_converged;
  state.log_marginal = log_marginal(state);
  return state;
}

/// Finalizes a state for fixed, externally supplied sites (no EP iterations).
inline EPState ep_with_sites(const JointGP& joint, const std::vector<std::vector<Site>>& sites) {
  EPState state;
  state.blocks.resize(joint.blocks.size());
  for (std::size_t k = 0; k < joint.blocks.size(); ++k) {
    state.blocks[k].sites = sites.at(k);
    finalize_block(joint.blocks[k], state.blocks[k]);
  }
  state.converged = true;
  state.log_marginal = log_marginal(state);
  return state;
}

}  // namespace gpdpm

#endif
