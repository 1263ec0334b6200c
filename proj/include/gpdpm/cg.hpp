#ifndef GPDPM_CG_HPP
#define GPDPM_CG_HPP

#include <algorithm>
#include <cmath>
#include <limits>

#include "gpdpm/linalg.hpp"

namespace gpdpm {

struct CGOptions {
  int max_iters = 10;
  double max_step = 1.0;  // cap on the largest coordinate change per line search
  double armijo = 1e-4;
  double shrink = 0.5;
  int max_backtracks = 30;
  double grad_tol = 1e-9;
};

struct CGResult {
  Vector x;
  double value = 0.0;
  int iterations = 0;
  int evaluations = 0;
};

/// Polak-Ribiere (PR+) nonlinear conjugate gradient ascent with Armijo
/// backtracking. `value(x)` may return -infinity to reject a point.
template <class Value, class Gradient>
CGResult maximize_cg(Value&& value, Gradient&& gradient, Vector x, const CGOptions& opt = {}) {
  CGResult res;
  double f = value(x);
  ++res.evaluations;
  res.x = x;
  res.value = f;
  if (!std::isfinite(f) || x.size() == 0) return res;

  Vector g = gradient(x);
  Vector p = g;
  double last_move = -1.0;  // largest coordinate change of the previous accepted step
  for (int it = 0; it < opt.max_iters; ++it) {
    if (g.lpNorm<Eigen::Infinity>() < opt.grad_tol) break;
    double slope = g.dot(p);
    if (!(slope > 0.0)) {
      p = g;
      slope = g.dot(p);
    }
    const double pmax = p.lpNorm<Eigen::Infinity>();
    const double cap = opt.max_step / pmax;
    double alpha = last_move > 0.0 ? std::min(2.0 * last_move, opt.max_step) / pmax : std::min(1.0, cap);

    bool accepted = false;
    Vector x_new;
    double f_new = -std::numeric_limits<double>::infinity();
    for (int bt = 0; bt < opt.max_backtracks; ++bt) {
      x_new = x + alpha * p;
      f_new = value(x_new);
      ++res.evaluations;
      if (std::isfinite(f_new) && f_new >= f + opt.armijo * alpha * slope) {
        accepted = true;
        break;
      }
      alpha *= opt.shrink;
    }
    if (!accepted) break;

    last_move = alpha * pmax;
    const Vector g_new = gradient(x_new);
    const double beta = std::max(0.0, g_new.dot(g_new - g) / std::max(g.squaredNorm(), 1e-300));
    p = g_new + beta * p;
    x = x_new;
    f = f_new;
    g = g_new;
    ++res.iterations;
  }
  res.x = x;
  res.value = f;
  return res;
}

}  // namespace gpdpm

#endif
