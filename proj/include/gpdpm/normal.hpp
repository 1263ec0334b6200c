#ifndef GPDPM_NORMAL_HPP
#define GPDPM_NORMAL_HPP

#include <cmath>
#include <numbers>

namespace gpdpm {

inline constexpr double kLog2Pi = 1.8378770664093454835606594728112;

/// Standard normal density.
inline double normal_pdf(double z) {
  return std::exp(-0.5 * z * z) / std::sqrt(2.0 * std::numbers::pi);
}

inline double normal_log_pdf(double z) { return -0.5 * z * z - 0.5 * kLog2Pi; }

/// Standard normal CDF.
inline double normal_cdf(double z) { return 0.5 * std::erfc(-z / std::numbers::sqrt2); }

namespace detail {

// Mills ratio (1 - Phi(x)) / phi(x) for x >= 0 via Lentz's continued fraction.
// Only used in the far tail where erfc loses relative accuracy.
inline double mills_ratio_tail(double x) {
  constexpr double tiny = 1e-300;
  double f = x;
  double c = x;
  double d = 0.0;
  for (int k = 1; k < 500; ++k) {
    d = x + k * d;
    if (std::abs(d) < tiny) d = tiny;
    c = x + k / c;
    if (std::abs(c) < tiny) c = tiny;
    d = 1.0 / d;
    const double delta = c * d;
    f *= delta;
    if (std::abs(delta - 1.0) < 1e-16) break;
  }
  return 1.0 / f;
}

inline constexpr double kTailSwitch = -8.0;

}  // namespace detail

/// log Phi(z), accurate for large negative z.
inline double normal_log_cdf(double z) {
  if (z > detail::kTailSwitch) return std::log(normal_cdf(z));
  return normal_log_pdf(z) + std::log(detail::mills_ratio_tail(-z));
}

/// phi(z) / Phi(z), the inverse Mills ratio. Stable for z << 0 where it behaves like -z.
inline double inverse_mills_ratio(double z) {
  if (z > detail::kTailSwitch) return normal_pdf(z) / normal_cdf(z);
  return 1.0 / detail::mills_ratio_tail(-z);
}

}  // namespace gpdpm

#endif
