#ifndef GPDPM_QUANTILE_HPP
#define GPDPM_QUANTILE_HPP

#include <algorithm>
#include <numeric>
#include <span>
#include <string>
#include <vector>

#include "gpdpm/data_model.hpp"

namespace gpdpm {

enum class Direction { IncreasingAbnormal, DecreasingAbnormal };

/// Rank-based scoring of raw biomarker values onto [0, 1], normal to abnormal.
///
/// Fitted once on training values and frozen. Ties share their average rank;
/// the smallest and largest (oriented) raw values map to 0 and 1. Unseen values
/// are scored by linear interpolation between neighbouring fitted values and
/// clamped to [0, 1].
class QuantileTransform {
 public:
  QuantileTransform() = default;

  static QuantileTransform fit(std::span<const double> values, Direction direction) {
    QuantileTransform q;
    q.direction_ = direction;
    std::vector<double> v(values.begin(), values.end());
    for (double& x : v) x = q.orient(x);
    std::sort(v.begin(), v.end());

    // Average 1-based rank for each distinct value.
    std::vector<double> ranks;
    for (std::size_t i = 0; i < v.size();) {
      std::size_t j = i;
      while (j < v.size() && v[j] == v[i]) ++j;
      q.knots_.push_back(v[i]);
      ranks.push_back(0.5 * static_cast<double>(i + 1 + j));
      i = j;
    }
    if (q.knots_.size() < 2)
      throw InputError("quantile transform needs at least two distinct values");
    const double lo = ranks.front();
    const double hi = ranks.back();
    for (double r : ranks) q.scores_.push_back((r - lo) / (hi - lo));
    return q;
  }

  /// Rebuilds a transform from persisted knots (oriented values) and scores.
  static QuantileTransform from_knots(Direction direction, std::vector<double> knots,
                                      std::vector<double> scores) {
    if (knots.size() != scores.size() || knots.size() < 2)
      throw InputError("malformed quantile transform");
    QuantileTransform q;
    q.direction_ = direction;
    q.knots_ = std::move(knots);
    q.scores_ = std::move(scores);
    return q;
  }

  double operator()(double raw) const {
    const double x = orient(raw);
    if (x <= knots_.front()) return 0.0;
    if (x >= knots_.back()) return 1.0;
    const auto it = std::lower_bound(knots_.begin(), knots_.end(), x);
    const auto i = static_cast<std::size_t>(it - knots_.begin());
    if (*it == x) return scores_[i];
    const double w = (x - knots_[i - 1]) / (knots_[i] - knots_[i - 1]);
    return std::clamp(scores_[i - 1] + w * (scores_[i] - scores_[i - 1]), 0.0, 1.0);
  }

  std::vector<double> apply(std::span<const double> raw) const {
    std::vector<double> out;
    out.reserve(raw.size());
    for (double x : raw) out.push_back((*this)(x));
    return out;
  }

  Direction direction() const { return direction_; }
  const std::vector<double>& knots() const { return knots_; }
  const std::vector<double>& scores() const { return scores_; }

 private:
  double orient(double x) const { return direction_ == Direction::DecreasingAbnormal ? -x : x; }

  Direction direction_ = Direction::IncreasingAbnormal;
  std::vector<double> knots_;
  std::vector<double> scores_;
};

/// Convenience: fit on `values` and return their scores.
inline std::vector<double> quantile_transform(std::span<const double> values, Direction direction) {
  return QuantileTransform::fit(values, direction).apply(values);
}

/// Fits one transform per biomarker on the pooled values of the cohort and
/// replaces every observation value by its score.
inline std::vector<QuantileTransform> score_cohort(Cohort& cohort,
                                                   const std::vector<Direction>& directions) {
  std::vector<std::vector<double>> pooled(cohort.num_biomarkers());
  for (const auto& ind : cohort.individuals)
    for (const auto& o : ind.observations) pooled[o.biomarker].push_back(o.value);
  std::vector<QuantileTransform> transforms;
  for (std::size_t b = 0; b < pooled.size(); ++b) {
    const Direction d = b < directions.size() ? directions[b] : Direction::IncreasingAbnormal;
    try {
      transforms.push_back(QuantileTransform::fit(pooled[b], d));
    } catch (const InputError&) {
      throw InputError("biomarker '" + cohort.biomarkers[b].name + "' is degenerate (all values identical)");
    }
  }
  for (auto& ind : cohort.individuals)
    for (auto& o : ind.observations) o.value = transforms[o.biomarker](o.value);
  return transforms;
}

}  // namespace gpdpm

#endif
