#ifndef GPDPM_DATA_MODEL_HPP
#define GPDPM_DATA_MODEL_HPP

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <stdexcept>
#include <string>
#include <vector>

namespace gpdpm {

/// Raised for malformed user input (CSV rows, config files, model files).
class InputError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Raised when a covariance cannot be factored even after jitter escalation.
class NumericalError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Default number of virtual derivative observations per biomarker.
inline constexpr std::size_t kDefaultDerivativePoints = 10;

struct BiomarkerSpec {
  std::string name;
  double eta = 1.0;           // marginal variance of the fixed effect
  double length_scale = 1.0;  // SE length-scale, time units
  double noise_sd = 0.1;      // observation noise sd
  double lambda = 1e-6;       // probit scale on the derivative; smaller is stricter

  void validate() const {
    if (!(eta > 0.0) || !(length_scale > 0.0) || !(noise_sd >= 0.0) || !(lambda > 0.0))
      throw InputError("biomarker '" + name + "': hyperparameters out of range");
  }
};

struct Observation {
  std::size_t biomarker = 0;
  double time = 0.0;   // observational time tau, before warping
  double value = 0.0;  // score
};

enum class RandomEffectType { Zero, IID, Linear };

/// Per-individual random-effect covariance. `sigma` has one entry per biomarker.
struct RandomEffect {
  RandomEffectType type = RandomEffectType::Zero;
  std::vector<double> sigma;
  double t_bar = 0.0;  // mean distinct observation time (raw tau); Linear only
};

struct IndividualRecord {
  std::string id;
  std::vector<Observation> observations;
  double time_shift = 0.0;
  RandomEffect random_effect;

  /// Sorted distinct observation times across all biomarkers.
  std::vector<double> distinct_times() const {
    std::vector<double> t;
    t.reserve(observations.size());
    for (const auto& o : observations) t.push_back(o.time);
    std::sort(t.begin(), t.end());
    t.erase(std::unique(t.begin(), t.end()), t.end());
    return t;
  }
};

struct Cohort {
  std::vector<BiomarkerSpec> biomarkers;
  std::vector<IndividualRecord> individuals;
  std::vector<std::vector<double>> derivative_grid;  // per biomarker

  std::size_t num_biomarkers() const { return biomarkers.size(); }

  std::size_t num_observations() const {
    std::size_t n = 0;
    for (const auto& ind : individuals) n += ind.observations.size();
    return n;
  }

  /// Index of a biomarker by name, or num_biomarkers() if absent.
  std::size_t biomarker_index(const std::string& name) const {
    for (std::size_t b = 0; b < biomarkers.size(); ++b)
      if (biomarkers[b].name == name) return b;
    return biomarkers.size();
  }

  void validate() const {
    for (const auto& bm : biomarkers) bm.validate();
    if (!derivative_grid.empty() && derivative_grid.size() != biomarkers.size())
      throw InputError("derivative grid must have one entry per biomarker");
    for (const auto& ind : individuals) {
      if (ind.observations.empty())
        throw InputError("individual '" + ind.id + "' has no observations");
      if (!std::isfinite(ind.time_shift))
        throw InputError("individual '" + ind.id + "' has a non-finite time shift");
      for (const auto& o : ind.observations) {
        if (o.biomarker >= biomarkers.size())
          throw InputError("individual '" + ind.id + "' references an unknown biomarker");
        if (!std::isfinite(o.time) || !std::isfinite(o.value))
          throw InputError("individual '" + ind.id + "' has a non-finite observation");
      }
    }
  }
};

/// Random-effect structure from the number of distinct observation times:
/// four or more support a centred linear slope, two or three an i.i.d. offset,
/// a single visit gets none.
inline RandomEffect assign_re_structure(const IndividualRecord& individual,
                                        std::size_t num_biomarkers,
                                        double initial_sigma = 0.1) {
  const auto times = individual.distinct_times();
  RandomEffect re;
  if (times.size() >= 4) {
    re.type = RandomEffectType::Linear;
    double s = 0.0;
    for (double t : times) s += t;
    re.t_bar = s / static_cast<double>(times.size());
  } else if (times.size() >= 2) {
    re.type = RandomEffectType::IID;
  } else {
    re.type = RandomEffectType::Zero;
  }
  re.sigma.assign(num_biomarkers, re.type == RandomEffectType::Zero ? 0.0 : initial_sigma);
  return re;
}

inline const char* to_string(RandomEffectType t) {
  switch (t) {
    case RandomEffectType::Zero: return "zero";
    case RandomEffectType::IID: return "iid";
    case RandomEffectType::Linear: return "linear";
  }
  return "zero";
}

inline RandomEffectType random_effect_type_from_string(const std::string& s) {
  if (s == "zero") return RandomEffectType::Zero;
  if (s == "iid") return RandomEffectType::IID;
  if (s == "linear") return RandomEffectType::Linear;
  throw InputError("unknown random effect type '" + s + "'");
}

}  // namespace gpdpm

#endif
