#ifndef GPDPM_MODEL_IO_HPP
#define GPDPM_MODEL_IO_HPP

#include <fstream>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "gpdpm/ep.hpp"
#include "gpdpm/predict.hpp"
#include "gpdpm/quantile.hpp"

namespace gpdpm {

inline constexpr const char* kModelFormat = "gpdpm-model";
inline constexpr int kModelVersion = 1;

/// Everything needed to predict and stage without refitting.
struct Model {
  Cohort cohort;                                // fitted parameters and (scored) training data
  std::vector<std::vector<Site>> sites;         // EP sites per biomarker
  std::vector<QuantileTransform> transforms;    // empty when the data were already scores
  double objective = 0.0;
  bool converged = false;

  Predictor predictor() const { return Predictor(cohort, sites); }
};

namespace detail {

using nlohmann::json;

inline const char* direction_name(Direction d) {
  return d == Direction::DecreasingAbnormal ? "decreasing_abnormal" : "increasing_abnormal";
}

inline Direction direction_from_name(const std::string& s) {
  if (s == "increasing_abnormal") return Direction::IncreasingAbnormal;
  if (s == "decreasing_abnormal") return Direction::DecreasingAbnormal;
  throw InputError("unknown quantile direction '" + s + "'");
}

}  // namespace detail

inline nlohmann::json model_to_json(const Model& m) {
  using nlohmann::json;
  json j;
  j["format"] = kModelFormat;
  j["version"] = kModelVersion;
  j["objective"] = m.objective;
  j["converged"] = m.converged;
  json bms = json::array();
  for (std::size_t b = 0; b < m.cohort.num_biomarkers(); ++b) {
    const auto& s = m.cohort.biomarkers[b];
    json e{{"name", s.name},
           {"eta", s.eta},
           {"length_scale", s.length_scale},
           {"noise_sd", s.noise_sd},
           {"lambda", s.lambda}};
    e["derivative_grid"] = b < m.cohort.derivative_grid.size() ? m.cohort.derivative_grid[b] : std::vector<double>{};
    json sites = json::array();
    if (b < m.sites.size())
      for (const auto& site : m.sites[b]) sites.push_back({site.tau, site.nu});
    e["sites"] = sites;
    if (b < m.transforms.size()) {
      const auto& q = m.transforms[b];
      e["quantile"] = {{"direction", detail::direction_name(q.direction())}, {"knots", q.knots()}, {"scores", q.scores()}};
    }
    bms.push_back(e);
  }
  j["biomarkers"] = bms;
  json inds = json::array();
  for (const auto& ind : m.cohort.individuals) {
    json e{{"id", ind.id}, {"time_shift", ind.time_shift}};
    e["random_effect"] = {{"type", to_string(ind.random_effect.type)},
                          {"sigma", ind.random_effect.sigma},
                          {"t_bar", ind.random_effect.t_bar}};
    json obs = json::array();
    for (const auto& o : ind.observations) obs.push_back({o.biomarker, o.time, o.value});
    e["observations"] = obs;
    inds.push_back(e);
  }
  j["individuals"] = inds;
  return j;
}

inline Model model_from_json(const nlohmann::json& j) {
  try {
    if (j.at("format").get<std::string>() != kModelFormat) throw InputError("not a gpdpm model file");
    const int version = j.at("version").get<int>();
    if (version != kModelVersion) throw InputError("unsupported model version " + std::to_string(version));
    Model m;
    m.objective = j.value("objective", 0.0);
    m.converged = j.value("converged", false);
    bool have_transforms = true;
    for (const auto& e : j.at("biomarkers")) {
      BiomarkerSpec s;
      s.name = e.at("name").get<std::string>();
      s.eta = e.at("eta").get<double>();
      s.length_scale = e.at("length_scale").get<double>();
      s.noise_sd = e.at("noise_sd").get<double>();
      s.lambda = e.at("lambda").get<double>();
      m.cohort.biomarkers.push_back(s);
      m.cohort.derivative_grid.push_back(e.at("derivative_grid").get<std::vector<double>>());
      std::vector<Site> sites;
      for (const auto& p : e.at("sites")) sites.push_back({p.at(0).get<double>(), p.at(1).get<double>()});
      m.sites.push_back(std::move(sites));
      if (e.contains("quantile")) {
        const auto& q = e.at("quantile");
        m.transforms.push_back(QuantileTransform::from_knots(detail::direction_from_name(q.at("direction")),
                                                             q.at("knots").get<std::vector<double>>(),
                                                             q.at("scores").get<std::vector<double>>()));
      } else {
        have_transforms = false;
      }
    }
    if (!have_transforms) m.transforms.clear();
    for (const auto& e : j.at("individuals")) {
      IndividualRecord ind;
      ind.id = e.at("id").get<std::string>();
      ind.time_shift = e.at("time_shift").get<double>();
      const auto& re = e.at("random_effect");
      ind.random_effect.type = random_effect_type_from_string(re.at("type").get<std::string>());
      ind.random_effect.sigma = re.at("sigma").get<std::vector<double>>();
      ind.random_effect.t_bar = re.at("t_bar").get<double>();
      for (const auto& o : e.at("observations"))
        ind.observations.push_back({o.at(0).get<std::size_t>(), o.at(1).get<double>(), o.at(2).get<double>()});
      m.cohort.individuals.push_back(std::move(ind));
    }
    m.cohort.validate();
    for (std::size_t b = 0; b < m.sites.size(); ++b)
      if (m.sites[b].size() != m.cohort.derivative_grid[b].size())
        throw InputError("site count does not match the derivative grid of '" + m.cohort.biomarkers[b].name + "'");
    return m;
  } catch (const nlohmann::json::exception& e) {
    throw InputError(std::string("malformed model file: ") + e.what());
  }
}

inline void save_model(const std::string& path, const Model& m) {
  std::ofstream out(path);
  if (!out) throw InputError("cannot write '" + path + "'");
  out << model_to_json(m).dump(1) << '\n';
}

inline Model load_model(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw InputError("cannot open model file '" + path + "'");
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& e) {
    throw InputError("model file '" + path + "' is not valid JSON: " + e.what());
  }
  return model_from_json(j);
}

}  // namespace gpdpm

#endif
