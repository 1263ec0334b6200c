#include <cstdio>
#include <filesystem>
#include <fstream>
#include <random>
#include <sstream>

#include <gtest/gtest.h>

#include "gpdpm/config.hpp"
#include "gpdpm/fit.hpp"
#include "gpdpm/model_io.hpp"
#include "gpdpm/synth.hpp"

using namespace gpdpm;

namespace {

Model fitted_model() {
  SynthConfig sc;
  sc.N = 12;
  sc.Nb = 3;
  sc.seed = 61;
  Cohort c = gen_sigmoid_cohort(sc).cohort;
  // raw values on another scale, scored on the way in
  for (auto& ind : c.individuals)
    for (auto& o : ind.observations) o.value = 100.0 - 40.0 * o.value;
  const auto transforms = score_cohort(c, std::vector<Direction>(3, Direction::DecreasingAbnormal));
  const auto r = fit(c);
  return Model{r.cohort, r.ep.sites(), transforms, r.objective, r.converged};
}

std::string temp_path(const std::string& name) {
  return (std::filesystem::temp_directory_path() / ("gpdpm_test_" + name)).string();
}

}  // namespace

TEST(ModelIo, PredictionsSurviveRoundTrip) {
  const Model m = fitted_model();
  const std::string path = temp_path("model.json");
  save_model(path, m);
  const Model back = load_model(path);
  std::remove(path.c_str());

  const Predictor a = m.predictor();
  const Predictor b = back.predictor();
  std::mt19937_64 rng(3);
  std::uniform_real_distribution<double> u(-6.0, 6.0);
  for (int k = 0; k < 50; ++k) {
    const double t = u(rng);
    for (std::size_t bm = 0; bm < a.num_biomarkers(); ++bm) {
      const auto pa = predict_curve(a, bm, t);
      const auto pb = predict_curve(b, bm, t);
      EXPECT_NEAR(pa.mean, pb.mean, 1e-12);
      EXPECT_NEAR(pa.variance, pb.variance, 1e-12);
    }
  }
  ASSERT_EQ(back.transforms.size(), 3u);
  for (double raw : {55.0, 70.5, 99.0, 10.0}) EXPECT_EQ(back.transforms[1](raw), m.transforms[1](raw));
  EXPECT_EQ(back.objective, m.objective);
}

TEST(ModelIo, SerializationIsStable) {
  const Model m = fitted_model();
  const auto once = model_to_json(m).dump();
  const auto twice = model_to_json(model_from_json(nlohmann::json::parse(once))).dump();
  EXPECT_EQ(once, twice);
}

TEST(ModelIo, RejectsForeignOrBrokenFiles) {
  const Model m = fitted_model();
  auto j = model_to_json(m);
  auto wrong = j;
  wrong["format"] = "something-else";
  EXPECT_THROW(model_from_json(wrong), InputError);
  wrong = j;
  wrong["version"] = 99;
  EXPECT_THROW(model_from_json(wrong), InputError);
  wrong = j;
  wrong["biomarkers"][0].erase("eta");
  EXPECT_THROW(model_from_json(wrong), InputError);
  wrong = j;
  wrong["biomarkers"][0]["sites"].erase(0);
  EXPECT_THROW(model_from_json(wrong), InputError);

  const std::string path = temp_path("broken.json");
  std::ofstream(path) << "{ not json";
  EXPECT_THROW(load_model(path), InputError);
  std::remove(path.c_str());
  EXPECT_THROW(load_model(temp_path("does-not-exist.json")), InputError);
}

TEST(Config, ParsesKeyValues) {
  std::istringstream in("# comment\n\nmax-outer = 5\n  seed=7  \nlambda = 1e-6\n");
  const auto e = parse_config(in);
  ASSERT_EQ(e.size(), 3u);
  EXPECT_EQ(e[0].first, "max-outer");
  EXPECT_EQ(e[0].second, "5");
  EXPECT_EQ(e[1].first, "seed");
  EXPECT_EQ(e[1].second, "7");
}

TEST(Config, ReportsLine) {
  std::istringstream in("seed=1\nnot a pair\n");
  try {
    parse_config(in, "run.cfg");
    FAIL();
  } catch (const InputError& e) {
    EXPECT_NE(std::string(e.what()).find("run.cfg:2"), std::string::npos);
  }
  std::istringstream empty_key("=3\n");
  EXPECT_THROW(parse_config(empty_key), InputError);
}
