#include <doctest.h>

#include "graphmot/bench.hpp"
#include "helpers.hpp"

using namespace gmot;

TEST_CASE("bench: stage times are non-negative and sum near the total") {
  SimConfig sc = testutil::noisy_sim(5, 10, 5);
  Scene s = generate_scene(sc, "bench");
  NmpModel m = init_nmp_model(2, 2, 3, 3);
  TrackerConfig cfg;
  cfg.graph.window = 3;
  LatencyReport rep = bench_scene(s, m, cfg, 1, 3);
  REQUIRE(rep.samples.size() == 7);  // 10 frames minus 3 warmup
  for (const StageTimes& st : rep.samples) {
    CHECK(st.graph_ms >= 0);
    CHECK(st.nmp_ms >= 0);
    CHECK(st.post_ms >= 0);
    const double sum = st.graph_ms + st.nmp_ms + st.post_ms;
    CHECK(sum <= st.total_ms * 1.05 + 0.1);
    CHECK(st.total_ms + 0.1 >= sum);
  }
  CHECK(rep.total.mean >= rep.graph.mean);
}

TEST_CASE("bench: fps is 1000 over the mean total") {
  SimConfig sc = testutil::noisy_sim(4, 8, 7);
  Scene s = generate_scene(sc, "fps");
  NmpModel m = init_nmp_model(2, 1, 3, 3);
  TrackerConfig cfg;
  LatencyReport rep = bench_scene(s, m, cfg, 1, 3);
  CHECK(rep.fps == doctest::Approx(1000.0 / rep.total.mean));
}

TEST_CASE("bench: more detections cost more graph time") {
  NmpModel m = init_nmp_model(2, 1, 3, 3);
  TrackerConfig cfg;
  std::vector<double> medians;
  for (int objects : {8, 40}) {
    std::vector<double> med_samples;
    for (uint64_t seed = 0; seed < 10; ++seed) {
      SimConfig sc = testutil::clean_sim(objects, 8, mix_seed(80, seed));
      Scene s = generate_scene(sc, "mono");
      LatencyReport rep = bench_scene(s, m, cfg, 1, 2);
      med_samples.push_back(rep.graph.median);
    }
    std::sort(med_samples.begin(), med_samples.end());
    medians.push_back(med_samples[med_samples.size() / 2]);
  }
  CHECK(medians[1] > medians[0]);
}

TEST_CASE("bench report serialization") {
  SimConfig sc = testutil::noisy_sim(3, 6, 9);
  Scene s = generate_scene(sc, "ser");
  NmpModel m = init_nmp_model(2, 1, 3, 3);
  TrackerConfig cfg;
  LatencyReport rep = bench_scene(s, m, cfg, 1, 2);
  json j = bench_json(rep);
  CHECK(j.contains("graph_generation"));
  CHECK(j.contains("nmp_classification"));
  CHECK(j.contains("post_processing"));
  CHECK(j.at("fps").get<double>() > 0);
  const auto dir = std::filesystem::temp_directory_path() / "graphmot_tests";
  std::filesystem::create_directories(dir);
  bench_csv(rep, (dir / "bench.csv").string());
  std::ifstream is(dir / "bench.csv");
  std::string header;
  std::getline(is, header);
  CHECK(header == "frame,graph_ms,nmp_ms,post_ms,total_ms");
}
