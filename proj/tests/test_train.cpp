#include <doctest.h>

#include <set>

#include "graphmot/train.hpp"
#include "helpers.hpp"

using namespace gmot;
using testutil::clean_sim;
using testutil::noisy_sim;

namespace {

GraphConfig gcfg2() {
  GraphConfig cfg;
  cfg.v_max = {30.0, 4.0};
  return cfg;
}

bool graphs_equal(const TrackingGraph& a, const TrackingGraph& b) {
  if (a.dnodes.size() != b.dnodes.size()) return false;
  if (a.dedges.size() != b.dedges.size()) return false;
  if (a.tnodes.size() != b.tnodes.size()) return false;
  if (a.tedges.size() != b.tedges.size()) return false;
  return a.xd.a == b.xd.a && a.xt.a == b.xt.a && a.xdd.a == b.xdd.a &&
         a.xtd.a == b.xtd.a;
}

}  // namespace

TEST_CASE("stage-1 dataset: one sample per full window") {
  SimConfig sc = clean_sim(4, 10, 3);
  Scene scene = generate_scene(sc, "s1");
  auto est = estimate_params({scene});
  auto samples = build_stage1_dataset({scene}, est.params, gcfg2());
  CHECK(samples.size() == 8);  // anchors 3..10 of a 10-frame scene
  for (const auto& s : samples) CHECK(s.graph.num_frames() == 3);
}

TEST_CASE("stage-1 dataset rejects scenes without GT") {
  Scene scene;
  scene.scene_id = "nogt";
  scene.classes.names = {"car"};
  Frame f;
  f.index = 0;
  f.timestamp = 0;
  scene.frames.push_back(f);
  finalize_scene(scene);
  KalmanParams p = KalmanParams::defaults(1);
  CHECK_THROWS_AS(build_stage1_dataset({scene}, p, gcfg2()), DataError);
}

TEST_CASE("noiseless scenes: one active track edge per track per frame") {
  SimConfig sc = clean_sim(4, 8, 9);
  Scene scene = generate_scene(sc, "s");
  auto est = estimate_params({scene});
  auto samples = build_stage1_dataset({scene}, est.params, gcfg2());
  for (const auto& s : samples) {
    std::map<std::pair<int, int>, int> active_per_track_frame;
    for (size_t e = 0; e < s.graph.tedges.size(); ++e) {
      if (!s.labels.td[e]) continue;
      const auto& tn = s.graph.tnodes[s.graph.tedges[e].k];
      active_per_track_frame[{tn.track_id, tn.fpos}] += 1;
    }
    for (const auto& tn : s.graph.tnodes) {
      auto it = active_per_track_frame.find({tn.track_id, tn.fpos});
      REQUIRE(it != active_per_track_frame.end());
      CHECK(it->second == 1);
    }
  }
}

TEST_CASE("a scene of only false positives has all labels zero") {
  SimConfig sc = clean_sim(0, 6, 7);
  sc.n_objects_min = sc.n_objects_max = 0;
  sc.fp_rate = 3.0;
  Scene scene = generate_scene(sc, "fp");
  // one GT far outside so the dataset builder accepts the scene
  GtBox g;
  g.track_id = 0;
  g.frame = 0;
  g.box.center = {5000, 5000, 0};
  g.box.size = {4, 2, 1.5};
  g.class_id = 0;
  scene.gt.push_back(g);
  finalize_scene(scene);
  auto samples = build_stage1_dataset({scene}, KalmanParams::defaults(2), gcfg2());
  for (const auto& s : samples) {
    for (char v : s.labels.d) CHECK(v == 0);
    for (char v : s.labels.dd) CHECK(v == 0);
    for (char v : s.labels.td) CHECK(v == 0);
  }
}

TEST_CASE("augment: identity configuration returns the sample unchanged") {
  TrainingSample s = testutil::toy_sample(4, 4, 21, true);
  AugmentConfig cfg;
  cfg.det_drop_prob = 0;
  cfg.pos_sigma = 0;
  cfg.term_prob = 0;
  cfg.track_drop_prob = 0;
  Rng rng(5);
  TrainingSample out = augment(s, cfg, 2, gcfg2(), rng);
  CHECK(graphs_equal(s.graph, out.graph));
  CHECK(s.labels.d == out.labels.d);
  CHECK(s.labels.dd == out.labels.dd);
  CHECK(s.labels.td == out.labels.td);
}

TEST_CASE("augment: dropping every track keeps detections active") {
  TrainingSample s = testutil::toy_sample(3, 4, 23);
  REQUIRE(!s.graph.tnodes.empty());
  AugmentConfig cfg;
  cfg.det_drop_prob = 0;
  cfg.pos_sigma = 0;
  cfg.term_prob = 0;
  cfg.track_drop_prob = 1.0;  // drop all tracks
  Rng rng(5);
  TrainingSample out = augment(s, cfg, 2, gcfg2(), rng);
  CHECK(out.graph.tnodes.empty());
  CHECK(out.graph.tedges.empty());
  CHECK(out.graph.dnodes.size() == s.graph.dnodes.size());
  // detection labels unchanged (still true positives)
  CHECK(out.labels.d == s.labels.d);
}

TEST_CASE("augment: position noise changes features but not the label sets") {
  TrainingSample s = testutil::toy_sample(4, 4, 25, true);
  AugmentConfig cfg;
  cfg.det_drop_prob = 0;
  cfg.pos_sigma = 0.3;
  cfg.term_prob = 0;
  cfg.track_drop_prob = 0;
  Rng rng(5);
  TrainingSample out = augment(s, cfg, 2, gcfg2(), rng);
  // identical structure
  REQUIRE(out.graph.dnodes.size() == s.graph.dnodes.size());
  REQUIRE(out.graph.dedges.size() == s.graph.dedges.size());
  REQUIRE(out.graph.tedges.size() == s.graph.tedges.size());
  CHECK(out.labels.d == s.labels.d);
  CHECK(out.labels.dd == s.labels.dd);
  CHECK(out.labels.td == s.labels.td);
  CHECK(out.graph.xd.a != s.graph.xd.a);
}

TEST_CASE("augment: termination simulation removes the track's detections") {
  TrainingSample s = testutil::toy_sample(3, 4, 27);
  AugmentConfig cfg;
  cfg.det_drop_prob = 0;
  cfg.pos_sigma = 0;
  cfg.term_prob = 1.0;  // every track's detections removed
  cfg.track_drop_prob = 0;
  Rng rng(5);
  TrainingSample out = augment(s, cfg, 2, gcfg2(), rng);
  // all remaining detections are unmatched (labels 0) since TPs left
  for (char v : out.labels.d) CHECK(v == 0);
  // track nodes survive
  CHECK(out.graph.tnodes.size() == s.graph.tnodes.size());
}

TEST_CASE("augment never leaves dangling edges") {
  for (uint64_t seed = 0; seed < 10; ++seed) {
    TrainingSample s = testutil::toy_sample(4, 4, mix_seed(500, seed), true);
    AugmentConfig cfg;  // defaults exercise every augmentation
    Rng rng(seed);
    TrainingSample out = augment(s, cfg, 2, gcfg2(), rng);
    for (const auto& e : out.graph.dedges) {
      CHECK(e.i < static_cast<int>(out.graph.dnodes.size()));
      CHECK(e.j < static_cast<int>(out.graph.dnodes.size()));
    }
    for (const auto& e : out.graph.tedges) {
      CHECK(e.k < static_cast<int>(out.graph.tnodes.size()));
      CHECK(e.i < static_cast<int>(out.graph.dnodes.size()));
    }
    CHECK(out.labels.d.size() == out.graph.dnodes.size());
    CHECK(out.labels.dd.size() == out.graph.dedges.size());
    CHECK(out.labels.td.size() == out.graph.tedges.size());
  }
}

TEST_CASE("training: loss decreases on a repeated easy sample") {
  TrainingSample s = testutil::toy_sample(3, 3, 31, true);
  std::vector<TrainingSample> data(8, s);
  NmpModel m = init_nmp_model(2, 2, 3, 41);
  fit_feature_stats(m, data);
  TrainHyper h;
  h.epochs = 25;  // 25 steps of batch 8
  h.batch_size = 8;
  h.lr = 1e-3;
  h.augment_enabled = false;
  auto curve = train_epochs(data, m, h, gcfg2());
  REQUIRE(curve.size() == 25);
  CHECK(curve.back().loss < 0.5 * curve.front().loss);
  for (const auto& p : curve) CHECK(std::isfinite(p.loss));
}

TEST_CASE("training: zero learning rate and decay change nothing") {
  TrainingSample s = testutil::toy_sample(3, 3, 33, true);
  std::vector<TrainingSample> data(4, s);
  NmpModel m = init_nmp_model(2, 1, 3, 43);
  fit_feature_stats(m, data);
  NmpModel before = m;
  TrainHyper h;
  h.epochs = 1;
  h.batch_size = 4;
  h.lr = 0.0;
  h.weight_decay = 0.0;
  h.augment_enabled = false;
  train_epochs(data, m, h, gcfg2());
  bool equal = true;
  m.for_each_net([&](const char* name, DenseNet& net) {
    std::map<std::string, const DenseNet*> ref;
    before.for_each_net([&](const char* n2, const DenseNet& net2) {
      ref[n2] = &net2;
    });
    for (size_t l = 0; l < net.layers.size(); ++l)
      if (net.layers[l].w.a != ref.at(name)->layers[l].w.a) equal = false;
  });
  CHECK(equal);
}

TEST_CASE("training is deterministic given the seed") {
  TrainingSample s = testutil::toy_sample(3, 3, 35, true);
  std::vector<TrainingSample> data(6, s);
  auto run_once = [&]() {
    NmpModel m = init_nmp_model(2, 1, 3, 47);
    fit_feature_stats(m, data);
    TrainHyper h;
    h.epochs = 2;
    h.batch_size = 3;
    h.seed = 77;
    auto curve = train_epochs(data, m, h, gcfg2());
    return std::make_pair(m.cls_d.layers[0].w.a, curve.back().loss);
  };
  auto a = run_once();
  auto b = run_once();
  CHECK(a.first == b.first);
  CHECK(a.second == b.second);
}

TEST_CASE("batch loss is invariant to within-batch sample order") {
  TrainingSample s1 = testutil::toy_sample(3, 3, 37, true);
  TrainingSample s2 = testutil::toy_sample(4, 3, 39, true);
  NmpModel m = init_nmp_model(2, 1, 3, 53);
  fit_feature_stats(m, {s1, s2});
  ModelGrads g1, g2;
  g1.init_like(m);
  g2.init_like(m);
  const double la =
      nmp_loss_grad(s1.graph, s1.labels, m, 1.0, g1).loss +
      nmp_loss_grad(s2.graph, s2.labels, m, 1.0, g1).loss;
  const double lb =
      nmp_loss_grad(s2.graph, s2.labels, m, 1.0, g2).loss +
      nmp_loss_grad(s1.graph, s1.labels, m, 1.0, g2).loss;
  CHECK(la == doctest::Approx(lb).epsilon(1e-12));
  for (size_t n = 0; n < g1.nets.size(); ++n)
    for (size_t l = 0; l < g1.nets[n].dw.size(); ++l)
      for (size_t i = 0; i < g1.nets[n].dw[l].a.size(); ++i)
        CHECK(g1.nets[n].dw[l].a[i] ==
              doctest::Approx(g2.nets[n].dw[l].a[i]).epsilon(1e-9));
}

TEST_CASE("near-zero scores on all-negative labels give near-zero loss") {
  TrainingSample s = testutil::toy_sample(3, 3, 41, true);
  GraphLabels zeros = s.labels;
  std::fill(zeros.d.begin(), zeros.d.end(), 0);
  std::fill(zeros.dd.begin(), zeros.dd.end(), 0);
  std::fill(zeros.td.begin(), zeros.td.end(), 0);
  NmpModel m = init_nmp_model(2, 1, 3, 59);
  // Push every classifier to emit a probability near zero.
  auto bias_down = [](DenseNet& net) {
    for (double& b : net.layers.back().b) b = -20.0;
    net.layers.back().w.zero();
  };
  bias_down(m.cls_d);
  bias_down(m.cls_dd);
  bias_down(m.cls_td);
  const double loss = nmp_loss(s.graph, zeros, m, 1.0);
  const long elements = static_cast<long>(zeros.d.size() + zeros.dd.size() +
                                          zeros.td.size());
  CHECK(loss < 1e-3 * elements);
}

TEST_CASE("stage-2 dataset: same anchor count as stage 1") {
  SimConfig sc = noisy_sim(4, 8, 61);
  Scene scene = generate_scene(sc, "s2");
  auto est = estimate_params({scene});
  GraphConfig g = gcfg2();
  auto stage1 = build_stage1_dataset({scene}, est.params, g);
  NmpModel m = init_nmp_model(2, 1, 3, 61);
  m.kalman = est.params;
  TrackerConfig tc;
  tc.graph = g;
  auto stage2 = build_stage2_dataset({scene}, m, tc);
  CHECK(stage1.size() == stage2.size());
  for (const auto& s : stage2) CHECK(s.src.stage == 2);
}

TEST_CASE("stage-2 with an oracle model reproduces stage-1 labels") {
  SimConfig sc = clean_sim(4, 8, 63);
  Scene scene = generate_scene(sc, "fixp");
  auto est = estimate_params({scene});
  GraphConfig g = gcfg2();
  auto stage1 = build_stage1_dataset({scene}, est.params, g);
  NmpModel m = init_nmp_model(2, 1, 3, 67);
  m.kalman = est.params;
  TrackerConfig tc;
  tc.graph = g;
  auto stage2 = build_stage2_dataset(
      {scene}, m, tc, [](const Scene& s) { return oracle_score_override(s); });
  REQUIRE(stage1.size() == stage2.size());
  for (size_t i = 0; i < stage1.size(); ++i) {
    // detection-side labels coincide exactly
    CHECK(stage1[i].labels.d == stage2[i].labels.d);
    CHECK(stage1[i].labels.dd == stage2[i].labels.dd);
    // track-edge labels coincide as (gt identity, det, frame) sets
    auto td_set = [](const TrainingSample& s) {
      auto tgm = track_gt_map(s.src);
      std::set<std::tuple<int, long, int>> out;
      for (size_t e = 0; e < s.graph.tedges.size(); ++e) {
        if (!s.labels.td[e]) continue;
        const auto& tn = s.graph.tnodes[s.graph.tedges[e].k];
        const auto& dn = s.graph.dnodes[s.graph.tedges[e].i];
        out.insert({tgm.at(tn.track_id), dn.det.det_id, tn.fpos});
      }
      return out;
    };
    CHECK(td_set(stage1[i]) == td_set(stage2[i]));
  }
}

TEST_CASE("stage-2: tracks without GT identity label all edges zero") {
  SimConfig sc = noisy_sim(3, 8, 65);
  sc.fp_rate = 4.0;  // encourage FP tracks
  Scene scene = generate_scene(sc, "fptrack");
  auto est = estimate_params({scene});
  NmpModel m = init_nmp_model(2, 1, 3, 71);
  m.kalman = est.params;
  TrackerConfig tc;
  tc.graph = gcfg2();
  auto stage2 = build_stage2_dataset({scene}, m, tc);
  for (const auto& s : stage2) {
    auto tgm = track_gt_map(s.src);
    for (size_t e = 0; e < s.graph.tedges.size(); ++e) {
      const int tid = s.graph.tnodes[s.graph.tedges[e].k].track_id;
      if (tgm.at(tid) == -1) CHECK(s.labels.td[e] == 0);
    }
  }
}

TEST_CASE("dataset cache round trip") {
  SimConfig sc = noisy_sim(3, 6, 67);
  Scene scene = generate_scene(sc, "cache");
  auto est = estimate_params({scene});
  GraphConfig g = gcfg2();
  auto samples = build_stage1_dataset({scene}, est.params, g);
  const auto dir = std::filesystem::temp_directory_path() / "graphmot_tests" /
                   "dataset";
  std::filesystem::remove_all(dir);
  save_dataset(samples, dir.string(), 2, {"car", "pedestrian"}, g);
  LoadedDataset loaded = load_dataset(dir.string());
  CHECK(loaded.C == 2);
  REQUIRE(loaded.samples.size() == samples.size());
  for (size_t i = 0; i < samples.size(); ++i) {
    CHECK(graphs_equal(samples[i].graph, loaded.samples[i].graph));
    CHECK(samples[i].labels.d == loaded.samples[i].labels.d);
    CHECK(samples[i].labels.dd == loaded.samples[i].labels.dd);
    CHECK(samples[i].labels.td == loaded.samples[i].labels.td);
  }
}

TEST_CASE("two-stage pipeline produces two models deterministically") {
  std::vector<Scene> scenes;
  for (uint64_t i = 0; i < 2; ++i) {
    SimConfig sc = noisy_sim(3, 6, mix_seed(600, i));
    scenes.push_back(generate_scene(sc, "p" + std::to_string(i)));
  }
  PipelineConfig cfg;
  cfg.L = 1;
  cfg.hyper.epochs = 1;
  cfg.hyper.batch_size = 4;
  cfg.seed = 13;
  PipelineResult a = two_stage_pipeline(scenes, cfg);
  PipelineResult b = two_stage_pipeline(scenes, cfg);
  CHECK(a.stage1.cls_d.layers[0].w.a == b.stage1.cls_d.layers[0].w.a);
  CHECK(a.stage2.cls_d.layers[0].w.a == b.stage2.cls_d.layers[0].w.a);
  CHECK(a.curve1.back().loss == b.curve1.back().loss);
  CHECK(a.curve2.back().loss == b.curve2.back().loss);
}
