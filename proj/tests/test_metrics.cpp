#include <doctest.h>

#include "graphmot/metrics.hpp"
#include "graphmot/train.hpp"
#include "helpers.hpp"

using namespace gmot;

namespace {

EvalBox box_at(double x, double y, int id, int cls = 0, double score = 1.0) {
  EvalBox b;
  b.id = id;
  b.box.center = {x, y, 0};
  b.box.size = {4, 2, 1.5};
  b.class_id = cls;
  b.score = score;
  return b;
}

// Scene with two GT objects over `frames` frames; detections are not used.
Scene two_object_scene(int frames) {
  Scene s;
  s.scene_id = "m";
  s.classes.names = {"car"};
  for (int f = 0; f < frames; ++f) {
    Frame fr;
    fr.index = f;
    fr.timestamp = 0.5 * f;
    s.frames.push_back(fr);
    for (int obj = 0; obj < 2; ++obj) {
      GtBox g;
      g.track_id = obj + 1;
      g.frame = f;
      g.box.center = {1.0 * f + 10.0 * obj, 0, 0};
      g.box.size = {4, 2, 1.5};
      g.class_id = 0;
      s.gt.push_back(g);
    }
  }
  finalize_scene(s);
  return s;
}

TrackOutputEntry pred(int id, double x, double y, double score = 1.0,
                      int cls = 0) {
  TrackOutputEntry t;
  t.id = id;
  t.box.center = {x, y, 0};
  t.box.size = {4, 2, 1.5};
  t.class_id = cls;
  t.score = score;
  return t;
}

// Perfect outputs for two_object_scene.
std::vector<TrackOutput> perfect_outputs(const Scene& s) {
  std::vector<TrackOutput> outs;
  for (const Frame& f : s.frames) {
    TrackOutput o;
    o.frame = f.index;
    for (const GtBox& g : s.gt)
      if (g.frame == f.index)
        o.tracks.push_back(pred(100 + g.track_id, g.box.center[0],
                                g.box.center[1], 0.9));
    outs.push_back(o);
  }
  return outs;
}

}  // namespace

TEST_CASE("match_frame: identical sets match perfectly") {
  std::vector<EvalBox> gt = {box_at(0, 0, 1), box_at(10, 0, 2)};
  std::vector<EvalBox> pr = {box_at(0, 0, 5), box_at(10, 0, 6)};
  auto m = match_frame(gt, pr);
  CHECK(m.size() == 2);
}

TEST_CASE("match_frame: the nearer prediction wins") {
  std::vector<EvalBox> gt = {box_at(0, 0, 1)};
  std::vector<EvalBox> pr = {box_at(1.5, 0, 5), box_at(1.0, 0, 6)};
  auto m = match_frame(gt, pr);
  REQUIRE(m.size() == 1);
  CHECK(pr[m[0].second].id == 6);
}

TEST_CASE("match_frame: class mismatches never match") {
  std::vector<EvalBox> gt = {box_at(0, 0, 1, 0)};
  std::vector<EvalBox> pr = {box_at(0, 0, 5, 1)};
  CHECK(match_frame(gt, pr).empty());
}

TEST_CASE("match_frame: matching count is bounded by both sides") {
  Rng rng(8);
  for (int trial = 0; trial < 50; ++trial) {
    std::vector<EvalBox> gt, pr;
    const int ng = rng.uniform_int(0, 6), np = rng.uniform_int(0, 6);
    for (int i = 0; i < ng; ++i)
      gt.push_back(box_at(rng.uniform(-10, 10), rng.uniform(-10, 10), i));
    for (int i = 0; i < np; ++i)
      pr.push_back(box_at(rng.uniform(-10, 10), rng.uniform(-10, 10), i));
    auto m = match_frame(gt, pr);
    CHECK(m.size() <= std::min(gt.size(), pr.size()));
  }
}

TEST_CASE("evaluate: a perfect tracker scores MOTA 1, IDS 0, FRAG 0") {
  Scene s = two_object_scene(4);
  auto outs = perfect_outputs(s);
  ClearCounts c = evaluate(s, outs);
  CHECK(c.mota() == 1.0);
  CHECK(c.ids == 0);
  CHECK(c.frag == 0);
  CHECK(c.fp == 0);
  CHECK(c.fn == 0);
}

TEST_CASE("evaluate: one mid-track id change counts one switch") {
  Scene s = two_object_scene(4);
  auto outs = perfect_outputs(s);
  // object 1 switches predicted id from 101 to 999 at frame 2
  for (int f = 2; f < 4; ++f)
    for (auto& t : outs[f].tracks)
      if (t.id == 101) t.id = 999;
  ClearCounts c = evaluate(s, outs);
  CHECK(c.ids == 1);
  CHECK(c.frag == 0);
}

TEST_CASE("evaluate: hand-counted micro scene, 1 FP and 1 FN over 6 GT") {
  Scene s = two_object_scene(3);  // 6 GT boxes
  auto outs = perfect_outputs(s);
  outs[1].tracks.erase(outs[1].tracks.begin());  // one FN
  outs[2].tracks.push_back(pred(500, 100, 100, 0.9));  // one FP
  ClearCounts c = evaluate(s, outs);
  CHECK(c.fn == 1);
  CHECK(c.fp == 1);
  CHECK(c.ids == 0);
  CHECK(c.mota() == doctest::Approx(1.0 - 2.0 / 6.0));
}

TEST_CASE("evaluate: fragmentation counts matched-unmatched-matched") {
  Scene s = two_object_scene(5);
  auto outs = perfect_outputs(s);
  // object 2 unmatched at frames 2 and 3 but matched before and after
  for (int f = 2; f <= 3; ++f)
    std::erase_if(outs[f].tracks, [](const TrackOutputEntry& t) {
      return t.id == 102;
    });
  ClearCounts c = evaluate(s, outs);
  CHECK(c.frag == 1);
  CHECK(c.ids == 0);
}

TEST_CASE("amota: perfect tracker reaches 1.0, empty output 0.0") {
  Scene s = two_object_scene(4);
  auto outs = perfect_outputs(s);
  std::vector<ScenePair> pairs = {{&s, &outs}};
  EvalReport rep = evaluate_report(pairs, s.classes);
  CHECK(rep.amota == doctest::Approx(1.0));
  std::vector<TrackOutput> empty_outs;
  for (const Frame& f : s.frames) empty_outs.push_back({f.index, {}});
  std::vector<ScenePair> empty_pairs = {{&s, &empty_outs}};
  EvalReport rep0 = evaluate_report(empty_pairs, s.classes);
  CHECK(rep0.amota == 0.0);
}

TEST_CASE("amota: hand-computed recall sweep") {
  // Two objects over two frames (P = 4). Track A covers object 1 at both
  // frames (score 0.9), track B covers object 2 at frame 0 only (0.5),
  // plus false tracks D (0.95, frame 0) and C (0.3, frame 1).
  Scene s;
  s.scene_id = "sweep";
  s.classes.names = {"car"};
  for (int f = 0; f < 2; ++f) {
    Frame fr;
    fr.index = f;
    fr.timestamp = 0.5 * f;
    s.frames.push_back(fr);
  }
  auto add_gt = [&](int tid, int f, double x) {
    GtBox g;
    g.track_id = tid;
    g.frame = f;
    g.box.center = {x, 0, 0};
    g.box.size = {4, 2, 1.5};
    g.class_id = 0;
    s.gt.push_back(g);
  };
  add_gt(1, 0, 0.0);
  add_gt(1, 1, 1.0);
  add_gt(2, 0, 10.0);
  add_gt(2, 1, 11.0);
  finalize_scene(s);
  std::vector<TrackOutput> outs(2);
  outs[0].frame = 0;
  outs[1].frame = 1;
  outs[0].tracks.push_back(pred(1, 0.1, 0, 0.9));    // A
  outs[1].tracks.push_back(pred(1, 1.1, 0, 0.9));    // A
  outs[0].tracks.push_back(pred(2, 10.1, 0, 0.5));   // B
  outs[0].tracks.push_back(pred(4, 60.0, 0, 0.95));  // D (false)
  outs[1].tracks.push_back(pred(3, 50.0, 0, 0.3));   // C (false)
  std::vector<ScenePair> pairs = {{&s, &outs}};
  // Hand sweep: targets up to 0.5 evaluate at tau=0.9 (TP=2 FP=1 FN=2,
  // r=0.5, MOTAR=0.5); targets up to 0.75 at tau=0.5 (TP=3 FP=1 FN=1,
  // r=0.75, MOTAR=2/3); higher targets unreachable.
  const double expected = (20 * 0.5 + 10 * (2.0 / 3.0)) / 40.0;
  double amota = amota_class(pairs, 0, 2.0, nullptr);
  CHECK(amota == doctest::Approx(expected).epsilon(1e-12));
}

TEST_CASE("metrics are invariant to a bijective relabeling of track ids") {
  TrainingSample warm = testutil::toy_sample(3, 3, 1);
  SimConfig sc = testutil::noisy_sim(5, 10, 17);
  Scene s = generate_scene(sc, "rel");
  NmpModel m = init_nmp_model(2, 2, 3, 3);
  TrackerConfig cfg;
  cfg.graph.window = 3;
  auto outs = run_scene(s, m, cfg, oracle_score_override(s));
  auto relabeled = outs;
  for (auto& o : relabeled)
    for (auto& t : o.tracks) t.id = 7919 - t.id;
  std::vector<ScenePair> a = {{&s, &outs}};
  std::vector<ScenePair> b = {{&s, &relabeled}};
  EvalReport ra = evaluate_report(a, s.classes);
  EvalReport rb = evaluate_report(b, s.classes);
  CHECK(ra.amota == doctest::Approx(rb.amota).epsilon(1e-12));
  CHECK(ra.clear.ids == rb.clear.ids);
  CHECK(ra.clear.frag == rb.clear.frag);
  CHECK(ra.mota() == doctest::Approx(rb.mota()).epsilon(1e-12));
}

TEST_CASE("adding a pure false-positive track never helps") {
  Scene s = two_object_scene(4);
  auto outs = perfect_outputs(s);
  auto polluted = outs;
  for (auto& o : polluted) o.tracks.push_back(pred(777, 500, 500, 0.99));
  std::vector<ScenePair> a = {{&s, &outs}};
  std::vector<ScenePair> b = {{&s, &polluted}};
  EvalReport ra = evaluate_report(a, s.classes);
  EvalReport rb = evaluate_report(b, s.classes);
  CHECK(rb.amota <= ra.amota + 1e-12);
  CHECK(rb.mota() <= ra.mota() + 1e-12);
}

TEST_CASE("IDS stays zero under constant predicted ids") {
  Scene s = two_object_scene(6);
  auto outs = perfect_outputs(s);
  // drop random frames of object 2; id constant when present
  std::erase_if(outs[2].tracks, [](const TrackOutputEntry& t) {
    return t.id == 102;
  });
  std::erase_if(outs[4].tracks, [](const TrackOutputEntry& t) {
    return t.id == 102;
  });
  ClearCounts c = evaluate(s, outs);
  CHECK(c.ids == 0);
  CHECK(c.frag == 2);
}

TEST_CASE("report table and json render") {
  Scene s = two_object_scene(3);
  auto outs = perfect_outputs(s);
  std::vector<ScenePair> pairs = {{&s, &outs}};
  EvalReport rep = evaluate_report(pairs, s.classes);
  json j = report_json(rep);
  CHECK(j.at("amota").get<double>() == doctest::Approx(1.0));
  std::string table = report_table(rep);
  CHECK(table.find("car") != std::string::npos);
  CHECK(table.find("ALL") != std::string::npos);
}
