#pragma once

#include <algorithm>
#include <string>
#include <unordered_map>
#include <vector>

#include "graphmot/core.hpp"
#include "graphmot/graph.hpp"
#include "graphmot/rng.hpp"

namespace gmot {

// Synthetic scene generator standing in for dataset plus detector: objects
// follow constant-velocity / constant-turn motion; a detector noise model
// produces detections, misses and false positives.
struct SimConfig {
  int n_objects_min = 6;
  int n_objects_max = 10;
  std::vector<std::string> class_names = {"car", "pedestrian"};
  std::vector<double> class_mix = {0.7, 0.3};
  std::vector<std::array<double, 2>> speed_range = {{3.0, 12.0}, {0.5, 2.0}};
  std::vector<std::array<double, 2>> turn_range = {{-0.25, 0.25}, {-0.8, 0.8}};
  double fov_extent = 100.0;  // objects and FPs spawn in [-fov/2, fov/2]^2
  double frame_period = 0.5;  // seconds (2 Hz keyframes)
  int n_frames = 20;

  // detector model
  double pos_sigma = 0.0;
  double size_sigma = 0.0;
  double yaw_sigma = 0.0;
  double vel_sigma = 0.0;
  double miss_prob = 0.0;
  double fp_rate = 0.0;  // expected false positives per frame (Poisson)
  double tp_score_a = 8.0, tp_score_b = 2.0;  // Beta parameters
  double fp_score_a = 2.0, fp_score_b = 5.0;

  // persistent clutter: static structures detected repeatedly with high
  // scores and meaningless velocity estimates (consistent false positives)
  int clutter_min = 0;
  int clutter_max = 0;
  double clutter_miss_prob = 0.2;
  double clutter_score_a = 6.0, clutter_score_b = 2.0;
  double clutter_vel_sigma = 2.0;

  // object lifecycle
  double birth_prob = 0.0;  // expected new objects per frame
  double death_prob = 0.0;  // per object per frame
  double process_accel_sigma = 0.0;  // speed random walk per sqrt(s)
  double process_turn_sigma = 0.0;

  uint64_t seed = 1;

  void validate() const {
    auto prob = [](double p) { return p >= 0.0 && p <= 1.0; };
    if (!prob(miss_prob) || !prob(death_prob))
      throw DataError("sim: probabilities must lie in [0, 1]");
    if (pos_sigma < 0 || size_sigma < 0 || yaw_sigma < 0 || vel_sigma < 0)
      throw DataError("sim: sigmas must be non-negative");
    if (!(frame_period > 0)) throw DataError("sim: frame period must be > 0");
    if (class_names.empty() || class_names.size() != class_mix.size() ||
        class_names.size() != speed_range.size() ||
        class_names.size() != turn_range.size())
      throw DataError("sim: class configuration arrays must align");
    if (n_objects_min < 0 || n_objects_max < n_objects_min)
      throw DataError("sim: invalid object count range");
  }
};

namespace simdetail {

struct SimObject {
  int track_id;
  int class_id;
  double x, y, heading, speed, turn;
  Vec3 size;
  bool alive = true;
};

inline Vec3 class_size(int class_id, const SimConfig& cfg, Rng& rng) {
  const std::string& n = cfg.class_names[class_id];
  std::string lower = n;
  std::transform(lower.begin(), lower.end(), lower.begin(), ::tolower);
  const bool ped = lower.find("ped") != std::string::npos ||
                   lower.find("person") != std::string::npos;
  if (ped)
    return {0.6 + 0.2 * rng.uniform(), 0.6 + 0.2 * rng.uniform(),
            1.6 + 0.4 * rng.uniform()};
  return {4.0 + 1.5 * rng.uniform(), 1.7 + 0.4 * rng.uniform(),
          1.4 + 0.6 * rng.uniform()};
}

inline SimObject spawn_object(int track_id, const SimConfig& cfg, Rng& rng) {
  SimObject o;
  o.track_id = track_id;
  o.class_id = static_cast<int>(rng.pick_weighted(cfg.class_mix));
  o.x = rng.uniform(-cfg.fov_extent / 2, cfg.fov_extent / 2);
  o.y = rng.uniform(-cfg.fov_extent / 2, cfg.fov_extent / 2);
  o.heading = rng.uniform(-kPi, kPi);
  const auto& sr = cfg.speed_range[o.class_id];
  o.speed = rng.uniform(sr[0], sr[1]);
  const auto& tr = cfg.turn_range[o.class_id];
  o.turn = rng.uniform(tr[0], tr[1]);
  o.size = class_size(o.class_id, cfg, rng);
  return o;
}

}  // namespace simdetail

inline Scene generate_scene(const SimConfig& cfg, const std::string& scene_id) {
  cfg.validate();
  Rng rng(mix_seed(cfg.seed, 0x7363656e65ULL));
  Scene scene;
  scene.scene_id = scene_id;
  scene.classes.names = cfg.class_names;

  std::vector<simdetail::SimObject> objects;
  int next_track_id = 0;
  const int n0 = rng.uniform_int(cfg.n_objects_min, cfg.n_objects_max);
  for (int i = 0; i < n0; ++i)
    objects.push_back(simdetail::spawn_object(next_track_id++, cfg, rng));

  struct Clutter {
    double x, y;
    Vec3 size;
    double yaw;
    int class_id;
  };
  std::vector<Clutter> clutter;
  const int nc = cfg.clutter_max > 0
                     ? rng.uniform_int(cfg.clutter_min, cfg.clutter_max)
                     : 0;
  for (int i = 0; i < nc; ++i) {
    Clutter c;
    c.x = rng.uniform(-cfg.fov_extent / 2, cfg.fov_extent / 2);
    c.y = rng.uniform(-cfg.fov_extent / 2, cfg.fov_extent / 2);
    c.class_id = static_cast<int>(rng.pick_weighted(cfg.class_mix));
    c.size = simdetail::class_size(c.class_id, cfg, rng);
    c.yaw = rng.uniform(-kPi, kPi);
    clutter.push_back(c);
  }

  const double dt = cfg.frame_period;
  for (int f = 0; f < cfg.n_frames; ++f) {
    Frame frame;
    frame.index = f;
    frame.timestamp = f * dt;
    frame.ego = {0, 0, 0};

    if (f > 0) {
      // Advance motion, then lifecycle.
      for (auto& o : objects) {
        if (!o.alive) continue;
        o.x += o.speed * std::cos(o.heading) * dt;
        o.y += o.speed * std::sin(o.heading) * dt;
        o.heading = normalize_angle(o.heading + o.turn * dt);
        if (cfg.process_accel_sigma > 0)
          o.speed = std::max(0.0, o.speed + rng.normal() *
                                                cfg.process_accel_sigma *
                                                std::sqrt(dt));
        if (cfg.process_turn_sigma > 0)
          o.turn += rng.normal() * cfg.process_turn_sigma * std::sqrt(dt);
      }
      for (auto& o : objects)
        if (o.alive && cfg.death_prob > 0 && rng.uniform() < cfg.death_prob)
          o.alive = false;
      if (cfg.birth_prob > 0) {
        const int births = rng.poisson(cfg.birth_prob);
        for (int b = 0; b < births; ++b)
          objects.push_back(simdetail::spawn_object(next_track_id++, cfg, rng));
      }
    }

    for (const auto& o : objects) {
      if (!o.alive) continue;
      GtBox g;
      g.track_id = o.track_id;
      g.frame = f;
      g.box.center = {o.x, o.y, 0.0};
      g.box.size = o.size;
      g.box.yaw = o.heading;
      g.class_id = o.class_id;
      scene.gt.push_back(g);

      if (cfg.miss_prob > 0 && rng.uniform() < cfg.miss_prob) continue;
      Detection d;
      d.box.center = {o.x + rng.normal() * cfg.pos_sigma,
                      o.y + rng.normal() * cfg.pos_sigma,
                      rng.normal() * cfg.pos_sigma};
      d.box.size = {std::max(0.1, o.size[0] + rng.normal() * cfg.size_sigma),
                    std::max(0.1, o.size[1] + rng.normal() * cfg.size_sigma),
                    std::max(0.1, o.size[2] + rng.normal() * cfg.size_sigma)};
      d.box.yaw = o.heading + rng.normal() * cfg.yaw_sigma;
      d.vx = o.speed * std::cos(o.heading) + rng.normal() * cfg.vel_sigma;
      d.vy = o.speed * std::sin(o.heading) + rng.normal() * cfg.vel_sigma;
      d.class_id = o.class_id;
      d.score = cfg.pos_sigma == 0 && cfg.miss_prob == 0 && cfg.fp_rate == 0
                    ? 1.0
                    : rng.beta(cfg.tp_score_a, cfg.tp_score_b);
      frame.detections.push_back(d);
    }

    for (const auto& c : clutter) {
      if (cfg.clutter_miss_prob > 0 && rng.uniform() < cfg.clutter_miss_prob)
        continue;
      Detection d;
      d.box.center = {c.x + rng.normal() * cfg.pos_sigma,
                      c.y + rng.normal() * cfg.pos_sigma,
                      rng.normal() * cfg.pos_sigma};
      d.box.size = {std::max(0.1, c.size[0] + rng.normal() * cfg.size_sigma),
                    std::max(0.1, c.size[1] + rng.normal() * cfg.size_sigma),
                    std::max(0.1, c.size[2] + rng.normal() * cfg.size_sigma)};
      d.box.yaw = c.yaw + rng.normal() * cfg.yaw_sigma;
      d.vx = rng.normal() * cfg.clutter_vel_sigma;
      d.vy = rng.normal() * cfg.clutter_vel_sigma;
      d.class_id = c.class_id;
      d.score = rng.beta(cfg.clutter_score_a, cfg.clutter_score_b);
      frame.detections.push_back(d);
    }

    const int fps = cfg.fp_rate > 0 ? rng.poisson(cfg.fp_rate) : 0;
    for (int k = 0; k < fps; ++k) {
      Detection d;
      d.box.center = {rng.uniform(-cfg.fov_extent / 2, cfg.fov_extent / 2),
                      rng.uniform(-cfg.fov_extent / 2, cfg.fov_extent / 2),
                      0.0};
      const int cls = static_cast<int>(rng.pick_weighted(cfg.class_mix));
      d.box.size = simdetail::class_size(cls, cfg, rng);
      d.box.yaw = rng.uniform(-kPi, kPi);
      d.vx = rng.normal() * 2.0;
      d.vy = rng.normal() * 2.0;
      d.class_id = cls;
      d.score = rng.beta(cfg.fp_score_a, cfg.fp_score_b);
      frame.detections.push_back(d);
    }

    scene.frames.push_back(std::move(frame));
  }
  finalize_scene(scene);
  return scene;
}

// Labels for a graph built over this scene's detections.
//   detection node: active iff matched to a GT object
//   detection edge: active iff both endpoints match the same GT object
//   track edge:     active iff the track's GT identity equals the
//                   detection's GT object
// `track_gt` maps track_id to GT identity (-1 for none, e.g. FP tracks).
inline GraphLabels label_graph(const TrackingGraph& g,
                               const std::unordered_map<long, int>& det_gt,
                               const std::unordered_map<int, int>& track_gt) {
  GraphLabels labels;
  labels.d.resize(g.dnodes.size(), 0);
  std::vector<int> node_gt(g.dnodes.size(), -1);
  for (size_t i = 0; i < g.dnodes.size(); ++i) {
    auto it = det_gt.find(g.dnodes[i].det.det_id);
    if (it != det_gt.end()) {
      node_gt[i] = it->second;
      labels.d[i] = 1;
    }
  }
  labels.dd.resize(g.dedges.size(), 0);
  for (size_t e = 0; e < g.dedges.size(); ++e) {
    const int a = node_gt[g.dedges[e].i];
    const int b = node_gt[g.dedges[e].j];
    labels.dd[e] = (a >= 0 && a == b) ? 1 : 0;
  }
  labels.td.resize(g.tedges.size(), 0);
  for (size_t e = 0; e < g.tedges.size(); ++e) {
    const int tid = g.tnodes[g.tedges[e].k].track_id;
    auto it = track_gt.find(tid);
    const int tgt = it == track_gt.end() ? -1 : it->second;
    labels.td[e] = (tgt >= 0 && tgt == node_gt[g.tedges[e].i]) ? 1 : 0;
  }
  return labels;
}

}  // namespace gmot
