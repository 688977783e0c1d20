#pragma once

#include <string>
#include <vector>

#include "graphmot/sim.hpp"
#include "graphmot/train.hpp"

namespace testutil {

using namespace gmot;

inline SimConfig clean_sim(int objects, int frames, uint64_t seed) {
  SimConfig cfg;
  cfg.n_objects_min = cfg.n_objects_max = objects;
  cfg.n_frames = frames;
  cfg.fov_extent = 120.0;
  cfg.seed = seed;
  return cfg;
}

inline SimConfig noisy_sim(int objects, int frames, uint64_t seed) {
  SimConfig cfg = clean_sim(objects, frames, seed);
  cfg.pos_sigma = 0.3;
  cfg.size_sigma = 0.05;
  cfg.yaw_sigma = 0.05;
  cfg.vel_sigma = 0.2;
  cfg.miss_prob = 0.1;
  cfg.fp_rate = 2.0;
  return cfg;
}

// A stage-1 training sample over the last window of a small synthetic scene.
inline TrainingSample toy_sample(int objects, int frames, uint64_t seed,
                                 bool noisy = false) {
  SimConfig sc = noisy ? noisy_sim(objects, frames, seed)
                       : clean_sim(objects, frames, seed);
  Scene scene = generate_scene(sc, "toy");
  GraphConfig gcfg;
  gcfg.v_max = GraphConfig::default_v_max(scene.classes);
  auto est = estimate_params({scene});
  auto samples = build_stage1_dataset({scene}, est.params, gcfg);
  return samples.back();
}

}  // namespace testutil
