#pragma once

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <map>
#include <numeric>
#include <string>
#include <unordered_map>
#include <vector>

#include "graphmot/kalman.hpp"
#include "graphmot/nmp.hpp"
#include "graphmot/sim.hpp"
#include "graphmot/tracker.hpp"

namespace gmot {

// Everything needed to (re)build one training graph: the window frames, the
// track states visible in the window, and the GT correspondences.
struct TrackWindowSample {
  int track_id = 0;
  int class_id = 0;
  int gt_id = -1;  // -1: no GT identity (false-positive track)
  std::map<int, TrackNodeState> states;
};

struct SampleSource {
  std::string scene_id;
  int anchor = 0;  // newest frame index of the window
  int stage = 1;
  std::vector<Frame> frames;
  std::vector<TrackWindowSample> tracks;
  std::unordered_map<long, int> det_gt;  // det_id -> GT track id
};

struct TrainingSample {
  SampleSource src;
  TrackingGraph graph;
  GraphLabels labels;
};

inline std::unordered_map<int, int> track_gt_map(const SampleSource& src) {
  std::unordered_map<int, int> m;
  for (const TrackWindowSample& t : src.tracks) m[t.track_id] = t.gt_id;
  return m;
}

inline TrainingSample build_sample(SampleSource src, int num_classes,
                                   const GraphConfig& cfg) {
  TrainingSample s;
  std::vector<TrackWindowInput> tracks;
  for (const TrackWindowSample& t : src.tracks)
    tracks.push_back({t.track_id, t.class_id, t.states});
  s.graph = build_graph(src.frames, tracks, num_classes, cfg);
  s.labels = label_graph(s.graph, src.det_gt, track_gt_map(src));
  s.src = std::move(src);
  return s;
}

// Offline (stage 1) data: GT tracks filtered through the Kalman model over
// their matched detections, one sample per anchor frame with a full window.
inline std::vector<TrainingSample> build_stage1_dataset(
    const std::vector<Scene>& scenes, const KalmanParams& params,
    const GraphConfig& cfg) {
  std::vector<TrainingSample> samples;
  const int T = cfg.window;
  for (const Scene& scene : scenes) {
    if (!scene.has_gt())
      throw DataError("stage1 dataset: scene '" + scene.scene_id +
                      "' has no ground truth");
    const int C = scene.classes.count();
    auto det_gt = gt_matching(scene);

    // Matched detections per GT track per frame.
    std::map<int, std::map<int, Detection>> track_dets;
    for (const Frame& f : scene.frames)
      for (const Detection& d : f.detections) {
        auto it = det_gt.find(d.det_id);
        if (it != det_gt.end()) track_dets[it->second][f.index] = d;
      }
    std::map<int, int> gt_last_frame;
    for (const GtBox& g : scene.gt)
      gt_last_frame[g.track_id] =
          std::max(gt_last_frame.count(g.track_id) ? gt_last_frame[g.track_id]
                                                   : g.frame,
                   g.frame);

    // Sequential filter run per track; states per frame while alive.
    std::map<int, std::map<int, TrackNodeState>> track_states;
    std::map<int, int> track_class;
    for (const auto& [tid, dets] : track_dets) {
      const int first = dets.begin()->first;
      const int last = gt_last_frame[tid];
      KalmanState s = init_track_state(dets.begin()->second, params);
      track_class[tid] = s.class_id;
      double prev_time = scene.find_frame(first)->timestamp;
      for (const Frame& f : scene.frames) {
        if (f.index < first || f.index > last) continue;
        if (f.index > first) {
          s = kalman_predict(s, f.timestamp - prev_time, params);
          auto it = dets.find(f.index);
          if (it != dets.end()) s = kalman_update(s, it->second, params);
        }
        prev_time = f.timestamp;
        track_states[tid][f.index] = track_node_state(s);
      }
    }

    for (size_t ai = T - 1; ai < scene.frames.size(); ++ai) {
      SampleSource src;
      src.scene_id = scene.scene_id;
      src.anchor = scene.frames[ai].index;
      src.stage = 1;
      src.frames.assign(scene.frames.begin() + (ai - T + 1),
                        scene.frames.begin() + ai + 1);
      src.det_gt = det_gt;
      for (const auto& [tid, states] : track_states) {
        TrackWindowSample tw;
        tw.track_id = tid;
        tw.class_id = track_class[tid];
        tw.gt_id = tid;
        for (const Frame& f : src.frames) {
          auto it = states.find(f.index);
          if (it != states.end()) tw.states[f.index] = it->second;
        }
        if (!tw.states.empty()) src.tracks.push_back(std::move(tw));
      }
      samples.push_back(build_sample(std::move(src), C, cfg));
    }
  }
  return samples;
}

// The four augmentations of the training approach, applied in order:
//   1. random detection drops, 2. position noise, 3. removal of all
//   detections assigned to randomly drawn tracks (termination), 4. dropping
//   whole tracks while keeping their detections (initialization).
// Drops change the structure; position noise changes features only, so the
// edge set is rebuilt from the pre-noise positions.
struct AugmentConfig {
  double det_drop_prob = 0.1;
  double pos_sigma = 0.3;
  double term_prob = 0.05;
  double track_drop_prob = 0.1;

  bool identity() const {
    return det_drop_prob == 0 && pos_sigma == 0 && term_prob == 0 &&
           track_drop_prob == 0;
  }
};

inline TrainingSample augment(const TrainingSample& sample,
                              const AugmentConfig& cfg, int num_classes,
                              const GraphConfig& gcfg, Rng& rng) {
  if (cfg.identity()) return sample;
  SampleSource src = sample.src;

  // 1. detection drops (canonical frame, det_id order).
  std::vector<char> keep;
  for (Frame& f : src.frames)
    for ([[maybe_unused]] const Detection& d : f.detections)
      keep.push_back(rng.uniform() >= cfg.det_drop_prob);
  // 2. position noise offsets per surviving detection.
  std::unordered_map<long, Vec3> noise;
  {
    size_t idx = 0;
    for (Frame& f : src.frames)
      for (const Detection& d : f.detections) {
        if (keep[idx++] && cfg.pos_sigma > 0)
          noise[d.det_id] = {rng.normal() * cfg.pos_sigma,
                             rng.normal() * cfg.pos_sigma,
                             rng.normal() * cfg.pos_sigma};
      }
  }
  // 3. termination: drop all detections assigned to the drawn tracks.
  std::vector<int> terminated_gts;
  for (const TrackWindowSample& t : src.tracks)
    if (t.gt_id >= 0 && rng.uniform() < cfg.term_prob)
      terminated_gts.push_back(t.gt_id);
  // 4. track drop: remove the track, keep its detections.
  std::vector<char> track_keep;
  for ([[maybe_unused]] const TrackWindowSample& t : src.tracks)
    track_keep.push_back(rng.uniform() >= cfg.track_drop_prob);

  {
    size_t idx = 0;
    for (Frame& f : src.frames) {
      std::vector<Detection> kept;
      for (Detection& d : f.detections) {
        bool k = keep[idx++];
        if (k) {
          auto it = src.det_gt.find(d.det_id);
          if (it != src.det_gt.end() &&
              std::find(terminated_gts.begin(), terminated_gts.end(),
                        it->second) != terminated_gts.end())
            k = false;
        }
        if (k) kept.push_back(d);
      }
      f.detections = std::move(kept);
    }
  }
  {
    std::vector<TrackWindowSample> kept;
    for (size_t i = 0; i < src.tracks.size(); ++i)
      if (track_keep[i]) kept.push_back(src.tracks[i]);
    src.tracks = std::move(kept);
  }

  // Structure from pre-noise positions, then noised features.
  TrainingSample out;
  std::vector<TrackWindowInput> tracks;
  for (const TrackWindowSample& t : src.tracks)
    tracks.push_back({t.track_id, t.class_id, t.states});
  out.graph = build_graph_structure(src.frames, tracks, num_classes, gcfg);
  for (auto& node : out.graph.dnodes) {
    auto it = noise.find(node.det.det_id);
    if (it != noise.end()) node.det.box.center = node.det.box.center + it->second;
  }
  compute_graph_features(out.graph, num_classes, gcfg);
  out.labels = label_graph(out.graph, src.det_gt, track_gt_map(src));
  // Keep the source coherent with what the features saw.
  for (Frame& f : src.frames)
    for (Detection& d : f.detections) {
      auto it = noise.find(d.det_id);
      if (it != noise.end()) d.box.center = d.box.center + it->second;
    }
  out.src = std::move(src);
  return out;
}

// ---------------------------------------------------------------------------
// Training loop
// ---------------------------------------------------------------------------

struct TrainHyper {
  int epochs = 4;
  int batch_size = 16;
  double lr = 5e-4;
  double weight_decay = 0.01;
  double gamma = 1.0;  // focal focusing parameter
  uint64_t seed = 1;
  bool augment_enabled = true;
  AugmentConfig aug;
};

struct LossPoint {
  int step = 0;
  int epoch = 0;
  double loss = 0;
};

inline void fit_feature_stats(NmpModel& model,
                              const std::vector<TrainingSample>& samples) {
  auto fit = [](const std::vector<const Mat*>& mats, int dim) {
    FeatureStats st = FeatureStats::unit(dim);
    std::vector<double> mean(dim, 0), m2(dim, 0);
    long n = 0;
    for (const Mat* m : mats)
      for (int i = 0; i < m->rows; ++i) {
        ++n;
        const double* r = m->row(i);
        for (int j = 0; j < dim; ++j) {
          const double d = r[j] - mean[j];
          mean[j] += d / n;
          m2[j] += d * (r[j] - mean[j]);
        }
      }
    if (n > 1) {
      st.mean = mean;
      for (int j = 0; j < dim; ++j) st.std[j] = std::sqrt(m2[j] / (n - 1));
    }
    return st;
  };
  std::vector<const Mat*> xd, xt, xdd, xtd;
  for (const TrainingSample& s : samples) {
    xd.push_back(&s.graph.xd);
    xt.push_back(&s.graph.xt);
    xdd.push_back(&s.graph.xdd);
    xtd.push_back(&s.graph.xtd);
  }
  model.stats_d = fit(xd, 12 + model.C);
  model.stats_t = fit(xt, 8 + model.C);
  model.stats_dd = fit(xdd, 10);
  model.stats_td = fit(xtd, model.td_dim);
}

// Batched Adam training with deep supervision; the loss is the focal loss
// summed over the three heads and all iterations, averaged per batch.
inline std::vector<LossPoint> train_epochs(
    const std::vector<TrainingSample>& samples, NmpModel& model,
    const TrainHyper& hyper, const GraphConfig& gcfg) {
  if (samples.empty()) throw DataError("train: empty dataset");
  std::vector<AdamState> opt(kNumNets);
  {
    int idx = 0;
    model.for_each_net([&](const char*, DenseNet& net) {
      opt[idx].lr = hyper.lr;
      opt[idx].weight_decay = hyper.weight_decay;
      opt[idx].init_like(net);
      ++idx;
    });
  }
  ModelGrads grads;
  grads.init_like(model);
  std::vector<LossPoint> curve;
  int step = 0;
  for (int epoch = 0; epoch < hyper.epochs; ++epoch) {
    std::vector<size_t> order(samples.size());
    std::iota(order.begin(), order.end(), 0);
    Rng shuffle_rng(mix_seed(hyper.seed, 0x65706f63ULL + epoch));
    for (size_t i = order.size(); i > 1; --i)
      std::swap(order[i - 1], order[shuffle_rng.uniform_int(0, static_cast<int>(i) - 1)]);

    for (size_t start = 0; start < order.size(); start += hyper.batch_size) {
      const size_t end = std::min(order.size(),
                                  start + static_cast<size_t>(hyper.batch_size));
      grads.zero();
      double batch_loss = 0;
      for (size_t bi = start; bi < end; ++bi) {
        const TrainingSample& base = samples[order[bi]];
        LossStats ls;
        if (hyper.augment_enabled && !hyper.aug.identity()) {
          Rng aug_rng(mix_seed(hyper.seed,
                               0x617567ULL ^ (static_cast<uint64_t>(epoch) << 32 |
                                              static_cast<uint64_t>(order[bi]))));
          TrainingSample aug =
              augment(base, hyper.aug, model.C, gcfg, aug_rng);
          ls = nmp_loss_grad(aug.graph, aug.labels, model, hyper.gamma, grads);
        } else {
          ls = nmp_loss_grad(base.graph, base.labels, model, hyper.gamma, grads);
        }
        batch_loss += ls.loss;
      }
      const double scale = 1.0 / static_cast<double>(end - start);
      for (auto& ng : grads.nets) {
        for (auto& m : ng.dw)
          for (double& v : m.a) v *= scale;
        for (auto& b : ng.db)
          for (double& v : b) v *= scale;
      }
      if (!std::isfinite(batch_loss))
        throw DataError("train: non-finite loss at step " + std::to_string(step));
      {
        int idx = 0;
        model.for_each_net([&](const char*, DenseNet& net) {
          adam_step(net, grads.nets[idx], opt[idx]);
          ++idx;
        });
      }
      curve.push_back({step, epoch, batch_loss * scale});
      ++step;
    }
  }
  return curve;
}

// Track identity by plurality vote over the GT ids of its matched
// detections; -1 when no matched detection has a GT correspondence.
inline std::unordered_map<int, int> track_gt_by_vote(
    const std::vector<TrackSnapshot>& tracks,
    const std::unordered_map<long, int>& det_gt) {
  std::unordered_map<int, int> out;
  for (const TrackSnapshot& t : tracks) {
    std::map<int, int> votes;
    for (long det_id : t.matched_history) {
      auto it = det_gt.find(det_id);
      if (it != det_gt.end()) votes[it->second] += 1;
    }
    int best = -1, best_n = 0;
    for (const auto& [gt, n] : votes)
      if (n > best_n) {
        best_n = n;
        best = gt;
      }
    out[t.track_id] = best;
  }
  return out;
}

// Replaces the classifier with ground-truth labels (oracle closed loop).
inline ScoreOverride oracle_score_override(const Scene& scene) {
  auto det_gt =
      std::make_shared<std::unordered_map<long, int>>(gt_matching(scene));
  return [det_gt](const TrackingGraph& g,
                  const std::vector<TrackSnapshot>& tracks) {
    GraphLabels labels =
        label_graph(g, *det_gt, track_gt_by_vote(tracks, *det_gt));
    GraphScores s;
    s.d.assign(labels.d.begin(), labels.d.end());
    s.dd.assign(labels.dd.begin(), labels.dd.end());
    s.td.assign(labels.td.begin(), labels.td.end());
    return s;
  };
}

// Stage-2 (semi-online) data: the tracker runs closed-loop with the stage-1
// model; its own tracks populate the graphs. A track's GT identity is the
// plurality GT id over its matched detections; pure-FP tracks get none.
inline std::vector<TrainingSample> build_stage2_dataset(
    const std::vector<Scene>& scenes, const NmpModel& stage1,
    const TrackerConfig& tracker_cfg,
    const std::function<ScoreOverride(const Scene&)>& oracle_factory = nullptr) {
  std::vector<TrainingSample> samples;
  const int T = tracker_cfg.graph.window;
  for (const Scene& scene : scenes) {
    auto det_gt = gt_matching(scene);
    const int C = scene.classes.count();
    StepObserver observer = [&](const StepView& view) {
      if (view.graph->num_frames() < T) return;
      SampleSource src;
      src.scene_id = scene.scene_id;
      src.anchor = view.frame;
      src.stage = 2;
      for (const Frame& f : scene.frames)
        if (f.index > view.frame - T && f.index <= view.frame)
          src.frames.push_back(f);
      src.det_gt = det_gt;
      // Track windows from the graph's track nodes.
      std::map<int, TrackWindowSample> tws;
      for (const auto& tn : view.graph->tnodes) {
        TrackWindowSample& tw = tws[tn.track_id];
        tw.track_id = tn.track_id;
        tw.class_id = tn.class_id;
        tw.states[view.graph->frame_index[tn.fpos]] = tn.state;
      }
      auto votes = track_gt_by_vote(*view.tracks, det_gt);
      for (auto& [tid, tw] : tws) {
        auto it = votes.find(tid);
        tw.gt_id = it == votes.end() ? -1 : it->second;
      }
      for (auto& [tid, tw] : tws) src.tracks.push_back(std::move(tw));
      samples.push_back(build_sample(std::move(src), C, tracker_cfg.graph));
    };
    run_scene(scene, stage1, tracker_cfg,
              oracle_factory ? oracle_factory(scene) : nullptr, observer);
  }
  return samples;
}

// Rebuilds samples without track windows (MPN-baseline training data).
inline std::vector<TrainingSample> strip_tracks(std::vector<TrainingSample> samples,
                                                int num_classes,
                                                const GraphConfig& cfg) {
  for (auto& s : samples) {
    SampleSource src = std::move(s.src);
    src.tracks.clear();
    s = build_sample(std::move(src), num_classes, cfg);
  }
  return samples;
}

struct PipelineConfig {
  GraphConfig graph;
  TrainHyper hyper;
  TrackerConfig tracker;
  int L = 4;
  uint64_t seed = 1;
  bool warm_start_stage2 = false;
};

struct PipelineResult {
  NmpModel stage1;
  NmpModel stage2;
  std::vector<LossPoint> curve1, curve2;
  std::vector<std::string> warnings;
};

// Two-stage (semi-online) training: stage 1 on GT-derived tracks with
// augmentation, stage 2 retrained from scratch on tracker-generated tracks
// with the same augmentations.
inline PipelineResult two_stage_pipeline(const std::vector<Scene>& scenes,
                                         PipelineConfig cfg) {
  if (scenes.empty()) throw DataError("pipeline: no scenes");
  const int C = scenes.front().classes.count();
  if (cfg.graph.v_max.empty())
    cfg.graph.v_max = GraphConfig::default_v_max(scenes.front().classes);
  cfg.tracker.graph = cfg.graph;

  PipelineResult res;
  auto est = estimate_params(scenes);
  res.warnings = est.warnings;

  auto stage1_data = build_stage1_dataset(scenes, est.params, cfg.graph);
  res.stage1 = init_nmp_model(C, cfg.L, cfg.graph.track_edge_dim(),
                              mix_seed(cfg.seed, 1));
  res.stage1.kalman = est.params;
  fit_feature_stats(res.stage1, stage1_data);
  TrainHyper h1 = cfg.hyper;
  h1.seed = mix_seed(cfg.seed, 11);
  res.curve1 = train_epochs(stage1_data, res.stage1, h1, cfg.graph);

  auto stage2_data = build_stage2_dataset(scenes, res.stage1, cfg.tracker);
  if (cfg.warm_start_stage2) {
    res.stage2 = res.stage1;
  } else {
    res.stage2 = init_nmp_model(C, cfg.L, cfg.graph.track_edge_dim(),
                                mix_seed(cfg.seed, 2));
    res.stage2.kalman = est.params;
  }
  fit_feature_stats(res.stage2, stage2_data);
  TrainHyper h2 = cfg.hyper;
  h2.seed = mix_seed(cfg.seed, 22);
  res.curve2 = train_epochs(stage2_data, res.stage2, h2, cfg.graph);
  return res;
}

inline void save_loss_curve(const std::vector<LossPoint>& curve,
                            const std::string& path) {
  std::ofstream os(path);
  if (!os) throw DataError("cannot open '" + path + "' for writing");
  os << "step,epoch,loss\n";
  for (const LossPoint& p : curve)
    os << p.step << "," << p.epoch << "," << p.loss << "\n";
}

// ---------------------------------------------------------------------------
// Dataset cache: one binary file per sample plus a JSON manifest.
// ---------------------------------------------------------------------------

namespace traindetail {

inline void put_u32(std::ostream& os, uint32_t v) {
  os.write(reinterpret_cast<const char*>(&v), sizeof(v));
}
inline void put_i32(std::ostream& os, int32_t v) {
  os.write(reinterpret_cast<const char*>(&v), sizeof(v));
}
inline void put_i64(std::ostream& os, int64_t v) {
  os.write(reinterpret_cast<const char*>(&v), sizeof(v));
}
inline void put_f64(std::ostream& os, double v) {
  os.write(reinterpret_cast<const char*>(&v), sizeof(v));
}
inline uint32_t get_u32(std::istream& is) {
  uint32_t v;
  is.read(reinterpret_cast<char*>(&v), sizeof(v));
  return v;
}
inline int32_t get_i32(std::istream& is) {
  int32_t v;
  is.read(reinterpret_cast<char*>(&v), sizeof(v));
  return v;
}
inline int64_t get_i64(std::istream& is) {
  int64_t v;
  is.read(reinterpret_cast<char*>(&v), sizeof(v));
  return v;
}
inline double get_f64(std::istream& is) {
  double v;
  is.read(reinterpret_cast<char*>(&v), sizeof(v));
  return v;
}

inline constexpr uint32_t kSampleMagic = 0x474d4453;  // "GMDS"

}  // namespace traindetail

inline void save_sample_source(const SampleSource& src, const std::string& path) {
  using namespace traindetail;
  std::ofstream os(path, std::ios::binary);
  if (!os) throw DataError("cannot open '" + path + "' for writing");
  put_u32(os, kSampleMagic);
  put_u32(os, 1);  // version
  put_i32(os, src.anchor);
  put_i32(os, src.stage);
  put_u32(os, static_cast<uint32_t>(src.scene_id.size()));
  os.write(src.scene_id.data(), static_cast<std::streamsize>(src.scene_id.size()));
  put_u32(os, static_cast<uint32_t>(src.frames.size()));
  for (const Frame& f : src.frames) {
    put_i32(os, f.index);
    put_f64(os, f.timestamp);
    for (double v : f.ego) put_f64(os, v);
    put_u32(os, static_cast<uint32_t>(f.detections.size()));
    for (const Detection& d : f.detections) {
      for (double v : d.box.center) put_f64(os, v);
      for (double v : d.box.size) put_f64(os, v);
      put_f64(os, d.box.yaw);
      put_f64(os, d.vx);
      put_f64(os, d.vy);
      put_i32(os, d.class_id);
      put_f64(os, d.score);
      put_f64(os, d.ego_distance);
      put_i32(os, d.frame);
      put_i64(os, d.det_id);
    }
  }
  put_u32(os, static_cast<uint32_t>(src.tracks.size()));
  for (const TrackWindowSample& t : src.tracks) {
    put_i32(os, t.track_id);
    put_i32(os, t.class_id);
    put_i32(os, t.gt_id);
    put_u32(os, static_cast<uint32_t>(t.states.size()));
    for (const auto& [frame, st] : t.states) {
      put_i32(os, frame);
      for (double v : st.pos) put_f64(os, v);
      for (double v : st.size) put_f64(os, v);
      put_f64(os, st.yaw);
    }
  }
  put_u32(os, static_cast<uint32_t>(src.det_gt.size()));
  std::vector<std::pair<long, int>> pairs(src.det_gt.begin(), src.det_gt.end());
  std::sort(pairs.begin(), pairs.end());
  for (const auto& [det, gt] : pairs) {
    put_i64(os, det);
    put_i32(os, gt);
  }
  if (!os) throw DataError("write failure on '" + path + "'");
}

inline SampleSource load_sample_source(const std::string& path) {
  using namespace traindetail;
  std::ifstream is(path, std::ios::binary);
  if (!is) throw DataError("cannot open '" + path + "'");
  if (get_u32(is) != kSampleMagic)
    throw DataError(path + ": not a dataset sample file");
  if (get_u32(is) != 1) throw DataError(path + ": unsupported sample version");
  SampleSource src;
  src.anchor = get_i32(is);
  src.stage = get_i32(is);
  const uint32_t idlen = get_u32(is);
  src.scene_id.resize(idlen);
  is.read(src.scene_id.data(), idlen);
  const uint32_t nframes = get_u32(is);
  for (uint32_t i = 0; i < nframes; ++i) {
    Frame f;
    f.index = get_i32(is);
    f.timestamp = get_f64(is);
    for (double& v : f.ego) v = get_f64(is);
    const uint32_t nd = get_u32(is);
    for (uint32_t k = 0; k < nd; ++k) {
      Detection d;
      for (double& v : d.box.center) v = get_f64(is);
      for (double& v : d.box.size) v = get_f64(is);
      d.box.yaw = get_f64(is);
      d.vx = get_f64(is);
      d.vy = get_f64(is);
      d.class_id = get_i32(is);
      d.score = get_f64(is);
      d.ego_distance = get_f64(is);
      d.frame = get_i32(is);
      d.det_id = get_i64(is);
      f.detections.push_back(d);
    }
    src.frames.push_back(std::move(f));
  }
  const uint32_t ntracks = get_u32(is);
  for (uint32_t i = 0; i < ntracks; ++i) {
    TrackWindowSample t;
    t.track_id = get_i32(is);
    t.class_id = get_i32(is);
    t.gt_id = get_i32(is);
    const uint32_t ns = get_u32(is);
    for (uint32_t k = 0; k < ns; ++k) {
      const int frame = get_i32(is);
      TrackNodeState st;
      for (double& v : st.pos) v = get_f64(is);
      for (double& v : st.size) v = get_f64(is);
      st.yaw = get_f64(is);
      t.states[frame] = st;
    }
    src.tracks.push_back(std::move(t));
  }
  const uint32_t ngt = get_u32(is);
  for (uint32_t i = 0; i < ngt; ++i) {
    const long det = static_cast<long>(get_i64(is));
    const int gt = get_i32(is);
    src.det_gt[det] = gt;
  }
  if (!is) throw DataError(path + ": truncated sample file");
  return src;
}

inline void save_dataset(const std::vector<TrainingSample>& samples,
                         const std::string& dir, int num_classes,
                         const std::vector<std::string>& class_names,
                         const GraphConfig& cfg) {
  namespace fs = std::filesystem;
  fs::create_directories(dir);
  json manifest;
  manifest["version"] = 1;
  manifest["C"] = num_classes;
  manifest["classes"] = class_names;
  manifest["window"] = cfg.window;
  manifest["v_max"] = cfg.v_max;
  manifest["gate_detection_edges"] = cfg.gate_detection_edges;
  manifest["gate_track_edges"] = cfg.gate_track_edges;
  manifest["track_gate_dt"] = cfg.track_gate_dt;
  manifest["componentwise_track_edge"] = cfg.componentwise_track_edge;
  json files = json::array();
  for (size_t i = 0; i < samples.size(); ++i) {
    char name[32];
    std::snprintf(name, sizeof(name), "sample_%06zu.bin", i);
    save_sample_source(samples[i].src, (fs::path(dir) / name).string());
    files.push_back(name);
  }
  manifest["samples"] = std::move(files);
  std::ofstream os(fs::path(dir) / "manifest.json");
  if (!os) throw DataError("cannot write dataset manifest");
  os << manifest.dump(2) << "\n";
}

struct LoadedDataset {
  std::vector<TrainingSample> samples;
  int C = 0;
  std::vector<std::string> class_names;
  GraphConfig graph;
};

inline LoadedDataset load_dataset(const std::string& dir) {
  namespace fs = std::filesystem;
  std::ifstream is(fs::path(dir) / "manifest.json");
  if (!is) throw DataError("cannot open dataset manifest in '" + dir + "'");
  json manifest = json::parse(is);
  LoadedDataset ds;
  ds.C = manifest.at("C").get<int>();
  ds.class_names = manifest.at("classes").get<std::vector<std::string>>();
  ds.graph.window = manifest.at("window").get<int>();
  ds.graph.v_max = manifest.at("v_max").get<std::vector<double>>();
  ds.graph.gate_detection_edges = manifest.at("gate_detection_edges").get<bool>();
  ds.graph.gate_track_edges = manifest.at("gate_track_edges").get<bool>();
  ds.graph.track_gate_dt = manifest.at("track_gate_dt").get<double>();
  ds.graph.componentwise_track_edge =
      manifest.at("componentwise_track_edge").get<bool>();
  for (const json& name : manifest.at("samples")) {
    SampleSource src =
        load_sample_source((fs::path(dir) / name.get<std::string>()).string());
    ds.samples.push_back(build_sample(std::move(src), ds.C, ds.graph));
  }
  return ds;
}

}  // namespace gmot
