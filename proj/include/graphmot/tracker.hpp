#pragma once

#include <chrono>
#include <deque>
#include <fstream>
#include <functional>
#include <limits>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "graphmot/assoc.hpp"
#include "graphmot/core.hpp"
#include "graphmot/graph.hpp"
#include "graphmot/kalman.hpp"
#include "graphmot/nmp.hpp"

namespace gmot {

struct TrackerConfig {
  GraphConfig graph;
  int max_stale_frames = 3;
  double max_stale_time = 1.5;
  bool mpn_baseline = false;       // no track nodes/edges; chain matching
  bool report_preliminary = true;  // emit single-detection preliminary tracks
  int max_candidates = 16;
  bool f32_inference = true;
  double score_smooth = 0.5;
  double coast_decay = 0.9;
  uint64_t seed = 1;
};

struct TrackOutputEntry {
  int id = 0;
  BoundingBox3D box;
  int class_id = 0;
  double score = 0;
};

struct TrackOutput {
  int frame = 0;
  std::vector<TrackOutputEntry> tracks;
};

struct StageTimes {
  double graph_ms = 0;
  double nmp_ms = 0;
  double post_ms = 0;
  double total_ms = 0;
};

// A confirmed track. The anchor state is the filter posterior at
// anchor_frame; per-window states are rebuilt from it every step, predicting
// across gaps and updating where the current assignment has detections.
struct Track {
  int id = 0;
  int class_id = 0;
  int birth_frame = 0;
  KalmanState anchor;
  int anchor_frame = 0;
  double anchor_time = 0;
  std::map<int, Detection> matched;      // window frames > anchor_frame
  std::map<int, KalmanState> states;     // rebuilt each step
  int last_update_frame = 0;
  double last_update_time = 0;
  double score = 0;
  std::vector<long> matched_history;  // every detection id ever accepted

  int age(int now) const { return now - birth_frame; }
};

// A preliminary track: one unmatched active detection in the newest frame,
// waiting for confirmation by an active detection edge next step.
struct Preliminary {
  int id = 0;
  Detection det;
};

// Chain track used by the MPN baseline (no state filter).
struct ChainTrack {
  int id = 0;
  int class_id = 0;
  int birth_frame = 0;
  std::map<int, Detection> dets;  // window frames
  int last_update_frame = 0;
  double last_update_time = 0;
  double score = 0;
  std::vector<long> matched_history;

  int age(int now) const { return now - birth_frame; }
};

// Optional score override; when set it replaces the NMP classifier (used for
// oracle closed-loop runs). Receives the graph and per-graph-track-node
// track ids resolved to (track_id, matched detection ids) pairs.
struct TrackSnapshot {
  int track_id = 0;
  std::vector<long> matched_history;
};

using ScoreOverride = std::function<GraphScores(
    const TrackingGraph&, const std::vector<TrackSnapshot>&)>;

// Observer invoked once per step after graph construction and scoring;
// used by the stage-2 dataset builder and the graph inspector.
struct StepView {
  const TrackingGraph* graph = nullptr;
  const GraphScores* scores = nullptr;
  const std::vector<TrackSnapshot>* tracks = nullptr;
  int frame = 0;
};

using StepObserver = std::function<void(const StepView&)>;

class Tracker {
 public:
  Tracker(const NmpModel& model, const TrackerConfig& cfg)
      : model_(&model), cfg_(cfg) {
    if (cfg_.graph.window < 2)
      throw DataError("tracker: window must span at least 2 frames");
    if (cfg_.f32_inference) model_f32_ = cast_model<float>(model);
  }

  ScoreOverride score_override;
  StepObserver observer;

  const std::vector<Track>& tracks() const { return tracks_; }

  TrackOutput step(const Frame& frame, StageTimes* times = nullptr) {
    using clock = std::chrono::steady_clock;
    const auto t0 = clock::now();
    if (last_frame_ != std::numeric_limits<int>::min() &&
        frame.index != last_frame_ + 1)
      throw DataError("tracker: frames must arrive consecutively");
    last_frame_ = frame.index;

    window_.push_back(frame);
    if (static_cast<int>(window_.size()) > cfg_.graph.window) {
      fold_anchor(window_.front());
      window_.pop_front();
    }
    rebuild_states();

    // Graph over the window.
    std::vector<Frame> frames(window_.begin(), window_.end());
    std::vector<TrackWindowInput> graph_tracks;
    if (!cfg_.mpn_baseline) {
      for (const Track& t : tracks_) {
        TrackWindowInput in;
        in.track_id = t.id;
        in.class_id = t.class_id;
        for (const auto& [f, s] : t.states) in.states[f] = track_node_state(s);
        graph_tracks.push_back(std::move(in));
      }
    }
    TrackingGraph g = build_graph(frames, graph_tracks, num_classes(), cfg_.graph);
    const auto t1 = clock::now();

    // Scores.
    GraphScores scores;
    if (score_override) {
      scores = score_override(g, snapshots());
    } else if (cfg_.f32_inference) {
      scores = final_scores(nmp_forward<float>(g, model_f32_));
    } else {
      scores = final_scores(nmp_forward<double>(g, *model_));
    }
    const auto t2 = clock::now();

    if (observer) {
      auto snaps = snapshots();
      StepView view{&g, &scores, &snaps, frame.index};
      observer(view);
    }

    // Association, termination, initialization.
    TrackOutput out;
    out.frame = frame.index;
    if (cfg_.mpn_baseline)
      baseline_step(g, scores, frame, out);
    else
      full_step(g, scores, frame, out);
    std::sort(out.tracks.begin(), out.tracks.end(),
              [](const TrackOutputEntry& a, const TrackOutputEntry& b) {
                return a.id < b.id;
              });
    const auto t3 = clock::now();

    if (times) {
      auto ms = [](auto a, auto b) {
        return std::chrono::duration<double, std::milli>(b - a).count();
      };
      times->graph_ms = ms(t0, t1);
      times->nmp_ms = ms(t1, t2);
      times->post_ms = ms(t2, t3);
      times->total_ms = ms(t0, t3);
    }
    return out;
  }

 private:
  int num_classes() const { return model_->C; }

  std::vector<TrackSnapshot> snapshots() const {
    std::vector<TrackSnapshot> s;
    if (cfg_.mpn_baseline) {
      for (const ChainTrack& t : chains_) s.push_back({t.id, t.matched_history});
    } else {
      for (const Track& t : tracks_) s.push_back({t.id, t.matched_history});
    }
    return s;
  }

  double frame_time(int index) const {
    for (const Frame& f : window_)
      if (f.index == index) return f.timestamp;
    throw std::logic_error("tracker: frame not in window");
  }

  // Folds a frame that leaves the window into each track's anchor state.
  void fold_anchor(const Frame& leaving) {
    for (Track& t : tracks_) {
      if (leaving.index <= t.anchor_frame) continue;
      const double dt = leaving.timestamp - t.anchor_time;
      if (dt > 0) t.anchor = kalman_predict(t.anchor, dt, model_->kalman);
      auto it = t.matched.find(leaving.index);
      if (it != t.matched.end()) {
        t.anchor = kalman_update(t.anchor, it->second, model_->kalman);
        t.matched.erase(it);
      }
      t.anchor_frame = leaving.index;
      t.anchor_time = leaving.timestamp;
    }
    for (ChainTrack& t : chains_) t.dets.erase(leaving.index);
  }

  // Rebuilds per-window filter states from the anchor.
  void rebuild_states() {
    for (Track& t : tracks_) {
      t.states.clear();
      KalmanState s = t.anchor;
      double prev_time = t.anchor_time;
      for (const Frame& f : window_) {
        if (f.index < t.anchor_frame) continue;
        if (f.index == t.anchor_frame) {
          t.states[f.index] = s;
          continue;
        }
        const double dt = f.timestamp - prev_time;
        s = kalman_predict(s, dt, model_->kalman);
        auto it = t.matched.find(f.index);
        if (it != t.matched.end()) s = kalman_update(s, it->second, model_->kalman);
        prev_time = f.timestamp;
        t.states[f.index] = s;
      }
    }
  }

  void full_step(const TrackingGraph& g, const GraphScores& scores,
                 const Frame& frame, TrackOutput& out) {
    ActiveSets sets = active_sets(scores);

    std::vector<TrackCandidate> cands;
    std::map<int, std::vector<int>> tnodes_by_track;
    for (int k = 0; k < static_cast<int>(g.tnodes.size()); ++k)
      tnodes_by_track[g.tnodes[k].track_id].push_back(k);
    for (const Track& t : tracks_) {
      TrackCandidate c;
      c.track_id = t.id;
      c.age = t.age(frame.index);
      auto it = tnodes_by_track.find(t.id);
      if (it != tnodes_by_track.end()) c.tnodes = it->second;
      cands.push_back(std::move(c));
    }
    Rng rng(mix_seed(cfg_.seed, static_cast<uint64_t>(frame.index)));
    GreedyResult res = greedy_update(g, sets, scores.td, std::move(cands),
                                     cfg_.max_candidates, rng);

    // Apply assignments: a non-empty assignment replaces the window match
    // record; an empty one leaves the track untouched (it coasts).
    for (const auto& [tid, assignment] : res.assignments) {
      Track* t = find_track(tid);
      bool matched_newest = false;
      if (!assignment.empty()) {
        t->matched.clear();
        for (int n : assignment.nodes) {
          const Detection& d = g.dnodes[n].det;
          if (d.frame > t->anchor_frame) t->matched[d.frame] = d;
          if (d.frame == frame.index) matched_newest = true;
          if (std::find(t->matched_history.begin(), t->matched_history.end(),
                        d.det_id) == t->matched_history.end())
            t->matched_history.push_back(d.det_id);
          t->last_update_frame = std::max(t->last_update_frame, d.frame);
        }
        t->last_update_time = frame_time(t->last_update_frame);
      }
      if (matched_newest) {
        const Detection& d = t->matched.at(frame.index);
        t->score = cfg_.score_smooth * t->score + (1.0 - cfg_.score_smooth) * d.score;
      } else {
        t->score *= cfg_.coast_decay;
      }
    }
    rebuild_states();

    // Termination.
    std::erase_if(tracks_, [&](const Track& t) {
      return track_is_stale(t.last_update_frame, t.last_update_time,
                            frame.index, frame.timestamp,
                            cfg_.max_stale_frames, cfg_.max_stale_time);
    });

    // Initialization: confirm previous preliminaries, then relabel.
    std::vector<long> prelim_ids;
    for (const Preliminary& p : prelim_) prelim_ids.push_back(p.det.det_id);
    InitResult init = initialize_tracks(g, res.remaining, res.used, prelim_ids);
    for (const InitSpawn& sp : init.spawns) {
      const Detection& d_old = g.dnodes[sp.prelim_node].det;
      const Detection& d_new = g.dnodes[sp.newest_node].det;
      const Preliminary* p = nullptr;
      for (const Preliminary& q : prelim_)
        if (q.det.det_id == d_old.det_id) p = &q;
      Track t;
      t.id = p ? p->id : next_id_++;
      t.class_id = d_old.class_id;
      t.birth_frame = d_old.frame;
      t.anchor = init_track_state(d_old, model_->kalman);
      t.anchor_frame = d_old.frame;
      t.anchor_time = frame_time(d_old.frame);
      t.matched[d_new.frame] = d_new;
      t.matched_history = {d_old.det_id, d_new.det_id};
      t.last_update_frame = d_new.frame;
      t.last_update_time = frame.timestamp;
      t.score = cfg_.score_smooth * d_old.score +
                (1.0 - cfg_.score_smooth) * d_new.score;
      tracks_.push_back(std::move(t));
    }
    prelim_.clear();
    for (int n : init.new_preliminary)
      prelim_.push_back({next_id_++, g.dnodes[n].det});
    rebuild_states();

    // Output: confirmed tracks report the newest filter state (posterior if
    // matched, prediction otherwise); preliminaries report their detection.
    for (const Track& t : tracks_) {
      auto it = t.states.find(frame.index);
      if (it == t.states.end()) continue;
      out.tracks.push_back({t.id, it->second.box(), t.class_id, t.score});
    }
    if (cfg_.report_preliminary) {
      for (const Preliminary& p : prelim_)
        out.tracks.push_back({p.id, p.det.box, p.det.class_id, p.det.score});
    }
  }

  void baseline_step(const TrackingGraph& g, const GraphScores& scores,
                     const Frame& frame, TrackOutput& out) {
    ActiveSets sets = active_sets(scores);
    std::vector<char> used(g.dnodes.size(), 0);

    // Candidate links: active detection edges ending at an active, unused
    // newest-frame node whose earlier endpoint belongs to a chain.
    std::unordered_map<long, int> chain_of_det;
    for (size_t c = 0; c < chains_.size(); ++c)
      for (const auto& [f, d] : chains_[c].dets)
        chain_of_det[d.det_id] = static_cast<int>(c);
    struct Link {
      double score;
      int edge;
      int chain;
      int node;
    };
    std::vector<Link> links;
    const int newest = g.newest_fpos();
    for (int e = 0; e < static_cast<int>(g.dedges.size()); ++e) {
      if (!sets.dd[e]) continue;
      const int i = g.dedges[e].i, j = g.dedges[e].j;
      if (g.dnodes[j].fpos != newest || !sets.d[j]) continue;
      auto it = chain_of_det.find(g.dnodes[i].det.det_id);
      if (it == chain_of_det.end()) continue;
      links.push_back({scores.dd[e], e, it->second, j});
    }
    std::sort(links.begin(), links.end(), [](const Link& a, const Link& b) {
      if (a.score != b.score) return a.score > b.score;
      return a.edge < b.edge;
    });
    std::vector<char> chain_matched(chains_.size(), 0);
    for (const Link& l : links) {
      if (chain_matched[l.chain] || used[l.node]) continue;
      chain_matched[l.chain] = 1;
      used[l.node] = 1;
      ChainTrack& t = chains_[l.chain];
      const Detection& d = g.dnodes[l.node].det;
      t.dets[d.frame] = d;
      t.matched_history.push_back(d.det_id);
      t.last_update_frame = d.frame;
      t.last_update_time = frame.timestamp;
      t.score = cfg_.score_smooth * t.score + (1.0 - cfg_.score_smooth) * d.score;
    }
    for (size_t c = 0; c < chains_.size(); ++c)
      if (!chain_matched[c]) chains_[c].score *= cfg_.coast_decay;

    std::erase_if(chains_, [&](const ChainTrack& t) {
      return track_is_stale(t.last_update_frame, t.last_update_time,
                            frame.index, frame.timestamp,
                            cfg_.max_stale_frames, cfg_.max_stale_time);
    });

    std::vector<long> prelim_ids;
    for (const Preliminary& p : prelim_) prelim_ids.push_back(p.det.det_id);
    InitResult init = initialize_tracks(g, sets, used, prelim_ids);
    for (const InitSpawn& sp : init.spawns) {
      const Detection& d_old = g.dnodes[sp.prelim_node].det;
      const Detection& d_new = g.dnodes[sp.newest_node].det;
      const Preliminary* p = nullptr;
      for (const Preliminary& q : prelim_)
        if (q.det.det_id == d_old.det_id) p = &q;
      ChainTrack t;
      t.id = p ? p->id : next_id_++;
      t.class_id = d_old.class_id;
      t.birth_frame = d_old.frame;
      t.dets[d_old.frame] = d_old;
      t.dets[d_new.frame] = d_new;
      t.matched_history = {d_old.det_id, d_new.det_id};
      t.last_update_frame = d_new.frame;
      t.last_update_time = frame.timestamp;
      t.score = cfg_.score_smooth * d_old.score +
                (1.0 - cfg_.score_smooth) * d_new.score;
      chains_.push_back(std::move(t));
    }
    prelim_.clear();
    for (int n : init.new_preliminary)
      prelim_.push_back({next_id_++, g.dnodes[n].det});

    // Chains have no predictive model: report only when matched this frame.
    for (const ChainTrack& t : chains_) {
      auto it = t.dets.find(frame.index);
      if (it == t.dets.end()) continue;
      out.tracks.push_back({t.id, it->second.box, t.class_id, t.score});
    }
    if (cfg_.report_preliminary) {
      for (const Preliminary& p : prelim_)
        out.tracks.push_back({p.id, p.det.box, p.det.class_id, p.det.score});
    }
  }

  Track* find_track(int id) {
    for (Track& t : tracks_)
      if (t.id == id) return &t;
    throw std::logic_error("tracker: unknown track id");
  }

  const NmpModel* model_;
  NmpModelT<float> model_f32_;
  TrackerConfig cfg_;
  std::deque<Frame> window_;
  std::vector<Track> tracks_;
  std::vector<ChainTrack> chains_;
  std::vector<Preliminary> prelim_;
  int next_id_ = 0;
  int last_frame_ = std::numeric_limits<int>::min();
};

inline std::vector<TrackOutput> run_scene(const Scene& scene, const NmpModel& model,
                                          const TrackerConfig& cfg,
                                          ScoreOverride oracle = nullptr,
                                          StepObserver observer = nullptr,
                                          std::vector<StageTimes>* times = nullptr) {
  TrackerConfig c = cfg;
  if (c.graph.v_max.empty())
    c.graph.v_max = GraphConfig::default_v_max(scene.classes);
  if (scene.classes.count() != model.C)
    throw DataError("tracker: scene vocabulary size does not match the model");
  Tracker tracker(model, c);
  tracker.score_override = std::move(oracle);
  tracker.observer = std::move(observer);
  std::vector<TrackOutput> outputs;
  for (const Frame& f : scene.frames) {
    StageTimes st;
    outputs.push_back(tracker.step(f, times ? &st : nullptr));
    if (times) times->push_back(st);
  }
  return outputs;
}

// Per-step tracking score used by the AMOTA recall sweep: exponentially
// smoothed detection score, decaying by 0.9 per coasting frame.
inline double tracking_score_update(double current, std::optional<double> matched,
                                    double smooth = 0.5, double decay = 0.9) {
  if (matched) return smooth * current + (1.0 - smooth) * *matched;
  return current * decay;
}

// ---------------------------------------------------------------------------
// Track output files: JSON Lines, meta line first, then one line per frame.
// ---------------------------------------------------------------------------

struct TrackFileMeta {
  std::string scene_id;
  std::string mode;  // "full", "mpn_baseline", "mahalanobis"
  uint64_t seed = 0;
};

inline void save_track_outputs(const std::string& path, const TrackFileMeta& meta,
                               const std::vector<TrackOutput>& outputs) {
  std::ofstream os(path);
  if (!os) throw DataError("cannot open '" + path + "' for writing");
  json mj;
  mj["type"] = "meta";
  mj["scene_id"] = meta.scene_id;
  mj["mode"] = meta.mode;
  mj["seed"] = meta.seed;
  os << mj.dump() << "\n";
  for (const TrackOutput& o : outputs) {
    json j;
    j["frame"] = o.frame;
    json tracks = json::array();
    for (const TrackOutputEntry& t : o.tracks) {
      json tj;
      tj["id"] = t.id;
      tj["center"] = vec3_json(t.box.center);
      tj["size"] = vec3_json(t.box.size);
      tj["yaw"] = t.box.yaw;
      tj["class"] = t.class_id;
      tj["score"] = t.score;
      tracks.push_back(std::move(tj));
    }
    j["tracks"] = std::move(tracks);
    os << j.dump() << "\n";
  }
  if (!os) throw DataError("write failure on '" + path + "'");
}

struct TrackFile {
  TrackFileMeta meta;
  std::vector<TrackOutput> outputs;
};

inline TrackFile load_track_outputs(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw DataError("cannot open '" + path + "'");
  TrackFile file;
  std::string line;
  int lineno = 0;
  while (std::getline(is, line)) {
    ++lineno;
    if (line.empty()) continue;
    json j;
    try {
      j = json::parse(line);
    } catch (const std::exception& e) {
      throw DataError(path + ":" + std::to_string(lineno) + ": parse error: " +
                      e.what());
    }
    if (j.contains("type") && j.at("type") == "meta") {
      file.meta.scene_id = j.value("scene_id", "");
      file.meta.mode = j.value("mode", "");
      file.meta.seed = j.value("seed", uint64_t(0));
      continue;
    }
    TrackOutput o;
    o.frame = j.at("frame").get<int>();
    for (const json& tj : j.at("tracks")) {
      TrackOutputEntry t;
      t.id = tj.at("id").get<int>();
      t.box.center = vec3_from(tj.at("center"), "center");
      t.box.size = vec3_from(tj.at("size"), "size");
      t.box.yaw = tj.at("yaw").get<double>();
      t.class_id = tj.at("class").get<int>();
      t.score = tj.at("score").get<double>();
      o.tracks.push_back(t);
    }
    file.outputs.push_back(std::move(o));
  }
  return file;
}

}  // namespace gmot
