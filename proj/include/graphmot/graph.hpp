#pragma once

#include <algorithm>
#include <map>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

#include "graphmot/core.hpp"
#include "graphmot/kalman.hpp"
#include "graphmot/linalg.hpp"

namespace gmot {

struct GraphConfig {
  int window = 3;  // T
  std::vector<double> v_max;  // per class, m/s; empty = fill with defaults
  bool gate_detection_edges = true;
  bool gate_track_edges = true;
  double track_gate_dt = 0.5;  // track-edge gate radius = v_max * this
  bool componentwise_track_edge = false;  // 7-entry x_TD instead of 3

  // Pedestrian-like classes move slowly; everything else is vehicle-like.
  static std::vector<double> default_v_max(const ClassVocabulary& vocab) {
    std::vector<double> v;
    for (const std::string& n : vocab.names) {
      std::string lower = n;
      std::transform(lower.begin(), lower.end(), lower.begin(), ::tolower);
      const bool ped = lower.find("ped") != std::string::npos ||
                       lower.find("person") != std::string::npos;
      v.push_back(ped ? 4.0 : 30.0);
    }
    return v;
  }

  double v_max_for(int class_id) const {
    if (class_id < static_cast<int>(v_max.size())) return v_max[class_id];
    return 30.0;
  }

  int det_node_dim(int C) const { return 12 + C; }
  int track_node_dim(int C) const { return 8 + C; }
  int det_edge_dim() const { return 10; }
  int track_edge_dim() const { return componentwise_track_edge ? 7 : 3; }
};

// Pose of one track at one window frame, as exposed to the graph.
struct TrackNodeState {
  Vec3 pos{};
  Vec3 size{};
  double yaw = 0.0;
};

struct TrackWindowInput {
  int track_id = 0;
  int class_id = 0;
  std::map<int, TrackNodeState> states;  // frame index -> state; consecutive
};

inline TrackNodeState track_node_state(const KalmanState& s) {
  return {s.position(), s.size(), s.yaw()};
}

struct TrackingGraph {
  struct DNode {
    Detection det;
    int fpos = 0;  // position in the window, 0 = oldest
  };
  struct TNode {
    int track_id = 0;
    int fpos = 0;
    int class_id = 0;
    TrackNodeState state;
  };
  struct DEdge {
    int i = 0;  // earlier detection node
    int j = 0;  // later detection node
  };
  struct TEdge {
    int k = 0;  // track node
    int i = 0;  // detection node, same frame
  };

  std::vector<int> frame_index;    // ascending
  std::vector<double> frame_time;  // matching timestamps
  Vec3 center{};

  std::vector<DNode> dnodes;
  std::vector<TNode> tnodes;
  std::vector<DEdge> dedges;
  std::vector<TEdge> tedges;

  // Raw features, one row per element.
  Mat xd, xt, xdd, xtd;

  // Canonically ordered adjacency (edge indices).
  std::vector<std::vector<int>> past_of;    // per dnode: dedges to earlier nodes
  std::vector<std::vector<int>> fut_of;     // per dnode: dedges to later nodes
  std::vector<std::vector<int>> tedges_of;  // per dnode
  std::vector<std::vector<int>> tnode_edges;  // per tnode

  std::unordered_map<uint64_t, int> dedge_lookup;  // key(i,j), i < j by fpos

  int num_frames() const { return static_cast<int>(frame_index.size()); }
  int newest_fpos() const { return num_frames() - 1; }

  static uint64_t edge_key(int a, int b) {
    if (a > b) std::swap(a, b);
    return (static_cast<uint64_t>(static_cast<uint32_t>(a)) << 32) |
           static_cast<uint32_t>(b);
  }

  int find_dedge(int a, int b) const {
    auto it = dedge_lookup.find(edge_key(a, b));
    return it == dedge_lookup.end() ? -1 : it->second;
  }
};

// Ground-truth activity labels aligned with the graph arrays.
struct GraphLabels {
  std::vector<char> d;   // 1 iff the detection is a true positive
  std::vector<char> dd;  // 1 iff both endpoints belong to the same GT object
  std::vector<char> td;  // 1 iff the track and the detection share identity
};

// --- raw feature layouts (see module docs in README) -----------------------

inline std::vector<double> detection_node_feature(const Detection& d,
                                                  const Vec3& center, int C) {
  std::vector<double> x;
  x.reserve(12 + C);
  const Vec3 p = d.box.center - center;
  x.insert(x.end(), {p[0], p[1], p[2]});
  x.insert(x.end(), {d.box.size[0], d.box.size[1], d.box.size[2]});
  x.insert(x.end(), {d.vx, d.vy});
  x.push_back(std::sin(d.box.yaw));
  x.push_back(std::cos(d.box.yaw));
  x.push_back(d.score);
  x.push_back(d.ego_distance);
  for (int c = 0; c < C; ++c) x.push_back(c == d.class_id ? 1.0 : 0.0);
  return x;
}

inline std::vector<double> track_node_feature(const TrackNodeState& s,
                                              int class_id, const Vec3& center,
                                              int C) {
  std::vector<double> x;
  x.reserve(8 + C);
  const Vec3 p = s.pos - center;
  x.insert(x.end(), {p[0], p[1], p[2]});
  x.insert(x.end(), {s.size[0], s.size[1], s.size[2]});
  x.push_back(std::sin(s.yaw));
  x.push_back(std::cos(s.yaw));
  for (int c = 0; c < C; ++c) x.push_back(c == class_id ? 1.0 : 0.0);
  return x;
}

// di must be the earlier detection. dt = t_j - t_i > 0; differences are
// later minus earlier; the prediction gap assumes constant velocity of di.
inline std::vector<double> detection_edge_feature(const Detection& di,
                                                  const Detection& dj,
                                                  double dt) {
  if (di.frame == dj.frame)
    throw DataError("detection edge: endpoints share a frame");
  std::vector<double> x;
  x.reserve(10);
  x.push_back(dt);
  const Vec3 dpos = dj.box.center - di.box.center;
  x.insert(x.end(), {dpos[0], dpos[1], dpos[2]});
  const Vec3 dsize = dj.box.size - di.box.size;
  x.insert(x.end(), {dsize[0], dsize[1], dsize[2]});
  const Vec3 pred = {di.box.center[0] + di.vx * dt, di.box.center[1] + di.vy * dt,
                     di.box.center[2]};
  const Vec3 dpred = pred - dj.box.center;
  x.insert(x.end(), {dpred[0], dpred[1], dpred[2]});
  return x;
}

inline std::vector<double> track_edge_feature(const TrackNodeState& s,
                                              const Detection& d,
                                              bool componentwise) {
  if (componentwise) {
    const Vec3 dpos = s.pos - d.box.center;
    const Vec3 dsize = s.size - d.box.size;
    return {dpos[0], dpos[1],  dpos[2], dsize[0],
            dsize[1], dsize[2], angle_diff(s.yaw, d.box.yaw)};
  }
  const double dpos = norm(s.pos - d.box.center);
  const Vec3 ds = s.size - d.box.size;
  const double dsize = std::abs(ds[0]) + std::abs(ds[1]) + std::abs(ds[2]);
  return {dpos, dsize, std::abs(angle_diff(s.yaw, d.box.yaw))};
}

// Builds nodes, edges and adjacency; features are filled by a separate pass
// so augmentations can perturb positions without changing the structure.
inline TrackingGraph build_graph_structure(std::span<const Frame> frames,
                                           std::span<const TrackWindowInput> tracks,
                                           int num_classes,
                                           const GraphConfig& cfg) {
  if (frames.empty()) throw DataError("build_graph: empty window");
  if (static_cast<int>(frames.size()) > cfg.window)
    throw DataError("build_graph: more frames than the window size");

  TrackingGraph g;
  for (const Frame& f : frames) {
    g.frame_index.push_back(f.index);
    g.frame_time.push_back(f.timestamp);
  }

  // Detection nodes in canonical (frame, det_id) order.
  for (size_t fp = 0; fp < frames.size(); ++fp) {
    std::vector<const Detection*> dets;
    for (const Detection& d : frames[fp].detections) dets.push_back(&d);
    std::sort(dets.begin(), dets.end(),
              [](const Detection* a, const Detection* b) {
                return a->det_id < b->det_id;
              });
    for (const Detection* d : dets)
      g.dnodes.push_back({*d, static_cast<int>(fp)});
  }

  // Track nodes in (track_id, frame) order; one per window frame with state.
  std::vector<const TrackWindowInput*> sorted_tracks;
  for (const TrackWindowInput& t : tracks) sorted_tracks.push_back(&t);
  std::sort(sorted_tracks.begin(), sorted_tracks.end(),
            [](const TrackWindowInput* a, const TrackWindowInput* b) {
              return a->track_id < b->track_id;
            });
  for (const TrackWindowInput* t : sorted_tracks) {
    if (t->class_id < 0 || t->class_id >= num_classes)
      throw DataError("build_graph: track " + std::to_string(t->track_id) +
                      " has an unknown class");
    for (int fp = 0; fp < g.num_frames(); ++fp) {
      auto it = t->states.find(g.frame_index[fp]);
      if (it == t->states.end()) continue;
      g.tnodes.push_back({t->track_id, fp, t->class_id, it->second});
    }
  }

  // Detection edges: cross-frame, same class, gated by v_max * |dt|.
  const int nd = static_cast<int>(g.dnodes.size());
  for (int i = 0; i < nd; ++i) {
    for (int j = 0; j < nd; ++j) {
      const auto& a = g.dnodes[i];
      const auto& b = g.dnodes[j];
      if (a.fpos >= b.fpos) continue;
      if (a.det.class_id != b.det.class_id) continue;
      if (cfg.gate_detection_edges) {
        const double dt = g.frame_time[b.fpos] - g.frame_time[a.fpos];
        const double dist = norm(b.det.box.center - a.det.box.center);
        if (dist > cfg.v_max_for(a.det.class_id) * dt) continue;
      }
      const int e = static_cast<int>(g.dedges.size());
      g.dedges.push_back({i, j});
      g.dedge_lookup.emplace(TrackingGraph::edge_key(i, j), e);
    }
  }

  // Track edges: same frame, same class, gated by v_max * track_gate_dt.
  for (int k = 0; k < static_cast<int>(g.tnodes.size()); ++k) {
    const auto& tn = g.tnodes[k];
    for (int i = 0; i < nd; ++i) {
      const auto& dn = g.dnodes[i];
      if (dn.fpos != tn.fpos) continue;
      if (dn.det.class_id != tn.class_id) continue;
      if (cfg.gate_track_edges) {
        const double dist = norm(dn.det.box.center - tn.state.pos);
        if (dist > cfg.v_max_for(tn.class_id) * cfg.track_gate_dt) continue;
      }
      g.tedges.push_back({k, i});
    }
  }

  // Adjacency in edge-array order (canonical by construction).
  g.past_of.assign(nd, {});
  g.fut_of.assign(nd, {});
  g.tedges_of.assign(nd, {});
  g.tnode_edges.assign(g.tnodes.size(), {});
  for (int e = 0; e < static_cast<int>(g.dedges.size()); ++e) {
    g.fut_of[g.dedges[e].i].push_back(e);
    g.past_of[g.dedges[e].j].push_back(e);
  }
  for (int e = 0; e < static_cast<int>(g.tedges.size()); ++e) {
    g.tedges_of[g.tedges[e].i].push_back(e);
    g.tnode_edges[g.tedges[e].k].push_back(e);
  }
  return g;
}

inline void compute_graph_features(TrackingGraph& g, int num_classes,
                                   const GraphConfig& cfg) {
  const int C = num_classes;
  Vec3 center{};
  if (!g.dnodes.empty()) {
    for (const auto& n : g.dnodes) center = center + n.det.box.center;
    for (double& v : center) v /= static_cast<double>(g.dnodes.size());
  }
  g.center = center;

  g.xd = Mat(static_cast<int>(g.dnodes.size()), cfg.det_node_dim(C));
  for (size_t i = 0; i < g.dnodes.size(); ++i) {
    auto x = detection_node_feature(g.dnodes[i].det, center, C);
    std::copy(x.begin(), x.end(), g.xd.row(static_cast<int>(i)));
  }
  g.xt = Mat(static_cast<int>(g.tnodes.size()), cfg.track_node_dim(C));
  for (size_t k = 0; k < g.tnodes.size(); ++k) {
    auto x = track_node_feature(g.tnodes[k].state, g.tnodes[k].class_id, center, C);
    std::copy(x.begin(), x.end(), g.xt.row(static_cast<int>(k)));
  }
  g.xdd = Mat(static_cast<int>(g.dedges.size()), cfg.det_edge_dim());
  for (size_t e = 0; e < g.dedges.size(); ++e) {
    const auto& a = g.dnodes[g.dedges[e].i];
    const auto& b = g.dnodes[g.dedges[e].j];
    const double dt = g.frame_time[b.fpos] - g.frame_time[a.fpos];
    auto x = detection_edge_feature(a.det, b.det, dt);
    std::copy(x.begin(), x.end(), g.xdd.row(static_cast<int>(e)));
  }
  g.xtd = Mat(static_cast<int>(g.tedges.size()), cfg.track_edge_dim());
  for (size_t e = 0; e < g.tedges.size(); ++e) {
    const auto& tn = g.tnodes[g.tedges[e].k];
    const auto& dn = g.dnodes[g.tedges[e].i];
    auto x = track_edge_feature(tn.state, dn.det, cfg.componentwise_track_edge);
    std::copy(x.begin(), x.end(), g.xtd.row(static_cast<int>(e)));
  }
}

inline TrackingGraph build_graph(std::span<const Frame> frames,
                                 std::span<const TrackWindowInput> tracks,
                                 int num_classes, const GraphConfig& cfg) {
  TrackingGraph g = build_graph_structure(frames, tracks, num_classes, cfg);
  compute_graph_features(g, num_classes, cfg);
  return g;
}

}  // namespace gmot
