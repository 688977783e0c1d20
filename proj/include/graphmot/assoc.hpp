#pragma once

#include <algorithm>
#include <unordered_map>
#include <vector>

#include "graphmot/graph.hpp"
#include "graphmot/nmp.hpp"
#include "graphmot/rng.hpp"

namespace gmot {

// Classifier score >= 0.5 makes a graph element active.
struct ActiveSets {
  std::vector<char> d, dd, td;  // aligned with the graph arrays
};

inline ActiveSets active_sets(const GraphScores& s) {
  ActiveSets a;
  a.d.resize(s.d.size());
  a.dd.resize(s.dd.size());
  a.td.resize(s.td.size());
  for (size_t i = 0; i < s.d.size(); ++i) a.d[i] = s.d[i] >= 0.5;
  for (size_t i = 0; i < s.dd.size(); ++i) a.dd[i] = s.dd[i] >= 0.5;
  for (size_t i = 0; i < s.td.size(); ++i) a.td[i] = s.td[i] >= 0.5;
  return a;
}

// At most one detection node per window frame, chosen for one track.
struct Assignment {
  std::vector<int> nodes;  // det node indices, ascending frame
  long gamma = 0;
  double total_score = 0;

  bool empty() const { return nodes.empty(); }
};

struct CandidateSets {
  std::vector<int> nodes;  // detections reachable through an active track edge
  std::vector<int> edges;  // active detection edges between those nodes
};

// C_D,n and C_DD,n for one track, given its track-node indices in the graph.
inline CandidateSets candidate_sets(const TrackingGraph& g,
                                    const ActiveSets& sets,
                                    const std::vector<int>& track_tnodes) {
  CandidateSets c;
  for (int k : track_tnodes) {
    for (int e : g.tnode_edges[k]) {
      if (sets.td[e]) c.nodes.push_back(g.tedges[e].i);
    }
  }
  std::sort(c.nodes.begin(), c.nodes.end());
  c.nodes.erase(std::unique(c.nodes.begin(), c.nodes.end()), c.nodes.end());
  for (size_t a = 0; a < c.nodes.size(); ++a) {
    for (size_t b = a + 1; b < c.nodes.size(); ++b) {
      const int e = g.find_dedge(c.nodes[a], c.nodes[b]);
      if (e >= 0 && sets.dd[e]) c.edges.push_back(e);
    }
  }
  return c;
}

// Gamma: active detection edges internal to the assignment, each counted once.
inline long assignment_quality(const TrackingGraph& g, const ActiveSets& sets,
                               const std::vector<int>& nodes) {
  long gamma = 0;
  for (size_t a = 0; a < nodes.size(); ++a)
    for (size_t b = a + 1; b < nodes.size(); ++b) {
      const int e = g.find_dedge(nodes[a], nodes[b]);
      if (e >= 0 && sets.dd[e]) ++gamma;
    }
  return gamma;
}

namespace assocdetail {

// Per-frame candidate lists from active track edges, capped at
// max_candidates by descending track-edge score.
inline std::vector<std::vector<int>> frame_candidates(
    const TrackingGraph& g, const ActiveSets& sets,
    const std::vector<double>& td_scores, const std::vector<int>& track_tnodes,
    int max_candidates) {
  std::vector<std::vector<int>> per_frame(g.num_frames());
  for (int k : track_tnodes) {
    const int fpos = g.tnodes[k].fpos;
    std::vector<std::pair<double, int>> cands;  // (score, node)
    for (int e : g.tnode_edges[k]) {
      if (!sets.td[e]) continue;
      cands.push_back({td_scores.empty() ? 1.0 : td_scores[e], g.tedges[e].i});
    }
    std::sort(cands.begin(), cands.end(), [](const auto& a, const auto& b) {
      if (a.first != b.first) return a.first > b.first;
      return a.second < b.second;
    });
    if (static_cast<int>(cands.size()) > max_candidates)
      cands.resize(max_candidates);
    auto& out = per_frame[fpos];
    for (const auto& [s, n] : cands) out.push_back(n);
    std::sort(out.begin(), out.end());
    out.erase(std::unique(out.begin(), out.end()), out.end());
  }
  return per_frame;
}

}  // namespace assocdetail

// Exhaustive search over per-frame choices (one candidate or none per frame).
// Ties resolve by: max gamma, then fewest nodes, then highest summed
// detection score, then a seeded random pick.
inline Assignment best_assignment(const TrackingGraph& g, const ActiveSets& sets,
                                  const std::vector<double>& td_scores,
                                  const std::vector<int>& track_tnodes,
                                  int max_candidates, Rng& rng) {
  const auto per_frame = assocdetail::frame_candidates(g, sets, td_scores,
                                                       track_tnodes,
                                                       max_candidates);
  std::vector<Assignment> best;
  std::vector<int> current;
  std::function<void(int)> recurse = [&](int fpos) {
    if (fpos == g.num_frames()) {
      Assignment a;
      a.nodes = current;
      a.gamma = assignment_quality(g, sets, a.nodes);
      for (int n : a.nodes) a.total_score += g.dnodes[n].det.score;
      if (best.empty()) {
        best.push_back(std::move(a));
        return;
      }
      const Assignment& b = best.front();
      // Higher gamma wins; then fewer nodes; then higher detection score.
      int cmp = 0;
      if (a.gamma != b.gamma)
        cmp = a.gamma > b.gamma ? 1 : -1;
      else if (a.nodes.size() != b.nodes.size())
        cmp = a.nodes.size() < b.nodes.size() ? 1 : -1;
      else if (a.total_score != b.total_score)
        cmp = a.total_score > b.total_score ? 1 : -1;
      if (cmp > 0) {
        best.clear();
        best.push_back(std::move(a));
      } else if (cmp == 0) {
        best.push_back(std::move(a));
      }
      return;
    }
    recurse(fpos + 1);  // no selection at this frame
    for (int n : per_frame[fpos]) {
      current.push_back(n);
      recurse(fpos + 1);
      current.pop_back();
    }
  };
  recurse(0);
  if (best.size() == 1) return best.front();
  return best[rng.uniform_int(0, static_cast<int>(best.size()) - 1)];
}

// One track to process in the greedy update, oldest first.
struct TrackCandidate {
  int track_id = 0;
  int age = 0;
  std::vector<int> tnodes;  // graph track-node indices
};

struct GreedyResult {
  std::vector<std::pair<int, Assignment>> assignments;  // processing order
  std::vector<char> used;                               // per detection node
  ActiveSets remaining;
};

// Supplement Algorithm 1: tracks sorted by descending age (ties by ascending
// id), each selection removes all active edges touching the chosen nodes.
inline GreedyResult greedy_update(const TrackingGraph& g, const ActiveSets& sets,
                                  const std::vector<double>& td_scores,
                                  std::vector<TrackCandidate> tracks,
                                  int max_candidates, Rng& rng) {
  GreedyResult res;
  res.remaining = sets;
  res.used.assign(g.dnodes.size(), 0);
  std::sort(tracks.begin(), tracks.end(),
            [](const TrackCandidate& a, const TrackCandidate& b) {
              if (a.age != b.age) return a.age > b.age;
              return a.track_id < b.track_id;
            });
  for (const TrackCandidate& t : tracks) {
    Assignment a = best_assignment(g, res.remaining, td_scores, t.tnodes,
                                   max_candidates, rng);
    for (int n : a.nodes) {
      res.used[n] = 1;
      for (int e : g.tedges_of[n]) res.remaining.td[e] = 0;
      for (int e : g.past_of[n]) res.remaining.dd[e] = 0;
      for (int e : g.fut_of[n]) res.remaining.dd[e] = 0;
    }
    res.assignments.push_back({t.track_id, std::move(a)});
  }
  return res;
}

// Termination rule: strictly more than `max_stale_frames` frames or strictly
// more than `max_stale_time` seconds without an update.
inline bool track_is_stale(int last_update_frame, double last_update_time,
                           int current_frame, double current_time,
                           int max_stale_frames = 3,
                           double max_stale_time = 1.5) {
  return (current_frame - last_update_frame) > max_stale_frames ||
         (current_time - last_update_time) > max_stale_time;
}

// Two-step initialization. Step B pairs each previous-step preliminary node
// (now second-to-last frame) with the unused active newest-frame node of the
// highest detection score reachable through an active detection edge; step A
// labels the remaining unused active newest-frame nodes preliminary.
struct InitSpawn {
  int prelim_node = -1;  // detection node index, second-to-last frame
  int newest_node = -1;  // detection node index, newest frame
};

struct InitResult {
  std::vector<InitSpawn> spawns;
  std::vector<int> new_preliminary;  // detection node indices, newest frame
};

inline InitResult initialize_tracks(const TrackingGraph& g,
                                    const ActiveSets& remaining,
                                    std::vector<char>& used,
                                    const std::vector<long>& prelim_det_ids) {
  InitResult out;
  const int newest = g.newest_fpos();
  std::unordered_map<long, int> node_of_det;
  for (size_t i = 0; i < g.dnodes.size(); ++i)
    node_of_det[g.dnodes[i].det.det_id] = static_cast<int>(i);

  if (g.num_frames() >= 2) {
    std::vector<long> prelim = prelim_det_ids;
    std::sort(prelim.begin(), prelim.end());
    for (long det_id : prelim) {
      auto it = node_of_det.find(det_id);
      if (it == node_of_det.end()) continue;
      const int pn = it->second;
      if (g.dnodes[pn].fpos != newest - 1 || used[pn]) continue;
      int best_node = -1;
      double best_score = -1.0;
      for (int e : g.fut_of[pn]) {
        if (!remaining.dd[e]) continue;
        const int j = g.dedges[e].j;
        if (g.dnodes[j].fpos != newest || used[j] || !remaining.d[j]) continue;
        const double s = g.dnodes[j].det.score;
        if (s > best_score || (s == best_score && j < best_node)) {
          best_score = s;
          best_node = j;
        }
      }
      if (best_node >= 0) {
        used[pn] = 1;
        used[best_node] = 1;
        out.spawns.push_back({pn, best_node});
      }
    }
  }
  for (size_t i = 0; i < g.dnodes.size(); ++i) {
    if (g.dnodes[i].fpos != newest) continue;
    if (!remaining.d[i] || used[i]) continue;
    out.new_preliminary.push_back(static_cast<int>(i));
  }
  return out;
}

}  // namespace gmot
