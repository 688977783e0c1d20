#pragma once

#include <algorithm>
#include <vector>

#include "graphmot/assoc.hpp"
#include "graphmot/kalman.hpp"
#include "graphmot/tracker.hpp"

namespace gmot {

// Classical oracle-free reference tracker: per frame, tracks are predicted
// and matched to same-class detections greedily by ascending Mahalanobis
// distance of the 7-dim innovation; unmatched detections start new tracks
// immediately. Lifecycle rules mirror the main tracker.
struct MahalanobisConfig {
  double gate = 14.07;  // squared-distance gate (chi-square 95%, 7 dof)
  int max_stale_frames = 3;
  double max_stale_time = 1.5;
  double score_smooth = 0.5;
  double coast_decay = 0.9;
};

inline std::vector<TrackOutput> run_mahalanobis(const Scene& scene,
                                                const KalmanParams& params,
                                                const MahalanobisConfig& cfg) {
  struct MTrack {
    int id;
    KalmanState state;
    int last_update_frame;
    double last_update_time;
    double score;
  };
  std::vector<MTrack> tracks;
  std::vector<TrackOutput> outputs;
  int next_id = 0;
  double prev_time = 0;
  bool first = true;

  for (const Frame& f : scene.frames) {
    if (!first) {
      const double dt = f.timestamp - prev_time;
      for (MTrack& t : tracks) t.state = kalman_predict(t.state, dt, params);
    }
    first = false;
    prev_time = f.timestamp;

    // Squared Mahalanobis distance per same-class (track, det) pair.
    struct Cand {
      double d2;
      size_t ti;
      size_t di;
    };
    std::vector<Cand> cands;
    for (size_t ti = 0; ti < tracks.size(); ++ti) {
      const KalmanState& s = tracks[ti].state;
      Mat innov_cov(kObsDim, kObsDim);
      for (int i = 0; i < kObsDim; ++i)
        for (int j = 0; j < kObsDim; ++j) innov_cov(i, j) = s.cov(i, j);
      const auto& r = params.r_diag[s.class_id];
      for (int i = 0; i < kObsDim; ++i) innov_cov(i, i) += r[i];
      auto chol = cholesky(innov_cov);
      if (!chol) continue;
      for (size_t di = 0; di < f.detections.size(); ++di) {
        const Detection& d = f.detections[di];
        if (d.class_id != s.class_id) continue;
        std::vector<double> innov(kObsDim);
        innov[0] = d.box.center[0] - s.mean[0];
        innov[1] = d.box.center[1] - s.mean[1];
        innov[2] = d.box.center[2] - s.mean[2];
        innov[3] = angle_diff(d.box.yaw, s.mean[3]);
        innov[4] = d.box.size[0] - s.mean[4];
        innov[5] = d.box.size[1] - s.mean[5];
        innov[6] = d.box.size[2] - s.mean[6];
        const std::vector<double> x = chol_solve(*chol, innov);
        double d2 = 0;
        for (int k = 0; k < kObsDim; ++k) d2 += innov[k] * x[k];
        if (d2 <= cfg.gate) cands.push_back({d2, ti, di});
      }
    }
    std::sort(cands.begin(), cands.end(), [](const Cand& a, const Cand& b) {
      return std::tie(a.d2, a.ti, a.di) < std::tie(b.d2, b.ti, b.di);
    });
    std::vector<char> track_used(tracks.size(), 0), det_used(f.detections.size(), 0);
    for (const Cand& c : cands) {
      if (track_used[c.ti] || det_used[c.di]) continue;
      track_used[c.ti] = 1;
      det_used[c.di] = 1;
      MTrack& t = tracks[c.ti];
      t.state = kalman_update(t.state, f.detections[c.di], params);
      t.last_update_frame = f.index;
      t.last_update_time = f.timestamp;
      t.score = cfg.score_smooth * t.score +
                (1.0 - cfg.score_smooth) * f.detections[c.di].score;
    }
    for (size_t ti = 0; ti < tracks.size(); ++ti)
      if (!track_used[ti]) tracks[ti].score *= cfg.coast_decay;

    std::erase_if(tracks, [&](const MTrack& t) {
      return track_is_stale(t.last_update_frame, t.last_update_time, f.index,
                            f.timestamp, cfg.max_stale_frames,
                            cfg.max_stale_time);
    });

    for (size_t di = 0; di < f.detections.size(); ++di) {
      if (det_used[di]) continue;
      const Detection& d = f.detections[di];
      MTrack t;
      t.id = next_id++;
      t.state = init_track_state(d, params);
      t.last_update_frame = f.index;
      t.last_update_time = f.timestamp;
      t.score = d.score;
      tracks.push_back(std::move(t));
    }

    TrackOutput out;
    out.frame = f.index;
    for (const MTrack& t : tracks)
      out.tracks.push_back({t.id, t.state.box(), t.state.class_id, t.score});
    std::sort(out.tracks.begin(), out.tracks.end(),
              [](const TrackOutputEntry& a, const TrackOutputEntry& b) {
                return a.id < b.id;
              });
    outputs.push_back(std::move(out));
  }
  return outputs;
}

}  // namespace gmot
