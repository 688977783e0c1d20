#pragma once

#include <array>
#include <cmath>
#include <map>
#include <string>
#include <vector>

#include "graphmot/core.hpp"
#include "graphmot/linalg.hpp"

namespace gmot {

// State layout: [x, y, z, yaw, l, w, h, vx, vy, vz, omega]
inline constexpr int kStateDim = 11;
// Observation layout: [x, y, z, yaw, l, w, h]
inline constexpr int kObsDim = 7;

struct KalmanState {
  std::vector<double> mean;  // kStateDim
  Mat cov;                   // kStateDim x kStateDim, symmetric PD
  int class_id = 0;
  int last_update_frame = -1;

  Vec3 position() const { return {mean[0], mean[1], mean[2]}; }
  Vec3 size() const { return {mean[4], mean[5], mean[6]}; }
  double yaw() const { return mean[3]; }

  BoundingBox3D box() const { return {position(), size(), yaw()}; }
};

// Diagonal per-class noise model. Q is process noise per unit time, R the
// observation noise, P0 the covariance of freshly initialized tracks.
struct KalmanParams {
  std::vector<std::array<double, kStateDim>> q_diag;
  std::vector<std::array<double, kObsDim>> r_diag;
  std::vector<std::array<double, kStateDim>> p0_diag;

  int num_classes() const { return static_cast<int>(q_diag.size()); }

  static KalmanParams defaults(int num_classes) {
    KalmanParams p;
    const std::array<double, kStateDim> q = {0.25, 0.25, 0.04, 0.02, 1e-4, 1e-4,
                                             1e-4, 1.0,  1.0,  0.04, 0.02};
    const std::array<double, kObsDim> r = {0.09, 0.09, 0.04, 0.02,
                                           0.01, 0.01, 0.01};
    for (int c = 0; c < num_classes; ++c) {
      p.q_diag.push_back(q);
      p.r_diag.push_back(r);
      p.p0_diag.push_back(lift_p0(r));
    }
    return p;
  }

  static std::array<double, kStateDim> lift_p0(
      const std::array<double, kObsDim>& r) {
    std::array<double, kStateDim> p0{};
    double rmax = 0;
    for (int i = 0; i < kObsDim; ++i) {
      p0[i] = r[i];
      rmax = std::max(rmax, r[i]);
    }
    for (int i = kObsDim; i < kStateDim; ++i) p0[i] = 100.0 * rmax;
    return p0;
  }
};

namespace detail {

inline Mat diag_mat(const double* d, int n) {
  Mat m(n, n);
  for (int i = 0; i < n; ++i) m(i, i) = d[i];
  return m;
}

inline void require_finite_state(const KalmanState& s) {
  for (double v : s.mean)
    if (!std::isfinite(v)) throw DataError("kalman: non-finite state mean");
  if (!s.cov.all_finite()) throw DataError("kalman: non-finite covariance");
}

}  // namespace detail

// Constant-velocity / constant-turn-rate prediction. Sizes carry no dynamics;
// Q scales linearly with dt.
inline KalmanState kalman_predict(const KalmanState& s, double dt,
                                  const KalmanParams& params) {
  if (!(dt > 0)) throw DataError("kalman: predict requires dt > 0");
  detail::require_finite_state(s);
  KalmanState out = s;
  out.mean[0] += s.mean[7] * dt;
  out.mean[1] += s.mean[8] * dt;
  out.mean[2] += s.mean[9] * dt;
  out.mean[3] = normalize_angle(s.mean[3] + s.mean[10] * dt);
  // F = I with F(0,7)=F(1,8)=F(2,9)=F(3,10)=dt
  Mat f(kStateDim, kStateDim);
  for (int i = 0; i < kStateDim; ++i) f(i, i) = 1.0;
  f(0, 7) = f(1, 8) = f(2, 9) = f(3, 10) = dt;
  Mat fp = mat_mul(f, s.cov);
  Mat ft = transposed(f);
  out.cov = mat_mul(fp, ft);
  const auto& q = params.q_diag[s.class_id];
  for (int i = 0; i < kStateDim; ++i) out.cov(i, i) += q[i] * dt;
  symmetrize(out.cov);
  return out;
}

// Standard Kalman correction with a 7-dim observation; yaw innovation runs
// through angle_diff. Joseph-form covariance update keeps the posterior PD.
inline KalmanState kalman_update(const KalmanState& s, const Detection& obs,
                                 const KalmanParams& params) {
  if (obs.class_id != s.class_id)
    throw DataError("kalman: observation class does not match track class");
  detail::require_finite_state(s);
  const auto& r = params.r_diag[s.class_id];
  // S = P[0:7,0:7] + R
  Mat innov_cov(kObsDim, kObsDim);
  for (int i = 0; i < kObsDim; ++i)
    for (int j = 0; j < kObsDim; ++j) innov_cov(i, j) = s.cov(i, j);
  for (int i = 0; i < kObsDim; ++i) innov_cov(i, i) += r[i];
  auto chol = cholesky(innov_cov);
  if (!chol)
    throw DataError("kalman: singular innovation covariance (degenerate R)");
  const Mat s_inv = chol_inverse(*chol);
  // K = P H^T S^-1 with H = [I7 | 0]
  Mat pht(kStateDim, kObsDim);
  for (int i = 0; i < kStateDim; ++i)
    for (int j = 0; j < kObsDim; ++j) pht(i, j) = s.cov(i, j);
  Mat gain = mat_mul(pht, s_inv);  // kStateDim x kObsDim
  std::array<double, kObsDim> innov{};
  innov[0] = obs.box.center[0] - s.mean[0];
  innov[1] = obs.box.center[1] - s.mean[1];
  innov[2] = obs.box.center[2] - s.mean[2];
  innov[3] = angle_diff(obs.box.yaw, s.mean[3]);
  innov[4] = obs.box.size[0] - s.mean[4];
  innov[5] = obs.box.size[1] - s.mean[5];
  innov[6] = obs.box.size[2] - s.mean[6];
  KalmanState out = s;
  for (int i = 0; i < kStateDim; ++i) {
    double dv = 0;
    for (int j = 0; j < kObsDim; ++j) dv += gain(i, j) * innov[j];
    out.mean[i] += dv;
  }
  out.mean[3] = normalize_angle(out.mean[3]);
  for (int i = 4; i < 7; ++i) out.mean[i] = std::max(out.mean[i], 1e-3);
  // P = (I - K H) P (I - K H)^T + K R K^T
  Mat ikh(kStateDim, kStateDim);
  for (int i = 0; i < kStateDim; ++i) ikh(i, i) = 1.0;
  for (int i = 0; i < kStateDim; ++i)
    for (int j = 0; j < kObsDim; ++j) ikh(i, j) -= gain(i, j);
  Mat tmp = mat_mul(ikh, s.cov);
  out.cov = mat_mul(tmp, transposed(ikh));
  for (int i = 0; i < kStateDim; ++i)
    for (int j = 0; j < kStateDim; ++j) {
      double krk = 0;
      for (int k = 0; k < kObsDim; ++k) krk += gain(i, k) * r[k] * gain(j, k);
      out.cov(i, j) += krk;
    }
  symmetrize(out.cov);
  out.last_update_frame = obs.frame;
  return out;
}

inline KalmanState init_track_state(const Detection& obs,
                                    const KalmanParams& params) {
  KalmanState s;
  s.mean.assign(kStateDim, 0.0);
  s.mean[0] = obs.box.center[0];
  s.mean[1] = obs.box.center[1];
  s.mean[2] = obs.box.center[2];
  s.mean[3] = obs.box.yaw;
  s.mean[4] = obs.box.size[0];
  s.mean[5] = obs.box.size[1];
  s.mean[6] = obs.box.size[2];
  s.mean[7] = obs.vx;
  s.mean[8] = obs.vy;
  s.mean[9] = 0.0;
  s.mean[10] = 0.0;
  s.class_id = obs.class_id;
  s.last_update_frame = obs.frame;
  const auto& p0 = params.p0_diag[obs.class_id];
  s.cov = detail::diag_mat(p0.data(), kStateDim);
  return s;
}

namespace detail {

struct Welford {
  long n = 0;
  double mean = 0;
  double m2 = 0;

  void add(double x) {
    ++n;
    const double d = x - mean;
    mean += d / n;
    m2 += d * (x - mean);
  }

  double variance() const { return n > 1 ? m2 / (n - 1) : 0.0; }
};

// Per-frame track state reconstructed from GT boxes: velocities by forward
// difference, turn rate from wrapped yaw increments.
struct GtStateSeq {
  std::vector<double> t;
  std::vector<std::array<double, kStateDim>> s;
};

inline GtStateSeq gt_state_sequence(const Scene& scene,
                                    const std::vector<const GtBox*>& boxes) {
  GtStateSeq seq;
  for (const GtBox* g : boxes) {
    const Frame* f = scene.find_frame(g->frame);
    seq.t.push_back(f->timestamp);
    std::array<double, kStateDim> st{};
    st[0] = g->box.center[0];
    st[1] = g->box.center[1];
    st[2] = g->box.center[2];
    st[3] = g->box.yaw;
    st[4] = g->box.size[0];
    st[5] = g->box.size[1];
    st[6] = g->box.size[2];
    seq.s.push_back(st);
  }
  const size_t n = seq.s.size();
  for (size_t i = 0; i < n; ++i) {
    const size_t a = (i + 1 < n) ? i : i - 1;
    const size_t b = (i + 1 < n) ? i + 1 : i;
    const double dt = seq.t[b] - seq.t[a];
    if (dt > 0) {
      seq.s[i][7] = (seq.s[b][0] - seq.s[a][0]) / dt;
      seq.s[i][8] = (seq.s[b][1] - seq.s[a][1]) / dt;
      seq.s[i][9] = (seq.s[b][2] - seq.s[a][2]) / dt;
      seq.s[i][10] = angle_diff(seq.s[b][3], seq.s[a][3]) / dt;
    }
  }
  return seq;
}

}  // namespace detail

struct EstimatedParams {
  KalmanParams params;
  std::vector<std::string> warnings;
};

// Learns diagonal Q from the variance of GT state increments per unit time
// (after removing the deterministic motion) and diagonal R from detection-GT
// residuals. Classes with no data fall back to defaults with a warning.
inline EstimatedParams estimate_params(const std::vector<Scene>& scenes,
                                       double match_radius = 2.0) {
  int num_classes = 0;
  for (const Scene& s : scenes)
    num_classes = std::max(num_classes, s.classes.count());
  if (num_classes == 0) throw DataError("estimate_params: no scenes");

  std::vector<std::array<detail::Welford, kStateDim>> qw(num_classes);
  std::vector<std::array<detail::Welford, kObsDim>> rw(num_classes);

  for (const Scene& scene : scenes) {
    if (!scene.has_gt()) continue;
    // Group GT boxes by track.
    std::map<int, std::vector<const GtBox*>> tracks;
    for (const GtBox& g : scene.gt) tracks[g.track_id].push_back(&g);
    for (auto& [tid, boxes] : tracks) {
      if (boxes.size() < 2) continue;
      const int cls = boxes.front()->class_id;
      auto seq = detail::gt_state_sequence(scene, boxes);
      for (size_t i = 0; i + 1 < seq.s.size(); ++i) {
        const double dt = seq.t[i + 1] - seq.t[i];
        if (!(dt > 0)) continue;
        const auto& a = seq.s[i];
        const auto& b = seq.s[i + 1];
        std::array<double, kStateDim> resid{};
        resid[0] = b[0] - (a[0] + a[7] * dt);
        resid[1] = b[1] - (a[1] + a[8] * dt);
        resid[2] = b[2] - (a[2] + a[9] * dt);
        resid[3] = angle_diff(b[3], a[3] + a[10] * dt);
        for (int k = 4; k < 7; ++k) resid[k] = b[k] - a[k];
        for (int k = 7; k < kStateDim; ++k) resid[k] = b[k] - a[k];
        const double inv_sqrt_dt = 1.0 / std::sqrt(dt);
        for (int k = 0; k < kStateDim; ++k)
          qw[cls][k].add(resid[k] * inv_sqrt_dt);
      }
    }
    // Observation residuals from matched detections.
    auto match = gt_matching(scene, match_radius);
    std::map<std::pair<int, int>, const GtBox*> gt_index;
    for (const GtBox& g : scene.gt) gt_index[{g.track_id, g.frame}] = &g;
    for (const Frame& f : scene.frames) {
      for (const Detection& d : f.detections) {
        auto it = match.find(d.det_id);
        if (it == match.end()) continue;
        const GtBox* g = gt_index.at({it->second, f.index});
        rw[d.class_id][0].add(d.box.center[0] - g->box.center[0]);
        rw[d.class_id][1].add(d.box.center[1] - g->box.center[1]);
        rw[d.class_id][2].add(d.box.center[2] - g->box.center[2]);
        rw[d.class_id][3].add(angle_diff(d.box.yaw, g->box.yaw));
        rw[d.class_id][4].add(d.box.size[0] - g->box.size[0]);
        rw[d.class_id][5].add(d.box.size[1] - g->box.size[1]);
        rw[d.class_id][6].add(d.box.size[2] - g->box.size[2]);
      }
    }
  }

  constexpr double kVarFloor = 1e-10;
  EstimatedParams out;
  out.params = KalmanParams::defaults(num_classes);
  for (int c = 0; c < num_classes; ++c) {
    if (qw[c][0].n < 2 || rw[c][0].n < 2) {
      out.warnings.push_back("class " + std::to_string(c) +
                             ": no data, using default noise parameters");
      continue;
    }
    for (int k = 0; k < kStateDim; ++k)
      out.params.q_diag[c][k] = std::max(qw[c][k].variance(), kVarFloor);
    for (int k = 0; k < kObsDim; ++k)
      out.params.r_diag[c][k] = std::max(rw[c][k].variance(), kVarFloor);
    out.params.p0_diag[c] = KalmanParams::lift_p0(out.params.r_diag[c]);
  }
  return out;
}

}  // namespace gmot
