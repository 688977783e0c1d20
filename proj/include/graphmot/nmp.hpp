#pragma once

#include <array>
#include <cmath>
#include <fstream>
#include <functional>
#include <map>
#include <string>
#include <vector>

#include "graphmot/graph.hpp"
#include "graphmot/nn.hpp"

namespace gmot {

inline constexpr int kLatentDim = 128;

// Per-entry normalization statistics for one raw feature kind.
struct FeatureStats {
  std::vector<double> mean;
  std::vector<double> std;

  static FeatureStats unit(int dim) {
    FeatureStats s;
    s.mean.assign(dim, 0.0);
    s.std.assign(dim, 1.0);
    return s;
  }
};

template <typename R>
struct NmpModelT {
  int C = 0;       // class vocabulary size
  int L = 4;       // message passing iterations
  int td_dim = 3;  // track-edge feature width (3 scalar / 7 componentwise)

  FeatureStats stats_d, stats_t, stats_dd, stats_td;
  KalmanParams kalman;

  DenseNetT<R> enc_d, enc_t, enc_dd, enc_td;
  DenseNetT<R> n_dd, n_td;
  DenseNetT<R> nd_past, nd_fut, nd_track, nd_comb;
  DenseNetT<R> nt_msg, nt_comb;
  DenseNetT<R> cls_d, cls_dd, cls_td;

  template <typename F>
  void for_each_net(F&& f) {
    f("enc_d", enc_d);
    f("enc_t", enc_t);
    f("enc_dd", enc_dd);
    f("enc_td", enc_td);
    f("n_dd", n_dd);
    f("n_td", n_td);
    f("nd_past", nd_past);
    f("nd_fut", nd_fut);
    f("nd_track", nd_track);
    f("nd_comb", nd_comb);
    f("nt_msg", nt_msg);
    f("nt_comb", nt_comb);
    f("cls_d", cls_d);
    f("cls_dd", cls_dd);
    f("cls_td", cls_td);
  }

  template <typename F>
  void for_each_net(F&& f) const {
    const_cast<NmpModelT*>(this)->for_each_net(
        [&](const char* name, DenseNetT<R>& net) {
          f(name, const_cast<const DenseNetT<R>&>(net));
        });
  }
};

using NmpModel = NmpModelT<double>;

inline constexpr int kNumNets = 15;

inline std::vector<int> expected_net_sizes(const std::string& name, int C,
                                           int td_dim) {
  if (name == "enc_d") return {12 + C, 64, kLatentDim};
  if (name == "enc_t") return {8 + C, 64, kLatentDim};
  if (name == "enc_dd") return {10, 64, kLatentDim};
  if (name == "enc_td") return {td_dim, 64, kLatentDim};
  if (name == "n_dd" || name == "n_td")
    return {4 * kLatentDim, 256, 256, kLatentDim};
  if (name == "nd_past" || name == "nd_fut" || name == "nd_track" ||
      name == "nt_msg")
    return {3 * kLatentDim, 256, 256, kLatentDim};
  if (name == "nd_comb") return {3 * kLatentDim, kLatentDim};
  if (name == "nt_comb") return {kLatentDim, kLatentDim};
  if (name == "cls_d" || name == "cls_dd" || name == "cls_td")
    return {kLatentDim, 128, 32, 8, 1};
  throw std::logic_error("unknown net '" + name + "'");
}

inline NmpModel init_nmp_model(int C, int L, int td_dim, uint64_t seed) {
  if (L < 1) throw DataError("nmp: L must be >= 1");
  NmpModel m;
  m.C = C;
  m.L = L;
  m.td_dim = td_dim;
  m.stats_d = FeatureStats::unit(12 + C);
  m.stats_t = FeatureStats::unit(8 + C);
  m.stats_dd = FeatureStats::unit(10);
  m.stats_td = FeatureStats::unit(td_dim);
  m.kalman = KalmanParams::defaults(C);
  Rng rng(mix_seed(seed, 0x6d6f64656cULL));
  m.for_each_net([&](const char* name, DenseNet& net) {
    const auto sizes = expected_net_sizes(name, C, td_dim);
    const bool classifier = std::string(name).rfind("cls_", 0) == 0;
    net = make_mlp(sizes, classifier ? Act::Sigmoid : Act::ReLU, rng);
  });
  return m;
}

template <typename R>
inline NmpModelT<R> cast_model(const NmpModel& m) {
  NmpModelT<R> out;
  out.C = m.C;
  out.L = m.L;
  out.td_dim = m.td_dim;
  out.stats_d = m.stats_d;
  out.stats_t = m.stats_t;
  out.stats_dd = m.stats_dd;
  out.stats_td = m.stats_td;
  out.kalman = m.kalman;
  const NmpModel* src = &m;
  NmpModelT<R>* dst = &out;
  std::map<std::string, const DenseNet*> nets;
  src->for_each_net([&](const char* name, const DenseNet& n) { nets[name] = &n; });
  dst->for_each_net([&](const char* name, DenseNetT<R>& n) {
    n = cast_net<R>(*nets.at(name));
  });
  return out;
}

// Latent features h^(0..L) plus per-iteration classifier scores. Scores at
// index l-1 belong to iteration l.
template <typename R>
struct LatentGraphT {
  std::vector<MatT<R>> hd, ht, hdd, htd;
  std::vector<std::vector<R>> yd, ydd, ytd;
  MatT<R> nxd, nxt, nxdd, nxtd;  // normalized raw features

  int levels() const { return static_cast<int>(hd.size()) - 1; }
};

using LatentGraph = LatentGraphT<double>;

namespace nmpdetail {

template <typename R>
inline MatT<R> normalize_features(const Mat& raw, const FeatureStats& st) {
  if (raw.cols != static_cast<int>(st.mean.size()))
    throw DataError("nmp: feature width does not match model statistics");
  MatT<R> out(raw.rows, raw.cols);
  for (int i = 0; i < raw.rows; ++i) {
    const double* r = raw.row(i);
    R* o = out.row(i);
    for (int j = 0; j < raw.cols; ++j) {
      const double sd = st.std[j] > 1e-6 ? st.std[j] : 1e-6;
      o[j] = static_cast<R>((r[j] - st.mean[j]) / sd);
    }
  }
  return out;
}

template <typename R>
inline void copy_block(MatT<R>& dst, int row, int col, const MatT<R>& src,
                       int src_row) {
  R* d = dst.row(row) + col;
  const R* s = src.row(src_row);
  for (int j = 0; j < src.cols; ++j) d[j] = s[j];
}

template <typename R>
inline void add_block(MatT<R>& dst, int row, const MatT<R>& src, int src_row,
                      int src_col, int n) {
  R* d = dst.row(row);
  const R* s = src.row(src_row) + src_col;
  for (int j = 0; j < n; ++j) d[j] += s[j];
}

// Inputs for the edge update nets: [h_a, h_b, h_edge^(l-1), h_edge^(0)].
template <typename R>
inline MatT<R> gather_edge_inputs(const MatT<R>& ha, const std::vector<int>& ia,
                                  const MatT<R>& hb, const std::vector<int>& ib,
                                  const MatT<R>& he_prev, const MatT<R>& he0) {
  const int n = static_cast<int>(ia.size());
  MatT<R> in(n, 4 * kLatentDim);
  for (int e = 0; e < n; ++e) {
    copy_block(in, e, 0, ha, ia[e]);
    copy_block(in, e, kLatentDim, hb, ib[e]);
    copy_block(in, e, 2 * kLatentDim, he_prev, e);
    copy_block(in, e, 3 * kLatentDim, he0, e);
  }
  return in;
}

// Inputs for message nets: [h_edge^(l), h_recv^(l-1), h_recv^(0)].
template <typename R>
inline MatT<R> gather_msg_inputs(const MatT<R>& he, const std::vector<int>& recv,
                                 const MatT<R>& h_prev, const MatT<R>& h0) {
  const int n = static_cast<int>(recv.size());
  MatT<R> in(n, 3 * kLatentDim);
  for (int e = 0; e < n; ++e) {
    copy_block(in, e, 0, he, e);
    copy_block(in, e, kLatentDim, h_prev, recv[e]);
    copy_block(in, e, 2 * kLatentDim, h0, recv[e]);
  }
  return in;
}

template <typename R>
inline void scatter_add(MatT<R>& dst, const std::vector<int>& recv,
                        const MatT<R>& rows, int dst_col = 0) {
  for (int e = 0; e < rows.rows; ++e) {
    R* d = dst.row(recv[e]) + dst_col;
    const R* s = rows.row(e);
    for (int j = 0; j < rows.cols; ++j) d[j] += s[j];
  }
}

template <typename R>
inline std::vector<R> column0(const MatT<R>& m) {
  std::vector<R> v(m.rows);
  for (int i = 0; i < m.rows; ++i) v[i] = m(i, 0);
  return v;
}

struct EdgeReceivers {
  std::vector<int> dd_i, dd_j;      // endpoints of detection edges
  std::vector<int> td_k, td_i;      // endpoints of track edges
};

inline EdgeReceivers receivers(const TrackingGraph& g) {
  EdgeReceivers r;
  r.dd_i.reserve(g.dedges.size());
  r.dd_j.reserve(g.dedges.size());
  for (const auto& e : g.dedges) {
    r.dd_i.push_back(e.i);
    r.dd_j.push_back(e.j);
  }
  r.td_k.reserve(g.tedges.size());
  r.td_i.reserve(g.tedges.size());
  for (const auto& e : g.tedges) {
    r.td_k.push_back(e.k);
    r.td_i.push_back(e.i);
  }
  return r;
}

}  // namespace nmpdetail

// Stage 1: z-score the raw features and encode every element to 128 dims.
template <typename R>
inline LatentGraphT<R> embed(const TrackingGraph& g, const NmpModelT<R>& m) {
  LatentGraphT<R> lg;
  lg.nxd = nmpdetail::normalize_features<R>(g.xd, m.stats_d);
  lg.nxt = nmpdetail::normalize_features<R>(g.xt, m.stats_t);
  lg.nxdd = nmpdetail::normalize_features<R>(g.xdd, m.stats_dd);
  lg.nxtd = nmpdetail::normalize_features<R>(g.xtd, m.stats_td);
  lg.hd.push_back(forward_batch(m.enc_d, lg.nxd));
  lg.ht.push_back(forward_batch(m.enc_t, lg.nxt));
  lg.hdd.push_back(forward_batch(m.enc_dd, lg.nxdd));
  lg.htd.push_back(forward_batch(m.enc_td, lg.nxtd));
  return lg;
}

// Stage 2, one iteration: edges first, then nodes. Messages aggregate by
// summation in canonical edge order; empty neighborhoods contribute zeros.
template <typename R>
inline void nmp_iteration(LatentGraphT<R>& lg, const TrackingGraph& g,
                          const NmpModelT<R>& m, int l) {
  using namespace nmpdetail;
  if (l < 1 || l != static_cast<int>(lg.hd.size()))
    throw std::logic_error("nmp_iteration: levels must be computed in order");
  const auto rec = receivers(g);
  const MatT<R>& hd_prev = lg.hd[l - 1];
  const MatT<R>& ht_prev = lg.ht[l - 1];

  // Edge updates.
  MatT<R> hdd_l = forward_batch(
      m.n_dd, gather_edge_inputs(hd_prev, rec.dd_i, hd_prev, rec.dd_j,
                                 lg.hdd[l - 1], lg.hdd[0]));
  MatT<R> htd_l = forward_batch(
      m.n_td, gather_edge_inputs(ht_prev, rec.td_k, hd_prev, rec.td_i,
                                 lg.htd[l - 1], lg.htd[0]));

  // Detection-node messages, aggregated per neighborhood type.
  const int nd = static_cast<int>(g.dnodes.size());
  MatT<R> comb_in(nd, 3 * kLatentDim);
  scatter_add(comb_in, rec.dd_j,
              forward_batch(m.nd_past,
                            gather_msg_inputs(hdd_l, rec.dd_j, hd_prev, lg.hd[0])),
              0);
  scatter_add(comb_in, rec.dd_i,
              forward_batch(m.nd_fut,
                            gather_msg_inputs(hdd_l, rec.dd_i, hd_prev, lg.hd[0])),
              kLatentDim);
  scatter_add(comb_in, rec.td_i,
              forward_batch(m.nd_track,
                            gather_msg_inputs(htd_l, rec.td_i, hd_prev, lg.hd[0])),
              2 * kLatentDim);
  lg.hd.push_back(forward_batch(m.nd_comb, comb_in));

  // Track-node messages.
  const int nt = static_cast<int>(g.tnodes.size());
  MatT<R> mt(nt, kLatentDim);
  scatter_add(mt, rec.td_k,
              forward_batch(m.nt_msg,
                            gather_msg_inputs(htd_l, rec.td_k, ht_prev, lg.ht[0])),
              0);
  lg.ht.push_back(forward_batch(m.nt_comb, mt));

  lg.hdd.push_back(std::move(hdd_l));
  lg.htd.push_back(std::move(htd_l));
}

// Stage 3: sigmoid heads on the level-l latents.
template <typename R>
inline void classify(LatentGraphT<R>& lg, const NmpModelT<R>& m, int l) {
  using nmpdetail::column0;
  if (l < 1 || l >= static_cast<int>(lg.hd.size()))
    throw std::logic_error("classify: level not computed");
  if (static_cast<int>(lg.yd.size()) != l - 1)
    throw std::logic_error("classify: levels must be classified in order");
  lg.yd.push_back(column0(forward_batch(m.cls_d, lg.hd[l])));
  lg.ydd.push_back(column0(forward_batch(m.cls_dd, lg.hdd[l])));
  lg.ytd.push_back(column0(forward_batch(m.cls_td, lg.htd[l])));
}

// Full forward pass: embed, L iterations, classification after each.
template <typename R>
inline LatentGraphT<R> nmp_forward(const TrackingGraph& g, const NmpModelT<R>& m,
                                   int L_override = -1) {
  const int L = L_override >= 0 ? L_override : m.L;
  if (L < 1) throw DataError("nmp: L must be >= 1");
  LatentGraphT<R> lg = embed(g, m);
  for (int l = 1; l <= L; ++l) {
    nmp_iteration(lg, g, m, l);
    classify(lg, m, l);
  }
  return lg;
}

// Final-iteration scores as doubles, ready for the association stage.
struct GraphScores {
  std::vector<double> d, dd, td;
};

template <typename R>
inline GraphScores final_scores(const LatentGraphT<R>& lg) {
  GraphScores s;
  s.d.assign(lg.yd.back().begin(), lg.yd.back().end());
  s.dd.assign(lg.ydd.back().begin(), lg.ydd.back().end());
  s.td.assign(lg.ytd.back().begin(), lg.ytd.back().end());
  return s;
}

// ---------------------------------------------------------------------------
// Training: loss and exact gradients
// ---------------------------------------------------------------------------

struct ModelGrads {
  std::vector<NetGrads> nets;  // model net order

  void init_like(NmpModel& m) {
    nets.assign(kNumNets, {});
    int idx = 0;
    m.for_each_net([&](const char*, DenseNet& n) { nets[idx++].init_like(n); });
  }

  void zero() {
    for (auto& n : nets) n.zero();
  }
};

// Net indices in for_each_net order.
enum NetIdx {
  kEncD = 0,
  kEncT,
  kEncDD,
  kEncTD,
  kNDD,
  kNTD,
  kNdPast,
  kNdFut,
  kNdTrack,
  kNdComb,
  kNtMsg,
  kNtComb,
  kClsD,
  kClsDD,
  kClsTD
};

struct LossStats {
  double loss = 0;
  long elements = 0;
  long clamped = 0;
};

// Focal loss of all three heads, summed over iterations 1..L (equal deep
// supervision weights). Gradients for every parameter accumulate into
// `grads`; the backward pass recomputes per-net caches from the retained
// per-level latents, so memory stays linear in graph size.
inline LossStats nmp_loss_grad(const TrackingGraph& g, const GraphLabels& labels,
                               const NmpModel& m, double gamma,
                               ModelGrads& grads,
                               LatentGraph* lg_out = nullptr) {
  using namespace nmpdetail;
  LatentGraph lg = nmp_forward(g, m);
  const int L = m.L;
  const auto rec = receivers(g);
  const int nd = static_cast<int>(g.dnodes.size());
  const int nt = static_cast<int>(g.tnodes.size());
  const int ne = static_cast<int>(g.dedges.size());
  const int nte = static_cast<int>(g.tedges.size());

  LossStats stats;

  // Classifier loss gradient dL/dh for one head at one level.
  auto classifier_grad = [&](const DenseNet& cls, const Mat& h,
                             const std::vector<double>& scores,
                             const std::vector<char>& y, NetGrads& cls_grads,
                             Mat& dh_accum) {
    if (h.rows == 0) return;
    NetCache cache;
    forward_batch(cls, h, cache);
    Mat dy(h.rows, 1);
    for (int i = 0; i < h.rows; ++i) {
      bool clamped = false;
      const FocalResult f = focal_loss(scores[i], y[i], gamma, &clamped);
      stats.loss += f.loss;
      stats.elements += 1;
      if (clamped) stats.clamped += 1;
      dy(i, 0) = f.dp;
    }
    Mat dh;
    backward_batch(cls, cache, std::move(dy), cls_grads, &dh);
    for (size_t i = 0; i < dh.a.size(); ++i) dh_accum.a[i] += dh.a[i];
  };

  // Gradient buffers at the current level, one level below, and level 0.
  Mat gd_cur(nd, kLatentDim), gt_cur(nt, kLatentDim);
  Mat gdd_cur(ne, kLatentDim), gtd_cur(nte, kLatentDim);
  Mat gd_prev(nd, kLatentDim), gt_prev(nt, kLatentDim);
  Mat gdd_prev(ne, kLatentDim), gtd_prev(nte, kLatentDim);
  Mat gd0(nd, kLatentDim), gt0(nt, kLatentDim);
  Mat gdd0(ne, kLatentDim), gtd0(nte, kLatentDim);

  auto split_msg_grad = [&](const Mat& din, const std::vector<int>& recv,
                            Mat& g_edge, Mat& g_node_prev, Mat& g_node0) {
    for (int e = 0; e < din.rows; ++e) {
      add_block(g_edge, e, din, e, 0, kLatentDim);
      double* np = g_node_prev.row(recv[e]);
      double* n0 = g_node0.row(recv[e]);
      const double* s = din.row(e);
      for (int j = 0; j < kLatentDim; ++j) {
        np[j] += s[kLatentDim + j];
        n0[j] += s[2 * kLatentDim + j];
      }
    }
  };

  for (int l = L; l >= 1; --l) {
    // (a) classifier contributions at level l.
    classifier_grad(m.cls_d, lg.hd[l], lg.yd[l - 1], labels.d,
                    grads.nets[kClsD], gd_cur);
    classifier_grad(m.cls_dd, lg.hdd[l], lg.ydd[l - 1], labels.dd,
                    grads.nets[kClsDD], gdd_cur);
    classifier_grad(m.cls_td, lg.htd[l], lg.ytd[l - 1], labels.td,
                    grads.nets[kClsTD], gtd_cur);

    // (b) track-node update: h_T^(l) = nt_comb(sum nt_msg(...)).
    {
      Mat msg_in = gather_msg_inputs(lg.htd[l], rec.td_k, lg.ht[l - 1], lg.ht[0]);
      NetCache msg_cache;
      const Mat& msgs = forward_batch(m.nt_msg, msg_in, msg_cache);
      Mat mt(nt, kLatentDim);
      scatter_add(mt, rec.td_k, msgs, 0);
      NetCache comb_cache;
      forward_batch(m.nt_comb, mt, comb_cache);
      Mat dmt;
      backward_batch(m.nt_comb, comb_cache, std::move(gt_cur),
                     grads.nets[kNtComb], &dmt);
      gt_cur = Mat(nt, kLatentDim);
      if (nte > 0) {
        Mat dmsg(nte, kLatentDim);
        for (int e = 0; e < nte; ++e)
          add_block(dmsg, e, dmt, rec.td_k[e], 0, kLatentDim);
        Mat din;
        backward_batch(m.nt_msg, msg_cache, std::move(dmsg),
                       grads.nets[kNtMsg], &din);
        split_msg_grad(din, rec.td_k, gtd_cur, gt_prev, gt0);
      }
    }

    // (c) detection-node update.
    {
      Mat past_in = gather_msg_inputs(lg.hdd[l], rec.dd_j, lg.hd[l - 1], lg.hd[0]);
      Mat fut_in = gather_msg_inputs(lg.hdd[l], rec.dd_i, lg.hd[l - 1], lg.hd[0]);
      Mat track_in =
          gather_msg_inputs(lg.htd[l], rec.td_i, lg.hd[l - 1], lg.hd[0]);
      NetCache past_cache, fut_cache, track_cache;
      const Mat& past_msgs = forward_batch(m.nd_past, past_in, past_cache);
      const Mat& fut_msgs = forward_batch(m.nd_fut, fut_in, fut_cache);
      const Mat& track_msgs = forward_batch(m.nd_track, track_in, track_cache);
      Mat comb_in(nd, 3 * kLatentDim);
      scatter_add(comb_in, rec.dd_j, past_msgs, 0);
      scatter_add(comb_in, rec.dd_i, fut_msgs, kLatentDim);
      scatter_add(comb_in, rec.td_i, track_msgs, 2 * kLatentDim);
      NetCache comb_cache;
      forward_batch(m.nd_comb, comb_in, comb_cache);
      Mat dcomb;
      backward_batch(m.nd_comb, comb_cache, std::move(gd_cur),
                     grads.nets[kNdComb], &dcomb);
      gd_cur = Mat(nd, kLatentDim);
      auto backprop_msgs = [&](const DenseNet& net, NetCache& cache,
                               const std::vector<int>& recv, int col,
                               NetGrads& ngrads, Mat& g_edge) {
        if (recv.empty()) return;
        Mat dmsg(static_cast<int>(recv.size()), kLatentDim);
        for (int e = 0; e < dmsg.rows; ++e)
          add_block(dmsg, e, dcomb, recv[e], col, kLatentDim);
        Mat din;
        backward_batch(net, cache, std::move(dmsg), ngrads, &din);
        split_msg_grad(din, recv, g_edge, gd_prev, gd0);
      };
      backprop_msgs(m.nd_past, past_cache, rec.dd_j, 0, grads.nets[kNdPast],
                    gdd_cur);
      backprop_msgs(m.nd_fut, fut_cache, rec.dd_i, kLatentDim,
                    grads.nets[kNdFut], gdd_cur);
      backprop_msgs(m.nd_track, track_cache, rec.td_i, 2 * kLatentDim,
                    grads.nets[kNdTrack], gtd_cur);
    }

    // (d) edge updates at level l.
    if (ne > 0) {
      Mat in = gather_edge_inputs(lg.hd[l - 1], rec.dd_i, lg.hd[l - 1], rec.dd_j,
                                  lg.hdd[l - 1], lg.hdd[0]);
      NetCache cache;
      forward_batch(m.n_dd, in, cache);
      Mat din;
      backward_batch(m.n_dd, cache, std::move(gdd_cur), grads.nets[kNDD], &din);
      gdd_cur = Mat(ne, kLatentDim);
      for (int e = 0; e < ne; ++e) {
        double* gi = gd_prev.row(rec.dd_i[e]);
        double* gj = gd_prev.row(rec.dd_j[e]);
        const double* s = din.row(e);
        for (int j = 0; j < kLatentDim; ++j) {
          gi[j] += s[j];
          gj[j] += s[kLatentDim + j];
        }
        add_block(gdd_prev, e, din, e, 2 * kLatentDim, kLatentDim);
        add_block(gdd0, e, din, e, 3 * kLatentDim, kLatentDim);
      }
    }
    if (nte > 0) {
      Mat in = gather_edge_inputs(lg.ht[l - 1], rec.td_k, lg.hd[l - 1], rec.td_i,
                                  lg.htd[l - 1], lg.htd[0]);
      NetCache cache;
      forward_batch(m.n_td, in, cache);
      Mat din;
      backward_batch(m.n_td, cache, std::move(gtd_cur), grads.nets[kNTD], &din);
      gtd_cur = Mat(nte, kLatentDim);
      for (int e = 0; e < nte; ++e) {
        double* gk = gt_prev.row(rec.td_k[e]);
        double* gi = gd_prev.row(rec.td_i[e]);
        const double* s = din.row(e);
        for (int j = 0; j < kLatentDim; ++j) {
          gk[j] += s[j];
          gi[j] += s[kLatentDim + j];
        }
        add_block(gtd_prev, e, din, e, 2 * kLatentDim, kLatentDim);
        add_block(gtd0, e, din, e, 3 * kLatentDim, kLatentDim);
      }
    }

    std::swap(gd_cur, gd_prev);
    std::swap(gt_cur, gt_prev);
    std::swap(gdd_cur, gdd_prev);
    std::swap(gtd_cur, gtd_prev);
    gd_prev.zero();
    gt_prev.zero();
    gdd_prev.zero();
    gtd_prev.zero();
  }

  // cur buffers now hold gradients w.r.t. h^(0) from the l=1 usage; add the
  // skip-connection accumulations and push through the encoders.
  for (size_t i = 0; i < gd_cur.a.size(); ++i) gd_cur.a[i] += gd0.a[i];
  for (size_t i = 0; i < gt_cur.a.size(); ++i) gt_cur.a[i] += gt0.a[i];
  for (size_t i = 0; i < gdd_cur.a.size(); ++i) gdd_cur.a[i] += gdd0.a[i];
  for (size_t i = 0; i < gtd_cur.a.size(); ++i) gtd_cur.a[i] += gtd0.a[i];

  auto encoder_backward = [&](const DenseNet& enc, const Mat& nx, Mat& dh,
                              NetGrads& g_enc) {
    if (nx.rows == 0) return;
    NetCache cache;
    forward_batch(enc, nx, cache);
    backward_batch(enc, cache, std::move(dh), g_enc, nullptr);
  };
  encoder_backward(m.enc_d, lg.nxd, gd_cur, grads.nets[kEncD]);
  encoder_backward(m.enc_t, lg.nxt, gt_cur, grads.nets[kEncT]);
  encoder_backward(m.enc_dd, lg.nxdd, gdd_cur, grads.nets[kEncDD]);
  encoder_backward(m.enc_td, lg.nxtd, gtd_cur, grads.nets[kEncTD]);

  if (lg_out) *lg_out = std::move(lg);
  return stats;
}

// Loss only (used for finite-difference checks).
inline double nmp_loss(const TrackingGraph& g, const GraphLabels& labels,
                       const NmpModel& m, double gamma) {
  LatentGraph lg = nmp_forward(g, m);
  double loss = 0;
  for (int l = 1; l <= m.L; ++l) {
    for (size_t i = 0; i < labels.d.size(); ++i)
      loss += focal_loss(lg.yd[l - 1][i], labels.d[i], gamma).loss;
    for (size_t i = 0; i < labels.dd.size(); ++i)
      loss += focal_loss(lg.ydd[l - 1][i], labels.dd[i], gamma).loss;
    for (size_t i = 0; i < labels.td.size(); ++i)
      loss += focal_loss(lg.ytd[l - 1][i], labels.td[i], gamma).loss;
  }
  return loss;
}

// ---------------------------------------------------------------------------
// Checkpoint I/O
// ---------------------------------------------------------------------------

inline json stats_json(const FeatureStats& s) {
  return json{{"mean", s.mean}, {"std", s.std}};
}

inline FeatureStats stats_from_json(const json& j) {
  FeatureStats s;
  s.mean = j.at("mean").get<std::vector<double>>();
  s.std = j.at("std").get<std::vector<double>>();
  if (s.mean.size() != s.std.size())
    throw DataError("checkpoint: mean/std size mismatch");
  return s;
}

inline void save_model(const NmpModel& m, const std::string& path) {
  json j;
  j["version"] = 1;
  j["C"] = m.C;
  j["L"] = m.L;
  j["feature_stats"] = json{{"det_node", stats_json(m.stats_d)},
                            {"track_node", stats_json(m.stats_t)},
                            {"det_edge", stats_json(m.stats_dd)},
                            {"track_edge", stats_json(m.stats_td)}};
  json kp;
  kp["classes"] = m.kalman.num_classes();
  json per_class = json::array();
  for (int c = 0; c < m.kalman.num_classes(); ++c) {
    json e;
    e["q"] = m.kalman.q_diag[c];
    e["r"] = m.kalman.r_diag[c];
    e["p0"] = m.kalman.p0_diag[c];
    per_class.push_back(std::move(e));
  }
  kp["per_class"] = std::move(per_class);
  j["kalman_params"] = std::move(kp);
  json nets;
  m.for_each_net([&](const char* name, const DenseNet& net) {
    json nj;
    nj["sizes"] = net.sizes();
    json weights = json::array();
    json biases = json::array();
    for (const auto& layer : net.layers) {
      weights.push_back(layer.w.a);  // row-major (in x out)
      biases.push_back(layer.b);
    }
    nj["weights"] = std::move(weights);
    nj["biases"] = std::move(biases);
    nets[name] = std::move(nj);
  });
  j["nets"] = std::move(nets);
  std::ofstream os(path);
  if (!os) throw DataError("cannot open '" + path + "' for writing");
  os << j.dump() << "\n";
  if (!os) throw DataError("write failure on '" + path + "'");
}

inline NmpModel load_model(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw DataError("cannot open '" + path + "'");
  json j;
  try {
    j = json::parse(is);
  } catch (const std::exception& e) {
    throw DataError(path + ": parse error: " + e.what());
  }
  if (j.at("version").get<int>() != 1)
    throw DataError("checkpoint: unsupported version");
  NmpModel m;
  m.C = j.at("C").get<int>();
  m.L = j.at("L").get<int>();
  if (m.C < 1 || m.L < 1) throw DataError("checkpoint: invalid C or L");
  const json& fs = j.at("feature_stats");
  m.stats_d = stats_from_json(fs.at("det_node"));
  m.stats_t = stats_from_json(fs.at("track_node"));
  m.stats_dd = stats_from_json(fs.at("det_edge"));
  m.stats_td = stats_from_json(fs.at("track_edge"));
  m.td_dim = static_cast<int>(m.stats_td.mean.size());
  if (m.td_dim != 3 && m.td_dim != 7)
    throw DataError("checkpoint: track_edge feature width must be 3 or 7");
  if (static_cast<int>(m.stats_d.mean.size()) != 12 + m.C)
    throw DataError("checkpoint: det_node stats width does not match C");
  if (static_cast<int>(m.stats_t.mean.size()) != 8 + m.C)
    throw DataError("checkpoint: track_node stats width does not match C");
  if (static_cast<int>(m.stats_dd.mean.size()) != 10)
    throw DataError("checkpoint: det_edge stats width must be 10");
  const json& kp = j.at("kalman_params");
  const int kc = kp.at("classes").get<int>();
  if (kc != m.C) throw DataError("checkpoint: kalman class count mismatch");
  m.kalman = KalmanParams();
  for (const json& e : kp.at("per_class")) {
    m.kalman.q_diag.push_back(e.at("q").get<std::array<double, kStateDim>>());
    m.kalman.r_diag.push_back(e.at("r").get<std::array<double, kObsDim>>());
    m.kalman.p0_diag.push_back(e.at("p0").get<std::array<double, kStateDim>>());
  }
  if (m.kalman.num_classes() != m.C)
    throw DataError("checkpoint: kalman per_class count mismatch");
  const json& nets = j.at("nets");
  m.for_each_net([&](const char* name, DenseNet& net) {
    if (!nets.contains(name))
      throw DataError(std::string("checkpoint: missing net '") + name + "'");
    const json& nj = nets.at(name);
    const auto sizes = nj.at("sizes").get<std::vector<int>>();
    const auto expected = expected_net_sizes(name, m.C, m.td_dim);
    if (sizes != expected)
      throw DataError(std::string("checkpoint: net '") + name +
                      "' has unexpected layer sizes");
    const json& weights = nj.at("weights");
    const json& biases = nj.at("biases");
    if (weights.size() != sizes.size() - 1 || biases.size() != sizes.size() - 1)
      throw DataError(std::string("checkpoint: net '") + name +
                      "' layer count mismatch");
    const bool classifier = std::string(name).rfind("cls_", 0) == 0;
    net.layers.clear();
    for (size_t l = 0; l + 1 < sizes.size(); ++l) {
      LayerT<double> layer;
      layer.w = Mat(sizes[l], sizes[l + 1]);
      const auto wv = weights[l].get<std::vector<double>>();
      if (wv.size() != layer.w.a.size())
        throw DataError(std::string("checkpoint: net '") + name +
                        "' weight size mismatch");
      layer.w.a = wv;
      layer.b = biases[l].get<std::vector<double>>();
      if (layer.b.size() != static_cast<size_t>(sizes[l + 1]))
        throw DataError(std::string("checkpoint: net '") + name +
                        "' bias size mismatch");
      const bool last = (l + 2 == sizes.size());
      layer.act = last ? (classifier ? Act::Sigmoid : Act::ReLU) : Act::ReLU;
      net.layers.push_back(std::move(layer));
    }
  });
  return m;
}

}  // namespace gmot
