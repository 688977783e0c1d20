#pragma once

#include <cmath>
#include <stdexcept>
#include <string>
#include <vector>

#include "graphmot/linalg.hpp"
#include "graphmot/rng.hpp"

namespace gmot {

enum class Act { ReLU, Identity, Sigmoid };

template <typename R>
struct LayerT {
  MatT<R> w;  // (in x out), row-major
  std::vector<R> b;
  Act act = Act::ReLU;
};

template <typename R>
struct DenseNetT {
  std::vector<LayerT<R>> layers;

  int in_dim() const { return layers.empty() ? 0 : layers.front().w.rows; }
  int out_dim() const { return layers.empty() ? 0 : layers.back().w.cols; }

  std::vector<int> sizes() const {
    std::vector<int> s;
    if (layers.empty()) return s;
    s.push_back(layers.front().w.rows);
    for (const auto& l : layers) s.push_back(l.w.cols);
    return s;
  }
};

using DenseNet = DenseNetT<double>;

// Uniform Glorot init in +-sqrt(6 / (fan_in + fan_out)), zero biases.
inline DenseNet make_net(const std::vector<int>& dims,
                         const std::vector<Act>& acts, Rng& rng) {
  if (dims.size() < 2 || acts.size() != dims.size() - 1)
    throw std::invalid_argument("make_net: dims/acts mismatch");
  DenseNet net;
  for (size_t l = 0; l + 1 < dims.size(); ++l) {
    LayerT<double> layer;
    layer.w = Mat(dims[l], dims[l + 1]);
    layer.b.assign(dims[l + 1], 0.0);
    layer.act = acts[l];
    const double bound = std::sqrt(6.0 / (dims[l] + dims[l + 1]));
    for (double& v : layer.w.a) v = rng.uniform(-bound, bound);
    net.layers.push_back(std::move(layer));
  }
  return net;
}

// ReLU throughout with a final activation chosen by the caller.
inline DenseNet make_mlp(const std::vector<int>& dims, Act final_act, Rng& rng) {
  std::vector<Act> acts(dims.size() - 1, Act::ReLU);
  acts.back() = final_act;
  return make_net(dims, acts, rng);
}

template <typename R>
inline void apply_bias_act(MatT<R>& y, const std::vector<R>& b, Act act) {
  for (int i = 0; i < y.rows; ++i) {
    R* r = y.row(i);
    for (int j = 0; j < y.cols; ++j) {
      R v = r[j] + b[j];
      switch (act) {
        case Act::ReLU:
          v = v > R(0) ? v : R(0);
          break;
        case Act::Sigmoid:
          v = R(1) / (R(1) + std::exp(-v));
          break;
        case Act::Identity:
          break;
      }
      r[j] = v;
    }
  }
}

// Batched forward; each row of x is one input.
template <typename R>
inline MatT<R> forward_batch(const DenseNetT<R>& net, const MatT<R>& x) {
  MatT<R> cur = x;
  for (const auto& layer : net.layers) {
    MatT<R> y(cur.rows, layer.w.cols);
    gemm_nn(cur, layer.w, y);
    apply_bias_act(y, layer.b, layer.act);
    cur = std::move(y);
  }
  return cur;
}

// Retained activations for reverse mode: acts[0] is the input, acts[l+1] the
// output of layer l.
struct NetCache {
  std::vector<Mat> acts;
};

inline const Mat& forward_batch(const DenseNet& net, const Mat& x, NetCache& cache) {
  cache.acts.clear();
  cache.acts.push_back(x);
  for (const auto& layer : net.layers) {
    const Mat& in = cache.acts.back();
    Mat y(in.rows, layer.w.cols);
    gemm_nn(in, layer.w, y);
    apply_bias_act(y, layer.b, layer.act);
    cache.acts.push_back(std::move(y));
  }
  return cache.acts.back();
}

inline std::vector<double> forward(const DenseNet& net, const std::vector<double>& x) {
  Mat xm(1, static_cast<int>(x.size()));
  for (size_t i = 0; i < x.size(); ++i) xm(0, static_cast<int>(i)) = x[i];
  Mat y = forward_batch(net, xm);
  return std::vector<double>(y.a.begin(), y.a.end());
}

struct NetGrads {
  std::vector<Mat> dw;
  std::vector<std::vector<double>> db;

  void init_like(const DenseNet& net) {
    dw.clear();
    db.clear();
    for (const auto& l : net.layers) {
      dw.emplace_back(l.w.rows, l.w.cols);
      db.emplace_back(l.b.size(), 0.0);
    }
  }

  void zero() {
    for (auto& m : dw) m.zero();
    for (auto& v : db) std::fill(v.begin(), v.end(), 0.0);
  }

  bool all_finite() const {
    for (const auto& m : dw)
      if (!m.all_finite()) return false;
    for (const auto& v : db)
      for (double x : v)
        if (!std::isfinite(x)) return false;
    return true;
  }
};

// Exact reverse-mode gradients of forward_batch. dy is the loss gradient at
// the output; parameter gradients accumulate into `grads` (shape-initialized
// by the caller); when dx is non-null it receives the input gradient.
inline void backward_batch(const DenseNet& net, const NetCache& cache, Mat dy,
                           NetGrads& grads, Mat* dx = nullptr) {
  if (cache.acts.size() != net.layers.size() + 1)
    throw std::logic_error("backward_batch: stale or missing activation cache");
  for (int l = static_cast<int>(net.layers.size()) - 1; l >= 0; --l) {
    const auto& layer = net.layers[l];
    const Mat& out = cache.acts[l + 1];
    const Mat& in = cache.acts[l];
    // dz = dy * act'(out)
    Mat dz = std::move(dy);
    for (int i = 0; i < dz.rows; ++i) {
      double* dzr = dz.row(i);
      const double* o = out.row(i);
      for (int j = 0; j < dz.cols; ++j) {
        switch (layer.act) {
          case Act::ReLU:
            if (o[j] <= 0.0) dzr[j] = 0.0;
            break;
          case Act::Sigmoid:
            dzr[j] *= o[j] * (1.0 - o[j]);
            break;
          case Act::Identity:
            break;
        }
      }
    }
    gemm_tn(in, dz, grads.dw[l]);
    for (int i = 0; i < dz.rows; ++i) {
      const double* dzr = dz.row(i);
      for (int j = 0; j < dz.cols; ++j) grads.db[l][j] += dzr[j];
    }
    if (l > 0 || dx) {
      Mat wt = transposed(layer.w);
      Mat din(dz.rows, layer.w.rows);
      gemm_nn(dz, wt, din);
      if (l == 0) {
        if (dx) *dx = std::move(din);
        return;
      }
      dy = std::move(din);
    }
  }
}

// Focal loss for a binary label. p must be a probability; values outside
// (eps, 1-eps) are clamped and reported through `clamped`.
struct FocalResult {
  double loss;
  double dp;
};

inline FocalResult focal_loss(double p, int y, double gamma,
                              bool* clamped = nullptr) {
  constexpr double eps = 1e-7;
  if (p < eps || p > 1.0 - eps) {
    if (clamped) *clamped = true;
    p = std::min(std::max(p, eps), 1.0 - eps);
  }
  const double pt = y ? p : 1.0 - p;
  const double one_m = 1.0 - pt;
  const double pow_g = gamma == 0.0 ? 1.0 : std::pow(one_m, gamma);
  const double loss = -pow_g * std::log(pt);
  // d/dpt [-(1-pt)^g log pt] = g (1-pt)^(g-1) log pt - (1-pt)^g / pt
  double dpt;
  if (gamma == 0.0) {
    dpt = -1.0 / pt;
  } else {
    const double pow_gm1 = std::pow(one_m, gamma - 1.0);
    dpt = gamma * pow_gm1 * std::log(pt) - pow_g / pt;
  }
  return {loss, y ? dpt : -dpt};
}

// Adam with decoupled weight decay.
struct AdamState {
  double lr = 5e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 0.01;
  long step = 0;
  std::vector<Mat> mw, vw;
  std::vector<std::vector<double>> mb, vb;

  void init_like(const DenseNet& net) {
    mw.clear();
    vw.clear();
    mb.clear();
    vb.clear();
    for (const auto& l : net.layers) {
      mw.emplace_back(l.w.rows, l.w.cols);
      vw.emplace_back(l.w.rows, l.w.cols);
      mb.emplace_back(l.b.size(), 0.0);
      vb.emplace_back(l.b.size(), 0.0);
    }
  }
};

namespace detail {

inline void adam_update(double* w, const double* g, double* m, double* v,
                        size_t n, const AdamState& st, double bc1, double bc2,
                        bool decay) {
  for (size_t i = 0; i < n; ++i) {
    m[i] = st.beta1 * m[i] + (1.0 - st.beta1) * g[i];
    v[i] = st.beta2 * v[i] + (1.0 - st.beta2) * g[i] * g[i];
    const double mhat = m[i] / bc1;
    const double vhat = v[i] / bc2;
    if (decay) w[i] -= st.lr * st.weight_decay * w[i];
    w[i] -= st.lr * mhat / (std::sqrt(vhat) + st.eps);
  }
}

}  // namespace detail

// One optimizer step. Aborts (throws) on non-finite gradients, leaving the
// parameters untouched. Weight decay applies to weights only, not biases.
inline void adam_step(DenseNet& net, const NetGrads& grads, AdamState& st) {
  if (!grads.all_finite())
    throw std::runtime_error("adam_step: non-finite gradient, step aborted");
  st.step += 1;
  const double bc1 = 1.0 - std::pow(st.beta1, static_cast<double>(st.step));
  const double bc2 = 1.0 - std::pow(st.beta2, static_cast<double>(st.step));
  for (size_t l = 0; l < net.layers.size(); ++l) {
    auto& layer = net.layers[l];
    detail::adam_update(layer.w.a.data(), grads.dw[l].a.data(),
                        st.mw[l].a.data(), st.vw[l].a.data(), layer.w.a.size(),
                        st, bc1, bc2, true);
    detail::adam_update(layer.b.data(), grads.db[l].data(), st.mb[l].data(),
                        st.vb[l].data(), layer.b.size(), st, bc1, bc2, false);
  }
}

template <typename R>
inline DenseNetT<R> cast_net(const DenseNet& net) {
  DenseNetT<R> out;
  for (const auto& l : net.layers) {
    LayerT<R> layer;
    layer.w = MatT<R>(l.w.rows, l.w.cols);
    for (size_t i = 0; i < l.w.a.size(); ++i)
      layer.w.a[i] = static_cast<R>(l.w.a[i]);
    layer.b.assign(l.b.begin(), l.b.end());
    layer.act = l.act;
    out.layers.push_back(std::move(layer));
  }
  return out;
}

}  // namespace gmot
