#pragma once

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "graphmot/core.hpp"
#include "graphmot/tracker.hpp"

namespace gmot {

inline constexpr int kAmotaRecallSteps = 40;  // nuScenes convention

struct EvalBox {
  int id = 0;
  BoundingBox3D box;
  int class_id = 0;
  double score = 1.0;
};

// Greedy nearest-center matching (2D ground distance) within class; each
// side matched at most once. Returns (gt index, pred index) pairs.
inline std::vector<std::pair<int, int>> match_frame(
    const std::vector<EvalBox>& gt, const std::vector<EvalBox>& pred,
    double radius = 2.0) {
  struct Cand {
    double dist;
    int gi, pi;
  };
  std::vector<Cand> cands;
  for (size_t gi = 0; gi < gt.size(); ++gi)
    for (size_t pi = 0; pi < pred.size(); ++pi) {
      if (gt[gi].class_id != pred[pi].class_id) continue;
      const double d = norm2d(gt[gi].box.center - pred[pi].box.center);
      if (d <= radius)
        cands.push_back({d, static_cast<int>(gi), static_cast<int>(pi)});
    }
  std::sort(cands.begin(), cands.end(), [](const Cand& a, const Cand& b) {
    return std::tie(a.dist, a.gi, a.pi) < std::tie(b.dist, b.gi, b.pi);
  });
  std::vector<char> gused(gt.size(), 0), pused(pred.size(), 0);
  std::vector<std::pair<int, int>> matches;
  for (const Cand& c : cands) {
    if (gused[c.gi] || pused[c.pi]) continue;
    gused[c.gi] = 1;
    pused[c.pi] = 1;
    matches.push_back({c.gi, c.pi});
  }
  return matches;
}

struct ClearCounts {
  long fp = 0, fn = 0, ids = 0, frag = 0, tp = 0, gt_total = 0;

  double mota() const {
    if (gt_total == 0) return 1.0;
    return 1.0 - static_cast<double>(fp + fn + ids) / gt_total;
  }

  void add(const ClearCounts& o) {
    fp += o.fp;
    fn += o.fn;
    ids += o.ids;
    frag += o.frag;
    tp += o.tp;
    gt_total += o.gt_total;
  }
};

namespace metricsdetail {

inline std::vector<EvalBox> gt_boxes_at(const Scene& scene, int frame,
                                        int class_filter) {
  std::vector<EvalBox> out;
  for (const GtBox& g : scene.gt) {
    if (g.frame != frame) continue;
    if (class_filter >= 0 && g.class_id != class_filter) continue;
    out.push_back({g.track_id, g.box, g.class_id, 1.0});
  }
  return out;
}

inline std::vector<EvalBox> pred_boxes_at(const std::vector<TrackOutput>& outputs,
                                          int frame, int class_filter,
                                          double score_threshold) {
  std::vector<EvalBox> out;
  for (const TrackOutput& o : outputs) {
    if (o.frame != frame) continue;
    for (const TrackOutputEntry& t : o.tracks) {
      if (class_filter >= 0 && t.class_id != class_filter) continue;
      if (t.score < score_threshold) continue;
      out.push_back({t.id, t.box, t.class_id, t.score});
    }
  }
  return out;
}

}  // namespace metricsdetail

// CLEAR-MOT accounting for one scene at one score threshold. IDS counts GT
// identities whose matched predicted id changes between consecutive matched
// frames; FRAG counts matched -> unmatched -> matched interruptions.
inline ClearCounts evaluate(const Scene& scene,
                            const std::vector<TrackOutput>& outputs,
                            double score_threshold = 0.0, double radius = 2.0,
                            int class_filter = -1) {
  ClearCounts c;
  // Per GT track: matched predicted id per frame (or none).
  std::map<int, std::map<int, int>> gt_matched;  // track -> frame -> pred id
  std::map<int, std::vector<int>> gt_frames;     // track -> frames alive
  for (const GtBox& g : scene.gt) {
    if (class_filter >= 0 && g.class_id != class_filter) continue;
    gt_frames[g.track_id].push_back(g.frame);
  }
  for (const Frame& f : scene.frames) {
    auto gt = metricsdetail::gt_boxes_at(scene, f.index, class_filter);
    auto pred = metricsdetail::pred_boxes_at(outputs, f.index, class_filter,
                                             score_threshold);
    auto matches = match_frame(gt, pred, radius);
    c.gt_total += static_cast<long>(gt.size());
    c.tp += static_cast<long>(matches.size());
    c.fp += static_cast<long>(pred.size() - matches.size());
    c.fn += static_cast<long>(gt.size() - matches.size());
    for (const auto& [gi, pi] : matches)
      gt_matched[gt[gi].id][f.index] = pred[pi].id;
  }
  for (auto& [tid, frames] : gt_frames) {
    std::sort(frames.begin(), frames.end());
    const auto& matched = gt_matched[tid];
    int last_pred = -1;
    bool in_gap = false;
    bool seen_match = false;
    for (int f : frames) {
      auto it = matched.find(f);
      if (it == matched.end()) {
        if (seen_match) in_gap = true;
        continue;
      }
      if (seen_match && it->second != last_pred) c.ids += 1;
      if (in_gap) {
        c.frag += 1;
        in_gap = false;
      }
      last_pred = it->second;
      seen_match = true;
    }
  }
  return c;
}

struct ScenePair {
  const Scene* scene = nullptr;
  const std::vector<TrackOutput>* outputs = nullptr;
};

inline ClearCounts evaluate_all(const std::vector<ScenePair>& pairs,
                                double score_threshold = 0.0,
                                double radius = 2.0, int class_filter = -1) {
  ClearCounts total;
  for (const ScenePair& p : pairs)
    total.add(evaluate(*p.scene, *p.outputs, score_threshold, radius,
                       class_filter));
  return total;
}

struct RecallPoint {
  double target_recall = 0;
  double achieved_recall = 0;
  double threshold = 0;
  double motar = 0;
  bool reachable = false;
};

// Recall-swept AMOTA for one class:
//   MOTAR(r) = max(0, 1 - (FP + FN + IDS - (1-r) P) / (r P))
// averaged over 40 evenly spaced target recalls; unreachable targets
// contribute zero.
inline double amota_class(const std::vector<ScenePair>& pairs, int class_id,
                          double radius, std::vector<RecallPoint>* curve) {
  long P = 0;
  for (const ScenePair& p : pairs)
    for (const GtBox& g : p.scene->gt)
      if (g.class_id == class_id) ++P;
  if (P == 0) return 0.0;

  // Detection-style TP flags in descending score order give the recall
  // curve used to place the thresholds.
  struct Pred {
    double score;
    size_t scene;
    int frame;
    Vec3 center;
  };
  std::vector<Pred> preds;
  for (size_t s = 0; s < pairs.size(); ++s)
    for (const TrackOutput& o : *pairs[s].outputs)
      for (const TrackOutputEntry& t : o.tracks)
        if (t.class_id == class_id)
          preds.push_back({t.score, s, o.frame, t.box.center});
  std::sort(preds.begin(), preds.end(), [](const Pred& a, const Pred& b) {
    if (a.score != b.score) return a.score > b.score;
    return std::tie(a.scene, a.frame, a.center) <
           std::tie(b.scene, b.frame, b.center);
  });
  // Unclaimed GT boxes per (scene, frame).
  std::map<std::pair<size_t, int>, std::vector<std::pair<Vec3, bool>>> gt_pool;
  for (size_t s = 0; s < pairs.size(); ++s)
    for (const GtBox& g : pairs[s].scene->gt)
      if (g.class_id == class_id)
        gt_pool[{s, g.frame}].push_back({g.box.center, false});
  std::vector<double> recall_after(preds.size());
  long claimed = 0;
  for (size_t i = 0; i < preds.size(); ++i) {
    auto it = gt_pool.find({preds[i].scene, preds[i].frame});
    if (it != gt_pool.end()) {
      double best = radius;
      int best_j = -1;
      auto& pool = it->second;
      for (size_t j = 0; j < pool.size(); ++j) {
        if (pool[j].second) continue;
        const double d = norm2d(pool[j].first - preds[i].center);
        if (d <= best) {
          best = d;
          best_j = static_cast<int>(j);
        }
      }
      if (best_j >= 0) {
        pool[best_j].second = true;
        ++claimed;
      }
    }
    recall_after[i] = static_cast<double>(claimed) / P;
  }

  double sum = 0;
  for (int m = 1; m <= kAmotaRecallSteps; ++m) {
    const double target = static_cast<double>(m) / kAmotaRecallSteps;
    RecallPoint pt;
    pt.target_recall = target;
    size_t k = preds.size();
    for (size_t i = 0; i < preds.size(); ++i) {
      if (recall_after[i] >= target) {
        k = i;
        break;
      }
    }
    if (k == preds.size()) {
      if (curve) curve->push_back(pt);
      continue;  // unreachable
    }
    pt.threshold = preds[k].score;
    ClearCounts c = evaluate_all(pairs, pt.threshold, radius, class_id);
    const double r = static_cast<double>(c.tp) / P;
    pt.achieved_recall = r;
    if (r > 0) {
      const double motar =
          1.0 - (c.fp + c.fn + c.ids - (1.0 - r) * P) / (r * P);
      pt.motar = std::max(0.0, motar);
      pt.reachable = true;
      sum += pt.motar;
    }
    if (curve) curve->push_back(pt);
  }
  return sum / kAmotaRecallSteps;
}

struct ClassReport {
  std::string name;
  long gt_total = 0;
  double amota = 0;
  ClearCounts clear;
  std::vector<RecallPoint> curve;
};

struct EvalReport {
  std::vector<ClassReport> per_class;
  double amota = 0;   // mean over classes with GT
  ClearCounts clear;  // counts summed over classes
  double score_threshold = 0;

  double mota() const { return clear.mota(); }
};

inline EvalReport evaluate_report(const std::vector<ScenePair>& pairs,
                                  const ClassVocabulary& classes,
                                  double score_threshold = 0.0,
                                  double radius = 2.0) {
  EvalReport rep;
  rep.score_threshold = score_threshold;
  int classes_with_gt = 0;
  for (int c = 0; c < classes.count(); ++c) {
    ClassReport cr;
    cr.name = classes.names[c];
    cr.clear = evaluate_all(pairs, score_threshold, radius, c);
    cr.gt_total = cr.clear.gt_total;
    cr.amota = amota_class(pairs, c, radius, &cr.curve);
    rep.clear.add(cr.clear);
    if (cr.gt_total > 0) {
      rep.amota += cr.amota;
      ++classes_with_gt;
    }
    rep.per_class.push_back(std::move(cr));
  }
  if (classes_with_gt > 0) rep.amota /= classes_with_gt;
  return rep;
}

inline json report_json(const EvalReport& rep) {
  json j;
  j["amota"] = rep.amota;
  j["mota"] = rep.mota();
  j["score_threshold"] = rep.score_threshold;
  j["counts"] = {{"fp", rep.clear.fp},     {"fn", rep.clear.fn},
                 {"ids", rep.clear.ids},   {"frag", rep.clear.frag},
                 {"tp", rep.clear.tp},     {"gt", rep.clear.gt_total}};
  json per_class = json::array();
  for (const ClassReport& c : rep.per_class) {
    json cj;
    cj["class"] = c.name;
    cj["amota"] = c.amota;
    cj["mota"] = c.clear.mota();
    cj["counts"] = {{"fp", c.clear.fp},   {"fn", c.clear.fn},
                    {"ids", c.clear.ids}, {"frag", c.clear.frag},
                    {"tp", c.clear.tp},   {"gt", c.gt_total}};
    json curve = json::array();
    for (const RecallPoint& p : c.curve) {
      curve.push_back({{"target_recall", p.target_recall},
                       {"achieved_recall", p.achieved_recall},
                       {"threshold", p.threshold},
                       {"motar", p.motar},
                       {"reachable", p.reachable}});
    }
    cj["recall_curve"] = std::move(curve);
    per_class.push_back(std::move(cj));
  }
  j["per_class"] = std::move(per_class);
  return j;
}

inline std::string report_table(const EvalReport& rep) {
  std::ostringstream os;
  os << std::left << std::setw(14) << "class" << std::right << std::setw(8)
     << "amota" << std::setw(8) << "mota" << std::setw(8) << "ids"
     << std::setw(8) << "frag" << std::setw(8) << "fp" << std::setw(8) << "fn"
     << std::setw(8) << "gt" << "\n";
  auto row = [&](const std::string& name, double amota, const ClearCounts& c) {
    os << std::left << std::setw(14) << name << std::right << std::fixed
       << std::setprecision(3) << std::setw(8) << amota << std::setw(8)
       << c.mota() << std::setw(8) << c.ids << std::setw(8) << c.frag
       << std::setw(8) << c.fp << std::setw(8) << c.fn << std::setw(8)
       << c.gt_total << "\n";
  };
  for (const ClassReport& c : rep.per_class) row(c.name, c.amota, c.clear);
  row("ALL", rep.amota, rep.clear);
  return os.str();
}

}  // namespace gmot
