#pragma once

#include <algorithm>
#include <fstream>
#include <string>
#include <vector>

#include "graphmot/tracker.hpp"

namespace gmot {

// Per-stage latency over a timed closed-loop run. Warmup frames of every
// repeat are excluded from the statistics.
struct LatencyReport {
  struct Stat {
    double mean = 0, median = 0, p95 = 0;
  };
  Stat graph, nmp, post, total;
  double fps = 0;
  std::vector<StageTimes> samples;
};

namespace benchdetail {

inline LatencyReport::Stat stat_of(std::vector<double> v) {
  LatencyReport::Stat s;
  if (v.empty()) return s;
  double sum = 0;
  for (double x : v) sum += x;
  s.mean = sum / v.size();
  std::sort(v.begin(), v.end());
  s.median = v[v.size() / 2];
  s.p95 = v[std::min(v.size() - 1, static_cast<size_t>(v.size() * 0.95))];
  return s;
}

}  // namespace benchdetail

inline LatencyReport bench_scene(const Scene& scene, const NmpModel& model,
                                 const TrackerConfig& cfg, int repeats = 1,
                                 int warmup = 3) {
  LatencyReport rep;
  for (int r = 0; r < repeats; ++r) {
    std::vector<StageTimes> times;
    run_scene(scene, model, cfg, nullptr, nullptr, &times);
    for (size_t i = 0; i < times.size(); ++i)
      if (static_cast<int>(i) >= warmup) rep.samples.push_back(times[i]);
  }
  std::vector<double> g, n, p, t;
  for (const StageTimes& s : rep.samples) {
    g.push_back(s.graph_ms);
    n.push_back(s.nmp_ms);
    p.push_back(s.post_ms);
    t.push_back(s.total_ms);
  }
  rep.graph = benchdetail::stat_of(g);
  rep.nmp = benchdetail::stat_of(n);
  rep.post = benchdetail::stat_of(p);
  rep.total = benchdetail::stat_of(t);
  rep.fps = rep.total.mean > 0 ? 1000.0 / rep.total.mean : 0.0;
  return rep;
}

inline json bench_json(const LatencyReport& rep) {
  auto stat = [](const LatencyReport::Stat& s) {
    return json{{"mean_ms", s.mean}, {"median_ms", s.median}, {"p95_ms", s.p95}};
  };
  json j;
  j["graph_generation"] = stat(rep.graph);
  j["nmp_classification"] = stat(rep.nmp);
  j["post_processing"] = stat(rep.post);
  j["total"] = stat(rep.total);
  j["fps"] = rep.fps;
  j["frames"] = rep.samples.size();
  return j;
}

inline void bench_csv(const LatencyReport& rep, const std::string& path) {
  std::ofstream os(path);
  if (!os) throw DataError("cannot open '" + path + "' for writing");
  os << "frame,graph_ms,nmp_ms,post_ms,total_ms\n";
  for (size_t i = 0; i < rep.samples.size(); ++i) {
    const StageTimes& s = rep.samples[i];
    os << i << "," << s.graph_ms << "," << s.nmp_ms << "," << s.post_ms << ","
       << s.total_ms << "\n";
  }
}

}  // namespace gmot
