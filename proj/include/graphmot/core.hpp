#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <fstream>
#include <map>
#include <sstream>
#include <stdexcept>
#include <string>
#include <tuple>
#include <unordered_map>
#include <vector>

#include <json.hpp>

#include "graphmot/rng.hpp"

namespace gmot {

using json = nlohmann::ordered_json;

// Errors caused by malformed input data; the CLI maps these to exit code 2.
struct DataError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

using Vec3 = std::array<double, 3>;

inline Vec3 operator-(const Vec3& a, const Vec3& b) {
  return {a[0] - b[0], a[1] - b[1], a[2] - b[2]};
}
inline Vec3 operator+(const Vec3& a, const Vec3& b) {
  return {a[0] + b[0], a[1] + b[1], a[2] + b[2]};
}
inline double norm(const Vec3& v) {
  return std::sqrt(v[0] * v[0] + v[1] * v[1] + v[2] * v[2]);
}
inline double norm2d(const Vec3& v) { return std::hypot(v[0], v[1]); }

// Wraps an angle into (-pi, pi].
inline double normalize_angle(double a) {
  a = std::fmod(a, 2.0 * kPi);
  if (a <= -kPi)
    a += 2.0 * kPi;
  else if (a > kPi)
    a -= 2.0 * kPi;
  return a;
}

// Signed minimal angular difference a - b, in (-pi, pi].
inline double angle_diff(double a, double b) { return normalize_angle(a - b); }

struct BoundingBox3D {
  Vec3 center{};
  Vec3 size{};  // l, w, h; strictly positive
  double yaw = 0.0;
};

struct Detection {
  BoundingBox3D box;
  double vx = 0.0;  // ground-plane velocity
  double vy = 0.0;
  int class_id = 0;
  double score = 0.0;
  double ego_distance = 0.0;
  int frame = 0;
  long det_id = -1;  // unique per scene, assigned at load
};

struct Frame {
  int index = 0;
  double timestamp = 0.0;
  Vec3 ego{};
  std::vector<Detection> detections;
};

struct GtBox {
  int track_id = 0;
  int frame = 0;
  BoundingBox3D box;
  int class_id = 0;
};

struct ClassVocabulary {
  std::vector<std::string> names;

  int count() const { return static_cast<int>(names.size()); }

  int index_of(const std::string& n) const {
    for (size_t i = 0; i < names.size(); ++i)
      if (names[i] == n) return static_cast<int>(i);
    return -1;
  }

  void validate() const {
    if (names.empty()) throw DataError("classes: vocabulary must not be empty");
    for (size_t i = 0; i < names.size(); ++i)
      for (size_t j = i + 1; j < names.size(); ++j)
        if (names[i] == names[j])
          throw DataError("classes: duplicate class name '" + names[i] + "'");
  }
};

struct Scene {
  std::string scene_id;
  ClassVocabulary classes;
  std::vector<Frame> frames;
  std::vector<GtBox> gt;

  bool has_gt() const { return !gt.empty(); }

  const Frame* find_frame(int index) const {
    for (const Frame& f : frames)
      if (f.index == index) return &f;
    return nullptr;
  }

  std::map<int, std::vector<const GtBox*>> gt_by_frame() const {
    std::map<int, std::vector<const GtBox*>> m;
    for (const GtBox& g : gt) m[g.frame].push_back(&g);
    return m;
  }
};

namespace detail {

inline void check_finite(double v, const std::string& field) {
  if (!std::isfinite(v)) throw DataError(field + ": non-finite value");
}

}  // namespace detail

// Normalizes yaws, derives ego distances, assigns detection ids and checks
// every invariant. Used by both the loader and the simulator so constructed
// scenes are identical to reloaded ones.
inline void finalize_scene(Scene& s) {
  s.classes.validate();
  const int C = s.classes.count();
  long next_det_id = 0;
  double prev_ts = -std::numeric_limits<double>::infinity();
  int prev_index = std::numeric_limits<int>::min();
  for (Frame& f : s.frames) {
    if (f.index <= prev_index)
      throw DataError("frame: indices must be strictly increasing");
    if (!(f.timestamp > prev_ts))
      throw DataError("timestamp: must be strictly increasing scene-wide");
    prev_index = f.index;
    prev_ts = f.timestamp;
    for (Detection& d : f.detections) {
      for (int k = 0; k < 3; ++k) {
        detail::check_finite(d.box.center[k], "center");
        detail::check_finite(d.box.size[k], "size");
      }
      detail::check_finite(d.box.yaw, "yaw");
      if (d.box.size[0] <= 0 || d.box.size[1] <= 0 || d.box.size[2] <= 0)
        throw DataError("size: components must be strictly positive");
      d.box.yaw = normalize_angle(d.box.yaw);
      if (!(d.score >= 0.0 && d.score <= 1.0))
        throw DataError("score: must lie in [0, 1]");
      if (d.class_id < 0 || d.class_id >= C)
        throw DataError("class: id " + std::to_string(d.class_id) +
                        " outside vocabulary of size " + std::to_string(C));
      d.frame = f.index;
      d.det_id = next_det_id++;
      d.ego_distance = norm(d.box.center - f.ego);
    }
  }
  // GT: unique (track, frame), strictly increasing frames, constant class.
  std::map<int, int> track_class;
  std::map<int, int> track_last_frame;
  for (GtBox& g : s.gt) {
    if (g.box.size[0] <= 0 || g.box.size[1] <= 0 || g.box.size[2] <= 0)
      throw DataError("gt size: components must be strictly positive");
    g.box.yaw = normalize_angle(g.box.yaw);
    if (g.class_id < 0 || g.class_id >= C)
      throw DataError("gt class: id outside vocabulary");
    auto it = track_last_frame.find(g.track_id);
    if (it != track_last_frame.end() && g.frame <= it->second)
      throw DataError("gt frame: frames of track " + std::to_string(g.track_id) +
                      " must be strictly increasing");
    track_last_frame[g.track_id] = g.frame;
    auto cit = track_class.find(g.track_id);
    if (cit != track_class.end() && cit->second != g.class_id)
      throw DataError("gt class: track " + std::to_string(g.track_id) +
                      " changes class");
    track_class[g.track_id] = g.class_id;
    if (!s.find_frame(g.frame))
      throw DataError("gt frame: index " + std::to_string(g.frame) +
                      " not present in scene");
  }
}

// ---------------------------------------------------------------------------
// Scene file I/O: UTF-8 JSON Lines.
//   header: {"type":"header","scene_id":...,"classes":[...]}
//   frame:  {"type":"frame","index":i,"timestamp":t,"ego":[x,y,z],
//            "detections":[{"center":[..],"size":[..],"yaw":..,"vel":[..],
//                           "class":..,"score":..}]}
//   gt:     {"type":"gt","track_id":n,"frame":i,"center":[..],"size":[..],
//            "yaw":..,"class":..}
// ---------------------------------------------------------------------------

inline json vec3_json(const Vec3& v) { return json::array({v[0], v[1], v[2]}); }

inline Vec3 vec3_from(const json& j, const std::string& field) {
  if (!j.is_array() || j.size() != 3)
    throw DataError(field + ": expected a 3-element array");
  return {j[0].get<double>(), j[1].get<double>(), j[2].get<double>()};
}

inline void save_scene(const Scene& s, const std::string& path) {
  std::ofstream os(path);
  if (!os) throw DataError("cannot open '" + path + "' for writing");
  json header;
  header["type"] = "header";
  header["scene_id"] = s.scene_id;
  header["classes"] = s.classes.names;
  os << header.dump() << "\n";
  for (const Frame& f : s.frames) {
    json j;
    j["type"] = "frame";
    j["index"] = f.index;
    j["timestamp"] = f.timestamp;
    j["ego"] = vec3_json(f.ego);
    json dets = json::array();
    for (const Detection& d : f.detections) {
      json dj;
      dj["center"] = vec3_json(d.box.center);
      dj["size"] = vec3_json(d.box.size);
      dj["yaw"] = d.box.yaw;
      dj["vel"] = json::array({d.vx, d.vy});
      dj["class"] = d.class_id;
      dj["score"] = d.score;
      dets.push_back(std::move(dj));
    }
    j["detections"] = std::move(dets);
    os << j.dump() << "\n";
  }
  std::vector<GtBox> gt = s.gt;
  std::stable_sort(gt.begin(), gt.end(), [](const GtBox& a, const GtBox& b) {
    return std::tie(a.track_id, a.frame) < std::tie(b.track_id, b.frame);
  });
  for (const GtBox& g : gt) {
    json j;
    j["type"] = "gt";
    j["track_id"] = g.track_id;
    j["frame"] = g.frame;
    j["center"] = vec3_json(g.box.center);
    j["size"] = vec3_json(g.box.size);
    j["yaw"] = g.box.yaw;
    j["class"] = g.class_id;
    os << j.dump() << "\n";
  }
  if (!os) throw DataError("write failure on '" + path + "'");
}

inline Scene load_scene(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw DataError("cannot open '" + path + "'");
  Scene s;
  std::string line;
  int lineno = 0;
  bool have_header = false;
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
    try {
      const std::string type = j.at("type").get<std::string>();
      if (type == "header") {
        if (have_header)
          throw DataError("duplicate header record");
        s.scene_id = j.at("scene_id").get<std::string>();
        s.classes.names = j.at("classes").get<std::vector<std::string>>();
        have_header = true;
      } else if (type == "frame") {
        if (!have_header) throw DataError("frame record before header");
        Frame f;
        f.index = j.at("index").get<int>();
        f.timestamp = j.at("timestamp").get<double>();
        f.ego = vec3_from(j.at("ego"), "ego");
        for (const json& dj : j.at("detections")) {
          Detection d;
          d.box.center = vec3_from(dj.at("center"), "center");
          d.box.size = vec3_from(dj.at("size"), "size");
          d.box.yaw = dj.at("yaw").get<double>();
          const json& vel = dj.at("vel");
          if (!vel.is_array() || vel.size() != 2)
            throw DataError("vel: expected a 2-element array");
          d.vx = vel[0].get<double>();
          d.vy = vel[1].get<double>();
          d.class_id = dj.at("class").get<int>();
          d.score = dj.at("score").get<double>();
          f.detections.push_back(d);
        }
        s.frames.push_back(std::move(f));
      } else if (type == "gt") {
        GtBox g;
        g.track_id = j.at("track_id").get<int>();
        g.frame = j.at("frame").get<int>();
        g.box.center = vec3_from(j.at("center"), "center");
        g.box.size = vec3_from(j.at("size"), "size");
        g.box.yaw = j.at("yaw").get<double>();
        g.class_id = j.at("class").get<int>();
        s.gt.push_back(g);
      } else {
        throw DataError("unknown record type '" + type + "'");
      }
    } catch (const DataError&) {
      throw;
    } catch (const std::exception& e) {
      throw DataError(path + ":" + std::to_string(lineno) + ": " + e.what());
    }
  }
  if (!have_header) throw DataError(path + ": missing header record");
  try {
    finalize_scene(s);
  } catch (const DataError& e) {
    throw DataError(path + ": " + e.what());
  }
  return s;
}

// Greedy detection-to-GT correspondence: ascending 2D center distance within
// class, each side matched at most once per frame. Radius in meters.
inline std::unordered_map<long, int> gt_matching(const Scene& scene,
                                                 double radius = 2.0) {
  std::unordered_map<long, int> out;
  auto by_frame = scene.gt_by_frame();
  for (const Frame& f : scene.frames) {
    auto it = by_frame.find(f.index);
    if (it == by_frame.end()) continue;
    const auto& gts = it->second;
    struct Cand {
      double dist;
      int gi;
      int di;
    };
    std::vector<Cand> cands;
    for (size_t gi = 0; gi < gts.size(); ++gi) {
      for (size_t di = 0; di < f.detections.size(); ++di) {
        const Detection& d = f.detections[di];
        if (d.class_id != gts[gi]->class_id) continue;
        const double dist = norm2d(d.box.center - gts[gi]->box.center);
        if (dist <= radius)
          cands.push_back({dist, static_cast<int>(gi), static_cast<int>(di)});
      }
    }
    std::sort(cands.begin(), cands.end(), [&](const Cand& a, const Cand& b) {
      return std::tie(a.dist, gts[a.gi]->track_id, a.di) <
             std::tie(b.dist, gts[b.gi]->track_id, b.di);
    });
    std::vector<char> gt_used(gts.size(), 0), det_used(f.detections.size(), 0);
    for (const Cand& c : cands) {
      if (gt_used[c.gi] || det_used[c.di]) continue;
      gt_used[c.gi] = 1;
      det_used[c.di] = 1;
      out[f.detections[c.di].det_id] = gts[c.gi]->track_id;
    }
  }
  return out;
}

}  // namespace gmot
