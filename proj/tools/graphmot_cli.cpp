// Command-line entry point for the full tracking lifecycle: scene
// simulation, dataset construction, training, closed-loop tracking,
// evaluation, benchmarking and graph inspection.

#include <CLI11.hpp>

#include <atomic>
#include <filesystem>
#include <iostream>
#include <thread>

#include "graphmot/baseline.hpp"
#include "graphmot/bench.hpp"
#include "graphmot/metrics.hpp"
#include "graphmot/sim.hpp"
#include "graphmot/tracker.hpp"
#include "graphmot/train.hpp"

namespace fs = std::filesystem;
using namespace gmot;

namespace {

std::vector<std::string> list_scene_files(const std::string& path) {
  std::vector<std::string> files;
  if (fs::is_directory(path)) {
    for (const auto& e : fs::directory_iterator(path))
      if (e.path().extension() == ".jsonl") files.push_back(e.path().string());
    std::sort(files.begin(), files.end());
  } else {
    files.push_back(path);
  }
  if (files.empty())
    throw DataError("no .jsonl scene files found under '" + path + "'");
  return files;
}

std::vector<Scene> load_scenes(const std::string& path) {
  std::vector<Scene> scenes;
  for (const std::string& f : list_scene_files(path))
    scenes.push_back(load_scene(f));
  return scenes;
}

// Index-deterministic parallel loop; results land in preallocated slots.
void parallel_for(int jobs, size_t n, const std::function<void(size_t)>& body) {
  if (jobs <= 1) {
    for (size_t i = 0; i < n; ++i) body(i);
    return;
  }
  std::atomic<size_t> next{0};
  std::vector<std::thread> pool;
  for (int t = 0; t < jobs; ++t)
    pool.emplace_back([&] {
      while (true) {
        const size_t i = next.fetch_add(1);
        if (i >= n) return;
        body(i);
      }
    });
  for (auto& th : pool) th.join();
}

struct SimFlags {
  SimConfig cfg;
  int n_scenes = 1;
  std::string out;

  void attach(CLI::App* cmd) {
    cmd->add_option("--scenes", n_scenes, "Number of scenes to generate");
    cmd->add_option("-o,--out", out, "Output directory")->required();
    cmd->add_option("--seed", cfg.seed, "Master seed");
    cmd->add_option("--objects-min", cfg.n_objects_min, "Minimum objects");
    cmd->add_option("--objects-max", cfg.n_objects_max, "Maximum objects");
    cmd->add_option("--frames", cfg.n_frames, "Frames per scene");
    cmd->add_option("--fov", cfg.fov_extent, "Field-of-view extent (m)");
    cmd->add_option("--frame-period", cfg.frame_period, "Seconds per frame");
    cmd->add_option("--pos-sigma", cfg.pos_sigma, "Detector position noise");
    cmd->add_option("--size-sigma", cfg.size_sigma, "Detector size noise");
    cmd->add_option("--yaw-sigma", cfg.yaw_sigma, "Detector yaw noise");
    cmd->add_option("--vel-sigma", cfg.vel_sigma, "Detector velocity noise");
    cmd->add_option("--miss-prob", cfg.miss_prob, "Miss probability");
    cmd->add_option("--fp-rate", cfg.fp_rate, "False positives per frame");
    cmd->add_option("--birth-prob", cfg.birth_prob, "Expected births per frame");
    cmd->add_option("--death-prob", cfg.death_prob, "Death probability per frame");
  }
};

int cmd_simulate(const SimFlags& flags, int jobs) {
  fs::create_directories(flags.out);
  std::vector<std::string> written(flags.n_scenes);
  parallel_for(jobs, flags.n_scenes, [&](size_t i) {
    SimConfig cfg = flags.cfg;
    cfg.seed = mix_seed(flags.cfg.seed, i);
    char name[64];
    std::snprintf(name, sizeof(name), "scene_%04zu", i);
    Scene s = generate_scene(cfg, name);
    const std::string path = (fs::path(flags.out) / (std::string(name) + ".jsonl")).string();
    save_scene(s, path);
    written[i] = path;
  });
  for (const std::string& p : written) std::cout << p << "\n";
  return 0;
}

struct GraphFlags {
  int window = 3;
  double track_gate_dt = 0.5;
  bool no_gate_det = false;
  bool no_gate_track = false;
  bool componentwise = false;
  std::vector<double> v_max;

  void attach(CLI::App* cmd) {
    cmd->add_option("--window", window, "Graph window T");
    cmd->add_option("--track-gate-dt", track_gate_dt,
                    "Track-edge gate horizon (s)");
    cmd->add_flag("--no-gate-detection-edges", no_gate_det,
                  "Disable the detection-edge distance gate");
    cmd->add_flag("--no-gate-track-edges", no_gate_track,
                  "Disable the track-edge distance gate");
    cmd->add_flag("--componentwise-track-edge", componentwise,
                  "Use the 7-entry componentwise track-edge feature");
    cmd->add_option("--v-max", v_max,
                    "Per-class maximum speeds (m/s), overriding defaults");
  }

  GraphConfig to_config(const ClassVocabulary& vocab) const {
    GraphConfig cfg;
    cfg.window = window;
    cfg.track_gate_dt = track_gate_dt;
    cfg.gate_detection_edges = !no_gate_det;
    cfg.gate_track_edges = !no_gate_track;
    cfg.componentwise_track_edge = componentwise;
    cfg.v_max = v_max.empty() ? GraphConfig::default_v_max(vocab) : v_max;
    return cfg;
  }
};

int cmd_make_dataset(const std::string& scenes_path, const std::string& out,
                     const GraphFlags& gflags) {
  auto scenes = load_scenes(scenes_path);
  const GraphConfig gcfg = gflags.to_config(scenes.front().classes);
  auto est = estimate_params(scenes);
  for (const std::string& w : est.warnings) std::cerr << "warning: " << w << "\n";
  auto samples = build_stage1_dataset(scenes, est.params, gcfg);
  save_dataset(samples, out, scenes.front().classes.count(),
               scenes.front().classes.names, gcfg);
  std::cout << "wrote " << samples.size() << " samples to " << out << "\n";
  return 0;
}

struct TrainFlags {
  std::string scenes_path, dataset_path, out = "model.json";
  TrainHyper hyper;
  int L = 4;
  bool two_stage = false;
  bool mpn_baseline = false;
  bool no_augment = false;
  bool warm_start = false;
  int max_samples = 0;

  void attach(CLI::App* cmd) {
    cmd->add_option("--scenes", scenes_path, "Scene directory or file");
    cmd->add_option("--dataset", dataset_path, "Prebuilt dataset cache");
    cmd->add_option("-o,--out", out, "Checkpoint path (stage suffixes added "
                                     "with --two-stage)");
    cmd->add_option("--epochs", hyper.epochs, "Training epochs");
    cmd->add_option("--batch", hyper.batch_size, "Batch size");
    cmd->add_option("--lr", hyper.lr, "Learning rate");
    cmd->add_option("--weight-decay", hyper.weight_decay, "Weight decay");
    cmd->add_option("--gamma", hyper.gamma, "Focal focusing parameter");
    cmd->add_option("--seed", hyper.seed, "Training seed");
    cmd->add_option("--L", L, "Message passing iterations");
    cmd->add_flag("--two-stage", two_stage, "Run the two-stage pipeline");
    cmd->add_flag("--mpn-baseline", mpn_baseline,
                  "Train without track nodes/edges");
    cmd->add_flag("--no-augment", no_augment, "Disable data augmentation");
    cmd->add_flag("--warm-start-stage2", warm_start,
                  "Initialize stage 2 from the stage-1 weights");
    cmd->add_option("--max-samples", max_samples,
                    "Truncate the dataset to this many samples (0 = all)");
    cmd->add_option("--aug-drop", hyper.aug.det_drop_prob,
                    "Detection drop probability");
    cmd->add_option("--aug-pos-sigma", hyper.aug.pos_sigma,
                    "Position noise sigma (m)");
    cmd->add_option("--aug-term", hyper.aug.term_prob,
                    "Track-termination simulation probability");
    cmd->add_option("--aug-track-drop", hyper.aug.track_drop_prob,
                    "Track-drop (initialization simulation) probability");
  }
};

std::string with_suffix(const std::string& path, const std::string& suffix) {
  fs::path p(path);
  return (p.parent_path() / (p.stem().string() + suffix + p.extension().string()))
      .string();
}

int cmd_train(TrainFlags& flags, const GraphFlags& gflags) {
  flags.hyper.augment_enabled = !flags.no_augment;
  if (flags.two_stage) {
    if (flags.scenes_path.empty())
      throw DataError("--two-stage requires --scenes (the tracker reruns them)");
    auto scenes = load_scenes(flags.scenes_path);
    PipelineConfig cfg;
    cfg.graph = gflags.to_config(scenes.front().classes);
    cfg.hyper = flags.hyper;
    cfg.L = flags.L;
    cfg.seed = flags.hyper.seed;
    cfg.warm_start_stage2 = flags.warm_start;
    PipelineResult res = two_stage_pipeline(scenes, cfg);
    for (const std::string& w : res.warnings) std::cerr << "warning: " << w << "\n";
    const std::string p1 = with_suffix(flags.out, "_stage1");
    const std::string p2 = with_suffix(flags.out, "_stage2");
    save_model(res.stage1, p1);
    save_model(res.stage2, p2);
    save_loss_curve(res.curve1, with_suffix(flags.out, "_stage1_loss") + ".csv");
    save_loss_curve(res.curve2, with_suffix(flags.out, "_stage2_loss") + ".csv");
    std::cout << p1 << "\n" << p2 << "\n";
    return 0;
  }

  std::vector<TrainingSample> samples;
  GraphConfig gcfg;
  int C = 0;
  KalmanParams params = KalmanParams::defaults(1);
  if (!flags.dataset_path.empty()) {
    LoadedDataset ds = load_dataset(flags.dataset_path);
    samples = std::move(ds.samples);
    gcfg = ds.graph;
    C = ds.C;
    params = KalmanParams::defaults(C);
  } else if (!flags.scenes_path.empty()) {
    auto scenes = load_scenes(flags.scenes_path);
    C = scenes.front().classes.count();
    gcfg = gflags.to_config(scenes.front().classes);
    auto est = estimate_params(scenes);
    for (const std::string& w : est.warnings) std::cerr << "warning: " << w << "\n";
    params = est.params;
    samples = build_stage1_dataset(scenes, params, gcfg);
  } else {
    throw DataError("train needs --scenes or --dataset");
  }
  if (flags.mpn_baseline) samples = strip_tracks(std::move(samples), C, gcfg);
  if (flags.max_samples > 0 &&
      samples.size() > static_cast<size_t>(flags.max_samples))
    samples.resize(flags.max_samples);

  NmpModel model = init_nmp_model(C, flags.L, gcfg.track_edge_dim(),
                                  mix_seed(flags.hyper.seed, 1));
  model.kalman = params;
  fit_feature_stats(model, samples);
  auto curve = train_epochs(samples, model, flags.hyper, gcfg);
  save_model(model, flags.out);
  save_loss_curve(curve, with_suffix(flags.out, "_loss") + ".csv");
  std::cout << flags.out << "\n";
  return 0;
}

struct TrackFlags {
  std::string scenes_path, model_path, out;
  std::string method = "nmp";
  bool mpn_baseline = false;
  bool oracle_scores = false;
  bool no_report_preliminary = false;
  uint64_t seed = 1;
  int max_stale_frames = 3;
  double max_stale_time = 1.5;
  int max_candidates = 16;
  bool f64 = false;

  void attach(CLI::App* cmd) {
    cmd->add_option("--scenes", scenes_path, "Scene directory or file")
        ->required();
    cmd->add_option("--model", model_path, "Model checkpoint")->required();
    cmd->add_option("-o,--out", out, "Output directory")->required();
    cmd->add_option("--method", method, "nmp | mahalanobis");
    cmd->add_flag("--mpn-baseline", mpn_baseline,
                  "Track without track nodes/edges");
    cmd->add_flag("--oracle-scores", oracle_scores,
                  "Replace classifier scores with GT labels (scenes need GT)");
    cmd->add_flag("--no-report-preliminary", no_report_preliminary,
                  "Suppress single-detection preliminary tracks in the output");
    cmd->add_option("--seed", seed, "Tie-break seed");
    cmd->add_option("--max-stale-frames", max_stale_frames,
                    "Termination threshold in frames");
    cmd->add_option("--max-stale-time", max_stale_time,
                    "Termination threshold in seconds");
    cmd->add_option("--max-candidates", max_candidates,
                    "Assignment enumeration cap per frame");
    cmd->add_flag("--f64", f64, "Run inference in double precision");
  }
};

int cmd_track(const TrackFlags& flags, const GraphFlags& gflags, int jobs) {
  NmpModel model = load_model(flags.model_path);
  fs::create_directories(flags.out);
  auto files = list_scene_files(flags.scenes_path);
  std::vector<std::string> written(files.size());
  parallel_for(jobs, files.size(), [&](size_t i) {
    Scene scene = load_scene(files[i]);
    std::string mode;
    std::vector<TrackOutput> outs;
    if (flags.method == "mahalanobis") {
      MahalanobisConfig mc;
      mc.max_stale_frames = flags.max_stale_frames;
      mc.max_stale_time = flags.max_stale_time;
      outs = run_mahalanobis(scene, model.kalman, mc);
      mode = "mahalanobis";
    } else if (flags.method == "nmp") {
      TrackerConfig cfg;
      cfg.graph = gflags.to_config(scene.classes);
      cfg.mpn_baseline = flags.mpn_baseline;
      cfg.report_preliminary = !flags.no_report_preliminary;
      cfg.seed = flags.seed;
      cfg.max_stale_frames = flags.max_stale_frames;
      cfg.max_stale_time = flags.max_stale_time;
      cfg.max_candidates = flags.max_candidates;
      cfg.f32_inference = !flags.f64;
      ScoreOverride oracle;
      if (flags.oracle_scores) {
        if (!scene.has_gt())
          throw DataError("--oracle-scores requires scenes with ground truth");
        oracle = oracle_score_override(scene);
      }
      outs = run_scene(scene, model, cfg, oracle);
      mode = flags.mpn_baseline ? "mpn_baseline" : "full";
      if (flags.oracle_scores) mode += "+oracle";
    } else {
      throw DataError("unknown tracking method '" + flags.method + "'");
    }
    const std::string path =
        (fs::path(flags.out) / ("tracks_" + scene.scene_id + ".jsonl")).string();
    save_track_outputs(path, {scene.scene_id, mode, flags.seed}, outs);
    written[i] = path;
  });
  for (const std::string& p : written) std::cout << p << "\n";
  return 0;
}

int cmd_eval(const std::string& scenes_path, const std::string& outputs_path,
             const std::string& report_path, double threshold, double radius) {
  auto scenes = load_scenes(scenes_path);
  std::map<std::string, TrackFile> by_scene;
  for (const auto& e : fs::directory_iterator(outputs_path)) {
    if (e.path().extension() != ".jsonl") continue;
    TrackFile tf = load_track_outputs(e.path().string());
    by_scene[tf.meta.scene_id] = std::move(tf);
  }
  std::vector<ScenePair> pairs;
  for (const Scene& s : scenes) {
    auto it = by_scene.find(s.scene_id);
    if (it == by_scene.end())
      throw DataError("no track output found for scene '" + s.scene_id + "'");
    pairs.push_back({&s, &it->second.outputs});
  }
  EvalReport rep =
      evaluate_report(pairs, scenes.front().classes, threshold, radius);
  std::cout << report_table(rep);
  if (!report_path.empty()) {
    std::ofstream os(report_path);
    if (!os) throw DataError("cannot open '" + report_path + "' for writing");
    os << report_json(rep).dump(2) << "\n";
  }
  return 0;
}

int cmd_bench(const std::string& scene_path, const std::string& model_path,
              int repeats, int warmup, const std::string& report_path,
              const std::string& csv_path, const GraphFlags& gflags) {
  Scene scene = load_scene(scene_path);
  NmpModel model = load_model(model_path);
  TrackerConfig cfg;
  cfg.graph = gflags.to_config(scene.classes);
  LatencyReport rep = bench_scene(scene, model, cfg, repeats, warmup);
  json j = bench_json(rep);
  std::cout << j.dump(2) << "\n";
  if (!report_path.empty()) {
    std::ofstream os(report_path);
    os << j.dump(2) << "\n";
  }
  if (!csv_path.empty()) bench_csv(rep, csv_path);
  return 0;
}

int cmd_inspect_graph(const std::string& scene_path, int frame,
                      const std::string& model_path, const std::string& out,
                      const GraphFlags& gflags) {
  Scene scene = load_scene(scene_path);
  const GraphConfig gcfg = gflags.to_config(scene.classes);
  TrackingGraph g;
  GraphScores scores;
  bool have_scores = false;
  if (!model_path.empty()) {
    NmpModel model = load_model(model_path);
    TrackerConfig cfg;
    cfg.graph = gcfg;
    StepObserver obs = [&](const StepView& view) {
      if (view.frame == frame) {
        g = *view.graph;
        scores = *view.scores;
        have_scores = true;
      }
    };
    Scene prefix = scene;
    std::erase_if(prefix.frames,
                  [&](const Frame& f) { return f.index > frame; });
    std::erase_if(prefix.gt, [&](const GtBox& b) { return b.frame > frame; });
    run_scene(prefix, model, cfg, nullptr, obs);
    if (!have_scores) throw DataError("frame index not present in the scene");
  } else {
    std::vector<Frame> window;
    for (const Frame& f : scene.frames)
      if (f.index <= frame) window.push_back(f);
    if (window.empty()) throw DataError("frame index not present in the scene");
    const int take = std::min<int>(gcfg.window, static_cast<int>(window.size()));
    window.erase(window.begin(), window.end() - take);
    g = build_graph(window, {}, scene.classes.count(), gcfg);
  }

  json j;
  j["frame"] = frame;
  j["center"] = vec3_json(g.center);
  j["frames"] = g.frame_index;
  json dn = json::array();
  for (size_t i = 0; i < g.dnodes.size(); ++i) {
    json n;
    n["index"] = i;
    n["det_id"] = g.dnodes[i].det.det_id;
    n["frame"] = g.frame_index[g.dnodes[i].fpos];
    n["class"] = g.dnodes[i].det.class_id;
    n["feature"] = std::vector<double>(g.xd.row(static_cast<int>(i)),
                                       g.xd.row(static_cast<int>(i)) + g.xd.cols);
    if (have_scores) n["score"] = scores.d[i];
    dn.push_back(std::move(n));
  }
  json tn = json::array();
  for (size_t k = 0; k < g.tnodes.size(); ++k) {
    json n;
    n["index"] = k;
    n["track_id"] = g.tnodes[k].track_id;
    n["frame"] = g.frame_index[g.tnodes[k].fpos];
    n["feature"] = std::vector<double>(g.xt.row(static_cast<int>(k)),
                                       g.xt.row(static_cast<int>(k)) + g.xt.cols);
    tn.push_back(std::move(n));
  }
  j["nodes"] = json{{"detection", std::move(dn)}, {"track", std::move(tn)}};
  json de = json::array();
  for (size_t e = 0; e < g.dedges.size(); ++e) {
    json n;
    n["i"] = g.dedges[e].i;
    n["j"] = g.dedges[e].j;
    n["feature"] = std::vector<double>(g.xdd.row(static_cast<int>(e)),
                                       g.xdd.row(static_cast<int>(e)) + g.xdd.cols);
    if (have_scores) n["score"] = scores.dd[e];
    de.push_back(std::move(n));
  }
  json te = json::array();
  for (size_t e = 0; e < g.tedges.size(); ++e) {
    json n;
    n["k"] = g.tedges[e].k;
    n["i"] = g.tedges[e].i;
    n["feature"] = std::vector<double>(g.xtd.row(static_cast<int>(e)),
                                       g.xtd.row(static_cast<int>(e)) + g.xtd.cols);
    if (have_scores) n["score"] = scores.td[e];
    te.push_back(std::move(n));
  }
  j["edges"] = json{{"detection", std::move(de)}, {"track", std::move(te)}};
  if (out.empty()) {
    std::cout << j.dump(2) << "\n";
  } else {
    std::ofstream os(out);
    if (!os) throw DataError("cannot open '" + out + "' for writing");
    os << j.dump(2) << "\n";
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"graphmot: learnable graph tracking over detections and "
               "Kalman-filtered tracks"};
  app.require_subcommand(1);
  app.set_config("--config", "", "Read defaults from a key=value file");
  int jobs = 1;
  app.add_option("--jobs", jobs, "Parallel scene workers (default 1)");

  SimFlags sim_flags;
  auto* sim_cmd = app.add_subcommand("simulate", "Generate synthetic scenes");
  sim_flags.attach(sim_cmd);

  std::string md_scenes, md_out;
  GraphFlags md_graph;
  auto* md_cmd = app.add_subcommand("make-dataset",
                                    "Build the offline training dataset");
  md_cmd->add_option("--scenes", md_scenes, "Scene directory or file")
      ->required();
  md_cmd->add_option("-o,--out", md_out, "Dataset directory")->required();
  md_graph.attach(md_cmd);

  TrainFlags train_flags;
  GraphFlags train_graph;
  auto* train_cmd = app.add_subcommand("train", "Train the classifier");
  train_flags.attach(train_cmd);
  train_graph.attach(train_cmd);

  TrackFlags track_flags;
  GraphFlags track_graph;
  auto* track_cmd = app.add_subcommand("track", "Run the closed-loop tracker");
  track_flags.attach(track_cmd);
  track_graph.attach(track_cmd);

  std::string ev_scenes, ev_outputs, ev_report;
  double ev_threshold = 0.0, ev_radius = 2.0;
  auto* eval_cmd = app.add_subcommand("eval", "Evaluate track outputs");
  eval_cmd->add_option("--scenes", ev_scenes, "Scene directory (ground truth)")
      ->required();
  eval_cmd->add_option("--outputs", ev_outputs, "Track output directory")
      ->required();
  eval_cmd->add_option("-o,--report", ev_report, "Report JSON path");
  eval_cmd->add_option("--threshold", ev_threshold,
                       "Score threshold for the single-point metrics");
  eval_cmd->add_option("--radius", ev_radius, "Match radius (m)");

  std::string bn_scene, bn_model, bn_report, bn_csv;
  int bn_repeats = 1, bn_warmup = 3;
  GraphFlags bn_graph;
  auto* bench_cmd = app.add_subcommand("bench", "Measure per-stage latency");
  bench_cmd->add_option("--scene", bn_scene, "Scene file")->required();
  bench_cmd->add_option("--model", bn_model, "Model checkpoint")->required();
  bench_cmd->add_option("--repeats", bn_repeats, "Timed repetitions");
  bench_cmd->add_option("--warmup", bn_warmup, "Warmup frames per repetition");
  bench_cmd->add_option("-o,--report", bn_report, "Report JSON path");
  bench_cmd->add_option("--csv", bn_csv, "Per-frame CSV path");
  bn_graph.attach(bench_cmd);

  std::string ig_scene, ig_model, ig_out;
  int ig_frame = 0;
  GraphFlags ig_graph;
  auto* ig_cmd = app.add_subcommand("inspect-graph",
                                    "Dump a tracking graph as JSON");
  ig_cmd->add_option("--scene", ig_scene, "Scene file")->required();
  ig_cmd->add_option("--frame", ig_frame, "Anchor frame index")->required();
  ig_cmd->add_option("--model", ig_model,
                     "Optional checkpoint: closed-loop graph with scores");
  ig_cmd->add_option("-o,--out", ig_out, "Output path (stdout when omitted)");
  ig_graph.attach(ig_cmd);

  CLI11_PARSE(app, argc, argv);

  try {
    if (sim_cmd->parsed()) return cmd_simulate(sim_flags, jobs);
    if (md_cmd->parsed()) return cmd_make_dataset(md_scenes, md_out, md_graph);
    if (train_cmd->parsed()) return cmd_train(train_flags, train_graph);
    if (track_cmd->parsed()) return cmd_track(track_flags, track_graph, jobs);
    if (eval_cmd->parsed())
      return cmd_eval(ev_scenes, ev_outputs, ev_report, ev_threshold, ev_radius);
    if (bench_cmd->parsed())
      return cmd_bench(bn_scene, bn_model, bn_repeats, bn_warmup, bn_report,
                       bn_csv, bn_graph);
    if (ig_cmd->parsed())
      return cmd_inspect_graph(ig_scene, ig_frame, ig_model, ig_out, ig_graph);
  } catch (const DataError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  }
  return 1;
}
