// Command-line front end: scenario generation, preprocessing, training,
// prediction, tracking, evaluation and gradient checking.
//
// Exit codes: 0 success, 1 invalid input/configuration, 2 runtime failure.

#include <cmath>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "stgdat/context_maps.hpp"
#include "stgdat/data_io.hpp"
#include "stgdat/grad_check.hpp"
#include "stgdat/rng.hpp"
#include "stgdat/synth.hpp"
#include "stgdat/tracker.hpp"
#include "stgdat/trainer.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace stgdat;

namespace {

std::string read_text(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::invalid_argument("cannot read " + path);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write_text(const std::string& path, const std::string& content) {
  const fs::path p(path);
  if (p.has_parent_path()) fs::create_directories(p.parent_path());
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write " + path);
  out << content;
}

std::string fnv_hex(const std::string& s) {
  std::uint64_t h = 1469598103934665603ull;
  for (char c : s) {
    h ^= static_cast<unsigned char>(c);
    h *= 1099511628211ull;
  }
  static const char* digits = "0123456789abcdef";
  std::string out(16, '0');
  for (int i = 15; i >= 0; --i) {
    out[static_cast<std::size_t>(i)] = digits[h & 0xF];
    h >>= 4;
  }
  return out;
}

// Sidecar manifest: which command, with which resolved options and seed,
// produced which artifact (hash of the artifact bytes included).
void write_manifest(const std::string& artifact, const std::string& command,
                    const json& resolved_config, std::uint64_t seed,
                    const std::vector<std::string>& inputs,
                    const std::vector<std::string>& outputs) {
  json m;
  m["format_version"] = 1;
  m["command"] = command;
  m["config"] = resolved_config;
  m["seed"] = seed;
  m["inputs"] = inputs;
  m["outputs"] = outputs;
  m["content_hash"] = fnv_hex(read_text(artifact));
  write_text(artifact + ".manifest.json", m.dump(2) + "\n");
}

std::string stem_of(const std::string& path) { return fs::path(path).stem().string(); }

ctx::MapRegistry load_registry(const std::string& dir) {
  ctx::MapRegistry reg;
  if (!fs::is_directory(dir)) {
    throw std::invalid_argument("map directory not found: " + dir);
  }
  std::vector<std::string> names;
  for (const auto& entry : fs::directory_iterator(dir)) {
    const fs::path p = entry.path();
    if (p.extension() != ".json") continue;
    const std::string name = p.stem().string();
    if (name.size() > 9 && name.ends_with(".manifest")) continue;
    fs::path bin = p;
    bin.replace_extension(".bin");
    if (!fs::exists(bin)) continue;
    names.push_back(name);
  }
  std::sort(names.begin(), names.end());
  for (const std::string& name : names) {
    ctx::ContextMap m = ctx::load_map((fs::path(dir) / name).string());
    if (name == "_pooled") {
      reg.pooled = std::move(m);
    } else {
      reg.by_scene.emplace(name, std::move(m));
    }
  }
  if (reg.by_scene.empty() && !reg.pooled.has_value()) {
    throw std::invalid_argument("no context maps found in " + dir);
  }
  return reg;
}

// ---- gen-synthetic ---------------------------------------------------------

struct GenOpts {
  std::string archetype = "mixed";
  int scenes = 10;
  int agents = 3;
  int duration = 40;
  double dt = 0.5;
  double noise = 0.0;
  double cruise = 5.0;
  double radius = 10.0;
  std::uint64_t seed = 0;
  std::string out;
};

void run_gen(const GenOpts& o) {
  if (o.scenes < 1) throw std::invalid_argument("--scenes must be >= 1");
  static const std::vector<std::string> kCycle = {"highway", "intersection",
                                                  "roundabout"};
  fs::create_directories(o.out);
  json files = json::array();
  const Rng root(o.seed);
  for (int i = 0; i < o.scenes; ++i) {
    synth::ScenarioSpec spec;
    const std::string arch =
        o.archetype == "mixed" ? kCycle[static_cast<std::size_t>(i % 3)] : o.archetype;
    spec.archetype = synth::archetype_from_string(arch);
    spec.n_agents = o.agents;
    spec.duration_steps = o.duration;
    spec.dt = o.dt;
    spec.noise_std = o.noise;
    spec.cruise_speed = o.cruise;
    spec.radius = o.radius;
    spec.seed = root.derive("scene." + std::to_string(i)).seed();
    spec.validate();
    const synth::GeneratedScene scene = synth::generate(spec);
    const std::string name = arch + "_" + std::to_string(i);
    const std::string csv = (fs::path(o.out) / (name + ".csv")).string();
    data::write_csv(csv, scene.observed, o.dt, true);
    json geom;
    geom["lane_polylines"] = json::array();
    for (const auto& line : scene.geometry.lane_polylines) {
      json pl = json::array();
      for (const Vec2& p : line) pl.push_back({p.x, p.y});
      geom["lane_polylines"].push_back(pl);
    }
    geom["conflict_points"] = json::array();
    for (const Vec2& p : scene.geometry.conflict_points) {
      geom["conflict_points"].push_back({p.x, p.y});
    }
    write_text((fs::path(o.out) / (name + ".geometry.json")).string(),
               geom.dump(2) + "\n");
    files.push_back(name + ".csv");
  }
  json ds;
  ds["format_version"] = 1;
  ds["frame_dt"] = o.dt;
  ds["files"] = files;
  ds["archetype"] = o.archetype;
  ds["seed"] = o.seed;
  const std::string index = (fs::path(o.out) / "dataset.json").string();
  write_text(index, ds.dump(2) + "\n");
  json cfg = {{"archetype", o.archetype}, {"scenes", o.scenes},
              {"agents", o.agents},       {"duration", o.duration},
              {"dt", o.dt},               {"noise", o.noise},
              {"cruise", o.cruise},       {"radius", o.radius}};
  write_manifest(index, "gen-synthetic", cfg, o.seed, {}, {o.out});
  std::printf("wrote %d scenes to %s\n", o.scenes, o.out.c_str());
}

// ---- preprocess ------------------------------------------------------------

struct PrepOpts {
  std::vector<std::string> inputs;
  double frame_dt = 0.5;
  double dt = 0.0;  // 0: same as frame_dt
  int history = 4;
  int future = 10;
  double train_ratio = 0.7;
  double val_ratio = 0.15;
  double test_ratio = 0.15;
  double cell_size = 2.0;
  double margin = 10.0;
  bool derive = false;
  std::uint64_t seed = 0;
  std::string out;
};

std::vector<std::string> scene_ids_of(const std::vector<data::SceneSample>& samples) {
  std::vector<std::string> ids;
  for (const data::SceneSample& s : samples) {
    if (ids.empty() || ids.back() != s.scene_id) {
      if (std::find(ids.begin(), ids.end(), s.scene_id) == ids.end()) {
        ids.push_back(s.scene_id);
      }
    }
  }
  std::sort(ids.begin(), ids.end());
  return ids;
}

void run_prep(const PrepOpts& o) {
  const double grid_dt = o.dt > 0.0 ? o.dt : o.frame_dt;
  const data::HorizonConfig horizon{o.history, o.future, grid_dt};
  if (o.history < 1 || o.future < 1) {
    throw std::invalid_argument("--history and --future must be >= 1 steps");
  }
  std::vector<data::SceneSample> samples;
  std::map<std::string, std::vector<data::AgentTrajectory>> resampled;
  for (const std::string& file : o.inputs) {
    std::vector<data::AgentTrajectory> trajs =
        data::load_csv(file, {.frame_dt = o.frame_dt});
    trajs = data::resample(trajs, grid_dt);
    if (o.derive) {
      for (data::AgentTrajectory& tr : trajs) data::derive_kinematics(tr);
    }
    const std::string id = stem_of(file);
    auto windows = data::make_samples(trajs, horizon, id);
    samples.insert(samples.end(), windows.begin(), windows.end());
    resampled.emplace(id, std::move(trajs));
  }
  if (samples.empty()) {
    throw std::invalid_argument("preprocess: no usable windows in the inputs");
  }
  const data::SplitResult split = data::split_by_scene(
      samples, o.train_ratio, o.val_ratio, o.test_ratio, o.seed);
  if (split.train.empty()) {
    throw std::invalid_argument("preprocess: training split came out empty");
  }
  const ctx::MapRegistry reg =
      model::build_registry(split.train, o.cell_size, o.margin);

  const fs::path outdir(o.out);
  fs::create_directories(outdir / "scenes");
  fs::create_directories(outdir / "maps");
  for (const auto& [id, trajs] : resampled) {
    data::write_csv((outdir / "scenes" / (id + ".csv")).string(), trajs, grid_dt,
                    true);
  }
  for (const auto& [id, map] : reg.by_scene) {
    ctx::save_map(map, (outdir / "maps" / id).string());
  }
  ctx::save_map(*reg.pooled, (outdir / "maps" / "_pooled").string());

  json ds;
  ds["format_version"] = 1;
  ds["horizon"] = {{"history_steps", o.history},
                   {"future_steps", o.future},
                   {"dt", grid_dt}};
  ds["splits"] = {{"train", scene_ids_of(split.train)},
                  {"val", scene_ids_of(split.val)},
                  {"test", scene_ids_of(split.test)}};
  ds["window_counts"] = {{"train", split.train.size()},
                         {"val", split.val.size()},
                         {"test", split.test.size()}};
  ds["cell_size"] = o.cell_size;
  ds["margin"] = o.margin;
  const std::string index = (outdir / "dataset.json").string();
  write_text(index, ds.dump(2) + "\n");
  json cfg = {{"frame_dt", o.frame_dt},     {"dt", grid_dt},
              {"history", o.history},       {"future", o.future},
              {"train_ratio", o.train_ratio}, {"val_ratio", o.val_ratio},
              {"test_ratio", o.test_ratio}, {"cell_size", o.cell_size},
              {"margin", o.margin},         {"derive_kinematics", o.derive}};
  write_manifest(index, "preprocess", cfg, o.seed, o.inputs, {o.out});
  std::printf("windows: train=%zu val=%zu test=%zu\n", split.train.size(),
              split.val.size(), split.test.size());
}

// ---- shared dataset loading -------------------------------------------------

struct Dataset {
  data::HorizonConfig horizon;
  std::vector<data::SceneSample> train, val, test;
  ctx::MapRegistry registry;
};

std::vector<data::SceneSample> load_split(const fs::path& dir,
                                          const std::vector<std::string>& ids,
                                          const data::HorizonConfig& horizon) {
  std::vector<data::SceneSample> out;
  for (const std::string& id : ids) {
    const std::string csv = (dir / "scenes" / (id + ".csv")).string();
    auto trajs = data::load_csv(csv, {.frame_dt = horizon.dt});
    auto windows = data::make_samples(trajs, horizon, id);
    out.insert(out.end(), windows.begin(), windows.end());
  }
  return out;
}

Dataset load_dataset(const std::string& dir) {
  const json ds = json::parse(read_text((fs::path(dir) / "dataset.json").string()));
  Dataset out;
  out.horizon.history_steps = ds.at("horizon").at("history_steps").get<int>();
  out.horizon.future_steps = ds.at("horizon").at("future_steps").get<int>();
  out.horizon.dt = ds.at("horizon").at("dt").get<double>();
  out.train = load_split(dir, ds.at("splits").at("train").get<std::vector<std::string>>(),
                         out.horizon);
  out.val = load_split(dir, ds.at("splits").at("val").get<std::vector<std::string>>(),
                       out.horizon);
  out.test = load_split(dir, ds.at("splits").at("test").get<std::vector<std::string>>(),
                        out.horizon);
  out.registry = load_registry((fs::path(dir) / "maps").string());
  return out;
}

// ---- train -------------------------------------------------------------------

struct TrainOpts {
  std::string data;
  std::string config;
  std::string variant;
  int epochs = 100;
  int batch_size = 64;
  double lr = 0.001;
  double clip = 5.0;
  int patience = 10;
  std::uint64_t seed = 0;
  int threads = 1;
  std::string out;
  std::string metrics;
  bool verbose = false;
};

void run_train(const TrainOpts& o) {
  model::ModelConfig mc;
  if (!o.config.empty()) mc = model::ModelConfig::from_json(read_text(o.config));
  if (!o.variant.empty()) mc.variant = model::variant_from_string(o.variant);
  mc.loss.validate();  // catch bad weights before the dataset load
  Dataset ds = load_dataset(o.data);
  mc.horizon = ds.horizon;
  mc.init_seed = o.seed;
  mc.finalize();
  mc.validate();

  model::TrainConfig tc;
  tc.epochs = o.epochs;
  tc.batch_size = o.batch_size;
  tc.optimizer.learning_rate = o.lr;
  tc.clip_norm = o.clip;
  tc.patience = o.patience;
  tc.seed = o.seed;
  tc.threads = o.threads;
  tc.verbose = o.verbose;
  tc.validate();
  if (ds.val.empty()) {
    throw std::invalid_argument("train: the dataset has no validation split");
  }

  model::Model m = model::Model::create(mc);
  const ctx::MapRegistry* reg = m.uses_context() ? &ds.registry : nullptr;
  const model::TrainResult res = model::train(m, ds.train, ds.val, reg, tc);
  model::save_checkpoint(m, o.out);
  const std::string metrics_path = o.metrics.empty() ? o.out + ".metrics.jsonl" : o.metrics;
  write_text(metrics_path, res.metrics_jsonl());

  json cfg = json::parse(mc.to_json());
  cfg["train"] = {{"epochs", o.epochs},     {"batch_size", o.batch_size},
                  {"learning_rate", o.lr},  {"clip_norm", o.clip},
                  {"patience", o.patience}, {"threads", o.threads}};
  write_manifest(o.out, "train", cfg, o.seed, {o.data}, {o.out, metrics_path});
  std::printf("best_epoch=%d best_val_ade=%.6f epochs_run=%zu%s\n", res.best_epoch,
              res.best_val_ade, res.epochs.size(),
              res.early_stopped ? " (early stop)" : "");
}

// ---- predict -----------------------------------------------------------------

struct PredictOpts {
  std::string checkpoint;
  std::string scene;
  double frame_dt = 0.5;
  std::string maps;
  int k = 1;
  bool sample_prior = false;
  std::string uncertainty = "none";
  int particles = 100;
  std::uint64_t seed = 0;
  int threads = 1;
  std::string out;
};

data::HistoryWindow window_from_csv(const std::string& path, double frame_dt,
                                    const data::HorizonConfig& horizon) {
  auto trajs = data::load_csv(path, {.frame_dt = frame_dt});
  trajs = data::resample(trajs, horizon.dt);
  data::HistoryWindow w;
  w.scene_id = stem_of(path);
  w.horizon = horizon;
  const auto t_h = static_cast<std::size_t>(horizon.history_steps);
  for (data::AgentTrajectory& tr : trajs) {
    if (tr.points.size() < t_h) {
      throw std::invalid_argument("agent " + std::to_string(tr.agent_id) + " in " +
                                  path + " has fewer than " + std::to_string(t_h) +
                                  " usable steps");
    }
    data::AgentTrajectory cut;
    cut.agent_id = tr.agent_id;
    cut.type = tr.type;
    cut.points.assign(tr.points.end() - static_cast<std::ptrdiff_t>(t_h),
                      tr.points.end());
    w.agents.push_back(std::move(cut));
  }
  if (w.agents.empty()) throw std::invalid_argument("no agents in " + path);
  return w;
}

void run_predict(const PredictOpts& o) {
  model::Model m = model::load_checkpoint(o.checkpoint);
  const data::HistoryWindow w = window_from_csv(o.scene, o.frame_dt, m.cfg.horizon);
  ctx::MapRegistry reg;
  const ctx::MapRegistry* regp = nullptr;
  if (!o.maps.empty()) {
    reg = load_registry(o.maps);
    regp = &reg;
  }
  model::PredictOptions po;
  po.k = o.k;
  po.zero_latent = !o.sample_prior;
  po.seed = o.seed;
  po.particles = o.particles;
  if (o.uncertainty == "gaussian") {
    po.uncertainty = model::PredictOptions::Uncertainty::gaussian;
  } else if (o.uncertainty == "mc") {
    po.uncertainty = model::PredictOptions::Uncertainty::monte_carlo;
  } else if (o.uncertainty != "none") {
    throw std::invalid_argument("--uncertainty must be none, gaussian or mc");
  }
  po.validate();
  const model::Prediction pred = model::predict(m, w, regp, po);
  write_text(o.out, pred.to_json() + "\n");
  json cfg = {{"k", o.k},
              {"zero_latent", po.zero_latent},
              {"uncertainty", o.uncertainty},
              {"particles", o.particles},
              {"threads", o.threads},
              {"checkpoint_hash", fnv_hex(read_text(o.checkpoint))}};
  write_manifest(o.out, "predict", cfg, o.seed, {o.checkpoint, o.scene}, {o.out});
  std::printf("wrote %zu agent predictions to %s\n", pred.agents.size(),
              o.out.c_str());
}

// ---- track -------------------------------------------------------------------

struct TrackOpts {
  std::string scene;
  double frame_dt = 0.5;
  int history = 4;
  std::string mode = "cvm";
  std::string checkpoint;
  std::string maps;
  double noise = 0.0;
  double r_std = 0.01;
  double q_pos = 1e-6;
  double q_vel = 1e-4;
  double q_acc = 1e-4;
  std::vector<std::string> occlusions;
  std::uint64_t seed = 0;
  int threads = 1;
  std::string out;
};

void run_track(const TrackOpts& o) {
  auto trajs = data::load_csv(o.scene, {.frame_dt = o.frame_dt});
  if (trajs.empty()) throw std::invalid_argument("no agents in " + o.scene);
  const int total = static_cast<int>(trajs[0].points.size());
  data::SceneSample s;
  s.scene_id = stem_of(o.scene);
  s.horizon = {o.history, total - o.history, o.frame_dt};
  s.agents = trajs;

  track::TrackingConfig tc;
  tc.mode = track::process_mode_from_string(o.mode);
  tc.measurement.r = Eigen::Matrix2d::Identity() * (o.r_std * o.r_std);
  tc.process_noise.q_pos = o.q_pos;
  tc.process_noise.q_vel = o.q_vel;
  tc.process_noise.q_acc = o.q_acc;
  tc.meas_noise_std = o.noise;
  tc.seed = o.seed;
  for (const std::string& occ : o.occlusions) {
    const auto colon = occ.find(':');
    if (colon == std::string::npos) {
      throw std::invalid_argument("--occlusion wants first:last step indices");
    }
    tc.occlusions.emplace_back(std::stoi(occ.substr(0, colon)),
                               std::stoi(occ.substr(colon + 1)));
  }
  model::Model m;
  ctx::MapRegistry reg;
  if (tc.mode == track::ProcessMode::model) {
    if (o.checkpoint.empty()) {
      throw std::invalid_argument("model mode needs --checkpoint");
    }
    m = model::load_checkpoint(o.checkpoint);
    tc.predictor = &m;
    if (!o.maps.empty()) {
      reg = load_registry(o.maps);
      tc.registry = &reg;
    }
  }
  const track::TrackingReport rep = track::run_tracking(s, tc);
  write_text(o.out, rep.to_json() + "\n");
  json cfg = {{"mode", o.mode},   {"history", o.history}, {"noise", o.noise},
              {"r_std", o.r_std}, {"q_pos", o.q_pos},     {"q_vel", o.q_vel},
              {"q_acc", o.q_acc}, {"threads", o.threads}};
  std::vector<std::string> inputs = {o.scene};
  if (!o.checkpoint.empty()) inputs.push_back(o.checkpoint);
  write_manifest(o.out, "track", cfg, o.seed, inputs, {o.out});
  std::printf("position_rmse=%g velocity_rmse=%g\n", rep.position_rmse,
              rep.velocity_rmse);
}

// ---- eval --------------------------------------------------------------------

struct EvalOpts {
  std::string pred;
  std::string truth;
  double frame_dt = 0.5;
  std::string out;
};

void run_eval(const EvalOpts& o) {
  const json pj = json::parse(read_text(o.pred));
  auto truth_trajs = data::load_csv(o.truth, {.frame_dt = o.frame_dt});
  std::map<int, const data::AgentTrajectory*> by_id;
  for (const data::AgentTrajectory& tr : truth_trajs) by_id[tr.agent_id] = &tr;

  TrackSet pred_tracks, truth_tracks;
  for (const json& agent : pj.at("agents")) {
    const int id = agent.at("agent_id").get<int>();
    const auto it = by_id.find(id);
    if (it == by_id.end()) {
      throw std::invalid_argument("agent " + std::to_string(id) +
                                  " from the prediction is absent from the truth");
    }
    const json& sample = agent.at("samples").at(0);
    Track pred_track;
    for (const json& p : sample) pred_track.push_back({p.at(0), p.at(1)});
    const auto t_f = pred_track.size();
    const auto& points = it->second->points;
    if (points.size() < t_f) {
      throw std::invalid_argument("truth for agent " + std::to_string(id) +
                                  " is shorter than the prediction");
    }
    Track truth_track;
    for (std::size_t k = points.size() - t_f; k < points.size(); ++k) {
      truth_track.push_back(points[k].pos());
    }
    pred_tracks.push_back(std::move(pred_track));
    truth_tracks.push_back(std::move(truth_track));
  }
  if (pred_tracks.empty()) throw std::invalid_argument("prediction has no agents");
  const auto [ade, fde] = data::ade_fde(pred_tracks, truth_tracks);
  std::printf("ade=%g fde=%g\n", ade, fde);
  if (!o.out.empty()) {
    json rep = {{"ade", ade}, {"fde", fde}, {"n_agents", pred_tracks.size()}};
    write_text(o.out, rep.dump(2) + "\n");
    write_manifest(o.out, "eval", {{"frame_dt", o.frame_dt}}, 0,
                   {o.pred, o.truth}, {o.out});
  }
}

// ---- grad-check ----------------------------------------------------------------

struct GradOpts {
  int agents = 3;
  int history = 4;
  int future = 5;
  int probes = 2;
  double step = 1e-6;
  double tol = 1e-4;
  std::uint64_t seed = 0;
  int threads = 1;
};

data::SceneSample random_scene(const data::HorizonConfig& horizon, int agents,
                               Rng& rng) {
  data::SceneSample s;
  s.scene_id = "gradcheck";
  s.horizon = horizon;
  for (int a = 0; a < agents; ++a) {
    data::AgentTrajectory tr;
    tr.agent_id = a;
    tr.type = static_cast<data::AgentType>(a % 3);
    double x = rng.uniform(-5.0, 5.0), y = rng.uniform(-5.0, 5.0);
    double vx = rng.uniform(-2.0, 2.0), vy = rng.uniform(-2.0, 2.0);
    for (int k = 0; k < horizon.total_steps(); ++k) {
      vx += 0.1 * rng.normal();
      vy += 0.1 * rng.normal();
      x += vx * horizon.dt;
      y += vy * horizon.dt;
      data::TrajPoint p;
      p.t = k * horizon.dt;
      p.x = x;
      p.y = y;
      p.v = std::hypot(vx, vy);
      p.psi = std::atan2(vy, vx);
      tr.points.push_back(p);
    }
    s.agents.push_back(tr);
  }
  return s;
}

model::ModelConfig gradcheck_config(model::Variant v,
                                    const data::HorizonConfig& horizon,
                                    std::uint64_t seed) {
  model::ModelConfig c;
  c.features.state_hidden = 16;
  c.features.se_dim = 8;
  c.features.ce_dim = 8;
  c.features.re_dim = 4;
  c.features.rel_hidden = 8;
  c.features.crop_hw = 8;
  c.gdat.n_heads = 2;
  c.gdat.rounds = 2;
  c.latent.latent_dim = 4;
  c.latent.hidden = 16;
  c.decoder.hidden = 8;
  c.loss.fixed_bandwidth = 1.0;  // keep the discrepancy term differentiable
  c.horizon = horizon;
  c.variant = v;
  c.init_seed = seed;
  c.finalize();
  return c;
}

int run_gradcheck(const GradOpts& o) {
  const data::HorizonConfig horizon{o.history, o.future, 0.5};
  Rng scene_rng = Rng(o.seed).derive("scene");
  const data::SceneSample scene = random_scene(horizon, o.agents, scene_rng);
  const ctx::MapRegistry reg = model::build_registry({scene}, 2.0, 10.0);

  bool ok = true;
  for (auto v : {model::Variant::trajectory_only, model::Variant::uniform_attention,
                 model::Variant::with_context, model::Variant::kinematic}) {
    model::Model m = model::Model::create(gradcheck_config(v, horizon, o.seed));
    // Evaluate at a jittered point: zero-initialized biases otherwise leave
    // activations exactly on kinks, where central differences are one-sided.
    Rng jitter = Rng(o.seed).derive("jitter");
    for (int i = 0; i < static_cast<int>(m.store.count()); ++i) {
      for (double& w : m.store.at_index(i).value.data) {
        w += jitter.uniform(-0.05, 0.05);
      }
    }
    const ctx::MapRegistry* regp = m.uses_context() ? &reg : nullptr;
    const std::vector<const data::SceneSample*> scenes = {&scene};
    nn::LossBuilder build = [&](Tape& t) {
      Rng eps = Rng(o.seed).derive("eps");
      Rng prior = Rng(o.seed).derive("prior");
      return model::batch_loss(t, m, scenes, regp, eps, prior, nullptr);
    };
    nn::GradCheckConfig gc;
    gc.step = o.step;
    gc.probes_per_param = o.probes;
    gc.seed = o.seed;
    const nn::GradCheckResult res = nn::grad_check(build, m.store, gc);
    std::printf("variant=%s max_rel_err=%.3e worst=%s probes=%d\n",
                model::to_string(v).c_str(), res.max_rel_err,
                res.worst_param.c_str(), res.probes);
    if (!(res.max_rel_err < o.tol)) ok = false;
  }
  if (!ok) {
    std::fprintf(stderr, "error: gradient check exceeded tolerance %g\n", o.tol);
    return 2;
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Trajectory prediction and tracking toolkit"};
  app.require_subcommand(1);

  GenOpts gen;
  CLI::App* cgen = app.add_subcommand("gen-synthetic",
                                      "Generate synthetic driving scenes as CSV");
  cgen->add_option("--archetype", gen.archetype,
                   "highway, intersection, roundabout or mixed")
      ->check(CLI::IsMember({"highway", "intersection", "roundabout", "mixed"}));
  cgen->add_option("--scenes", gen.scenes, "number of scenes to generate");
  cgen->add_option("--agents", gen.agents, "agents per scene");
  cgen->add_option("--duration", gen.duration, "steps per scene");
  cgen->add_option("--dt", gen.dt, "seconds per step (s)");
  cgen->add_option("--noise", gen.noise, "observation position noise std (m)");
  cgen->add_option("--cruise", gen.cruise, "nominal cruise speed (m/s)");
  cgen->add_option("--radius", gen.radius, "roundabout radius (m)");
  cgen->add_option("--seed", gen.seed, "random seed");
  cgen->add_option("--out", gen.out, "output directory")->required();

  PrepOpts prep;
  CLI::App* cprep = app.add_subcommand(
      "preprocess", "Resample, window, split and build context maps");
  cprep->add_option("--in", prep.inputs, "input trajectory CSV files")->required();
  cprep->add_option("--frame-dt", prep.frame_dt, "seconds per input frame (s)");
  cprep->add_option("--dt", prep.dt, "resampling grid step (s), default frame-dt");
  cprep->add_option("--history", prep.history, "history steps per window");
  cprep->add_option("--future", prep.future, "future steps per window");
  cprep->add_option("--train-ratio", prep.train_ratio, "training scene fraction");
  cprep->add_option("--val-ratio", prep.val_ratio, "validation scene fraction");
  cprep->add_option("--test-ratio", prep.test_ratio, "test scene fraction");
  cprep->add_option("--cell-size", prep.cell_size, "context map cell size (m)");
  cprep->add_option("--margin", prep.margin, "context map margin (m)");
  cprep->add_flag("--derive-kinematics", prep.derive,
                  "recompute speed/heading from positions");
  cprep->add_option("--seed", prep.seed, "split shuffle seed");
  cprep->add_option("--out", prep.out, "output directory")->required();

  TrainOpts tr;
  CLI::App* ctr = app.add_subcommand("train", "Train a prediction model");
  ctr->add_option("--data", tr.data, "preprocessed dataset directory")->required();
  ctr->add_option("--config", tr.config, "model config JSON file");
  ctr->add_option("--variant", tr.variant,
                  "trajectory_only, uniform_attention, with_context or kinematic")
      ->check(CLI::IsMember({"trajectory_only", "uniform_attention", "with_context",
                             "kinematic", ""}));
  ctr->add_option("--epochs", tr.epochs, "maximum training epochs");
  ctr->add_option("--batch-size", tr.batch_size, "scenes per mini-batch");
  ctr->add_option("--lr", tr.lr, "Adam learning rate");
  ctr->add_option("--clip", tr.clip, "global gradient-norm clip");
  ctr->add_option("--patience", tr.patience, "early-stop patience (epochs)");
  ctr->add_option("--seed", tr.seed, "training and initialization seed");
  ctr->add_option("--threads", tr.threads, "worker threads (1 = reproducible)");
  ctr->add_option("--out", tr.out, "checkpoint output path")->required();
  ctr->add_option("--metrics", tr.metrics, "metrics JSONL path");
  ctr->add_flag("--verbose", tr.verbose, "per-epoch progress on stdout");

  PredictOpts pr;
  CLI::App* cpr = app.add_subcommand("predict", "Predict futures for a scene");
  cpr->add_option("--checkpoint", pr.checkpoint, "trained checkpoint")->required();
  cpr->add_option("--scene", pr.scene, "history CSV")->required();
  cpr->add_option("--frame-dt", pr.frame_dt, "seconds per input frame (s)");
  cpr->add_option("--maps", pr.maps, "context map directory");
  cpr->add_option("--k", pr.k, "number of sampled futures per agent");
  cpr->add_flag("--sample-prior", pr.sample_prior,
                "draw latents from the prior instead of zero");
  cpr->add_option("--uncertainty", pr.uncertainty, "none, gaussian or mc")
      ->check(CLI::IsMember({"none", "gaussian", "mc"}));
  cpr->add_option("--particles", pr.particles, "Monte Carlo particles");
  cpr->add_option("--seed", pr.seed, "sampling seed");
  cpr->add_option("--threads", pr.threads, "worker threads (1 = reproducible)");
  cpr->add_option("--out", pr.out, "prediction JSON output path")->required();

  TrackOpts tk;
  CLI::App* ctk = app.add_subcommand("track", "Run the recursive tracker");
  ctk->add_option("--scene", tk.scene, "ground-truth trajectory CSV")->required();
  ctk->add_option("--frame-dt", tk.frame_dt, "seconds per frame (s)");
  ctk->add_option("--history", tk.history, "initialization steps");
  ctk->add_option("--mode", tk.mode, "process model: model, cvm or cam")
      ->check(CLI::IsMember({"model", "cvm", "cam"}));
  ctk->add_option("--checkpoint", tk.checkpoint, "checkpoint (model mode)");
  ctk->add_option("--maps", tk.maps, "context map directory (model mode)");
  ctk->add_option("--noise", tk.noise, "simulated measurement noise std (m)");
  ctk->add_option("--r-std", tk.r_std, "filter measurement noise std (m)");
  ctk->add_option("--q-pos", tk.q_pos, "baseline position process noise (m^2)");
  ctk->add_option("--q-vel", tk.q_vel, "baseline velocity process noise (m^2/s^2)");
  ctk->add_option("--q-acc", tk.q_acc, "baseline accel process noise (m^2/s^4)");
  ctk->add_option("--occlusion", tk.occlusions,
                  "occluded step range first:last (repeatable)");
  ctk->add_option("--seed", tk.seed, "measurement noise seed");
  ctk->add_option("--threads", tk.threads, "worker threads (1 = reproducible)");
  ctk->add_option("--out", tk.out, "tracking report JSON path")->required();

  EvalOpts ev;
  CLI::App* cev = app.add_subcommand("eval", "Score predictions against truth");
  cev->add_option("--pred", ev.pred, "prediction JSON")->required();
  cev->add_option("--truth", ev.truth, "ground-truth CSV")->required();
  cev->add_option("--frame-dt", ev.frame_dt, "seconds per frame (s)");
  cev->add_option("--out", ev.out, "optional JSON report path");

  GradOpts gd;
  CLI::App* cgd = app.add_subcommand(
      "grad-check", "Verify gradients of the full objective on a random scene");
  cgd->add_option("--agents", gd.agents, "agents in the random scene");
  cgd->add_option("--history", gd.history, "history steps");
  cgd->add_option("--future", gd.future, "future steps");
  cgd->add_option("--probes", gd.probes, "probed elements per parameter");
  cgd->add_option("--step", gd.step, "finite-difference step");
  cgd->add_option("--tol", gd.tol, "max relative error tolerance");
  cgd->add_option("--seed", gd.seed, "scene and probe seed");
  cgd->add_option("--threads", gd.threads, "worker threads (1 = reproducible)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 1;
  }

  try {
    if (cgen->parsed()) {
      run_gen(gen);
    } else if (cprep->parsed()) {
      run_prep(prep);
    } else if (ctr->parsed()) {
      run_train(tr);
    } else if (cpr->parsed()) {
      run_predict(pr);
    } else if (ctk->parsed()) {
      run_track(tk);
    } else if (cev->parsed()) {
      run_eval(ev);
    } else if (cgd->parsed()) {
      return run_gradcheck(gd);
    }
  } catch (const std::invalid_argument& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 1;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 2;
  }
  return 0;
}
