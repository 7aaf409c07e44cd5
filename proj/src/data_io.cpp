#include "stgdat/data_io.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <limits>
#include <map>
#include <sstream>
#include <stdexcept>

#include "stgdat/rng.hpp"

namespace stgdat::data {

namespace {

constexpr double kGridTol = 1e-6;  // slack when snapping timestamps to the grid

std::vector<std::string> split_line(const std::string& line) {
  std::vector<std::string> out;
  std::string cur;
  for (char c : line) {
    if (c == ',') {
      out.push_back(cur);
      cur.clear();
    } else if (c != '\r') {
      cur += c;
    }
  }
  out.push_back(cur);
  for (std::string& s : out) {
    const auto b = s.find_first_not_of(" \t");
    const auto e = s.find_last_not_of(" \t");
    s = b == std::string::npos ? "" : s.substr(b, e - b + 1);
  }
  return out;
}

[[noreturn]] void fail_at(const std::string& origin, int line, const std::string& what) {
  throw std::runtime_error(origin + " line " + std::to_string(line) + ": " + what);
}

double parse_double(const std::string& s, const std::string& origin, int line,
                    const std::string& col) {
  double value = 0.0;
  const char* begin = s.data();
  const char* end = s.data() + s.size();
  const auto res = std::from_chars(begin, end, value);
  if (res.ec != std::errc() || res.ptr != end || s.empty()) {
    fail_at(origin, line, "non-numeric value '" + s + "' in column " + col);
  }
  return value;
}

}  // namespace

AgentType agent_type_from_string(const std::string& s) {
  if (s == "vehicle") return AgentType::vehicle;
  if (s == "pedestrian") return AgentType::pedestrian;
  if (s == "cyclist") return AgentType::cyclist;
  throw std::runtime_error("unknown agent_type '" + s + "'");
}

std::string to_string(AgentType t) {
  switch (t) {
    case AgentType::vehicle: return "vehicle";
    case AgentType::pedestrian: return "pedestrian";
    case AgentType::cyclist: return "cyclist";
  }
  return "vehicle";
}

std::vector<AgentTrajectory> load_csv(const std::string& path, const CsvOptions& opt) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open '" + path + "'");
  return parse_csv(in, opt, path);
}

std::vector<AgentTrajectory> parse_csv(std::istream& in, const CsvOptions& opt,
                                       const std::string& origin) {
  std::string line;
  if (!std::getline(in, line)) throw std::runtime_error(origin + ": empty file");

  // Header: locate the columns we understand.
  const std::vector<std::string> header = split_line(line);
  std::map<std::string, int> col;
  for (std::size_t i = 0; i < header.size(); ++i) {
    col[header[i]] = static_cast<int>(i);
  }
  for (const char* required : {"frame_id", "agent_id", "agent_type", "x", "y"}) {
    if (!col.count(required)) {
      throw std::runtime_error(origin + ": missing required column '" +
                               std::string(required) + "'");
    }
  }
  const bool has_v = col.count("v") != 0;
  const bool has_psi = col.count("psi") != 0;

  struct Row {
    long frame;
    TrajPoint point;
  };
  std::map<int, AgentType> types;
  std::map<int, std::vector<Row>> rows;  // keyed by agent_id; ordered
  int line_no = 1;
  int data_rows = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty() || line == "\r") continue;
    const std::vector<std::string> f = split_line(line);
    if (f.size() < header.size()) {
      fail_at(origin, line_no, "expected " + std::to_string(header.size()) +
                                   " fields, got " + std::to_string(f.size()));
    }
    const double frame_d = parse_double(f[col["frame_id"]], origin, line_no, "frame_id");
    const long frame = std::lround(frame_d);
    if (std::abs(frame_d - frame) > 1e-9) {
      fail_at(origin, line_no, "frame_id must be integral, got '" + f[col["frame_id"]] + "'");
    }
    const int agent =
        static_cast<int>(parse_double(f[col["agent_id"]], origin, line_no, "agent_id"));
    AgentType type;
    try {
      type = agent_type_from_string(f[col["agent_type"]]);
    } catch (const std::runtime_error& e) {
      fail_at(origin, line_no, e.what());
    }
    auto [it, inserted] = types.emplace(agent, type);
    if (!inserted && it->second != type) {
      fail_at(origin, line_no, "agent " + std::to_string(agent) + " changes type");
    }
    Row row;
    row.frame = frame;
    row.point.t = frame * opt.frame_dt;
    row.point.x = parse_double(f[col["x"]], origin, line_no, "x");
    row.point.y = parse_double(f[col["y"]], origin, line_no, "y");
    if (has_v) row.point.v = parse_double(f[col["v"]], origin, line_no, "v");
    if (has_psi) row.point.psi = parse_double(f[col["psi"]], origin, line_no, "psi");
    auto& list = rows[agent];
    list.push_back(row);
    ++data_rows;
  }
  if (data_rows == 0) throw std::runtime_error(origin + ": no data rows");

  std::vector<AgentTrajectory> out;
  for (auto& [agent, list] : rows) {
    for (std::size_t i = 1; i < list.size(); ++i) {
      if (list[i].frame == list[i - 1].frame) {
        throw std::runtime_error(origin + ": duplicate frame " +
                                 std::to_string(list[i].frame) + " for agent " +
                                 std::to_string(agent));
      }
      if (list[i].frame < list[i - 1].frame) {
        throw std::runtime_error(origin + ": non-monotonic frames for agent " +
                                 std::to_string(agent) + " (frame " +
                                 std::to_string(list[i].frame) + " after " +
                                 std::to_string(list[i - 1].frame) + ")");
      }
    }
    AgentTrajectory traj;
    traj.agent_id = agent;
    traj.type = types[agent];
    for (const Row& r : list) traj.points.push_back(r.point);
    if (!has_v || !has_psi) derive_kinematics(traj);
    out.push_back(std::move(traj));
  }
  return out;
}

void write_csv(const std::string& path, const std::vector<AgentTrajectory>& trajectories,
               double frame_dt, bool with_kinematics) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write '" + path + "'");
  out << (with_kinematics ? "frame_id,agent_id,agent_type,x,y,v,psi\n"
                          : "frame_id,agent_id,agent_type,x,y\n");
  out.precision(17);
  for (const AgentTrajectory& traj : trajectories) {
    for (const TrajPoint& p : traj.points) {
      const long frame = std::lround(p.t / frame_dt);
      out << frame << ',' << traj.agent_id << ',' << to_string(traj.type) << ',' << p.x
          << ',' << p.y;
      if (with_kinematics) out << ',' << p.v << ',' << p.psi;
      out << '\n';
    }
  }
  if (!out) throw std::runtime_error("write failed for '" + path + "'");
}

void derive_kinematics(AgentTrajectory& traj) {
  auto& pts = traj.points;
  if (pts.empty()) return;
  if (pts.size() == 1) {
    pts[0].v = 0.0;
    pts[0].psi = 0.0;
    return;
  }
  const std::size_t n = pts.size();
  // Speed by central difference (one-sided at the ends).
  for (std::size_t i = 0; i < n; ++i) {
    const std::size_t lo = i == 0 ? 0 : i - 1;
    const std::size_t hi = i + 1 == n ? n - 1 : i + 1;
    const double dt = pts[hi].t - pts[lo].t;
    pts[i].v = dt > 0.0 ? std::hypot(pts[hi].x - pts[lo].x, pts[hi].y - pts[lo].y) / dt
                        : 0.0;
  }
  // Heading from the forward displacement, held through standstills.
  constexpr double kMinDisp = 1e-6;  // meters
  for (std::size_t i = 0; i < n; ++i) {
    const std::size_t from = i + 1 == n ? i - 1 : i;
    const double dx = pts[from + 1].x - pts[from].x;
    const double dy = pts[from + 1].y - pts[from].y;
    pts[i].psi = std::hypot(dx, dy) < kMinDisp ? (i > 0 ? pts[i - 1].psi : 0.0)
                                               : std::atan2(dy, dx);
  }
}

std::vector<AgentTrajectory> resample(const std::vector<AgentTrajectory>& trajectories,
                                      double dt) {
  if (dt <= 0.0) throw std::invalid_argument("resample: dt must be positive");
  double t0 = 0.0;
  bool any = false;
  for (const AgentTrajectory& traj : trajectories) {
    for (const TrajPoint& p : traj.points) {
      t0 = any ? std::min(t0, p.t) : p.t;
      any = true;
    }
  }
  if (!any) return {};

  std::vector<AgentTrajectory> out;
  for (const AgentTrajectory& traj : trajectories) {
    if (traj.points.empty()) continue;
    AgentTrajectory res;
    res.agent_id = traj.agent_id;
    res.type = traj.type;
    const double first = traj.points.front().t;
    const double last = traj.points.back().t;
    long k = static_cast<long>(std::ceil((first - t0) / dt - kGridTol));
    std::size_t seg = 0;
    for (; t0 + k * dt <= last + kGridTol; ++k) {
      const double t = t0 + k * dt;
      while (seg + 2 < traj.points.size() && traj.points[seg + 1].t <= t) ++seg;
      const TrajPoint& a = traj.points[seg];
      const TrajPoint& b = traj.points[std::min(seg + 1, traj.points.size() - 1)];
      TrajPoint p;
      p.t = t;
      if (b.t <= a.t) {
        p.x = a.x; p.y = a.y; p.v = a.v; p.psi = a.psi;
      } else {
        const double f = std::clamp((t - a.t) / (b.t - a.t), 0.0, 1.0);
        p.x = a.x + f * (b.x - a.x);
        p.y = a.y + f * (b.y - a.y);
        p.v = a.v + f * (b.v - a.v);
        p.psi = interp_angle(a.psi, b.psi, f);
      }
      res.points.push_back(p);
    }
    if (!res.points.empty()) out.push_back(std::move(res));
  }
  return out;
}

HistoryWindow history_only(const SceneSample& sample) {
  HistoryWindow w;
  w.scene_id = sample.scene_id;
  w.horizon = sample.horizon;
  for (const AgentTrajectory& traj : sample.agents) {
    AgentTrajectory h;
    h.agent_id = traj.agent_id;
    h.type = traj.type;
    h.points.assign(traj.points.begin(),
                    traj.points.begin() + sample.horizon.history_steps);
    w.agents.push_back(std::move(h));
  }
  return w;
}

TrackSet future_positions(const SceneSample& sample) {
  TrackSet truth;
  for (const AgentTrajectory& traj : sample.agents) {
    Track track;
    for (int k = sample.horizon.history_steps; k < sample.horizon.total_steps(); ++k) {
      track.push_back(traj.points[static_cast<std::size_t>(k)].pos());
    }
    truth.push_back(std::move(track));
  }
  return truth;
}

std::vector<SceneSample> make_samples(const std::vector<AgentTrajectory>& trajectories,
                                      const HorizonConfig& horizon,
                                      const std::string& scene_id) {
  const int total = horizon.total_steps();
  if (total < 2 || horizon.history_steps < 1 || horizon.future_steps < 1) {
    throw std::invalid_argument("make_samples: horizon must have >= 1 step on each side");
  }
  // Shared grid: earliest timestamp defines index 0.
  double t0 = 0.0;
  bool any = false;
  for (const AgentTrajectory& traj : trajectories) {
    for (const TrajPoint& p : traj.points) {
      t0 = any ? std::min(t0, p.t) : p.t;
      any = true;
    }
  }
  std::vector<SceneSample> samples;
  if (!any) return samples;

  struct Span {
    const AgentTrajectory* traj;
    long begin;  // grid index of first point
  };
  std::vector<Span> spans;
  long max_index = 0;
  for (const AgentTrajectory& traj : trajectories) {
    if (traj.points.empty()) continue;
    const long begin = std::lround((traj.points.front().t - t0) / horizon.dt);
    for (std::size_t i = 0; i < traj.points.size(); ++i) {
      const double expected = t0 + (begin + static_cast<long>(i)) * horizon.dt;
      if (std::abs(traj.points[i].t - expected) > kGridTol) {
        throw std::invalid_argument("make_samples: trajectory for agent " +
                                    std::to_string(traj.agent_id) +
                                    " is not on the shared grid; resample first");
      }
    }
    spans.push_back({&traj, begin});
    max_index = std::max(max_index, begin + static_cast<long>(traj.points.size()) - 1);
  }

  for (long start = 0; start + total - 1 <= max_index; ++start) {
    SceneSample sample;
    sample.scene_id = scene_id;
    sample.horizon = horizon;
    for (const Span& span : spans) {
      const long lo = start - span.begin;
      const long hi = lo + total;  // exclusive
      if (lo < 0 || hi > static_cast<long>(span.traj->points.size())) continue;
      AgentTrajectory slice;
      slice.agent_id = span.traj->agent_id;
      slice.type = span.traj->type;
      slice.points.assign(span.traj->points.begin() + lo, span.traj->points.begin() + hi);
      sample.agents.push_back(std::move(slice));
    }
    if (!sample.agents.empty()) samples.push_back(std::move(sample));
  }
  return samples;
}

SplitResult split_by_scene(const std::vector<SceneSample>& samples, double train_ratio,
                           double val_ratio, double test_ratio, std::uint64_t seed) {
  if (samples.empty()) throw std::invalid_argument("split_by_scene: no samples");
  if (train_ratio < 0.0 || val_ratio < 0.0 || test_ratio < 0.0 ||
      std::abs(train_ratio + val_ratio + test_ratio - 1.0) > 1e-9) {
    throw std::invalid_argument("split_by_scene: ratios must be >= 0 and sum to 1");
  }
  std::vector<std::string> scenes;  // first-appearance order
  for (const SceneSample& s : samples) {
    if (std::find(scenes.begin(), scenes.end(), s.scene_id) == scenes.end()) {
      scenes.push_back(s.scene_id);
    }
  }
  // Fisher-Yates with the project RNG, deterministic across platforms.
  Rng rng(seed);
  for (std::size_t i = scenes.size(); i > 1; --i) {
    std::swap(scenes[i - 1],
              scenes[static_cast<std::size_t>(rng.uniform_int(0, static_cast<int>(i) - 1))]);
  }
  const std::size_t n = scenes.size();
  const std::size_t n_train = static_cast<std::size_t>(std::floor(train_ratio * n));
  const std::size_t n_val = static_cast<std::size_t>(std::floor(val_ratio * n));

  std::map<std::string, int> bucket;  // 0 train, 1 val, 2 test
  for (std::size_t i = 0; i < n; ++i) {
    bucket[scenes[i]] = i < n_train ? 0 : (i < n_train + n_val ? 1 : 2);
  }
  SplitResult result;
  for (const SceneSample& s : samples) {
    switch (bucket[s.scene_id]) {
      case 0: result.train.push_back(s); break;
      case 1: result.val.push_back(s); break;
      default: result.test.push_back(s); break;
    }
  }
  return result;
}

std::pair<double, double> ade_fde(const TrackSet& prediction, const TrackSet& truth) {
  if (prediction.size() != truth.size() || prediction.empty()) {
    throw std::invalid_argument("ade_fde: prediction/truth agent counts differ or empty");
  }
  double sum = 0.0, final_sum = 0.0;
  std::size_t steps = 0;
  for (std::size_t i = 0; i < prediction.size(); ++i) {
    if (prediction[i].size() != truth[i].size() || prediction[i].empty()) {
      throw std::invalid_argument("ade_fde: track length mismatch for agent index " +
                                  std::to_string(i));
    }
    for (std::size_t k = 0; k < prediction[i].size(); ++k) {
      sum += distance(prediction[i][k], truth[i][k]);
    }
    steps += prediction[i].size();
    final_sum += distance(prediction[i].back(), truth[i].back());
  }
  return {sum / static_cast<double>(steps),
          final_sum / static_cast<double>(prediction.size())};
}

BestOfK best_of_k(const std::vector<TrackSet>& candidates, const TrackSet& truth) {
  if (candidates.empty()) throw std::invalid_argument("best_of_k: no candidates");
  BestOfK best;
  best.min_ade = best.min_fde = std::numeric_limits<double>::infinity();
  for (std::size_t k = 0; k < candidates.size(); ++k) {
    const auto [ade, fde] = ade_fde(candidates[k], truth);
    // The reported FDE belongs to the ADE-minimizing candidate.
    if (ade < best.min_ade) {
      best.min_ade = ade;
      best.min_fde = fde;
      best.argmin_ade = static_cast<int>(k);
    }
  }
  return best;
}

}  // namespace stgdat::data
