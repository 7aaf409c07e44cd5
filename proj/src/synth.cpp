#include "stgdat/synth.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

#include "stgdat/rng.hpp"

namespace stgdat::synth {

namespace {

constexpr double kRouteStep = 0.25;     // route polyline sampling, m
constexpr double kStopMargin = 2.5;     // stop this far before a conflict, m
constexpr double kClearMargin = 5.0;    // conflict counts as cleared past this, m
constexpr double kComfortBrake = 2.0;   // braking profile deceleration, m/s^2

// Dense arclength-parameterized polyline a vehicle can follow.
struct Route {
  std::vector<Vec2> pts;
  std::vector<double> cum;

  double length() const { return cum.empty() ? 0.0 : cum.back(); }

  void append_point(const Vec2& p) {
    if (!pts.empty() && distance(pts.back(), p) < 1e-9) return;
    cum.push_back(pts.empty() ? 0.0 : cum.back() + distance(pts.back(), p));
    pts.push_back(p);
  }

  void append_line(const Vec2& from, const Vec2& to) {
    const double len = distance(from, to);
    const int n = std::max(1, static_cast<int>(std::ceil(len / kRouteStep)));
    for (int i = 0; i <= n; ++i) {
      const double f = static_cast<double>(i) / n;
      append_point({from.x + f * (to.x - from.x), from.y + f * (to.y - from.y)});
    }
  }

  // Arc around `center`, sweeping from angle a0 by `sweep` (signed, CCW > 0).
  void append_arc(const Vec2& center, double radius, double a0, double sweep) {
    const double len = std::abs(sweep) * radius;
    const int n = std::max(2, static_cast<int>(std::ceil(len / kRouteStep)));
    for (int i = 0; i <= n; ++i) {
      const double a = a0 + sweep * static_cast<double>(i) / n;
      append_point({center.x + radius * std::cos(a), center.y + radius * std::sin(a)});
    }
  }

  Vec2 at(double s) const {
    if (pts.empty()) return {};
    if (s <= 0.0) return pts.front();
    if (s >= length()) return pts.back();
    const auto it = std::lower_bound(cum.begin(), cum.end(), s);
    const std::size_t hi = static_cast<std::size_t>(it - cum.begin());
    const std::size_t lo = hi - 1;
    const double seg = cum[hi] - cum[lo];
    const double f = seg > 0.0 ? (s - cum[lo]) / seg : 0.0;
    return {pts[lo].x + f * (pts[hi].x - pts[lo].x),
            pts[lo].y + f * (pts[hi].y - pts[lo].y)};
  }

  // Arclength of the closest polyline vertex, searched locally around `hint`
  // so that self-approaching routes (roundabout circles) resolve correctly.
  double project(const Vec2& p, double hint) const {
    if (pts.empty()) return 0.0;
    const double window = 12.0;
    double best_d = std::numeric_limits<double>::infinity();
    double best_s = hint;
    for (std::size_t i = 0; i < pts.size(); ++i) {
      if (cum[i] < hint - 2.0 || cum[i] > hint + window) continue;
      const double d = distance(pts[i], p);
      if (d < best_d) {
        best_d = d;
        best_s = cum[i];
      }
    }
    return best_s;
  }
};

// Per-agent interaction context while integrating a scene.
struct Plan {
  Route route;
  double free_speed = 5.0;
  kin::VehicleState state;
  double s_proj = 0.0;
  double conflict_s = -1.0;  // own-route arclength of the conflict point
  bool has_conflict = false;
  Vec2 conflict_point;
  std::vector<int> give_way_to;  // agent indices with priority over this one
  bool pure_feedforward = false; // exact circular motion; zero controls
  bool merger = false;
  bool merge_started = false;
  double merge_from_x = 0.0;     // x where merging may begin
  // bookkeeping
  bool was_blocked = false;  // the give-way gate fired at least once
  double conflict_speed = std::numeric_limits<double>::quiet_NaN();
};

double braking_speed(double dist_to_stop) {
  return std::sqrt(2.0 * kComfortBrake * std::max(dist_to_stop, 0.0));
}

// Angle of a point on the roundabout circle, measured at the center.
double circle_angle(const Vec2& center, const Vec2& p) {
  return std::atan2(p.y - center.y, p.x - center.x);
}

}  // namespace

Archetype archetype_from_string(const std::string& s) {
  if (s == "highway") return Archetype::highway;
  if (s == "intersection") return Archetype::intersection;
  if (s == "roundabout") return Archetype::roundabout;
  throw std::invalid_argument("unknown archetype '" + s + "'");
}

std::string to_string(Archetype a) {
  switch (a) {
    case Archetype::highway: return "highway";
    case Archetype::intersection: return "intersection";
    case Archetype::roundabout: return "roundabout";
  }
  return "intersection";
}

void ScenarioSpec::validate() const {
  if (n_agents < 1) throw std::invalid_argument("ScenarioSpec: n_agents must be >= 1");
  if (duration_steps < 2) {
    throw std::invalid_argument("ScenarioSpec: duration_steps must be >= 2");
  }
  if (!(dt > 0.0)) throw std::invalid_argument("ScenarioSpec: dt must be positive");
  if (noise_std < 0.0) throw std::invalid_argument("ScenarioSpec: noise_std must be >= 0");
  if (!(cruise_speed > 0.0)) {
    throw std::invalid_argument("ScenarioSpec: cruise_speed must be positive");
  }
  bicycle.validate();
  // Curvature feasibility: an arc of radius R needs |sin(beta)| = l_r / R < 1.
  const double min_radius =
      archetype == Archetype::roundabout ? radius : 6.0;  // tightest turn radius
  if (min_radius <= 1.05 * bicycle.l_r) {
    throw std::invalid_argument(
        "ScenarioSpec: turn radius " + std::to_string(min_radius) +
        " m requires curvature beyond the bicycle model's feasible range");
  }
}

GeneratedScene generate(const ScenarioSpec& spec) {
  spec.validate();
  kin::BicycleParams bike = spec.bicycle;
  bike.dt = spec.dt;

  Rng rng = Rng(spec.seed).derive("scenario");
  const int n = spec.n_agents;
  std::vector<Plan> plans(static_cast<std::size_t>(n));
  SceneGeometry geometry;

  auto start_on_route = [&](Plan& p, double v0) {
    p.state.x = p.route.pts.front().x;
    p.state.y = p.route.pts.front().y;
    const Vec2 ahead = p.route.at(1.0);
    p.state.psi = std::atan2(ahead.y - p.state.y, ahead.x - p.state.x);
    p.state.v = v0;
    p.state.beta = 0.0;
  };

  switch (spec.archetype) {
    case Archetype::highway: {
      // Main lane along y = 0; on-ramp parallel at y = -3.5 with a merge zone.
      const double lane_y = 0.0, ramp_y = -3.5;
      const double merge_from = 20.0;
      geometry.lane_polylines.push_back({{-40.0, lane_y}, {400.0, lane_y}});
      geometry.lane_polylines.push_back(
          {{-40.0, ramp_y}, {merge_from + 20.0, ramp_y}, {merge_from + 40.0, lane_y}});
      geometry.conflict_points.push_back({merge_from + 30.0, lane_y});
      const int n_main = n == 1 ? 1 : n - 1;
      double x = -rng.uniform(4.0, 10.0);
      for (int i = 0; i < n_main; ++i) {
        Plan& p = plans[static_cast<std::size_t>(i)];
        p.free_speed = spec.cruise_speed * rng.uniform(0.9, 1.1);
        p.route.append_line({x, lane_y}, {x + 500.0, lane_y});
        start_on_route(p, p.free_speed);
        x -= rng.uniform(14.0, 22.0);
      }
      if (n > 1) {
        Plan& p = plans[static_cast<std::size_t>(n - 1)];
        p.merger = true;
        p.merge_from_x = merge_from;
        p.free_speed = spec.cruise_speed * rng.uniform(0.85, 1.0);
        const double x0 = merge_from - rng.uniform(18.0, 26.0);
        p.route.append_line({x0, ramp_y}, {x0 + 500.0, ramp_y});
        start_on_route(p, p.free_speed);
        p.conflict_point = geometry.conflict_points.front();
        p.has_conflict = true;
        for (int j = 0; j < n_main; ++j) p.give_way_to.push_back(j);
      }
      break;
    }
    case Archetype::intersection: {
      // Two roads crossing at the origin; approaches west, south, east, north.
      geometry.lane_polylines.push_back({{-60.0, 0.0}, {60.0, 0.0}});
      geometry.lane_polylines.push_back({{0.0, -60.0}, {0.0, 60.0}});
      geometry.conflict_points.push_back({0.0, 0.0});
      struct Approach {
        Vec2 dir;  // travel direction
      };
      const Approach approaches[4] = {
          {{1.0, 0.0}}, {{0.0, 1.0}}, {{-1.0, 0.0}}, {{0.0, -1.0}}};
      std::vector<double> arrival(static_cast<std::size_t>(n));
      for (int i = 0; i < n; ++i) {
        Plan& p = plans[static_cast<std::size_t>(i)];
        const Approach& ap = approaches[i % 4];
        p.free_speed = spec.cruise_speed * rng.uniform(0.9, 1.1);
        // Stagger arrivals ~1 s apart so interactions actually bind.
        const double t_arr = 3.0 + 1.0 * i + rng.uniform(0.0, 0.8) +
                             6.0 * (i / 4);  // reuse of an approach sits far back
        const double d0 = p.free_speed * t_arr;
        const Vec2 start{-ap.dir.x * d0, -ap.dir.y * d0};
        const int man = rng.uniform_int(0, 9);  // 0-5 straight, 6-7 right, 8-9 left
        if (man <= 5) {
          p.route.append_line(start, {ap.dir.x * 60.0, ap.dir.y * 60.0});
        } else {
          const bool right = man <= 7;
          const double r = right ? 6.0 : 8.0;
          // Arc connecting the approach centerline to the crossing road.
          const Vec2 entry{-ap.dir.x * r, -ap.dir.y * r};
          const Vec2 normal = right ? Vec2{ap.dir.y, -ap.dir.x}   // right of travel
                                    : Vec2{-ap.dir.y, ap.dir.x};  // left of travel
          const Vec2 center{entry.x + normal.x * r, entry.y + normal.y * r};
          const double a0 = circle_angle(center, entry);
          const double sweep = right ? -kPi / 2.0 : kPi / 2.0;
          p.route.append_line(start, entry);
          p.route.append_arc(center, r, a0, sweep);
          const Vec2 exit_dir = right ? Vec2{ap.dir.y, -ap.dir.x} : Vec2{-ap.dir.y, ap.dir.x};
          const Vec2 arc_end = p.route.pts.back();
          p.route.append_line(arc_end,
                              {arc_end.x + exit_dir.x * 60.0, arc_end.y + exit_dir.y * 60.0});
        }
        start_on_route(p, p.free_speed);
        p.conflict_point = {0.0, 0.0};
        p.has_conflict = true;
        p.conflict_s = d0;  // arclength to the crossing along any maneuver
        arrival[static_cast<std::size_t>(i)] = t_arr;
      }
      for (int i = 0; i < n; ++i) {
        for (int j = 0; j < n; ++j) {
          if (i == j) continue;
          // First come, first served; ties broken by index.
          if (arrival[static_cast<std::size_t>(j)] < arrival[static_cast<std::size_t>(i)] ||
              (arrival[static_cast<std::size_t>(j)] == arrival[static_cast<std::size_t>(i)] &&
               j < i)) {
            plans[static_cast<std::size_t>(i)].give_way_to.push_back(j);
          }
        }
      }
      break;
    }
    case Archetype::roundabout: {
      const Vec2 center{0.0, 0.0};
      const double r = spec.radius;
      Route circle;
      circle.append_arc(center, r, 0.0, 2.0 * kPi);
      geometry.lane_polylines.push_back(circle.pts);
      // Agent 0 circulates with the exact steady-state slip angle: the
      // discrete model then advances the heading by exactly (v / R) dt each
      // step. Discrete steps are chords, so the vertices form a regular
      // polygon; placing the start on that polygon's circumcircle (radius
      // d / (2 sin(dpsi/2)), a hair above R) with a half-turn phase lead
      // keeps the distance to the center exactly constant.
      {
        Plan& p = plans[0];
        p.free_speed = spec.cruise_speed;
        p.pure_feedforward = true;
        const double theta0 = rng.uniform(0.0, 2.0 * kPi);
        const double beta = std::asin(bike.l_r / r);
        const double dpsi = spec.cruise_speed / r * spec.dt;
        const double r_c =
            spec.cruise_speed * spec.dt / (2.0 * std::sin(dpsi / 2.0));
        p.state.x = center.x + r_c * std::cos(theta0);
        p.state.y = center.y + r_c * std::sin(theta0);
        p.state.psi = wrap_angle(theta0 + kPi / 2.0 + dpsi / 2.0 - beta);
        p.state.v = spec.cruise_speed;
        p.state.beta = beta;
      }
      for (int i = 1; i < n; ++i) {
        Plan& p = plans[static_cast<std::size_t>(i)];
        p.free_speed = spec.cruise_speed * rng.uniform(0.85, 1.05);
        const double theta_e = (i - 1) % 4 * (kPi / 2.0);  // entry angle
        const Vec2 entry{center.x + r * std::cos(theta_e), center.y + r * std::sin(theta_e)};
        const Vec2 tangent{-std::sin(theta_e), std::cos(theta_e)};  // CCW travel
        const double d0 = 10.0 + 4.0 * ((i - 1) / 4) + rng.uniform(0.0, 6.0);
        const Vec2 start{entry.x - tangent.x * d0, entry.y - tangent.y * d0};
        p.route.append_line(start, entry);
        p.route.append_arc(center, r, theta_e, 1.5 * kPi);
        const double theta_x = theta_e + 1.5 * kPi;
        const Vec2 exit_pt = p.route.pts.back();
        const Vec2 exit_tan{-std::sin(theta_x), std::cos(theta_x)};
        p.route.append_line(exit_pt, {exit_pt.x + exit_tan.x * 30.0,
                                      exit_pt.y + exit_tan.y * 30.0});
        start_on_route(p, p.free_speed);
        p.has_conflict = true;
        p.conflict_point = entry;
        p.conflict_s = d0;
        // Entry yields to anything currently circulating.
        for (int j = 0; j < n; ++j) {
          if (j != i) p.give_way_to.push_back(j);
        }
        geometry.conflict_points.push_back(entry);
      }
      break;
    }
  }

  // ---- joint forward integration -----------------------------------------
  const std::size_t steps = static_cast<std::size_t>(spec.duration_steps);
  std::vector<AgentRollout> rollouts(static_cast<std::size_t>(n));
  for (int i = 0; i < n; ++i) {
    rollouts[static_cast<std::size_t>(i)].initial = plans[static_cast<std::size_t>(i)].state;
    rollouts[static_cast<std::size_t>(i)].states.push_back(plans[static_cast<std::size_t>(i)].state);
  }

  const Vec2 rb_center{0.0, 0.0};
  for (std::size_t k = 0; k + 1 < steps; ++k) {
    // Decide all controls from the common pre-step state, then apply.
    std::vector<kin::ControlInput> controls(static_cast<std::size_t>(n));
    for (int i = 0; i < n; ++i) {
      Plan& p = plans[static_cast<std::size_t>(i)];
      if (p.pure_feedforward) {
        controls[static_cast<std::size_t>(i)] = {0.0, 0.0};
        continue;
      }
      const Vec2 pos = p.state.pos();
      p.s_proj = p.route.project(pos, p.s_proj);

      // Lateral: pure pursuit toward a speed-scaled lookahead point.
      const double look = std::max(3.0, 0.9 * p.state.v);
      const Vec2 target = p.route.at(p.s_proj + look);
      const double chi = std::atan2(target.y - pos.y, target.x - pos.x);
      const double beta_cmd =
          std::clamp(wrap_angle(chi - p.state.psi), -0.35, 0.35);

      // Longitudinal: cruise unless yielding or following.
      double v_target = p.free_speed;
      bool blocked = false;
      const bool before_conflict =
          p.merger ? !p.merge_started : p.s_proj < p.conflict_s + 1.0;
      if (p.has_conflict && before_conflict) {
        for (int j : p.give_way_to) {
          const Plan& q = plans[static_cast<std::size_t>(j)];
          if (spec.archetype == Archetype::intersection) {
            if (q.s_proj < q.conflict_s + kClearMargin) blocked = true;
          } else if (spec.archetype == Archetype::roundabout) {
            // Blocked while a circulating vehicle is in the upstream window.
            const double rad_err = std::abs(distance(q.state.pos(), rb_center) - spec.radius);
            if (rad_err < 2.0) {
              const double th_q = circle_angle(rb_center, q.state.pos());
              const double th_e = circle_angle(rb_center, p.conflict_point);
              const double upstream = wrap_angle(th_e - th_q);
              if (upstream > 0.05 && upstream < 1.3) blocked = true;
            }
          }
        }
        if (spec.archetype == Archetype::highway && p.merger) {
          for (int j : p.give_way_to) {
            const Plan& q = plans[static_cast<std::size_t>(j)];
            const double dx = q.state.x - p.state.x;
            if (dx > -6.0 && dx < 14.0) blocked = true;
          }
        }
        if (blocked) {
          if (p.merger) {
            // Hang back on the ramp below the main-lane speed.
            v_target = std::min(v_target, 0.6 * p.free_speed);
          } else {
            v_target = std::min(v_target, braking_speed(p.conflict_s - kStopMargin - p.s_proj));
          }
          p.was_blocked = true;
        } else if (p.merger && !p.merge_started && p.state.x >= p.merge_from_x) {
          // Gap accepted: swap to a route that joins the main lane.
          p.merge_started = true;
          Route merged;
          merged.append_line(pos, {pos.x + 18.0, 0.0});
          merged.append_line({pos.x + 18.0, 0.0}, {pos.x + 500.0, 0.0});
          p.route = merged;
          p.s_proj = 0.0;
        }
      }
      // Generic car following against any agent straight ahead in our lane.
      for (int j = 0; j < n; ++j) {
        if (j == i) continue;
        const Plan& q = plans[static_cast<std::size_t>(j)];
        const Vec2 rel = q.state.pos() - pos;
        const double ahead = rel.x * std::cos(p.state.psi) + rel.y * std::sin(p.state.psi);
        const double side = -rel.x * std::sin(p.state.psi) + rel.y * std::cos(p.state.psi);
        if (ahead > 0.0 && ahead < 9.0 && std::abs(side) < 1.5 &&
            std::abs(wrap_angle(q.state.psi - p.state.psi)) < 0.4) {
          v_target = std::min(v_target, std::max(0.0, q.state.v - 0.5));
        }
      }

      const double a_cmd =
          std::clamp((v_target - p.state.v) / spec.dt, -0.8 * bike.a_max, 0.8 * bike.a_max);
      const double bd_cmd = std::clamp((beta_cmd - p.state.beta) / spec.dt,
                                       -0.8 * bike.beta_dot_max, 0.8 * bike.beta_dot_max);
      controls[static_cast<std::size_t>(i)] = {a_cmd, bd_cmd};
    }

    for (int i = 0; i < n; ++i) {
      Plan& p = plans[static_cast<std::size_t>(i)];
      AgentRollout& r = rollouts[static_cast<std::size_t>(i)];
      p.state = kin::bicycle_step(p.state, controls[static_cast<std::size_t>(i)], bike);
      r.controls.push_back(controls[static_cast<std::size_t>(i)]);
      r.states.push_back(p.state);
      if (p.has_conflict) {
        // Slowest speed while approaching the conflict region. Sampling the
        // whole 15 m neighbourhood (not just the closest pass) keeps brief
        // brake-and-recover yields visible.
        const double d = distance(p.state.pos(), p.conflict_point);
        if (d < 15.0 && !(p.conflict_speed <= p.state.v)) {
          p.conflict_speed = p.state.v;
        }
      }
    }
  }

  GeneratedScene scene;
  scene.scene_id = to_string(spec.archetype) + "-" + std::to_string(spec.seed);
  scene.dt = spec.dt;
  scene.bicycle = bike;
  scene.geometry = std::move(geometry);
  for (int i = 0; i < n; ++i) {
    Plan& p = plans[static_cast<std::size_t>(i)];
    AgentRollout& r = rollouts[static_cast<std::size_t>(i)];
    r.yielded = p.was_blocked && std::isfinite(p.conflict_speed) &&
                p.conflict_speed < p.free_speed - 0.25;
    r.free_flow_speed = p.free_speed;
    r.conflict_speed = p.conflict_speed;

    data::AgentTrajectory truth;
    truth.agent_id = i;
    truth.type = data::AgentType::vehicle;
    for (std::size_t k = 0; k < r.states.size(); ++k) {
      const kin::VehicleState& s = r.states[k];
      truth.points.push_back({static_cast<double>(k) * spec.dt, s.x, s.y, s.v, s.psi});
    }
    scene.truth.push_back(truth);

    data::AgentTrajectory obs = truth;
    Rng noise = Rng(spec.seed).derive("noise-" + std::to_string(i));
    for (data::TrajPoint& pt : obs.points) {
      pt.x += noise.normal(0.0, spec.noise_std);
      pt.y += noise.normal(0.0, spec.noise_std);
    }
    data::derive_kinematics(obs);
    scene.observed.push_back(std::move(obs));
    scene.rollouts.push_back(std::move(r));
  }
  return scene;
}

double reintegration_residual(const GeneratedScene& scene) {
  const kin::BicycleParams& bike = scene.bicycle;
  double worst = 0.0;
  for (const AgentRollout& r : scene.rollouts) {
    kin::VehicleState s = r.initial;
    for (std::size_t k = 0; k < r.controls.size(); ++k) {
      s = kin::bicycle_step(s, r.controls[k], bike);
      const kin::VehicleState& ref = r.states[k + 1];
      worst = std::max(worst, std::max(std::abs(s.x - ref.x), std::abs(s.y - ref.y)));
    }
  }
  return worst;
}

std::vector<data::SceneSample> to_samples(const GeneratedScene& scene,
                                          const data::HorizonConfig& horizon) {
  return data::make_samples(scene.observed, horizon, scene.scene_id);
}

Track cvm_baseline(const Track& history, int future_steps) {
  if (history.size() < 2) {
    throw std::invalid_argument("cvm_baseline: needs at least 2 history steps");
  }
  const Vec2 last = history.back();
  const Vec2 d = last - history[history.size() - 2];
  Track out;
  for (int m = 1; m <= future_steps; ++m) {
    out.push_back(last + d * static_cast<double>(m));
  }
  return out;
}

Track cam_baseline(const Track& history, int future_steps) {
  if (history.size() < 3) {
    throw std::invalid_argument("cam_baseline: needs at least 3 history steps");
  }
  const Vec2 p0 = history[history.size() - 3];
  const Vec2 p1 = history[history.size() - 2];
  const Vec2 p2 = history.back();
  const Vec2 d1 = p2 - p1;
  const Vec2 d2 = p2 - p1 * 2.0 + p0;
  Track out;
  for (int m = 1; m <= future_steps; ++m) {
    const double dm = static_cast<double>(m);
    out.push_back(p2 + d1 * dm + d2 * (dm * (dm + 1.0) / 2.0));
  }
  return out;
}

}  // namespace stgdat::synth
