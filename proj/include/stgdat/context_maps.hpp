#pragma once

#include <map>
#include <optional>
#include <string>
#include <vector>

#include "stgdat/data_io.hpp"
#include "stgdat/geometry.hpp"

namespace stgdat::ctx {

// Axis-aligned world region covered by a global map.
struct MapBounds {
  Vec2 min{0.0, 0.0};
  Vec2 max{0.0, 0.0};
  void validate() const;  // throws unless max > min on both axes
};

// Global occupancy-density and mean-velocity grid. Row r indexes y, column c
// indexes x; cell (r, c) covers [origin + (c, r) * cell, origin + (c+1, r+1) *
// cell) and its value is anchored at the cell center for sampling.
struct ContextMap {
  Vec2 origin{0.0, 0.0};
  double cell_size = 1.0;
  int h = 0, w = 0;
  std::vector<double> density;  // h*w row-major; sums to 1 when observed
  std::vector<double> vel_x;    // mean observed velocity per cell, zero if empty
  std::vector<double> vel_y;
  std::vector<long long> counts;
  bool has_observations = false;
  std::string provenance;  // which data split the observations came from

  int idx(int r, int c) const { return r * w + c; }
  // Bilinear interpolation of cell-center values; zero outside the grid.
  double sample_density(const Vec2& p) const;
  Vec2 sample_velocity(const Vec2& p) const;
};

// Agent-centered crop in the agent's frame: local +x is the heading
// direction. Row r indexes lateral offset, column c forward offset; cell
// (r, c) samples the map at center + R(rotation) * ((c - w/2), (r - h/2)) *
// cell_size. Velocities are rotated into the same frame.
struct LocalContext {
  int h = 0, w = 0;
  std::vector<double> density;   // h*w row-major
  std::vector<double> vel_fwd;   // velocity component along the heading
  std::vector<double> vel_lat;   // component to the agent's left
  Vec2 center{0.0, 0.0};
  double rotation = 0.0;

  int idx(int r, int c) const { return r * w + c; }
};

// Accumulates every observation of every trajectory into a grid of the given
// resolution. Throws if an observation falls outside the bounds. With no
// observations at all the grids stay zero and has_observations is false.
ContextMap build_global(const std::vector<data::AgentTrajectory>& trajectories,
                        const MapBounds& bounds, double cell_size,
                        const std::string& provenance);

// Bounds that cover the given trajectories with a margin (meters).
MapBounds fit_bounds(const std::vector<data::AgentTrajectory>& trajectories,
                     double margin);

LocalContext extract_local(const ContextMap& map, const Vec2& position,
                           double heading, int h, int w);

// prefix.bin holds four row-major little-endian f64 planes (density, vel_x,
// vel_y, counts); prefix.json describes {origin, cell_size, H_g, W_g} plus
// provenance flags.
void save_map(const ContextMap& map, const std::string& prefix);
ContextMap load_map(const std::string& prefix);

// Per-scene maps with an optional pooled fallback for unseen scenes.
struct MapRegistry {
  std::map<std::string, ContextMap> by_scene;
  std::optional<ContextMap> pooled;

  const ContextMap& lookup(const std::string& scene_id) const;
};

}  // namespace stgdat::ctx
