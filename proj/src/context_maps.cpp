#include "stgdat/context_maps.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <stdexcept>

#include <nlohmann/json.hpp>

namespace stgdat::ctx {

void MapBounds::validate() const {
  if (!(max.x > min.x) || !(max.y > min.y)) {
    throw std::invalid_argument("map bounds must have positive extent");
  }
}

namespace {

// Shared bilinear kernel over cell-center anchored grids. Out-of-grid
// neighbors contribute zero, which also yields the zero fill outside.
template <typename Get>
double bilinear(const ContextMap& m, const Vec2& p, Get get) {
  const double gx = (p.x - m.origin.x) / m.cell_size - 0.5;
  const double gy = (p.y - m.origin.y) / m.cell_size - 0.5;
  const int c0 = static_cast<int>(std::floor(gx));
  const int r0 = static_cast<int>(std::floor(gy));
  const double fx = gx - c0;
  const double fy = gy - r0;
  auto at = [&](int r, int c) -> double {
    if (r < 0 || r >= m.h || c < 0 || c >= m.w) return 0.0;
    return get(r, c);
  };
  return (1 - fy) * ((1 - fx) * at(r0, c0) + fx * at(r0, c0 + 1)) +
         fy * ((1 - fx) * at(r0 + 1, c0) + fx * at(r0 + 1, c0 + 1));
}

}  // namespace

double ContextMap::sample_density(const Vec2& p) const {
  return bilinear(*this, p, [&](int r, int c) { return density[idx(r, c)]; });
}

Vec2 ContextMap::sample_velocity(const Vec2& p) const {
  return {bilinear(*this, p, [&](int r, int c) { return vel_x[idx(r, c)]; }),
          bilinear(*this, p, [&](int r, int c) { return vel_y[idx(r, c)]; })};
}

ContextMap build_global(const std::vector<data::AgentTrajectory>& trajectories,
                        const MapBounds& bounds, double cell_size,
                        const std::string& provenance) {
  bounds.validate();
  if (!(cell_size > 0.0)) throw std::invalid_argument("cell_size must be positive");

  ContextMap m;
  m.origin = bounds.min;
  m.cell_size = cell_size;
  m.w = std::max(1, static_cast<int>(std::ceil((bounds.max.x - bounds.min.x) / cell_size)));
  m.h = std::max(1, static_cast<int>(std::ceil((bounds.max.y - bounds.min.y) / cell_size)));
  const std::size_t cells = static_cast<std::size_t>(m.h) * m.w;
  m.density.assign(cells, 0.0);
  m.vel_x.assign(cells, 0.0);
  m.vel_y.assign(cells, 0.0);
  m.counts.assign(cells, 0);
  m.provenance = provenance;

  long long total = 0;
  for (const data::AgentTrajectory& traj : trajectories) {
    for (const data::TrajPoint& pt : traj.points) {
      if (pt.x < bounds.min.x || pt.x > bounds.max.x || pt.y < bounds.min.y ||
          pt.y > bounds.max.y) {
        throw std::invalid_argument("observation outside map bounds");
      }
      int c = static_cast<int>(std::floor((pt.x - bounds.min.x) / cell_size));
      int r = static_cast<int>(std::floor((pt.y - bounds.min.y) / cell_size));
      c = std::min(c, m.w - 1);  // points exactly on the max edge
      r = std::min(r, m.h - 1);
      const int i = m.idx(r, c);
      m.counts[i] += 1;
      m.vel_x[i] += pt.v * std::cos(pt.psi);
      m.vel_y[i] += pt.v * std::sin(pt.psi);
      ++total;
    }
  }

  for (std::size_t i = 0; i < cells; ++i) {
    if (m.counts[i] > 0) {
      m.vel_x[i] /= static_cast<double>(m.counts[i]);
      m.vel_y[i] /= static_cast<double>(m.counts[i]);
      m.density[i] = static_cast<double>(m.counts[i]) / static_cast<double>(total);
    }
  }
  m.has_observations = total > 0;
  return m;
}

MapBounds fit_bounds(const std::vector<data::AgentTrajectory>& trajectories,
                     double margin) {
  MapBounds b;
  bool any = false;
  for (const auto& traj : trajectories) {
    for (const auto& pt : traj.points) {
      if (!any) {
        b.min = {pt.x, pt.y};
        b.max = {pt.x, pt.y};
        any = true;
      } else {
        b.min.x = std::min(b.min.x, pt.x);
        b.min.y = std::min(b.min.y, pt.y);
        b.max.x = std::max(b.max.x, pt.x);
        b.max.y = std::max(b.max.y, pt.y);
      }
    }
  }
  if (!any) throw std::invalid_argument("cannot fit bounds to empty trajectories");
  b.min.x -= margin;
  b.min.y -= margin;
  b.max.x += margin;
  b.max.y += margin;
  b.validate();
  return b;
}

LocalContext extract_local(const ContextMap& map, const Vec2& position,
                           double heading, int h, int w) {
  if (h <= 0 || w <= 0) throw std::invalid_argument("crop size must be positive");
  LocalContext crop;
  crop.h = h;
  crop.w = w;
  crop.center = position;
  crop.rotation = heading;
  const std::size_t cells = static_cast<std::size_t>(h) * w;
  crop.density.assign(cells, 0.0);
  crop.vel_fwd.assign(cells, 0.0);
  crop.vel_lat.assign(cells, 0.0);
  const double ch = std::cos(heading), sh = std::sin(heading);
  for (int r = 0; r < h; ++r) {
    for (int c = 0; c < w; ++c) {
      const double lx = (c - w / 2) * map.cell_size;  // forward
      const double ly = (r - h / 2) * map.cell_size;  // left
      const Vec2 world{position.x + ch * lx - sh * ly,
                       position.y + sh * lx + ch * ly};
      const int i = crop.idx(r, c);
      crop.density[i] = map.sample_density(world);
      const Vec2 v = map.sample_velocity(world);
      crop.vel_fwd[i] = ch * v.x + sh * v.y;   // rotate into the agent frame
      crop.vel_lat[i] = -sh * v.x + ch * v.y;
    }
  }
  return crop;
}

void save_map(const ContextMap& map, const std::string& prefix) {
  std::ofstream bin(prefix + ".bin", std::ios::binary);
  if (!bin) throw std::runtime_error("cannot open '" + prefix + ".bin' for writing");
  auto write_plane = [&](const std::vector<double>& plane) {
    bin.write(reinterpret_cast<const char*>(plane.data()),
              static_cast<std::streamsize>(plane.size() * sizeof(double)));
  };
  write_plane(map.density);
  write_plane(map.vel_x);
  write_plane(map.vel_y);
  std::vector<double> counts(map.counts.begin(), map.counts.end());
  write_plane(counts);
  if (!bin) throw std::runtime_error("write failed for '" + prefix + ".bin'");

  nlohmann::json side;
  side["origin"] = {map.origin.x, map.origin.y};
  side["cell_size"] = map.cell_size;
  side["H_g"] = map.h;
  side["W_g"] = map.w;
  side["planes"] = {"density", "vel_x", "vel_y", "counts"};
  side["byte_order"] = "little";
  side["provenance"] = map.provenance;
  side["has_observations"] = map.has_observations;
  std::ofstream js(prefix + ".json");
  if (!js) throw std::runtime_error("cannot open '" + prefix + ".json' for writing");
  js << side.dump(2) << "\n";
}

ContextMap load_map(const std::string& prefix) {
  std::ifstream js(prefix + ".json");
  if (!js) throw std::runtime_error("cannot open '" + prefix + ".json'");
  nlohmann::json side = nlohmann::json::parse(js);
  ContextMap m;
  m.origin = {side.at("origin").at(0).get<double>(),
              side.at("origin").at(1).get<double>()};
  m.cell_size = side.at("cell_size").get<double>();
  m.h = side.at("H_g").get<int>();
  m.w = side.at("W_g").get<int>();
  m.provenance = side.value("provenance", std::string{});
  m.has_observations = side.value("has_observations", false);
  if (m.h <= 0 || m.w <= 0) throw std::runtime_error("bad grid size in '" + prefix + ".json'");

  const std::size_t cells = static_cast<std::size_t>(m.h) * m.w;
  std::ifstream bin(prefix + ".bin", std::ios::binary);
  if (!bin) throw std::runtime_error("cannot open '" + prefix + ".bin'");
  auto read_plane = [&](std::vector<double>& plane) {
    plane.resize(cells);
    bin.read(reinterpret_cast<char*>(plane.data()),
             static_cast<std::streamsize>(cells * sizeof(double)));
    if (bin.gcount() != static_cast<std::streamsize>(cells * sizeof(double))) {
      throw std::runtime_error("truncated map file '" + prefix + ".bin'");
    }
  };
  read_plane(m.density);
  read_plane(m.vel_x);
  read_plane(m.vel_y);
  std::vector<double> counts;
  read_plane(counts);
  m.counts.assign(counts.begin(), counts.end());
  return m;
}

const ContextMap& MapRegistry::lookup(const std::string& scene_id) const {
  const auto it = by_scene.find(scene_id);
  if (it != by_scene.end()) return it->second;
  if (pooled.has_value()) return *pooled;
  throw std::out_of_range("no context map for scene '" + scene_id +
                          "' and no pooled fallback");
}

}  // namespace stgdat::ctx
