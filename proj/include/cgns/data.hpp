#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <map>
#include <sstream>
#include <stdexcept>
#include <string>
#include <unordered_map>
#include <vector>

#include "json.hpp"

#include "cgns/feasibility.hpp"  // Vec2
#include "cgns/rng.hpp"

namespace cgns {

using Polygon = std::vector<Vec2>;

struct AgentTrack {
  long agent_id = 0;
  std::string cls = "vehicle";
  std::vector<long> frames;  // strictly increasing
  std::vector<Vec2> pos;
};

struct Scene {
  std::vector<AgentTrack> agents;
  double dt = 0.5;         // seconds between consecutive frames
  long frame_gap = 1;      // modal raw frame-id gap
  std::vector<Polygon> drivable;  // even-odd filled rings

  const AgentTrack* find(long agent_id) const {
    for (const auto& a : agents)
      if (a.agent_id == agent_id) return &a;
    return nullptr;
  }
};

/// One training/evaluation unit: target agent in slot 0, nearest concurrent
/// neighbors in the remaining slots, zero padding where agents are absent.
struct TrajectoryWindow {
  int T_h = 0, T_f = 0, max_agents = 0;
  std::vector<std::vector<Vec2>> obs;  // [slot][T_h]
  std::vector<std::vector<Vec2>> fut;  // [slot][T_f]
  std::vector<bool> valid;             // per slot
  std::vector<std::vector<double>> rasters;  // T_h frames, raster_size^2 each (optional)
  int raster_size = 0;
  Vec2 anchor = {0, 0};   // target's last observed position (world frame)
  double heading = 0.0;   // target's last observed heading (world frame)
  double dt = 0.5;
  long window_id = 0;
  long target_agent = 0;
};

struct Normalizer {
  Vec2 translation = {0, 0};
  double rotation = 0.0;  // radians; normalization rotates by -rotation
  double scale = 1.0;

  Vec2 normalize(const Vec2& p) const {
    const double dx = p[0] - translation[0], dy = p[1] - translation[1];
    const double c = std::cos(rotation), s = std::sin(rotation);
    return {(c * dx + s * dy) / scale, (-s * dx + c * dy) / scale};
  }
  Vec2 denormalize(const Vec2& p) const {
    const double c = std::cos(rotation), s = std::sin(rotation);
    const double x = p[0] * scale, y = p[1] * scale;
    return {c * x - s * y + translation[0], s * x + c * y + translation[1]};
  }
};

// ---------------------------------------------------------------------------
// Trajectory text format: whitespace-delimited "frame_id agent_id x y" lines,
// '#' comments ignored.
// ---------------------------------------------------------------------------

inline Scene load_trajectory_file(const std::string& path, double frame_duration = 0.5) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open trajectory file: " + path);
  struct Row {
    long frame, agent;
    double x, y;
  };
  std::vector<Row> rows;
  std::string line;
  long lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    std::string trimmed = line;
    const auto first = trimmed.find_first_not_of(" \t\r");
    if (first == std::string::npos) continue;
    if (trimmed[first] == '#') continue;
    std::istringstream ls(trimmed);
    Row r;
    std::string extra;
    if (!(ls >> r.frame >> r.agent >> r.x >> r.y))
      throw std::runtime_error(path + ":" + std::to_string(lineno) +
                               ": expected 4 numeric fields (frame agent x y)");
    if (ls >> extra)
      throw std::runtime_error(path + ":" + std::to_string(lineno) + ": trailing fields after 4 columns");
    if (!std::isfinite(r.x) || !std::isfinite(r.y))
      throw std::runtime_error(path + ":" + std::to_string(lineno) + ": non-finite position");
    rows.push_back(r);
  }
  Scene scene;
  std::vector<long> order;  // agent ids by first appearance
  std::unordered_map<long, std::size_t> index;
  for (const auto& r : rows) {
    auto it = index.find(r.agent);
    if (it == index.end()) {
      index[r.agent] = scene.agents.size();
      AgentTrack t;
      t.agent_id = r.agent;
      scene.agents.push_back(std::move(t));
      it = index.find(r.agent);
    }
    AgentTrack& t = scene.agents[it->second];
    if (!t.frames.empty() && r.frame <= t.frames.back())
      throw std::runtime_error(path + ": non-monotonic frames for agent " + std::to_string(r.agent));
    t.frames.push_back(r.frame);
    t.pos.push_back({r.x, r.y});
  }
  // dt = modal frame gap * configured frame duration
  std::map<long, std::size_t> gap_counts;
  for (const auto& a : scene.agents)
    for (std::size_t i = 1; i < a.frames.size(); ++i) ++gap_counts[a.frames[i] - a.frames[i - 1]];
  scene.frame_gap = 1;
  std::size_t best = 0;
  for (const auto& [gap, count] : gap_counts)
    if (count > best) {
      best = count;
      scene.frame_gap = gap;
    }
  scene.dt = frame_duration * static_cast<double>(scene.frame_gap);
  return scene;
}

inline void save_trajectory_file(const Scene& scene, const std::string& path) {
  // rows sorted by (frame, agent) for a stable on-disk layout
  struct Row {
    long frame, agent;
    Vec2 p;
  };
  std::vector<Row> rows;
  for (const auto& a : scene.agents)
    for (std::size_t i = 0; i < a.frames.size(); ++i) rows.push_back({a.frames[i], a.agent_id, a.pos[i]});
  std::sort(rows.begin(), rows.end(), [](const Row& a, const Row& b) {
    return std::tie(a.frame, a.agent) < std::tie(b.frame, b.agent);
  });
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot open for writing: " + path);
  out.precision(17);
  out << "# frame_id agent_id x y\n";
  for (const auto& r : rows) out << r.frame << " " << r.agent << " " << r.p[0] << " " << r.p[1] << "\n";
}

// ---------------------------------------------------------------------------
// Sliding windows.
// ---------------------------------------------------------------------------

struct WindowBuildStats {
  std::size_t windows = 0;
  std::size_t skipped_short_tracks = 0;
};

namespace detail {

// position of `agent` at raw frame id, or nullptr
inline const Vec2* at_frame(const AgentTrack& agent, long frame) {
  auto it = std::lower_bound(agent.frames.begin(), agent.frames.end(), frame);
  if (it == agent.frames.end() || *it != frame) return nullptr;
  return &agent.pos[static_cast<std::size_t>(it - agent.frames.begin())];
}

}  // namespace detail

inline std::vector<TrajectoryWindow> build_windows(const Scene& scene, int T_h, int T_f, int stride,
                                                   int max_agents, WindowBuildStats* stats = nullptr) {
  if (T_h < 1 || T_f < 1 || stride < 1 || max_agents < 1)
    throw std::invalid_argument("build_windows: T_h, T_f, stride, max_agents must be >= 1");
  std::vector<TrajectoryWindow> windows;
  WindowBuildStats local;
  const long gap = scene.frame_gap;
  const int span = T_h + T_f;

  // deterministic target order regardless of input track order
  std::vector<const AgentTrack*> targets;
  for (const auto& a : scene.agents) targets.push_back(&a);
  std::sort(targets.begin(), targets.end(),
            [](const AgentTrack* a, const AgentTrack* b) { return a->agent_id < b->agent_id; });

  long next_id = 0;
  for (const AgentTrack* target : targets) {
    // maximal runs of uniformly spaced frames
    std::size_t run_start = 0;
    bool emitted_any = false;
    for (std::size_t i = 1; i <= target->frames.size(); ++i) {
      const bool brk = i == target->frames.size() || target->frames[i] - target->frames[i - 1] != gap;
      if (!brk) continue;
      const std::size_t run_len = i - run_start;
      for (std::size_t off = run_start; off + span <= run_start + run_len; off += stride) {
        TrajectoryWindow w;
        w.T_h = T_h;
        w.T_f = T_f;
        w.max_agents = max_agents;
        w.dt = scene.dt;
        w.window_id = next_id++;
        w.target_agent = target->agent_id;
        w.obs.assign(max_agents, std::vector<Vec2>(T_h, {0, 0}));
        w.fut.assign(max_agents, std::vector<Vec2>(T_f, {0, 0}));
        w.valid.assign(max_agents, false);
        for (int t = 0; t < T_h; ++t) w.obs[0][t] = target->pos[off + t];
        for (int t = 0; t < T_f; ++t) w.fut[0][t] = target->pos[off + T_h + t];
        w.valid[0] = true;
        w.anchor = w.obs[0][T_h - 1];
        const Vec2& prev = w.obs[0][T_h >= 2 ? T_h - 2 : 0];
        w.heading = (T_h >= 2 && (w.anchor[0] != prev[0] || w.anchor[1] != prev[1]))
                        ? std::atan2(w.anchor[1] - prev[1], w.anchor[0] - prev[0])
                        : 0.0;

        const long first_frame = target->frames[off];
        const long pred_frame = first_frame + gap * (T_h - 1);
        // neighbors with full observed coverage, nearest-first at prediction time
        struct Neighbor {
          double dist;
          long id;
          const AgentTrack* track;
        };
        std::vector<Neighbor> neighbors;
        for (const AgentTrack* other : targets) {
          if (other == target) continue;
          bool covered = true;
          for (int t = 0; t < T_h && covered; ++t)
            covered = detail::at_frame(*other, first_frame + gap * t) != nullptr;
          if (!covered) continue;
          const Vec2* p = detail::at_frame(*other, pred_frame);
          const double d = std::hypot((*p)[0] - w.anchor[0], (*p)[1] - w.anchor[1]);
          neighbors.push_back({d, other->agent_id, other});
        }
        std::sort(neighbors.begin(), neighbors.end(), [](const Neighbor& a, const Neighbor& b) {
          return std::tie(a.dist, a.id) < std::tie(b.dist, b.id);
        });
        int slot = 1;
        for (const auto& nb : neighbors) {
          if (slot >= max_agents) break;
          for (int t = 0; t < T_h; ++t) w.obs[slot][t] = *detail::at_frame(*nb.track, first_frame + gap * t);
          bool fut_covered = true;
          for (int t = 0; t < T_f && fut_covered; ++t) {
            const Vec2* p = detail::at_frame(*nb.track, first_frame + gap * (T_h + t));
            if (p)
              w.fut[slot][t] = *p;
            else
              fut_covered = false;
          }
          w.valid[slot] = fut_covered;
          if (!fut_covered)
            for (int t = 0; t < T_f; ++t) w.fut[slot][t] = {0, 0};
          ++slot;
        }
        windows.push_back(std::move(w));
        emitted_any = true;
      }
      run_start = i;
    }
    if (!emitted_any) ++local.skipped_short_tracks;
  }
  local.windows = windows.size();
  if (stats) *stats = local;
  return windows;
}

// ---------------------------------------------------------------------------
// Context rasterization: single-channel grids centered on the window anchor.
// Drivable area at 0.5, agent occupancy at 1.0, background 0.
// ---------------------------------------------------------------------------

namespace detail {

inline bool point_in_polygons(const std::vector<Polygon>& polys, const Vec2& p) {
  // even-odd rule over all rings, so holes work
  int crossings = 0;
  for (const auto& poly : polys) {
    const std::size_t n = poly.size();
    for (std::size_t i = 0, j = n - 1; i < n; j = i++) {
      if ((poly[i][1] > p[1]) != (poly[j][1] > p[1])) {
        const double x = (poly[j][0] - poly[i][0]) * (p[1] - poly[i][1]) / (poly[j][1] - poly[i][1]) + poly[i][0];
        if (p[0] < x) ++crossings;
      }
    }
  }
  return (crossings % 2) == 1;
}

}  // namespace detail

/// Rasterizes T_h frames for an already-built window. `frames` are the raw
/// frame ids of the observed steps; pixel (0,0) is the top-left corner of a
/// square `extent`-sized region centered on the anchor, rotated by heading
/// when `rotate` is set.
inline void rasterize(const Scene& scene, TrajectoryWindow& window, int size, double extent, bool rotate) {
  if (size < 8) throw std::invalid_argument("rasterize: size must be >= 8");
  window.raster_size = size;
  window.rasters.assign(window.T_h, std::vector<double>(static_cast<std::size_t>(size) * size, 0.0));
  const double angle = rotate ? window.heading : 0.0;
  const double c = std::cos(angle), s = std::sin(angle);
  const double cell = extent / size;

  // observed raw frame ids for the target
  const AgentTrack* target = scene.find(window.target_agent);
  if (!target) throw std::invalid_argument("rasterize: window target not in scene");
  // locate the window by matching the anchor position
  long anchor_frame = -1;
  for (std::size_t i = 0; i < target->pos.size(); ++i)
    if (target->pos[i] == window.anchor) anchor_frame = target->frames[i];
  if (anchor_frame < 0) throw std::invalid_argument("rasterize: window anchor not on target track");

  auto world_of = [&](int u, int v) -> Vec2 {
    // pixel center in the local (possibly rotated) frame; +x right, +y up
    const double lx = (v + 0.5) * cell - extent / 2.0;
    const double ly = extent / 2.0 - (u + 0.5) * cell;
    return {c * lx - s * ly + window.anchor[0], s * lx + c * ly + window.anchor[1]};
  };
  auto cell_of = [&](const Vec2& p, int& u, int& v) -> bool {
    const double dx = p[0] - window.anchor[0], dy = p[1] - window.anchor[1];
    const double lx = c * dx + s * dy;
    const double ly = -s * dx + c * dy;
    v = static_cast<int>(std::floor((lx + extent / 2.0) / cell));
    u = static_cast<int>(std::floor((extent / 2.0 - ly) / cell));
    return u >= 0 && u < size && v >= 0 && v < size;
  };

  for (int t = 0; t < window.T_h; ++t) {
    auto& grid = window.rasters[t];
    if (!scene.drivable.empty())
      for (int u = 0; u < size; ++u)
        for (int v = 0; v < size; ++v)
          if (detail::point_in_polygons(scene.drivable, world_of(u, v)))
            grid[static_cast<std::size_t>(u) * size + v] = 0.5;
    const long frame = anchor_frame - scene.frame_gap * (window.T_h - 1 - t);
    for (const auto& agent : scene.agents) {
      const Vec2* p = detail::at_frame(agent, frame);
      if (!p) continue;
      int u, v;
      if (cell_of(*p, u, v)) grid[static_cast<std::size_t>(u) * size + v] = 1.0;
    }
  }
}

// ---------------------------------------------------------------------------
// Normalization.
// ---------------------------------------------------------------------------

inline Normalizer make_normalizer(const TrajectoryWindow& window, bool rotate, double scale = 1.0) {
  Normalizer n;
  n.translation = window.anchor;
  n.rotation = rotate ? window.heading : 0.0;
  n.scale = scale;
  return n;
}

inline TrajectoryWindow normalize(const TrajectoryWindow& window, const Normalizer& n) {
  TrajectoryWindow out = window;
  for (int a = 0; a < window.max_agents; ++a) {
    for (int t = 0; t < window.T_h; ++t) out.obs[a][t] = n.normalize(window.obs[a][t]);
    for (int t = 0; t < window.T_f; ++t)
      out.fut[a][t] = window.valid[a] ? n.normalize(window.fut[a][t]) : Vec2{0, 0};
  }
  return out;
}

// ---------------------------------------------------------------------------
// Synthetic scenario generation.
// ---------------------------------------------------------------------------

struct SynthSpec {
  std::string scenario = "roundabout";  // roundabout | crossing | straight
  int agents = 20;
  double noise_sigma = 0.0;
  double duration_s = 40.0;
  double dt = 0.5;
  double radius_min = 6.0, radius_max = 12.0;
  double speed_min = 2.0, speed_max = 5.0;
  std::uint64_t seed = 1;

  static SynthSpec from_json(const nlohmann::json& j) {
    SynthSpec s;
    s.scenario = j.value("scenario", s.scenario);
    if (s.scenario != "roundabout" && s.scenario != "crossing" && s.scenario != "straight")
      throw std::invalid_argument("synth spec: unknown scenario '" + s.scenario + "'");
    s.agents = j.value("agents", s.agents);
    s.noise_sigma = j.value("noise_sigma", s.noise_sigma);
    s.duration_s = j.value("duration_s", s.duration_s);
    s.dt = j.value("dt", s.dt);
    if (j.contains("radius")) {
      s.radius_min = j["radius"].value("min", s.radius_min);
      s.radius_max = j["radius"].value("max", s.radius_max);
    }
    if (j.contains("speed")) {
      s.speed_min = j["speed"].value("min", s.speed_min);
      s.speed_max = j["speed"].value("max", s.speed_max);
    }
    s.seed = j.value("seed", s.seed);
    if (s.agents < 1 || s.duration_s <= 0 || s.dt <= 0 || s.noise_sigma < 0 ||
        s.radius_min <= 0 || s.radius_max < s.radius_min || s.speed_min <= 0 || s.speed_max < s.speed_min)
      throw std::invalid_argument("synth spec: invalid numeric field");
    return s;
  }

  nlohmann::json to_json() const {
    return {{"scenario", scenario}, {"agents", agents},       {"noise_sigma", noise_sigma},
            {"duration_s", duration_s}, {"dt", dt},
            {"radius", {{"min", radius_min}, {"max", radius_max}}},
            {"speed", {{"min", speed_min}, {"max", speed_max}}},
            {"seed", seed}};
  }
};

namespace detail {

inline Polygon circle_polygon(double radius, int segments = 48) {
  Polygon poly;
  for (int i = 0; i < segments; ++i) {
    const double a = 2.0 * 3.14159265358979323846 * i / segments;
    poly.push_back({radius * std::cos(a), radius * std::sin(a)});
  }
  return poly;
}

}  // namespace detail

inline Scene synth_generate(const SynthSpec& spec, std::uint64_t seed) {
  Rng rng(seed);
  Scene scene;
  scene.dt = spec.dt;
  scene.frame_gap = 1;
  const long total_frames = static_cast<long>(spec.duration_s / spec.dt);

  if (spec.scenario == "roundabout") {
    // annulus drivable area spanning the radius band
    scene.drivable.push_back(detail::circle_polygon(spec.radius_max + 3.0));
    scene.drivable.push_back(detail::circle_polygon(std::max(0.5, spec.radius_min - 3.0)));
    for (int i = 0; i < spec.agents; ++i) {
      AgentTrack track;
      track.agent_id = i + 1;
      const double radius = rng.uniform(spec.radius_min, spec.radius_max);
      const double speed = rng.uniform(spec.speed_min, spec.speed_max);
      const double omega = speed / radius;  // counterclockwise
      const double entry_angle = rng.uniform(0.0, 2.0 * 3.14159265358979323846);
      const double arc_span = rng.uniform(1.5, 4.5);  // radians inside the ring
      const double tangent_len = rng.uniform(2.0, 8.0);
      const long start_frame = static_cast<long>(rng.integer(static_cast<std::uint64_t>(total_frames / 2 + 1)));
      const double t_entry = tangent_len / speed;
      const double t_exit = t_entry + arc_span / omega;
      const double t_end = t_exit + tangent_len / speed;
      // tangent direction at the entry point (counterclockwise motion)
      for (long f = start_frame; f < total_frames; ++f) {
        const double t = (f - start_frame) * spec.dt;
        if (t > t_end) break;
        Vec2 p;
        if (t < t_entry) {
          // straight approach along the entry tangent
          const double back = (t_entry - t) * speed;
          const double px = radius * std::cos(entry_angle), py = radius * std::sin(entry_angle);
          const double tx = -std::sin(entry_angle), ty = std::cos(entry_angle);
          p = {px - tx * back, py - ty * back};
        } else if (t < t_exit) {
          const double a = entry_angle + omega * (t - t_entry);
          p = {radius * std::cos(a), radius * std::sin(a)};
        } else {
          const double exit_angle = entry_angle + arc_span;
          const double fwd = (t - t_exit) * speed;
          const double px = radius * std::cos(exit_angle), py = radius * std::sin(exit_angle);
          const double tx = -std::sin(exit_angle), ty = std::cos(exit_angle);
          p = {px + tx * fwd, py + ty * fwd};
        }
        if (spec.noise_sigma > 0.0) {
          p[0] += spec.noise_sigma * rng.normal();
          p[1] += spec.noise_sigma * rng.normal();
        }
        track.frames.push_back(f);
        track.pos.push_back(p);
      }
      if (track.frames.size() >= 2) scene.agents.push_back(std::move(track));
    }
  } else if (spec.scenario == "crossing") {
    const double half = 4.0;
    scene.drivable.push_back({{-60, -half}, {60, -half}, {60, half}, {-60, half}});
    scene.drivable.push_back({{-half, -60}, {-half, 60}, {half, 60}, {half, -60}});
    for (int i = 0; i < spec.agents; ++i) {
      AgentTrack track;
      track.agent_id = i + 1;
      const double speed = rng.uniform(spec.speed_min, spec.speed_max);
      const bool horizontal = (i % 2) == 0;
      const double lane = rng.uniform(-half * 0.6, half * 0.6);
      const double dir = rng.uniform(0.0, 1.0) < 0.5 ? 1.0 : -1.0;
      // staggered start times act as yield offsets at the conflict point
      const long start_frame = static_cast<long>(rng.integer(static_cast<std::uint64_t>(total_frames / 2 + 1)));
      const double start_pos = -dir * rng.uniform(20.0, 40.0);
      for (long f = start_frame; f < total_frames; ++f) {
        const double travelled = (f - start_frame) * spec.dt * speed * dir;
        const double coord = start_pos + travelled;
        if (std::fabs(coord) > 60.0) break;
        Vec2 p = horizontal ? Vec2{coord, lane} : Vec2{lane, coord};
        if (spec.noise_sigma > 0.0) {
          p[0] += spec.noise_sigma * rng.normal();
          p[1] += spec.noise_sigma * rng.normal();
        }
        track.frames.push_back(f);
        track.pos.push_back(p);
      }
      if (track.frames.size() >= 2) scene.agents.push_back(std::move(track));
    }
  } else {  // straight
    for (int i = 0; i < spec.agents; ++i) {
      AgentTrack track;
      track.agent_id = i + 1;
      const double speed = rng.uniform(spec.speed_min, spec.speed_max);
      const double heading = rng.uniform(0.0, 2.0 * 3.14159265358979323846);
      Vec2 p = {rng.uniform(-30.0, 30.0), rng.uniform(-30.0, 30.0)};
      const Vec2 v = {speed * std::cos(heading) * spec.dt, speed * std::sin(heading) * spec.dt};
      for (long f = 0; f < total_frames; ++f) {
        Vec2 q = {p[0] + v[0] * f, p[1] + v[1] * f};
        if (spec.noise_sigma > 0.0) {
          q[0] += spec.noise_sigma * rng.normal();
          q[1] += spec.noise_sigma * rng.normal();
        }
        track.frames.push_back(f);
        track.pos.push_back(q);
      }
      scene.agents.push_back(std::move(track));
    }
  }
  return scene;
}

inline nlohmann::json polygons_to_json(const std::vector<Polygon>& polys) {
  nlohmann::json arr = nlohmann::json::array();
  for (const auto& poly : polys) {
    nlohmann::json ring = nlohmann::json::array();
    for (const auto& p : poly) ring.push_back({p[0], p[1]});
    arr.push_back(ring);
  }
  return {{"polygons", arr}};
}

inline std::vector<Polygon> polygons_from_json(const nlohmann::json& j) {
  std::vector<Polygon> polys;
  for (const auto& ring : j.at("polygons")) {
    Polygon poly;
    for (const auto& p : ring) poly.push_back({p.at(0).get<double>(), p.at(1).get<double>()});
    polys.push_back(std::move(poly));
  }
  return polys;
}

}  // namespace cgns
