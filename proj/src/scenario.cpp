#include "plankd/scenario.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace plankd::scenario {

namespace {

constexpr double kPi = 3.14159265358979323846;
constexpr double kCruiseSpeed = 4.0;   // expert accelerates toward this on a clear road
constexpr double kCruiseAccel = 1.5;   // m/s^2
constexpr double kBrakeRef = 3.0;      // accel magnitude mapping to action 1.0
constexpr double kSteerRef = kPi / 4;  // heading change mapping to steer 1.0
constexpr double kLeadGap = 3.5;       // longitudinal gap held behind a capped lead
constexpr double kTurnRadius = 4.0;
constexpr double kLaneOffset = 4.0;    // adjacent lane center |y|

struct Rect {
  double x0, x1, y0, y1;
};

Rect obstacle_footprint(const ObstaclePose& o, double t) {
  double x = o.x + o.vx * t;
  double y = o.y + o.vy * t;
  double half_len = o.kind == ObstacleKind::kVehicle ? 2.25 : 0.4;
  double half_wid = o.kind == ObstacleKind::kVehicle ? 1.0 : 0.4;
  bool along_y = std::abs(o.vy) > std::abs(o.vx);
  double hx = along_y ? half_wid : half_len;
  double hy = along_y ? half_len : half_wid;
  return {x - hx, x + hx, y - hy, y + hy};
}

bool cell_overlaps(const Rect& r, std::size_t iy, std::size_t ix) {
  double cx = cell_center(ix), cy = cell_center(iy);
  return r.x0 < cx + 0.5 && r.x1 > cx - 0.5 && r.y0 < cy + 0.5 && r.y1 > cy - 0.5;
}

}  // namespace

bool obstacle_covers_cell(const ObstaclePose& o, double t, std::size_t iy, std::size_t ix) {
  return cell_overlaps(obstacle_footprint(o, t), iy, ix);
}

namespace {

// ----- path construction ---------------------------------------------------

struct Path {
  std::vector<std::array<double, 2>> pts;
  std::vector<double> cumlen;

  std::array<double, 2> at(double s) const {
    if (s <= 0.0) return pts.front();
    if (s >= cumlen.back()) return pts.back();
    auto it = std::lower_bound(cumlen.begin(), cumlen.end(), s);
    std::size_t hi = static_cast<std::size_t>(it - cumlen.begin());
    std::size_t lo = hi - 1;
    double seg = cumlen[hi] - cumlen[lo];
    double f = seg > 0.0 ? (s - cumlen[lo]) / seg : 0.0;
    return {pts[lo][0] + f * (pts[hi][0] - pts[lo][0]),
            pts[lo][1] + f * (pts[hi][1] - pts[lo][1])};
  }
};

Path make_path(const std::vector<std::array<double, 2>>& pts) {
  Path p;
  p.pts = pts;
  p.cumlen.resize(pts.size(), 0.0);
  for (std::size_t i = 1; i < pts.size(); ++i) {
    p.cumlen[i] = p.cumlen[i - 1] + std::hypot(pts[i][0] - pts[i - 1][0], pts[i][1] - pts[i - 1][1]);
  }
  return p;
}

double smooth01(double t) {
  t = std::min(std::max(t, 0.0), 1.0);
  return t * t * (3.0 - 2.0 * t);
}

Path straight_path() { return make_path({{0.0, 0.0}, {48.0, 0.0}}); }

Path lane_change_path(double dir, double from_x, double to_x) {
  std::vector<std::array<double, 2>> pts;
  for (double x = 0.0; x <= 48.0; x += 0.05) {
    double y = dir * kLaneOffset * smooth01((x - from_x) / (to_x - from_x));
    pts.push_back({x, y});
  }
  return make_path(pts);
}

// straight to the junction entry, quarter arc, then straight along the cross road
Path turn_path(double junction_x, double dir) {
  std::vector<std::array<double, 2>> pts;
  double entry = junction_x - kTurnRadius;
  for (double x = 0.0; x < entry; x += 0.05) pts.push_back({x, 0.0});
  for (double phi = 0.0; phi <= kPi / 2 + 1e-9; phi += 0.0125) {
    pts.push_back({entry + kTurnRadius * std::sin(phi), dir * kTurnRadius * (1.0 - std::cos(phi))});
  }
  for (double y = kTurnRadius + 0.05; y <= 40.0; y += 0.05) {
    pts.push_back({junction_x, dir * y});
  }
  return make_path(pts);
}

// longest trajectory that still fits in the grid with a 1 m margin
double speed_cap_for(std::uint32_t T) {
  return (kExtent - 1.0) / (static_cast<double>(T) * kDt);
}

}  // namespace

double ObstaclePose::speed() const {
  return std::sqrt(static_cast<double>(vx) * vx + static_cast<double>(vy) * vy);
}

std::vector<float> rasterize_bev(const SceneSketch& sk) {
  std::vector<float> bev(kChannels * kGrid * kGrid, 0.0f);
  auto at = [&bev](std::size_t c, std::size_t iy, std::size_t ix) -> float& {
    return bev[(c * kGrid + iy) * kGrid + ix];
  };
  double rhw = sk.road_half_width;
  for (std::size_t iy = 0; iy < kGrid; ++iy) {
    double y = cell_center(iy);
    for (std::size_t ix = 0; ix < kGrid; ++ix) {
      double x = cell_center(ix);
      bool on_main = std::abs(y) <= rhw;
      bool on_cross = sk.has_junction && std::abs(x - sk.junction_x) <= rhw;
      if (on_main || on_cross) at(kChDrivable, iy, ix) = 1.0f;
      for (const auto& blk : sk.clutter_blocks) {
        if (std::abs(x - blk[0]) <= blk[2] && std::abs(y - blk[1]) <= blk[2]) {
          at(kChDrivable, iy, ix) = std::max(at(kChDrivable, iy, ix), static_cast<float>(blk[3]));
        }
      }
      // lane boundary rows, suppressed inside the junction box
      if (on_main && !on_cross && (std::abs(y - 2.5) < 0.01 || std::abs(y + 2.5) < 0.01)) {
        at(kChMarking, iy, ix) = 1.0f;
      }
      if (on_cross && !on_main &&
          (std::abs(x - sk.junction_x - 2.5) < 0.01 || std::abs(x - sk.junction_x + 2.5) < 0.01)) {
        at(kChMarking, iy, ix) = 1.0f;
      }
      at(kChLight, iy, ix) = static_cast<float>(sk.light_phase) * 0.5f;
    }
  }
  // stop bar: one column for a signal line, two for a stop sign
  if (sk.light_phase == 1 || sk.has_sign) {
    auto bar_col = static_cast<std::ptrdiff_t>(std::floor(sk.stop_line_x + kExtent));
    int cols = sk.has_sign ? 2 : 1;
    for (int k = 0; k < cols; ++k) {
      std::ptrdiff_t ix = bar_col + k;
      if (ix < 0 || ix >= static_cast<std::ptrdiff_t>(kGrid)) continue;
      for (std::size_t iy = 0; iy < kGrid; ++iy) {
        if (std::abs(cell_center(iy)) < 2.0) at(kChMarking, iy, ix) = 1.0f;
      }
    }
  }
  for (const ObstaclePose& o : sk.obstacles) {
    Rect r = obstacle_footprint(o, 0.0);
    float v = o.kind == ObstacleKind::kVehicle ? 1.0f : 0.6f;
    for (std::size_t iy = 0; iy < kGrid; ++iy) {
      for (std::size_t ix = 0; ix < kGrid; ++ix) {
        if (cell_overlaps(r, iy, ix)) at(kChObstacle, iy, ix) = std::max(at(kChObstacle, iy, ix), v);
      }
    }
  }
  Rect ego{-2.25, 2.25, -1.0, 1.0};
  for (std::size_t iy = 0; iy < kGrid; ++iy) {
    for (std::size_t ix = 0; ix < kGrid; ++ix) {
      if (cell_overlaps(ego, iy, ix)) at(kChEgo, iy, ix) = 1.0f;
    }
  }
  return bev;
}

std::vector<std::array<float, 2>> expert_policy(const SceneSketch& sk, std::uint32_t T,
                                                double speed_limit) {
  if (T == 0) throw std::invalid_argument("expert_policy: T must be positive");

  // lead in the ego lane and cut-in threats define longitudinal caps
  const ObstaclePose* lead = nullptr;
  for (const ObstaclePose& o : sk.obstacles) {
    if (o.kind != ObstacleKind::kVehicle || o.x <= 1.0f) continue;
    if (std::abs(o.y) <= 1.8f && (!lead || o.x < lead->x)) lead = &o;
  }

  int lane_dir = 0;
  if (lead && lead->speed() < sk.speed * 0.6 && lead->x <= 11.0f) {
    auto side_free = [&](double side) {
      for (const ObstaclePose& o : sk.obstacles) {
        if (o.kind != ObstacleKind::kVehicle) continue;
        if (std::abs(o.y - side * kLaneOffset) <= 2.2 && std::abs(o.x - lead->x) <= 7.0) return false;
      }
      return true;
    };
    if (side_free(+1.0)) {
      lane_dir = +1;
    } else if (side_free(-1.0)) {
      lane_dir = -1;
    }
  }

  Path path;
  bool hold_speed = false;
  if (sk.has_junction && (sk.command == Command::kLeft || sk.command == Command::kRight)) {
    path = turn_path(sk.junction_x, sk.command == Command::kLeft ? 1.0 : -1.0);
  } else if (lane_dir != 0) {
    // 8 m blend keeps the curvature low enough that waypoint chords do not
    // read back as braking
    path = lane_change_path(lane_dir, lead->x - 9.0, lead->x - 1.0);
    hold_speed = true;
  } else {
    path = straight_path();
  }

  double fixed_cap = 1e18;
  if (sk.light_phase == 1 || sk.has_sign) fixed_cap = sk.stop_line_x - 0.4;

  struct MovingCap {
    double x0, vx;
  };
  std::vector<MovingCap> caps;
  if (lead && lane_dir == 0) caps.push_back({static_cast<double>(lead->x), lead->vx});
  for (const ObstaclePose& o : sk.obstacles) {
    if (o.kind != ObstacleKind::kVehicle || o.x <= 1.0f) continue;
    bool adjacent = std::abs(o.y) > 1.8f && std::abs(o.y) <= 6.0f;
    bool cutting = adjacent && o.vy * (o.y > 0 ? -1.0 : 1.0) > 0.2;
    if (cutting) caps.push_back({static_cast<double>(o.x), o.vx});
  }

  double v_cap = std::min(speed_limit, speed_cap_for(T));
  double v = std::min(sk.speed, v_cap);
  double s = 0.0;
  std::vector<std::array<float, 2>> traj;
  traj.reserve(T);
  for (std::uint32_t k = 1; k <= T; ++k) {
    double t_end = static_cast<double>(k) * kDt;
    double cap = fixed_cap;
    for (const MovingCap& mc : caps) cap = std::min(cap, mc.x0 + mc.vx * t_end - kLeadGap);

    double a_des = (!hold_speed && v < kCruiseSpeed)
                       ? std::min(sk.accel > 0.0 ? sk.accel : kCruiseAccel, kCruiseAccel)
                       : 0.0;
    double d_rem = cap - s;
    if (d_rem <= 0.05) {
      a_des = -1e9;  // hold position
    } else if (cap < 1e17) {
      double a_need = v * v / (2.0 * d_rem);
      if (a_need > 0.25) a_des = std::min(a_des, -a_need);
    }
    double v_new = std::min(std::max(v + a_des * kDt, 0.0), v_cap);
    double s_new = s + 0.5 * (v + v_new) * kDt;
    if (s_new > cap) {  // instant-stop clamp keeps the gap exact
      s_new = std::max(s, cap);
      v_new = std::max(0.0, 2.0 * (s_new - s) / kDt - v);
    }
    auto p = path.at(s_new);
    traj.push_back({static_cast<float>(p[0]), static_cast<float>(p[1])});
    v = v_new;
    s = s_new;
  }
  return traj;
}

ExpertActions derive_actions(std::span<const std::array<float, 2>> traj, double initial_speed) {
  ExpertActions a;
  if (traj.empty()) return a;
  double v1 = std::hypot(static_cast<double>(traj[0][0]), static_cast<double>(traj[0][1])) / kDt;
  double accel = (v1 - initial_speed) / kDt;
  a.throttle = std::min(std::max(accel / kBrakeRef, 0.0), 1.0);
  a.brake = std::min(std::max(-accel / kBrakeRef, 0.0), 1.0);

  double heading = 0.0;
  double max_turn = 0.0;
  double px = 0.0, py = 0.0;
  for (const auto& w : traj) {
    double dx = w[0] - px, dy = w[1] - py;
    if (std::hypot(dx, dy) > 1e-6) {
      double h = std::atan2(dy, dx);
      double dh = h - heading;
      while (dh > kPi) dh -= 2 * kPi;
      while (dh < -kPi) dh += 2 * kPi;
      max_turn = std::max(max_turn, std::abs(dh));
      heading = h;
    }
    px = w[0];
    py = w[1];
  }
  a.steer = std::min(max_turn / kSteerRef, 1.0);
  return a;
}

PlanningStates derive_planning_states(const Scene& scene, double delta) {
  PlanningStates st;
  for (const ObstaclePose& o : scene.obstacles) {
    double d = std::hypot(static_cast<double>(o.x), static_cast<double>(o.y));
    if (d > kExtent) continue;
    if (o.kind == ObstacleKind::kVehicle) st.nearby_vehicle = 1;
    if (o.kind == ObstacleKind::kPedestrian) st.nearby_pedestrian = 1;
  }

  st.traffic_light = static_cast<std::uint8_t>(std::lround(scene.bev_at(kChLight, 0, 0) * 2.0f));

  // a junction shows as full-strength drivable cells far off the main road
  for (std::size_t iy = 0; iy < kGrid && !st.junction; ++iy) {
    if (std::abs(cell_center(iy)) < 8.0) continue;
    for (std::size_t ix = 0; ix < kGrid; ++ix) {
      if (scene.bev_at(kChDrivable, iy, ix) > 0.9f) {
        st.junction = 1;
        break;
      }
    }
  }

  // stop bars span the ego-lane rows: one column = signal line, two = stop sign
  int bar_cols = 0;
  for (std::size_t ix = 0; ix < kGrid; ++ix) {
    bool full = true;
    for (std::size_t iy = 0; iy < kGrid; ++iy) {
      if (std::abs(cell_center(iy)) < 2.0 && scene.bev_at(kChMarking, iy, ix) < 0.9f) {
        full = false;
        break;
      }
    }
    if (full) ++bar_cols;
  }
  st.traffic_sign = bar_cols >= 2 ? 1 : 0;

  ExpertActions a = derive_actions(scene.expert_traj, scene.speed);
  st.brake = a.brake > delta ? 1 : 0;
  st.throttle = a.throttle > delta ? 1 : 0;
  st.steer = a.steer > delta ? 1 : 0;
  return st;
}

namespace {

void validate_params(const GenParams& p) {
  if (p.road_half_width <= 0.0) {
    throw std::invalid_argument("generate_scene: road_half_width implies zero drivable area");
  }
  if (p.road_half_width > 7.5) {
    throw std::invalid_argument("generate_scene: road_half_width exceeds the grid layout limit 7.5");
  }
  if (p.T == 0) throw std::invalid_argument("generate_scene: T must be positive");
  if (p.obstacle_min > p.obstacle_max) {
    throw std::invalid_argument("generate_scene: obstacle_min exceeds obstacle_max");
  }
  if (p.junction_prob < 0 || p.light_prob < 0 || p.junction_prob + p.light_prob > 1.0) {
    throw std::invalid_argument("generate_scene: archetype probabilities out of range");
  }
  if (p.speed_limit <= 0.0) throw std::invalid_argument("generate_scene: speed_limit must be positive");
}

void add_ambient(SceneSketch& sk, Rng& r, const GenParams& p) {
  if (p.obstacle_max == 0) return;
  std::uint32_t n =
      p.obstacle_min + static_cast<std::uint32_t>(r.next_below(p.obstacle_max - p.obstacle_min + 1));
  for (std::uint32_t i = 0; i < n; ++i) {
    ObstaclePose o;
    double u = r.uniform();
    if (u < 0.4) {  // stopped vehicle well behind the ego
      o.kind = ObstacleKind::kVehicle;
      o.x = static_cast<float>(r.uniform(-14.0, -8.0));
      double lane = static_cast<double>(r.next_below(3)) - 1.0;  // -1, 0, +1
      o.y = static_cast<float>(lane * kLaneOffset + r.uniform(-0.3, 0.3));
    } else if (u < 0.7) {  // parked off-road
      o.kind = ObstacleKind::kVehicle;
      o.x = static_cast<float>(r.uniform(-14.0, 14.0));
      double side = r.uniform() < 0.5 ? -1.0 : 1.0;
      o.y = static_cast<float>(side * r.uniform(8.5, 13.0));
    } else {  // pedestrian on the near sidewalk band, walking or standing
      o.kind = ObstacleKind::kPedestrian;
      o.x = static_cast<float>(r.uniform(-2.0, 10.0));
      double side = r.uniform() < 0.5 ? -1.0 : 1.0;
      o.y = static_cast<float>(side * r.uniform(6.6, 7.6));
      if (r.uniform() < 0.5) o.vx = static_cast<float>(r.uniform(-0.8, 0.8));
    }
    sk.obstacles.push_back(o);
  }
}

void add_clutter(SceneSketch& sk, Rng& r, const GenParams& p) {
  if (!p.clutter) return;
  std::size_t n = 4 + r.next_below(5);
  for (std::size_t i = 0; i < n; ++i) {
    double side = r.uniform() < 0.5 ? -1.0 : 1.0;
    sk.clutter_blocks.push_back({r.uniform(-15.0, 15.0), side * r.uniform(9.5, 14.5),
                                 r.uniform(0.8, 2.4), r.uniform(0.15, 0.35)});
  }
}

SceneSketch sample_sketch(Rng& r, const GenParams& p) {
  SceneSketch sk;
  sk.road_half_width = p.road_half_width;
  double v_cap = speed_cap_for(p.T);

  double u = r.uniform();
  if (u < p.junction_prob) {
    sk.archetype = Archetype::kJunctionCross;
  } else if (u < p.junction_prob + p.light_prob) {
    sk.archetype = Archetype::kRedLight;
  } else {
    sk.archetype = static_cast<Archetype>(
        std::array<Archetype, 3>{Archetype::kStraightFollow, Archetype::kLaneChange,
                                 Archetype::kCutIn}[r.next_below(3)]);
  }

  switch (sk.archetype) {
    case Archetype::kStraightFollow: {
      sk.command = r.uniform() < 0.3 ? Command::kStraight : Command::kFollow;
      sk.speed = std::min(r.uniform(2.4, 3.2), v_cap);
      sk.accel = kCruiseAccel;
      if (r.uniform() < 0.5) sk.light_phase = 2;  // green, no behavioral effect
      break;
    }
    case Archetype::kJunctionCross: {
      sk.command = r.uniform() < 0.5 ? Command::kLeft : Command::kRight;
      sk.has_junction = true;
      sk.has_sign = r.uniform() < 0.4;
      if (sk.has_sign) {
        sk.junction_x = r.uniform(7.0, 9.0);
        sk.stop_line_x = sk.junction_x - 5.0;
      } else {
        sk.junction_x = r.uniform(4.5, 8.0);
        if (r.uniform() < 0.5) sk.light_phase = 2;
      }
      sk.speed = std::min(4.0, v_cap);
      if (p.obstacle_max > 0) {  // crossing vehicle, timed clear of the turn
        ObstaclePose o;
        o.kind = ObstacleKind::kVehicle;
        double side = r.uniform() < 0.5 ? -1.0 : 1.0;
        o.x = static_cast<float>(sk.junction_x + (r.uniform() < 0.5 ? -2.0 : 2.0));
        o.y = static_cast<float>(side * r.uniform(9.8, 11.5));
        o.vy = static_cast<float>(-side * r.uniform(0.4, 1.0));
        sk.obstacles.push_back(o);
      }
      break;
    }
    case Archetype::kLaneChange: {
      sk.command = Command::kFollow;
      sk.speed = std::min(r.uniform(3.2, 3.8), v_cap);
      if (p.obstacle_max > 0) {
        ObstaclePose lead;
        lead.kind = ObstacleKind::kVehicle;
        lead.x = static_cast<float>(r.uniform(9.5, 11.0));
        lead.y = static_cast<float>(r.uniform(-0.2, 0.2));
        lead.vx = static_cast<float>(r.uniform(0.3, 1.0));
        sk.obstacles.push_back(lead);
        if (r.uniform() < 0.5) {  // block the left lane so the expert passes right
          ObstaclePose blocker;
          blocker.kind = ObstacleKind::kVehicle;
          blocker.x = static_cast<float>(lead.x + r.uniform(-1.0, 1.0));
          blocker.y = static_cast<float>(kLaneOffset);
          sk.obstacles.push_back(blocker);
        }
      }
      break;
    }
    case Archetype::kCutIn: {
      sk.command = Command::kFollow;
      sk.speed = std::min(r.uniform(4.5, 6.0), v_cap);
      if (p.obstacle_max > 0) {
        ObstaclePose o;
        o.kind = ObstacleKind::kVehicle;
        double side = r.uniform() < 0.5 ? -1.0 : 1.0;
        o.x = static_cast<float>(r.uniform(3.5, 4.5));
        o.y = static_cast<float>(side * kLaneOffset);
        o.vx = static_cast<float>(r.uniform(0.3, 0.6));
        o.vy = static_cast<float>(-side * r.uniform(0.3, 0.6));
        sk.obstacles.push_back(o);
      }
      break;
    }
    case Archetype::kRedLight: {
      sk.command = r.uniform() < 0.3 ? Command::kStraight : Command::kFollow;
      sk.speed = std::min(r.uniform(3.5, 5.0), v_cap);
      sk.light_phase = 1;
      sk.stop_line_x = r.uniform(4.0, 10.0);
      break;
    }
  }
  add_ambient(sk, r, p);
  add_clutter(sk, r, p);
  return sk;
}

bool traj_in_bounds(const std::vector<std::array<float, 2>>& traj) {
  for (const auto& w : traj) {
    if (std::abs(w[0]) > kExtent || std::abs(w[1]) > kExtent) return false;
  }
  return true;
}

std::pair<Scene, Archetype> make_scene(std::uint64_t scene_seed, const GenParams& p) {
  validate_params(p);
  Rng base(scene_seed);
  for (int attempt = 0; attempt < 16; ++attempt) {
    Rng r = base.fork(static_cast<std::uint64_t>(attempt));
    SceneSketch sk = sample_sketch(r, p);
    auto traj = expert_policy(sk, p.T, p.speed_limit);
    if (!traj_in_bounds(traj)) continue;
    Scene s;
    s.scene_seed = scene_seed;
    s.speed = static_cast<float>(sk.speed);
    s.command = sk.command;
    s.obstacles = sk.obstacles;
    s.expert_traj = std::move(traj);
    s.bev = rasterize_bev(sk);
    s.states = derive_planning_states(s, p.delta);
    return {std::move(s), sk.archetype};
  }
  throw std::runtime_error("generate_scene: no feasible scene for seed " +
                           std::to_string(scene_seed));
}

}  // namespace

Scene generate_scene(std::uint64_t scene_seed, const GenParams& params) {
  return make_scene(scene_seed, params).first;
}

Archetype scene_archetype(std::uint64_t scene_seed, const GenParams& params) {
  return make_scene(scene_seed, params).second;
}

Dataset generate_dataset(const GenParams& params) {
  validate_params(params);
  Dataset d;
  d.T = params.T;
  Rng base(params.seed);
  d.scenes.reserve(params.scenes);
  for (std::uint32_t i = 0; i < params.scenes; ++i) {
    d.scenes.push_back(generate_scene(base.fork(i).seed(), params));
  }
  return d;
}

grad::Tensor bev_tensor(const Scene& scene) {
  std::vector<double> v(scene.bev.begin(), scene.bev.end());
  return grad::Tensor({kChannels, kGrid, kGrid}, std::move(v), false);
}

const char* command_name(Command c) {
  switch (c) {
    case Command::kLeft: return "left";
    case Command::kRight: return "right";
    case Command::kStraight: return "straight";
    case Command::kFollow: return "follow";
  }
  return "?";
}

const char* archetype_name(Archetype a) {
  switch (a) {
    case Archetype::kStraightFollow: return "straight_follow";
    case Archetype::kJunctionCross: return "junction_cross";
    case Archetype::kLaneChange: return "lane_change";
    case Archetype::kCutIn: return "cut_in";
    case Archetype::kRedLight: return "red_light";
  }
  return "?";
}

}  // namespace plankd::scenario
