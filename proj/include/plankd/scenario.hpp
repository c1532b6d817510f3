#pragma once

#include <array>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "plankd/rng.hpp"
#include "plankd/tensor.hpp"

namespace plankd::scenario {

// grid geometry: 32x32 cells, 1 m each, ego at the origin facing +x
inline constexpr std::size_t kChannels = 5;
inline constexpr std::size_t kGrid = 32;
inline constexpr double kExtent = 16.0;
inline constexpr double kDt = 0.5;  // waypoint spacing in seconds

// BEV channel indices
inline constexpr std::size_t kChDrivable = 0;
inline constexpr std::size_t kChMarking = 1;
inline constexpr std::size_t kChObstacle = 2;
inline constexpr std::size_t kChEgo = 3;
inline constexpr std::size_t kChLight = 4;

enum class Command : std::uint8_t { kLeft = 0, kRight = 1, kStraight = 2, kFollow = 3 };
enum class ObstacleKind : std::uint8_t { kVehicle = 0, kPedestrian = 1 };

struct ObstaclePose {
  float x = 0.f, y = 0.f;    // meters, ego frame
  float vx = 0.f, vy = 0.f;  // m/s
  ObstacleKind kind = ObstacleKind::kVehicle;

  double speed() const;
  bool moving() const { return speed() > 0.1; }
  bool operator==(const ObstaclePose&) const = default;
};

// Eight planning states, stored in serialization order.
struct PlanningStates {
  std::uint8_t nearby_vehicle = 0;
  std::uint8_t nearby_pedestrian = 0;
  std::uint8_t traffic_sign = 0;
  std::uint8_t junction = 0;
  std::uint8_t traffic_light = 0;  // 0 absent, 1 red, 2 green
  std::uint8_t brake = 0;
  std::uint8_t throttle = 0;
  std::uint8_t steer = 0;

  std::array<std::uint8_t, 8> as_array() const {
    return {nearby_vehicle, nearby_pedestrian, traffic_sign, junction,
            traffic_light, brake,              throttle,     steer};
  }
  static PlanningStates from_array(const std::array<std::uint8_t, 8>& a) {
    return {a[0], a[1], a[2], a[3], a[4], a[5], a[6], a[7]};
  }
  bool operator==(const PlanningStates&) const = default;
};

struct Scene {
  std::uint64_t scene_seed = 0;
  float speed = 0.f;  // ego speed at t = 0
  Command command = Command::kFollow;
  PlanningStates states;
  std::vector<ObstaclePose> obstacles;
  std::vector<std::array<float, 2>> expert_traj;  // T waypoints (x, y)
  std::vector<float> bev;                         // C*H*W row-major [c][iy][ix]

  float bev_at(std::size_t c, std::size_t iy, std::size_t ix) const {
    return bev[(c * kGrid + iy) * kGrid + ix];
  }
  bool operator==(const Scene&) const = default;
};

struct Dataset {
  std::uint32_t version = 1;
  std::uint32_t T = 4;
  std::uint32_t C = kChannels;
  std::uint32_t H = kGrid;
  std::uint32_t W = kGrid;
  std::vector<Scene> scenes;
};

struct GenParams {
  std::uint64_t seed = 0;
  std::uint32_t scenes = 0;
  std::uint32_t T = 4;
  std::uint32_t obstacle_min = 0;  // ambient obstacles on top of archetype actors
  std::uint32_t obstacle_max = 3;
  double junction_prob = 0.2;
  double light_prob = 0.2;
  double speed_limit = 8.0;
  double road_half_width = 6.0;
  double delta = 0.1;  // action threshold baked into stored planning states
  bool clutter = true; // planning-irrelevant off-road texture
};

enum class Archetype : std::uint8_t {
  kStraightFollow = 0,
  kJunctionCross = 1,
  kLaneChange = 2,
  kCutIn = 3,
  kRedLight = 4,
};
inline constexpr std::size_t kArchetypeCount = 5;

// Geometry the rasterizer and the expert consume; sampled per scene seed.
struct SceneSketch {
  Archetype archetype = Archetype::kStraightFollow;
  Command command = Command::kFollow;
  double speed = 4.0;
  double accel = 0.0;  // cruise acceleration request
  bool has_junction = false;
  double junction_x = 0.0;
  bool has_sign = false;
  int light_phase = 0;  // 0 absent, 1 red, 2 green
  double stop_line_x = 0.0;
  double road_half_width = 6.0;
  std::vector<ObstaclePose> obstacles;
  // off-road texture blocks: (x, y, half size, value)
  std::vector<std::array<double, 4>> clutter_blocks;
};

// cell center coordinate for index i on either axis
inline double cell_center(std::size_t i) { return -kExtent + (static_cast<double>(i) + 0.5); }

std::vector<float> rasterize_bev(const SceneSketch& sketch);

// Rule-based expert: lane keeping, anticipatory braking for stop lines and
// slow/cutting-in leads, lane change past a slow in-lane vehicle, commanded
// turn at a junction. Waypoints at kDt spacing along the chosen path.
std::vector<std::array<float, 2>> expert_policy(const SceneSketch& sketch, std::uint32_t T,
                                                double speed_limit);

struct ExpertActions {
  double throttle = 0.0;
  double brake = 0.0;
  double steer = 0.0;
};

// brake/throttle from the first-segment speed change, steer from the largest
// heading change along the trajectory
ExpertActions derive_actions(std::span<const std::array<float, 2>> traj, double initial_speed);

// Environment states are decoded from the BEV channels and the obstacle list;
// action states compare |action| > delta (strict).
PlanningStates derive_planning_states(const Scene& scene, double delta);

// true when the obstacle footprint, propagated t seconds ahead, covers the cell
bool obstacle_covers_cell(const ObstaclePose& o, double t, std::size_t iy, std::size_t ix);

Scene generate_scene(std::uint64_t scene_seed, const GenParams& params);
Dataset generate_dataset(const GenParams& params);

// archetype the seed's sketch selects (for coverage accounting)
Archetype scene_archetype(std::uint64_t scene_seed, const GenParams& params);

grad::Tensor bev_tensor(const Scene& scene);

const char* command_name(Command c);
const char* archetype_name(Archetype a);

}  // namespace plankd::scenario
