#pragma once

#include <cstdint>
#include <vector>

#include "plankd/params.hpp"
#include "plankd/scenario.hpp"
#include "plankd/tensor.hpp"

namespace plankd::planner {

// Two-part planner: a stride-2 conv backbone over the BEV and a dense motion
// head over pooled features + speed + command embedding.
struct PlannerConfig {
  std::vector<std::size_t> conv_widths{16, 32, 32, 64};
  std::vector<std::size_t> head_hidden{64};
  std::size_t T = 4;
  std::size_t command_embed = 8;

  std::size_t depth() const { return conv_widths.size(); }
  // 1-indexed; lower median for even depth
  std::size_t mid_layer() const { return (depth() + 1) / 2; }

  static PlannerConfig teacher_default();
  static PlannerConfig student_default();
};

struct PlannerModel {
  PlannerConfig config;
  ParamMap params;

  std::size_t param_count() const { return params.total_scalars(); }
  void freeze() { params.set_requires_grad(false); }
};

PlannerModel build_planner(const PlannerConfig& config, std::uint64_t init_seed);

struct SceneInput {
  grad::Tensor bev;  // [C, H, W], constant
  double speed = 0.0;
  scenario::Command command = scenario::Command::kFollow;
};

SceneInput scene_input(const scenario::Scene& scene);

struct PlannerOutput {
  grad::Tensor mid_feature;  // backbone activation at the middlemost layer
  grad::Tensor waypoints;    // [T, 2]
};

PlannerOutput planner_forward(const PlannerModel& model, const SceneInput& input);

struct ImitationConfig {
  std::size_t epochs = 30;
  double lr = 2e-3;
  std::size_t batch_size = 16;
  std::uint64_t seed = 0;  // shuffle stream
};

struct ImitationReport {
  std::vector<double> epoch_loss;  // mean per-waypoint L1 over the training set
};

// Plain imitation (mean waypoint L1 against the expert). Pretrains teachers
// and serves as the no-distillation baseline.
ImitationReport train_imitation(PlannerModel& model, const scenario::Dataset& data,
                                const ImitationConfig& cfg);

// mean over waypoints of |dx| + |dy|
double waypoint_l1(const std::vector<std::array<float, 2>>& pred,
                   const std::vector<std::array<float, 2>>& target);

// forward pass without graph recording, returning plain waypoints
std::vector<std::array<float, 2>> predict_waypoints(const PlannerModel& model,
                                                    const scenario::Scene& scene);

}  // namespace plankd::planner
