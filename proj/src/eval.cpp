#include "plankd/eval.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <numeric>
#include <stdexcept>

#include "plankd/waypointdistill.hpp"

namespace plankd::harness {

namespace {

double sorted_sum(std::vector<double>& v) {
  std::sort(v.begin(), v.end());
  return std::accumulate(v.begin(), v.end(), 0.0);
}

}  // namespace

EvalMetrics evaluate(const planner::PlannerModel& model, const scenario::Dataset& data,
                     const EvalParams& params) {
  if (data.scenes.empty()) throw std::invalid_argument("evaluate: empty dataset");
  std::size_t t_count = data.T;
  std::size_t crucial = (t_count + 3) / 4;  // ceil(T/4)

  std::vector<double> scene_l1, scene_crucial;
  scene_l1.reserve(data.scenes.size());
  scene_crucial.reserve(data.scenes.size());
  std::size_t collisions = 0;
  std::size_t total_waypoints = 0;

  for (const scenario::Scene& s : data.scenes) {
    auto pred = planner::predict_waypoints(model, s);
    scene_l1.push_back(planner::waypoint_l1(pred, s.expert_traj));

    // crucial waypoints ranked by the expert trajectory's safety scores,
    // descending, index order breaking ties
    auto psi = attn::safety_kernel(s.expert_traj, s.obstacles, params.sigma_kernel);
    std::vector<std::size_t> order(t_count);
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(),
                     [&](std::size_t a, std::size_t b) { return psi[a] > psi[b]; });
    double c_sum = 0.0;
    for (std::size_t k = 0; k < crucial; ++k) {
      std::size_t i = order[k];
      c_sum += std::abs(static_cast<double>(pred[i][0]) - s.expert_traj[i][0]) +
               std::abs(static_cast<double>(pred[i][1]) - s.expert_traj[i][1]);
    }
    scene_crucial.push_back(c_sum / static_cast<double>(crucial));

    for (const auto& w : pred) {
      ++total_waypoints;
      for (const scenario::ObstaclePose& o : s.obstacles) {
        if (!o.moving()) continue;
        double dx = static_cast<double>(w[0]) - static_cast<double>(o.x);
        double dy = static_cast<double>(w[1]) - static_cast<double>(o.y);
        if (std::sqrt(dx * dx + dy * dy) < params.collision_radius) {
          ++collisions;
          break;
        }
      }
    }
  }

  EvalMetrics m;
  double n = static_cast<double>(data.scenes.size());
  m.waypoint_l1 = sorted_sum(scene_l1) / n;
  m.crucial_l1 = sorted_sum(scene_crucial) / n;
  m.collision_proxy_rate = static_cast<double>(collisions) / static_cast<double>(total_waypoints);
  m.composite_score = (1.0 - m.collision_proxy_rate) *
                      std::max(0.0, 1.0 - m.waypoint_l1 / params.l1_normalizer);
  return m;
}

InferenceStats measure_inference(const planner::PlannerModel& model, std::size_t n_frames) {
  if (n_frames <= 10) {
    throw std::invalid_argument("measure_inference: n_frames must exceed the 10 warm-up frames");
  }
  scenario::GenParams gp;
  gp.T = model.config.T;
  std::vector<scenario::Scene> frames;
  for (std::uint64_t i = 0; i < 4; ++i) frames.push_back(scenario::generate_scene(i, gp));

  InferenceStats stats;
  stats.param_count = model.param_count();
  grad::NoGradGuard ng;
  std::chrono::steady_clock::duration elapsed{0};
  for (std::size_t f = 0; f < n_frames; ++f) {
    const scenario::Scene& s = frames[f % frames.size()];
    auto t0 = std::chrono::steady_clock::now();
    planner::PlannerOutput out = planner::planner_forward(model, planner::scene_input(s));
    auto t1 = std::chrono::steady_clock::now();
    if (out.waypoints.values().empty()) throw std::logic_error("measure_inference: empty output");
    if (f >= 10) elapsed += t1 - t0;
  }
  double ms = std::chrono::duration<double, std::milli>(elapsed).count();
  stats.mean_ms_per_frame = ms / static_cast<double>(n_frames - 10);
  return stats;
}

}  // namespace plankd::harness
