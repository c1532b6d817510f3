#pragma once

#include <cstddef>

#include "plankd/planner.hpp"
#include "plankd/scenario.hpp"

namespace plankd::harness {

// Desk-scale stand-ins for closed-loop driving metrics.
struct EvalMetrics {
  double waypoint_l1 = 0.0;           // mean over scenes of mean |dx|+|dy| per waypoint
  double crucial_l1 = 0.0;            // same, over the top-ceil(T/4) waypoints by psi
  double collision_proxy_rate = 0.0;  // predicted waypoints within 1 m of a moving obstacle
  double composite_score = 0.0;       // (1 - collision) * max(0, 1 - waypoint_l1 / 4)
};

struct EvalParams {
  double sigma_kernel = 3.0;
  double collision_radius = 1.0;
  double l1_normalizer = 4.0;
};

// Deterministic and invariant to scene order (per-scene terms are sorted
// before the reduction).
EvalMetrics evaluate(const planner::PlannerModel& model, const scenario::Dataset& data,
                     const EvalParams& params = {});

struct InferenceStats {
  double mean_ms_per_frame = 0.0;
  std::size_t param_count = 0;
};

// Wall-clock mean over single-threaded forward passes; the first 10 frames
// warm up and are excluded, hence n_frames must exceed 10.
InferenceStats measure_inference(const planner::PlannerModel& model, std::size_t n_frames);

}  // namespace plankd::harness
