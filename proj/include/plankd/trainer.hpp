#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "plankd/eval.hpp"
#include "plankd/ibdistill.hpp"
#include "plankd/planner.hpp"
#include "plankd/scenario.hpp"
#include "plankd/tensor.hpp"
#include "plankd/waypointdistill.hpp"

namespace plankd::train {

enum class Ablation : std::uint8_t { kFull = 0, kNoEntropy = 1, kNoSafeAtt = 2, kNoIB = 3 };
enum class TeacherWaypointSource : std::uint8_t { kExpert = 0, kTeacherOutput = 1 };

const char* ablation_name(Ablation a);
Ablation ablation_from_name(const std::string& name);

struct DistillConfig {
  double alpha_z = 0.5;
  double alpha_r = 0.1;
  double alpha_e = 0.05;
  double beta = 1e-3;
  double sigma_kernel = 3.0;
  double delta = 0.1;
  double lr = 1e-3;
  std::size_t epochs = 20;
  std::size_t batch_size = 16;
  std::size_t T = 4;
  std::uint64_t seed_data = 0;
  std::uint64_t seed_init = 0;
  std::uint64_t seed_train = 0;
  Ablation ablation = Ablation::kFull;
  TeacherWaypointSource teacher_waypoint_source = TeacherWaypointSource::kExpert;

  planner::PlannerConfig student = planner::PlannerConfig::student_default();
  ib::IBConfig ib_config;
  attn::AttnConfig attn_config;
};

struct StepRecord {
  double total = 0.0;
  double l_w = 0.0;
  double l_w_star = 0.0;
  double neg_l_ib = 0.0;
  double l_z = 0.0;
  double l_rank = 0.0;
  double l_e = 0.0;
};

struct TrainReport {
  std::vector<StepRecord> steps;
  std::vector<harness::EvalMetrics> epoch_eval;  // present when eval data was supplied
  std::vector<double> epoch_wall_seconds;        // timing only, outside the determinism digest
  std::string config_echo;
  std::string seed_echo;

  // canonical %.17g serialization of everything except wall-clock timing
  std::string digest_text() const;
};

// Eq.9 inputs. Dropped terms still carry zero-valued tensors so every report
// field stays defined.
struct LossComponents {
  grad::Tensor l_w;
  grad::Tensor l_w_star;
  grad::Tensor l_ib;  // lower bound, to be maximized
  grad::Tensor l_z;
  grad::Tensor l_rank;
  grad::Tensor l_e;
};

// L = L_w + L_w* - L_IB + a_z L_z + a_r L_rank + a_e L_e, with the configured
// ablation zeroing its terms. Rejects non-finite components by name.
grad::Tensor total_loss(const LossComponents& c, const DistillConfig& cfg);

struct DistillResult {
  planner::PlannerModel student;
  ib::IBModule ib_module;
  attn::AttnModule attn_module;
  TrainReport report;
};

DistillResult distill(const planner::PlannerModel& teacher, const scenario::Dataset& train_data,
                      const DistillConfig& cfg, const scenario::Dataset* eval_data = nullptr);

struct AblationOutcome {
  std::string name;
  TrainReport report;
  harness::EvalMetrics final_eval;
};

// full + the three ablations under identical seeds
std::vector<AblationOutcome> run_ablations(const planner::PlannerModel& teacher,
                                           const scenario::Dataset& train_data,
                                           const DistillConfig& cfg,
                                           const scenario::Dataset& eval_data);

// ---- focused probes -------------------------------------------------------

struct AttentionProbeConfig {
  double sigma_kernel = 3.0;
  double alpha_e = 0.05;
  double lr = 1e-3;
  std::size_t steps = 2000;
  std::size_t batch_size = 8;
  std::uint64_t seed = 0;
  attn::AttnConfig attn_config;
};

struct AttentionProbeResult {
  double spearman_pass_rate = 0.0;  // fraction of eligible held-out scenes with rho > 0.8
  std::size_t eligible = 0;
  double mean_rho = 0.0;
};

// trains the attention encoders with L_rank + alpha_e L_e alone
AttentionProbeResult attention_probe(const scenario::Dataset& train_data,
                                     const scenario::Dataset& held_out,
                                     const AttentionProbeConfig& cfg);

struct IBProbeConfig {
  double beta = 1e-3;
  double lr = 1e-3;
  std::size_t epochs = 8;
  std::size_t batch_size = 16;
  std::uint64_t seed = 0;
  ib::IBConfig ib_config;
};

struct IBProbeResult {
  double mean_kl = 0.0;                     // held-out posterior KL per datum
  std::array<double, 8> state_accuracy{};  // decoder accuracy per planning state
};

// trains the bottleneck on frozen teacher features alone
IBProbeResult ib_probe(const planner::PlannerModel& teacher, const scenario::Dataset& train_data,
                       const scenario::Dataset& held_out, const IBProbeConfig& cfg);

// Spearman rank correlation with average ranks on ties
double spearman(std::span<const double> a, std::span<const double> b);

// Assembles a micro teacher/student/IB/attention stack on two scenes and runs
// grad_check over every trainable parameter of the full composite loss.
double composite_loss_grad_check(std::uint64_t seed);

}  // namespace plankd::train
