#pragma once

#include <cstdint>
#include <span>

#include "plankd/params.hpp"
#include "plankd/scenario.hpp"
#include "plankd/tensor.hpp"

namespace plankd::ib {

struct IBConfig {
  std::size_t input_side = 16;  // channel-averaged maps are resized to this square
  std::size_t hidden = 512;
  std::size_t latent = 256;  // d_z
  std::size_t trunk_layers = 3;
  double logvar_min = -10.0;
  double logvar_max = 10.0;

  std::size_t input_dim() const { return input_side * input_side; }

  // small enough for finite-difference verification of the full composite
  // loss: few entries, each gradient large enough to clear fd roundoff
  static IBConfig micro() {
    IBConfig c;
    c.input_side = 2;
    c.hidden = 4;
    c.latent = 2;
    c.trunk_layers = 1;
    return c;
  }
};

enum class Branch { kTeacher, kStudent };

// One bottleneck encoder/decoder pair shared by both planner branches, with a
// per-branch input projection onto the shared trunk.
struct IBModule {
  IBConfig config;
  ParamMap params;
};

IBModule build_ib(const IBConfig& config, std::uint64_t init_seed);

// mean over channels, then bilinear resize to side x side; differentiable
grad::Tensor channel_average(const grad::Tensor& h, std::size_t side = 16);

// channel_average flattened into an encoder input column
grad::Tensor encoder_input(const grad::Tensor& h, std::size_t side);

struct LatentSample {
  grad::Tensor z;       // [d_z, B]
  grad::Tensor mu;      // [d_z, B]
  grad::Tensor logvar;  // [d_z, B], clamped
  grad::Tensor eps;     // the standard-normal draw used for reparameterization
};

// flat: [input_dim, B] column batch; eps: [d_z, B]
LatentSample ib_encode(const IBModule& m, const grad::Tensor& flat, Branch branch,
                       const grad::Tensor& eps);

// 0.5 * sum(mu^2 + sigma^2 - 1 - log sigma^2) over all entries
grad::Tensor kl_to_standard_normal(const grad::Tensor& mu, const grad::Tensor& logvar);

struct DecoderOutput {
  grad::Tensor binary_logits;   // [7, B]
  grad::Tensor ternary_logits;  // [3, B]
};

DecoderOutput ib_decode(const IBModule& m, const grad::Tensor& z);

struct IBLowerBound {
  grad::Tensor value;       // scalar, the quantity to MAXIMIZE
  double mean_kl = 0.0;     // per-datum posterior KL
  double mean_loglik = 0.0; // per-datum state log-likelihood
};

// (1/N) sum_i sum_j log q(y_i^j | z_i) - (beta/N) sum_i KL_i
IBLowerBound ib_lower_bound(const LatentSample& latent, const IBModule& m,
                            std::span<const scenario::PlanningStates> states, double beta);

// mean absolute difference in z-space; the teacher column is used as a constant
grad::Tensor feature_distill_loss(const grad::Tensor& z_teacher, const grad::Tensor& z_student);

// hard decode of column b (binary: logit > 0, ternary: argmax)
scenario::PlanningStates predict_states(const DecoderOutput& out, std::size_t b);

}  // namespace plankd::ib
